import os
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv

env_path = Path(__file__).parent.parent.parent / ".env"
if env_path.exists():
    load_dotenv(env_path)

class Config:
    L2_BUDGET_CONSTANT: float = float(os.getenv("L2_BUDGET_CONSTANT", "4.0"))
    CAPPED_THRESHOLD_CONSTANT: float = float(os.getenv("CAPPED_THRESHOLD_CONSTANT", "4.0"))
    FULL_SAMPLE_CONSTANT: float = float(os.getenv("FULL_SAMPLE_CONSTANT", "1.0"))
    AMPLIFY_CHERNOFF_DENOMINATOR: float = float(os.getenv("AMPLIFY_CHERNOFF_DENOMINATOR", "54.0"))
    AMPLIFY_RULE: str = os.getenv("AMPLIFY_RULE", "chernoff")

    EXACT_TOLERANCE: float = float(os.getenv("EXACT_TOLERANCE", "1e-12"))
    INEQUALITY_TOLERANCE: float = float(os.getenv("INEQUALITY_TOLERANCE", "1e-9"))
    BRUTEFORCE_MAX_N: int = int(os.getenv("BRUTEFORCE_MAX_N", "20"))

    PMF_MIN_DRAWS: int = int(os.getenv("PMF_MIN_DRAWS", "16384"))
    PMF_MAX_DRAWS: int = int(os.getenv("PMF_MAX_DRAWS", "1048576"))
    PMF_CHUNK_SIZE: int = int(os.getenv("PMF_CHUNK_SIZE", "2048"))
    PMF_STABILITY_TV: float = float(os.getenv("PMF_STABILITY_TV", "0.01"))
    PMF_MAX_W: int = int(os.getenv("PMF_MAX_W", "2048"))

    STRONG_LB_AK_CONSTANT: float = float(os.getenv("STRONG_LB_AK_CONSTANT", "0.5"))

    POWER_TARGET: float = float(os.getenv("POWER_TARGET", "0.66"))
    CONFIDENCE_LEVEL: float = float(os.getenv("CONFIDENCE_LEVEL", "0.95"))

    MAX_PARALLEL_WORKERS: int = int(os.getenv("HISTOTEST_WORKERS", "4"))
    WORKERS_FROM_ENV: bool = "HISTOTEST_WORKERS" in os.environ

    ENABLE_CACHE: bool = os.getenv("ENABLE_CACHE", "true").lower() == "true"
    CACHE_DIR: str = os.getenv("CACHE_DIR", ".cache")
    CACHE_TTL_SECONDS: int = int(os.getenv("CACHE_TTL_SECONDS", "604800"))

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE: Optional[str] = os.getenv("LOG_FILE", "logs/histotest.log") or None
    LOG_FORMAT: str = os.getenv("LOG_FORMAT", "%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    @classmethod
    def validate(cls) -> bool:
        positive = {
            "L2_BUDGET_CONSTANT": cls.L2_BUDGET_CONSTANT,
            "CAPPED_THRESHOLD_CONSTANT": cls.CAPPED_THRESHOLD_CONSTANT,
            "FULL_SAMPLE_CONSTANT": cls.FULL_SAMPLE_CONSTANT,
            "AMPLIFY_CHERNOFF_DENOMINATOR": cls.AMPLIFY_CHERNOFF_DENOMINATOR,
            "PMF_MIN_DRAWS": cls.PMF_MIN_DRAWS,
            "PMF_CHUNK_SIZE": cls.PMF_CHUNK_SIZE,
            "PMF_STABILITY_TV": cls.PMF_STABILITY_TV,
            "MAX_PARALLEL_WORKERS": cls.MAX_PARALLEL_WORKERS,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if cls.PMF_MAX_DRAWS < cls.PMF_MIN_DRAWS:
            raise ValueError("PMF_MAX_DRAWS must be at least PMF_MIN_DRAWS")
        if cls.AMPLIFY_RULE not in ("chernoff", "binomial"):
            raise ValueError(f"AMPLIFY_RULE must be chernoff or binomial, got {cls.AMPLIFY_RULE!r}")
        if not 0 < cls.POWER_TARGET < 1:
            raise ValueError(f"POWER_TARGET must lie in (0, 1), got {cls.POWER_TARGET}")
        return True

    @classmethod
    def get_project_root(cls) -> Path:
        return Path(__file__).parent.parent.parent

    @classmethod
    def resolve_workers(cls, requested: Optional[int] = None) -> int:
        if cls.WORKERS_FROM_ENV or requested is None:
            return max(1, cls.MAX_PARALLEL_WORKERS)
        return max(1, requested)

config = Config()
