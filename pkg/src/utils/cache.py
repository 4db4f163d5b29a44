import hashlib
import json
import time
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

class PmfCache:

    def __init__(self, cache_dir: Optional[Path] = None, ttl_seconds: Optional[int] = None):
        from utils.config import config
        if cache_dir is None:
            cache_dir = config.get_project_root() / config.CACHE_DIR / "pmf"
        self.cache_dir = Path(cache_dir)
        self.ttl_seconds = config.CACHE_TTL_SECONDS if ttl_seconds is None else ttl_seconds
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _compute_hash(self, *args: Any) -> str:
        content = json.dumps(args, sort_keys=True, default=str)
        return hashlib.sha256(content.encode("utf-8")).hexdigest()

    def _get_cache_paths(self, cache_key: str) -> Tuple[Path, Path]:
        return (
            self.cache_dir / f"pmf_{cache_key}.npz",
            self.cache_dir / f"pmf_{cache_key}.json",
        )

    def _is_valid(self, cached_metadata: Dict[str, Any]) -> bool:
        timestamp = cached_metadata.get("timestamp", 0)
        return time.time() - timestamp <= self.ttl_seconds

    def get_pmf(self, params: Dict[str, Any]) -> Optional[Tuple[Dict[str, np.ndarray], Dict[str, Any]]]:
        cache_key = self._compute_hash(params)
        array_path, metadata_path = self._get_cache_paths(cache_key)

        if not array_path.exists() or not metadata_path.exists():
            return None

        try:
            with open(metadata_path, "r") as f:
                cached_metadata = json.load(f)

            if not self._is_valid(cached_metadata):
                return None

            with np.load(array_path) as archive:
                arrays = {name: archive[name] for name in archive.files}
            return arrays, cached_metadata.get("content", {})
        except (json.JSONDecodeError, KeyError, OSError, ValueError):
            return None

    def set_pmf(self, params: Dict[str, Any], arrays: Dict[str, np.ndarray], metadata: Dict[str, Any]) -> None:
        cache_key = self._compute_hash(params)
        array_path, metadata_path = self._get_cache_paths(cache_key)

        np.savez_compressed(array_path, **arrays)
        with open(metadata_path, "w") as f:
            json.dump({"timestamp": time.time(), "params": params, "content": metadata}, f)
