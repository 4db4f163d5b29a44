#!/usr/bin/env python3
"""Test script for the experiment harness and the command line."""

import io
import json
import math
import sys
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))


def _flat_config(**overrides):
    from histotest.harness import ExperimentConfig
    settings = dict(
        name="harness-check",
        tester="small-support",
        generator="flat-pair",
        grid={"k": [4], "eps": [0.5], "n": [64]},
        trials=6,
        master_seed=17,
    )
    settings.update(overrides)
    return ExperimentConfig(**settings)


def _stub_verdict(far, scale=1.0):
    from histotest.testers import Decision, Verdict
    used = int(100 * scale)
    return Verdict(Decision.FAR if far else Decision.EQUAL, float(far), used, used, float(used))


def _differs(src):
    p, q = src.hidden_pair()
    return p != q


def test_experiment_config():
    """Test config validation and JSON round trips."""
    print("\n" + "=" * 60)
    print("Testing ExperimentConfig...")
    print("=" * 60)

    from histotest.harness import ExperimentConfig

    experiment = _flat_config(constants={"budget_scale": 2.0}, output="results/power.csv")
    restored = ExperimentConfig.from_json(experiment.to_json())
    assert restored == experiment
    print(f"✓ JSON round trip is lossless")

    points = _flat_config(grid={"k": [4, 8], "eps": [0.5], "n": [64, 128]}).points()
    assert len(points) == 4
    assert points[0] == {"eps": 0.5, "k": 4, "n": 64}
    print(f"✓ Grid expands to {len(points)} points")

    bad_configs = [
        lambda: _flat_config(trials=0).validate(),
        lambda: _flat_config(grid={}).validate(),
        lambda: _flat_config(grid={"k": []}).validate(),
        lambda: _flat_config(constants={"budget_scale": -1}).validate(),
        lambda: ExperimentConfig.from_dict({"surprise": 1}),
        lambda: ExperimentConfig.from_json("{not json"),
    ]
    for build in bad_configs:
        try:
            build()
            assert False, "invalid config should be rejected"
        except ValueError:
            pass
    print(f"✓ {len(bad_configs)} invalid configs rejected")

    print("\n✅ ExperimentConfig tests PASSED")
    return True


def test_run_power():
    """Test power tables, CSV output and determinism."""
    print("\n" + "=" * 60)
    print("Testing run_power...")
    print("=" * 60)

    from histotest.harness import (
        POWER_HEADER,
        binomial_se,
        register_tester,
        rows_to_csv,
        run_power,
    )

    register_tester("perfect-stub", lambda src, point, seed, constants: _stub_verdict(_differs(src)))
    rows = run_power(_flat_config(tester="perfect-stub", trials=10))
    assert len(rows) == 1
    row = rows[0]
    assert row.null_accept == 1.0 and row.alt_reject == 1.0 and row.se == 0.0
    print(f"✓ A perfect tester accepts every null and rejects every alternative")

    text = rows_to_csv(rows, POWER_HEADER)
    assert text.splitlines()[0] == "params,null_accept,alt_reject,mean_samples,trials,se"
    assert text.splitlines()[1].startswith("eps=0.5;k=4;n=64,")
    print(f"✓ CSV header and parameter column")

    serial = run_power(_flat_config(), workers=1)
    parallel = run_power(_flat_config(), workers=4)
    assert rows_to_csv(serial, POWER_HEADER) == rows_to_csv(parallel, POWER_HEADER)
    print(f"✓ Identical CSV with 1 and 4 workers")

    row = serial[0]
    assert row.se == binomial_se(row.alt_rejects, row.trials)
    for name, (low, high) in row.bands().items():
        rate = row.null_accept if name == "null_accept" else row.alt_reject
        assert 0.0 <= low <= rate <= high <= 1.0
    print(f"✓ Standard errors recompute from counts; bands bracket the rates")

    try:
        run_power(_flat_config(tester="no-such-tester"))
        assert False, "unknown testers should be rejected"
    except ValueError:
        print(f"✓ Unknown tester rejected")

    print("\n✅ run_power tests PASSED")
    return True


def test_sample_complexity():
    """The budget search recovers a known threshold."""
    print("\n" + "=" * 60)
    print("Testing estimate_sample_complexity...")
    print("=" * 60)

    from histotest.harness import ComplexityRow, complexity_slope, estimate_sample_complexity, register_tester

    def threshold_stub(src, point, seed, constants):
        scale = constants.budget_scale
        return _stub_verdict(_differs(src) and scale >= 3.0, scale)

    register_tester("threshold-stub", threshold_stub)
    experiment = _flat_config(tester="threshold-stub", trials=20)
    steps = int(experiment.search["bisection_steps"])
    row = estimate_sample_complexity(experiment)[0]
    assert 3.0 <= row.crossing_scale <= 3.0 * 2 ** (1 / 2 ** (steps - 1))
    assert not row.non_monotone
    assert row.samples > 0
    print(f"✓ Crossing at scale {row.crossing_scale:.4f} for a threshold of 3")

    rows = [ComplexityRow({"k": k}, 1.0, 50.0 * k ** (2 / 3), 1, False) for k in (8, 16, 32, 64)]
    assert abs(complexity_slope(rows) - 2 / 3) < 1e-9
    print(f"✓ Log-log slope of k^(2/3) crossings is 2/3")

    print("\n✅ estimate_sample_complexity tests PASSED")
    return True


def test_derived_points():
    """n_per_k, eps2_per_n and b = "uniform" fill in dependent parameters."""
    print("\n" + "=" * 60)
    print("Testing derive_point...")
    print("=" * 60)

    from histotest.harness import derive_point

    points = _flat_config(grid={"k": [8, 64], "eps": [0.3], "n_per_k": [16]}).points()
    assert [point["n"] for point in points] == [128, 1024]
    print(f"✓ n_per_k = 16 gives n = 16k: {[point['n'] for point in points]}")

    point = derive_point({"n": 1024, "eps2_per_n": 1.0, "b": "uniform"})
    assert math.isclose(point["eps2"], 1 / 1024) and math.isclose(point["b"], 1 / 32)
    print(f"✓ eps2_per_n and b = uniform resolve against n")

    assert derive_point({"n": 50, "n_per_k": 16, "k": 8})["n"] == 50
    assert derive_point({"n": 64, "eps2": 0.1, "eps2_per_n": 1.0})["eps2"] == 0.1
    print(f"✓ Explicit values win")

    for bad in ({"n_per_k": 16}, {"eps2_per_n": 1.0}, {"b": "uniform"}):
        try:
            derive_point(bad)
            assert False, f"{bad} should be rejected"
        except ValueError:
            pass
    print(f"✓ Relative parameters without their base rejected")

    print("\n✅ derive_point tests PASSED")
    return True


def test_fixture_generators():
    """Test the two-point and spike-pair fixtures."""
    print("\n" + "=" * 60)
    print("Testing two-point and spike-pair fixtures...")
    print("=" * 60)

    from histotest.harness import GENERATORS, derive_point
    from histotest.measures import capped_discrepancy, l1_distance, l2_distance

    point = derive_point({"n": 256, "eps2_per_n": 1.0, "b": "uniform"})
    null_p, null_q = GENERATORS["two-point"](point, False, 3).hidden_pair()
    assert null_p == null_q and math.isclose(null_p.l2_norm, point["b"])
    p, q = GENERATORS["two-point"](point, True, 3).hidden_pair()
    assert math.isclose(l2_distance(p, q), point["eps2"], rel_tol=1e-9)
    assert abs(q.mass - 1.0) < 1e-12
    print(f"✓ two-point: uniform null, alternative at l2 distance eps2 = {point['eps2']:.5f}")

    try:
        GENERATORS["two-point"]({"n": 16, "eps2": 1.0}, True, 3)
        assert False, "a shift larger than a bin should be rejected"
    except ValueError:
        print(f"✓ two-point rejects eps2 beyond sqrt(2) / n")

    point = {"n": 256, "k": 16, "eps": 0.25, "l1": 0.6, "spikes": 32}
    p, q = GENERATORS["spike-pair"](point, True, 4).hidden_pair()
    assert abs(p.mass - 1.0) < 1e-12 and abs(q.mass - 1.0) < 1e-12
    assert abs(l1_distance(p, q) - 0.6) < 1e-12
    assert p.weights.max() <= 0.02439
    assert capped_discrepancy(p, q, 16, 0.02439) > 0.25
    null_p, null_q = GENERATORS["spike-pair"](point, False, 4).hidden_pair()
    assert null_p == null_q and null_p == p
    print(f"✓ spike-pair: l1 = 0.6 on 32 spikes, capped discrepancy above eps at alpha = 1/41")

    for bad in ({"spikes": 3}, {"l1": 2.5}):
        try:
            GENERATORS["spike-pair"]({**point, **bad}, True, 4)
            assert False, f"{bad} should be rejected"
        except ValueError:
            pass
    print(f"✓ Odd spike counts and l1 outside (0, 2) rejected")

    print("\n✅ Fixture generator tests PASSED")
    return True


def test_shipped_configs():
    """Every config under configs/ loads and names a known tester and generator."""
    print("\n" + "=" * 60)
    print("Testing shipped experiment configs...")
    print("=" * 60)

    from histotest.harness import GENERATORS, TESTERS, ExperimentConfig

    configs = {path.stem: ExperimentConfig.load(path) for path in sorted(Path(__file__).parent.glob("configs/*.json"))}
    for name, experiment in configs.items():
        assert experiment.tester in TESTERS and experiment.generator in GENERATORS, name
        assert experiment.points()
    print(f"✓ {len(configs)} configs load")

    testers = {experiment.tester for name, experiment in configs.items() if name.startswith("power_")}
    assert {"l2", "small-support", "capped-support", "iterative", "full"} <= testers
    for name in ("power_l2", "power_small_support", "power_capped_support", "power_iterative", "power_full"):
        assert configs[name].trials >= 500, name
        for point in configs[name].points():
            assert point.get("k", 0) <= 32 and point["n"] <= 4096
            assert point.get("eps", 0.25) in (0.25, 0.4)
    print(f"✓ Power configs cover every tester with at least 500 trials")

    assert configs["tv_decay"].grid["W"] == [32, 128, 512, 2048]
    overnight = configs["complexity_overnight"]
    assert [(point["k"], point["n"], point["eps"]) for point in overnight.points()] == [
        (8, 128, 0.3), (16, 256, 0.3), (32, 512, 0.3), (64, 1024, 0.3)
    ]
    print(f"✓ TV grid and the overnight complexity sweep at eps = 0.3, n = 16k")

    print("\n✅ Shipped config tests PASSED")
    return True


def test_calibrate_l2_constant():
    """Calibration scales the configured constant by the worst crossing."""
    print("\n" + "=" * 60)
    print("Testing calibrate_l2_constant...")
    print("=" * 60)

    from histotest.harness import calibrate_l2_constant, register_tester

    def constant_stub(src, point, seed, constants):
        effective = constants.l2_budget_constant * constants.budget_scale
        return _stub_verdict(_differs(src) and effective >= 12.0 * point["k"] / 8, constants.budget_scale)

    register_tester("constant-stub", constant_stub)
    experiment = _flat_config(
        tester="constant-stub", trials=20, grid={"k": [4, 8], "eps": [0.5], "n": [64]},
        constants={"l2_budget_constant": 4.0},
    )
    steps = int(experiment.search["bisection_steps"])
    rows, calibrated = calibrate_l2_constant(experiment)
    assert len(rows) == 2
    assert 12.0 <= calibrated <= 12.0 * 2 ** (1 / 2 ** (steps - 1))
    print(f"✓ Calibrated C = {calibrated:.3f} for a worst fixture needing 12")

    print("\n✅ calibrate_l2_constant tests PASSED")
    return True


def test_tv_decay_table():
    """Test the TV decay table."""
    print("\n" + "=" * 60)
    print("Testing run_tv_decay...")
    print("=" * 60)

    from histotest.harness import TV_HEADER, rows_to_csv, run_tv_decay

    rows = run_tv_decay(_flat_config(grid={"W": [16]}))
    assert rows[0].stable and 0.0 <= rows[0].tv <= 1.0
    assert math.isclose(rows[0].tv_log_sq, rows[0].tv * math.log(16) ** 2)
    assert rows_to_csv(rows, TV_HEADER).splitlines()[0] == "W,tv,se,draws,stable,tv_log_sq"
    print(f"✓ W=16: TV {rows[0].tv:.4f} (se {rows[0].se:.4f})")

    from histotest.harness import TvRow, tv_decay_gap

    hand_made = [
        TvRow(32, 0.30, 0.01, 1000, True),
        TvRow(128, 0.25, 0.01, 1000, True),
        TvRow(512, float("nan"), float("nan"), 10, False),
        TvRow(2048, 0.20, 0.02, 1000, True),
    ]
    gap = tv_decay_gap(hand_made)
    assert math.isclose(gap, 0.10 / math.sqrt(0.01 ** 2 + 0.02 ** 2))
    assert gap > 2
    print(f"✓ W=2048 sits {gap:.2f} standard errors below W=32; unstable rows skipped")

    try:
        tv_decay_gap(hand_made[2:3])
        assert False, "one stable row is not enough"
    except ValueError:
        print(f"✓ Fewer than two stable rows rejected")

    try:
        run_tv_decay(_flat_config())
        assert False, "a W grid is required"
    except ValueError:
        print(f"✓ Missing W grid rejected")

    print("\n✅ run_tv_decay tests PASSED")
    return True


def test_cli():
    """Test the command line surface."""
    print("\n" + "=" * 60)
    print("Testing cli_main...")
    print("=" * 60)

    from histotest.ak_oracle import ak_distance
    from histotest.cli import cli_main
    from histotest.measures import dump_histogram, from_weights

    def run(argv):
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            code = cli_main(argv)
        return code, out.getvalue()

    p = from_weights([0.5, 0.0, 0.5, 0.0])
    q = from_weights([0.0, 0.5, 0.0, 0.5])
    with tempfile.TemporaryDirectory() as tmpdir:
        tmp = Path(tmpdir)
        p_path = dump_histogram(p, tmp / "a.json")
        q_path = dump_histogram(q, tmp / "b.json")
        odd_path = dump_histogram(from_weights([1.0, 0.0, 0.0]), tmp / "c.json")

        code, out = run(["oracle", "ak", "--p", str(p_path), "--q", str(q_path), "--k", "3"])
        assert code == 0
        assert json.loads(out)["value"] == ak_distance(p, q, 3).value
        print(f"✓ oracle ak matches the library value")

        code, out = run(["--seed", "1", "oracle", "ak", "--p", str(p_path), "--q", str(q_path), "--k", "3"])
        assert code == 0 and json.loads(out)["value"] == ak_distance(p, q, 3).value
        print(f"✓ Global flags work before the command too")

        strong = ["gen", "strong-lb", "--W", "16", "--k", "4", "--eps", "0.5", "--family", "strongD'"]
        sides = {}
        for side in ("p", "q"):
            sides[side] = tmp / f"strong_{side}.json"
            code, _ = run(["--seed", "2"] + strong + ["--side", side, "--out", str(sides[side])])
            assert code == 0
        code, out = run(["--seed", "2"] + strong + ["--verify"])
        expected = json.loads(out)["verification"]["ak"]
        code, out = run(["oracle", "ak", "--p", str(sides["p"]), "--q", str(sides["q"]), "--k", "4"])
        assert code == 0 and abs(json.loads(out)["value"] - expected) < 1e-12
        print(f"✓ gen --side files feed oracle ak and match the attached check (A_4 = {expected:.4f})")

        code, _ = run(["oracle", "ak", "--p", str(p_path), "--k", "3"])
        assert code == 2
        code, _ = run(["oracle", "ak", "--p", str(p_path), "--q", str(q_path), "--k", "3", "--seed", "-1"])
        assert code == 2
        print(f"✓ Usage errors exit with 2")

        code, _ = run(["oracle", "ak", "--p", str(p_path), "--q", str(odd_path), "--k", "3"])
        assert code == 1
        print(f"✓ Runtime errors exit with 1")

        code, out = run([
            "test", "small-support", "--p", str(p_path), "--q", str(q_path),
            "--k", "2", "--eps", "0.5", "--seed", "3",
        ])
        report = json.loads(out)
        assert code == 0 and report["tester"] == "small-support"
        assert report["decision"] in ("Equal", "Far")
        print(f"✓ test small-support prints a report ({report['decision']})")

        code, out = run([
            "test", "l2", "--p", str(p_path), "--q", str(q_path),
            "--eps", "0.5", "--trials", "3", "--format", "csv",
        ])
        lines = out.splitlines()
        assert code == 0 and lines[0] == "trial,decision,statistic,samples_used_p,samples_used_q"
        assert len(lines) == 4
        print(f"✓ Per-trial CSV")

        code, out = run(["gen", "strong-lb", "--W", "16", "--k", "4", "--eps", "0.5", "--family", "strongD", "--seed", "1"])
        payload = json.loads(out)
        assert code == 0 and payload["family"] == "strongD"
        assert payload["p"]["format"] == "histotest-v1"
        print(f"✓ gen strong-lb writes histogram JSON")

        code, out = run(["gen", "prop-lb", "--W", "16", "--k", "4", "--eps", "0.5", "--family", "D", "--seed", "1"])
        assert code == 0 and json.loads(out)["p"]["kind"] == "continuous-pieces"
        print(f"✓ gen prop-lb writes continuous pieces")

        config_path = tmp / "power.json"
        config_path.write_text(_flat_config(trials=3).to_json())
        csv_path = tmp / "out" / "power.csv"
        code, _ = run(["exp", "power", "--config", str(config_path), "--out", str(csv_path)])
        assert code == 0
        assert csv_path.read_text().splitlines()[0] == "params,null_accept,alt_reject,mean_samples,trials,se"
        print(f"✓ exp power writes the power CSV")

        calibrate_path = tmp / "calibrate.json"
        calibrate_path.write_text(_flat_config(
            tester="l2", generator="two-point", trials=4,
            grid={"n": [64], "eps2_per_n": [1.0], "b": ["uniform"]},
            search={"start_scale": 1.0, "max_doublings": 2, "bisection_steps": 1},
        ).to_json())
        code, out = run(["exp", "calibrate", "--config", str(calibrate_path), "--target", "0.05"])
        assert code == 0
        assert out.splitlines()[0] == "params,crossing_scale,samples,evaluations,non_monotone"
        print(f"✓ exp calibrate writes the crossing table")

    print("\n✅ cli_main tests PASSED")
    return True


def main():
    """Run all harness tests."""
    print("\n" + "=" * 60)
    print("HARNESS AND CLI - TEST SUITE")
    print("=" * 60)

    all_passed = True
    for test in (
        test_experiment_config,
        test_run_power,
        test_sample_complexity,
        test_derived_points,
        test_fixture_generators,
        test_shipped_configs,
        test_calibrate_l2_constant,
        test_tv_decay_table,
        test_cli,
    ):
        try:
            if not test():
                all_passed = False
        except Exception as e:
            print(f"\n❌ {test.__name__} FAILED: {e}")
            import traceback
            traceback.print_exc()
            all_passed = False

    print("\n" + "=" * 60)
    if all_passed:
        print("✅ ALL HARNESS TESTS PASSED!")
    else:
        print("❌ SOME TESTS FAILED")
        print("Please review the errors above.")
    print("=" * 60 + "\n")

    return 0 if all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
