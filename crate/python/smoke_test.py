"""End-to-end check of the hedgeloop_py extension module.

Builds nothing itself: expects `cargo build -p hedgeloop-py --release` to
have produced the cdylib, which it copies next to itself under the import
name if needed. Run as `python3 python/smoke_test.py`.
"""

import csv
import io
import json
import math
import pathlib
import sys
import tempfile

HERE = pathlib.Path(__file__).resolve().parent


def ensure_module():
    target = HERE / "hedgeloop_py.so"
    built = HERE.parent / "target" / "release" / "libhedgeloop_py.so"
    if built.exists() and (not target.exists() or built.stat().st_mtime > target.stat().st_mtime):
        target.write_bytes(built.read_bytes())
    if not target.exists():
        sys.exit("build the extension first: cargo build -p hedgeloop-py --release")
    sys.path.insert(0, str(HERE))


ensure_module()
import hedgeloop_py as hl  # noqa: E402


def check_pricing():
    call = hl.option_price(100.0, 100.0, 1.0, 0.2, 0.0, "call")
    put = hl.option_price(100.0, 100.0, 1.0, 0.2, 0.0, "put")
    assert abs(call - 7.9656) < 1e-3, call
    assert abs(call - put) < 1e-12, (call, put)  # zero-rate ATM parity
    d_call = hl.option_delta(100.0, 100.0, 1.0, 0.2, 0.0, "call")
    d_put = hl.option_delta(100.0, 100.0, 1.0, 0.2, 0.0, "put")
    assert abs(d_call - d_put - 1.0) < 1e-12, (d_call, d_put)
    try:
        hl.option_price(100.0, 100.0, 1.0, 0.2, 0.0, "straddle")
    except ValueError:
        pass
    else:
        raise AssertionError("bad option kind must raise")
    print("pricing ok")


def check_metrics():
    dates = ["2024-01-01", "2024-01-02", "2024-01-03", "2024-01-04"]
    values = [100.0, 110.0, 99.0, 99.0]
    m = hl.compute_metrics(dates, values)
    assert abs(m["total_return_pct"] - -1.0) < 1e-9, m
    assert abs(m["max_drawdown_pct"] - 10.0) < 1e-9, m
    assert m["max_consecutive_losses"] == 1, m
    flat = hl.compute_metrics(dates, [100.0] * 4)
    assert flat["sharpe"] is None and flat["sortino"] is None, flat
    print("metrics ok")


def check_generator():
    text, states = hl.generate_series(
        days=80,
        seed=7,
        regimes=[("calm", 0.05, 0.10), ("stress", -0.30, 0.40)],
        transition=[[0.9, 0.1], [0.2, 0.8]],
    )
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 80 and len(states) == 80, (len(rows), len(states))
    assert set(states) <= {0, 1}, set(states)
    for row in rows:
        low, high = float(row["low"]), float(row["high"])
        assert 0.0 < low <= float(row["close"]) <= high, row
    again, _ = hl.generate_series(
        days=80,
        seed=7,
        regimes=[("calm", 0.05, 0.10), ("stress", -0.30, 0.40)],
        transition=[[0.9, 0.1], [0.2, 0.8]],
    )
    assert again == text, "generator must be deterministic in the seed"
    print("generator ok")


def check_run_and_buffer():
    with tempfile.TemporaryDirectory() as tmp:
        conf = pathlib.Path(tmp) / "smoke.conf"
        conf.write_text(
            "run.id = smoke\n"
            "run.seed = 3\n"
            "run.export_buffer = true\n"
            "data.days = 260\n"
            "data.seed = 3\n"
        )
        out = pathlib.Path(tmp) / "out"
        result = hl.run(str(conf), str(out))
        assert result["run_id"] == "smoke", result["run_id"]
        metrics = result["metrics"]
        assert set(metrics) == {
            "sharpe",
            "total_return_pct",
            "max_drawdown_pct",
            "cvar95_pct",
            "var95_pct",
            "sortino",
            "calmar",
            "worst_month_pct",
            "time_in_drawdown_pct",
            "downside_deviation_pct",
            "max_consecutive_losses",
        }, sorted(metrics)
        assert len(result["curve"]) > 60, len(result["curve"])
        for name in result["files"]:
            assert (out / name).exists() or pathlib.Path(name).exists(), name

        on_disk = json.loads((out / "metrics.json").read_text())
        assert abs(on_disk["tr_pct"] - metrics["total_return_pct"]) < 1e-12

        episodes = (out / "episodes.jsonl").read_text()
        buf = hl.Buffer(retrieval_k=4)
        imported = buf.import_jsonl(episodes)
        assert imported == len(buf) > 0, (imported, len(buf))
        assert 0 < buf.completed_count() <= len(buf)
        query = [0.1] * hl.FEATURE_DIM
        hits = buf.retrieve(query)
        assert len(hits) == 4, hits
        sims = [s for _, s in hits]
        assert sims == sorted(sims, reverse=True), sims
        assert all(-1.0 - 1e-12 <= s <= 1.0 + 1e-12 for s in sims), sims
        assert not math.isnan(sims[0])
        assert buf.export_jsonl() == episodes, "buffer export must round-trip"
    print("run and buffer ok")


def check_defaults():
    d = hl.defaults()
    assert d["run.retrieval_k"] == 5.0 and d["safety.drawdown_threshold"] == 0.10, d
    print("defaults ok")


if __name__ == "__main__":
    check_pricing()
    check_metrics()
    check_generator()
    check_run_and_buffer()
    check_defaults()
    print("smoke test passed")
