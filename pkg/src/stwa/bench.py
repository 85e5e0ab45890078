"""Forward-pass scaling benchmark: wall-clock and analytic score counts versus H."""
from __future__ import annotations

import csv
import io
import statistics
import time
import tracemalloc
from dataclasses import asdict, dataclass

import numpy as np

from .model import ModelConfig, STWAModel, count_scores, variant_scores
from .stgen import ConfigError

FIELDS = ("variant", "H", "N", "p", "S", "median_seconds", "score_count",
          "window_scores", "canonical_scores", "peak_bytes", "skipped")


@dataclass
class BenchRecord:
    variant: str
    H: int
    N: int
    p: int
    S: str
    median_seconds: float | None
    score_count: int | None
    window_scores: int | None
    canonical_scores: int | None
    peak_bytes: int | None
    skipped: str = ""


def _single_thread():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        return None
    return threadpool_limits(limits=1)


def bench_one(variant: str, H: int, N: int = 8, d: int = 16, k: int = 8, S=(3, 2, 2),
              p: int = 1, batch: int = 64, repeats: int = 5, seed: int = 0) -> BenchRecord:
    """Median forward time over ``repeats`` runs after one warm-up."""
    s_label = "-".join(str(s) for s in S)
    try:
        cfg = ModelConfig(N=N, H=H, U=12, d=d, k=k, S=list(S), p=p, variant=variant, seed=seed)
    except ConfigError as exc:
        return BenchRecord(variant, H, N, p, s_label, None, None, None, None, None, str(exc))
    model = STWAModel(cfg)
    x = np.random.default_rng(seed).standard_normal((batch, N, H, 1))
    model.forward(x, mode="eval")
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        res = model.forward(x, mode="eval")
        times.append(time.perf_counter() - t0)
    tracemalloc.start()
    model.forward(x, mode="eval")
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    window, canonical = count_scores(cfg)
    expected = variant_scores(cfg)
    if res.scores.total != expected:
        raise AssertionError(f"{variant} H={H}: counted {res.scores.total} scores, analytic {expected}")
    return BenchRecord(variant, H, N, p, s_label, statistics.median(times), expected,
                       window, canonical, peak)


def run_bench(H_list, variants, repeats: int = 5, **kw) -> list[BenchRecord]:
    limiter = _single_thread()
    try:
        records = [bench_one(v, H, repeats=repeats, **kw) for v in variants for H in H_list]
    finally:
        if limiter is not None:
            limiter.unregister()
    return sorted(records, key=lambda r: (r.variant, r.H))


def to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=FIELDS, lineterminator="\n")
    w.writeheader()
    for r in records:
        row = {k: ("" if v is None else v) for k, v in asdict(r).items()}
        if r.median_seconds is not None:
            row["median_seconds"] = f"{r.median_seconds:.9f}"
        w.writerow(row)
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def growth_ratio(records, variant: str, h_lo: int, h_hi: int) -> float:
    by_h = {r.H: r for r in records if r.variant == variant}
    return by_h[h_hi].median_seconds / by_h[h_lo].median_seconds
