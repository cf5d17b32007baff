"""Timing comparison of the modular kernels across available backends."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class BenchResult:
    kernel: str
    backend: str
    repeat: int
    best_us: float
    mean_us: float


def _time(fn, repeat: int) -> tuple[float, float]:
    fn()  # warm-up; covers jit compilation on the numba side
    samples = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1e6)
    return min(samples), sum(samples) / len(samples)


def run_benchmark(
    k: int = 128, points: int = 128, repeat: int = 200, seed: int = 0
) -> list[BenchResult]:
    """Time interpolation, evaluation, and the modulus search per backend."""
    if k < 2 or points < 1 or repeat < 1:
        raise ValueError("k must be >= 2, points and repeat must be positive")
    rng = np.random.default_rng(seed)
    modulus = 65521
    xs = rng.choice(modulus, size=k, replace=False).astype(np.uint64)
    ys = rng.integers(0, modulus, size=k, dtype=np.uint64)
    eval_xs = rng.integers(0, modulus, size=points, dtype=np.uint64)

    n_rows = 8
    rows = rng.integers(0, 1 << 32, size=(n_rows, k), dtype=np.uint64)
    while True:
        ordered = np.sort(rows, axis=1)
        dup = (ordered[:, 1:] == ordered[:, :-1]).any(axis=1)
        if not dup.any():
            break
        rows[dup] = rng.integers(0, 1 << 32, size=(int(dup.sum()), k), dtype=np.uint64)

    results = []
    for name in kernels.available_backends():
        impl = kernels.backend(name)
        coeffs, _ = impl.newton_coeffs(xs, ys, modulus, True)
        timed = [
            ("newton_coeffs", lambda: impl.newton_coeffs(xs, ys, modulus, True)),
            ("horner_many", lambda: impl.horner_many(coeffs, eval_xs, modulus)),
            ("injective_search", lambda: impl.injective_search(rows, 1 << 16, 1 << 15)),
        ]
        for kernel_name, fn in timed:
            best, mean = _time(fn, repeat)
            results.append(BenchResult(kernel_name, name, repeat, best, mean))
    return results


def format_results(results: list[BenchResult]) -> str:
    header = f"{'kernel':<18} {'backend':<8} {'best(us)':>10} {'mean(us)':>10}"
    lines = [header, "-" * len(header)]
    for r in results:
        lines.append(
            f"{r.kernel:<18} {r.backend:<8} {r.best_us:>10.1f} {r.mean_us:>10.1f}"
        )
    return "\n".join(lines)
