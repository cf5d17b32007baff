"""Integer-exact hot loops with two interchangeable backends.

The numba backend jit-compiles the reference loops; the numpy backend keeps
the same algorithms vectorized. Both are exact and return identical results,
so SKETCHPROOF_BACKEND (auto | numba | numpy) only changes speed.

All arithmetic stays below 2**64: operands are reduced below 2**32 before
multiplying, so uint64 products never wrap.

Kernel contracts (shared by both backends):

newton_coeffs(xs, ys, modulus, modulus_is_prime) -> (coeffs, mult_count)
    Divided-difference interpolation of the unique degree < n polynomial
    through (xs[i], ys[i]) mod modulus, returned in standard form, ascending
    degree. mult_count tallies the modular multiplies of the recurrences
    themselves (inversions count as unit subroutine calls). On a
    non-invertible x difference the sentinel (empty array, -1) is returned.

horner_many(coeffs, xs, modulus) -> (values, mult_count)
    Evaluate the polynomial at each x, highest coefficient first.

injective_search(rows, hi, lo) -> moduli
    Per row, the largest candidate in (lo, hi] (descending scan) under which
    all row values stay distinct, or -1 when no candidate works.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

__all__ = [
    "ENV_VAR",
    "active",
    "active_backend",
    "available_backends",
    "backend",
    "ext_euclid_inverse",
    "set_active_backend",
]

ENV_VAR = "SKETCHPROOF_BACKEND"


def ext_euclid_inverse(a: int, m: int) -> int:
    """Multiplicative inverse of a modulo m via the extended Euclidean run.

    Tracks the Bezout coefficient of a; raises ValueError when gcd(a, m) != 1.
    """
    old_r, r = a % m, m
    old_s, s = 1, 0
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
    if old_r != 1:
        raise ValueError(f"no inverse: gcd({a}, {m}) != 1")
    return old_s % m


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _pow_mod_vec(base: np.ndarray, exp: int, m: np.uint64) -> np.ndarray:
    """Elementwise base**exp mod m by square-and-multiply (uint64-exact)."""
    result = np.ones_like(base)
    b = base % m
    e = int(exp)
    while e > 0:
        if e & 1:
            result = (result * b) % m
        b = (b * b) % m
        e >>= 1
    return result


def _inverses_np(dens: np.ndarray, modulus: int, modulus_is_prime: bool) -> np.ndarray | None:
    if (dens == 0).any():
        return None
    if modulus_is_prime:
        return _pow_mod_vec(dens, modulus - 2, np.uint64(modulus))
    out = np.empty_like(dens)
    for i, d in enumerate(dens.tolist()):
        try:
            out[i] = ext_euclid_inverse(d, modulus)
        except ValueError:
            return None
    return out


def _newton_coeffs_np(xs, ys, modulus, modulus_is_prime=True):
    m = np.uint64(modulus)
    xs = np.asarray(xs, dtype=np.uint64) % m
    dd = np.asarray(ys, dtype=np.uint64) % m
    n = dd.shape[0]
    mults = 0
    for level in range(1, n):
        # reads use the previous level's values, mirroring the in-place
        # top-down update of the scalar loop
        num = (dd[level:] + m - dd[level - 1 : n - 1]) % m
        den = (xs[level:] + m - xs[: n - level]) % m
        inv = _inverses_np(den, modulus, modulus_is_prime)
        if inv is None:
            return np.empty(0, np.uint64), -1
        dd[level:] = (num * inv) % m
        mults += n - level
    coeffs = np.zeros(n, np.uint64)
    factor = np.zeros(n, np.uint64)
    factor[0] = 1
    for i in range(n):
        coeffs[: i + 1] = (coeffs[: i + 1] + dd[i] * factor[: i + 1]) % m
        mults += i + 1
        if i + 1 < n:
            neg = (m - xs[i]) % m
            head = factor[: i + 2].copy()
            scaled = (head * neg) % m
            scaled[1:] = (scaled[1:] + head[:-1]) % m
            factor[: i + 2] = scaled
            mults += i + 2
    return coeffs, mults


def _horner_many_np(coeffs, xs, modulus):
    m = np.uint64(modulus)
    coeffs = np.asarray(coeffs, dtype=np.uint64) % m
    xs = np.asarray(xs, dtype=np.uint64) % m
    acc = np.full(xs.shape, coeffs[-1], np.uint64)
    for c in coeffs[-2::-1]:
        acc = (acc * xs + c) % m
    return acc, (coeffs.shape[0] - 1) * xs.shape[0]


def _injective_search_np(rows, hi=65536, lo=32768):
    rows = np.asarray(rows, dtype=np.uint64)
    out = np.full(rows.shape[0], -1, np.int64)
    pending = np.arange(rows.shape[0])
    for cand in range(hi, lo, -1):
        if pending.size == 0:
            break
        res = rows[pending] % np.uint64(cand)
        res.sort(axis=1)
        if res.shape[1] > 1:
            ok = (res[:, 1:] != res[:, :-1]).all(axis=1)
        else:
            ok = np.ones(pending.size, bool)
        out[pending[ok]] = cand
        pending = pending[~ok]
    return out


_NUMPY = SimpleNamespace(
    name="numpy",
    newton_coeffs=_newton_coeffs_np,
    horner_many=_horner_many_np,
    injective_search=_injective_search_np,
)


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------


def _build_numba_backend():
    import numba

    @numba.njit(cache=True)
    def _inv_i64(a, m):
        # extended Euclid on int64; coefficients stay below m < 2**32
        old_r, r = a % m, m
        old_s, s = np.int64(1), np.int64(0)
        while r != 0:
            q = old_r // r
            old_r, r = r, old_r - q * r
            old_s, s = s, old_s - q * s
        if old_r != 1:
            return np.int64(-1)
        return old_s % m

    @numba.njit(cache=True)
    def newton_coeffs(xs, ys, modulus, modulus_is_prime=True):
        m = np.uint64(modulus)
        n = xs.shape[0]
        rx = np.empty(n, np.uint64)
        dd = np.empty(n, np.uint64)
        for i in range(n):
            rx[i] = xs[i] % m
            dd[i] = ys[i] % m
        mults = 0
        for level in range(1, n):
            for i in range(n - 1, level - 1, -1):
                num = (dd[i] + m - dd[i - 1]) % m
                den = (rx[i] + m - rx[i - level]) % m
                inv = _inv_i64(np.int64(den), np.int64(modulus))
                if inv < 0:
                    return np.empty(0, np.uint64), -1
                dd[i] = (num * np.uint64(inv)) % m
                mults += 1
        coeffs = np.zeros(n, np.uint64)
        factor = np.zeros(n, np.uint64)
        factor[0] = np.uint64(1)
        for i in range(n):
            for j in range(i + 1):
                coeffs[j] = (coeffs[j] + dd[i] * factor[j]) % m
                mults += 1
            if i + 1 < n:
                neg = (m - rx[i]) % m
                prev = factor[0]
                factor[0] = (prev * neg) % m
                mults += 1
                for t in range(1, i + 2):
                    tmp = factor[t]
                    factor[t] = (prev + tmp * neg) % m
                    mults += 1
                    prev = tmp
        return coeffs, mults

    @numba.njit(cache=True)
    def horner_many(coeffs, xs, modulus):
        m = np.uint64(modulus)
        n = coeffs.shape[0]
        out = np.empty(xs.shape[0], np.uint64)
        mults = 0
        for p in range(xs.shape[0]):
            x = xs[p] % m
            acc = coeffs[n - 1] % m
            for i in range(n - 2, -1, -1):
                acc = (acc * x + coeffs[i] % m) % m
                mults += 1
            out[p] = acc
        return out, mults

    @numba.njit(cache=True)
    def injective_search(rows, hi=65536, lo=32768):
        nrows, k = rows.shape
        out = np.empty(nrows, np.int64)
        seen = np.zeros(hi, np.int64)  # residues are < hi; stamped per candidate
        tick = 0
        for r in range(nrows):
            out[r] = -1
            for cand in range(hi, lo, -1):
                tick += 1
                m = np.uint64(cand)
                ok = True
                for j in range(k):
                    res = rows[r, j] % m
                    if seen[res] == tick:
                        ok = False
                        break
                    seen[res] = tick
                if ok:
                    out[r] = cand
                    break
        return out

    return SimpleNamespace(
        name="numba",
        newton_coeffs=newton_coeffs,
        horner_many=horner_many,
        injective_search=injective_search,
    )


def _wrap_numba(ns):
    # numba dispatch wants uint64 arrays; normalize here so call sites can
    # pass whatever integer dtype they hold
    def newton_coeffs(xs, ys, modulus, modulus_is_prime=True):
        return ns.newton_coeffs(
            np.ascontiguousarray(xs, dtype=np.uint64),
            np.ascontiguousarray(ys, dtype=np.uint64),
            modulus,
            modulus_is_prime,
        )

    def horner_many(coeffs, xs, modulus):
        return ns.horner_many(
            np.ascontiguousarray(coeffs, dtype=np.uint64),
            np.ascontiguousarray(xs, dtype=np.uint64),
            modulus,
        )

    def injective_search(rows, hi=65536, lo=32768):
        return ns.injective_search(np.ascontiguousarray(rows, dtype=np.uint64), hi, lo)

    return SimpleNamespace(
        name="numba",
        newton_coeffs=newton_coeffs,
        horner_many=horner_many,
        injective_search=injective_search,
    )


def _load_backends() -> dict[str, SimpleNamespace]:
    backends = {"numpy": _NUMPY}
    requested = os.environ.get(ENV_VAR, "auto").strip().lower() or "auto"
    if requested not in ("auto", "numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be auto, numba, or numpy (got {requested!r})")
    if requested != "numpy":
        try:
            backends["numba"] = _wrap_numba(_build_numba_backend())
        except ImportError:
            if requested == "numba":
                raise RuntimeError(f"{ENV_VAR}=numba but numba is not importable")
    return backends


_BACKENDS = _load_backends()
_ACTIVE = "numba" if "numba" in _BACKENDS else "numpy"
if os.environ.get(ENV_VAR, "auto").strip().lower() == "numpy":
    _ACTIVE = "numpy"


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _ACTIVE


def set_active_backend(name: str) -> None:
    """Runtime override of the env-flag selection (used by tests and bench)."""
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; have {available_backends()}")
    global _ACTIVE
    _ACTIVE = name


def backend(name: str | None = None) -> SimpleNamespace:
    return _BACKENDS[name or _ACTIVE]


def active() -> SimpleNamespace:
    return _BACKENDS[_ACTIVE]
