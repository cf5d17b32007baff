"""Modular polynomial congruences over injective index moduli.

A set of committed (index, pattern) pairs is stored as the unique polynomial
P of degree < k with P(index mod m) = pattern (mod m). The modulus m is
chosen so that the committed indices stay distinct after reduction, which
makes the congruence well defined and the committed patterns exactly
recoverable whenever pattern < m.

Two search variants exist. find_injective_modulus scans all integers in
(2**15, 2**16] descending and is what the modulus-distribution Monte Carlo
reproduces. The commitment pipeline itself uses find_injective_prime_modulus:
divided-difference interpolation divides by index differences, and a prime
modulus makes every nonzero difference invertible instead of leaving
invertibility to chance.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "MODULUS_FLOOR",
    "ProofPoly",
    "find_injective_modulus",
    "find_injective_prime_modulus",
    "mod_inverse",
    "newton_interpolate",
    "newton_interpolate_counted",
    "horner_eval",
    "horner_eval_many",
    "horner_eval_many_counted",
]

MODULUS_FLOOR = 1 << 15
_MODULUS_CEIL = 1 << 32


@dataclass(frozen=True)
class ProofPoly:
    """Polynomial congruence: coefficients ascending by degree, all reduced."""

    modulus: int
    coefficients: tuple[int, ...]

    def __post_init__(self) -> None:
        if not MODULUS_FLOOR < self.modulus < _MODULUS_CEIL:
            raise ValueError(
                f"modulus {self.modulus} outside ({MODULUS_FLOOR}, {_MODULUS_CEIL})"
            )
        if len(self.coefficients) < 1:
            raise ValueError("polynomial needs at least one coefficient")
        for c in self.coefficients:
            if not 0 <= c < self.modulus:
                raise ValueError(f"coefficient {c} not reduced modulo {self.modulus}")

    @property
    def k(self) -> int:
        return len(self.coefficients)


def _as_index_array(xs: Iterable[int]) -> np.ndarray:
    arr = np.asarray(list(xs) if not isinstance(xs, np.ndarray) else xs, dtype=np.int64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("need a non-empty 1-d sequence of indices")
    if (arr < 0).any():
        raise ValueError("indices must be non-negative")
    if np.unique(arr).size != arr.size:
        raise ValueError("indices must be distinct")
    return arr.astype(np.uint64)


def find_injective_modulus(xs: Iterable[int]) -> int:
    """Largest m in (2**15, 2**16] with all xs distinct mod m, scanning down.

    Composite moduli are allowed here; this is the variant whose return-value
    distribution the Monte Carlo experiment measures.
    """
    arr = _as_index_array(xs)
    found = kernels.active().injective_search(arr.reshape(1, -1), 1 << 16, MODULUS_FLOOR)
    if found[0] < 0:
        raise ValueError("No injective modulus found!")
    return int(found[0])


@lru_cache(maxsize=4096)
def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    d = 3
    while d * d <= n:
        if n % d == 0:
            return False
        d += 2
    return True


def find_injective_prime_modulus(
    xs: Iterable[int], *, start: int = 65521, floor: int = MODULUS_FLOOR
) -> int:
    """Largest prime p in (floor, start] with all xs distinct mod p.

    The default window tops out at 65521, the largest prime below 2**16, so
    results always fit the 2-byte wire field.
    """
    arr = _as_index_array(xs)
    if not floor < start < _MODULUS_CEIL:
        raise ValueError(f"bad search window ({floor}, {start}]")
    for cand in range(start, floor, -1):
        if not _is_prime(cand):
            continue
        if np.unique(arr % np.uint64(cand)).size == arr.size:
            return cand
    raise ValueError(f"no injective prime modulus in ({floor}, {start}]")


def mod_inverse(a: int, modulus: int) -> int:
    """Inverse of a modulo modulus via extended Euclid (Bezout coefficients).

    Raises ValueError when modulus < 2 or gcd(a, modulus) != 1. The result is
    the least non-negative residue.
    """
    if modulus <= 1:
        raise ValueError(f"modulus must exceed 1, got {modulus}")
    return kernels.ext_euclid_inverse(a, modulus)


def newton_interpolate(
    xs: Sequence[int] | np.ndarray, ys: Sequence[int] | np.ndarray, modulus: int
) -> ProofPoly:
    """Unique polynomial of degree < k through the k points, mod a prime."""
    poly, _ = newton_interpolate_counted(xs, ys, modulus)
    return poly


def newton_interpolate_counted(
    xs: Sequence[int] | np.ndarray, ys: Sequence[int] | np.ndarray, modulus: int
) -> tuple[ProofPoly, int]:
    """newton_interpolate plus the measured modular-multiply count.

    The count covers the divided-difference combines and the basis expansion;
    modular inversions are unit subroutine calls on top.
    """
    xs_arr = np.asarray(xs, dtype=np.uint64)
    ys_arr = np.asarray(ys, dtype=np.uint64)
    if xs_arr.ndim != 1 or xs_arr.size < 1 or xs_arr.shape != ys_arr.shape:
        raise ValueError("xs and ys must be equal-length non-empty sequences")
    if not MODULUS_FLOOR < modulus < _MODULUS_CEIL:
        raise ValueError(f"modulus {modulus} outside ({MODULUS_FLOOR}, {_MODULUS_CEIL})")
    residues = xs_arr % np.uint64(modulus)
    if np.unique(residues).size != residues.size:
        raise ValueError(f"interpolation points collide modulo {modulus}")
    coeffs, mults = kernels.active().newton_coeffs(
        xs_arr, ys_arr, modulus, _is_prime(modulus)
    )
    if mults < 0:
        # distinct residues already guaranteed above, so only a composite
        # modulus with a non-coprime difference can land here
        raise ValueError(f"non-invertible x difference modulo {modulus}")
    poly = ProofPoly(modulus, tuple(int(c) for c in coeffs))
    return poly, int(mults)


def horner_eval(poly: ProofPoly, x: int) -> int:
    """Evaluate the congruence at x, highest coefficient first."""
    m = poly.modulus
    xr = x % m
    acc = poly.coefficients[-1]
    for c in reversed(poly.coefficients[:-1]):
        acc = (acc * xr + c) % m
    return acc


def horner_eval_many(poly: ProofPoly, xs: Sequence[int] | np.ndarray) -> np.ndarray:
    """Vector horner_eval; returns uint64 residues."""
    arr = np.asarray(xs, dtype=np.uint64)
    coeffs = np.asarray(poly.coefficients, dtype=np.uint64)
    values, _ = kernels.active().horner_many(coeffs, arr, poly.modulus)
    return values


def horner_eval_many_counted(
    poly: ProofPoly, xs: Sequence[int] | np.ndarray
) -> tuple[np.ndarray, int]:
    """horner_eval_many plus the measured modular-multiply count."""
    arr = np.asarray(xs, dtype=np.uint64)
    coeffs = np.asarray(poly.coefficients, dtype=np.uint64)
    values, mults = kernels.active().horner_many(coeffs, arr, poly.modulus)
    return values, int(mults)
