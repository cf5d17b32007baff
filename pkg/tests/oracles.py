"""Independent reference implementations used to freeze expected values.

Nothing here shares code with the package kernels: interpolation is checked
through direct Lagrange evaluation, float rounding through exhaustive
nearest-pattern search, and top-k through a plain sort. Slow is fine.
"""

from __future__ import annotations

import math
import struct

import numpy as np

from sketchproof.floatbits import Precision, decode_array


def lagrange_eval_many(xs, ys, modulus: int, points) -> np.ndarray:
    """Evaluate the unique interpolating polynomial at each point.

    Direct Lagrange form over a prime modulus: for each evaluation point x,
    sum over j of y_j * prod_{i != j} (x - x_i) / (x_j - x_i). Denominator
    inverses use Fermat's little theorem, so the modulus must be prime.
    """
    xs = np.asarray(xs, dtype=np.uint64)
    ys = np.asarray(ys, dtype=np.uint64)
    pts = np.asarray(points, dtype=np.uint64)
    m = int(modulus)
    k = xs.size
    mu = np.uint64(m)
    xs_r = xs % mu
    pts_r = pts % mu

    # denominators: d_j = prod_{i != j} (x_j - x_i) mod m, via the pairwise
    # difference matrix with ones on the diagonal
    diff = (xs_r[:, None] + mu - xs_r[None, :]) % mu
    diff[np.arange(k), np.arange(k)] = 1
    dens = np.ones(k, dtype=np.uint64)
    for col in range(k):
        dens = (dens * diff[:, col]) % mu
    inv_dens = np.array([pow(int(d), m - 2, m) for d in dens], dtype=np.uint64)

    # per point: prefix/suffix products of (x - x_i) give each
    # leave-one-out numerator in O(k) vector steps
    terms = (pts_r[None, :] + mu - xs_r[:, None]) % mu
    prefix = np.ones((k + 1, pts_r.size), dtype=np.uint64)
    suffix = np.ones((k + 1, pts_r.size), dtype=np.uint64)
    for j in range(k):
        prefix[j + 1] = (prefix[j] * terms[j]) % mu
    for j in range(k - 1, -1, -1):
        suffix[j] = (suffix[j + 1] * terms[j]) % mu

    acc = np.zeros(pts_r.size, dtype=np.uint64)
    for j in range(k):
        numer = (prefix[j] * suffix[j + 1]) % mu
        weight = (ys[j] % mu) * inv_dens[j] % mu
        acc = (acc + numer * weight) % mu
    return acc


_BF16_FINITE = None


def _bf16_finite_table():
    global _BF16_FINITE
    if _BF16_FINITE is None:
        patterns = np.arange(1 << 16, dtype=np.uint16)
        values = decode_array(patterns, Precision.BF16)
        finite = np.isfinite(values)
        _BF16_FINITE = (patterns[finite], values[finite])
    return _BF16_FINITE


def nearest_bf16_brute(x: float) -> int:
    """Nearest finite bf16 pattern by exhaustive search, ties to even.

    The sign of x picks the half of the table to search so signed zeros keep
    their sign, as IEEE rounding does. Tie-break takes the candidate with the
    even mantissa bit. Overflow past the finite range raises, matching
    round-to-nearest-even with no infinity in the codomain.
    """
    patterns, values = _bf16_finite_table()
    negative = math.copysign(1.0, x) < 0
    half = (patterns >> 15) == (1 if negative else 0)
    patterns, values = patterns[half], values[half]
    err = np.abs(values - float(x))
    best = err.min()
    max_finite = np.abs(values).max()
    if abs(x) > max_finite and abs(x) - max_finite >= 2.0 ** 119:
        raise OverflowError(f"{x} overflows bf16")
    candidates = patterns[err == best]
    if candidates.size == 1:
        return int(candidates[0])
    even = candidates[(candidates & 1) == 0]
    return int(even[0])


def fp32_pattern(x: float) -> int:
    """Reference fp32 pattern straight from the C float codec."""
    return struct.unpack("<I", struct.pack("<f", x))[0]


def sorted_top_k(patterns, precision: Precision, k: int):
    """Reference top-k: sort by (magnitude desc, flat index asc), take k."""
    sign_mask = 1 << precision.sign_shift
    mags = [int(p) & (sign_mask - 1) for p in patterns]
    order = sorted(range(len(mags)), key=lambda i: (-mags[i], i))
    idx = order[:k]
    return idx, [int(patterns[i]) for i in idx]


def pair_collision_ratio_set2() -> float:
    """Exact P(two distinct uniform 32-bit draws stay distinct mod 65536).

    For a fixed first draw there are 2**32 - 1 distinct partners, of which
    2**16 - 1 share its residue mod 65536.
    """
    return 1.0 - (65535 / (2**32 - 1))
