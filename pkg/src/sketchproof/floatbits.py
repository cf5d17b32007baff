"""Bit-level codecs for bf16 and fp32 patterns.

A pattern is the raw unsigned integer layout of a float:
sign | biased exponent (8 bits) | mantissa (7 bits for bf16, 23 for fp32).
bf16 is the upper half of fp32, so cross-precision alignment is a plain
16-bit shift of the mantissa field. NaN and infinity patterns decompose and
reassemble fine here; rejecting them is the job of the sketch layer.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Precision",
    "BitFields",
    "extract_bits",
    "assemble_bits",
    "pad_bf16_to_fp32",
    "truncate_fp32_to_bf16",
    "quantize_real",
    "quantize_array",
    "decode_array",
    "nonfinite_mask",
]

EXPONENT_BITS = 8
EXPONENT_MAX = (1 << EXPONENT_BITS) - 1


class Precision(enum.Enum):
    """Supported activation precisions."""

    BF16 = "bf16"
    FP32 = "fp32"

    @property
    def bits(self) -> int:
        return 16 if self is Precision.BF16 else 32

    @property
    def mantissa_bits(self) -> int:
        return 7 if self is Precision.BF16 else 23

    @property
    def mantissa_mask(self) -> int:
        return (1 << self.mantissa_bits) - 1

    @property
    def sign_shift(self) -> int:
        return self.bits - 1

    @property
    def pattern_max(self) -> int:
        return (1 << self.bits) - 1

    @property
    def pattern_dtype(self) -> np.dtype:
        return np.dtype(np.uint16 if self is Precision.BF16 else np.uint32)

    @property
    def nonfinite_bits(self) -> int:
        # all-ones exponent marks inf/NaN regardless of sign or mantissa
        return EXPONENT_MAX << self.mantissa_bits


@dataclass(frozen=True)
class BitFields:
    """Decomposed float pattern: sign bit, biased exponent, mantissa."""

    sign: int
    exponent: int
    mantissa: int
    precision: Precision

    def __post_init__(self) -> None:
        if self.sign not in (0, 1):
            raise ValueError(f"sign must be 0 or 1, got {self.sign}")
        if not 0 <= self.exponent <= EXPONENT_MAX:
            raise ValueError(f"exponent {self.exponent} out of range [0, {EXPONENT_MAX}]")
        if not 0 <= self.mantissa <= self.precision.mantissa_mask:
            raise ValueError(
                f"mantissa {self.mantissa} out of range for {self.precision.value}"
            )


def extract_bits(pattern: int, precision: Precision) -> BitFields:
    """Split a raw pattern into sign, biased exponent, and mantissa fields."""
    if not 0 <= pattern <= precision.pattern_max:
        raise ValueError(f"pattern {pattern:#x} out of range for {precision.value}")
    return BitFields(
        sign=(pattern >> precision.sign_shift) & 1,
        exponent=(pattern >> precision.mantissa_bits) & EXPONENT_MAX,
        mantissa=pattern & precision.mantissa_mask,
        precision=precision,
    )


def assemble_bits(fields: BitFields) -> int:
    """Inverse of extract_bits. Field ranges are checked on construction."""
    p = fields.precision
    return (fields.sign << p.sign_shift) | (fields.exponent << p.mantissa_bits) | fields.mantissa


def pad_bf16_to_fp32(fields: BitFields) -> BitFields:
    """Widen a bf16 decomposition to fp32 by appending 16 zero mantissa bits.

    Exact: the represented value does not change.
    """
    if fields.precision is not Precision.BF16:
        raise ValueError("pad_bf16_to_fp32 expects bf16 fields")
    return BitFields(fields.sign, fields.exponent, fields.mantissa << 16, Precision.FP32)


def truncate_fp32_to_bf16(fields: BitFields) -> BitFields:
    """Narrow an fp32 decomposition to bf16 by dropping the low 16 mantissa bits.

    Truncation, not rounding: the comparison side that narrows must match the
    committed side bit-for-bit when the wide value was produced by padding.
    """
    if fields.precision is not Precision.FP32:
        raise ValueError("truncate_fp32_to_bf16 expects fp32 fields")
    return BitFields(fields.sign, fields.exponent, fields.mantissa >> 16, Precision.BF16)


def _decode_pattern(pattern: int, precision: Precision) -> float:
    if precision is Precision.BF16:
        pattern <<= 16
    return float(np.uint32(pattern).view(np.float32))


def quantize_real(x: float, precision: Precision) -> int:
    """Pattern of the representable value nearest to x, ties to even mantissa.

    Raises ValueError for non-finite input and OverflowError when the nearest
    representable value would be infinite.
    """
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    if precision is Precision.FP32:
        bits = struct.unpack("<I", struct.pack("<f", x))[0]
        if bits & precision.nonfinite_bits == precision.nonfinite_bits:
            raise OverflowError(f"{x!r} overflows fp32")
        return bits

    sign = 1 if math.copysign(1.0, x) < 0 else 0
    mag = abs(x)
    # Truncate the fp32 magnitude to get the lower bf16 neighbour, then pick
    # the nearer of the two enclosing patterns in exact float64 arithmetic.
    # Going through fp32 twice would double-round near tie midpoints.
    mag32 = struct.unpack("<I", struct.pack("<f", mag))[0]
    fp32_inf = Precision.FP32.nonfinite_bits
    if mag32 & fp32_inf == fp32_inf:
        mag32 = 0x7F7FFFFF  # fp32 overflowed already; start from the largest finite
    lo = mag32 >> 16
    lo_val = _decode_pattern(lo, Precision.BF16)
    if lo_val > mag and lo > 0:
        lo -= 1
        lo_val = _decode_pattern(lo, Precision.BF16)
    hi = lo + 1
    if hi & precision.nonfinite_bits == precision.nonfinite_bits:
        # Upper neighbour is infinity; overflow follows the usual midpoint rule.
        max_val = _decode_pattern(0x7F7F, Precision.BF16)
        if mag >= max_val + 2.0 ** (127 - 8):  # half ULP beyond the largest finite
            raise OverflowError(f"{x!r} overflows bf16")
        return (sign << 15) | 0x7F7F
    hi_val = _decode_pattern(hi, Precision.BF16)
    if mag - lo_val < hi_val - mag:
        pick = lo
    elif mag - lo_val > hi_val - mag:
        pick = hi
    else:
        pick = lo if lo % 2 == 0 else hi
    return (sign << 15) | pick


def quantize_array(values: np.ndarray, precision: Precision) -> np.ndarray:
    """Vectorized round-to-nearest-even quantization of real values to patterns.

    Rounds through fp32; differs from quantize_real only when a float64 input
    lands on a bf16 tie midpoint after the fp32 rounding step. Raises on
    non-finite inputs and on overflow.
    """
    arr = np.asarray(values, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError("cannot quantize non-finite values")
    with np.errstate(over="ignore"):
        f32 = arr.astype(np.float32)
    bits = f32.view(np.uint32)
    if precision is Precision.FP32:
        out = bits.copy()
    else:
        # round-half-to-even on the 16-bit boundary
        out = ((bits + 0x7FFF + ((bits >> 16) & 1)) >> 16).astype(np.uint16)
    if (out & precision.nonfinite_bits == precision.nonfinite_bits).any():
        raise OverflowError(f"input overflows {precision.value}")
    return out


def decode_array(patterns: np.ndarray, precision: Precision) -> np.ndarray:
    """Decode raw patterns to their float64 values (exact for finite patterns)."""
    arr = np.ascontiguousarray(patterns, dtype=precision.pattern_dtype)
    if precision is Precision.BF16:
        arr = arr.astype(np.uint32) << 16
    with np.errstate(invalid="ignore"):
        return arr.view(np.float32).astype(np.float64)


def nonfinite_mask(patterns: np.ndarray, precision: Precision) -> np.ndarray:
    """Boolean mask of patterns whose exponent field is all ones (inf/NaN)."""
    arr = np.asarray(patterns)
    bits = precision.nonfinite_bits
    return (arr & bits) == bits
