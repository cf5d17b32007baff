"""Proof generation, validation, and the on-disk commitment container.

A proof commits the top-k elements of one activation chunk: the flat indices
are reduced by an injective prime modulus and the raw value patterns become
the images of a polynomial congruence at those residues. The wire form is the
modulus followed by the coefficients, fixed-width little-endian:

    bf16 profile: u16 modulus + k * u16 coefficients  (258 bytes at k=128)
    fp32 profile: u32 modulus + k * u32 coefficients

Validation recomputes the top-k on the validator's side, evaluates the
committed polynomial at the validator's index residues, and compares the two
patterns field-wise: a sign-or-exponent difference counts toward the exponent
mismatch budget, otherwise the absolute mantissa difference is collected.
The verdict applies three thresholds (strict inequalities reject): exponent
mismatch count, mean mantissa difference, median mantissa difference. An
empty mantissa sample means every entry mismatched, which rejects.

A GenerationCommitment bundles one prefill proof with one proof per decode
chunk and serializes to the TPLC container documented in commitment_to_bytes.
"""

from __future__ import annotations

import enum
import json
import math
import statistics
import struct
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .floatbits import Precision
from .modpoly import ProofPoly, find_injective_prime_modulus, newton_interpolate
from .modpoly import horner_eval_many
from .sketch import ActivationChunk, top_k

__all__ = [
    "Profile",
    "CommitConfig",
    "Proof",
    "Thresholds",
    "ValidationReport",
    "GenerationCommitment",
    "GenerationValidation",
    "default_thresholds",
    "encode_proof",
    "decode_proof",
    "generate_proof",
    "validate_proof",
    "commit_generation",
    "validate_generation",
    "commitment_to_bytes",
    "commitment_from_bytes",
    "write_commitment",
    "read_commitment",
]

_MODULUS_FLOOR = 1 << 15


class Profile(enum.Enum):
    """Wire-format profile; fixes field width and the modulus search window."""

    BF16 = "bf16"
    FP32 = "fp32"

    @property
    def precision(self) -> Precision:
        return Precision.BF16 if self is Profile.BF16 else Precision.FP32

    @property
    def field_bytes(self) -> int:
        return 2 if self is Profile.BF16 else 4

    @property
    def field_dtype(self) -> np.dtype:
        return np.dtype("<u2" if self is Profile.BF16 else "<u4")

    @property
    def max_encodable(self) -> int:
        return (1 << (8 * self.field_bytes)) - 1

    @property
    def modulus_search_start(self) -> int:
        # largest prime below 2**16, or below 2**32
        return 65521 if self is Profile.BF16 else 4294967291

    @property
    def modulus_search_floor(self) -> int:
        return _MODULUS_FLOOR if self is Profile.BF16 else 1 << 31

    @property
    def wire_code(self) -> int:
        return 0x00 if self is Profile.BF16 else 0x01

    @classmethod
    def from_wire_code(cls, code: int) -> "Profile":
        try:
            return {0x00: cls.BF16, 0x01: cls.FP32}[code]
        except KeyError:
            raise ValueError(f"unknown profile byte {code:#04x}") from None

    @classmethod
    def for_precision(cls, precision: Precision) -> "Profile":
        return cls.BF16 if precision is Precision.BF16 else cls.FP32


@dataclass(frozen=True)
class CommitConfig:
    """Commitment parameters fixed for a whole generation."""

    k: int = 128
    chunk_tokens: int = 32
    precision: Precision = Precision.BF16
    profile: Profile = Profile.BF16

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.chunk_tokens < 1:
            raise ValueError(f"chunk_tokens must be positive, got {self.chunk_tokens}")
        if self.profile.precision is not self.precision:
            raise ValueError(
                f"profile {self.profile.value} does not match precision "
                f"{self.precision.value}"
            )

    @classmethod
    def for_precision(
        cls, precision: Precision, k: int = 128, chunk_tokens: int = 32
    ) -> "CommitConfig":
        return cls(k, chunk_tokens, precision, Profile.for_precision(precision))


@dataclass(frozen=True)
class Proof:
    """Raw proof bytes (modulus then coefficients, fixed-width LE)."""

    data: bytes

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class Thresholds:
    """Acceptance budgets; strict excess on any one of them rejects."""

    t_exp: int
    t_mean: float
    t_median: float

    def __post_init__(self) -> None:
        if self.t_exp < 0 or self.t_mean < 0 or self.t_median < 0:
            raise ValueError("thresholds must be non-negative")


def default_thresholds(precision: Precision) -> Thresholds:
    """Per-precision defaults for the validator side."""
    if precision is Precision.BF16:
        return Thresholds(t_exp=38, t_mean=10.0, t_median=8.0)
    return Thresholds(t_exp=8, t_mean=256.0, t_median=128.0)


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validating one chunk against one proof."""

    exp_mismatch: int
    mantissa_diffs: tuple[int, ...]
    mantissa_mean: float
    mantissa_median: float
    accepted: bool
    thresholds: Thresholds

    @classmethod
    def from_errors(
        cls,
        exp_mismatch: int,
        mantissa_diffs: Sequence[int],
        thresholds: Thresholds,
    ) -> "ValidationReport":
        diffs = tuple(int(d) for d in mantissa_diffs)
        if exp_mismatch < 0 or any(d < 0 for d in diffs):
            raise ValueError("error counts must be non-negative")
        if diffs:
            mean = sum(diffs) / len(diffs)
            median = float(statistics.median(diffs))
        else:
            mean = math.inf
            median = math.inf
        accepted = not (
            exp_mismatch > thresholds.t_exp
            or mean > thresholds.t_mean
            or median > thresholds.t_median
        )
        return cls(exp_mismatch, diffs, mean, median, accepted, thresholds)

    @property
    def k(self) -> int:
        return self.exp_mismatch + len(self.mantissa_diffs)

    def to_dict(self) -> dict:
        return {
            "exp_mismatch": self.exp_mismatch,
            "mantissa_matched": len(self.mantissa_diffs),
            "mantissa_mean": _json_float(self.mantissa_mean),
            "mantissa_median": _json_float(self.mantissa_median),
            "accepted": self.accepted,
        }


def _json_float(x: float):
    return x if math.isfinite(x) else "inf"


def encode_proof(
    modulus: int, coefficients: Sequence[int], profile: Profile
) -> Proof:
    """Serialize a congruence to wire form. Everything must fit the profile."""
    if not _MODULUS_FLOOR < modulus <= profile.max_encodable:
        raise ValueError(
            f"modulus {modulus} outside ({_MODULUS_FLOOR}, {profile.max_encodable}] "
            f"for the {profile.value} profile"
        )
    if len(coefficients) < 1:
        raise ValueError("need at least one coefficient")
    arr = np.empty(1 + len(coefficients), dtype=profile.field_dtype)
    arr[0] = modulus
    for i, c in enumerate(coefficients):
        if not 0 <= c < modulus:
            raise ValueError(f"coefficient {c} not reduced modulo {modulus}")
        arr[1 + i] = c
    return Proof(arr.tobytes())


def decode_proof(proof: Proof | bytes, profile: Profile) -> tuple[int, int, tuple[int, ...]]:
    """Parse wire form back to (k, modulus, coefficients), validating ranges."""
    data = proof.data if isinstance(proof, Proof) else bytes(proof)
    w = profile.field_bytes
    if len(data) < 2 * w or len(data) % w != 0:
        raise ValueError(
            f"malformed proof: {len(data)} bytes is not a positive multiple of "
            f"{w} past the modulus field"
        )
    arr = np.frombuffer(data, dtype=profile.field_dtype)
    modulus = int(arr[0])
    if modulus <= _MODULUS_FLOOR:
        raise ValueError(f"modulus {modulus} not above {_MODULUS_FLOOR}")
    coeffs = arr[1:]
    if (coeffs >= modulus).any():
        bad = int(coeffs[coeffs >= modulus][0])
        raise ValueError(f"coefficient {bad} not reduced modulo {modulus}")
    return len(coeffs), modulus, tuple(int(c) for c in coeffs)


def generate_proof(chunk: ActivationChunk, config: CommitConfig) -> Proof:
    """Commit the chunk's top-k elements as a polynomial congruence."""
    if chunk.precision is not config.precision:
        raise ValueError(
            f"chunk precision {chunk.precision.value} does not match config "
            f"{config.precision.value}"
        )
    sketch = top_k(chunk, config.k)
    modulus = find_injective_prime_modulus(
        sketch.indices,
        start=config.profile.modulus_search_start,
        floor=config.profile.modulus_search_floor,
    )
    poly = newton_interpolate(sketch.indices, sketch.patterns, modulus)
    return encode_proof(modulus, poly.coefficients, config.profile)


def validate_proof(
    chunk: ActivationChunk,
    proof: Proof | bytes,
    thresholds: Thresholds,
    committed_precision: Precision,
) -> ValidationReport:
    """Check the validator's chunk against a committed proof.

    The validator recomputes its own top-k; each of its indices is evaluated
    through the committed polynomial and the resulting pattern is compared in
    the validator's precision domain (committed bf16 pads up with zero bits,
    committed fp32 truncates its mantissa down).
    """
    committed_profile = Profile.for_precision(committed_precision)
    k, modulus, coefficients = decode_proof(proof, committed_profile)
    if k > chunk.size:
        raise ValueError(f"proof k={k} exceeds chunk size {chunk.size}")
    sketch = top_k(chunk, k)
    poly = ProofPoly(modulus, coefficients)
    committed = horner_eval_many(poly, sketch.indices.astype(np.uint64) % np.uint64(modulus))

    cp = committed_precision
    vp = chunk.precision
    c_sign = (committed >> np.uint64(cp.sign_shift)) & np.uint64(1)
    c_exp = (committed >> np.uint64(cp.mantissa_bits)) & np.uint64(0xFF)
    c_man = (committed & np.uint64(cp.mantissa_mask)).astype(np.int64)
    v = sketch.patterns.astype(np.uint64)
    v_sign = (v >> np.uint64(vp.sign_shift)) & np.uint64(1)
    v_exp = (v >> np.uint64(vp.mantissa_bits)) & np.uint64(0xFF)
    v_man = (v & np.uint64(vp.mantissa_mask)).astype(np.int64)
    if cp is Precision.BF16 and vp is Precision.FP32:
        c_man = c_man << 16
    elif cp is Precision.FP32 and vp is Precision.BF16:
        c_man = c_man >> 16

    matched = (c_sign == v_sign) & (c_exp == v_exp)
    diffs = np.abs(c_man[matched] - v_man[matched])
    return ValidationReport.from_errors(
        int(k - matched.sum()), [int(d) for d in diffs], thresholds
    )


@dataclass(frozen=True)
class GenerationCommitment:
    """One prefill proof plus per-chunk decode proofs and free-form metadata."""

    config: CommitConfig
    prefill_proof: Proof
    decode_proofs: tuple[Proof, ...]
    metadata: Mapping[str, str] = field(default_factory=dict)

    @property
    def proof_count(self) -> int:
        return 1 + len(self.decode_proofs)

    def total_bytes(self) -> int:
        return len(self.prefill_proof) + sum(len(p) for p in self.decode_proofs)


@dataclass(frozen=True)
class GenerationValidation:
    """Per-chunk reports (prefill first) and their conjunction."""

    reports: tuple[ValidationReport, ...]
    accepted: bool


def commit_generation(
    prefill_chunk: ActivationChunk,
    decode_chunks: Sequence[ActivationChunk],
    config: CommitConfig,
    metadata: Mapping[str, str] | None = None,
) -> GenerationCommitment:
    """Commit the prefill chunk and every decode chunk under one config.

    Decode chunks must span chunk_tokens tokens each; only the final one may
    be shorter. A final chunk with fewer than k elements is committed with k
    clamped to its element count, recorded under metadata key final_chunk_k.
    """
    meta = {str(k_): str(v) for k_, v in (metadata or {}).items()}
    try:
        prefill_proof = generate_proof(prefill_chunk, config)
    except ValueError as e:
        raise ValueError(f"prefill chunk: {e}") from e
    proofs = []
    last = len(decode_chunks) - 1
    for i, chunk in enumerate(decode_chunks):
        try:
            if i != last and chunk.token_count != config.chunk_tokens:
                raise ValueError(
                    f"has {chunk.token_count} tokens, expected {config.chunk_tokens}"
                )
            if chunk.token_count > config.chunk_tokens:
                raise ValueError(
                    f"has {chunk.token_count} tokens, more than chunk_tokens="
                    f"{config.chunk_tokens}"
                )
            chunk_config = config
            if i == last and chunk.size < config.k:
                chunk_config = replace(config, k=chunk.size)
                meta["final_chunk_k"] = str(chunk.size)
            proofs.append(generate_proof(chunk, chunk_config))
        except ValueError as e:
            raise ValueError(f"decode chunk {i}: {e}") from e
    return GenerationCommitment(config, prefill_proof, tuple(proofs), meta)


def validate_generation(
    prefill_chunk: ActivationChunk,
    decode_chunks: Sequence[ActivationChunk],
    commitment: GenerationCommitment,
    thresholds: Thresholds,
) -> GenerationValidation:
    """Validate every chunk against its proof; overall verdict is the AND."""
    if len(decode_chunks) != len(commitment.decode_proofs):
        raise ValueError(
            f"{len(decode_chunks)} decode chunks but "
            f"{len(commitment.decode_proofs)} decode proofs"
        )
    committed = commitment.config.precision
    reports = [validate_proof(prefill_chunk, commitment.prefill_proof, thresholds, committed)]
    for chunk, proof in zip(decode_chunks, commitment.decode_proofs):
        reports.append(validate_proof(chunk, proof, thresholds, committed))
    return GenerationValidation(tuple(reports), all(r.accepted for r in reports))


# ---------------------------------------------------------------------------
# TPLC container
# ---------------------------------------------------------------------------

_CONTAINER_MAGIC = b"TPLC"
_CONTAINER_VERSION = 1
# magic, version byte, profile byte, k u16, chunk_tokens u16, proof count u32
_HEADER = struct.Struct("<4sBBHHI")


def commitment_to_bytes(commitment: GenerationCommitment) -> bytes:
    """Serialize to the TPLC container.

    Layout: header (magic "TPLC", version 0x01, profile byte, k, chunk_tokens,
    total proof count, all little-endian), then the prefill proof and decode
    proofs back-to-back, then a u32-length-prefixed UTF-8 metadata block
    holding a sorted-key JSON string map. Same commitment, same bytes.
    """
    cfg = commitment.config
    head = _HEADER.pack(
        _CONTAINER_MAGIC,
        _CONTAINER_VERSION,
        cfg.profile.wire_code,
        cfg.k,
        cfg.chunk_tokens,
        commitment.proof_count,
    )
    body = commitment.prefill_proof.data + b"".join(
        p.data for p in commitment.decode_proofs
    )
    meta = json.dumps(
        dict(sorted(commitment.metadata.items())),
        separators=(",", ":"),
        ensure_ascii=False,
        sort_keys=True,
    ).encode("utf-8")
    return head + body + struct.pack("<I", len(meta)) + meta


def _metadata_at(raw: bytes, pos: int) -> bytes | None:
    # the metadata block is valid at pos iff its length prefix consumes the
    # file exactly
    if pos < 0 or pos + 4 > len(raw):
        return None
    (mlen,) = struct.unpack_from("<I", raw, pos)
    if pos + 4 + mlen != len(raw):
        return None
    return raw[pos + 4 : pos + 4 + mlen]


def commitment_from_bytes(raw: bytes) -> GenerationCommitment:
    """Parse a TPLC container; ValueError on any structural problem."""
    if len(raw) < _HEADER.size:
        raise ValueError("container shorter than its header")
    magic, version, profile_code, k, chunk_tokens, count = _HEADER.unpack_from(raw, 0)
    if magic != _CONTAINER_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != _CONTAINER_VERSION:
        raise ValueError(f"unsupported container version {version}")
    profile = Profile.from_wire_code(profile_code)
    if count < 1:
        raise ValueError("container must hold at least the prefill proof")
    config = CommitConfig(k, chunk_tokens, profile.precision, profile)

    w = profile.field_bytes
    full = w * (1 + k)
    off = _HEADER.size
    sizes = None
    meta_bytes = _metadata_at(raw, off + count * full)
    if meta_bytes is not None:
        sizes = [full] * count
    else:
        # final decode proof may be shorter (k clamped to a short last chunk);
        # scan its size downward until the metadata block lines up
        base = off + (count - 1) * full
        for short in range(full - w, w, -w):
            meta_bytes = _metadata_at(raw, base + short)
            if meta_bytes is not None:
                sizes = [full] * (count - 1) + [short]
                break
    if sizes is None:
        raise ValueError("cannot locate metadata block; container is truncated or corrupt")

    proofs = []
    for size in sizes:
        proofs.append(Proof(raw[off : off + size]))
        off += size
    for p in proofs:
        decode_proof(p, profile)  # validates field ranges

    try:
        meta = json.loads(meta_bytes.decode("utf-8")) if meta_bytes else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"bad metadata block: {e}") from e
    if not isinstance(meta, dict) or not all(
        isinstance(a, str) and isinstance(b, str) for a, b in meta.items()
    ):
        raise ValueError("metadata must be a string map")

    return GenerationCommitment(config, proofs[0], tuple(proofs[1:]), meta)


def write_commitment(commitment: GenerationCommitment, path) -> None:
    with open(path, "wb") as f:
        f.write(commitment_to_bytes(commitment))


def read_commitment(path) -> GenerationCommitment:
    with open(path, "rb") as f:
        return commitment_from_bytes(f.read())
