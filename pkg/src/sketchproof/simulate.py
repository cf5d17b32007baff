"""Synthetic activation generator, perturbation models, and experiments.

Real inference traces are not required to exercise the commit/validate
pipeline. synth_activations draws Gaussian activations with a few
high-magnitude outlier columns, mimicking the heavy channels that make the
top-k sketch stable across implementations. perturb applies one of several
disturbance models to a chunk, from benign last-bit jitter up to a full
resample standing in for a swapped model. run_scenario ties the two together
and validates each perturbed chunk against a proof of the original, yielding
accept/reject counts and error statistics per trial.

All randomness flows through numpy Generators seeded from explicit integers,
so every experiment is reproducible from its (scenario, seed, trials) triple.
"""

from __future__ import annotations

import enum
import math
import statistics
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .floatbits import Precision, decode_array, quantize_array
from .modpoly import MODULUS_FLOOR
from .proofs import (
    CommitConfig,
    Thresholds,
    default_thresholds,
    generate_proof,
    validate_proof,
)
from .sketch import ActivationChunk, TopKSketch, index_set_mismatch, top_k

__all__ = [
    "PerturbationKind",
    "PerturbationSpec",
    "TrialSummary",
    "ExperimentResult",
    "ChunkMantissaError",
    "HISTOGRAM_BUCKETS",
    "default_spec",
    "synth_activations",
    "perturb",
    "run_scenario",
    "exponent_error_histogram",
    "format_histogram_table",
    "mantissa_error_by_chunk",
    "modulus_distribution_mc",
]


class PerturbationKind(enum.Enum):
    """Disturbance models, ordered roughly by how much they change."""

    NONE = "none"
    BENIGN_JITTER = "benign-jitter"
    EXPONENT_FLIP = "exponent-flip"
    CANCELLATION_ZEROS = "cancellation-zeros"
    MODEL_SWAP = "model-swap"
    PROMPT_PREFIX_SWAP = "prompt-prefix-swap"
    PRECISION_CAST = "precision-cast"


_SPEC_DEFAULTS: dict[PerturbationKind, dict[str, float]] = {
    PerturbationKind.NONE: {},
    PerturbationKind.BENIGN_JITTER: {"delta": 16.0, "prob": 0.6},
    PerturbationKind.EXPONENT_FLIP: {"prob": 0.02},
    PerturbationKind.CANCELLATION_ZEROS: {"fraction": 0.01, "cutoff": 10.0},
    PerturbationKind.MODEL_SWAP: {},
    PerturbationKind.PROMPT_PREFIX_SWAP: {},
    PerturbationKind.PRECISION_CAST: {},
}

# optional keys allowed on top of the defaults
_SPEC_OPTIONAL: dict[PerturbationKind, frozenset[str]] = {
    kind: frozenset() for kind in PerturbationKind
}
_SPEC_OPTIONAL[PerturbationKind.PROMPT_PREFIX_SWAP] = frozenset({"prefix_tokens"})

_UNIT_INTERVAL_KEYS = {"prob", "fraction"}


@dataclass(frozen=True)
class PerturbationSpec:
    """A perturbation kind plus its numeric parameters.

    Unknown parameter names are rejected, probabilities and fractions must
    lie in [0, 1], and every other parameter must be non-negative.
    """

    kind: PerturbationKind
    parameters: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        allowed = set(_SPEC_DEFAULTS[self.kind]) | set(_SPEC_OPTIONAL[self.kind])
        params = {str(k): float(v) for k, v in dict(self.parameters).items()}
        for name, value in params.items():
            if name not in allowed:
                raise ValueError(
                    f"parameter {name!r} not valid for {self.kind.value}"
                )
            if name in _UNIT_INTERVAL_KEYS:
                if not 0.0 <= value <= 1.0:
                    raise ValueError(f"{name} must be in [0, 1], got {value}")
            elif value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
        object.__setattr__(self, "parameters", params)

    def get(self, name: str, fallback: float | None = None) -> float:
        if name in self.parameters:
            return self.parameters[name]
        defaults = _SPEC_DEFAULTS[self.kind]
        if name in defaults:
            return defaults[name]
        if fallback is None:
            raise KeyError(name)
        return float(fallback)


def default_spec(kind: PerturbationKind) -> PerturbationSpec:
    return PerturbationSpec(kind, dict(_SPEC_DEFAULTS[kind]))


def _derive_seed(*parts: int) -> int:
    """Stable child seed from integer parts; avoids stream collisions."""
    for p in parts:
        if p < 0:
            raise ValueError(f"seed parts must be non-negative, got {p}")
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def synth_activations(
    seed: int,
    token_count: int,
    hidden_dim: int,
    precision: Precision,
    outlier_fraction: float = 0.01,
    outlier_scale: float = 50.0,
) -> ActivationChunk:
    """Gaussian activations with a sprinkle of heavy outlier columns.

    The outlier columns are drawn before the bulk values, so two calls with
    the same seed but different precisions quantize the same real matrix.
    That property is what makes cross-precision experiments meaningful.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    if not 0.0 <= outlier_fraction <= 1.0:
        raise ValueError(f"outlier_fraction must be in [0, 1], got {outlier_fraction}")
    if outlier_scale < 1.0:
        raise ValueError(f"outlier_scale must be at least 1, got {outlier_scale}")
    rng = np.random.default_rng(seed)
    n_outliers = int(round(hidden_dim * outlier_fraction))
    cols = rng.choice(hidden_dim, size=n_outliers, replace=False)
    reals = rng.standard_normal((token_count, hidden_dim))
    reals[:, cols] *= outlier_scale
    patterns = quantize_array(reals.ravel(), precision)
    return ActivationChunk(token_count, hidden_dim, precision, patterns)


def _jitter_patterns(
    values: np.ndarray, precision: Precision, rng: np.random.Generator,
    delta: int, prob: float,
) -> np.ndarray:
    # mantissa-only noise; sign and exponent bits never move, so the result
    # stays finite. Draws are full-size so the stream does not depend on
    # which elements get picked.
    mmask = precision.mantissa_mask
    pick = rng.random(values.size) < prob
    offsets = rng.integers(-delta, delta + 1, size=values.size)
    mantissa = (values & mmask).astype(np.int64)
    mantissa += np.where(pick, offsets, 0)
    np.clip(mantissa, 0, mmask, out=mantissa)
    high = values & (precision.pattern_max ^ mmask)
    return high | mantissa.astype(precision.pattern_dtype)


def _flip_exponents(
    values: np.ndarray, precision: Precision, rng: np.random.Generator, prob: float
) -> np.ndarray:
    shift = precision.mantissa_bits
    exponent = ((values >> shift) & 0xFF).astype(np.int64)
    pick = rng.random(values.size) < prob
    step = rng.integers(0, 2, size=values.size) * 2 - 1
    moved = exponent + step
    # stay inside the normal range on both ends; zeros and the would-be
    # inf/nan encodings are left alone
    ok = pick & (exponent >= 1) & (exponent <= 254) & (moved >= 1) & (moved <= 254)
    exponent = np.where(ok, moved, exponent)
    rest = values & (precision.pattern_max ^ (0xFF << shift))
    return rest | (exponent.astype(precision.pattern_dtype) << shift)


def _cancel_small(
    values: np.ndarray, precision: Precision, rng: np.random.Generator,
    fraction: float, cutoff: float,
) -> np.ndarray:
    reals = decode_array(values, precision)
    eligible = np.abs(reals) < cutoff
    pick = rng.random(values.size) < fraction
    out = values.copy()
    out[eligible & pick] = 0
    return out


def perturb(chunk: ActivationChunk, spec: PerturbationSpec, seed: int = 0) -> ActivationChunk:
    """Apply one disturbance model; the input chunk is never modified."""
    kind = spec.kind
    if kind is PerturbationKind.NONE:
        return chunk
    rng = np.random.default_rng(seed)
    t, h, precision = chunk.token_count, chunk.hidden_dim, chunk.precision

    if kind is PerturbationKind.BENIGN_JITTER:
        values = _jitter_patterns(
            chunk.values, precision, rng, int(spec.get("delta")), spec.get("prob")
        )
        return ActivationChunk(t, h, precision, values)

    if kind is PerturbationKind.EXPONENT_FLIP:
        values = _flip_exponents(chunk.values, precision, rng, spec.get("prob"))
        return ActivationChunk(t, h, precision, values)

    if kind is PerturbationKind.CANCELLATION_ZEROS:
        values = _cancel_small(
            chunk.values, precision, rng, spec.get("fraction"), spec.get("cutoff")
        )
        return ActivationChunk(t, h, precision, values)

    if kind is PerturbationKind.MODEL_SWAP:
        return synth_activations(_derive_seed(seed, 11), t, h, precision)

    if kind is PerturbationKind.PROMPT_PREFIX_SWAP:
        prefix_tokens = int(spec.get("prefix_tokens", t // 2))
        if prefix_tokens > t:
            raise ValueError(
                f"prefix_tokens={prefix_tokens} exceeds token count {t}"
            )
        rows = chunk.values.reshape(t, h).copy()
        if prefix_tokens:
            fresh = synth_activations(_derive_seed(seed, 13), prefix_tokens, h, precision)
            rows[:prefix_tokens] = fresh.values.reshape(prefix_tokens, h)
        # surviving suffix tokens still carry ordinary benign noise
        jitter = _SPEC_DEFAULTS[PerturbationKind.BENIGN_JITTER]
        suffix = rows[prefix_tokens:].ravel()
        rows[prefix_tokens:] = _jitter_patterns(
            suffix, precision, rng, int(jitter["delta"]), jitter["prob"]
        ).reshape(t - prefix_tokens, h)
        return ActivationChunk(t, h, precision, rows.ravel())

    if kind is PerturbationKind.PRECISION_CAST:
        if precision is not Precision.FP32:
            raise ValueError("precision cast starts from fp32 values")
        narrowed = quantize_array(decode_array(chunk.values, precision), Precision.BF16)
        widened = quantize_array(decode_array(narrowed, Precision.BF16), Precision.FP32)
        return ActivationChunk(t, h, precision, widened)

    raise ValueError(f"unhandled perturbation kind {kind!r}")


# ---------------------------------------------------------------------------
# scenario runner
# ---------------------------------------------------------------------------

HISTOGRAM_BUCKETS = (
    "0", "-1", "+1", "-2", "+2", "-3..-10", "+3..+10", "+-10..+-100", ">=+-100",
)


@dataclass(frozen=True)
class TrialSummary:
    """Validation outcome of one trial."""

    trial: int
    accepted: bool
    exp_mismatch: int
    mantissa_mean: float
    mantissa_median: float
    index_mismatch_ratio: float


@dataclass(frozen=True)
class ExperimentResult:
    """All trials of one scenario plus the aggregated exponent histogram."""

    scenario: str
    trials: int
    committed_precision: Precision
    validated_precision: Precision
    accepted_count: int
    summaries: tuple[TrialSummary, ...]
    exponent_histogram: Mapping[str, int]

    @property
    def accept_rate(self) -> float:
        return self.accepted_count / self.trials

    @property
    def exp_mismatch_min(self) -> int:
        return min(s.exp_mismatch for s in self.summaries)

    @property
    def exp_mismatch_max(self) -> int:
        return max(s.exp_mismatch for s in self.summaries)

    @property
    def mantissa_mean_max(self) -> float:
        return max(s.mantissa_mean for s in self.summaries)

    @property
    def mantissa_median_max(self) -> float:
        return max(s.mantissa_median for s in self.summaries)

    @property
    def index_mismatch_max(self) -> float:
        return max(s.index_mismatch_ratio for s in self.summaries)

    @property
    def index_mismatch_median(self) -> float:
        return float(statistics.median(s.index_mismatch_ratio for s in self.summaries))

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "scenario": self.scenario,
            "trials": self.trials,
            "committed_precision": self.committed_precision.value,
            "validated_precision": self.validated_precision.value,
            "accepted": self.accepted_count,
            "rejected": self.trials - self.accepted_count,
            "exp_mismatch": {
                "min": self.exp_mismatch_min,
                "max": self.exp_mismatch_max,
            },
            "mantissa_mean_max": _json_float(self.mantissa_mean_max),
            "mantissa_median_max": _json_float(self.mantissa_median_max),
            "index_mismatch_ratio": {
                "max": self.index_mismatch_max,
                "median": self.index_mismatch_median,
            },
            "exponent_histogram": dict(self.exponent_histogram),
        }


def _json_float(x: float):
    return x if math.isfinite(x) else "inf"


def _exponent_fields(sketch: TopKSketch) -> np.ndarray:
    shift = sketch.precision.mantissa_bits
    return ((sketch.patterns.astype(np.uint64) >> np.uint64(shift)) & np.uint64(0xFF)).astype(
        np.int64
    )


def _bucket_counts(diffs: np.ndarray) -> dict[str, int]:
    mag = np.abs(diffs)
    counts = {
        "0": int((diffs == 0).sum()),
        "-1": int((diffs == -1).sum()),
        "+1": int((diffs == 1).sum()),
        "-2": int((diffs == -2).sum()),
        "+2": int((diffs == 2).sum()),
        "-3..-10": int(((diffs <= -3) & (diffs >= -10)).sum()),
        "+3..+10": int(((diffs >= 3) & (diffs <= 10)).sum()),
        "+-10..+-100": int(((mag > 10) & (mag < 100)).sum()),
        ">=+-100": int((mag >= 100).sum()),
    }
    return counts


def exponent_error_histogram(
    committed: TopKSketch, recomputed: TopKSketch, mode: str = "positional"
) -> dict[str, int]:
    """Bucketed differences of the 8-bit exponent fields of two sketches.

    positional mode compares rank-by-rank and needs equal k; intersection
    mode compares only at flat indices both sketches selected. Differences
    are recomputed minus committed.
    """
    if mode == "positional":
        if committed.k != recomputed.k:
            raise ValueError(f"sketch sizes differ: {committed.k} vs {recomputed.k}")
        diffs = _exponent_fields(recomputed) - _exponent_fields(committed)
    elif mode == "intersection":
        _, ia, ib = np.intersect1d(
            committed.indices, recomputed.indices, assume_unique=True, return_indices=True
        )
        diffs = _exponent_fields(recomputed)[ib] - _exponent_fields(committed)[ia]
    else:
        raise ValueError(f"mode must be positional or intersection, got {mode!r}")
    return _bucket_counts(diffs)


def format_histogram_table(histogram: Mapping[str, int]) -> str:
    """Readable two-column rendering with a trailing total row."""
    total = sum(histogram.values())
    label_w = max(len("bucket"), max((len(b) for b in histogram), default=0))
    count_w = max(len("count"), len(str(total)))
    lines = [f"{'bucket':<{label_w}}  {'count':>{count_w}}  share"]
    for bucket in HISTOGRAM_BUCKETS:
        if bucket not in histogram:
            continue
        count = histogram[bucket]
        share = count / total if total else 0.0
        lines.append(f"{bucket:<{label_w}}  {count:>{count_w}}  {share:7.2%}")
    for bucket, count in histogram.items():
        if bucket in HISTOGRAM_BUCKETS:
            continue
        share = count / total if total else 0.0
        lines.append(f"{bucket:<{label_w}}  {count:>{count_w}}  {share:7.2%}")
    full = 1.0 if total else 0.0
    lines.append(f"{'total':<{label_w}}  {total:>{count_w}}  {full:7.2%}")
    return "\n".join(lines)


def run_scenario(
    scenario: PerturbationKind | PerturbationSpec | str,
    trials: int,
    config: CommitConfig,
    thresholds: Thresholds | None = None,
    hidden_dim: int = 4096,
    seed: int = 0,
    spec: PerturbationSpec | None = None,
) -> ExperimentResult:
    """Commit fresh synthetic chunks, disturb them, validate, and tally.

    Each trial synthesizes one chunk of config.chunk_tokens tokens from a
    seed derived from (seed, trial), commits it under config, then validates
    the perturbed chunk against the proof. For the precision-cast scenario
    the observed chunk is the same real matrix quantized at the opposite
    precision instead of a perturb call, and the default thresholds follow
    the observing side. scenario may be a kind, its name, or a full spec.
    """
    if isinstance(scenario, PerturbationSpec):
        if spec is not None and spec != scenario:
            raise ValueError("got two different specs")
        spec = scenario
        kind = spec.kind
    else:
        kind = PerturbationKind(scenario) if isinstance(scenario, str) else scenario
    if spec is None:
        spec = default_spec(kind)
    elif spec.kind is not kind:
        raise ValueError(f"spec kind {spec.kind.value} does not match {kind.value}")
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")

    histogram = {bucket: 0 for bucket in HISTOGRAM_BUCKETS}
    summaries = []
    accepted = 0
    observed_precision = config.precision
    if kind is PerturbationKind.PRECISION_CAST:
        observed_precision = (
            Precision.FP32 if config.precision is Precision.BF16 else Precision.BF16
        )

    for trial in range(trials):
        trial_seed = _derive_seed(seed, trial)
        chunk = synth_activations(
            trial_seed, config.chunk_tokens, hidden_dim, config.precision
        )
        if kind is PerturbationKind.PRECISION_CAST:
            observed = synth_activations(
                trial_seed, config.chunk_tokens, hidden_dim, observed_precision
            )
        else:
            observed = perturb(chunk, spec, seed=_derive_seed(seed, trial, 1))
        proof = generate_proof(chunk, config)
        budget = thresholds if thresholds is not None else default_thresholds(
            observed.precision
        )
        report = validate_proof(observed, proof, budget, config.precision)

        committed_sketch = top_k(chunk, config.k)
        observed_sketch = top_k(observed, config.k)
        mismatch = index_set_mismatch(committed_sketch, observed_sketch)
        for bucket, count in exponent_error_histogram(
            committed_sketch, observed_sketch
        ).items():
            histogram[bucket] += count

        accepted += report.accepted
        summaries.append(
            TrialSummary(
                trial=trial,
                accepted=report.accepted,
                exp_mismatch=report.exp_mismatch,
                mantissa_mean=report.mantissa_mean,
                mantissa_median=report.mantissa_median,
                index_mismatch_ratio=mismatch.ratio,
            )
        )

    return ExperimentResult(
        scenario=kind.value,
        trials=trials,
        committed_precision=config.precision,
        validated_precision=observed_precision,
        accepted_count=accepted,
        summaries=tuple(summaries),
        exponent_histogram=histogram,
    )


@dataclass(frozen=True)
class ChunkMantissaError:
    """Mantissa agreement of one chunk pair at shared top-k indices."""

    chunk: int
    shared: int
    matched: int
    mean: float
    median: float


def mantissa_error_by_chunk(
    committed: Sequence[ActivationChunk],
    recomputed: Sequence[ActivationChunk],
    k: int = 128,
) -> list[ChunkMantissaError]:
    """Per-chunk mantissa differences where both sides picked the index.

    Only positions whose sign and exponent agree contribute to the mean and
    median; a pair with no such positions reports infinities.
    """
    if len(committed) != len(recomputed):
        raise ValueError(
            f"{len(committed)} committed chunks vs {len(recomputed)} recomputed"
        )
    out = []
    for i, (a_chunk, b_chunk) in enumerate(zip(committed, recomputed)):
        if a_chunk.precision is not b_chunk.precision:
            raise ValueError(f"chunk {i}: precisions differ")
        precision = a_chunk.precision
        a = top_k(a_chunk, min(k, a_chunk.size))
        b = top_k(b_chunk, min(k, b_chunk.size))
        _, ia, ib = np.intersect1d(
            a.indices, b.indices, assume_unique=True, return_indices=True
        )
        pa = a.patterns[ia].astype(np.int64)
        pb = b.patterns[ib].astype(np.int64)
        mmask = precision.mantissa_mask
        same_head = (pa & ~mmask) == (pb & ~mmask)
        diffs = np.abs((pa & mmask)[same_head] - (pb & mmask)[same_head])
        if diffs.size:
            mean = float(diffs.mean())
            median = float(np.median(diffs))
        else:
            mean = math.inf
            median = math.inf
        out.append(ChunkMantissaError(i, int(ia.size), int(same_head.sum()), mean, median))
    return out


def modulus_distribution_mc(
    samples: int, set_size: int = 128, seed: int = 0
) -> dict[int, float]:
    """Distribution of the injective-modulus search over random index sets.

    Each sample is a set of set_size distinct uniform draws from [0, 2**32).
    The returned map sends each modulus the descending scan settled on to its
    observed fraction, keyed largest modulus first.
    """
    if samples < 1:
        raise ValueError(f"samples must be positive, got {samples}")
    if set_size < 2:
        raise ValueError(f"set_size must be at least 2, got {set_size}")
    rng = np.random.default_rng(seed)
    search = kernels.active().injective_search
    counts: dict[int, int] = {}
    remaining = samples
    batch_rows = 1 << 14
    while remaining:
        rows = rng.integers(
            0, 1 << 32, size=(min(batch_rows, remaining), set_size), dtype=np.uint64
        )
        while True:
            ordered = np.sort(rows, axis=1)
            dup = (ordered[:, 1:] == ordered[:, :-1]).any(axis=1)
            if not dup.any():
                break
            rows[dup] = rng.integers(
                0, 1 << 32, size=(int(dup.sum()), set_size), dtype=np.uint64
            )
        found = search(rows, 1 << 16, MODULUS_FLOOR)
        if (found < 0).any():
            raise RuntimeError("search window exhausted for a sample set")
        for modulus, count in zip(*np.unique(found, return_counts=True)):
            counts[int(modulus)] = counts.get(int(modulus), 0) + int(count)
        remaining -= rows.shape[0]
    return {m: counts[m] / samples for m in sorted(counts, reverse=True)}
