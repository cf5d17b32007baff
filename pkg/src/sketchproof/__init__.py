"""Verifiable inference commitments from top-k activation sketches.

The committing side condenses each activation chunk into its k strongest
elements and publishes them as a polynomial congruence: a modulus that keeps
the flat indices distinct and the coefficients of the unique interpolating
polynomial through (index, raw bit pattern) pairs. A validator holding its
own activations for the same tokens recomputes the sketch, evaluates the
committed polynomial, and accepts only when the bit patterns agree within
small per-precision error budgets.
"""

from .floatbits import (
    BitFields,
    Precision,
    assemble_bits,
    decode_array,
    extract_bits,
    pad_bf16_to_fp32,
    quantize_array,
    quantize_real,
    truncate_fp32_to_bf16,
)
from .modpoly import (
    ProofPoly,
    find_injective_modulus,
    find_injective_prime_modulus,
    horner_eval,
    horner_eval_many,
    mod_inverse,
    newton_interpolate,
)
from .proofs import (
    CommitConfig,
    GenerationCommitment,
    GenerationValidation,
    Profile,
    Proof,
    Thresholds,
    ValidationReport,
    commit_generation,
    commitment_from_bytes,
    commitment_to_bytes,
    decode_proof,
    default_thresholds,
    encode_proof,
    generate_proof,
    read_commitment,
    validate_generation,
    validate_proof,
    write_commitment,
)
from .sketch import ActivationChunk, TopKSketch, index_set_mismatch, top_k
from .simulate import (
    HISTOGRAM_BUCKETS,
    ChunkMantissaError,
    ExperimentResult,
    PerturbationKind,
    PerturbationSpec,
    TrialSummary,
    default_spec,
    exponent_error_histogram,
    format_histogram_table,
    mantissa_error_by_chunk,
    modulus_distribution_mc,
    perturb,
    run_scenario,
    synth_activations,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationChunk",
    "BitFields",
    "ChunkMantissaError",
    "CommitConfig",
    "ExperimentResult",
    "GenerationCommitment",
    "GenerationValidation",
    "HISTOGRAM_BUCKETS",
    "PerturbationKind",
    "PerturbationSpec",
    "Precision",
    "Profile",
    "Proof",
    "ProofPoly",
    "Thresholds",
    "TopKSketch",
    "TrialSummary",
    "ValidationReport",
    "assemble_bits",
    "commit_generation",
    "commitment_from_bytes",
    "commitment_to_bytes",
    "decode_array",
    "decode_proof",
    "default_spec",
    "default_thresholds",
    "encode_proof",
    "exponent_error_histogram",
    "extract_bits",
    "find_injective_modulus",
    "find_injective_prime_modulus",
    "format_histogram_table",
    "generate_proof",
    "horner_eval",
    "horner_eval_many",
    "index_set_mismatch",
    "mantissa_error_by_chunk",
    "mod_inverse",
    "modulus_distribution_mc",
    "newton_interpolate",
    "pad_bf16_to_fp32",
    "perturb",
    "quantize_array",
    "quantize_real",
    "read_commitment",
    "run_scenario",
    "synth_activations",
    "top_k",
    "truncate_fp32_to_bf16",
    "validate_generation",
    "validate_proof",
    "write_commitment",
    "__version__",
]
