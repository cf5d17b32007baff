"""Command line front end.

Subcommands:
    commit    activation dump -> commitment container
    verify    activation dump + container -> accept/reject report
    simulate  perturbation scenarios and the modulus distribution experiment
    inspect   describe a commitment container
    bench     time the compute kernels across available backends

Activation dumps use the TLAC layout: magic "TLAC", a version byte, a dtype
byte (0x00 bf16, 0x01 fp32), token count and hidden dimension as u32, then
the raw patterns row-major, all little-endian.

Exit status: 0 on success (verify: accepted), 1 when verify rejects, 2 on
any usage or data error.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys

import numpy as np

from .floatbits import Precision, decode_array, quantize_array
from .proofs import (
    CommitConfig,
    GenerationCommitment,
    Thresholds,
    commit_generation,
    decode_proof,
    default_thresholds,
    read_commitment,
    validate_generation,
    write_commitment,
)
from .sketch import ActivationChunk
from .simulate import (
    PerturbationKind,
    format_histogram_table,
    modulus_distribution_mc,
    run_scenario,
)

__all__ = [
    "write_activation_dump",
    "read_activation_dump",
    "main",
    "entry",
]

_DUMP_MAGIC = b"TLAC"
_DUMP_VERSION = 1
_DUMP_HEADER = struct.Struct("<4sBBII")
_DTYPE_CODES = {Precision.BF16: 0x00, Precision.FP32: 0x01}


def write_activation_dump(trace: ActivationChunk, path) -> None:
    """Write a full activation trace in the TLAC layout."""
    head = _DUMP_HEADER.pack(
        _DUMP_MAGIC,
        _DUMP_VERSION,
        _DTYPE_CODES[trace.precision],
        trace.token_count,
        trace.hidden_dim,
    )
    payload = trace.values.astype(
        "<u2" if trace.precision is Precision.BF16 else "<u4"
    ).tobytes()
    with open(path, "wb") as f:
        f.write(head + payload)


def read_activation_dump(path) -> ActivationChunk:
    """Read a TLAC dump back; ValueError on any structural problem."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _DUMP_HEADER.size:
        raise ValueError("activation dump shorter than its header")
    magic, version, dtype_code, token_count, hidden_dim = _DUMP_HEADER.unpack_from(raw)
    if magic != _DUMP_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != _DUMP_VERSION:
        raise ValueError(f"unsupported dump version {version}")
    by_code = {code: p for p, code in _DTYPE_CODES.items()}
    if dtype_code not in by_code:
        raise ValueError(f"unknown dtype byte {dtype_code:#04x}")
    precision = by_code[dtype_code]
    width = 2 if precision is Precision.BF16 else 4
    expected = token_count * hidden_dim * width
    body = raw[_DUMP_HEADER.size :]
    if len(body) != expected:
        raise ValueError(
            f"payload holds {len(body)} bytes, expected {expected} for "
            f"{token_count}x{hidden_dim} {precision.value}"
        )
    values = np.frombuffer(body, dtype="<u2" if width == 2 else "<u4").astype(
        precision.pattern_dtype
    )
    return ActivationChunk(token_count, hidden_dim, precision, values)


def _split_trace(trace: ActivationChunk, prefill_tokens: int, chunk_tokens: int):
    if not 0 < prefill_tokens <= trace.token_count:
        raise ValueError(
            f"prefill_tokens must be in (0, {trace.token_count}], got {prefill_tokens}"
        )
    prefill = trace.slice_tokens(0, prefill_tokens)
    decode = []
    start = prefill_tokens
    while start < trace.token_count:
        stop = min(start + chunk_tokens, trace.token_count)
        decode.append(trace.slice_tokens(start, stop))
        start = stop
    return prefill, decode


def _convert_trace(trace: ActivationChunk, target: Precision) -> ActivationChunk:
    if trace.precision is target:
        return trace
    values = quantize_array(decode_array(trace.values, trace.precision), target)
    return ActivationChunk(trace.token_count, trace.hidden_dim, target, values)


def cmd_commit(args: argparse.Namespace) -> int:
    trace = read_activation_dump(args.activations)
    config = CommitConfig.for_precision(
        trace.precision, k=args.k, chunk_tokens=args.chunk_tokens
    )
    prefill, decode = _split_trace(trace, args.prefill_tokens, args.chunk_tokens)
    metadata = {
        "prefill_tokens": str(args.prefill_tokens),
        "decode_tokens": str(trace.token_count - args.prefill_tokens),
    }
    commitment = commit_generation(prefill, decode, config, metadata)
    write_commitment(commitment, args.out)
    print(
        f"wrote {args.out}: precision={trace.precision.value} "
        f"proofs={commitment.proof_count} bytes={commitment.total_bytes()}"
    )
    return 0


def _thresholds_from_args(args: argparse.Namespace, precision: Precision) -> Thresholds:
    base = default_thresholds(precision)
    return Thresholds(
        t_exp=base.t_exp if args.t_exp is None else args.t_exp,
        t_mean=base.t_mean if args.t_mean is None else args.t_mean,
        t_median=base.t_median if args.t_median is None else args.t_median,
    )


def cmd_verify(args: argparse.Namespace) -> int:
    trace = read_activation_dump(args.activations)
    commitment = read_commitment(args.commitment)

    meta_prefill = commitment.metadata.get("prefill_tokens")
    if meta_prefill is not None:
        prefill_tokens = int(meta_prefill)
    elif args.prefill_tokens is not None:
        prefill_tokens = args.prefill_tokens
    else:
        raise ValueError(
            "commitment metadata lacks prefill_tokens; pass --prefill-tokens"
        )

    if args.precision_override is not None:
        trace = _convert_trace(trace, Precision(args.precision_override))
    thresholds = _thresholds_from_args(args, trace.precision)

    prefill, decode = _split_trace(trace, prefill_tokens, commitment.config.chunk_tokens)
    result = validate_generation(prefill, decode, commitment, thresholds)

    chunks = []
    for i, report in enumerate(result.reports):
        entry_ = {"role": "prefill" if i == 0 else "decode", "index": max(0, i - 1)}
        entry_.update(report.to_dict())
        chunks.append(entry_)
    payload = {
        "schema": 1,
        "accepted": result.accepted,
        "committed_precision": commitment.config.precision.value,
        "validated_precision": trace.precision.value,
        "prefill_tokens": prefill_tokens,
        "proofs": commitment.proof_count,
        "thresholds": {
            "t_exp": thresholds.t_exp,
            "t_mean": thresholds.t_mean,
            "t_median": thresholds.t_median,
        },
        "chunks": chunks,
    }
    print(json.dumps(payload, indent=2))
    return 0 if result.accepted else 1


def cmd_simulate(args: argparse.Namespace) -> int:
    if args.scenario == "mc-modulus":
        distribution = modulus_distribution_mc(args.samples, seed=args.seed)
        payload = {
            "schema": 1,
            "experiment": "mc-modulus",
            "samples": args.samples,
            "set_size": 128,
            "seed": args.seed,
            "distribution": {str(m): r for m, r in distribution.items()},
        }
        if args.table:
            width = max(len(str(m)) for m in distribution)
            rows = [f"{'modulus':<{width}}  fraction"]
            rows += [f"{m:<{width}}  {r:.6f}" for m, r in distribution.items()]
            print("\n".join(rows), file=sys.stderr)
    else:
        config = CommitConfig.for_precision(
            Precision(args.precision), k=args.k, chunk_tokens=args.chunk_tokens
        )
        result = run_scenario(
            args.scenario,
            args.trials,
            config,
            hidden_dim=args.hidden_dim,
            seed=args.seed,
        )
        payload = result.to_dict()
        if args.table:
            print(format_histogram_table(result.exponent_histogram), file=sys.stderr)

    text = json.dumps(payload, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    commitment = read_commitment(args.commitment)
    cfg = commitment.config
    print(
        f"profile={cfg.profile.value} k={cfg.k} chunk={cfg.chunk_tokens} "
        f"proofs={commitment.proof_count}"
    )
    proofs = [commitment.prefill_proof, *commitment.decode_proofs]
    for i, proof in enumerate(proofs):
        k_i, modulus, _ = decode_proof(proof, cfg.profile)
        role = "prefill" if i == 0 else f"decode[{i - 1}]"
        print(f"  {role}: k={k_i} modulus={modulus} bytes={len(proof)}")
    for key, value in sorted(commitment.metadata.items()):
        print(f"  meta {key}={value}")
    decode_bytes = sum(len(p) for p in commitment.decode_proofs)
    decode_tokens = int(
        commitment.metadata.get(
            "decode_tokens", len(commitment.decode_proofs) * cfg.chunk_tokens
        )
    )
    print(f"total proof bytes: {commitment.total_bytes()}")
    if decode_tokens > 0 and commitment.decode_proofs:
        print(f"amortized decode bytes/token: {decode_bytes / decode_tokens:.4f}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    from .bench import format_results, run_benchmark

    results = run_benchmark(k=args.k, points=args.points, repeat=args.repeat)
    print(format_results(results))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sketchproof",
        description="commit to activation sketches and validate them later",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("commit", help="build a commitment from an activation dump")
    p.add_argument("--activations", required=True, help="TLAC activation dump")
    p.add_argument(
        "--prefill-tokens", type=int, required=True,
        help="leading tokens committed as the single prefill proof",
    )
    p.add_argument("--k", type=int, default=128, help="sketch size per chunk")
    p.add_argument("--chunk-tokens", type=int, default=32, help="tokens per decode chunk")
    p.add_argument("--out", required=True, help="output commitment path")
    p.set_defaults(func=cmd_commit)

    p = sub.add_parser("verify", help="validate an activation dump against a commitment")
    p.add_argument("--activations", required=True, help="TLAC activation dump")
    p.add_argument("--commitment", required=True, help="commitment container path")
    p.add_argument(
        "--precision-override", choices=[pr.value for pr in Precision], default=None,
        help="convert the dump to this precision before validating",
    )
    p.add_argument("--t-exp", type=int, default=None, help="exponent mismatch budget")
    p.add_argument("--t-mean", type=float, default=None, help="mean mantissa budget")
    p.add_argument("--t-median", type=float, default=None, help="median mantissa budget")
    p.add_argument(
        "--prefill-tokens", type=int, default=None,
        help="fallback when the commitment metadata lacks prefill_tokens",
    )
    p.set_defaults(func=cmd_verify)

    scenario_names = [kind.value for kind in PerturbationKind] + ["mc-modulus"]
    p = sub.add_parser("simulate", help="run a perturbation or distribution experiment")
    p.add_argument("--scenario", required=True, choices=scenario_names)
    p.add_argument("--trials", type=int, default=100, help="trials per scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden-dim", type=int, default=4096)
    p.add_argument("--k", type=int, default=128)
    p.add_argument("--chunk-tokens", type=int, default=32)
    p.add_argument(
        "--precision", choices=[pr.value for pr in Precision], default="bf16",
        help="committed-side precision",
    )
    p.add_argument(
        "--samples", type=int, default=100000,
        help="sample count for the mc-modulus experiment",
    )
    p.add_argument("--out", default=None, help="write the JSON result here instead of stdout")
    p.add_argument(
        "--table", action="store_true",
        help="also print an aligned table to stderr",
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("inspect", help="describe a commitment container")
    p.add_argument("--commitment", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="time the kernels on every available backend")
    p.add_argument("--k", type=int, default=128)
    p.add_argument("--points", type=int, default=128, help="evaluation points per trial")
    p.add_argument("--repeat", type=int, default=200, help="timed repetitions")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
