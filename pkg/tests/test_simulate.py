import math

import numpy as np
import pytest

from sketchproof import (
    ActivationChunk,
    CommitConfig,
    HISTOGRAM_BUCKETS,
    PerturbationKind,
    PerturbationSpec,
    Precision,
    Thresholds,
    default_spec,
    exponent_error_histogram,
    format_histogram_table,
    index_set_mismatch,
    mantissa_error_by_chunk,
    modulus_distribution_mc,
    perturb,
    run_scenario,
    synth_activations,
    top_k,
)
from sketchproof.floatbits import decode_array, nonfinite_mask

BF16 = Precision.BF16
FP32 = Precision.FP32


def test_synth_determinism_and_shape():
    a = synth_activations(5, 4, 1024, BF16)
    b = synth_activations(5, 4, 1024, BF16)
    c = synth_activations(6, 4, 1024, BF16)
    assert (a.values == b.values).all()
    assert (a.values != c.values).any()
    assert a.token_count == 4 and a.hidden_dim == 1024
    assert a.values.dtype == np.uint16
    assert not nonfinite_mask(a.values, BF16).any()


def test_synth_validation():
    with pytest.raises(ValueError):
        synth_activations(-1, 1, 64, BF16)
    with pytest.raises(ValueError):
        synth_activations(0, 1, 64, BF16, outlier_fraction=1.5)
    with pytest.raises(ValueError):
        synth_activations(0, 1, 64, BF16, outlier_scale=0.5)


def test_synth_same_reals_across_precisions():
    # same seed, different precision: the underlying reals agree to within
    # half a bf16 ulp, which is what makes cast experiments meaningful
    bf = synth_activations(3, 8, 2048, BF16)
    fp = synth_activations(3, 8, 2048, FP32)
    rb = decode_array(bf.values, BF16)
    rf = decode_array(fp.values, FP32)
    assert np.allclose(rb, rf, rtol=0.005, atol=1e-40)


def test_synth_outliers_dominate_top_k():
    fractions = []
    for seed in range(50):
        chunk = synth_activations(seed, 32, 4096, BF16)
        reals = np.abs(decode_array(chunk.values, BF16)).reshape(32, 4096)
        outlier_cols = np.where(reals.max(axis=0) > 25.0)[0]
        sketch = top_k(chunk, 128)
        hit = np.isin(sketch.indices % 4096, outlier_cols)
        fractions.append(hit.mean())
    assert np.mean(fractions) > 0.9


def test_perturb_none_is_identity():
    chunk = synth_activations(1, 2, 256, BF16)
    assert perturb(chunk, default_spec(PerturbationKind.NONE), seed=9) is chunk


def test_jitter_moves_only_mantissas():
    chunk = synth_activations(2, 4, 1024, BF16)
    before = chunk.values.copy()
    spec = default_spec(PerturbationKind.BENIGN_JITTER)
    out = perturb(chunk, spec, seed=3)
    assert (chunk.values == before).all()  # input untouched
    mmask = BF16.mantissa_mask
    high = BF16.pattern_max ^ mmask
    assert (out.values & high == chunk.values & high).all()
    diff = np.abs(
        (out.values & mmask).astype(np.int64) - (chunk.values & mmask).astype(np.int64)
    )
    assert diff.max() <= 16
    changed = (diff > 0).mean()
    assert 0.4 < changed < 0.75
    again = perturb(chunk, spec, seed=3)
    assert (again.values == out.values).all()
    other = perturb(chunk, spec, seed=4)
    assert (other.values != out.values).any()


def test_exponent_flip_laws():
    chunk = synth_activations(4, 4, 1024, BF16)
    out = perturb(chunk, default_spec(PerturbationKind.EXPONENT_FLIP), seed=1)
    shift = BF16.mantissa_bits
    e_in = (chunk.values >> shift) & 0xFF
    e_out = (out.values >> shift) & 0xFF
    moved = e_in != e_out
    assert 0.005 < moved.mean() < 0.05
    steps = e_out[moved].astype(np.int64) - e_in[moved].astype(np.int64)
    assert set(np.unique(steps)) <= {-1, 1}
    assert (e_out[moved] >= 1).all() and (e_out[moved] <= 254).all()
    assert (e_out[e_in == 0] == 0).all()
    rest_mask = BF16.pattern_max ^ (0xFF << shift)
    assert (out.values & rest_mask == chunk.values & rest_mask).all()


def test_cancellation_zeroes_small_values_only():
    chunk = synth_activations(8, 4, 1024, BF16)
    out = perturb(chunk, default_spec(PerturbationKind.CANCELLATION_ZEROS), seed=2)
    changed = out.values != chunk.values
    assert changed.any()
    assert (out.values[changed] == 0).all()
    assert (np.abs(decode_array(chunk.values[changed], BF16)) < 10.0).all()


def test_model_swap_replaces_almost_every_index():
    chunk = synth_activations(9, 32, 4096, BF16)
    out = perturb(chunk, default_spec(PerturbationKind.MODEL_SWAP), seed=5)
    stats = index_set_mismatch(top_k(chunk, 128), top_k(out, 128))
    assert stats.ratio > 0.9
    again = perturb(chunk, default_spec(PerturbationKind.MODEL_SWAP), seed=5)
    assert (again.values == out.values).all()


def test_prefix_swap_replaces_head_and_jitters_tail():
    chunk = synth_activations(10, 8, 512, BF16)
    out = perturb(chunk, default_spec(PerturbationKind.PROMPT_PREFIX_SWAP), seed=6)
    head_in = chunk.values.reshape(8, 512)[:4]
    head_out = out.values.reshape(8, 512)[:4]
    high = BF16.pattern_max ^ BF16.mantissa_mask
    # the swapped head differs beyond mantissa noise
    assert (head_in & high != head_out & high).any()
    tail_in = chunk.values.reshape(8, 512)[4:]
    tail_out = out.values.reshape(8, 512)[4:]
    assert (tail_in & high == tail_out & high).all()

    spec = PerturbationSpec(PerturbationKind.PROMPT_PREFIX_SWAP, {"prefix_tokens": 0})
    jitter_only = perturb(chunk, spec, seed=6)
    assert (jitter_only.values & high == chunk.values & high).all()
    with pytest.raises(ValueError, match="exceeds token count"):
        perturb(chunk, PerturbationSpec(
            PerturbationKind.PROMPT_PREFIX_SWAP, {"prefix_tokens": 9}
        ), seed=6)


def test_precision_cast_roundtrip():
    chunk = synth_activations(11, 4, 1024, FP32)
    spec = default_spec(PerturbationKind.PRECISION_CAST)
    once = perturb(chunk, spec, seed=0)
    assert once.precision is FP32
    assert (once.values != chunk.values).any()
    twice = perturb(once, spec, seed=0)
    assert (twice.values == once.values).all()  # already bf16-representable
    with pytest.raises(ValueError, match="fp32"):
        perturb(synth_activations(11, 4, 1024, BF16), spec, seed=0)


def test_perturbation_spec_validation():
    with pytest.raises(ValueError, match="not valid"):
        PerturbationSpec(PerturbationKind.BENIGN_JITTER, {"sigma": 1.0})
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        PerturbationSpec(PerturbationKind.BENIGN_JITTER, {"prob": 1.5})
    with pytest.raises(ValueError, match="non-negative"):
        PerturbationSpec(PerturbationKind.BENIGN_JITTER, {"delta": -2.0})
    with pytest.raises(ValueError, match="not valid"):
        PerturbationSpec(PerturbationKind.BENIGN_JITTER, {"prefix_tokens": 4})
    spec = PerturbationSpec(PerturbationKind.PROMPT_PREFIX_SWAP, {"prefix_tokens": 4})
    assert spec.get("prefix_tokens") == 4.0
    assert spec.get("missing", 7.0) == 7.0
    with pytest.raises(KeyError):
        spec.get("missing")
    assert default_spec(PerturbationKind.BENIGN_JITTER).get("delta") == 16.0


def test_run_scenario_none_is_clean():
    result = run_scenario(PerturbationKind.NONE, 10, CommitConfig(), hidden_dim=256, seed=1)
    assert result.accepted_count == 10
    assert result.accept_rate == 1.0
    assert result.exp_mismatch_max == 0
    assert result.mantissa_mean_max == 0.0
    assert result.index_mismatch_max == 0.0
    assert result.exponent_histogram["0"] == 10 * 128
    assert sum(result.exponent_histogram.values()) == 10 * 128
    assert len(result.summaries) == 10


def test_run_scenario_argument_forms():
    cfg = CommitConfig()
    quiet = PerturbationSpec(PerturbationKind.BENIGN_JITTER, {"delta": 0.0, "prob": 0.0})
    by_spec = run_scenario(quiet, 3, cfg, hidden_dim=256, seed=2)
    assert by_spec.accepted_count == 3 and by_spec.mantissa_mean_max == 0.0
    by_name = run_scenario("none", 3, cfg, hidden_dim=256, seed=2)
    assert by_name.scenario == "none"
    with pytest.raises(ValueError, match="does not match"):
        run_scenario(PerturbationKind.NONE, 3, cfg, spec=quiet)
    with pytest.raises(ValueError, match="two different specs"):
        run_scenario(quiet, 3, cfg, spec=default_spec(PerturbationKind.BENIGN_JITTER))
    with pytest.raises(ValueError, match="trials"):
        run_scenario(PerturbationKind.NONE, 0, cfg)
    with pytest.raises(ValueError):
        run_scenario("reboot", 3, cfg)


def test_run_scenario_threshold_override():
    spec = PerturbationSpec(PerturbationKind.EXPONENT_FLIP, {"prob": 0.5})
    result = run_scenario(
        spec, 3, CommitConfig(), thresholds=Thresholds(0, 1e9, 1e9),
        hidden_dim=256, seed=3,
    )
    assert result.accepted_count == 0
    assert result.exp_mismatch_min > 0


def test_run_scenario_to_dict():
    result = run_scenario(PerturbationKind.NONE, 2, CommitConfig(), hidden_dim=256)
    d = result.to_dict()
    assert d["schema"] == 1
    assert d["scenario"] == "none"
    assert d["trials"] == 2 and d["accepted"] == 2 and d["rejected"] == 0
    assert d["committed_precision"] == "bf16"
    assert d["validated_precision"] == "bf16"
    assert d["exp_mismatch"] == {"min": 0, "max": 0}
    assert d["mantissa_mean_max"] == 0.0
    assert set(d["exponent_histogram"]) == set(HISTOGRAM_BUCKETS)


def test_run_scenario_precision_cast_directions():
    down = run_scenario(
        PerturbationKind.PRECISION_CAST, 20, CommitConfig(), hidden_dim=512, seed=4
    )
    assert down.validated_precision is FP32
    assert down.accepted_count == 0
    assert down.exp_mismatch_max <= 8  # the mantissa budget is what trips
    assert min(s.mantissa_mean for s in down.summaries) > 256.0

    up = run_scenario(
        PerturbationKind.PRECISION_CAST, 20,
        CommitConfig.for_precision(FP32), hidden_dim=512, seed=4,
    )
    assert up.validated_precision is BF16
    assert up.accepted_count == 20
    assert up.mantissa_mean_max <= 1.0


def _ladder_chunk(exponents):
    values = np.array([e << 7 for e in exponents], np.uint16)
    return ActivationChunk(1, len(values), BF16, values)


def test_exponent_error_histogram_worked_examples():
    a = _ladder_chunk([200, 190, 180, 170, 60])
    sk_a = top_k(a, 4)
    assert exponent_error_histogram(sk_a, sk_a) == {
        "0": 4, "-1": 0, "+1": 0, "-2": 0, "+2": 0,
        "-3..-10": 0, "+3..+10": 0, "+-10..+-100": 0, ">=+-100": 0,
    }

    bumped = _ladder_chunk([200, 190, 181, 170, 60])
    hist = exponent_error_histogram(sk_a, top_k(bumped, 4))
    assert hist["+1"] == 1 and hist["0"] == 3

    dipped = _ladder_chunk([192, 190, 180, 170, 60])
    hist = exponent_error_histogram(sk_a, top_k(dipped, 4))
    assert hist["-3..-10"] == 1 and hist["0"] == 3

    zeroed = _ladder_chunk([200, 190, 180, 0, 60])
    hist = exponent_error_histogram(sk_a, top_k(zeroed, 4))
    # rank 3 now holds the exponent-60 element: 60 - 170 = -110
    assert hist[">=+-100"] == 1 and hist["0"] == 3

    shared = exponent_error_histogram(sk_a, top_k(zeroed, 4), mode="intersection")
    assert shared["0"] == 3 and sum(shared.values()) == 3

    with pytest.raises(ValueError, match="mode"):
        exponent_error_histogram(sk_a, sk_a, mode="banded")
    with pytest.raises(ValueError, match="sizes differ"):
        exponent_error_histogram(sk_a, top_k(a, 3))


def test_histogram_mass_conservation():
    chunk = synth_activations(12, 4, 1024, BF16)
    noisy = perturb(chunk, default_spec(PerturbationKind.BENIGN_JITTER), seed=7)
    a, b = top_k(chunk, 128), top_k(noisy, 128)
    assert sum(exponent_error_histogram(a, b).values()) == 128
    shared = 128 - index_set_mismatch(a, b).count
    assert sum(exponent_error_histogram(a, b, "intersection").values()) == shared


def test_format_histogram_table():
    hist = {"0": 3, "+1": 1}
    table = format_histogram_table(hist)
    lines = table.splitlines()
    assert lines[0].split() == ["bucket", "count", "share"]
    assert lines[1].split() == ["0", "3", "75.00%"]
    assert lines[2].split() == ["+1", "1", "25.00%"]
    assert lines[-1].split() == ["total", "4", "100.00%"]
    empty = format_histogram_table({})
    assert empty.splitlines()[-1].split() == ["total", "0", "0.00%"]


def test_mantissa_error_by_chunk():
    base = synth_activations(13, 4, 1024, BF16)
    noisy = perturb(base, default_spec(PerturbationKind.BENIGN_JITTER), seed=8)
    (clean,) = mantissa_error_by_chunk([base], [base])
    assert (clean.chunk, clean.shared, clean.matched) == (0, 128, 128)
    assert clean.mean == 0.0 and clean.median == 0.0

    (jittered,) = mantissa_error_by_chunk([base], [noisy])
    assert 0 < jittered.mean <= 16.0
    assert jittered.matched <= jittered.shared

    a = _ladder_chunk([200, 190, 180, 170, 0, 0, 0, 0])
    b = _ladder_chunk([0, 0, 0, 0, 200, 190, 180, 170])
    (disjoint,) = mantissa_error_by_chunk([a], [b], k=4)
    assert disjoint.shared == 0
    assert math.isinf(disjoint.mean) and math.isinf(disjoint.median)

    with pytest.raises(ValueError, match="chunks"):
        mantissa_error_by_chunk([base], [base, base])
    fp = synth_activations(13, 4, 1024, FP32)
    with pytest.raises(ValueError, match="precisions differ"):
        mantissa_error_by_chunk([base], [fp])


def test_modulus_distribution_mc_small_sets():
    ratios = modulus_distribution_mc(20000, set_size=2, seed=0)
    # analytic collision chance of a pair mod 65536 is 65535 / (2**32 - 1)
    assert ratios[65536] >= 0.999
    assert abs(sum(ratios.values()) - 1.0) < 1e-12
    assert list(ratios) == sorted(ratios, reverse=True)
    again = modulus_distribution_mc(20000, set_size=2, seed=0)
    assert again == ratios
    with pytest.raises(ValueError):
        modulus_distribution_mc(0)
    with pytest.raises(ValueError):
        modulus_distribution_mc(10, set_size=1)