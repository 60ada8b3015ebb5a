"""Memory model: analytic-vs-measured agreement, published trends, compute."""

import numpy as np
import pytest

from blockmae.engine import BlockPlan
from blockmae.memory import analytic_peak, compare_peak, flop_estimate
from blockmae.model import ModelSpec


def _spec(depth=4, **over):
    base = dict(image_size=16, patch_size=4, channels=1, embed_dim=16,
                depth=depth, heads=2, mlp_ratio=2, decoder_dim=8,
                decoder_depth=1)
    base.update(over)
    return ModelSpec(**base)


TOY = ModelSpec()  # depth 8, B-ready toy preset


def test_analytic_equals_measured_tiny():
    spec = _spec(depth=4)
    plan = BlockPlan(num_blocks=4, mask_schedule=(0.5,) * 4)
    rows = compare_peak(spec, plan, batch=3, seed=1, dtype=np.float64)
    for row in rows:
        assert row.analytic_peak_bytes == row.measured_peak_bytes, row


def test_analytic_equals_measured_toy_preset():
    plan = BlockPlan(num_blocks=4, mask_schedule=(0.75,) * 4)
    rows = compare_peak(TOY, plan, batch=2, seed=2, dtype=np.float32)
    for row in rows:
        assert row.analytic_peak_bytes == row.measured_peak_bytes, row


def test_analytic_equals_measured_incremental_schedule():
    spec = _spec(depth=4)
    plan = BlockPlan(num_blocks=4, mask_schedule=(0.5, 0.625, 0.75, 0.875))
    rows = compare_peak(spec, plan, batch=2, seed=3, dtype=np.float64)
    for row in rows:
        assert row.analytic_peak_bytes == row.measured_peak_bytes, row


def test_idealized_ratio_is_one_over_blocks():
    for b in (1, 2, 4):
        plan = BlockPlan(num_blocks=b, mask_schedule=(0.75,) * b)
        mae = BlockPlan(num_blocks=1, mask_schedule=(0.75,), mode="mae")
        bim = analytic_peak(TOY, plan, batch=4, include_decoder=False,
                            include_embed=False)
        base = analytic_peak(TOY, mae, batch=4, include_decoder=False,
                             include_embed=False)
        assert bim * b == base


def test_analytic_linear_in_batch():
    plan = BlockPlan(num_blocks=4, mask_schedule=(0.75,) * 4)
    one = analytic_peak(TOY, plan, batch=1)
    for k in (2, 5, 8):
        assert analytic_peak(TOY, plan, batch=k) == k * one


def test_measured_doubling_batch_doubles_peaks_ratio_invariant():
    spec = _spec(depth=4)
    plan = BlockPlan(num_blocks=2, mask_schedule=(0.5, 0.5))
    r1 = compare_peak(spec, plan, batch=2, seed=5, dtype=np.float64)
    r2 = compare_peak(spec, plan, batch=4, seed=5, dtype=np.float64)
    assert r2[0].measured_peak_bytes == 2 * r1[0].measured_peak_bytes
    assert r2[1].measured_peak_bytes == 2 * r1[1].measured_peak_bytes
    assert r2[1].ratio_vs_mae == pytest.approx(r1[1].ratio_vs_mae, rel=1e-12)


def test_mae_self_comparison_ratio_one():
    spec = _spec(depth=4)
    plan = BlockPlan(num_blocks=1, mask_schedule=(0.5,), mode="mae")
    rows = compare_peak(spec, plan, batch=2, seed=7, dtype=np.float64)
    assert rows[1].ratio_vs_mae == 1.0


def test_ratio_decreases_with_depth():
    ratios = []
    for depth in (8, 16, 24):
        spec = ModelSpec(depth=depth)
        plan = BlockPlan(num_blocks=4, mask_schedule=(0.75,) * 4)
        rows = compare_peak(spec, plan, batch=2, seed=9, dtype=np.float32)
        ratios.append(rows[1].ratio_vs_mae)
    assert ratios[0] > ratios[1] > ratios[2]


def test_increasing_blocks_never_increases_analytic_peak():
    spec = ModelSpec(depth=8)
    prev = None
    for b in (1, 2, 4, 8):
        plan = BlockPlan(num_blocks=b, mask_schedule=(0.75,) * b)
        peak = analytic_peak(spec, plan, batch=4)
        if prev is not None:
            assert peak <= prev
        prev = peak


def test_mae_peak_linear_in_depth():
    peaks = []
    depths = (4, 8, 12, 16)
    for depth in depths:
        plan = BlockPlan(num_blocks=1, mask_schedule=(0.75,), mode="mae")
        peaks.append(analytic_peak(ModelSpec(depth=depth), plan, batch=2))
    x = np.array(depths, dtype=float)
    y = np.array(peaks, dtype=float)
    slope, icept = np.polyfit(x, y, 1)
    r2 = 1 - ((y - (slope * x + icept)) ** 2).sum() / ((y - y.mean()) ** 2).sum()
    assert r2 > 0.99


# ----- compute model ------------------------------------------------------------

def test_flop_schedule_75_80_85_90_saves_30_percent_linear():
    plan = BlockPlan(num_blocks=4, mask_schedule=(0.75, 0.80, 0.85, 0.90))
    rep = flop_estimate(TOY, plan, baseline_ratio=0.75)
    frac_sum = sum(rep.visible_fractions)
    assert abs(frac_sum - 0.70) < 1e-12
    assert abs(rep.encoder_linear_units / rep.baseline_linear_units - 0.70) < 1e-12
    assert abs(rep.savings_vs_baseline - 0.30) < 1e-12
    assert rep.savings_vs_baseline >= 0.25


def test_flop_schedule_65_70_80_85_parity_with_fixed_75():
    plan = BlockPlan(num_blocks=4, mask_schedule=(0.65, 0.70, 0.80, 0.85))
    rep = flop_estimate(TOY, plan, baseline_ratio=0.75)
    assert abs(rep.encoder_linear_units - rep.baseline_linear_units) \
        < 1e-9 * rep.baseline_linear_units


def test_flop_zero_masking_baseline_parity():
    plan = BlockPlan(num_blocks=4, mask_schedule=(0.0,) * 4)
    rep = flop_estimate(TOY, plan, baseline_ratio=0.0)
    assert rep.visible_fractions == (1.0, 1.0, 1.0, 1.0)
    assert rep.encoder_linear_units == rep.baseline_linear_units
    assert rep.savings_vs_baseline == 0.0


def test_flop_totals_nonnegative_and_additive():
    plan = BlockPlan(num_blocks=2, mask_schedule=(0.5, 0.75))
    rep = flop_estimate(_spec(depth=4), plan)
    assert rep.encoder_linear_units > 0
    assert rep.encoder_quad_units > 0
    assert rep.decoder_units > 0
