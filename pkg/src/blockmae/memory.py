"""Analytic peak-memory and compute estimators, cross-validated against
the measured meters.

The analytic peak enumerates, term by term, the same buffers the tape
charges (see tape.py's per-primitive table), so analytic and measured
peaks agree exactly for any configuration; the published-trend checks
(block-count ratio, depth scaling) are then pure arithmetic.

Compute totals are reported in multiply-accumulate units with the
attention term (quadratic in visible tokens) separated from the linear
projection/MLP term, since masking schedules move the two differently.
Token counts in the compute model are exact fractions of N, not floored,
so schedules with equal average ratios compare as exactly equal.
"""

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .engine import (
    BlockPlan, blockwise_train_step, build_model, mae_train_step,
    partition_encoder,
)
from .data import gen_synthetic_dataset
from .optim import AdamW

_IDS_BYTES = 8  # int64 row indices


class ResourceError(Exception):
    pass


@dataclass
class MemoryReport:
    """One instrumented mode at one configuration."""

    mode: str
    batch: int
    config: str
    analytic_peak_bytes: int
    measured_peak_bytes: int
    ratio_vs_mae: float


@dataclass
class FlopReport:
    """Multiply-accumulate totals for one plan, against a fixed-ratio baseline."""

    schedule: tuple
    visible_fractions: tuple
    encoder_linear_units: float
    encoder_quad_units: float
    decoder_units: float
    baseline_linear_units: float
    baseline_quad_units: float
    baseline_decoder_units: float
    savings_vs_baseline: float


# ----- analytic byte model ------------------------------------------------------

def _layer_bytes(b, n, d, heads, mlp_ratio, s, input_charged=True):
    """Charged bytes of one transformer layer at n tokens, width d."""
    lin = (3 * heads + 6 + (1 if input_charged else 0) + 2 * mlp_ratio) * n * d
    quad = 2 * heads * n * n
    aux = 4 * n
    return s * b * (lin + quad + aux)


def _bridge_bytes(b, n, d, s):
    return s * b * (2 * n * d + 2 * n)


def _decoder_bytes(spec, b, n_vis, s):
    n = spec.num_patches
    dd = spec.decoder_dim
    total = _IDS_BYTES * b * n  # unshuffle gather ids
    for _ in range(spec.decoder_depth):
        total += _layer_bytes(b, n, dd, spec.decoder_heads, spec.mlp_ratio, s)
    total += s * b * (n * dd + 2 * n)        # final norm
    total += s * b * n * dd                  # prediction head matmul
    total += s * b * n * spec.patch_pixels   # loss saves the prediction
    return total


def _visible_counts(spec, plan):
    return [int(np.floor(spec.num_patches * (1.0 - r)))
            for r in plan.mask_schedule]


def analytic_peak(spec, plan, batch, dtype_size=4, include_decoder=True,
                  include_embed=True):
    """Closed-form peak activation bytes for one training step.

    include_decoder covers the bridge + local decoder + loss terms;
    include_embed covers the token-stream buffers between blocks (boundary
    copies and drop indices).  Zeroing both isolates the per-layer encoder
    cost, under which the block-wise/end-to-end ratio is exactly 1/B.
    """
    s = dtype_size
    b = batch
    d = spec.embed_dim
    counts = _visible_counts(spec, plan)
    if plan.mode == "mae":
        n = counts[0]
        total = spec.depth * _layer_bytes(b, n, d, spec.heads, spec.mlp_ratio, s)
        if include_decoder:
            total += _bridge_bytes(b, n, d, s) + _decoder_bytes(spec, b, n, s)
        return total

    lpb = spec.depth // plan.num_blocks
    peak = 0
    for i in range(plan.num_blocks):
        n_i = counts[i]
        live = 0
        dropped = i > 0 and counts[i] < counts[i - 1]
        if include_embed and i > 0:
            live += s * b * counts[i - 1] * d          # previous boundary
            if dropped:
                live += _IDS_BYTES * b * n_i           # drop gather ids
        first_charged = (i == 0) or dropped
        live += _layer_bytes(b, n_i, d, spec.heads, spec.mlp_ratio, s,
                             input_charged=first_charged)
        live += (lpb - 1) * _layer_bytes(b, n_i, d, spec.heads,
                                         spec.mlp_ratio, s)
        if include_embed and i < plan.num_blocks - 1:
            live += s * b * n_i * d                    # own boundary copy
        if include_decoder:
            live += _bridge_bytes(b, n_i, d, s) + _decoder_bytes(spec, b, n_i, s)
        peak = max(peak, live)
    return peak


# ----- instrumented comparison ----------------------------------------------------

def _config_summary(spec, plan):
    return (f"depth={spec.depth} d={spec.embed_dim} N={spec.num_patches} "
            f"dec={spec.decoder_dim}x{spec.decoder_depth} B={plan.num_blocks} "
            f"schedule={plan.mask_schedule}")


def compare_peak(spec, plan, batch, seed=0, dtype=np.float32):
    """Run one instrumented step per mode and report measured vs analytic.

    The end-to-end baseline masks at the plan's initial ratio so both
    modes see identical input visibility.  Raises if the block-wise mode
    fails to come in under the baseline.
    """
    dtype = np.dtype(dtype)
    s = dtype.itemsize
    images = gen_synthetic_dataset(spec.image_size, batch, seed,
                                   channels=spec.channels).images(dtype=dtype)
    mae_plan = BlockPlan(num_blocks=1, mask_schedule=plan.mask_schedule[:1],
                         mode="mae")
    try:
        model_m = build_model(spec, 1, seed=seed, dtype=dtype)
        rep_m = mae_train_step(partition_encoder(model_m, 1), images,
                               plan.mask_schedule[0], AdamW(), lr=0.0,
                               step_seed=seed)
        if plan.mode == "mae":
            rep_p = rep_m
        else:
            model_p = build_model(spec, plan.num_blocks, seed=seed, dtype=dtype)
            rep_p = blockwise_train_step(partition_encoder(
                model_p, plan.num_blocks), images, plan, AdamW(), lr=0.0,
                step_seed=seed)
    except MemoryError as exc:
        raise ResourceError(
            f"step at batch {batch} exceeded memory; analytic estimate "
            f"{analytic_peak(spec, plan, batch, s)} bytes") from exc

    ratio = rep_p.peak_activation_bytes / rep_m.peak_activation_bytes
    rows = [
        MemoryReport(mode="mae", batch=batch, config=_config_summary(spec, mae_plan),
                     analytic_peak_bytes=analytic_peak(spec, mae_plan, batch, s),
                     measured_peak_bytes=rep_m.peak_activation_bytes,
                     ratio_vs_mae=1.0),
        MemoryReport(mode=plan.mode, batch=batch,
                     config=_config_summary(spec, plan),
                     analytic_peak_bytes=analytic_peak(spec, plan, batch, s),
                     measured_peak_bytes=rep_p.peak_activation_bytes,
                     ratio_vs_mae=ratio),
    ]
    if plan.mode != "mae" and ratio >= 1.0:
        raise ResourceError(
            f"block-wise peak {rep_p.peak_activation_bytes} did not improve "
            f"on the end-to-end peak {rep_m.peak_activation_bytes}")
    return rows


# ----- compute model ----------------------------------------------------------------

def _plan_fractions(plan):
    return tuple(1.0 - r for r in plan.mask_schedule)


def _encoder_units(spec, lpb, fractions):
    """(linear, quadratic) MAC totals over the whole encoder."""
    n, d = spec.num_patches, spec.embed_dim
    linear = sum(lpb * f * n * 12 * d * d for f in fractions)
    quad = sum(lpb * 2.0 * (f * n) ** 2 * d for f in fractions)
    return linear, quad


def _decoder_units(spec, num_decoders, fractions):
    """Bridge + decoder + head MACs; the decoder always sees all N tokens."""
    n, d, dd = spec.num_patches, spec.embed_dim, spec.decoder_dim
    total = 0.0
    for f in fractions[:num_decoders]:
        total += f * n * d * dd                       # bridge projection
        total += spec.decoder_depth * (n * 12 * dd * dd + 2.0 * n * n * dd)
        total += n * dd * spec.patch_pixels           # prediction head
    return total


def flop_estimate(spec, plan, baseline_ratio=0.75):
    """MAC totals for the plan against a fixed-ratio single-decoder baseline."""
    fractions = _plan_fractions(plan)
    lpb = spec.depth // plan.num_blocks
    linear, quad = _encoder_units(spec, lpb, fractions)
    dec = _decoder_units(spec, plan.num_blocks, fractions)

    base_frac = (1.0 - baseline_ratio,) * plan.num_blocks
    b_linear, b_quad = _encoder_units(spec, lpb, base_frac)
    b_dec = _decoder_units(spec, 1, base_frac)
    return FlopReport(
        schedule=plan.mask_schedule,
        visible_fractions=fractions,
        encoder_linear_units=linear,
        encoder_quad_units=quad,
        decoder_units=dec,
        baseline_linear_units=b_linear,
        baseline_quad_units=b_quad,
        baseline_decoder_units=b_dec,
        savings_vs_baseline=1.0 - linear / b_linear,
    )
