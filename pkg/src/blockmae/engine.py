"""Block-wise training scheduler.

Partitions the encoder into gradient-isolated blocks with local decoders,
applies the incremental masking layer between blocks, and executes the
buffer/free pattern: forward block i, decode and update locally, release
everything except the boundary activation, drop extra tokens, continue.
The end-to-end baseline step runs through the same code path with a
single block, so the two are bitwise comparable under shared seeds.
"""

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .model import (
    ModelSpec, embed_visible, encoder_block_layer, init_block_head_params,
    init_encoder_params, local_decoder_forward, mask_indices, patch_targets,
    reconstruction_loss,
)
from .tape import ContractError, Tape


class ScheduleError(Exception):
    pass


class IsolationError(Exception):
    """A gradient crossed a block boundary; must be impossible."""


@dataclass
class BlockPlan:
    """Block count, per-block masking ratios, and training mode."""

    num_blocks: int = 4
    mask_schedule: tuple = (0.75, 0.75, 0.75, 0.75)
    mode: str = "blockwise"  # "blockwise" | "mae"

    def __post_init__(self):
        self.mask_schedule = tuple(float(r) for r in self.mask_schedule)
        if self.mode not in ("blockwise", "mae"):
            raise ContractError(f"plan mode must be blockwise or mae: {self.mode!r}")
        if self.mode == "mae":
            # a single global ratio applies; block count is ignored
            self.num_blocks = 1
            self.mask_schedule = self.mask_schedule[:1]
        if len(self.mask_schedule) != self.num_blocks:
            raise ScheduleError(
                f"schedule length {len(self.mask_schedule)} != "
                f"num_blocks {self.num_blocks}")
        if any(not 0.0 <= r < 1.0 for r in self.mask_schedule):
            raise ScheduleError(f"ratios must lie in [0, 1): {self.mask_schedule}")
        if any(b < a for a, b in zip(self.mask_schedule, self.mask_schedule[1:])):
            raise ScheduleError(
                f"masking ratios must be non-decreasing: {self.mask_schedule}")


@dataclass
class BlockwiseModel:
    """Encoder parameters plus per-block bridges/decoders, name-keyed."""

    spec: ModelSpec
    params: dict
    num_blocks: int
    init_seed: int
    dtype: object

    @property
    def layers_per_block(self):
        return self.spec.depth // self.num_blocks

    def param_bytes(self):
        return sum(v.nbytes for v in self.params.values())


@dataclass
class BlockUnit:
    """One contiguous encoder block with its bridge and local decoder."""

    block_id: int
    layer_ids: tuple
    model: BlockwiseModel

    def param_names(self):
        names = [n for n in self.model.params
                 if n.startswith(f"block{self.block_id}.")]
        names += [n for n in self.model.params
                  if any(n.startswith(f"enc.layer{j}.") for j in self.layer_ids)]
        if self.block_id == 0:
            names += [n for n in self.model.params if n.startswith("embed.")]
        return sorted(names)


@dataclass
class StepReport:
    """Per-block losses and the step's memory footprint."""

    losses: list
    mean_loss: float
    peak_activation_bytes: int
    grads_applied: list = field(default_factory=list)
    live_after_release: list = field(default_factory=list)


def build_model(spec, num_blocks, seed, dtype=np.float32):
    """Initialize encoder + per-block heads; partition-ready."""
    if spec.depth % num_blocks != 0:
        raise ContractError(
            f"depth {spec.depth} is not divisible into {num_blocks} blocks")
    params = init_encoder_params(spec, seed, dtype)
    for i in range(num_blocks):
        params.update(init_block_head_params(spec, i, seed, dtype))
    return BlockwiseModel(spec=spec, params=params, num_blocks=num_blocks,
                          init_seed=seed, dtype=dtype)


def partition_encoder(model, num_blocks):
    """Split the encoder into contiguous, disjoint, order-preserving blocks."""
    depth = model.spec.depth
    if depth % num_blocks != 0:
        raise ContractError(
            f"depth {depth} is not divisible into {num_blocks} blocks")
    if model.num_blocks != num_blocks:
        raise ContractError(
            f"model was built for {model.num_blocks} blocks, asked for "
            f"{num_blocks}")
    per = depth // num_blocks
    units = [BlockUnit(block_id=i,
                       layer_ids=tuple(range(i * per, (i + 1) * per)),
                       model=model)
             for i in range(num_blocks)]
    seen = set()
    for u in units:
        names = set(u.param_names())
        if names & seen:
            raise IsolationError("block parameter sets overlap")
        seen |= names
    return units


def param_block(name, layers_per_block):
    """Owning block of a parameter, by naming convention."""
    if name.startswith("embed."):
        return 0
    if name.startswith("enc.layer"):
        layer = int(name.split(".")[1][len("layer"):])
        return layer // layers_per_block
    if name.startswith("block"):
        return int(name.split(".")[0][len("block"):])
    raise ContractError(f"cannot place parameter {name!r} in a block")


def incremental_drop(tape, tokens, states, target_ratio, seed, block=None):
    """Uniformly drop visible tokens down to floor(N * (1 - target_ratio)).

    Returns (tokens, states) unchanged when the target keeps everything
    currently visible; dropping below the current count samples a subset
    of each sample's kept ids without replacement, so visibility nests.
    """
    n_patches = states[0].num_patches
    new_keep = int(np.floor(n_patches * (1.0 - target_ratio)))
    cur = states[0].num_visible
    if new_keep > cur:
        raise ScheduleError(
            f"target keep {new_keep} exceeds current visible {cur} "
            f"(ratios must be non-decreasing)")
    if new_keep == cur:
        return tokens, states
    sel = []
    new_states = []
    for i, s in enumerate(states):
        noise = rng.uniforms(rng.split(seed, "sample", i), cur)
        take = np.argsort(noise, kind="stable")[:new_keep]
        sel.append(take)
        kept = s.kept_ids[take]
        mask = np.ones(n_patches, dtype=np.int64)
        mask[kept] = 0
        new_states.append(type(s)(kept_ids=kept, mask=mask))
    out = tape.gather_rows(tokens, np.stack(sel), block=block)
    return out, new_states


def _run_step(blocks, images, plan, optimizer, lr, step_seed,
              update_blocks=None):
    """Shared forward/backward/release schedule for both training modes."""
    model = blocks[0].model
    spec = model.spec
    params = model.params
    num_blocks = len(blocks)
    batch = images.shape[0]
    tape = Tape()
    tape.meter.set_model_constants(
        param_bytes=model.param_bytes(),
        grad_bytes=max(sum(params[n].nbytes for n in u.param_names())
                       for u in blocks),
        optimizer_state_bytes=2 * max(
            sum(params[n].nbytes for n in u.param_names()) for u in blocks))

    states = [mask_indices(spec.num_patches, plan.mask_schedule[0],
                           rng.split(step_seed, "mask", i))
              for i in range(batch)]
    targets = patch_targets(images, spec)
    boundary_mode = None if plan.mode == "mae" else "block"

    losses = []
    grads_applied = []
    live_trace = []
    x = None
    prev_boundary = None
    for unit in blocks:
        i = unit.block_id
        with tape.block(i):
            if i == 0:
                x = embed_visible(tape, params, spec, images, states)
            for j in unit.layer_ids:
                x = encoder_block_layer(tape, params, f"enc.layer{j}", x,
                                        spec.heads)
            xb = tape.boundary(x) if i < num_blocks - 1 else None
            pred = local_decoder_forward(tape, params, spec, x, states, i)
            loss = reconstruction_loss(tape, pred, targets, spec, states,
                                       targets_are_patches=True)
        bound = None if boundary_mode is None else i
        table = tape.backward(loss, boundary_block=bound)
        for name in table:
            if param_block(name, model.layers_per_block) < i:
                raise IsolationError(
                    f"gradient for {name!r} leaked into block {i}")
        if update_blocks is None or i in update_blocks:
            optimizer.step(params, table, lr)
        losses.append(float(loss.value))
        grads_applied.append(len(table))
        tape.release_block_activations(i, keep=xb)
        if prev_boundary is not None:
            tape.dispose(prev_boundary)
        prev_boundary = xb
        live_trace.append(tape.meter.live_activation_bytes)
        if i < num_blocks - 1:
            x, states = incremental_drop(
                tape, xb, states, plan.mask_schedule[i + 1],
                rng.split(step_seed, "drop", i + 1), block=i + 1)
    if tape.meter.live_activation_bytes != 0:
        raise IsolationError(
            f"{tape.meter.live_activation_bytes} activation bytes leaked "
            f"past the step")
    return StepReport(losses=losses, mean_loss=float(np.mean(losses)),
                      peak_activation_bytes=tape.meter.peak_activation_bytes,
                      grads_applied=grads_applied,
                      live_after_release=live_trace)


def blockwise_train_step(blocks, images, plan, optimizer, lr, step_seed,
                         update_blocks=None):
    """One gradient-isolated step over all blocks (forward, local update,
    release, drop)."""
    if plan.mode != "blockwise":
        raise ContractError("blockwise_train_step needs a blockwise plan")
    if len(blocks) != plan.num_blocks:
        raise ContractError(
            f"plan expects {plan.num_blocks} blocks, got {len(blocks)}")
    return _run_step(blocks, images, plan, optimizer, lr, step_seed,
                     update_blocks)


def mae_train_step(blocks, images, ratio, optimizer, lr, step_seed):
    """End-to-end baseline: one forward, one full backward, one update."""
    if len(blocks) != 1:
        raise ContractError("the end-to-end baseline uses a single block")
    plan = BlockPlan(num_blocks=1, mask_schedule=(ratio,), mode="mae")
    return _run_step(blocks, images, plan, optimizer, lr, step_seed)
