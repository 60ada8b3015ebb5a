"""Model components: embedding, positions, masking, layers, decoder, loss."""

import numpy as np
import pytest

from blockmae import rng
from blockmae.model import (
    MaskState, ModelSpec, embed_visible, encoder_block_layer,
    init_block_head_params, init_encoder_params, local_decoder_forward,
    mask_indices, patch_embed, patch_targets, patchify, random_mask,
    reconstruction_loss, sincos_pos_embed, unpatchify,
)
from blockmae.tape import ContractError, Tape


def _toy_spec(**over):
    base = dict(image_size=16, patch_size=4, channels=1, embed_dim=16,
                depth=2, heads=2, mlp_ratio=2, decoder_dim=8, decoder_depth=1)
    base.update(over)
    return ModelSpec(**base)


def _images(spec, batch, seed=0, dtype=np.float64):
    n = batch * spec.channels * spec.image_size ** 2
    return (rng.uniforms(seed, n).reshape(
        batch, spec.channels, spec.image_size, spec.image_size).astype(dtype))


# ----- spec invariants -------------------------------------------------------

def test_spec_validation():
    with pytest.raises(ContractError):
        ModelSpec(image_size=30, patch_size=4)
    with pytest.raises(ContractError):
        ModelSpec(embed_dim=30, heads=4)
    with pytest.raises(ContractError):
        ModelSpec(depth=0)


def test_default_toy_preset_token_count():
    spec = ModelSpec()
    assert spec.image_size == 32 and spec.patch_size == 4
    assert spec.num_patches == 64


# ----- patchify / embed ------------------------------------------------------

def test_patchify_roundtrip_exact():
    spec = _toy_spec(channels=3)
    imgs = _images(spec, 2, seed=5)
    np.testing.assert_array_equal(unpatchify(patchify(imgs, spec), spec), imgs)


def test_patch_embed_token_count():
    spec = ModelSpec()
    params = init_encoder_params(spec, seed=1, dtype=np.float64)
    t = Tape()
    tok = patch_embed(t, params, spec, _images(spec, 2, seed=2))
    assert tok.shape == (2, 64, spec.embed_dim)


def test_patch_embed_zero_image_gives_positions():
    spec = _toy_spec()
    params = init_encoder_params(spec, seed=1, dtype=np.float64)
    params["embed.b"][:] = 0.0
    imgs = np.zeros((1, 1, 16, 16))
    t = Tape()
    tok = patch_embed(t, params, spec, imgs)
    want = sincos_pos_embed(spec.grid_side, spec.embed_dim)
    np.testing.assert_allclose(tok.value[0], want, atol=1e-15)


def test_embed_visible_matches_full_embed_gather():
    spec = _toy_spec()
    params = init_encoder_params(spec, seed=3, dtype=np.float64)
    imgs = _images(spec, 3, seed=4)
    states = [mask_indices(spec.num_patches, 0.5, rng.split(9, i))
              for i in range(3)]
    t = Tape()
    full = patch_embed(t, params, spec, imgs)
    gathered = t.gather_rows(full, np.stack([s.kept_ids for s in states]))
    t2 = Tape()
    vis = embed_visible(t2, params, spec, imgs, states)
    np.testing.assert_allclose(vis.value, gathered.value, atol=1e-14)


# ----- sin-cos positions ------------------------------------------------------

def test_sincos_origin_row():
    pe = sincos_pos_embed(4, 16)
    row = pe[0]
    quarter = 4
    assert np.all(row[:quarter] == 0.0)          # sin(x=0)
    assert np.all(row[quarter:2 * quarter] == 1.0)  # cos(x=0)
    assert np.all(row[2 * quarter:3 * quarter] == 0.0)
    assert np.all(row[3 * quarter:] == 1.0)


def test_sincos_pure():
    np.testing.assert_array_equal(sincos_pos_embed(8, 32), sincos_pos_embed(8, 32))


def test_sincos_rejects_indivisible_dim():
    with pytest.raises(ContractError):
        sincos_pos_embed(4, 18)


def test_sincos_rows_distinct_up_to_grid_16():
    pe = sincos_pos_embed(16, 16)
    # exhaustive pairwise distinctness
    for i in range(pe.shape[0]):
        diffs = np.abs(pe[i + 1:] - pe[i]).max(axis=1)
        assert diffs.size == 0 or diffs.min() > 1e-9


# ----- masking ----------------------------------------------------------------

def test_mask_keep_count_196():
    s = mask_indices(196, 0.75, seed=11)
    assert s.num_visible == 49


def test_mask_ratio_zero_identity():
    s = mask_indices(10, 0.0, seed=12)
    assert s.num_visible == 10
    assert np.all(s.mask == 0)
    # restore_perm inverts [kept..., (no masked)] back to original order
    assert np.array_equal(s.kept_ids[s.restore_perm], np.arange(10))


def test_mask_ratio_out_of_range():
    with pytest.raises(ContractError):
        mask_indices(10, 1.0, seed=1)
    with pytest.raises(ContractError):
        mask_indices(10, -0.1, seed=1)


def test_mask_partition_and_restore_perm_bijection():
    for trial in range(50):
        s = mask_indices(32, 0.6, seed=trial)
        assert s.num_visible + int(s.mask.sum()) == 32
        assert np.array_equal(np.sort(s.restore_perm), np.arange(32))
        # row restore_perm[orig] of [kept..., masked_sorted...] is patch orig
        masked = np.where(s.mask == 1)[0]
        order = np.concatenate([s.kept_ids, masked])
        assert np.array_equal(order[s.restore_perm], np.arange(32))


def test_mask_keep_frequency_monte_carlo():
    # frozen oracle: uniform shuffling keeps each patch w.p. 16/64 = 0.25
    n, trials = 64, 10_000
    counts = np.zeros(n)
    for trial in range(trials):
        counts[mask_indices(n, 0.75, seed=rng.split(777, trial)).kept_ids] += 1
    freq = counts / trials
    assert freq.min() > 0.23 and freq.max() < 0.27


def test_random_mask_gathers_in_kept_order():
    spec = _toy_spec()
    t = Tape()
    tokens = t.leaf(rng.normals(3, 2 * 16 * 8).reshape(2, 16, 8))
    pb = random_mask(t, tokens, 0.5, seed=21)
    assert pb.tokens.shape == (2, 8, 8)
    for i, s in enumerate(pb.states):
        np.testing.assert_array_equal(pb.tokens.value[i],
                                      tokens.value[i][s.kept_ids])


# ----- encoder layer ------------------------------------------------------------

def test_encoder_layer_preserves_shape():
    spec = ModelSpec(embed_dim=64, heads=4, depth=1)
    params = init_encoder_params(spec, seed=5, dtype=np.float64)
    t = Tape()
    x = t.leaf(rng.normals(6, 2 * 16 * 64).reshape(2, 16, 64))
    out = encoder_block_layer(t, params, "enc.layer0", x, spec.heads)
    assert out.shape == (2, 16, 64)


def test_encoder_layer_attention_rows_sum_to_one():
    spec = _toy_spec()
    params = init_encoder_params(spec, seed=7, dtype=np.float64)
    t = Tape()
    x = t.leaf(rng.normals(8, 1 * 6 * 16).reshape(1, 6, 16))
    encoder_block_layer(t, params, "enc.layer0", x, spec.heads)
    softmaxes = [n for n in t.nodes if n.kind == "softmax-lastdim"]
    assert len(softmaxes) == spec.heads
    for n in softmaxes:
        np.testing.assert_allclose(n.value.sum(-1), 1.0, rtol=1e-12)


def test_encoder_layer_gradient_matches_finite_diff():
    from blockmae.tape import finite_diff
    spec = ModelSpec(image_size=8, patch_size=4, embed_dim=8, heads=2, depth=1,
                     mlp_ratio=2, decoder_dim=8, decoder_depth=1)
    params = init_encoder_params(spec, seed=9, dtype=np.float64)
    x0 = rng.normals(10, 1 * 3 * 8).reshape(1, 3, 8)

    def loss_from(x_arr, tape_out=False):
        t = Tape()
        x = t.leaf(x_arr, name="x", requires_grad=True)
        out = encoder_block_layer(t, params, "enc.layer0", x, spec.heads)
        loss = t.mse_masked(out, t.leaf(np.zeros_like(out.value)),
                            t.leaf(np.ones(out.value.shape[:-1])))
        return (t, loss) if tape_out else float(loss.value)

    t, loss = loss_from(x0, tape_out=True)
    got = t.backward(loss)["x"]
    want = finite_diff(loss_from, x0, eps=1e-6)
    assert np.abs(got - want).max() / max(np.abs(want).max(), 1.0) < 1e-4


# ----- decoder -------------------------------------------------------------------

def _decoder_setup(ratio=0.5, batch=2, seed=31):
    spec = _toy_spec()
    params = init_block_head_params(spec, 0, seed=seed, dtype=np.float64)
    states = [mask_indices(spec.num_patches, ratio, rng.split(seed, "m", i))
              for i in range(batch)]
    t = Tape()
    z = t.leaf(rng.normals(seed + 1, batch * states[0].num_visible *
                           spec.embed_dim).reshape(
        batch, states[0].num_visible, spec.embed_dim))
    return spec, params, states, t, z


def test_decoder_covers_all_patches():
    spec, params, states, t, z = _decoder_setup()
    pred = local_decoder_forward(t, params, spec, z, states, 0)
    assert pred.shape == (2, spec.num_patches, spec.patch_pixels)


def test_decoder_zero_weights_final_bias_everywhere():
    spec, params, states, t, z = _decoder_setup()
    for name in params:
        params[name][:] = 0.0
    beta = rng.normals(55, spec.patch_pixels)
    params["block0.dec.pred.b"][:] = beta
    pred = local_decoder_forward(t, params, spec, z, states, 0)
    want = np.broadcast_to(beta, pred.value.shape)
    np.testing.assert_allclose(pred.value, want, atol=1e-14)


def test_decoder_invariant_to_kept_order_permutation():
    spec, params, states, t, z = _decoder_setup()
    pred = local_decoder_forward(t, params, spec, z, states, 0)

    # permute each sample's kept order together with its token rows
    t2 = Tape()
    perm = [rng.permutation(rng.split(77, i), s.num_visible)
            for i, s in enumerate(states)]
    z2 = t2.leaf(np.stack([z.value[i][perm[i]] for i in range(len(states))]))
    states2 = [MaskState(kept_ids=s.kept_ids[perm[i]], mask=s.mask)
               for i, s in enumerate(states)]
    pred2 = local_decoder_forward(t2, params, spec, z2, states2, 0)
    np.testing.assert_allclose(pred2.value, pred.value, atol=1e-12)


def test_decoder_rejects_inconsistent_state():
    spec, params, states, t, z = _decoder_setup()
    bad = [MaskState(kept_ids=s.kept_ids[:-1],
                     mask=np.where(np.arange(spec.num_patches) == s.kept_ids[-1],
                                   1, s.mask)) for s in states]
    with pytest.raises(ContractError):
        local_decoder_forward(t, params, spec, z, bad, 0)


# ----- loss ----------------------------------------------------------------------

def test_loss_zero_when_pred_equals_target():
    spec = _toy_spec()
    imgs = _images(spec, 2, seed=41)
    states = [mask_indices(spec.num_patches, 0.5, rng.split(42, i))
              for i in range(2)]
    t = Tape()
    pred = t.leaf(patch_targets(imgs, spec))
    loss = reconstruction_loss(t, pred, imgs, spec, states)
    assert float(loss.value) == 0.0


def test_loss_normalized_targets():
    spec = _toy_spec(norm_pix=True)
    imgs = _images(spec, 1, seed=43)
    tgt = patch_targets(imgs, spec)
    np.testing.assert_allclose(tgt.mean(-1), 0.0, atol=1e-9)
    np.testing.assert_allclose(tgt.var(-1), 1.0, atol=1e-3)


def test_loss_gradient_zero_on_unmasked_predictions():
    spec = _toy_spec()
    imgs = _images(spec, 2, seed=44)
    states = [mask_indices(spec.num_patches, 0.5, rng.split(45, i))
              for i in range(2)]
    t = Tape()
    pred = t.leaf(rng.normals(46, 2 * spec.num_patches * spec.patch_pixels)
                  .reshape(2, spec.num_patches, spec.patch_pixels),
                  name="pred", requires_grad=True)
    loss = reconstruction_loss(t, pred, imgs, spec, states)
    g = t.backward(loss)["pred"]
    for i, s in enumerate(states):
        assert np.all(g[i][s.kept_ids] == 0.0)
        masked = np.where(s.mask == 1)[0]
        assert np.abs(g[i][masked]).max() > 0.0


def test_forward_deterministic_given_seed():
    spec = _toy_spec()

    def run():
        params = init_encoder_params(spec, seed=99, dtype=np.float64)
        t = Tape()
        tok = patch_embed(t, params, spec, _images(spec, 2, seed=7))
        out = encoder_block_layer(t, params, "enc.layer0", tok, spec.heads)
        return out.value.copy()

    assert np.array_equal(run(), run())
