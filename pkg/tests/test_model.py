import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attngen import autodiff as ad
from attngen.autodiff import Tensor
from attngen.errors import ShapeError
from attngen.model import (
    AttentionMap,
    AttnGenConfig,
    MaskPlan,
    apply_mask,
    attention_scores,
    attention_weights,
    attngen_loss,
    init_model,
    mask_count,
    random_mask_indices,
    select_mask_indices,
)
from attngen.rng import Xoshiro256pp
from oracles import cross_entropy_naive, kl_rows, min_sum_subset, position_means

SMALL = AttnGenConfig(length=16, embed_dim=6, kernel_size=4, channels=(4, 3, 2), fc_hidden=5)


def _tokens(rng_seed, batch, length):
    return Xoshiro256pp(rng_seed).nucleotides(batch * length).reshape(batch, length)


def test_init_deterministic():
    a, b = init_model(SMALL, 3), init_model(SMALL, 3)
    for name in a.params:
        assert a.params[name].data.tobytes() == b.params[name].data.tobytes()
    c = init_model(SMALL, 4)
    assert not np.array_equal(a.params["conv1.weight"].data, c.params["conv1.weight"].data)


def test_init_bn_and_bias():
    m = init_model(AttnGenConfig(), 42)
    for i in (1, 2, 3):
        assert np.all(m.params[f"bn{i}.gamma"].data == 1)
        assert np.all(m.params[f"bn{i}.beta"].data == 0)
        assert np.all(m.params[f"conv{i}.bias"].data == 0)
    w = m.params["conv1.weight"].data
    assert np.abs(w).max() <= math.sqrt(6 / (128 * 8))
    assert np.abs(m.params["embedding.weight"].data).max() <= 0.1


def test_config_lengths():
    cfg = AttnGenConfig()
    assert cfg.block_lengths() == [200, 100, 50, 25]
    assert cfg.flatten_dim == 100


def test_attention_scores_examples():
    e = Tensor([[[2.0, 4.0], [0.0, 0.0]]])
    np.testing.assert_array_equal(attention_scores(e).data, [[3.0, 0.0]])
    const = attention_scores(Tensor(np.full((1, 4, 3), 0.7))).data
    assert np.all(const == const[0, 0])


def test_attention_scores_matches_oracle(f64, rs):
    e = rs.randn(2, 5, 3)
    np.testing.assert_allclose(attention_scores(Tensor(e)).data, position_means(e), atol=1e-6)


def test_attention_weights_examples(f64):
    np.testing.assert_allclose(attention_weights(np.zeros((1, 200))).weights, 0.005)
    np.testing.assert_allclose(attention_weights(np.array([[0.0, math.log(3)]])).weights, [[0.25, 0.75]])
    s = np.array([[0.3, -1.2, 2.0]])
    np.testing.assert_allclose(attention_weights(s + 7.0).weights, attention_weights(s).weights, atol=1e-15)


def test_select_examples():
    plan = select_mask_indices(np.array([[0.1, 0.4, 0.2, 0.3]]), 0.5)
    assert plan.k == 2 and plan.indices.tolist() == [[0, 2]]
    plan = select_mask_indices(np.full((1, 4), 0.25), 0.5)
    assert plan.indices.tolist() == [[0, 1]]
    assert mask_count(0.1, 200) == 20


@pytest.mark.parametrize("alpha,k", [(0, 0), (0.1, 20), (0.2, 40), (0.25, 50), (0.5, 100), (0.75, 150), (1, 200)])
def test_mask_count_regimes(alpha, k):
    assert select_mask_indices(np.ones((1, 200)) / 200, alpha).k == k


@settings(max_examples=200, deadline=None)
@given(
    st.integers(1, 12).flatmap(lambda n: st.tuples(
        st.lists(st.integers(0, 4), min_size=n, max_size=n),
        st.floats(0, 1),
    ))
)
def test_select_equals_brute_force(case):
    levels, alpha = case
    # few distinct levels so ties are common
    weights = np.array(levels, dtype=np.float64) / 8.0
    plan = select_mask_indices(weights[None], alpha)
    assert plan.indices[0].tolist() == list(min_sum_subset(weights, plan.k))


def test_apply_mask_examples():
    tokens = np.array([[1, 2, 3, 4]])
    out = apply_mask(tokens, MaskPlan(0.5, 2, np.array([[1, 3]])))
    assert out.tolist() == [[1, 0, 3, 0]]
    assert tokens.tolist() == [[1, 2, 3, 4]]
    assert apply_mask(tokens, MaskPlan(0.0, 0, np.zeros((1, 0), dtype=int))).tolist() == tokens.tolist()
    full = select_mask_indices(np.ones((1, 4)), 1.0)
    assert apply_mask(tokens, full).tolist() == [[0, 0, 0, 0]]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1))
def test_apply_mask_touches_only_plan(seed, alpha):
    tokens = _tokens(seed, 3, 12)
    weights = Xoshiro256pp(seed + 1).random_array(36).reshape(3, 12)
    plan = select_mask_indices(weights, alpha)
    out = apply_mask(tokens, plan)
    for b in range(3):
        changed = np.flatnonzero(out[b] != tokens[b])
        assert changed.tolist() == plan.indices[b].tolist()  # all tokens nonzero


def test_random_mask_size_and_range():
    plan = random_mask_indices(4, 20, 0.25, Xoshiro256pp(0))
    assert plan.indices.shape == (4, 5)
    for row in plan.indices:
        assert len(set(row.tolist())) == 5 and row.min() >= 0 and row.max() < 20


def test_forward_shapes():
    m = init_model(AttnGenConfig(), 1)
    logits, att = m.forward(_tokens(0, 2, 200))
    assert logits.shape == (2, 2)
    assert att.weights.shape == (2, 200)
    np.testing.assert_allclose(att.weights.sum(axis=1), 1, atol=1e-6)
    assert np.all(att.weights > 0)


def test_forward_rejects_wrong_length():
    m = init_model(SMALL, 1)
    with pytest.raises(ShapeError):
        m.forward(np.zeros((1, 10), dtype=int))


def test_duplicate_rows_identical_logits():
    m = init_model(AttnGenConfig(), 1)
    row = _tokens(5, 1, 200)
    logits, _ = m.forward(np.repeat(row, 2, axis=0))
    assert logits.data[0].tobytes() == logits.data[1].tobytes()


def test_eval_forward_is_pure():
    m = init_model(AttnGenConfig(), 1)
    tokens = _tokens(9, 4, 200)
    a = m.forward(tokens)[0].data
    b = m.forward(tokens)[0].data
    assert a.tobytes() == b.tobytes()


def test_same_token_same_score():
    m = init_model(AttnGenConfig(), 1)
    tokens = _tokens(2, 3, 200)
    _, att = m.forward(tokens)
    for b in range(3):
        for tok in range(5):
            vals = att.scores[b][tokens[b] == tok]
            assert len(set(vals.tolist())) <= 1


def test_fused_and_embedding_paths_agree(f64):
    m = init_model(SMALL, 2)
    tokens = _tokens(1, 3, 16)
    a = m.head(m.embed(tokens)).data
    b = m.head(tokens=tokens).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_loss_alpha_zero():
    m = init_model(SMALL, 0)
    tokens, labels = _tokens(0, 8, 16), np.arange(8) % 2
    res = attngen_loss(m, tokens, labels, alpha=0.0, kl_weight=0.5, rng=Xoshiro256pp(1))
    assert res.kl == 0.0 and res.loss.item() == res.ce


def test_loss_lambda_zero():
    m = init_model(SMALL, 0)
    tokens, labels = _tokens(0, 8, 16), np.arange(8) % 2
    res = attngen_loss(m, tokens, labels, alpha=0.5, kl_weight=0.0, rng=Xoshiro256pp(1))
    assert res.loss.item() == res.ce


def test_loss_recomposition_oracle(f64):
    m = init_model(SMALL, 0)
    tokens, labels = _tokens(4, 8, 16), np.arange(8) % 2
    res = attngen_loss(m, tokens, labels, alpha=0.1, kl_weight=0.1, mode="eval")
    assert res.plan.k == 1
    clean = m.forward(tokens)[0].data
    masked = m.forward(apply_mask(tokens, res.plan))[0].data
    ce, kl = cross_entropy_naive(clean, labels), kl_rows(clean, masked)
    assert kl >= 0
    assert res.loss.item() == pytest.approx(ce + 0.1 * kl, abs=1e-5)


def test_loss_masked_pass_keeps_running_stats():
    m = init_model(SMALL, 0)
    tokens, labels = _tokens(4, 8, 16), np.arange(8) % 2
    m_ref = init_model(SMALL, 0)
    attngen_loss(m, tokens, labels, alpha=0.5, kl_weight=0.1, rng=Xoshiro256pp(1))
    attngen_loss(m_ref, tokens, labels, alpha=0.0, kl_weight=0.0, rng=Xoshiro256pp(1))
    for name in m.buffers:
        np.testing.assert_array_equal(m.buffers[name], m_ref.buffers[name])


def test_embedding_grad_reaches_both_passes(f64):
    m = init_model(SMALL, 0)
    tokens, labels = _tokens(4, 8, 16), np.arange(8) % 2
    res = attngen_loss(m, tokens, labels, alpha=0.5, kl_weight=1.0, rng=Xoshiro256pp(1))
    kl_only = res.loss - res.ce  # isolates the KL contribution
    kl_only.backward()
    assert np.abs(m.params["embedding.weight"].grad).sum() > 0
    # the pad row is only ever seen by the masked pass
    assert np.abs(m.params["embedding.weight"].grad[0]).sum() > 0


def _flat_param_fn(model, name, loss_fn):
    p = model.params[name]
    original = p.data

    def fn(t):
        p.data = t.data if isinstance(t, Tensor) else t
        saved = {k: v.copy() for k, v in model.buffers.items()}
        try:
            return loss_fn(model)
        finally:
            p.data = original
            for k, v in saved.items():
                model.buffers[k][...] = v

    return fn


def full_loss_grad_error(config, n_coords=20, seed=0, batch=6):
    """Max relative error of the full objective's parameter gradient vs FD."""
    with ad.precision("float64"):
        model = init_model(config, seed)
        tokens = _tokens(seed + 10, batch, config.length)
        labels = np.arange(batch) % 2

        def loss_fn(m):
            return attngen_loss(m, tokens, labels, alpha=0.25, kl_weight=0.5, mode="train",
                                rng=Xoshiro256pp(99)).loss

        saved = {k: v.copy() for k, v in model.buffers.items()}
        loss_fn(model).backward()
        for k, v in saved.items():
            model.buffers[k][...] = v
        pick = Xoshiro256pp(seed)
        # conv biases feed train-mode BN, which cancels them: their true
        # gradient is exactly 0 and FD returns pure rounding noise
        names = [n for n in model.params if not (n.startswith("conv") and n.endswith(".bias"))]
        worst = 0.0
        for _ in range(n_coords):
            name = names[pick.below(len(names))]
            p = model.params[name]
            idx = pick.below(p.size)
            fn = _flat_param_fn(model, name, lambda m: loss_fn(m).item())
            numeric = ad.numerical_grad(fn, p.data, h=1e-6, coords=[idx]).reshape(-1)[idx]
            analytic = p.grad.reshape(-1)[idx]
            worst = max(worst, float(ad.relative_error(analytic, numeric)))
        return worst


def test_full_loss_gradient_small():
    assert full_loss_grad_error(SMALL, n_coords=20) <= 1e-4
