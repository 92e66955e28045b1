import numpy as np
import pytest

from chela import attention as attn
from chela import autodiff as ad
from chela.numerics import rms_norm, vjp_check
from chela.rng import Rng


def naive_softmax_attention(q, k, v, causal):
    """Per-row loop oracle with explicit normalization."""
    B, L, d = q.shape
    out = np.zeros_like(v)
    for b in range(B):
        for i in range(L):
            hi = L if not causal else i + 1
            s = np.array([q[b, i] @ k[b, j] for j in range(hi)]) / np.sqrt(d)
            w = np.exp(s - s.max())
            w /= w.sum()
            out[b, i] = sum(w[j] * v[b, j] for j in range(hi))
    return out


def qkv(seed, B, L, d):
    rng = Rng(seed)
    return rng.normal((B, L, d)), rng.normal((B, L, d)), rng.normal((B, L, d))


class TestSoftmaxAttention:
    def test_equal_scores_average_values(self):
        v = Rng(0).normal((1, 6, 4))
        q = np.ones((1, 6, 4))
        k = np.ones((1, 6, 4))
        out = attn.softmax_attention(q, k, v)
        assert np.allclose(out, v.mean(axis=1, keepdims=True))

    def test_causal_first_token_copies_first_value(self):
        q, k, v = qkv(1, 2, 5, 3)
        out = attn.softmax_attention(q, k, v, causal=True)
        assert np.allclose(out[:, 0], v[:, 0])

    @pytest.mark.parametrize("causal", [False, True])
    def test_matches_row_loop_oracle(self, causal):
        q, k, v = qkv(2, 2, 9, 4)
        got = attn.softmax_attention(q, k, v, causal=causal)
        want = naive_softmax_attention(q, k, v, causal)
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_large_scores_stay_finite(self):
        q, k, v = qkv(3, 1, 4, 2)
        out = attn.softmax_attention(q * 1e4, k * 1e4, v, causal=True)
        assert np.all(np.isfinite(out))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            attn.softmax_attention(np.zeros((1, 4, 2)), np.zeros((1, 4, 3)),
                                   np.zeros((1, 4, 3)))


class TestCausalLinearEquivalence:
    @pytest.mark.parametrize("chunk", [1, 3, 7, 16, 33, 64])
    @pytest.mark.parametrize("L", [1, 5, 32, 33])
    def test_three_forms_agree(self, chunk, L):
        q, k, v = qkv(10 * L + chunk, 2, L, 8)
        dense = attn.dense_masked_linear_attention(q, k, v)
        rec = attn.linear_attention_recurrent(q, k, v)
        chk = attn.linear_attention_chunked(q, k, v, chunk)
        scale = max(1.0, np.max(np.abs(dense)))
        assert np.max(np.abs(rec - dense)) / scale <= 1e-12
        assert np.max(np.abs(chk - dense)) / scale <= 1e-12

    def test_single_token_hand_value(self):
        q = np.array([[[2.0, 0.0]]])
        k = np.array([[[1.0, 1.0]]])
        v = np.array([[[3.0, -1.0]]])
        # pre-norm output: q1 * (k1^T v1) = [6, -2]; rms = sqrt(20)
        pre = np.array([6.0, -2.0])
        want = pre / np.sqrt(np.mean(pre ** 2) + 1e-6)
        out = attn.linear_attention_recurrent(q, k, v)
        assert np.max(np.abs(out[0, 0] - want)) <= 1e-12

    def test_noncausal_full_prefix_matches_causal_last_row(self):
        # at the final position the causal state holds every key/value pair
        q, k, v = qkv(11, 1, 12, 4)
        nc = attn.linear_attention_noncausal(q, k, v)
        rec = attn.linear_attention_recurrent(q, k, v)
        assert np.max(np.abs(nc[:, -1] - rec[:, -1])) <= 1e-12

    def test_causality_perturbation(self):
        q, k, v = qkv(12, 1, 24, 6)
        base = attn.linear_attention_chunked(q, k, v, 8)
        t = 13
        kp = k.copy()
        kp[0, t] += 1.0
        pert = attn.linear_attention_chunked(q, kp, v, 8)
        assert np.max(np.abs(pert[0, :t] - base[0, :t])) <= 1e-13
        assert np.max(np.abs(pert[0, t:] - base[0, t:])) > 0.0

    def test_gain_scales_output(self):
        q, k, v = qkv(13, 1, 8, 4)
        g = np.array([2.0, 1.0, 0.5, -1.0])
        out = attn.linear_attention_chunked(q, k, v, 4, gain=g)
        base = attn.linear_attention_chunked(q, k, v, 4)
        assert np.max(np.abs(out - base * g)) <= 1e-12

    def test_invalid_chunk_rejected(self):
        q, k, v = qkv(14, 1, 4, 2)
        with pytest.raises(ValueError):
            attn.linear_attention_chunked(q, k, v, 0)


class TestTracedForms:
    def test_chunked_traced_matches_ndarray_prenorm(self):
        q, k, v = qkv(20, 2, 17, 5)
        out = attn.chunked_linear_attention_v(ad.Var(q), ad.Var(k), ad.Var(v), 4)
        want = attn.linear_attention_chunked(q, k, v, 4, eps=0.0)
        got = rms_norm(out.value, np.ones(5), eps=0.0)
        assert np.max(np.abs(got - want)) / max(1.0, np.max(np.abs(want))) <= 1e-12

    def test_recurrent_traced_matches_chunked_traced(self):
        q, k, v = qkv(21, 1, 10, 4)
        a = attn.chunked_linear_attention_v(ad.Var(q), ad.Var(k), ad.Var(v), 3)
        b = attn.recurrent_linear_attention_v(ad.Var(q), ad.Var(k), ad.Var(v))
        assert np.max(np.abs(a.value - b.value)) <= 1e-12

    def test_chunked_gradient_matches_finite_differences(self):
        rng = Rng(22)
        err = vjp_check(
            lambda q, k, v: attn.chunked_linear_attention_v(q, k, v, 4),
            [rng.normal((1, 12, 4)), rng.normal((1, 12, 4)), rng.normal((1, 12, 4))])
        assert err <= 1e-6

    def test_traced_gradients_agree_between_forms(self):
        q, k, v = qkv(23, 1, 9, 3)
        qa, ka, va = ad.Var(q), ad.Var(k), ad.Var(v)
        ga = ad.grad(ad.vsum(ad.mul(attn.chunked_linear_attention_v(qa, ka, va, 2),
                                    attn.chunked_linear_attention_v(qa, ka, va, 2))),
                     [qa, ka, va])
        qb, kb, vb = ad.Var(q), ad.Var(k), ad.Var(v)
        gb = ad.grad(ad.vsum(ad.mul(attn.recurrent_linear_attention_v(qb, kb, vb),
                                    attn.recurrent_linear_attention_v(qb, kb, vb))),
                     [qb, kb, vb])
        for x, y in zip(ga, gb):
            assert np.max(np.abs(x - y)) / max(1.0, np.max(np.abs(y))) <= 1e-10


class TestStateFootprint:
    def test_hand_value(self):
        # 8 * (2*64^2 + 2*64^2 + 4*64*64) = 262144
        assert attn.chunked_state_bytes(64, 64) == 262144

    def test_independent_of_length_by_construction(self):
        a = attn.chunked_state_bytes(32, 16)
        assert a == 8 * (2 * 32 * 32 + 2 * 16 * 16 + 4 * 16 * 32)

    def test_monotone_in_chunk(self):
        vals = [attn.chunked_state_bytes(64, c) for c in (8, 16, 32, 64, 128)]
        assert vals == sorted(vals)
