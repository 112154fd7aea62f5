import numpy as np
import pytest

from skb.embedding import RefineNetwork, SketchEmbedder
from skb.gradcheck import promote_to_float64
from skb.model import ModelConfig
from skb.tensor import ShapeError, Tensor, zero_grads


@pytest.fixture
def embedder(rng):
    return SketchEmbedder(embed_dim=8, hidden=12, max_len=16, stroke_cap=6, rng=rng)


@pytest.fixture
def default_embedder():
    rng = np.random.default_rng(0)
    cfg = ModelConfig()
    return SketchEmbedder(cfg.embed_dim, cfg.encoder.hidden, cfg.max_len,
                          cfg.stroke_cap, rng)


class TestPointEmbedding:
    def test_zero_point_maps_to_zero(self, embedder):
        out = embedder.embed_points(np.zeros((3, 5), dtype=np.float32))
        np.testing.assert_array_equal(out.data, np.zeros((3, 8)))

    def test_default_width_is_128(self, default_embedder):
        out = default_embedder.embed_points(np.zeros((1, 5), dtype=np.float32))
        assert out.shape == (1, 128)

    def test_dot_product_oracle(self, embedder, rng):
        point = rng.normal(size=(1, 5)).astype(np.float32)
        out = embedder.embed_points(point).data[0]
        w = embedder.w_pt.data
        for k in range(8):
            expected = sum(float(w[k, j]) * float(point[0, j]) for j in range(5))
            assert abs(out[k] - expected) < 1e-5

    def test_linearity(self, embedder, rng):
        p = rng.normal(size=(4, 5)).astype(np.float32)
        q = rng.normal(size=(4, 5)).astype(np.float32)
        lhs = embedder.embed_points(2.0 * p + 0.5 * q).data
        rhs = 2.0 * embedder.embed_points(p).data + 0.5 * embedder.embed_points(q).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)

    def test_permutation_moves_point_rows_not_positions(self, embedder, rng):
        pts = rng.normal(size=(5, 5)).astype(np.float32)
        swapped = pts.copy()
        swapped[[1, 3]] = swapped[[3, 1]]
        e1 = embedder.embed_points(pts).data
        e2 = embedder.embed_points(swapped).data
        np.testing.assert_array_equal(e2[[3, 1]], e1[[1, 3]])
        # positional rows depend only on the index
        np.testing.assert_array_equal(
            embedder.embed_positions(5).data, embedder.embed_positions(5).data
        )


class TestPositionalEmbedding:
    def test_rows_are_table_rows(self, embedder):
        out = embedder.embed_positions(4).data
        np.testing.assert_array_equal(out, embedder.w_ps.data[:4])

    def test_deterministic(self, embedder):
        np.testing.assert_array_equal(
            embedder.embed_positions(7).data, embedder.embed_positions(7).data
        )

    def test_beyond_max_len_raises(self, embedder):
        with pytest.raises(ValueError, match="max_len"):
            embedder.embed_positions(17)

    def test_default_max_len_250(self, default_embedder):
        assert default_embedder.max_len == 250
        assert default_embedder.embed_positions(250).shape == (250, 128)


class TestStrokeEmbedding:
    def test_single_stroke_rows_identical(self, embedder):
        out = embedder.embed_strokes(np.zeros(5, dtype=np.int32)).data
        for row in out[1:]:
            np.testing.assert_array_equal(row, out[0])

    def test_lookup_rows(self, embedder):
        out = embedder.embed_strokes(np.array([0, 0, 1])).data
        w = embedder.w_str.data
        np.testing.assert_array_equal(out, w[[0, 0, 1]])

    def test_default_cap_50(self, default_embedder):
        assert default_embedder.stroke_cap == 50

    def test_id_at_cap_raises(self, embedder):
        with pytest.raises(ValueError, match="cap"):
            embedder.embed_strokes(np.array([6]))


class TestCombineRefine:
    def test_refine_widths(self):
        rng = np.random.default_rng(1)
        net = RefineNetwork(128, 768, rng)
        widths = [(l.w.data.shape) for l in net.layers]
        assert widths == [(128, 256), (256, 512), (512, 768)]

    def test_output_width_768_default(self, default_embedder, rng):
        pts = rng.normal(size=(1, 3, 5)).astype(np.float32)
        out = default_embedder.forward(pts, np.zeros((1, 3), dtype=np.int32))
        assert out.shape == (1, 3, 768)

    def test_zero_embeddings_give_refined_zero(self, embedder):
        z = Tensor(np.zeros((2, 8), dtype=np.float32))
        out = embedder.combine_and_refine(z, z, z)
        ref = embedder.refine(Tensor(np.zeros((2, 8), dtype=np.float32)))
        np.testing.assert_array_equal(out.data, ref.data)

    def test_shape_mismatch(self, embedder):
        a = Tensor(np.zeros((2, 8), dtype=np.float32))
        bad = Tensor(np.zeros((2, 7), dtype=np.float32))
        with pytest.raises(ShapeError):
            embedder.combine_and_refine(a, a, bad)

    def test_single_row_against_float64_oracle(self, embedder, rng):
        promote_to_float64(embedder.parameters())
        pts = rng.normal(size=(1, 5))
        ids = np.zeros(1, dtype=np.int32)
        out = embedder.forward(pts, ids).data[0]
        # explicit add-then-MLP in float64
        w = embedder.w_pt.data
        x = w @ pts[0] + embedder.w_ps.data[0] + embedder.w_str.data[0]
        for i, layer in enumerate(embedder.refine.layers):
            x = x @ layer.w.data + layer.b.data
            if i < 2:
                c = np.sqrt(2 / np.pi)
                x = 0.5 * x * (1 + np.tanh(c * (x + 0.044715 * x**3)))
        np.testing.assert_allclose(out, x, rtol=1e-6)


class TestSpecialTokens:
    def test_empty_body(self, embedder):
        seq = Tensor(np.zeros((0, 12), dtype=np.float32))
        out, mask = embedder.prepend_special("cls", seq, np.zeros(0, dtype=np.float32))
        assert out.shape == (1, 12)
        np.testing.assert_array_equal(mask, [1.0])
        np.testing.assert_array_equal(out.data[0], embedder.cls_token.data)

    def test_length_grows_by_one(self, embedder, rng):
        seq = Tensor(rng.normal(size=(2, 5, 12)).astype(np.float32))
        mask = np.ones((2, 5), dtype=np.float32)
        out, new_mask = embedder.prepend_special("ret", seq, mask)
        assert out.shape == (2, 6, 12)
        assert new_mask.shape == (2, 6)
        np.testing.assert_array_equal(out.data[:, 1:], seq.data)

    def test_cls_and_ret_differ(self, embedder):
        assert not np.array_equal(embedder.cls_token.data, embedder.ret_token.data)

    def test_unknown_token(self, embedder):
        with pytest.raises(ValueError, match="unknown special token"):
            embedder.prepend_special("sep", Tensor(np.zeros((1, 12))), np.ones(1))


class TestGradientFlow:
    def test_used_rows_get_grad_unused_stay_zero(self, embedder, rng):
        pts = rng.normal(size=(1, 3, 5)).astype(np.float32)
        ids = np.array([[0, 0, 1]], dtype=np.int32)
        zero_grads(embedder.parameters())
        out = embedder.forward(pts, ids)
        (out * out).sum().backward()
        ps_grad = embedder.w_ps.grad
        assert np.abs(ps_grad[:3]).sum() > 0
        np.testing.assert_array_equal(ps_grad[3:], np.zeros_like(ps_grad[3:]))
        str_grad = embedder.w_str.grad
        assert np.abs(str_grad[:2]).sum() > 0
        np.testing.assert_array_equal(str_grad[2:], np.zeros_like(str_grad[2:]))
        assert np.abs(embedder.w_pt.grad).sum() > 0
