import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from biclip.autodiff import Tensor, grad_check, mean
from biclip.autodiff import ops
from biclip.bmf import (
    FusionMLP,
    ImageToTextHead,
    PseudoImageGenerator,
    cycle_loss,
    fuse,
    gen_loss,
    generate_pseudo,
    image_to_text,
    pseudo_supervision,
)
from biclip.encoders import ImageEncoder, StubTextSource, TextProjection, encode_image_global, project_text
from biclip.errors import ShapeError
from biclip.nn import Linear


def linear_with(weight, bias=None):
    lin = Linear(weight.shape[1], weight.shape[0], np.random.default_rng(0))
    lin.weight.data = np.asarray(weight, np.float32)
    lin.bias.data = np.zeros(weight.shape[0], np.float32) if bias is None else np.asarray(bias, np.float32)
    return lin


class TestProjectText:
    def test_identity(self):
        t = project_text(np.array([1.0, 2.0]), linear_with(np.eye(2)))
        np.testing.assert_array_equal(t.data, [1.0, 2.0])

    def test_zero_map(self, rng):
        t = project_text(rng.normal(size=5), linear_with(np.zeros((3, 5))))
        np.testing.assert_array_equal(t.data, np.zeros(3))

    def test_matches_matvec_oracle(self, rng):
        w, b, raw = rng.normal(size=(6, 4)), rng.normal(size=6), rng.normal(size=4)
        t = project_text(raw, linear_with(w, b))
        np.testing.assert_allclose(t.data, w @ raw + b, rtol=1e-5, atol=1e-6)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            project_text(np.zeros(3), linear_with(np.zeros((2, 4))))

    def test_raw_source_never_receives_gradient(self, rng):
        proj = TextProjection(4, 3, rng)
        raw = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        before = raw.data.copy()
        ops.sum(proj(raw) * proj(raw)).backward()
        assert raw.grad is None
        assert proj.proj.weight.grad is not None
        np.testing.assert_array_equal(raw.data, before)


class TestImageEncoder:
    def test_zero_image_zero_bias(self, rng):
        enc = ImageEncoder(5, rng)
        for conv in enc.blocks:
            conv.bias.data[:] = 0
        enc.head.bias.data[:] = 0
        i = encode_image_global(np.zeros((3, 32, 32), np.float32), enc)
        np.testing.assert_array_equal(i.data, np.zeros(5))

    @pytest.mark.parametrize("side", [16, 24, 40, 64])
    def test_output_shape(self, rng, side):
        enc = ImageEncoder(7, rng)
        assert encode_image_global(rng.random((3, side, side)), enc).shape == (7,)

    def test_too_small(self, rng):
        with pytest.raises(ShapeError):
            encode_image_global(np.zeros((3, 8, 8)), ImageEncoder(4, rng))

    def test_sensitive_to_brightness(self):
        enc = ImageEncoder(8, np.random.default_rng(3))
        x = np.random.default_rng(4).random((3, 32, 32)).astype(np.float32) * 0.5
        a = encode_image_global(x, enc).data
        b = encode_image_global(x + 0.3, enc).data
        assert not np.array_equal(a, b)

    def test_deterministic(self, rng):
        enc = ImageEncoder(8, rng)
        x = rng.random((3, 16, 16))
        assert encode_image_global(x, enc).data.tobytes() == encode_image_global(x, enc).data.tobytes()


class TestFuse:
    def test_residual_identity_at_init(self, rng):
        g = FusionMLP(4, 3, rng)
        for _ in range(100):
            t = Tensor(rng.normal(size=4))
            _, _, t_ref = fuse(t, Tensor(rng.normal(size=3)), g)
            assert t_ref.data.tobytes() == t.data.tobytes()

    def test_forced_delta(self, rng):
        g = FusionMLP(2, 2, rng)
        g.fc2.bias.data = np.array([0.0, 1.0], np.float32)
        z, delta, t_ref = fuse(Tensor([1.0, 0.0]), Tensor([0.3, -0.2]), g)
        np.testing.assert_array_equal(delta.data, [0.0, 1.0])
        np.testing.assert_array_equal(t_ref.data, [1.0, 1.0])
        np.testing.assert_array_equal(z.data, np.float32([1.0, 0.0, 0.3, -0.2]))

    def test_matches_two_layer_oracle(self, rng):
        g = FusionMLP(3, 2, rng, hidden=7)
        g.fc2.weight.data = rng.normal(size=(3, 7)).astype(np.float32)
        g.fc2.bias.data = rng.normal(size=3).astype(np.float32)
        t, i = rng.normal(size=3), rng.normal(size=2)
        _, delta, t_ref = fuse(Tensor(t), Tensor(i), g)
        z = np.concatenate([t, i])
        hidden = np.maximum(g.fc1.weight.data.astype(np.float64) @ z + g.fc1.bias.data, 0)
        oracle = g.fc2.weight.data.astype(np.float64) @ hidden + g.fc2.bias.data
        np.testing.assert_allclose(delta.data, oracle, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(t_ref.data, t + oracle, rtol=1e-5, atol=1e-6)

    def test_default_hidden_width(self, rng):
        assert FusionMLP(4, 6, rng).fc1.weight.shape == (20, 10)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            fuse(Tensor(np.zeros(3)), Tensor(np.zeros(3)), FusionMLP(4, 3, rng))


class TestPseudoImage:
    def test_shape(self, rng):
        gen = PseudoImageGenerator(8, 64, rng)
        assert generate_pseudo(Tensor(rng.normal(size=8)), gen).shape == (1, 64, 64)

    def test_range_and_determinism(self, rng):
        gen = PseudoImageGenerator(8, 32, rng)
        t = Tensor(rng.normal(size=(3, 8)) * 10)
        a, b = generate_pseudo(t, gen).data, generate_pseudo(t, gen).data
        assert a.min() >= 0 and a.max() <= 1
        assert a.tobytes() == b.tobytes()

    def test_side_must_divide_by_eight(self, rng):
        with pytest.raises(ShapeError):
            PseudoImageGenerator(8, 30, rng)

    def test_image_to_text_zero(self, rng):
        h = ImageToTextHead(6, rng)
        for conv in h.convs:
            conv.bias.data[:] = 0
        out = image_to_text(Tensor(np.zeros((1, 16, 16))), h)
        np.testing.assert_array_equal(out.data, np.zeros(6))

    def test_image_to_text_shape(self, rng):
        assert image_to_text(Tensor(rng.random((1, 24, 24))), ImageToTextHead(5, rng)).shape == (5,)

    def test_image_to_text_gradient(self, rng):
        h = ImageToTextHead(4, rng).astype(np.float64)
        h.fc.weight.data = rng.normal(size=h.fc.weight.shape)
        report = grad_check(lambda p: ops.sum(image_to_text(p, h) * np.arange(1.0, 5.0)), rng.random((1, 8, 8)), tol=1e-3, kink_rtol=1e-4)
        assert report.passed, report.summary()

    def test_supervision_is_mask_resampled(self):
        mask = np.zeros((1, 4, 4), np.float32)
        mask[0, :2, :2] = 1
        np.testing.assert_array_equal(pseudo_supervision(mask, 8)[0], np.kron(mask[0], np.ones((2, 2))))


class TestLosses:
    def test_cycle_examples(self):
        assert cycle_loss(Tensor([1.0, 0.0]), Tensor([1.0, 0.0])).item() == 0.0
        assert cycle_loss(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 2.0
        assert cycle_loss(Tensor([0.0, 0.0]), Tensor([0.0, 0.0])).item() == 0.0

    @given(
        arrays(np.int64, 5, elements=st.integers(-1000, 1000)),
        arrays(np.int64, 5, elements=st.integers(-1000, 1000)),
    )
    def test_cycle_symmetric_and_zero_iff_equal(self, a, b):
        a, b = a / 100.0, b / 100.0
        ab = cycle_loss(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).item()
        ba = cycle_loss(Tensor(b, dtype=np.float64), Tensor(a, dtype=np.float64)).item()
        assert ab == ba
        assert (ab == 0) == np.array_equal(a, b)

    def test_cycle_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cycle_loss(Tensor([1.0]), Tensor([1.0, 2.0]))

    def test_gen_examples(self):
        x = Tensor(np.full((1, 4, 4), 0.3))
        assert gen_loss(x, x.data).item() == 0.0
        assert gen_loss(Tensor(np.ones((1, 4, 4))), np.zeros((1, 4, 4))).item() == 1.0
        assert gen_loss(Tensor([0.2, 0.8]), np.array([0.0, 1.0])).item() == pytest.approx(0.2)

    def test_gen_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gen_loss(Tensor(np.zeros((1, 4, 4))), np.zeros((1, 4, 5)))


class TestBidirectional:
    def test_cycle_loss_reaches_fusion_and_image_encoder(self, rng):
        enc, g = ImageEncoder(4, rng), FusionMLP(4, 4, rng)
        gen, h = PseudoImageGenerator(4, 16, rng), ImageToTextHead(4, rng)
        # break the zero init so every path carries signal
        g.fc2.weight.data = rng.normal(size=g.fc2.weight.shape).astype(np.float32)
        h.fc.weight.data = rng.normal(size=h.fc.weight.shape).astype(np.float32)
        t = Tensor(rng.normal(size=4))
        i = encode_image_global(rng.random((3, 16, 16)), enc)
        _, _, t_ref = fuse(t, i, g)
        cycle_loss(t, image_to_text(generate_pseudo(t_ref, gen), h)).backward()
        assert np.any(g.fc1.weight.grad != 0) and np.any(g.fc2.weight.grad != 0)
        assert np.any(enc.blocks[0].weight.grad != 0) and np.any(enc.head.weight.grad != 0)


class TestStubSource:
    def test_fixed_and_frozen(self):
        a, b = StubTextSource(8, 11), StubTextSource(8, 11)
        np.testing.assert_array_equal(a.matrix, b.matrix)
        with pytest.raises(ValueError):
            a.matrix[0, 0] = 1.0

    def test_embed_is_linear(self, rng):
        s = StubTextSource(8, 11)
        v = rng.random(11)
        np.testing.assert_allclose(s.embed(v), s.matrix @ v.astype(np.float32), rtol=1e-6)


def test_mean_reduces_all(rng):
    x = rng.normal(size=(2, 3))
    assert mean(Tensor(x, dtype=np.float64)).item() == pytest.approx(x.mean())
