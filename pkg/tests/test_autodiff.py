import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from biclip.autodiff import (
    Graph,
    Tensor,
    concat_channels,
    conv2d,
    cosine_similarity,
    grad_check,
    make_node,
    matmul,
    max_pool2d,
    mean,
    no_grad,
    relu,
    sigmoid,
    split_channels,
)
from biclip.autodiff import ops
from biclip.errors import DegenerateInputError, GraphError, ShapeError


def sq(t):
    return t * t


def leaf(values, dtype=np.float32):
    return Tensor(np.asarray(values, dtype=dtype), requires_grad=True)


class TestConv2d:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 3, 5, 4)).astype(np.float32)
        kernel = np.zeros((3, 3, 1, 1), dtype=np.float32)
        kernel[np.arange(3), np.arange(3)] = 1.0
        out = conv2d(Tensor(x), Tensor(kernel))
        np.testing.assert_array_equal(out.data, x)

    def test_single_channel_unit_kernel(self, rng):
        x = rng.normal(size=(1, 1, 4, 4)).astype(np.float32)
        out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1), dtype=np.float32)))
        np.testing.assert_array_equal(out.data, x)

    def test_two_by_two_dot_product(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        k = Tensor(np.array([[[[1.0, 0.0], [0.0, 1.0]]]]))
        np.testing.assert_array_equal(conv2d(x, k).data, [[[[5.0]]]])

    def test_averaging_constant(self):
        x = Tensor(np.full((1, 1, 5, 5), 0.7))
        k = Tensor(np.full((1, 1, 3, 3), 1.0 / 9.0))
        out = conv2d(x, k).data
        assert out.shape == (1, 1, 3, 3)
        np.testing.assert_allclose(out, 0.7, rtol=1e-6)

    def test_matches_direct_loop(self, rng):
        x = rng.normal(size=(2, 3, 7, 6))
        k = rng.normal(size=(4, 3, 3, 2))
        stride, pad = 2, 1
        out = conv2d(Tensor(x, dtype=np.float64), Tensor(k, dtype=np.float64), stride=stride, padding=pad).data
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        ho = (7 + 2 * pad - 3) // stride + 1
        wo = (6 + 2 * pad - 2) // stride + 1
        ref = np.zeros((2, 4, ho, wo))
        for n in range(2):
            for f in range(4):
                for i in range(ho):
                    for j in range(wo):
                        patch = xp[n, :, i * stride : i * stride + 3, j * stride : j * stride + 2]
                        ref[n, f, i, j] = np.sum(patch * k[f])
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    @given(
        h=st.integers(3, 9),
        w=st.integers(3, 9),
        kh=st.integers(1, 3),
        kw=st.integers(1, 3),
        stride=st.integers(1, 3),
        pad=st.integers(0, 2),
    )
    def test_output_shape(self, h, w, kh, kw, stride, pad):
        out = conv2d(Tensor(np.zeros((1, 2, h, w))), Tensor(np.zeros((3, 2, kh, kw))), stride=stride, padding=pad)
        assert out.shape == (1, 3, (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1)

    def test_channel_mismatch_names_dimensions(self):
        with pytest.raises(ShapeError, match="channel"):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_kernel_larger_than_padded_input(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))

    def test_forward_and_backward_leave_input_unchanged(self, rng):
        x = leaf(rng.normal(size=(1, 2, 5, 5)))
        k = leaf(rng.normal(size=(3, 2, 3, 3)))
        x0, k0 = x.data.copy(), k.data.copy()
        ops.sum(conv2d(x, k, padding=1)).backward()
        np.testing.assert_array_equal(x.data, x0)
        np.testing.assert_array_equal(k.data, k0)


class TestPrimitives:
    def test_relu(self):
        np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_relu_kink_gradient_is_zero(self):
        x = leaf([0.0, 1.0])
        ops.sum(relu(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_sigmoid_zero(self):
        assert sigmoid(Tensor([0.0])).data[0] == np.float32(0.5)

    def test_cosine_orthogonal(self):
        assert cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0

    def test_cosine_zero_vector_rejected(self):
        with pytest.raises(DegenerateInputError):
            cosine_similarity(Tensor([0.0, 0.0]), Tensor([0.0, 1.0]))

    @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e4, 1e4)))
    def test_sigmoid_strictly_inside_unit_interval(self, x):
        y = sigmoid(Tensor(x, dtype=np.float32)).data
        assert np.all(y > 0) and np.all(y < 1)

    @given(
        arrays(np.float64, 4, elements=st.floats(-10, 10)),
        arrays(np.float64, 4, elements=st.floats(-10, 10)),
    )
    def test_cosine_in_range(self, a, b):
        if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
            return
        c = cosine_similarity(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).item()
        assert -1.0 - 1e-12 <= c <= 1.0 + 1e-12

    @given(st.integers(1, 3), st.integers(1, 3))
    def test_concat_then_split_recovers(self, ca, cb):
        rng = np.random.default_rng(ca * 10 + cb)
        a = rng.normal(size=(2, ca, 3, 3)).astype(np.float32)
        b = rng.normal(size=(2, cb, 3, 3)).astype(np.float32)
        cat = concat_channels(Tensor(a), Tensor(b))
        assert cat.shape[1] == ca + cb
        a2, b2 = split_channels(cat, ca)
        np.testing.assert_array_equal(a2.data, a)
        np.testing.assert_array_equal(b2.data, b)

    def test_max_pool_floor(self):
        x = Tensor(np.arange(25, dtype=np.float32).reshape(1, 1, 5, 5))
        out = max_pool2d(x, 2).data
        np.testing.assert_array_equal(out[0, 0], [[6, 8], [16, 18]])

    def test_nearest_upsample(self):
        out = ops.nearest_upsample2d(Tensor(np.array([[[[1.0, 2.0]]]])), 2).data
        np.testing.assert_array_equal(out[0, 0], [[1, 1, 2, 2], [1, 1, 2, 2]])

    def test_distances(self):
        assert ops.l1_distance(Tensor([0.2, 0.8]), Tensor([0.0, 1.0])).item() == pytest.approx(0.2)
        assert ops.squared_l2_distance(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 2.0

    def test_float32_default(self):
        assert Tensor([1.0, 2.0]).dtype == np.float32


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = leaf(rng.normal(size=(3, 4)))
        ops.sum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_square(self):
        x = leaf([1.0, 2.0, 3.0])
        ops.sum(x * x).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_mean_sigmoid_matmul_vs_finite_differences(self, rng):
        w = rng.normal(scale=0.5, size=(4, 3))
        x = rng.normal(size=(3, 2))

        def fn(wt):
            return mean(sigmoid(matmul(wt, Tensor(x, dtype=wt.dtype))))

        report = grad_check(fn, w.astype(np.float32), tol=1e-3)
        assert report.passed, report.summary()

    def test_accumulates_across_calls(self):
        x = leaf([1.0, 2.0])
        loss = ops.sum(x * 3.0)
        loss.backward()
        loss.backward()
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])

    def test_non_scalar_rejected(self):
        x = leaf([1.0, 2.0])
        with pytest.raises(GraphError):
            (x * 2.0).backward()

    def test_no_grad_records_nothing(self):
        x = leaf([1.0])
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad and y._parents == ()

    def test_shared_subexpression_visited_once(self):
        x = leaf([2.0])
        y = x * x
        z = y + y
        graph = Graph.from_output(ops.sum(z))
        assert len({id(n) for n in graph.nodes}) == len(graph.nodes)
        ops.sum(z).backward()
        np.testing.assert_array_equal(x.grad, [8.0])

    def test_graph_is_topological(self, rng):
        x = leaf(rng.normal(size=(2, 3)))
        loss = mean(sigmoid(x) * relu(x) + x)
        nodes = Graph.from_output(loss).nodes
        pos = {id(n): k for k, n in enumerate(nodes)}
        for n in nodes:
            for p in n._parents:
                if id(p) in pos:
                    assert pos[id(p)] < pos[id(n)]


class TestGradCheck:
    def test_sum_is_exact(self, rng):
        report = grad_check(lambda x: ops.sum(x), rng.normal(size=(3, 3)), eps=1e-3)
        assert report.passed
        assert report.max_rel_error == pytest.approx(0.0, abs=1e-9)

    def test_wrong_backward_fails(self, rng):
        def bad_square(a):
            # correct rule is 2a
            return make_node(a.data**2, (a,), lambda g: (g * a.data,), "bad_square")

        report = grad_check(lambda x: ops.sum(bad_square(x)), rng.uniform(0.5, 1.5, size=5))
        assert not report.passed
        assert report.failures

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            grad_check(lambda x: ops.sum(x), np.ones(2), eps=0.0)

    @pytest.mark.parametrize(
        "name,fn,make_point",
        [
            ("add", lambda x: ops.sum((x + 1.5) * x), lambda r: r.normal(size=(3, 2))),
            ("sub", lambda x: ops.sum((2.0 - x) * x), lambda r: r.normal(size=(3, 2))),
            ("div", lambda x: ops.sum(1.0 / x), lambda r: r.uniform(0.5, 2, size=(3,))),
            ("relu", lambda x: ops.sum(relu(x) * x), lambda r: r.uniform(0.1, 1, size=6) * r.choice([-1, 1], 6)),
            ("sigmoid", lambda x: ops.sum(sigmoid(x) * x), lambda r: r.normal(size=5)),
            ("max_pool", lambda x: ops.sum(sq(max_pool2d(x, 2))), lambda r: r.permutation(16).reshape(1, 1, 4, 4) / 16.0 + 0.1),
            ("cosine", lambda x: cosine_similarity(x, Tensor(np.array([1.0, -2.0, 0.5]), dtype=x.dtype)), lambda r: r.normal(size=3)),
            ("conv", lambda x: ops.sum(sq(conv2d(x, Tensor(np.ones((2, 1, 3, 3)) * 0.3, dtype=x.dtype), padding=1))), lambda r: r.normal(size=(1, 1, 4, 4))),
        ],
    )
    def test_primitive_gradients(self, name, fn, make_point):
        point = make_point(np.random.default_rng(7))
        report = grad_check(fn, np.asarray(point, dtype=np.float32), tol=1e-3)
        assert report.passed, f"{name}: {report.summary()}"

    @given(arrays(np.float64, (2, 3), elements=st.floats(-3, 3)))
    def test_random_points_away_from_kinks(self, x):
        if np.any(np.abs(x) < 1e-2):
            return
        fn = lambda t: ops.sum(relu(t) * sigmoid(t) + t * t)  # noqa: E731
        assert grad_check(fn, x, tol=1e-3).passed

    def test_kink_screen_skips_straddled_coordinates(self):
        # |x| near 0: the stencil at 3e-4 +- 1e-3 crosses the kink
        fn = lambda t: ops.sum(relu(t) + relu(-t))  # noqa: E731
        plain = grad_check(fn, np.array([3e-4, 1.0, -1.0]), eps=1e-3, tol=1e-6)
        assert not plain.passed
        report = grad_check(fn, np.array([3e-4, 1.0, -1.0]), eps=1e-3, tol=1e-6, kink_rtol=1e-5)
        assert report.passed and report.n_skipped == 1
