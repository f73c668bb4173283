import numpy as np
import pytest

from oracles import adam_single_step, direct_conv2d

import sketchfill.autodiff as ad
from sketchfill.autodiff import (
    AdamState,
    CheckpointFormatError,
    Tensor,
    adam_step,
    check_grad,
    check_grad_second,
    checkpoint_hash,
    find_first_nonfinite,
    grad,
    init_params,
    load_checkpoint,
    no_grad,
    save_checkpoint,
)


def t(x, req=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=req)


class TestTensorBasics:
    def test_item_and_float(self):
        x = t([[3.5]])
        assert x.item() == 3.5 and float(x) == 3.5

    def test_item_rejects_non_scalar(self):
        with pytest.raises(ValueError):
            t([1.0, 2.0]).item()

    def test_mixed_dtype_rejected(self):
        a = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
        b = Tensor(np.ones(3, dtype=np.float64), requires_grad=True)
        with pytest.raises(ValueError, match="mixed dtypes"):
            ad.add(a, b)

    def test_detach_cuts_graph(self):
        x = t([2.0])
        y = (x * x).detach()
        assert not y.requires_grad and not y._parents

    def test_no_grad_suppresses_graph(self):
        x = t([2.0])
        with no_grad():
            y = x * x
        assert not y._parents and not y.requires_grad

    def test_operator_sugar_matches_numpy(self):
        rng = np.random.default_rng(0)
        a, b = rng.uniform(0.5, 2, (3, 4)), rng.uniform(0.5, 2, (3, 4))
        x, y = t(a), t(b)
        np.testing.assert_allclose((x / y).data, a / b)
        np.testing.assert_allclose((2.0 / y).data, 2.0 / b)
        np.testing.assert_allclose((x - 1.5).data, a - 1.5)
        np.testing.assert_allclose((1.5 - x).data, 1.5 - a)
        np.testing.assert_allclose((x**3).data, a**3)
        np.testing.assert_allclose(abs(x).data, np.abs(a))
        np.testing.assert_allclose(x[1:, :2].data, a[1:, :2])
        np.testing.assert_allclose((x @ y.transpose()).data, a @ b.T)


class TestGradSemantics:
    def test_known_analytic_gradient(self):
        x = t([1.0, -2.0, 3.0])
        g = grad((x * x).sum(), x)
        np.testing.assert_allclose(g.data, 2 * x.data)

    def test_unrelated_input_gets_zeros(self):
        x, z = t([1.0, 2.0]), t([5.0])
        g = grad((x * x).sum(), [x, z])[1]
        assert np.array_equal(g.data, np.zeros(1))

    def test_non_scalar_needs_grad_output(self):
        x = t([1.0, 2.0])
        with pytest.raises(ValueError, match="grad_output"):
            grad(x * x, x)

    def test_grad_output_shape_checked(self):
        x = t([1.0, 2.0])
        with pytest.raises(ValueError, match="shape"):
            grad(x * x, x, grad_output=np.ones(3))

    def test_grad_output_weights_cotangent(self):
        x = t([1.0, 2.0])
        g = grad(x * x, x, grad_output=np.array([10.0, 0.5]))
        np.testing.assert_allclose(g.data, [20.0, 2.0])

    def test_requires_grad_enforced(self):
        x = t([1.0], req=False)
        with pytest.raises(ValueError, match="require"):
            grad(ad.sum_of(x), x)

    def test_backward_accumulates(self):
        x = t([1.0, 2.0])
        ad.backward((x * x).sum())
        ad.backward((x * x).sum())
        np.testing.assert_allclose(x.grad, 4 * x.data)

    def test_backward_needs_scalar(self):
        x = t([1.0, 2.0])
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(x * x)

    def test_fanout_accumulates_once_per_path(self):
        x = t([3.0])
        y = x * x + x * 4.0
        np.testing.assert_allclose(grad(y.sum(), x).data, [2 * 3.0 + 4.0])

    def test_create_graph_supports_second_order(self):
        # f(x) = sum(x^3): f' = 3x^2, sum(f')' = 6x
        x = t([1.0, 2.0])
        g = grad((x**3).sum(), x, create_graph=True)
        gg = grad(g.sum(), x)
        np.testing.assert_allclose(gg.data, 6 * x.data)


class TestFiniteDifferences:
    """Every primitive against central differences, f64."""

    rng = np.random.default_rng(42)

    def _check(self, fn, arrays, tol=1e-6):
        assert check_grad(fn, arrays) < tol

    def test_add_broadcast(self):
        self._check(lambda a, b: (a + b).sum(), [self.rng.uniform(-1, 1, (3, 4)), self.rng.uniform(-1, 1, (4,))])

    def test_mul_broadcast(self):
        self._check(lambda a, b: (a * b).sum(), [self.rng.uniform(-1, 1, (2, 3, 4)), self.rng.uniform(-1, 1, (3, 1))])

    def test_matmul(self):
        self._check(lambda a, b: (a @ b).sum(), [self.rng.uniform(-1, 1, (3, 5)), self.rng.uniform(-1, 1, (5, 2))])

    def test_reshape_transpose(self):
        self._check(
            lambda a: ad.sum_of(ad.transpose(ad.reshape(a, (4, 6)), (1, 0)) ** 2),
            [self.rng.uniform(-1, 1, (2, 3, 4))],
        )

    def test_sum_axis_keepdims(self):
        self._check(
            lambda a: ((a - ad.sum_of(a, axis=1, keepdims=True)) ** 2).sum(),
            [self.rng.uniform(-1, 1, (3, 5))],
        )

    def test_mean_axis(self):
        self._check(lambda a: (ad.mean(a, axis=(0, 2)) ** 2).sum(), [self.rng.uniform(-1, 1, (2, 3, 4))])

    def test_abs_away_from_zero(self):
        x = self.rng.uniform(0.2, 1, (4, 4)) * np.sign(self.rng.uniform(-1, 1, (4, 4)))
        self._check(lambda a: (abs(a) * a).sum(), [x])

    def test_pow_const(self):
        self._check(lambda a: (a**2.5).sum(), [self.rng.uniform(0.3, 2, (3, 3))])

    def test_leaky_relu_away_from_kink(self):
        x = self.rng.uniform(0.1, 1, (5, 5)) * np.sign(self.rng.uniform(-1, 1, (5, 5)))
        self._check(lambda a: (ad.leaky_relu(a, 0.2) ** 2).sum(), [x])

    def test_exp_log(self):
        self._check(lambda a: (ad.log(ad.exp(a) + 1.0)).sum(), [self.rng.uniform(-1, 1, (3, 4))])

    def test_clip_interior(self):
        x = self.rng.uniform(-0.4, 0.4, (4, 4))
        self._check(lambda a: (ad.clip(a, -0.5, 0.5) ** 2).sum(), [x])

    def test_clip_blocks_outside(self):
        x = t(np.array([2.0, -2.0, 0.1]))
        g = grad((ad.clip(x, -1, 1) ** 2).sum(), x)
        np.testing.assert_allclose(g.data, [0.0, 0.0, 0.2])

    def test_crop_embed(self):
        def fn(a):
            c = ad.crop(a, (slice(1, 3), slice(0, 2)))
            e = ad.embed(c, (5, 5), (slice(2, 4), slice(3, 5)))
            return (e * e).sum()

        self._check(fn, [self.rng.uniform(-1, 1, (4, 4))])

    def test_concat(self):
        self._check(
            lambda a, b: (ad.concat([a, b], axis=1) ** 2).sum(),
            [self.rng.uniform(-1, 1, (2, 3)), self.rng.uniform(-1, 1, (2, 2))],
        )

    def test_sqrt_sum_sq(self):
        self._check(lambda a: ad.sqrt(ad.sum_sq(a) + 1e-3), [self.rng.uniform(-1, 1, (6,))])

    def test_softplus(self):
        self._check(lambda a: ad.softplus(a).sum(), [self.rng.uniform(-30, 30, (8,))])

    def test_pad2d(self):
        self._check(lambda a: (ad.pad2d(a, 2) ** 2).sum(), [self.rng.uniform(-1, 1, (1, 2, 3, 3))])

    def test_unfold_fold(self):
        def fn(a):
            cols = ad.unfold(a, 3, stride=2)
            back = ad.fold(cols, (5, 5), 3, stride=2)
            return (back * back).sum()

        self._check(fn, [self.rng.uniform(-1, 1, (1, 2, 5, 5))])

    def test_conv2d_weight_bias_input(self):
        x = self.rng.uniform(-1, 1, (2, 3, 6, 6))
        w = self.rng.uniform(-1, 1, (4, 3, 3, 3))
        b = self.rng.uniform(-1, 1, (4,))
        self._check(lambda xx, ww, bb: (ad.conv2d(xx, ww, bb, stride=2, padding=1) ** 2).sum(), [x, w, b])

    def test_conv2d_dilated(self):
        x = self.rng.uniform(-1, 1, (1, 2, 9, 9))
        w = self.rng.uniform(-1, 1, (3, 2, 3, 3))
        self._check(lambda xx, ww: (ad.conv2d(xx, ww, padding=2, dilation=2) ** 2).sum(), [x, w])

    def test_conv2d_transpose(self):
        x = self.rng.uniform(-1, 1, (1, 4, 4, 4))
        w = self.rng.uniform(-1, 1, (4, 2, 3, 3))
        b = self.rng.uniform(-1, 1, (2,))
        self._check(
            lambda xx, ww, bb: (ad.conv2d_transpose(xx, ww, bb, stride=2, padding=1, output_padding=1) ** 2).sum(),
            [x, w, b],
        )

    def test_second_order_composite(self):
        x = self.rng.uniform(0.2, 1.0, (2, 2, 4, 4))
        w = self.rng.uniform(-0.5, 0.5, (3, 2, 3, 3))

        def fn(xx, ww):
            y = ad.leaky_relu(ad.conv2d(xx, ww, padding=1), 0.2)
            return ad.sqrt(ad.sum_sq(y) + 1e-4)

        assert check_grad_second(fn, [x, w]) < 1e-5


class TestConvForward:
    rng = np.random.default_rng(7)

    @pytest.mark.parametrize(
        "stride,padding,dilation",
        [(1, 0, 1), (1, 1, 1), (2, 1, 1), (2, 2, 2), (1, 2, 2)],
    )
    def test_matches_loop_oracle(self, stride, padding, dilation):
        x = self.rng.uniform(-1, 1, (2, 3, 8, 8))
        w = self.rng.uniform(-1, 1, (5, 3, 3, 3))
        b = self.rng.uniform(-1, 1, (5,))
        got = ad.conv2d(t(x), t(w), t(b), stride=stride, padding=padding, dilation=dilation)
        want = direct_conv2d(x, w, b, stride=stride, padding=padding, dilation=dilation)
        np.testing.assert_allclose(got.data, want, atol=1e-10)

    def test_transpose_is_adjoint_of_conv(self):
        # grad_x <conv(x, W), c> must equal conv_transpose(c, W): the same
        # (Co, Ci, K, K) weight read as conv_transpose's (in, out, K, K)
        x = self.rng.uniform(-1, 1, (1, 3, 8, 8))
        w = self.rng.uniform(-1, 1, (5, 3, 3, 3))
        c = self.rng.uniform(-1, 1, (1, 5, 4, 4))
        xx = t(x)
        out = ad.conv2d(xx, t(w), stride=2, padding=1)
        g = grad(ad.sum_of(out * Tensor(c)), xx)
        via_t = ad.conv2d_transpose(t(c), t(w), stride=2, padding=1, output_padding=1)
        np.testing.assert_allclose(g.data, via_t.data, atol=1e-10)

    def test_channel_mismatch_errors(self):
        x, w = t(np.ones((1, 3, 4, 4))), t(np.ones((2, 4, 3, 3)))
        with pytest.raises(ValueError, match="mismatch"):
            ad.conv2d(x, w)
        with pytest.raises(ValueError, match="mismatch"):
            ad.conv2d_transpose(t(np.ones((1, 3, 4, 4))), t(np.ones((4, 2, 3, 3))))

    def test_output_padding_bound(self):
        with pytest.raises(ValueError, match="output_padding"):
            ad.conv2d_transpose(t(np.ones((1, 2, 4, 4))), t(np.ones((2, 2, 3, 3))), stride=1, padding=0, output_padding=1)

    def test_shape_formulas(self):
        x = t(np.zeros((1, 2, 16, 16)))
        w = t(np.zeros((4, 2, 3, 3)))
        assert ad.conv2d(x, w, padding=1).shape == (1, 4, 16, 16)
        assert ad.conv2d(x, w, stride=2, padding=1).shape == (1, 4, 8, 8)
        wt = t(np.zeros((2, 4, 3, 3)))
        assert ad.conv2d_transpose(x, wt, stride=2, padding=1, output_padding=1).shape == (1, 4, 32, 32)


class TestNonFinite:
    def test_finds_offending_node(self):
        x = t([4.0, -1.0])
        with np.errstate(invalid="ignore"):
            y = ad.log(x)  # -1 -> nan
        z = y * 2.0
        bad = find_first_nonfinite(z)
        assert bad is y

    def test_none_when_clean(self):
        x = t([1.0, 2.0])
        assert find_first_nonfinite((x * x).sum()) is None


class TestAdam:
    def test_single_step_matches_oracle(self):
        rng = np.random.default_rng(3)
        p0 = rng.uniform(-1, 1, (4, 3)).astype(np.float32)
        g = rng.uniform(-1, 1, (4, 3)).astype(np.float32)
        params = {"w": Tensor(p0.copy(), requires_grad=True, name="w")}
        state = AdamState(lr=2e-4)
        adam_step(state, params, {"w": g})
        want = adam_single_step(p0.astype(np.float64), g.astype(np.float64), 2e-4, 0.9, 0.999, 1e-8)
        np.testing.assert_allclose(params["w"].data, want, atol=1e-7)
        assert state.step == 1

    def test_two_steps_by_the_book(self):
        # sequential reference computed inline, step counter bias-corrected
        p = np.array([1.0], dtype=np.float32)
        g1, g2 = np.array([0.5], dtype=np.float32), np.array([-0.25], dtype=np.float32)
        params = {"w": Tensor(p.copy(), requires_grad=True, name="w")}
        state = AdamState(lr=0.1)
        adam_step(state, params, {"w": g1})
        adam_step(state, params, {"w": g2})

        m = v = 0.0
        ref = 1.0
        for k, gk in enumerate((0.5, -0.25), start=1):
            m = 0.9 * m + 0.1 * gk
            v = 0.999 * v + 0.001 * gk * gk
            ref -= 0.1 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
        np.testing.assert_allclose(params["w"].data, [ref], atol=1e-6)

    def test_shape_mismatch_rejected(self):
        params = {"w": Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True, name="w")}
        with pytest.raises(ValueError):
            adam_step(AdamState(), params, {"w": np.ones(3, dtype=np.float32)})

    def test_init_params_layout(self):
        shapes = {"gen/a/w": (8, 4, 3, 3), "gen/a/b": (8,)}
        params = init_params(shapes, np.random.default_rng(0))
        assert params["gen/a/b"].data.sum() == 0.0
        w = params["gen/a/w"].data
        assert w.dtype == np.float32 and w.shape == (8, 4, 3, 3)
        # fan-in scaling keeps early activations near unit variance
        assert 0.5 < w.std() * np.sqrt(4 * 9) < 2.0


class TestCheckpoint:
    def _arrays(self):
        rng = np.random.default_rng(5)
        return {
            "gen/c0/w": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
            "gen/c0/b": np.zeros(4, dtype=np.float32),
            "opt/m/gen/c0/w": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
            "meta/scalar": np.float32(7.5).reshape(()),
        }

    def test_roundtrip_bit_exact(self, tmp_path):
        arrays = self._arrays()
        p = tmp_path / "a.fsck"
        save_checkpoint(p, arrays, step=123)
        step, back = load_checkpoint(p)
        assert step == 123
        assert sorted(back) == sorted(arrays)
        for name in arrays:
            assert np.array_equal(back[name], np.asarray(arrays[name], dtype=np.float32))
            assert back[name].shape == np.asarray(arrays[name]).shape

    def test_insert_order_does_not_change_bytes(self, tmp_path):
        arrays = self._arrays()
        rev = dict(reversed(list(arrays.items())))
        pa, pb = tmp_path / "a.fsck", tmp_path / "b.fsck"
        save_checkpoint(pa, arrays, step=9)
        save_checkpoint(pb, rev, step=9)
        assert checkpoint_hash(pa) == checkpoint_hash(pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_no_temp_file_left(self, tmp_path):
        save_checkpoint(tmp_path / "a.fsck", self._arrays(), step=1)
        assert [f.name for f in tmp_path.iterdir()] == ["a.fsck"]

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.fsck"
        p.write_bytes(b"NOPE" + b"\0" * 20)
        with pytest.raises(CheckpointFormatError, match="bad magic at byte 0"):
            load_checkpoint(p)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "x.fsck"
        save_checkpoint(p, self._arrays(), step=1)
        raw = bytearray(p.read_bytes())
        raw[4] = 9
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointFormatError, match="version 9 at byte 4"):
            load_checkpoint(p)

    def test_truncation_names_offset(self, tmp_path):
        p = tmp_path / "x.fsck"
        save_checkpoint(p, self._arrays(), step=1)
        raw = p.read_bytes()
        p.write_bytes(raw[:-7])
        with pytest.raises(CheckpointFormatError, match="truncated at byte"):
            load_checkpoint(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "x.fsck"
        save_checkpoint(p, self._arrays(), step=1)
        p.write_bytes(p.read_bytes() + b"\xff")
        with pytest.raises(CheckpointFormatError, match="trailing"):
            load_checkpoint(p)


class TestGradcheckSelf:
    """The checker itself must agree with hand-computed gradients."""

    def test_numeric_grad_on_quadratic(self):
        x = np.array([1.0, -2.0, 0.5])
        (g,) = ad.numeric_grad(lambda a: float((a * a).sum()), [x])
        np.testing.assert_allclose(g, 2 * x, atol=1e-6)

    def test_check_grad_flags_wrong_vjp(self):
        # a deliberately broken function: detached branch hides part of
        # the dependency, so analytic != numeric
        def broken(a):
            return ad.sum_of(a * a.detach())

        err = check_grad(broken, [np.array([1.0, 2.0])])
        assert err > 1e-2
