import numpy as np
import pytest

from pcil import autodiff as ad
from gradcheck import check_gradients, primitive_cases, scalarize


def test_matmul_hand_arithmetic():
    tape = ad.Tape()
    a = tape.constant([[1.0, 2.0], [3.0, 4.0]])
    b = tape.constant([[1.0], [1.0]])
    out = ad.matmul(a, b)
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_logsumexp_stability_identity():
    tape = ad.Tape()
    x = tape.constant([1000.0, 1000.0])
    out = ad.logsumexp(x)
    assert out.data == pytest.approx(1000.0 + np.log(2.0), abs=1e-12)


def test_sphere_normalize_345():
    tape = ad.Tape()
    v = tape.constant([3.0, 4.0])
    out = ad.sphere_normalize(v)
    np.testing.assert_allclose(out.data, [0.6, 0.8], atol=1e-15)


def test_backward_square():
    tape = ad.Tape()
    x = tape.leaf(np.array(3.0))
    out = ad.mul(x, x)
    tape.backward(out)
    assert x.grad == pytest.approx(6.0, abs=1e-12)


def test_sphere_normalize_tangential_projection():
    c = np.array([0.0, 1.0])

    def build(tape, leaves):
        return ad.dot(ad.sphere_normalize(leaves[0]), tape.constant(c))

    tape = ad.Tape()
    v = tape.leaf(np.array([1.0, 0.0]))
    out = build(tape, [v])
    tape.backward(out)
    np.testing.assert_allclose(v.grad, [0.0, 1.0], atol=1e-12)
    check_gradients(build, [np.array([1.0, 0.0])])


def test_mean_tanh_linear_vs_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(10):
        w = rng.uniform(-1, 1, size=(4, 4))
        x = rng.uniform(-1, 1, size=(1, 4))

        def build(tape, leaves):
            return ad.tmean(ad.tanh(ad.matmul(tape.constant(x), leaves[0])))

        err = check_gradients(build, [w])
        assert err < 1e-4


@pytest.mark.parametrize("case_idx", range(len(primitive_cases(np.random.default_rng(0)))))
def test_primitive_gradients_match_finite_differences(case_idx):
    # 100 random instances per primitive, h=1e-5, relative tolerance 1e-4
    for trial in range(100):
        rng = np.random.default_rng(1000 * case_idx + trial)
        name, build, arrays = primitive_cases(rng)[case_idx]
        check_gradients(build, arrays)


def test_primitive_registry_is_complete():
    names = {name for name, _, _ in primitive_cases(np.random.default_rng(0))}
    assert names == set(ad.PRIMITIVES)


def test_sphere_normalize_unit_norm_invariant():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(1, 6))
        v = rng.uniform(-3, 3, size=(4, n))
        norms = np.linalg.norm(v, axis=1)
        v = v[norms >= 1e-6]
        if not len(v):
            continue
        tape = ad.Tape()
        out = ad.sphere_normalize(tape.constant(v))
        assert np.all(np.abs(np.linalg.norm(out.data, axis=1) - 1.0) <= 1e-9)


def test_sphere_normalize_tiny_input_stays_bounded():
    tape = ad.Tape()
    v = tape.leaf(np.array([1e-9, 0.0]))
    out = ad.sphere_normalize(v)
    assert np.all(np.isfinite(out.data))
    tape.backward(ad.tsum(out))
    assert np.all(np.isfinite(v.grad))


def test_backward_is_deterministic():
    def run():
        rng = np.random.default_rng(3)
        tape = ad.Tape()
        w = tape.leaf(rng.uniform(-1, 1, size=(5, 5)))
        x = tape.constant(rng.uniform(-1, 1, size=(2, 5)))
        y = ad.tmean(ad.tanh(ad.matmul(x, w)))
        tape.backward(y)
        return w.grad

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)  # bitwise


def test_backward_rejects_non_scalar():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    y = ad.scale(x, 2.0)
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(y)


def test_shape_mismatch_rejected():
    tape = ad.Tape()
    a = tape.constant(np.ones((2, 3)))
    b = tape.constant(np.ones((2, 3)))
    with pytest.raises(ValueError, match="matmul"):
        ad.matmul(a, b)
    with pytest.raises(ValueError, match="dot"):
        ad.dot(tape.constant(np.ones(2)), tape.constant(np.ones(3)))


def test_non_finite_rejected():
    tape = ad.Tape()
    with pytest.raises(ad.NonFiniteError):
        tape.leaf(np.array([1.0, np.nan]))
    x = tape.constant(np.array([800.0]))
    with pytest.raises(ad.NonFiniteError):
        ad.exp(x)  # overflows to inf


def test_log_requires_positive():
    tape = ad.Tape()
    with pytest.raises(ValueError, match="positive"):
        ad.log(tape.constant(np.array([1.0, 0.0])))


def test_cross_tape_operands_rejected():
    t1, t2 = ad.Tape(), ad.Tape()
    a = t1.leaf(np.ones(2))
    b = t2.leaf(np.ones(2))
    with pytest.raises(ValueError, match="tape"):
        ad.add(a, b)


def test_mlp_tape_matches_inference_forward():
    rng = np.random.default_rng(5)
    params = ad.mlp_params(rng, [3, 8, 8, 2])
    x = rng.uniform(-1, 1, size=(4, 3))
    ref = ad.mlp_apply_np(params, x, hidden="relu", output="tanh")
    tape = ad.Tape()
    nodes = params.watch(tape)
    out = ad.mlp_apply(nodes, tape.constant(x), hidden="relu", output="tanh")
    np.testing.assert_array_equal(out.data, ref)


def test_mlp_init_bounds():
    rng = np.random.default_rng(9)
    params = ad.mlp_params(rng, [16, 4])
    bound = 1.0 / np.sqrt(16)
    assert np.all(np.abs(params["layer0.w"]) <= bound)
    assert np.all(np.abs(params["layer0.b"]) <= bound)


class TestAdam:
    def make(self, lr=1e-3):
        params = ad.ParameterSet({"w": np.array([1.0, -2.0, 3.0])})
        state = ad.AdamState.for_params(params, lr=lr)
        return params, state

    def test_zero_gradient_leaves_params_unchanged(self):
        params, state = self.make()
        before = params["w"].copy()
        ad.adam_step(params, {"w": np.zeros(3)}, state)
        np.testing.assert_array_equal(params["w"], before)
        assert state.step_count == 1

    def test_moments_decay(self):
        params, state = self.make()
        state.first_moment["w"][:] = 1.0
        state.second_moment["w"][:] = 1.0
        ad.adam_step(params, {"w": np.zeros(3)}, state)
        np.testing.assert_allclose(state.first_moment["w"], 0.9)
        np.testing.assert_allclose(state.second_moment["w"], 0.999)

    def test_first_step_bias_correction(self):
        # with correction the very first step has magnitude ~lr regardless of |g|
        params, state = self.make(lr=1e-3)
        before = params["w"].copy()
        g = np.array([0.04, -7.0, 0.5])
        ad.adam_step(params, {"w": g}, state)
        np.testing.assert_allclose(params["w"] - before, -1e-3 * np.sign(g), rtol=1e-6)

    def test_constant_gradient_fixed_point(self):
        params, state = self.make(lr=1e-3)
        g = np.array([0.3, -1.7, 0.002])
        for _ in range(500):
            before = params["w"].copy()
            ad.adam_step(params, {"w": g}, state)
        step = params["w"] - before
        np.testing.assert_allclose(step, -1e-3 * np.sign(g), rtol=1e-4)

    def test_non_finite_gradient_skips_update(self):
        params, state = self.make()
        before = params["w"].copy()
        ad.adam_step(params, {"w": np.array([1.0, np.nan, 0.0])}, state)
        np.testing.assert_array_equal(params["w"], before)
        assert state.skipped == 1
        assert state.step_count == 0

    def test_missing_gradient_treated_as_zero(self):
        params, state = self.make()
        before = params["w"].copy()
        ad.adam_step(params, {}, state)
        np.testing.assert_array_equal(params["w"], before)
