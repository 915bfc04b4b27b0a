import numpy as np
import pytest

from gradsr.degrade import (
    BlurKernel,
    DegradationOperator,
    FrameMotion,
    apply,
    apply_adjoint,
    delta_kernel,
    gaussian_kernel,
    simulate_stack,
)

import oracles


def random_operator(rng, scale, max_kernel=3):
    size = rng.choice([1, 3]) if max_kernel >= 3 else 1
    if size == 1:
        blur = delta_kernel()
    else:
        blur = gaussian_kernel(3, float(rng.uniform(0.5, 1.5)))
    motion = FrameMotion(float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2)))
    return DegradationOperator(motion, blur, scale)


class TestKernels:
    def test_gaussian_normalized_and_symmetric(self):
        k = gaussian_kernel(3, 1.0)
        assert abs(k.taps.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(k.taps, k.taps[::-1, ::-1])
        np.testing.assert_allclose(k.taps, k.taps.T)

    def test_flux_invariant_enforced(self):
        with pytest.raises(ValueError):
            BlurKernel(np.ones((3, 3)))
        with pytest.raises(ValueError):
            BlurKernel(np.ones((2, 2)) / 4.0)


class TestApply:
    def test_identity_composition(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(0, 255, (8, 8))
        op = DegradationOperator(FrameMotion(0.0, 0.0), delta_kernel(), 1)
        np.testing.assert_array_equal(apply(op, z), z)

    def test_constant_through_gaussian(self):
        z = np.full((16, 16), 100.0)
        op = DegradationOperator(FrameMotion(1.3, 0.7), gaussian_kernel(3, 1.0), 4)
        out = apply(op, z)
        assert out.shape == (4, 4)
        np.testing.assert_allclose(out, 100.0, rtol=1e-12)

    def test_ramp_against_loop_oracle(self):
        z = np.tile(np.arange(8, dtype=np.float64), (8, 1))
        op = DegradationOperator(FrameMotion(1.0, 0.0), gaussian_kernel(3, 1.0), 4)
        want = oracles.degrade_apply_ref(z, 1.0, 0.0, op.blur.taps, 4)
        np.testing.assert_allclose(apply(op, z), want, atol=1e-12)

    def test_random_cases_against_loop_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            h = int(rng.choice([4, 8, 12]))
            w = int(rng.choice([4, 8, 12]))
            scale = int(rng.choice([1, 2, 4]))
            op = random_operator(rng, scale)
            z = rng.uniform(-10, 265, (h, w))
            want = oracles.degrade_apply_ref(
                z, op.motion.dx, op.motion.dy, op.blur.taps, scale
            )
            np.testing.assert_allclose(apply(op, z), want, atol=1e-10)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        z1 = rng.uniform(0, 255, (8, 8))
        z2 = rng.uniform(0, 255, (8, 8))
        op = DegradationOperator(FrameMotion(0.4, 1.6), gaussian_kernel(3, 1.0), 2)
        lhs = apply(op, 2.5 * z1 - 1.5 * z2)
        rhs = 2.5 * apply(op, z1) - 1.5 * apply(op, z2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * 255)

    def test_flux_preservation_zero_motion(self):
        rng = np.random.default_rng(2)
        z = rng.uniform(50, 200, (32, 32))
        # Smooth the field so boundary reflection bias is negligible.
        op0 = DegradationOperator(FrameMotion(0.0, 0.0), gaussian_kernel(3, 1.0), 1)
        z = apply(op0, z)
        op = DegradationOperator(FrameMotion(0.0, 0.0), gaussian_kernel(3, 1.0), 1)
        assert abs(apply(op, z).mean() - z.mean()) < 1e-6 * 255

    def test_indivisible_dimensions_rejected(self):
        op = DegradationOperator(FrameMotion(0.0, 0.0), delta_kernel(), 4)
        with pytest.raises(ValueError):
            apply(op, np.zeros((10, 12)))


class TestAdjoint:
    def test_delta_case(self):
        op = DegradationOperator(FrameMotion(0.0, 0.0), delta_kernel(), 2)
        r = np.zeros((3, 3))
        r[0, 0] = 1.0
        out = apply_adjoint(op, r)
        want = np.zeros((6, 6))
        want[0, 0] = 1.0
        np.testing.assert_array_equal(out, want)

    def test_dot_product_identity_100_random(self):
        rng = np.random.default_rng(123)
        for _ in range(100):
            h = int(rng.choice([4, 8, 16]))
            w = int(rng.choice([4, 8, 16]))
            scale = int(rng.choice([1, 2, 4]))
            op = random_operator(rng, scale)
            z = rng.normal(size=(h, w))
            r = rng.normal(size=(h // scale, w // scale))
            lhs = float(np.vdot(apply(op, z), r))
            rhs = float(np.vdot(z, apply_adjoint(op, r)))
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1e-30)

    def test_against_dense_transpose(self):
        rng = np.random.default_rng(77)
        op = DegradationOperator(FrameMotion(0.7, -1.2), gaussian_kernel(3, 0.8), 2)
        mat = oracles.degrade_matrix_ref(12, 12, 0.7, -1.2, op.blur.taps, 2)
        r = rng.normal(size=(6, 6))
        want = (mat.T @ r.ravel()).reshape(12, 12)
        np.testing.assert_allclose(apply_adjoint(op, r), want, atol=1e-10)

    def test_forward_against_dense_matrix(self):
        rng = np.random.default_rng(78)
        op = DegradationOperator(FrameMotion(-0.3, 2.1), gaussian_kernel(3, 1.0), 4)
        mat = oracles.degrade_matrix_ref(8, 8, -0.3, 2.1, op.blur.taps, 4)
        z = rng.normal(size=(8, 8))
        want = (mat @ z.ravel()).reshape(2, 2)
        np.testing.assert_allclose(apply(op, z), want, atol=1e-10)


class TestSimulateStack:
    def test_frame_shapes_and_reference_shift(self):
        rng = np.random.default_rng(3)
        z = rng.uniform(0, 255, (32, 32))
        stack = simulate_stack(z, 16, 4, gaussian_kernel(3, 1.0), 0.0, seed=5)
        assert len(stack) == 16
        assert stack[0][1] == FrameMotion(0.0, 0.0)
        for frame, motion in stack:
            assert frame.shape == (8, 8)
            assert 0.0 <= motion.dx < 4.0 and 0.0 <= motion.dy < 4.0

    def test_determinism(self):
        z = np.random.default_rng(4).uniform(0, 255, (16, 16))
        a = simulate_stack(z, 5, 4, gaussian_kernel(3, 1.0), 0.005, seed=9)
        b = simulate_stack(z, 5, 4, gaussian_kernel(3, 1.0), 0.005, seed=9)
        for (fa, ma), (fb, mb) in zip(a, b):
            np.testing.assert_array_equal(fa, fb)
            assert ma == mb

    def test_noise_scale(self):
        z = np.full((128, 128), 128.0)
        kern = gaussian_kernel(3, 1.0)
        noisy = simulate_stack(z, 16, 4, kern, 0.005, seed=11)
        clean = simulate_stack(z, 16, 4, kern, 0.0, seed=11)
        resid = np.concatenate(
            [(fn - fc).ravel() for (fn, _), (fc, _) in zip(noisy, clean)]
        )
        assert resid.size >= 10_000
        target = 255.0 * np.sqrt(0.005)
        assert abs(resid.std() - target) < 0.05 * target

    def test_noiseless_is_noise_free(self):
        z = np.random.default_rng(6).uniform(0, 255, (16, 16))
        stack = simulate_stack(z, 3, 4, gaussian_kernel(3, 1.0), 0.0, seed=1)
        for frame, motion in stack:
            op = DegradationOperator(motion, gaussian_kernel(3, 1.0), 4)
            np.testing.assert_array_equal(frame, apply(op, z))

    def test_requires_at_least_one_frame(self):
        with pytest.raises(ValueError):
            simulate_stack(np.zeros((8, 8)), 0, 4, gaussian_kernel(3, 1.0))
