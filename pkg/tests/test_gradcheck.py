import numpy as np
import pytest

from adsrnet.gradcheck import CheckResult, check_gradients, format_report, gradcheck_suite, relative_error
from adsrnet.model import ModelConfig
from adsrnet.tensor import _record, mul, tensor_sum


def square_sum(t):
    return tensor_sum(mul(t["x"], t["x"]))


def broken_square_sum(t):
    """x^2 summed, but with a gradient that is off by 10%."""
    x = t["x"]
    out = np.asarray((x.data**2).sum(), dtype=x.dtype).reshape(1, 1, 1, 1)
    return _record(out, (x,), lambda g: (2.2 * x.data * g.item(),))


class TestRelativeError:
    def test_exact_match_is_zero(self):
        a = np.array([1.0, -2.0])
        assert relative_error(a, a, a) == 0.0

    def test_scaled_by_largest_gradient(self):
        full = np.array([10.0, 1.0])
        assert relative_error(full, np.array([1.0]), np.array([1.5])) == pytest.approx(0.05)

    def test_floor_for_vanishing_gradients(self):
        assert relative_error(np.zeros(2), np.zeros(1), np.array([1e-10])) == pytest.approx(1e-2)

    def test_empty_sample(self):
        assert relative_error(np.zeros(0), np.zeros(0), np.zeros(0)) == 0.0


class TestCheckGradients:
    def test_correct_gradient_passes(self, rng):
        result = check_gradients("sq", square_sum, {"x": rng.normal(size=(1, 2, 3, 3))}, 1e-5)
        assert result.passed and result.max_rel_error < 1e-8

    def test_wrong_gradient_fails(self, rng):
        result = check_gradients("bad", broken_square_sum, {"x": rng.normal(size=(1, 2, 3, 3))}, 1e-4)
        assert not result.passed
        assert result.max_rel_error == pytest.approx(0.2 / 2.2, rel=1e-3)

    def test_sampled_coordinates(self, rng):
        result = check_gradients("sq", square_sum, {"x": rng.normal(size=(1, 4, 8, 8))}, 1e-5, samples=5, rng=rng)
        assert result.passed

    def test_rejects_non_scalar_objective(self, rng):
        with pytest.raises(ValueError, match="scalar"):
            check_gradients("vec", lambda t: mul(t["x"], t["x"]), {"x": rng.normal(size=(1, 1, 2, 2))}, 1e-5)

    def test_thirty_two_bit_analytic(self, rng):
        result = check_gradients("sq32", square_sum, {"x": rng.normal(size=(1, 1, 3, 3))}, 1e-3, dtype=np.float32)
        assert result.passed and result.max_rel_error > 0


class TestSuite:
    def test_operator_checks_pass(self):
        results = gradcheck_suite(ModelConfig(), seed=0, include_network=False)
        names = [r.name for r in results]
        for op in ("add", "mul", "relu", "conv2d_d2", "pixel_shuffle", "dynamic_conv", "slnet", "construction_block"):
            assert op in names
        assert all(r.passed for r in results), format_report(results)

    def test_report_format(self):
        report = format_report([CheckResult("a", 1e-7, 1e-5), CheckResult("b", 1.0, 1e-4)])
        assert report == "op\tmax_rel_error\tthreshold\tstatus\na\t1.000e-07\t1e-05\tok\nb\t1.000e+00\t1e-04\tFAIL\n"

    @pytest.mark.parametrize("seed", [3, 4, 11])
    def test_layer_checks_robust_to_seed(self, seed):
        # These seeds put a ReLU kink within 1e-4 of a probed coordinate.
        results = gradcheck_suite(ModelConfig(), seed=seed, include_network=False)
        assert all(r.passed for r in results), format_report(results)
