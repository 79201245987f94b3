import numpy as np
import pytest

from seavis.agcl import FrameContrastSet, InstanceContrastSet
from seavis.exceptions import DimensionError, OracleError
from seavis.gradcheck import (
    central_diff_grad,
    certify,
    check_frame_loss,
    check_instance_loss,
    rel_error,
)


def test_quadratic():
    g = central_diff_grad(lambda x: float(np.sum(x**2)), np.array([3.0]))
    np.testing.assert_allclose(g, [6.0], atol=1e-6)


def test_constant():
    assert (central_diff_grad(lambda x: 4.2, np.ones(5)) == 0).all()


def test_does_not_mutate_input():
    x = np.array([1.0, 2.0])
    central_diff_grad(lambda v: float(v @ v), x)
    assert x.tolist() == [1.0, 2.0]


def test_nonfinite_evaluation():
    with pytest.raises(OracleError):
        central_diff_grad(lambda x: float("inf"), np.ones(2))


def test_bad_step():
    with pytest.raises(ValueError):
        central_diff_grad(lambda x: 0.0, np.ones(2), h=0.0)


@pytest.mark.parametrize("seed", range(5))
def test_cubic_polynomials(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(4, 3))
    x0 = rng.normal(size=3)

    def f(x):
        return float(c[0] @ x + (c[1] @ x) ** 2 + (c[2] @ x) ** 3 + c[3, 0])

    exact = c[0] + 2 * (c[1] @ x0) * c[1] + 3 * (c[2] @ x0) ** 2 * c[2]
    assert rel_error(central_diff_grad(f, x0), exact) < 1e-8


def test_rel_error_examples():
    g = np.array([0.6, 0.8])
    assert rel_error(g, g) == 0.0
    assert abs(rel_error(g, 2 * g) - 0.5) < 1e-15
    assert rel_error(np.zeros(3), np.zeros(3)) == 0.0
    with pytest.raises(DimensionError):
        rel_error(np.zeros(2), np.zeros(3))


def test_frame_loss_seeded_set():
    rng = np.random.default_rng(42)
    sets = [FrameContrastSet(rng.normal(size=4), list(rng.normal(size=(2, 4))), list(rng.normal(size=(3, 4))))]
    assert check_frame_loss(sets, 0.07) < 1e-5


def test_instance_loss_seeded_set():
    rng = np.random.default_rng(43)
    sets = [InstanceContrastSet(0, rng.normal(size=4), list(rng.normal(size=(3, 4))),
                                list(rng.normal(size=(2, 4))), (0, 1, 2), (3, 4))]
    assert check_instance_loss(sets, 0.07) < 1e-5


def test_certify_report():
    report = certify(seed=3, n_configs=10)
    assert report["passed"]
    assert report["max_rel_error"] == max(report["frame_max_rel_error"], report["instance_max_rel_error"])
