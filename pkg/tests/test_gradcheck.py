import numpy as np
import pytest

from inceptext import gradcheck
from inceptext.gradcheck import CASES, GradCase, run_gradcheck
from inceptext.tensor import make_node, tsum


def corrupted_square(rng):
    def f(x):
        # forward x**2 but backward claims 3x
        y = make_node("bad_square", x.data ** 2, [x], lambda g: (3.0 * g * x.data,))
        return tsum(y)
    return GradCase(f, [rng.uniform(-1, 1, (4, 3))])


def test_registry_covers_required_ops():
    required = {"conv2d", "conv2d_dilated", "factorized_conv", "bilinear_sample", "deformable_conv2d",
                "psroi_pool", "deformable_psroi_pool", "upsample2x", "softmax_cross_entropy",
                "smooth_l1", "binary_cross_entropy", "inception_text"}
    assert required <= set(CASES)


def test_scope_single_op():
    reports = run_gradcheck("deformable_psroi_pool", seeds=(0, 1))
    assert [r.op for r in reports] == ["deformable_psroi_pool"]
    assert reports[0].passed and len(reports[0].errors) == 2


def test_unknown_scope():
    with pytest.raises(KeyError):
        run_gradcheck("not_an_op")


def test_corrupted_backward_fails():
    reports = run_gradcheck("all", seeds=(0, 1), cases={"bad_square": corrupted_square})
    assert len(reports) == 1
    assert not reports[0].passed
    assert reports[0].max_error > 0.1
    assert "FAIL" in reports[0].line()


def test_cases_deterministic_per_seed():
    a = run_gradcheck("conv2d", seeds=(3,))[0].errors
    b = run_gradcheck("conv2d", seeds=(3,))[0].errors
    assert a == b


@pytest.mark.parametrize("name", ["smooth_l1", "softmax_cross_entropy", "upsample2x", "factorized_conv"])
def test_cheap_ops_pass(name):
    rep = run_gradcheck(name, seeds=gradcheck.DEFAULT_SEEDS)[0]
    assert rep.passed, rep.line()
    assert np.isfinite(rep.max_error)
