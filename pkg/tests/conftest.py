import numpy as np
import pytest

from distcond import autodiff as ad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    scale = max(np.abs(want).max(initial=0.0), 1e-8)
    return float(np.abs(got - want).max(initial=0.0) / scale)


def grad_check(f, tensors, step=1e-5, rtol=1e-5):
    """Compare reverse-mode gradients of f(*tensors) against central finite
    differences, one input at a time. Inputs must be float64."""
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with ad.record():
        loss = f(*tensors)
        ad.backward(loss)
    for i, t in enumerate(tensors):
        def partial(x, i=i):
            probe = [x if j == i else tensors[j].detach() for j in range(len(tensors))]
            return f(*probe)

        fd = ad.finite_diff_gradient(partial, t, step)
        assert t.grad is not None, f"no gradient for input {i}"
        err = rel_err(t.grad, fd.data)
        assert err < rtol, f"input {i}: rel err {err:.3g} >= {rtol}"
