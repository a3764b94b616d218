"""Central finite-difference gradient oracle for the layer tests.

The oracle only evaluates forward passes: an operation's output is reduced
to a scalar through a fixed random linear functional, and each requested
coordinate is probed with central differences in double precision.
"""

import numpy as np

from itersr.tensor import Tensor, _make_node, backward


def weighted_sum(t: Tensor, u: np.ndarray) -> Tensor:
    """<t, u> as a scalar node; u is a constant."""

    def bwd(g: np.ndarray) -> None:
        if t.requires_grad:
            t.accumulate_grad(float(g.reshape(())) * u.astype(t.data.dtype))

    return _make_node(np.sum(t.data * u).reshape(1, 1, 1, 1), (t,), bwd)


def analytic_grads(op, arrays: dict, wrt: list[str], u: np.ndarray) -> dict:
    tensors = {k: Tensor(v.copy(), requires_grad=(k in wrt)) for k, v in arrays.items()}
    out = op(tensors)
    backward(weighted_sum(out, u))
    return {k: tensors[k].grad.copy() for k in wrt}


def fd_grad(op, arrays: dict, name: str, u: np.ndarray, eps: float = 1e-5,
            indices=None) -> np.ndarray:
    base = {k: v.copy() for k, v in arrays.items()}
    target = base[name]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    if indices is None:
        indices = range(flat.size)

    def value() -> float:
        tensors = {k: Tensor(v) for k, v in base.items()}
        return float(np.sum(op(tensors).data * u))

    for i in indices:
        orig = flat[i]
        flat[i] = orig + eps
        plus = value()
        flat[i] = orig - eps
        minus = value()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-10)
    return float(np.max(np.abs(a - b)) / scale)


def check_op_gradients(op, arrays: dict, wrt: list[str], rtol: float = 1e-4,
                       eps: float = 1e-5, seed: int = 0, max_coords: int = 64) -> None:
    """Assert analytic gradients match central differences for each input."""
    rng = np.random.default_rng(seed)
    probe = {k: Tensor(v) for k, v in arrays.items()}
    u = rng.standard_normal(op(probe).data.shape)
    grads = analytic_grads(op, arrays, wrt, u)
    for name in wrt:
        size = arrays[name].size
        if size > max_coords:
            indices = rng.choice(size, size=max_coords, replace=False)
        else:
            indices = range(size)
        fd = fd_grad(op, arrays, name, u, eps, indices)
        sel = list(indices)
        err = relative_error(grads[name].reshape(-1)[sel], fd.reshape(-1)[sel])
        assert err <= rtol, f"gradient mismatch for {name!r}: rel err {err:.3e} > {rtol}"
