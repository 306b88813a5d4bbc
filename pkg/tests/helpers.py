"""Shared test utilities: a central-finite-difference gradient oracle that
stays independent of the autodiff engine's backward pass."""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from latentdiff.autodiff import Tensor, no_grad


def finite_diff_grad(loss_fn: Callable[[], float], tensor: Tensor,
                     h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar-valued closure w.r.t. `tensor.data`.

    The closure must recompute the forward pass from scratch; entries of
    the tensor are perturbed in place and restored.
    """
    base = tensor.data
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        with no_grad():
            up = loss_fn()
        flat[i] = orig - h
        with no_grad():
            down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise relative error, treating pairs below `floor` as equal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = np.abs(a - b)
    denom = np.maximum(np.abs(a), np.abs(b))
    rel = np.where(denom > floor, diff / np.maximum(denom, floor), 0.0)
    return float(rel.max()) if rel.size else 0.0


def check_gradients(loss_fn: Callable[[], "Tensor"],
                    params: Dict[str, Tensor], tol: float = 1e-4) -> float:
    """Backward vs finite differences for every parameter; returns worst error."""
    from latentdiff import autodiff as ad

    loss = loss_fn()
    ad.backward(loss)
    worst = 0.0
    for name, p in params.items():
        assert p.grad is not None, f"no gradient reached {name}"
        fd = finite_diff_grad(lambda: float(loss_fn().data), p)
        err = max_rel_error(p.grad, fd)
        assert err < tol, f"gradient mismatch for {name}: rel error {err:.3e}"
        worst = max(worst, err)
    for p in params.values():
        p.grad = None
    return worst
