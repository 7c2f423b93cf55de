"""Shared test oracles: finite differences and small utilities."""

from __future__ import annotations

import numpy as np

from warmstart_dp.numerics import Tensor

FD_H = 1e-5
FD_RTOL = 1e-4


def rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def central_difference(f, x: np.ndarray, idx: tuple, h: float = FD_H) -> float:
    """Central finite difference of scalar-valued f at one coordinate of x."""
    orig = x[idx]
    x[idx] = orig + h
    fp = f()
    x[idx] = orig - h
    fm = f()
    x[idx] = orig
    return (fp - fm) / (2.0 * h)


def check_grads_fd(
    loss_fn,
    params: dict[str, Tensor],
    rng: np.random.Generator,
    coords_per_param: int | None = None,
    rtol: float = FD_RTOL,
) -> float:
    """Compare analytic gradients of ``loss_fn()`` against central differences.

    Checks every coordinate when ``coords_per_param`` is None, else a random
    subset per parameter. Returns the worst relative error seen.
    """
    loss = loss_fn()
    for p in params.values():
        p.zero_grad()
    loss.backward()
    worst = 0.0
    for name, p in params.items():
        assert p.grad is not None, f"no gradient reached {name}"
        flat = p.data.reshape(-1)
        n = flat.size
        if coords_per_param is None:
            picks = range(n)
        else:
            picks = rng.choice(n, size=min(coords_per_param, n), replace=False)
        for flat_idx in picks:
            idx = np.unravel_index(flat_idx, p.data.shape)
            fd = central_difference(lambda: loss_fn().item(), p.data, idx)
            an = p.grad[idx]
            err = rel_err(an, fd)
            assert err < rtol, f"{name}[{idx}]: analytic {an} vs fd {fd} (rel {err:.2e})"
            worst = max(worst, err)
    return worst
