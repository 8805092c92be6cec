"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError
from .tensor import no_grad


def grad_check(f, params, eps: float = 1e-5, max_coords: int = 40,
               rng=None) -> float:
    """Compare analytic gradients of f() against central differences.

    f is a zero-argument callable returning a scalar Tensor whose graph
    reaches `params` (an iterable of Parameters or (name, Parameter) pairs).
    For each parameter, up to `max_coords` coordinates are sampled; returns
    the max over sampled coordinates of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    """
    if not 1e-8 <= eps <= 1e-2:
        raise NumericalError(f"grad_check eps {eps} outside sensible range")
    plist = [p if not isinstance(p, tuple) else p[1] for p in params]
    if rng is None:
        rng = np.random.default_rng(0)

    for p in plist:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericalError("grad_check: loss is non-finite")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in plist]

    worst = 0.0
    for p, g_ad in zip(plist, analytic):
        n = p.data.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords,
                                                                 replace=False)
        flat = p.data.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            with no_grad():
                f_plus = float(f().data)
            flat[c] = orig - eps
            with no_grad():
                f_minus = float(f().data)
            flat[c] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericalError("grad_check: perturbed loss is non-finite")
            g_fd = (f_plus - f_minus) / (2.0 * eps)
            g = float(g_ad.reshape(-1)[c])
            rel = abs(g - g_fd) / max(1.0, abs(g), abs(g_fd))
            worst = max(worst, rel)
    return worst
