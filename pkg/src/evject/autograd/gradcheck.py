"""Central finite-difference comparison against reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from evject.errors import ValidationError


def gradient_check(fn, params, eps=1e-6, max_entries=None, rng=None, scale_floor=1e-3):
    """Worst relative error between analytic and numeric gradients.

    ``fn()`` must rebuild the graph from the current parameter values and
    return a scalar tensor; ``params`` are float64 leaf tensors. The relative
    error of an entry is ``|a - n| / (|a| + |n| + tau)`` where ``tau`` is
    ``scale_floor`` times the largest analytic gradient magnitude of that
    tensor (plus 1e-12). The floor keeps entries many orders below the
    tensor's scale, whose finite differences are pure rounding noise, from
    dominating. With ``max_entries`` only a random subset of each parameter
    is probed.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise ValidationError("gradient_check requires float64 tensors")
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
        p.requires_grad = True
    fn().backward()
    analytic = [np.array(p.grad, dtype=np.float64) for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        gflat = grad.reshape(-1)
        tau = scale_floor * float(np.abs(gflat).max(initial=0.0)) + 1e-12
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(fn().data)
            flat[i] = orig - eps
            down = float(fn().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = gflat[i]
            err = abs(a - numeric) / (abs(a) + abs(numeric) + tau)
            worst = max(worst, err)
    return worst
