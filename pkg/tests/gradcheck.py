"""Central finite-difference oracle for comparing against autograd gradients."""

import numpy as np
import torch


def fd_gradients(fn, tensors, h=1e-6):
    """Central differences of scalar ``fn()`` w.r.t. every element of each tensor (float64, in place)."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = fn().item()
                flat[i] = orig - h
                down = fn().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


def max_relative_error(fn, tensors, h=1e-6):
    """max |analytic - numeric| / max |numeric| over all tensors."""
    for t in tensors:
        t.requires_grad_(True)
    analytic = torch.autograd.grad(fn(), tensors, allow_unused=True)
    analytic = [torch.zeros_like(t) if a is None else a for a, t in zip(analytic, tensors)]
    for t in tensors:
        t.requires_grad_(False)
    numeric = fd_gradients(fn, tensors, h)
    diff = max(float((a - n).abs().max()) for a, n in zip(analytic, numeric))
    scale = max(float(n.abs().max()) for n in numeric)
    return diff / max(scale, 1e-300)


def projected(model_fn, out_shape, seed=0):
    """Scalar loss: fixed random projection of the output, so every output element matters."""
    w = torch.from_numpy(np.random.default_rng(seed).standard_normal(out_shape))
    return lambda: (model_fn() * w).sum()
