"""Shared oracles for the test suite."""

from __future__ import annotations

import numpy as np
import torch

FD_STEP = 1e-3
FD_RTOL = 1e-4


def central_difference(fn, tensors, step=FD_STEP):
    """Numerical gradient of scalar ``fn()`` w.r.t. each tensor, one entry at a time."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = float(fn())
                flat[i] = orig - step
                down = float(fn())
                flat[i] = orig
                gflat[i] = (up - down) / (2 * step)
            grads.append(g)
    return grads


def analytic_gradient(fn, tensors):
    for t in tensors:
        t.grad = None
    out = fn()
    return list(torch.autograd.grad(out, tensors, allow_unused=True))


def gradient_mismatch(fn, tensors, step=FD_STEP):
    """Largest relative error between autograd and central differences.

    Per tensor: ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12).
    """
    ana = analytic_gradient(fn, tensors)
    num = central_difference(fn, tensors, step)
    worst = 0.0
    for a, n in zip(ana, num):
        a = torch.zeros_like(n) if a is None else a
        denom = max(a.norm().item(), n.norm().item(), 1e-12)
        worst = max(worst, (a - n).norm().item() / denom)
    return worst


def count_params(*modules) -> int:
    return sum(p.numel() for m in modules for p in m.parameters())


def brute_nearest(codes: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Exhaustive nearest neighbour, lowest index on ties, by explicit loops."""
    out = np.empty(len(queries), dtype=np.int64)
    for i, z in enumerate(queries):
        best, best_d = 0, None
        for j, c in enumerate(codes):
            d = float(np.sum((z - c) ** 2))
            if best_d is None or d < best_d:
                best, best_d = j, d
        out[i] = best
    return out
