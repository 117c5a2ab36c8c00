"""Nelder-Mead simplex search with box constraints handled by reparametrisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    converged: bool
    iterations: int
    evaluations: int


def nelder_mead(func, x0, step=0.1, xtol=1e-8, max_iter=2000,
                alpha=1.0, gamma=2.0, rho=0.5, sigma=0.5) -> SimplexResult:
    """Minimise ``func`` from ``x0``.

    Stops once the simplex diameter (max distance of a vertex to the best one)
    drops below ``xtol`` or after ``max_iter`` iterations.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    n = x0.size
    steps = np.broadcast_to(np.asarray(step, dtype=np.float64), (n,))
    simplex = np.empty((n + 1, n))
    simplex[0] = x0
    for i in range(n):
        simplex[i + 1] = x0
        simplex[i + 1, i] += steps[i] if steps[i] != 0 else 0.00025
    fvals = np.array([func(v) for v in simplex])
    evals = n + 1

    it = 0
    converged = False
    while it < max_iter:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if np.max(np.abs(simplex[1:] - simplex[0])) < xtol:
            converged = True
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]

        xr = centroid + alpha * (centroid - worst)
        fr = func(xr)
        evals += 1
        if fvals[0] <= fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = func(xe)
            evals += 1
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
            continue
        if fr < fvals[-1]:
            xc = centroid + rho * (xr - centroid)
            fc = func(xc)
            evals += 1
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
                continue
        else:
            xc = centroid + rho * (worst - centroid)
            fc = func(xc)
            evals += 1
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
                continue
        simplex[1:] = simplex[0] + sigma * (simplex[1:] - simplex[0])
        fvals[1:] = [func(v) for v in simplex[1:]]
        evals += n
    best = int(np.argmin(fvals))
    return SimplexResult(simplex[best].copy(), float(fvals[best]), converged, it, evals)


class BoxTransform:
    """Maps unconstrained coordinates onto a box.

    Per coordinate: ``(lo, None)`` -> lo + exp(u); ``(lo, hi)`` -> scaled tanh;
    ``(None, None)`` -> identity.
    """

    def __init__(self, bounds):
        self.bounds = [tuple(b) if b is not None else (None, None) for b in bounds]

    def to_box(self, u):
        u = np.asarray(u, dtype=np.float64)
        out = np.empty_like(u)
        for i, (lo, hi) in enumerate(self.bounds):
            if lo is None and hi is None:
                out[i] = u[i]
            elif hi is None:
                out[i] = lo + np.exp(min(u[i], 700.0))
            elif lo is None:
                out[i] = hi - np.exp(min(u[i], 700.0))
            else:
                out[i] = lo + (hi - lo) * 0.5 * (1.0 + np.tanh(u[i]))
        return out

    def from_box(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.empty_like(x)
        for i, (lo, hi) in enumerate(self.bounds):
            if lo is None and hi is None:
                out[i] = x[i]
            elif hi is None:
                out[i] = np.log(x[i] - lo)
            elif lo is None:
                out[i] = np.log(hi - x[i])
            else:
                s = np.clip(2.0 * (x[i] - lo) / (hi - lo) - 1.0, -1.0 + 1e-12, 1.0 - 1e-12)
                out[i] = np.arctanh(s)
        return out
