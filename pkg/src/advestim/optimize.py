"""Derivative-free outer minimization: a deterministic Nelder-Mead simplex
with the standard (1, 2, 0.5, 0.5) coefficients and fminsearch-style initial
simplex, plus an optional coordinate grid pre-scan to seed it.

Positive parameters are searched on a log scale and correlations through
atanh, so the simplex never leaves the feasible box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["NmResult", "nelder_mead", "grid_prescan", "to_internal", "to_natural"]


def to_internal(values: np.ndarray, scales) -> np.ndarray:
    out = np.asarray(values, dtype=float).copy()
    for i, s in enumerate(scales):
        if s == "log":
            out[i] = np.log(max(out[i], 1e-12))
        elif s == "atanh":
            out[i] = np.arctanh(np.clip(out[i], -1 + 1e-12, 1 - 1e-12))
    return out


def to_natural(values: np.ndarray, scales) -> np.ndarray:
    out = np.asarray(values, dtype=float).copy()
    for i, s in enumerate(scales):
        if s == "log":
            out[i] = np.exp(out[i])
        elif s == "atanh":
            out[i] = np.tanh(out[i])
    return out


@dataclass
class NmResult:
    x: np.ndarray
    fun: float
    evaluations: int
    converged: bool
    trace: list = field(default_factory=list)   # (x, f) in evaluation order


def _initial_simplex(x0: np.ndarray, scale: float) -> np.ndarray:
    k = x0.size
    simplex = np.tile(x0, (k + 1, 1))
    for i in range(k):
        if x0[i] != 0.0:
            simplex[i + 1, i] += scale * x0[i]
        else:
            simplex[i + 1, i] = 0.00025 if scale <= 0.05 else scale
    return simplex


def nelder_mead(fun, x0, scale: float = 0.05, ftol: float = 1e-8,
                xtol: float = 1e-6, max_evals: int = 2000) -> NmResult:
    """Minimize fun from x0.  Deterministic; records every evaluation."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    k = x0.size
    trace = []
    nev = 0

    def f(x):
        nonlocal nev
        v = float(fun(x))
        if np.isnan(v):
            v = np.inf
        nev += 1
        trace.append((x.copy(), v))
        return v

    simplex = _initial_simplex(x0, scale)
    fvals = np.array([f(x) for x in simplex])
    if not np.any(np.isfinite(fvals)):
        raise ValueError("no finite objective value on the initial simplex")
    converged = False
    while nev < max_evals:
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        if (np.max(np.abs(simplex[1:] - simplex[0])) <= xtol
                and np.max(np.abs(fvals[1:] - fvals[0])) <= ftol):
            converged = True
            break
        centroid = simplex[:-1].mean(axis=0)
        xr = centroid + (centroid - simplex[-1])
        fr = f(xr)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (simplex[-1] - centroid)
            fc = f(xc)
            if fc < min(fr, fvals[-1]):
                simplex[-1], fvals[-1] = xc, fc
            else:
                for i in range(1, k + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    fvals[i] = f(simplex[i])
                    if nev >= max_evals:
                        break
    order = np.argsort(fvals, kind="stable")
    return NmResult(x=simplex[order[0]].copy(), fun=float(fvals[order[0]]),
                    evaluations=nev, converged=converged, trace=trace)


def grid_prescan(fun, grids: list[np.ndarray], x0: np.ndarray):
    """Scan each coordinate grid around x0 (one coordinate at a time) and
    return the best point found with its value and the scanned nodes."""
    best = np.asarray(x0, dtype=float).copy()
    fbest = float(fun(best))
    nodes = [(best.copy(), fbest)]
    for i, grid in enumerate(grids):
        if grid is None or len(grid) == 0:
            continue
        for g in grid:
            cand = best.copy()
            cand[i] = g
            fc = float(fun(cand))
            nodes.append((cand, fc))
            if fc < fbest:
                fbest = fc
                best = cand
    return best, fbest, nodes
