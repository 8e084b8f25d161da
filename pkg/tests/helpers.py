"""Shared helpers for convergence measurements against refined references."""

import numpy as np

from pairstop.fem import solve_structured


def refined_reference(params, b, n, factor=16):
    """Reference solution on a factor-times-finer nested mesh."""
    return solve_structured(params, b, factor * n)


def l2_h1_errors(coarse, fine):
    """Exact L2 and H1-seminorm errors between nested piecewise-linear solutions.

    The coarse nodes are a subset of the fine nodes, so the difference is
    linear on every fine element; Simpson per element integrates its square
    exactly, and the slope mismatch is constant per element.
    """
    xf = fine.mesh.nodes
    hf = fine.mesh.h
    diff = coarse(xf) - fine.coeffs
    mid = 0.5 * (diff[:-1] + diff[1:])
    l2_sq = np.sum(hf / 6.0 * (diff[:-1] ** 2 + 4.0 * mid**2 + diff[1:] ** 2))
    slope = (np.diff(diff)) / hf
    h1_sq = np.sum(hf * slope**2)
    return float(np.sqrt(l2_sq)), float(np.sqrt(h1_sq))


def fitted_order(hs, errors):
    """Least-squares slope of log error against log h."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def hat_matrices(mesh):
    """Exact interior stiffness and mass matrices on a uniform mesh."""
    m = mesh.n - 1
    h = mesh.h
    stiff = (np.diag(np.full(m, 2.0)) + np.diag(np.full(m - 1, -1.0), 1)
             + np.diag(np.full(m - 1, -1.0), -1)) / h
    mass = (np.diag(np.full(m, 4.0)) + np.diag(np.full(m - 1, 1.0), 1)
            + np.diag(np.full(m - 1, 1.0), -1)) * h / 6.0
    return stiff, mass
