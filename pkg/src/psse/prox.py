"""Closed-form proximal primitives shared by both LAV solvers.

Each function returns the exact minimizer of a small convex problem:
soft thresholding for the l1 norm, a shrinkage step for the squared norm,
the prox of ``lam * ||Re(u) - c||_1`` (which only shrinks the real part),
the Euclidean projection onto the subspace ``{(w, u): A w = u}``, and the
minimizer of ``|Re(a^H w) - c| + ||w||^2 / (2 tau)`` used by the stochastic
updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


@dataclass(frozen=True)
class ProjectionHandle:
    """Cached factorization of ``I + A^H A`` plus the materialized adjoint."""

    cho: tuple[np.ndarray, bool]
    adjoint: np.ndarray


def soft_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    """Elementwise sign(x) * max(|x| - tau, 0)."""
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def complex_l1_prox(d: np.ndarray, c: np.ndarray, lam: float) -> np.ndarray:
    """argmin over u of ``lam * ||Re(u) - c||_1 + 0.5 * ||u - d||^2``.

    The imaginary part is untouched; the real part is a shifted shrinkage.
    """
    return c + soft_threshold(d.real - c, lam) + 1j * d.imag


def ridge_shrink(w: np.ndarray, lam_dual: np.ndarray, rho: float) -> np.ndarray:
    """Minimizer of ``0.5 ||x||^2 + (rho/2) ||x - (w - lam_dual)||^2``."""
    return (rho / (1.0 + rho)) * (w - lam_dual)


def affine_projection_factor(A: np.ndarray) -> ProjectionHandle:
    """Cholesky factorization of ``I + A^H A``, reusable across projections."""
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite entries in projection matrix")
    adjoint = np.ascontiguousarray(A.conj().T)
    gram = adjoint @ A
    gram[np.diag_indices_from(gram)] += 1.0
    return ProjectionHandle(scipy.linalg.cho_factor(gram), adjoint)


def affine_project(
    handle: ProjectionHandle, A: np.ndarray, b: np.ndarray, d: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean projection of ``(b, d)`` onto ``{(w, u): A w = u}``."""
    w = scipy.linalg.cho_solve(handle.cho, b + handle.adjoint @ d, check_finite=False)
    return w, A @ w


def interval_project(x: float, tau: float) -> float:
    """Closest point to x in [-tau, tau]."""
    return float(min(max(x, -tau), tau))


def scalar_abs_prox(a: np.ndarray, c: float, tau: float) -> np.ndarray:
    """Minimizer of ``|Re(a^H w) - c| + ||w||^2 / (2 tau)``.

    The solution is a clipped real multiple of ``a``; a zero ``a`` gives the
    zero vector (the objective is then minimized at the origin).
    """
    norm_sq = float(np.vdot(a, a).real)
    if norm_sq == 0.0:
        return np.zeros_like(a)
    return interval_project(c / norm_sq, tau) * a
