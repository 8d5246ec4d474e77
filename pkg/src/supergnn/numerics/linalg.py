"""Dense matrix helpers and a one-sided Jacobi SVD.

Tensors are plain ``float64`` numpy arrays. ``as_tensor`` is the single gate
that enforces the finiteness contract; everything downstream assumes it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from supergnn.errors import NoConvergence, NonFinite

_EPS = np.finfo(np.float64).eps


def as_tensor(a, name: str = "tensor") -> np.ndarray:
    """Return ``a`` as a 2-D float64 array, raising NonFinite on NaN/Inf."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"{name}: expected at most 2 dimensions, got {arr.ndim}")
    if not np.isfinite(arr).all():
        raise NonFinite(f"{name} contains NaN or Inf")
    return arr


def check_finite(arr: np.ndarray, name: str = "tensor") -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFinite(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a = u @ diag(sigma) @ v.T`` with ``sigma`` descending."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings for a cyclic-parallel Jacobi sweep.

    Every unordered pair of ``range(n)`` appears exactly once across the
    rounds, and pairs within a round are disjoint so they can be rotated
    simultaneously.
    """
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        left = players[: m // 2]
        right = players[m // 2 :][::-1]
        pairs = [(a, b) for a, b in zip(left, right) if a < n and b < n]
        if pairs:
            i = np.array([min(p) for p in pairs])
            j = np.array([max(p) for p in pairs])
            rounds.append((i, j))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi_columns(a: np.ndarray, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalise the columns of ``a``; returns (rotated a, v)."""
    n = a.shape[1]
    if n < 2:
        return a, np.eye(n)
    # rotate rows of the transposes so each column is a contiguous slice
    w = np.ascontiguousarray(a.T)
    vt = np.eye(n)
    rounds = _round_robin(n)
    tol = _EPS * max(a.shape[0], n)
    # columns below eps * ||A||_F are numerically zero; rotating them only churns rounding noise
    floor = (_EPS * np.linalg.norm(a)) ** 2
    for _ in range(max_sweeps):
        rotated = False
        for i, j in rounds:
            wi = w[i]
            wj = w[j]
            alpha = np.einsum("ij,ij->i", wi, wi)
            beta = np.einsum("ij,ij->i", wj, wj)
            gamma = np.einsum("ij,ij->i", wi, wj)
            active = (np.abs(gamma) > tol * np.sqrt(alpha * beta)) & (alpha > floor) & (beta > floor)
            if not active.any():
                continue
            rotated = True
            if not active.all():
                i, j = i[active], j[active]
                wi, wj = wi[active], wj[active]
                alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            w[i] = c * wi - s * wj
            w[j] = s * wi + c * wj
            vi = vt[i]
            vj = vt[j]
            vt[i] = c * vi - s * vj
            vt[j] = s * vi + c * vj
        if not rotated:
            return w.T, vt.T
    raise NoConvergence(f"Jacobi SVD did not converge in {max_sweeps} sweeps")


def _complete_basis(u: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Fill columns of ``u`` not marked in ``filled`` with an orthonormal completion."""
    m, k = u.shape
    basis = [u[:, c] for c in range(k) if filled[c]]
    out = u.copy()
    candidates = iter(range(m))
    for c in range(k):
        if filled[c]:
            continue
        while True:
            e = np.zeros(m)
            e[next(candidates)] = 1.0
            for _ in range(2):
                for b in basis:
                    e -= (b @ e) * b
            norm = np.linalg.norm(e)
            if norm > 1e-8:
                e /= norm
                break
        out[:, c] = e
        basis.append(e)
    return out


def svd(a) -> SvdResult:
    """Thin singular value decomposition by one-sided (Hestenes) Jacobi.

    Tall inputs are first reduced with a Householder QR so the rotations act
    on a small square factor. Wide inputs are handled through the transpose.

    Raises:
        NonFinite: input has NaN/Inf.
        NoConvergence: more than ``100 * min(rows, cols)`` sweeps were needed.
    """
    a = as_tensor(a, "svd input")
    m, n = a.shape
    if m == 0 or n == 0:
        raise ValueError("svd needs at least one row and one column")
    if m < n:
        res = svd(a.T)
        return SvdResult(u=res.v, sigma=res.sigma, v=res.u)

    # work at unit scale so squared column norms neither underflow nor overflow
    amax = float(np.abs(a).max())
    if amax > 0:
        a = a / amax
    else:
        amax = 1.0
    max_sweeps = 100 * min(m, n)
    if m > n:
        q, r = np.linalg.qr(a, mode="reduced")
    else:
        q, r = None, a.copy()
    work, v = _jacobi_columns(r.copy(), max_sweeps)
    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]
    scale = sigma[0] if sigma[0] > 0 else 1.0
    filled = sigma > scale * _EPS * n
    u = np.zeros_like(work)
    u[:, filled] = work[:, filled] / sigma[filled]
    if not filled.all():
        u = _complete_basis(u, filled)
    if q is not None:
        u = q @ u
    return SvdResult(u=u, sigma=sigma * amax, v=v)


def singular_values(a) -> np.ndarray:
    return svd(a).sigma
