"""Dense symmetric eigendecomposition, written in-repo.

Householder reduction to tridiagonal form followed by implicit-shift QL
iteration with accumulated rotations (the classic tred2/tql2 pair).  Dense
O(n^3); intended for the desk scales this package targets.  Each returned
pair is residual-checked against tol * ||M||_2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError

_MAX_QL_SWEEPS = 50


@dataclass
class LaplacianSpectrum:
    """Ascending eigenvalues (all n) and the first r eigenvectors (columns)."""

    eigenvalues: np.ndarray  # shape (n,), ascending
    eigenvectors: np.ndarray  # shape (n, r), orthonormal columns

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.eigenvalues)


def _householder_tridiagonalize(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reduce symmetric a to tridiagonal T = Q^T a Q; returns (diag, subdiag, Q)."""
    n = a.shape[0]
    a = a.copy()
    q = np.eye(n)
    for k in range(n - 2):
        x = a[k + 1 :, k]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            continue
        v = x.copy()
        v[0] += math.copysign(norm_x, x[0] if x[0] != 0 else 1.0)
        vn = np.linalg.norm(v)
        if vn == 0.0:
            continue
        v /= vn
        # Similarity transform with P = I - 2 v v^T on the trailing block.
        sub = a[k + 1 :, k:]
        sub -= 2.0 * np.outer(v, v @ sub)
        right = a[:, k + 1 :]
        right -= 2.0 * np.outer(right @ v, v)
        qcols = q[:, k + 1 :]
        qcols -= 2.0 * np.outer(qcols @ v, v)
    d = np.diag(a).copy()
    e = np.zeros(n)
    if n > 1:
        e[: n - 1] = np.diag(a, -1)
    return d, e, q


def _ql_implicit(d: np.ndarray, e: np.ndarray, z: np.ndarray) -> None:
    """Implicit-shift QL on tridiagonal (d, e) updating eigenvector matrix z in place.

    e[i] couples d[i] and d[i+1]; e[n-1] is scratch.
    """
    n = d.size
    eps = np.finfo(float).eps
    for l in range(n):
        sweeps = 0
        while True:
            m = n - 1
            for mm in range(l, n - 1):
                dd = abs(d[mm]) + abs(d[mm + 1])
                if abs(e[mm]) <= eps * dd:
                    m = mm
                    break
            if m == l:
                break
            sweeps += 1
            if sweeps > _MAX_QL_SWEEPS:
                raise NumericError(f"QL iteration failed to converge at eigenvalue {l}")
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            underflow = False
            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = math.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                t = (d[i] - g) * s + 2.0 * c * b
                p = s * t
                d[i + 1] = g + p
                g = c * t - b
                zf = z[:, i + 1].copy()
                z[:, i + 1] = s * z[:, i] + c * zf
                z[:, i] = c * z[:, i] - s * zf
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0


def sym_eig(m: np.ndarray, r: int | None = None, tol: float = 1e-8) -> LaplacianSpectrum:
    """First r ascending eigenpairs of a symmetric matrix.

    Raises NumericError on asymmetric input (beyond 1e-12), non-convergence,
    or a residual ||Mv - lambda v|| exceeding tol * ||M||_2.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NumericError(f"expected a square matrix, got shape {m.shape}")
    n = m.shape[0]
    scale = max(1.0, float(np.abs(m).max()) if m.size else 1.0)
    if n > 0 and float(np.abs(m - m.T).max()) > 1e-12 * scale:
        raise NumericError("matrix is not symmetric within 1e-12")
    if r is None:
        r = n
    if not (0 <= r <= n):
        raise NumericError(f"requested {r} eigenvectors from a {n}x{n} matrix")
    sym = (m + m.T) / 2.0
    d, e, z = _householder_tridiagonalize(sym)
    _ql_implicit(d, e, z)
    order = np.argsort(d, kind="stable")
    values = d[order]
    vectors = z[:, order[:r]].copy()
    norm = float(np.abs(values).max()) if n else 0.0
    if r > 0:
        residual = sym @ vectors - vectors * values[:r]
        worst = float(np.linalg.norm(residual, axis=0).max())
        if worst > tol * max(norm, np.finfo(float).tiny):
            raise NumericError(f"eigenpair residual {worst:.3e} exceeds {tol:.1e} * ||M||")
    return LaplacianSpectrum(eigenvalues=values, eigenvectors=vectors)
