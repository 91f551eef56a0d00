"""Principal component analysis through a cyclic Jacobi eigensolver.

The sample covariance (divisor ``n - 1``) is diagonalised by plane rotations
swept in fixed row-major order, so results do not depend on the LAPACK build.
Components are sorted by descending eigenvalue and signed so that each row's
largest-magnitude entry is positive.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import jsonio
from .dataset import FeatureMatrix
from .errors import FormatError, NumericalError, ShapeError


def jacobi_eigh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and column eigenvectors of a symmetric matrix (unsorted)."""
    A = np.array(a, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError("matrix must be square")
    m = A.shape[0]
    A = 0.5 * (A + A.T)
    V = np.eye(m)
    scale = np.linalg.norm(A)
    if scale == 0 or m == 1:
        return np.diag(A).copy(), V
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * scale:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                col_p = A[:, p].copy()
                A[:, p] = c * col_p - s * A[:, q]
                A[:, q] = s * col_p + c * A[:, q]
                row_p = A[p, :].copy()
                A[p, :] = c * row_p - s * A[q, :]
                A[q, :] = s * row_p + c * A[q, :]
                A[p, q] = A[q, p] = 0.0
                v_p = V[:, p].copy()
                V[:, p] = c * v_p - s * V[:, q]
                V[:, q] = s * v_p + c * V[:, q]
    else:
        raise NumericalError("Jacobi eigensolver did not converge")
    return np.diag(A).copy(), V


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, m), orthonormal rows
    eigenvalues: np.ndarray  # (k,), non-increasing

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def m(self) -> int:
        return self.components.shape[1]

    def truncate(self, k: int) -> "PcaModel":
        if not 1 <= k <= self.k:
            raise ShapeError(f"k={k} outside [1, {self.k}]")
        return PcaModel(self.mean, self.components[:k], self.eigenvalues[:k])

    def to_dict(self) -> dict:
        return {"k": self.k, "m": self.m, "mean": self.mean, "eigenvalues": self.eigenvalues,
                "components": self.components.reshape(-1)}

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        try:
            comps = np.asarray(d["components"], dtype=float).reshape(int(d["k"]), int(d["m"]))
            return cls(np.asarray(d["mean"], dtype=float), comps, np.asarray(d["eigenvalues"], dtype=float))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad PCA description: {exc}") from exc


def _values(data) -> np.ndarray:
    return np.asarray(data.values if isinstance(data, FeatureMatrix) else data, dtype=np.float64)


def fit(data, k: int) -> PcaModel:
    x = _values(data)
    n, m = x.shape
    if not 1 <= k <= min(n - 1, m):
        raise ShapeError(f"k={k} outside [1, min(n-1, m)={min(n - 1, m)}]")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    evals, evecs = jacobi_eigh(cov)
    order = np.argsort(-evals, kind="stable")[:k]
    comps = evecs[:, order].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean, comps, np.maximum(evals[order], 0.0))


def transform(model: PcaModel, data) -> np.ndarray:
    x = _values(data)
    if x.shape[-1] != model.m:
        raise ShapeError(f"PCA model has {model.m} features, data has {x.shape[-1]}")
    return (x - model.mean) @ model.components.T


def inverse(model: PcaModel, scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[-1] != model.k:
        raise ShapeError(f"expected {model.k} scores per row, got {scores.shape[-1]}")
    return model.mean + scores @ model.components


def reconstruction_mse(model: PcaModel, data) -> float:
    """Mean over rows of the per-feature squared error, the same measure as the VAE's."""
    x = _values(data)
    rec = inverse(model, transform(model, x))
    return float(np.mean(np.mean((x - rec) ** 2, axis=1)))


def mse_curve(data, k_max: int, held_out=None) -> list[tuple[int, float]]:
    """Reconstruction MSE for k = 1..k_max, fit on ``data`` and scored on ``held_out``."""
    full = fit(data, k_max)
    target = data if held_out is None else held_out
    return [(k, reconstruction_mse(full.truncate(k), target)) for k in range(1, k_max + 1)]


def save(path, model: PcaModel) -> None:
    jsonio.write(path, model.to_dict())


def load(path) -> PcaModel:
    return PcaModel.from_dict(jsonio.read(path))
