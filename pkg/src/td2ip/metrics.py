"""MPJPE at millisecond horizons, Frechet distance of Gaussian fits, PCA export."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .diffcore import ContractError, DimensionError

TABLE_HORIZONS_MS = (80.0, 160.0, 320.0, 400.0, 560.0, 1000.0)
SHORT_TERM_MS = (80.0, 160.0, 320.0, 400.0)


class HorizonError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass
class HorizonSpec:
    horizons_ms: Sequence[float] = TABLE_HORIZONS_MS
    fps: float = 25.0

    def frames(self, t_f: int) -> list[int]:
        return [horizon_to_frame(ms, self.fps, t_f) for ms in self.horizons_ms]


def horizon_to_frame(ms: float, fps: float, t_f: int | None = None) -> int:
    """1-based future frame index for a lead time in milliseconds."""
    if not (ms > 0 and fps > 0):
        raise HorizonError(f"horizon {ms} ms at {fps} fps: both must be positive")
    # round half up; Python's round() would send 0.5 to 0
    idx = max(1, int(math.floor(ms * fps / 1000.0 + 0.5)))
    if t_f is not None and idx > t_f:
        raise HorizonError(f"horizon {ms:g} ms maps to frame {idx}, beyond the {t_f}-frame future")
    return idx


def horizon_key(ms: float) -> str:
    return str(int(ms)) if float(ms).is_integer() else repr(float(ms))


def _check_pair(preds, gts) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape:
        raise DimensionError(f"predictions {preds.shape} vs ground truth {gts.shape}")
    if preds.ndim != 4 or preds.shape[-1] != 3:
        raise DimensionError(f"expected N x T_f x J x 3, got {preds.shape}")
    return preds, gts


def mpjpe_at_frame(preds, gts, t: int) -> float:
    preds, gts = _check_pair(preds, gts)
    if not 1 <= t <= preds.shape[1]:
        raise HorizonError(f"frame {t} outside 1..{preds.shape[1]}")
    d = preds[:, t - 1] - gts[:, t - 1]
    return float(np.sqrt((d * d).sum(axis=-1)).mean())


def mpjpe_per_horizon(preds, gts, spec: HorizonSpec) -> dict[float, float]:
    preds, gts = _check_pair(preds, gts)
    return {ms: mpjpe_at_frame(preds, gts, f) for ms, f in zip(spec.horizons_ms, spec.frames(preds.shape[1]))}


def mpjpe_average(preds, gts, spec: HorizonSpec, over: str = "horizons") -> float:
    """Mean of the per-horizon errors, or of every future frame with ``over='frames'``."""
    preds, gts = _check_pair(preds, gts)
    if over == "horizons":
        vals = list(mpjpe_per_horizon(preds, gts, spec).values())
    elif over == "frames":
        vals = [mpjpe_at_frame(preds, gts, t) for t in range(1, preds.shape[1] + 1)]
    else:
        raise ValueError(f"over must be 'horizons' or 'frames', got {over!r}")
    return float(np.mean(vals))


# ---------------------------------------------------------------- Gaussian fits


def gaussian_fit(features) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {x.shape[0]}")
    mu = x.mean(axis=0)
    c = x - mu
    cov = c.T @ c / (x.shape[0] - 1)
    return mu, 0.5 * (cov + cov.T)


@njit(cache=True)
def _jacobi_sweeps(a, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if math.sqrt(off) < tol or sweep == max_sweeps:
            return v, sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return v, max_sweeps


def jacobi_eigh(S, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in descending order and eigenvectors as columns.
    The off-diagonal stopping threshold is ``tol`` scaled by ``max(1, ||S||_F)``.
    """
    a = np.array(S, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    scale = max(1.0, float(np.linalg.norm(a)))
    v, _ = _jacobi_sweeps(a, tol * scale, max_sweeps)
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def _symmetric(S, tol: float) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"expected a square matrix, got {S.shape}")
    gap = float(np.max(np.abs(S - S.T))) if S.size else 0.0
    if gap > tol * max(1.0, float(np.max(np.abs(S)))):
        raise ContractError(f"matrix is not symmetric (max |S - S^T| = {gap:.3g})")
    return 0.5 * (S + S.T)


def matrix_sqrt_psd(S, sym_tol: float = 1e-8) -> np.ndarray:
    S = _symmetric(S, sym_tol)
    w, Q = jacobi_eigh(S)
    root = np.sqrt(np.clip(w, 0.0, None))
    R = (Q * root) @ Q.T
    return 0.5 * (R + R.T)


def frechet_distance(mu_a, cov_a, mu_b, cov_b) -> float:
    mu_a, mu_b = np.atleast_1d(mu_a), np.atleast_1d(mu_b)
    cov_a, cov_b = np.atleast_2d(cov_a), np.atleast_2d(cov_b)
    if mu_a.shape != mu_b.shape or cov_a.shape != cov_b.shape:
        raise DimensionError(f"feature widths differ: {mu_a.shape} vs {mu_b.shape}")
    # tr sqrt(Ca Cb) == tr sqrt(Ra Cb Ra) with Ra = sqrt(Ca), which stays symmetric
    root_a = matrix_sqrt_psd(cov_a)
    inner = root_a @ cov_b @ root_a
    cross = np.trace(matrix_sqrt_psd(0.5 * (inner + inner.T)))
    diff = mu_a - mu_b
    d = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    return max(d, 0.0)


def fid(features_a, features_b) -> float:
    mu_a, cov_a = gaussian_fit(features_a)
    mu_b, cov_b = gaussian_fit(features_b)
    return frechet_distance(mu_a, cov_a, mu_b, cov_b)


def pca_project_2d(features) -> np.ndarray:
    """Centre and project onto the two leading covariance eigenvectors.

    Each eigenvector is signed so its largest-magnitude entry is positive.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 3:
        raise InsufficientDataError(f"need at least 3 samples, got {x.shape[0]}")
    c = x - x.mean(axis=0)
    _, cov = gaussian_fit(x)
    w, Q = jacobi_eigh(cov)
    out = np.zeros((x.shape[0], 2))
    for k in range(min(2, Q.shape[1])):
        if w[k] <= 0:
            continue
        vec = Q[:, k]
        if vec[np.argmax(np.abs(vec))] < 0:
            vec = -vec
        out[:, k] = c @ vec
    return out


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    mpjpe_per_horizon: dict[float, float]
    mpjpe_average: float
    fid: float | None = None
    param_count: int = 0
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "mpjpe_ms": {horizon_key(k): v for k, v in self.mpjpe_per_horizon.items()},
            "mpjpe_avg": self.mpjpe_average,
            "fid": self.fid,
            "param_count": self.param_count,
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")


def read_feature_csv(path) -> np.ndarray:
    with open(path) as fh:
        lines = [ln for ln in fh.read().replace("\r\n", "\n").split("\n") if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty feature file")
    width = len(lines[0].split(","))
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        toks = ln.split(",")
        if len(toks) != width:
            raise ValueError(f"{path}: row {i} has {len(toks)} fields, header has {width}")
        try:
            rows.append([float(t) for t in toks])
        except ValueError:
            raise ValueError(f"{path}: row {i} has a non-numeric field") from None
    return np.array(rows, dtype=np.float64).reshape(len(rows), width)


def write_feature_csv(features, path) -> None:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    with open(path, "w") as fh:
        fh.write(",".join(f"f{i}" for i in range(x.shape[1])) + "\n")
        for row in x:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_points_csv(points, path) -> None:
    with open(path, "w") as fh:
        fh.write("x,y\n")
        for x, y in np.asarray(points):
            fh.write(f"{float(x)!r},{float(y)!r}\n")
