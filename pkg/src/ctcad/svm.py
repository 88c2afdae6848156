"""Nu-SVM training and prediction with an RBF kernel.

The trainer solves the standard nu-parametrized dual

    min  1/2 sum_ij a_i a_j y_i y_j k(x_i, x_j)
    s.t. 0 <= a_i <= 1/n,   sum_i a_i y_i = 0,   sum_i a_i >= nu

by pairwise working-set descent.  Because the equality and the (active)
sum constraint fix each class's coefficient mass at nu/2, every update
transfers mass between two points of the same class: the maximally
KKT-violating pair, lowest index on ties.  After convergence the margin
rho and offset are recovered from free support vectors and the stored
coefficients are rescaled by 1/rho, so the decision function scores
margin points at exactly +/-1.

nu is feasible iff nu <= 2 * min(n_pos, n_neg) / n; larger values make
the per-class mass constraints unsatisfiable and raise InfeasibleNu.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

POSITIVE_NAME = "COVID"
NEGATIVE_NAME = "NonCOVID"

MODEL_MAGIC = b"NSVM"
MODEL_VERSION = 1

_BOUND_EPS = 1e-14  # slack when testing a coefficient against its box bound


class DimError(ValueError):
    """Vector dimensions disagree."""


class InfeasibleNu(ValueError):
    """nu exceeds 2*min(n_pos, n_neg)/n for the given labels."""


@dataclass(frozen=True)
class NuSvmConfig:
    nu: float = 0.4
    gamma: float = 0.0098
    max_iter: int = 176
    tol: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.nu <= 1.0:
            raise ValueError(f"nu must be in (0, 1], got {self.nu}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be a positive count")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class NuSvmModel:
    """Trained classifier: decision(x) = sum_i coeff_i k(sv_i, x) + bias.

    ``dual_coeffs`` holds a_i y_i / rho for the support vectors (a_i > 0).
    Diagnostic fields (alpha, kkt_residual, dual_objective) describe the
    solver run and are not persisted by save_model.
    """

    support_vectors: np.ndarray  # (m, d) float32
    dual_coeffs: np.ndarray      # (m,) float64
    bias: float
    gamma: float
    nu: float
    max_iter: int
    label_map: dict = field(default_factory=lambda: {1: POSITIVE_NAME, -1: NEGATIVE_NAME})
    converged: bool = True
    iterations: int = 0
    kkt_residual: float = 0.0
    dual_objective: float = 0.0
    alpha: np.ndarray | None = None        # full-length raw dual vector
    sv_index: np.ndarray | None = None     # training-row index per support vector

    @property
    def m(self) -> int:
        return self.support_vectors.shape[0]

    @property
    def d(self) -> int:
        return self.support_vectors.shape[1]


def nu_upper_bound(labels: np.ndarray) -> float:
    """Feasibility ceiling 2*min(n_pos, n_neg)/n."""
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == -1))
    return 2.0 * min(n_pos, n_neg) / y.shape[0]


def rbf_kernel(x: np.ndarray, y: np.ndarray, gamma: float) -> float:
    """exp(-gamma * ||x - y||^2); symmetric, in (0, 1] for gamma >= 0."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise DimError(f"vector lengths differ: {x.shape[0]} vs {y.shape[0]}")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    diff = x - y
    return float(np.exp(-gamma * np.dot(diff, diff)))


def rbf_gram(X: np.ndarray, Z: np.ndarray, gamma: float) -> np.ndarray:
    """Pairwise kernel matrix K[i, j] = exp(-gamma * ||X_i - Z_j||^2)."""
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    sq = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(Z * Z, axis=1)[None, :]
        - 2.0 * (X @ Z.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def _validate_training_set(X: np.ndarray, y: np.ndarray):
    if X.ndim != 2:
        raise ValueError(f"features must be a 2-D matrix, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise ValueError("labels must be one per feature row")
    if X.shape[0] < 2:
        raise ValueError("need at least two training samples")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be +1 or -1")
    if not (np.any(y == 1) and np.any(y == -1)):
        raise ValueError("both classes must be present")


def train_nu_svm(X: np.ndarray, y: np.ndarray, cfg: NuSvmConfig) -> NuSvmModel:
    """Solve the nu-SVM dual; deterministic for identical inputs.

    Hitting the iteration cap with KKT residual >= tol returns a usable
    model flagged converged=False rather than failing.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    _validate_training_set(X, y)

    n = X.shape[0]
    nu_max = nu_upper_bound(y)
    if cfg.nu > nu_max + 1e-12:
        raise InfeasibleNu(
            f"nu={cfg.nu} infeasible: bound 2*min(n+, n-)/n = {nu_max:.6g}"
        )

    upper = 1.0 / n
    K = rbf_gram(X, X, cfg.gamma)
    Q = K * np.outer(y, y)

    # fill each class greedily to mass nu/2 (box-feasible start)
    alpha = np.zeros(n)
    for cls in (1, -1):
        remaining = cfg.nu / 2.0
        for i in np.flatnonzero(y == cls):
            take = min(upper, remaining)
            alpha[i] = take
            remaining -= take
            if remaining <= 0:
                break

    grad = Q @ alpha
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == -1)

    converged = False
    residual = np.inf
    it = 0
    while it < cfg.max_iter:
        best = None  # (violation, i_up, j_down)
        residual = 0.0
        for idx in (pos, neg):
            a = alpha[idx]
            g = grad[idx]
            can_up = a < upper - _BOUND_EPS
            can_down = a > _BOUND_EPS
            if not (np.any(can_up) and np.any(can_down)):
                continue
            g_up = np.where(can_up, g, np.inf)
            g_down = np.where(can_down, g, -np.inf)
            i_loc = int(np.argmin(g_up))
            j_loc = int(np.argmax(g_down))
            violation = g_down[j_loc] - g_up[i_loc]
            residual = max(residual, violation)
            if violation > 0 and (best is None or violation > best[0]):
                best = (violation, int(idx[i_loc]), int(idx[j_loc]))
        if residual < cfg.tol or best is None:
            converged = bool(residual < cfg.tol)
            break

        _, i, j = best
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = 1e-12
        step = (grad[j] - grad[i]) / quad
        step = min(step, upper - alpha[i], alpha[j])
        alpha[i] += step
        alpha[j] -= step
        grad += step * (Q[:, i] - Q[:, j])
        it += 1

    b_mid, rho = _recover_offsets(alpha, grad, y, upper)
    if rho < 1e-12:
        rho = 1e-12  # degenerate zero-margin solution; keep scores finite

    sv_mask = alpha > _BOUND_EPS
    sv_idx = np.flatnonzero(sv_mask)
    coeffs = alpha[sv_idx] * y[sv_idx] / rho
    objective = 0.5 * float(alpha @ Q @ alpha)

    return NuSvmModel(
        support_vectors=np.ascontiguousarray(X[sv_idx], dtype=np.float32),
        dual_coeffs=coeffs,
        bias=-b_mid / rho,
        gamma=cfg.gamma,
        nu=cfg.nu,
        max_iter=cfg.max_iter,
        converged=converged,
        iterations=it,
        kkt_residual=float(residual),
        dual_objective=objective,
        alpha=alpha,
        sv_index=sv_idx,
    )


def _recover_offsets(alpha, grad, y, upper):
    """KKT recovery of (b_mid, rho).

    F(x_i) = y_i * grad_i equals b_mid + rho on free positive SVs and
    b_mid - rho on free negative SVs.  Classes without free SVs fall back
    to the midpoint of the box-bound inequalities.
    """
    F = y * grad
    targets = []
    for cls in (1, -1):
        idx = np.flatnonzero(y == cls)
        a = alpha[idx]
        f = F[idx]
        free = (a > _BOUND_EPS) & (a < upper - _BOUND_EPS)
        if np.any(free):
            targets.append(float(np.mean(f[free])))
            continue
        at_upper = a >= upper - _BOUND_EPS
        at_zero = a <= _BOUND_EPS
        # pos class: F <= target at upper bound, F >= target at zero
        # neg class: mirrored
        if cls == 1:
            lo = np.max(f[at_upper]) if np.any(at_upper) else -np.inf
            hi = np.min(f[at_zero]) if np.any(at_zero) else np.inf
        else:
            lo = np.max(f[at_zero]) if np.any(at_zero) else -np.inf
            hi = np.min(f[at_upper]) if np.any(at_upper) else np.inf
        if np.isinf(lo):
            targets.append(float(hi))
        elif np.isinf(hi):
            targets.append(float(lo))
        else:
            targets.append(float((lo + hi) / 2.0))
    r_pos, r_neg = targets
    return (r_pos + r_neg) / 2.0, (r_pos - r_neg) / 2.0


def decision_value(model: NuSvmModel, x: np.ndarray) -> float:
    """Signed margin score sum_i coeff_i k(sv_i, x) + bias."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.d:
        raise DimError(f"expected {model.d}-dimensional input, got {x.shape[0]}")
    k = rbf_gram(model.support_vectors, x[None, :], model.gamma)[:, 0]
    # pairwise sum (no FMA) so symmetric coefficients cancel exactly
    return float(np.sum(model.dual_coeffs * k) + model.bias)


def decision_values(model: NuSvmModel, X: np.ndarray) -> np.ndarray:
    """Batch decision scores for an (n, d) matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise DimError(f"expected (n, {model.d}) matrix, got {X.shape}")
    k = rbf_gram(X, model.support_vectors, model.gamma)
    return k @ model.dual_coeffs + model.bias


def predict_label(model: NuSvmModel, x: np.ndarray) -> int:
    """Sign of the decision value; an exact 0 resolves to -1 (NonCOVID)."""
    return 1 if decision_value(model, x) > 0.0 else -1


# ---------------------------------------------------------------------------
# model container

_HEADER = struct.Struct("<4sBBHddddIIII")  # magic, version, flags, reserved,
                                           # gamma, nu, bias, kkt, iters, max_iter, m, d


def save_model(model: NuSvmModel, path: str) -> None:
    """Versioned binary container; support vectors and coefficients as
    little-endian float32."""
    pos = model.label_map[1].encode("utf-8")
    neg = model.label_map[-1].encode("utf-8")
    flags = 1 if model.converged else 0
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                MODEL_MAGIC,
                MODEL_VERSION,
                flags,
                0,
                model.gamma,
                model.nu,
                model.bias,
                model.kkt_residual,
                model.iterations,
                model.max_iter,
                model.m,
                model.d,
            )
        )
        fh.write(struct.pack("<d", model.dual_objective))
        fh.write(struct.pack("<H", len(pos)) + pos)
        fh.write(struct.pack("<H", len(neg)) + neg)
        fh.write(np.ascontiguousarray(model.support_vectors, dtype="<f4").tobytes())
        fh.write(np.asarray(model.dual_coeffs, dtype="<f4").tobytes())


def load_model(path: str) -> NuSvmModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size or blob[:4] != MODEL_MAGIC:
        raise ValueError(f"{path} is not a Nu-SVM model file")
    (
        _magic,
        version,
        flags,
        _reserved,
        gamma,
        nu,
        bias,
        kkt,
        iters,
        max_iter,
        m,
        d,
    ) = _HEADER.unpack_from(blob, 0)
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    off = _HEADER.size
    (objective,) = struct.unpack_from("<d", blob, off)
    off += 8

    def read_str(off):
        (length,) = struct.unpack_from("<H", blob, off)
        off += 2
        return blob[off : off + length].decode("utf-8"), off + length

    pos, off = read_str(off)
    neg, off = read_str(off)
    sv_bytes = m * d * 4
    expected = off + sv_bytes + m * 4
    if len(blob) != expected:
        raise ValueError(f"model file truncated: {len(blob)} bytes, expected {expected}")
    svs = np.frombuffer(blob, dtype="<f4", count=m * d, offset=off).reshape(m, d).copy()
    coeffs = np.frombuffer(blob, dtype="<f4", count=m, offset=off + sv_bytes).astype(np.float64)
    return NuSvmModel(
        support_vectors=svs,
        dual_coeffs=coeffs,
        bias=bias,
        gamma=gamma,
        nu=nu,
        max_iter=max_iter,
        label_map={1: pos, -1: neg},
        converged=bool(flags & 1),
        iterations=iters,
        kkt_residual=kkt,
        dual_objective=objective,
    )
