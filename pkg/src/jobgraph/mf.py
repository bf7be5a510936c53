"""Matrix-factorization baseline trained with alternating least squares.

The interaction matrix holds +1 for an application and -1 for a job the
user saw in a recommendation email but did not click (the negative signal
prevents the all-positive matrix from collapsing to rank one). Factors and
per-user/per-job biases are fit by exact regularized least squares over the
observed entries only, alternating between the user side and the job side.
An optional implicit-feedback term adds per-job vectors accumulated over
each user's click history.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .ingest import DedupedSignal, SignalKind

logger = logging.getLogger(__name__)


@dataclass
class RatingsMatrix:
    """Sparse +-1 interaction matrix with id-index mappings.

    ``implicit`` maps a user index to the (sorted) indexed jobs the user
    clicked; it feeds the optional implicit-feedback term.
    """

    user_ids: list[str]
    job_ids: list[str]
    entries: list[tuple[int, int, float]]
    implicit: dict[int, tuple[int, ...]] = field(default_factory=dict)

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_jobs(self) -> int:
        return len(self.job_ids)


def build_matrix(signals: Iterable[DedupedSignal]) -> RatingsMatrix:
    """Build the +-1 matrix from deduped signals.

    Applies map to +1 and ignored emails to -1; an apply wins any conflict
    on the same (user, job) cell. Clicks never become entries, but clicks
    on indexed jobs are collected as the implicit sets.
    """
    values: dict[tuple[str, str], float] = {}
    clicks: list[tuple[str, str]] = []
    for s in signals:
        key = (s.user_id, s.job_id)
        if s.kind is SignalKind.APPLY:
            values[key] = 1.0
        elif s.kind is SignalKind.EMAIL_OPEN_NO_CLICK:
            if values.get(key) != 1.0:
                values[key] = -1.0
        else:
            clicks.append(key)

    user_ids = sorted({u for u, _ in values})
    job_ids = sorted({j for _, j in values})
    user_index = {u: i for i, u in enumerate(user_ids)}
    job_index = {j: i for i, j in enumerate(job_ids)}
    entries = sorted(
        (user_index[u], job_index[j], v) for (u, j), v in values.items()
    )
    implicit: dict[int, set[int]] = {}
    for u, j in clicks:
        ui, ji = user_index.get(u), job_index.get(j)
        if ui is not None and ji is not None:
            implicit.setdefault(ui, set()).add(ji)
    return RatingsMatrix(
        user_ids,
        job_ids,
        entries,
        {u: tuple(sorted(js)) for u, js in implicit.items()},
    )


@dataclass
class FactorModel:
    """Biased latent-factor model with an optional implicit-feedback table."""

    user_factors: np.ndarray  # (m, k)
    job_factors: np.ndarray  # (n, k)
    user_bias: np.ndarray  # (m,)
    job_bias: np.ndarray  # (n,)
    implicit_factors: np.ndarray  # (n, k), zeros unless implicit training ran
    mu: float
    reg: float
    user_ids: list[str]
    job_ids: list[str]
    loss_trace: list[tuple[str, float]] = field(default_factory=list)
    mse_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.user_index = {u: i for i, u in enumerate(self.user_ids)}
        self.job_index = {j: i for i, j in enumerate(self.job_ids)}

    @property
    def k(self) -> int:
        return self.user_factors.shape[1]


def _solve_row(design: np.ndarray, target: np.ndarray, reg: float) -> np.ndarray:
    """Exact ridge solution of one row's least-squares subproblem."""
    gram = design.T @ design
    rhs = design.T @ target
    if reg > 0.0:
        gram = gram + reg * np.eye(gram.shape[0])
        return np.linalg.solve(gram, rhs)
    return np.linalg.lstsq(gram, rhs, rcond=None)[0]


def _implicit_offsets(matrix: RatingsMatrix, Y: np.ndarray, k: int) -> np.ndarray:
    """Per-user  |N(u)|^{-1/2} * sum of Y rows over the implicit set."""
    offsets = np.zeros((matrix.num_users, k))
    for u, items in matrix.implicit.items():
        if items:
            offsets[u] = Y[list(items)].sum(axis=0) / np.sqrt(len(items))
    return offsets


def als_train(
    matrix: RatingsMatrix,
    k: int = 32,
    reg: float = 0.1,
    iterations: int = 10,
    seed: int = 0,
    implicit: bool = False,
) -> FactorModel:
    """Alternating least squares over the observed entries.

    Each half-step solves its block exactly (with the regularizer), so the
    regularized objective is non-increasing after every half-step; the
    per-half-step objective and per-iteration observed MSE are recorded on
    the returned model. Deterministic for a fixed seed.
    """
    if not matrix.entries:
        raise ValueError("ratings matrix is empty")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if reg < 0:
        raise ValueError(f"reg must be >= 0, got {reg}")

    m, n = matrix.num_users, matrix.num_jobs
    rng = np.random.default_rng(seed)
    U = rng.uniform(-0.01, 0.01, size=(m, k))
    J = rng.uniform(-0.01, 0.01, size=(n, k))
    b_u = np.zeros(m)
    b_j = np.zeros(n)
    Y = np.zeros((n, k))

    rows = np.array([e[0] for e in matrix.entries], dtype=np.intp)
    cols = np.array([e[1] for e in matrix.entries], dtype=np.intp)
    vals = np.array([e[2] for e in matrix.entries])
    mu = float(vals.mean())

    by_user: dict[int, np.ndarray] = {
        u: np.flatnonzero(rows == u) for u in np.unique(rows)
    }
    by_job: dict[int, np.ndarray] = {j: np.flatnonzero(cols == j) for j in np.unique(cols)}
    job_users_with: dict[int, list[int]] = {}
    if implicit:
        for u, items in matrix.implicit.items():
            for g in items:
                job_users_with.setdefault(g, []).append(u)

    def offsets() -> np.ndarray:
        return (
            _implicit_offsets(matrix, Y, k) if implicit else np.zeros((m, k))
        )

    def predictions(off: np.ndarray) -> np.ndarray:
        return (
            mu
            + b_u[rows]
            + b_j[cols]
            + np.einsum("ij,ij->i", U[rows] + off[rows], J[cols])
        )

    def objective(off: np.ndarray) -> float:
        resid = vals - predictions(off)
        penalty = (
            np.sum(U * U)
            + np.sum(J * J)
            + np.sum(b_u * b_u)
            + np.sum(b_j * b_j)
            + np.sum(Y * Y)
        )
        return float(np.sum(resid * resid) + reg * penalty)

    loss_trace: list[tuple[str, float]] = []
    mse_trace: list[float] = []

    for it in range(1, iterations + 1):
        off = offsets()
        for u, idx in by_user.items():
            js = cols[idx]
            design = np.hstack([J[js], np.ones((len(idx), 1))])
            target = vals[idx] - mu - b_j[js] - J[js] @ off[u]
            beta = _solve_row(design, target, reg)
            U[u] = beta[:k]
            b_u[u] = beta[k]
        loss_trace.append((f"iter{it}:users", objective(off)))

        for j, idx in by_job.items():
            us = rows[idx]
            design = np.hstack([U[us] + off[us], np.ones((len(idx), 1))])
            target = vals[idx] - mu - b_u[us]
            beta = _solve_row(design, target, reg)
            J[j] = beta[:k]
            b_j[j] = beta[k]
        off = offsets()
        loss_trace.append((f"iter{it}:jobs", objective(off)))

        if implicit and job_users_with:
            # Cyclic exact solves per implicit-factor row; each observation
            # (u, j) with g in N(u) constrains Y[g] through c_u * J[j].
            for g in sorted(job_users_with):
                design_rows = []
                targets = []
                for u in job_users_with[g]:
                    idx = by_user.get(u)
                    if idx is None:
                        continue
                    c_u = 1.0 / np.sqrt(len(matrix.implicit[u]))
                    partial = off[u] - c_u * Y[g]
                    js = cols[idx]
                    resid = (
                        vals[idx]
                        - mu
                        - b_u[u]
                        - b_j[js]
                        - J[js] @ (U[u] + partial)
                    )
                    design_rows.append(c_u * J[js])
                    targets.append(resid)
                if not design_rows:
                    continue
                design = np.vstack(design_rows)
                target = np.concatenate(targets)
                Y[g] = _solve_row(design, target, reg)
                off = offsets()
            loss_trace.append((f"iter{it}:implicit", objective(off)))

        if not (
            np.all(np.isfinite(U))
            and np.all(np.isfinite(J))
            and np.all(np.isfinite(b_u))
            and np.all(np.isfinite(b_j))
            and np.all(np.isfinite(Y))
        ):
            raise ArithmeticError(f"non-finite factors after iteration {it}")

        resid = vals - predictions(off)
        mse = float(np.mean(resid * resid))
        mse_trace.append(mse)
        logger.info("als iteration %d: observed MSE %.6g", it, mse)

    return FactorModel(
        U, J, b_u, b_j, Y, mu, reg, list(matrix.user_ids), list(matrix.job_ids),
        loss_trace, mse_trace,
    )


def predict_biased(model: FactorModel, user_id: str, job_id: str) -> float:
    """Mean plus user and job biases plus the factor dot product.

    Raises KeyError for ids the factorization never saw; this is exactly
    the cold-start failure the graph engine avoids.
    """
    u = model.user_index[user_id]
    j = model.job_index[job_id]
    return float(
        model.mu
        + model.user_bias[u]
        + model.job_bias[j]
        + model.job_factors[j] @ model.user_factors[u]
    )


def predict_implicit(
    model: FactorModel, user_id: str, job_id: str, implicit_items: Iterable[str] = ()
) -> float:
    """Prediction with the implicit-feedback term over ``implicit_items``.

    Unknown implicit items are skipped with a warning; an empty implicit
    set reduces exactly to :func:`predict_biased`.
    """
    known: list[int] = []
    for item in implicit_items:
        ji = model.job_index.get(item)
        if ji is None:
            logger.warning("implicit item %r unknown to the model; skipped", item)
        else:
            known.append(ji)
    if not known:
        return predict_biased(model, user_id, job_id)
    u = model.user_index[user_id]
    j = model.job_index[job_id]
    blended = model.user_factors[u] + model.implicit_factors[known].sum(axis=0) / np.sqrt(
        len(known)
    )
    return float(model.mu + model.user_bias[u] + model.job_bias[j] + model.job_factors[j] @ blended)


def recommend_mf(
    model: FactorModel,
    user_id: str,
    k: int,
    exclusions: Iterable[str] = (),
    active_jobs: Iterable[str] | None = None,
    implicit_items: Sequence[str] | None = None,
) -> list[tuple[str, float]]:
    """Top-k jobs by predicted score for a known user.

    Only jobs represented in the factorization can ever be recommended;
    ``active_jobs`` (when given) and ``exclusions`` filter the pool. Ties
    break by job_id.
    """
    if user_id not in model.user_index:
        raise KeyError(f"user {user_id!r} unknown to the model")
    u = model.user_index[user_id]
    user_vec = model.user_factors[u]
    if implicit_items:
        known = [model.job_index[i] for i in implicit_items if i in model.job_index]
        if known:
            user_vec = user_vec + model.implicit_factors[known].sum(axis=0) / np.sqrt(len(known))
    scores = model.mu + model.user_bias[u] + model.job_bias + model.job_factors @ user_vec

    banned = set(exclusions)
    allowed = None if active_jobs is None else set(active_jobs)
    candidates = {
        job_id: float(scores[j])
        for job_id, j in model.job_index.items()
        if job_id not in banned and (allowed is None or job_id in allowed)
    }
    ranked = sorted(candidates.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def save_model(model: FactorModel, fh: TextIO) -> None:
    """Plain-text dump: header ``m n k mu`` then U, b_u, J, b_j, Y sections."""
    m, n, k = len(model.user_ids), len(model.job_ids), model.k
    fh.write(f"{m} {n} {k} {model.mu!r}\n")
    for row in model.user_factors:
        fh.write(" ".join(repr(x) for x in row.tolist()) + "\n")
    for x in model.user_bias.tolist():
        fh.write(f"{x!r}\n")
    for row in model.job_factors:
        fh.write(" ".join(repr(x) for x in row.tolist()) + "\n")
    for x in model.job_bias.tolist():
        fh.write(f"{x!r}\n")
    for row in model.implicit_factors:
        fh.write(" ".join(repr(x) for x in row.tolist()) + "\n")


def load_model(
    lines: Iterable[str],
    user_ids: Sequence[str] | None = None,
    job_ids: Sequence[str] | None = None,
    reg: float = 0.0,
) -> FactorModel:
    """Reload a model dump; id sequences restore id-based lookups (falling
    back to positional string indices when omitted)."""
    it = iter(lines)
    m, n, k, mu = next(it).split()
    m, n, k = int(m), int(n), int(k)

    def read_block(count: int, width: int) -> np.ndarray:
        data = [[float(x) for x in next(it).split()] for _ in range(count)]
        arr = np.array(data, dtype=np.float64).reshape(count, width)
        return arr

    U = read_block(m, k)
    b_u = read_block(m, 1).ravel()
    J = read_block(n, k)
    b_j = read_block(n, 1).ravel()
    Y = read_block(n, k)
    users = list(user_ids) if user_ids is not None else [str(i) for i in range(m)]
    jobs = list(job_ids) if job_ids is not None else [str(i) for i in range(n)]
    if len(users) != m or len(jobs) != n:
        raise ValueError("id list lengths do not match the dump header")
    return FactorModel(U, J, b_u, b_j, Y, float(mu), reg, users, jobs)
