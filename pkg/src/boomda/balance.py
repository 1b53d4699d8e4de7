"""Multi-objective balancing of the per-modality alignment losses.

The alignment losses are balanced by minimizing || sum_m gamma_m row_m ||^2
over the probability simplex, where row_m is the gradient of alignment loss
m with respect to the concatenated representation. Because alignment loss m
only touches modality m's slice (the fused loss touches every slice), the
stacked gradient matrix is block sparse with an arrow-patterned Gram matrix

    Q[m, m] = <g_m, g_m>          Q[m, last] = <g_m, j_m>
    Q[last, last] = sum_m <j_m, j_m>      zeros elsewhere,

where g_m is alignment loss m's gradient on its own slice and j_m is the
fused loss's gradient on slice m. Three solvers are provided:

* `solve_qp_frankwolfe`: projection-free iterations with exact line search;
* `solve_qp_exact_small`: face enumeration, exact for dimension <= 5 (the
  test oracle);
* `closed_form`: the diagonal approximation, gamma_m proportional to
  1 / Q[m, m], which is the exact minimizer when off-diagonals are zero.

`dominance_ratio` reports how far a given Q is from diagonal, and
`kkt_residual` measures first-order optimality of a weight vector on the
diagonal problem.
"""

from __future__ import annotations

import itertools
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .losses import coral_grads
from .numerics import as_matrix


@dataclass(frozen=True)
class GradientBlocks:
    """Flattened alignment-gradient blocks, one pair per modality.

    own[m]:   gradient of modality m's alignment loss on its own slice;
    joint[m]: slice m of the fused alignment loss's gradient.
    Each block stacks the source batch rows before the target batch rows
    and flattens row-major.
    """

    own: list
    joint: list

    @property
    def n_modalities(self) -> int:
        return len(self.own)


@dataclass(frozen=True)
class BalanceWeights:
    """A simplex weight vector with its quadratic objective value."""

    gamma: np.ndarray
    objective: float
    stationary: bool
    iterations: int


@dataclass(frozen=True)
class KKTResidual:
    """First-order optimality residuals of gamma on the diagonal problem."""

    lam: float
    mu: np.ndarray
    stationarity_norm: float
    complementarity: float
    primal_violation: float
    min_gamma: float


@dataclass(frozen=True)
class DescentReport:
    """Per-objective inner products with the combined direction."""

    inner: np.ndarray
    norm_sq: float


@dataclass(frozen=True)
class BenchRow:
    method: str
    dim: int
    iters: int
    objective: float
    objective_gap: float
    wall_ns: int


def flatten_pair(grad_src: np.ndarray, grad_tgt: np.ndarray) -> np.ndarray:
    """Source rows first, then target rows, flattened row-major."""
    return np.concatenate([np.ravel(grad_src, order="C"),
                           np.ravel(grad_tgt, order="C")])


def two_pass_gradients(reps_src, reps_tgt, scope: str = "both") -> GradientBlocks:
    """Alignment gradients for all objectives in two sweeps.

    Sweep one differentiates the fused alignment loss on the concatenated
    representation and splits the result into per-modality slices. Sweep two
    differentiates the sum of the per-modality losses in one go, which is
    valid because loss m's gradient vanishes on every other modality's
    slice. `scope` selects whether blocks stack both domains or the source
    batch only.
    """
    if scope not in ("both", "source"):
        raise ValueError(f"unknown gradient scope {scope!r}")
    m = len(reps_src.z)

    def pack(g_src, g_tgt):
        if scope == "source":
            return np.ravel(g_src, order="C").copy()
        return flatten_pair(g_src, g_tgt)

    gj_src, gj_tgt = coral_grads(reps_src.z_concat, reps_tgt.z_concat)
    joint = [pack(bs, bt) for bs, bt in zip(np.split(gj_src, m, axis=1),
                                            np.split(gj_tgt, m, axis=1))]
    own = []
    for zs, zt in zip(reps_src.z, reps_tgt.z):
        g_src, g_tgt = coral_grads(zs, zt)
        own.append(pack(g_src, g_tgt))
    return GradientBlocks(own=own, joint=joint)


def assemble_gram(blocks: GradientBlocks) -> np.ndarray:
    """Gram matrix of the stacked gradient rows via the block sparsity.

    Never materializes the dense stacked matrix; equal to it row-product
    for row-product.
    """
    m = blocks.n_modalities
    for i, (g, j) in enumerate(zip(blocks.own, blocks.joint)):
        if g.shape != j.shape:
            raise ValueError(
                f"modality {i}: own block {g.shape} vs joint block {j.shape}")
    q = np.zeros((m + 1, m + 1))
    corner = 0.0
    for i in range(m):
        q[i, i] = float(blocks.own[i] @ blocks.own[i])
        cross = float(blocks.own[i] @ blocks.joint[i])
        q[i, m] = cross
        q[m, i] = cross
        corner += float(blocks.joint[i] @ blocks.joint[i])
    q[m, m] = corner
    return q


def _check_square_symmetric(q: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    q = as_matrix(q, "q")
    if q.shape[0] != q.shape[1]:
        raise ValueError(f"q must be square, got {q.shape}")
    if np.max(np.abs(q - q.T)) > tol:
        raise ValueError("q is not symmetric")
    return q


def solve_qp_frankwolfe(q: np.ndarray, max_iter: int = 50,
                        tol: float = 1e-8) -> BalanceWeights:
    """Minimize gamma' Q gamma over the simplex by Frank-Wolfe iterations.

    Each step moves toward the vertex minimizing the linearized objective,
    gamma <- gamma + eta (e_i - gamma), with the exact quadratic line-search
    step clamped to [0, 1]. Stops once the linearization gap drops below
    `tol`; the objective sequence is non-increasing by construction.
    """
    q = _check_square_symmetric(q)
    n = q.shape[0]
    gamma = np.full(n, 1.0 / n)
    qg = q @ gamma
    obj = float(gamma @ qg)
    iters = 0
    for _ in range(max_iter):
        i = int(np.argmin(qg))
        gap = 2.0 * (obj - qg[i])
        if gap < tol:
            break
        curve = q[i, i] - 2.0 * qg[i] + obj
        if curve <= 0.0:
            eta = 1.0
        else:
            eta = min(1.0, (obj - qg[i]) / curve)
        gamma *= 1.0 - eta
        gamma[i] += eta
        qg = q @ gamma
        obj = float(gamma @ qg)
        iters += 1
    return BalanceWeights(gamma=gamma, objective=obj,
                          stationary=obj <= tol, iterations=iters)


def solve_qp_exact_small(q: np.ndarray) -> BalanceWeights:
    """Exact simplex-QP minimizer by enumerating every face.

    On each face (support set S) the equality-constrained stationarity
    system is solved, infeasible candidates are discarded, and the best
    feasible candidate wins. Exponential in the dimension, hence the
    small-instance limit.
    """
    q = _check_square_symmetric(q)
    n = q.shape[0]
    if n > 5:
        raise ValueError("oracle limited to small instances (dimension <= 5)")
    best_gamma = None
    best_obj = np.inf
    faces = 0
    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            faces += 1
            idx = np.array(support)
            if size == 1:
                sub = np.array([1.0])
            else:
                k = size
                system = np.zeros((k + 1, k + 1))
                system[:k, :k] = 2.0 * q[np.ix_(idx, idx)]
                system[:k, k] = 1.0
                system[k, :k] = 1.0
                rhs = np.zeros(k + 1)
                rhs[k] = 1.0
                try:
                    sol = np.linalg.solve(system, rhs)
                except np.linalg.LinAlgError:
                    sol, *_ = np.linalg.lstsq(system, rhs, rcond=None)
                sub = sol[:k]
                if np.min(sub) < -1e-9:
                    continue
                sub = np.maximum(sub, 0.0)
                total = float(np.sum(sub))
                if total <= 0.0:
                    continue
                sub = sub / total
            gamma = np.zeros(n)
            gamma[idx] = sub
            obj = float(gamma @ q @ gamma)
            if obj < best_obj:
                best_obj = obj
                best_gamma = gamma
    scale = max(1.0, float(np.max(np.abs(q))))
    return BalanceWeights(gamma=best_gamma, objective=best_obj,
                          stationary=best_obj <= 1e-12 * scale,
                          iterations=faces)


def closed_form(diag: np.ndarray, floor: float = 1e-12) -> BalanceWeights:
    """Exact minimizer of the diagonal problem: gamma_m proportional to
    1 / diag_m, with a floor guarding degenerate diagonals.

    If every diagonal entry sits below the floor, every alignment gradient
    has vanished, so the uniform vector is returned flagged stationary.
    """
    d = np.asarray(diag, dtype=np.float64)
    n = d.shape[0]
    all_floored = bool(np.all(d < floor))
    if all_floored:
        gamma = np.full(n, 1.0 / n)
    else:
        inv = 1.0 / np.maximum(d, floor)
        gamma = inv / np.sum(inv)
    obj = float(gamma @ (d * gamma))
    return BalanceWeights(gamma=gamma, objective=obj,
                          stationary=all_floored, iterations=0)


def kkt_residual(diag: np.ndarray, gamma: np.ndarray) -> KKTResidual:
    """First-order residuals of gamma for the diagonal problem, taking the
    inequality multipliers mu = 0 and lambda = 1 / sum_k (1 / diag_k).

    Reports the max-norm stationarity defect, the simplex-sum defect, the
    most negative coordinate, and the complementarity product.
    """
    d = np.asarray(diag, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    with np.errstate(divide="ignore"):
        inv_sum = float(np.sum(1.0 / d))
    lam = 1.0 / inv_sum if inv_sum > 0 else 0.0
    mu = np.zeros_like(gamma)
    stationarity = float(np.max(np.abs(d * gamma - lam)))
    min_gamma = float(np.min(gamma))
    primal = max(abs(float(np.sum(gamma)) - 1.0), max(0.0, -min_gamma))
    return KKTResidual(lam=lam, mu=mu, stationarity_norm=stationarity,
                       complementarity=float(abs(mu @ gamma)),
                       primal_violation=primal, min_gamma=min_gamma)


def dominance_ratio(q: np.ndarray) -> float:
    """Largest off-diagonal magnitude over the smallest diagonal entry.

    Values near zero certify that the diagonal approximation is faithful.
    Returns +inf (with a warning) when the diagonal degenerates to zero.
    """
    q = as_matrix(q, "q")
    n = q.shape[0]
    if n < 2 or q.shape[1] != n:
        raise ValueError("dominance ratio needs a square matrix of size >= 2")
    off = np.abs(q[~np.eye(n, dtype=bool)])
    min_diag = float(np.min(np.diag(q)))
    if min_diag <= 0.0:
        warnings.warn("dominance ratio undefined for nonpositive diagonal",
                      RuntimeWarning, stacklevel=2)
        return float("inf")
    return float(np.max(off) / min_diag)


def descent_check(blocks: GradientBlocks, gamma: np.ndarray) -> DescentReport:
    """Inner products of every objective row with the combined direction
    d = sum_m gamma_m row_m, plus ||d||^2, all computed blockwise.

    For the exact simplex-QP solution, min-norm-point geometry guarantees
    every inner product is at least ||d||^2.
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    m = blocks.n_modalities
    if gamma.shape[0] != m + 1:
        raise ValueError("gamma length must be number of objectives")
    if abs(float(np.sum(gamma)) - 1.0) > 1e-9 or float(np.min(gamma)) < -1e-9:
        raise ValueError("gamma is not on the simplex")
    d_blocks = [gamma[i] * blocks.own[i] + gamma[m] * blocks.joint[i]
                for i in range(m)]
    norm_sq = float(sum(b @ b for b in d_blocks))
    inner = np.zeros(m + 1)
    for i in range(m):
        inner[i] = float(blocks.own[i] @ d_blocks[i])
        inner[m] += float(blocks.joint[i] @ d_blocks[i])
    return DescentReport(inner=inner, norm_sq=norm_sq)


def solver_benchmark(dims, trials: int, seed: int = 0, fw_max_iter: int = 50,
                     fw_tol: float = 1e-8) -> list:
    """Time the three solvers on random positive semidefinite matrices.

    Returns one BenchRow per (method, dim, trial); the gap column compares
    each method's objective against the exact oracle, and is NaN where the
    oracle cannot run (dimension > 5).
    """
    rng = np.random.default_rng(seed)
    rows = []
    for dim in dims:
        for _ in range(trials):
            a = rng.standard_normal((dim, dim))
            q = a @ a.T
            exact = None
            if dim <= 5:
                t0 = time.perf_counter_ns()
                exact = solve_qp_exact_small(q)
                t1 = time.perf_counter_ns()
                rows.append(BenchRow("exact_oracle", dim, exact.iterations,
                                     exact.objective, 0.0, t1 - t0))

            t0 = time.perf_counter_ns()
            fw = solve_qp_frankwolfe(q, max_iter=fw_max_iter, tol=fw_tol)
            t1 = time.perf_counter_ns()
            gap = abs(fw.objective - exact.objective) if exact else float("nan")
            rows.append(BenchRow("frank_wolfe", dim, fw.iterations,
                                 fw.objective, gap, t1 - t0))

            t0 = time.perf_counter_ns()
            cf = closed_form(np.diag(q).copy())
            t1 = time.perf_counter_ns()
            cf_obj = float(cf.gamma @ q @ cf.gamma)
            gap = abs(cf_obj - exact.objective) if exact else float("nan")
            rows.append(BenchRow("closed_form", dim, cf.iterations,
                                 cf_obj, gap, t1 - t0))
    return rows
