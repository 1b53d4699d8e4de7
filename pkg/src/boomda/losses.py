"""Scalar training losses and their representation-space gradients.

Three ingredients feed the overall objective:

* an information-bottleneck loss on the labeled source batch: a Gaussian
  log-determinant penalty on each representation plus the usual negative
  log-likelihood of the per-modality predictions,
* a correlation-alignment loss per modality: squared Frobenius distance
  between source and target representation covariances,
* a pseudo-label cross-entropy on voted target samples.

The overall objective combines them as ib + alpha1 * pl + alpha2 *
sum_m gamma_m * ca_m, with gamma a simplex weight vector chosen by the
balance solvers.

Gradients are hand-derived; every one of them is validated against central
finite differences in the test suite and by the `gradcheck` CLI command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix, covariance_matrix, diag_variance, frob_sq_diff

LOG_2PI = math.log(2.0 * math.pi)

#: Probabilities are clamped to this value inside logs so a confidently wrong
#: prediction yields a large but finite loss.
PROB_FLOOR = 1e-12

#: Default clamp for per-dimension representation variances, keeping the
#: log-variance penalty finite on collapsed dimensions.
VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class LossBreakdown:
    """One iteration's loss values: total = ib + a1 * pl + a2 * gamma . ca."""

    ib: float
    pl: float
    ca: np.ndarray
    total: float


def gaussian_entropy(diag_var: np.ndarray) -> float:
    """Entropy of a diagonal Gaussian: 1/2 sum log var_i + d/2 (1 + log 2pi)."""
    v = np.asarray(diag_var, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("diag_var must be a vector")
    if np.any(v <= 0.0):
        raise ValueError("nonpositive variance")
    d = v.shape[0]
    return float(0.5 * np.sum(np.log(v)) + 0.5 * d * (1.0 + LOG_2PI))


def log_likelihood_mean(probs: np.ndarray, labels: np.ndarray,
                        prob_floor: float = PROB_FLOOR) -> float:
    """Mean of log p(y_n | z_n) over the batch, probabilities floored."""
    probs = as_matrix(probs, "probs")
    labels = np.asarray(labels)
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(np.mean(np.log(np.maximum(picked, prob_floor))))


def ib_loss(representations, probs, labels, beta: float,
            var_floor: float = VAR_FLOOR,
            prob_floor: float = PROB_FLOOR) -> float:
    """Information-bottleneck loss over all heads on a labeled batch.

    For each representation matrix Z (the per-modality ones plus their
    concatenation) with matching prediction matrix:

        beta/2 * sum_i log var_i(Z)  -  mean_n log p(y_n | z_n)

    var_i is the floored per-dimension variance, so log|Sigma| is the sum of
    the logged diagonal. Parameter-independent constants (the Gaussian
    entropy constant and the label entropy) are dropped.
    """
    reps = list(representations)
    prob_list = list(probs)
    if len(reps) != len(prob_list):
        raise ValueError("representations and probability matrices must pair up")
    labels = np.asarray(labels)
    if labels.shape[0] == 0:
        raise ValueError("empty batch")
    total = 0.0
    for z, p in zip(reps, prob_list):
        var = diag_variance(z, var_floor)
        total += 0.5 * beta * float(np.sum(np.log(var)))
        total -= log_likelihood_mean(p, labels, prob_floor)
    return total


def entropy_reg_grad(z: np.ndarray, beta: float,
                     var_floor: float = VAR_FLOOR) -> np.ndarray:
    """Gradient of beta/2 * sum_i log(max(var_i(Z), floor)) wrt Z.

    Zero in dimensions where the floor clamps the variance (the clamped
    loss no longer depends on Z there).
    """
    z = as_matrix(z, "z")
    n = z.shape[0]
    if n < 2:
        raise ValueError("variance undefined for fewer than 2 rows")
    centered = z - z.mean(axis=0)
    var = z.var(axis=0, ddof=1)
    active = var > var_floor
    scale = np.where(active, beta / ((n - 1) * np.maximum(var, var_floor)), 0.0)
    return centered * scale


def ce_mean_grad_logits(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient wrt logits of -mean_n log p(y_n): (probs - onehot) / N."""
    probs = as_matrix(probs, "probs")
    n = probs.shape[0]
    grad = probs.copy()
    grad[np.arange(n), np.asarray(labels)] -= 1.0
    return grad / n


def coral_loss(z_source: np.ndarray, z_target: np.ndarray) -> float:
    """Squared Frobenius distance between the two batch covariances."""
    return frob_sq_diff(covariance_matrix(z_target), covariance_matrix(z_source))


def coral_grads(z_source: np.ndarray, z_target: np.ndarray):
    """Gradients of coral_loss wrt both batches.

    With D = cov(Z_t) - cov(Z_s) and centered batches Zc:

        dL/dZ_t =  4/(N_t - 1) * Zc_t @ D
        dL/dZ_s = -4/(N_s - 1) * Zc_s @ D
    """
    zs = as_matrix(z_source, "z_source")
    zt = as_matrix(z_target, "z_target")
    diff = covariance_matrix(zt) - covariance_matrix(zs)
    cs = zs - zs.mean(axis=0)
    ct = zt - zt.mean(axis=0)
    g_src = (-4.0 / (zs.shape[0] - 1)) * (cs @ diff)
    g_tgt = (4.0 / (zt.shape[0] - 1)) * (ct @ diff)
    return g_src, g_tgt


def pl_loss(probs_target, pseudo, prob_floor: float = PROB_FLOOR) -> float:
    """Mean -log p(pseudo label) over the selected target samples; 0 if none."""
    if len(pseudo.indices) == 0:
        return 0.0
    probs = as_matrix(probs_target, "probs_target")
    picked = probs[pseudo.indices, pseudo.labels]
    return float(-np.mean(np.log(np.maximum(picked, prob_floor))))


def pl_grad_logits(probs_target: np.ndarray, pseudo) -> np.ndarray:
    """Gradient of pl_loss wrt the target logits; zero rows off the set."""
    probs = as_matrix(probs_target, "probs_target")
    grad = np.zeros_like(probs)
    n_sel = len(pseudo.indices)
    if n_sel == 0:
        return grad
    rows = probs[pseudo.indices].copy()
    rows[np.arange(n_sel), pseudo.labels] -= 1.0
    grad[pseudo.indices] = rows / n_sel
    return grad


def overall_loss(ib: float, pl: float, ca: np.ndarray, gamma: np.ndarray,
                 alpha1: float, alpha2: float) -> float:
    """ib + alpha1 * pl + alpha2 * sum_m gamma_m * ca_m for simplex gamma."""
    ca = np.asarray(ca, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    if ca.shape != gamma.shape:
        raise ValueError("gamma and ca lengths disagree")
    if abs(float(np.sum(gamma)) - 1.0) > 1e-9 or float(np.min(gamma)) < -1e-9:
        raise ValueError("gamma is not on the simplex")
    return float(ib + alpha1 * pl + alpha2 * float(gamma @ ca))


def loss_breakdown(ib: float, pl: float, ca: np.ndarray, gamma: np.ndarray,
                   alpha1: float, alpha2: float) -> LossBreakdown:
    total = overall_loss(ib, pl, ca, gamma, alpha1, alpha2)
    return LossBreakdown(ib=ib, pl=pl, ca=np.asarray(ca, dtype=np.float64),
                         total=total)
