"""Finite-difference validation of every analytic loss gradient.

Builds a tiny two-modality model (under 100 parameters), draws random
parameters and batches, and compares each loss's analytic parameter
gradient against central finite differences. The pseudo-label set and the
balance weights are frozen at the base point, mirroring how an iteration
treats them: chosen before the gradient step, no gradient flows through
the selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses, network, pseudolabel, trainer

FD_STEP = 1e-5
REL_TOL = 1e-4


@dataclass(frozen=True)
class GradCheckResult:
    loss_name: str
    max_rel_err: float
    passed: bool


@dataclass
class _Problem:
    params: network.ModelParams
    xs: list
    ys: np.ndarray
    xt: list
    pseudo: pseudolabel.PseudoLabelSet
    gamma: np.ndarray
    config: trainer.TrainConfig


def _tiny_problem(rng: np.random.Generator) -> _Problem:
    feature_dims = (2, 2)
    n_classes = 2
    batch = 6
    config = trainer.TrainConfig(beta=0.05, alpha1=0.7, alpha2=0.3,
                                 min_votes=1, hidden_width=2, rep_dim=2,
                                 batch_size=batch)
    params = network.init_model(feature_dims, config.hidden_width,
                                config.rep_dim, n_classes, rng)
    xs = [rng.normal(size=(batch, d)) for d in feature_dims]
    ys = rng.integers(0, n_classes, batch)
    xt = [rng.normal(size=(batch, d)) for d in feature_dims]
    state = network.forward_all(xs, xt, params)
    pseudo = pseudolabel.pseudo_labels(state.probs_tgt, config.min_votes)
    gamma = rng.dirichlet(np.ones(len(feature_dims) + 1))
    return _Problem(params, xs, ys, xt, pseudo, gamma, config)


def loss_names(n_modalities: int) -> list:
    names = ["ib"]
    names += [f"ca_{i + 1}" for i in range(n_modalities + 1)]
    names += ["pl", "total"]
    return names


def _loss_value(name: str, prob: _Problem) -> float:
    state = network.forward_all(prob.xs, prob.xt, prob.params)
    m = prob.params.n_modalities
    cfg = prob.config
    if name == "ib":
        all_src = list(state.reps_src.z) + [state.reps_src.z_concat]
        return losses.ib_loss(all_src, state.probs_src, prob.ys, cfg.beta,
                              cfg.var_floor, cfg.prob_floor)
    if name.startswith("ca_"):
        i = int(name[3:]) - 1
        if i < m:
            return losses.coral_loss(state.reps_src.z[i], state.reps_tgt.z[i])
        return losses.coral_loss(state.reps_src.z_concat,
                                 state.reps_tgt.z_concat)
    if name == "pl":
        return losses.pl_loss(state.probs_tgt[m], prob.pseudo, cfg.prob_floor)
    if name == "total":
        breakdown, _ = trainer.loss_gradients(prob.params, state, prob.ys,
                                              prob.pseudo, prob.gamma, cfg)
        return breakdown.total
    raise ValueError(f"unknown loss {name!r}")


def _loss_grads(name: str, prob: _Problem) -> network.ModelParams:
    state = network.forward_all(prob.xs, prob.xt, prob.params)
    m = prob.params.n_modalities
    cfg = prob.config
    if name == "ib":
        dlogits_src = [losses.ce_mean_grad_logits(p, prob.ys)
                       for p in state.probs_src]
        dz_src = [losses.entropy_reg_grad(z, cfg.beta, cfg.var_floor)
                  for z in state.reps_src.z]
        dz_concat = losses.entropy_reg_grad(state.reps_src.z_concat, cfg.beta,
                                            cfg.var_floor)
        return network.model_backward(prob.params, state,
                                      dlogits_src=dlogits_src, dz_src=dz_src,
                                      dz_concat_src=dz_concat)
    if name.startswith("ca_"):
        i = int(name[3:]) - 1
        if i < m:
            g_src, g_tgt = losses.coral_grads(state.reps_src.z[i],
                                              state.reps_tgt.z[i])
            dz_src = [g_src if j == i else None for j in range(m)]
            dz_tgt = [g_tgt if j == i else None for j in range(m)]
            return network.model_backward(prob.params, state,
                                          dz_src=dz_src, dz_tgt=dz_tgt)
        g_src, g_tgt = losses.coral_grads(state.reps_src.z_concat,
                                          state.reps_tgt.z_concat)
        return network.model_backward(prob.params, state,
                                      dz_concat_src=g_src, dz_concat_tgt=g_tgt)
    if name == "pl":
        dlogits_tgt = [None] * m
        dlogits_tgt.append(losses.pl_grad_logits(state.probs_tgt[m],
                                                 prob.pseudo))
        return network.model_backward(prob.params, state,
                                      dlogits_tgt=dlogits_tgt)
    if name == "total":
        _, grads = trainer.loss_gradients(prob.params, state, prob.ys,
                                          prob.pseudo, prob.gamma, cfg)
        return grads
    raise ValueError(f"unknown loss {name!r}")


def get_param_vector(params: network.ModelParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in network.param_arrays(params)])


def set_param_vector(params: network.ModelParams, vec: np.ndarray) -> None:
    offset = 0
    for a in network.param_arrays(params):
        a[...] = vec[offset:offset + a.size].reshape(a.shape)
        offset += a.size


def numeric_gradient(name: str, prob: _Problem,
                     step: float = FD_STEP) -> np.ndarray:
    """Central finite differences of one loss over the parameter vector."""
    base = get_param_vector(prob.params)
    grad = np.zeros_like(base)
    for i in range(base.size):
        for sign in (1.0, -1.0):
            probe = base.copy()
            probe[i] += sign * step
            set_param_vector(prob.params, probe)
            grad[i] += sign * _loss_value(name, prob)
    set_param_vector(prob.params, base)
    return grad / (2.0 * step)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic))),
                float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / scale


def run_gradcheck(seed: int = 0, draws: int = 20, step: float = FD_STEP,
                  threshold: float = REL_TOL, corrupt: str = None) -> list:
    """Compare every loss gradient against finite differences.

    `corrupt` perturbs the named loss's analytic gradient (a test hook for
    exercising the failure path).
    """
    rng = np.random.default_rng(seed)
    worst = {}
    for _ in range(draws):
        prob = _tiny_problem(rng)
        for name in loss_names(prob.params.n_modalities):
            analytic = get_param_vector(_loss_grads(name, prob))
            if corrupt == name:
                analytic = analytic.copy()
                analytic[0] += 1e-2
            numeric = numeric_gradient(name, prob, step)
            err = relative_error(analytic, numeric)
            worst[name] = max(worst.get(name, 0.0), err)
    return [GradCheckResult(loss_name=k, max_rel_err=v, passed=v < threshold)
            for k, v in worst.items()]
