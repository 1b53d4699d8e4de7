"""End-to-end training loop, evaluation, and the ablation suite.

Each iteration: (1) forward both domain mini-batches and vote pseudo labels,
(2) two gradient sweeps build the alignment Gram matrix and its diagonal,
(3) the configured solver picks the balance weights, (4) the overall loss
combines the bottleneck, pseudo-label, and weighted alignment terms, and
(5) Adam updates the parameters. Runs are bitwise deterministic under a
fixed config and seed.

Target-train labels never feed training: the loop reads features through
the dataset's un-audited fields and asserts the audit counter stayed flat.
Pseudo-label accuracy diagnostics use the explicit evaluation-only accessor.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import balance, losses, network, pseudolabel
from .synthdata import MultimodalDataset

SOLVER_MODES = ("closed_form", "frank_wolfe", "exact_oracle", "uniform")

ABLATION_SETTINGS = (
    ("no_ca_no_pl", {"alpha1": 0.0, "alpha2": 0.0}),
    ("ca_only", {"alpha1": 0.0, "solver_mode": "closed_form"}),
    ("pl_only", {"alpha2": 0.0}),
    ("ca_unbalanced_pl", {"solver_mode": "uniform"}),
    ("ca_balanced_pl", {"solver_mode": "closed_form"}),
)


class TrainingDivergedError(RuntimeError):
    """The loss went non-finite; the message carries the iteration dump."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run."""

    beta: float = 5e-4
    alpha1: float = 0.5
    alpha2: float = 0.1
    min_votes: int = 3
    learning_rate: float = 1e-3
    iterations: int = 2000
    batch_size: int = 48
    solver_mode: str = "closed_form"
    seed: int = 0
    hidden_width: int = 32
    rep_dim: int = 16
    var_floor: float = 1e-8
    prob_floor: float = 1e-12
    diag_floor: float = 1e-12
    fw_max_iter: int = 50
    fw_tol: float = 1e-8
    ca_grad_domains: str = "both"

    def validate(self) -> None:
        if self.beta < 0 or self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (variance needs 2 rows)")
        if self.solver_mode not in SOLVER_MODES:
            raise ValueError(f"solver_mode must be one of {SOLVER_MODES}")
        if self.hidden_width < 1 or self.rep_dim < 1:
            raise ValueError("hidden_width and rep_dim must be >= 1")
        if self.var_floor <= 0:
            raise ValueError("var_floor must be positive")
        if self.min_votes < 1:
            raise ValueError("min_votes must be >= 1")
        if self.ca_grad_domains not in ("both", "source"):
            raise ValueError("ca_grad_domains must be 'both' or 'source'")

    def validate_for(self, dataset: MultimodalDataset) -> None:
        self.validate()
        m = dataset.spec.modalities
        if not 1 <= self.min_votes <= m + 1:
            raise ValueError(f"min_votes must be in [1, {m + 1}]")
        if self.batch_size > min(dataset.spec.source_samples,
                                 dataset.spec.target_samples):
            raise ValueError("batch_size exceeds a split size")
        if self.solver_mode == "exact_oracle" and m + 1 > 5:
            raise ValueError("exact_oracle solver is limited to <= 5 objectives")


@dataclass(frozen=True)
class IterationRow:
    """Per-iteration diagnostics logged by the trainer."""

    iteration: int
    ib: float
    pl: float
    ca: np.ndarray
    gamma: np.ndarray
    r: float
    pl_selected: int
    pl_correct: int
    wall_ns: int


@dataclass
class TrainReport:
    """Per-iteration rows plus final evaluation metrics."""

    rows: list = field(default_factory=list)
    source_f1: float = 0.0
    target_f1: float = 0.0
    per_class_f1: np.ndarray = None


@dataclass(frozen=True)
class AblationRow:
    setting: str
    f1_values: tuple
    mean_f1: float
    std_f1: float


def weighted_f1(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int):
    """Class-frequency-weighted F1 plus the per-class vector.

    A class with zero precision+recall contributes F1 = 0.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape[0] == 0:
        raise ValueError("empty split")
    per_class = np.zeros(n_classes)
    support = np.zeros(n_classes)
    for c in range(n_classes):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_true == c) & (y_pred != c)))
        support[c] = tp + fn
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        if precision + recall > 0:
            per_class[c] = 2 * precision * recall / (precision + recall)
    weighted = float(np.sum(support / y_true.shape[0] * per_class))
    return weighted, per_class


def evaluate(params: network.ModelParams, features, labels):
    """Weighted and per-class F1 of the fused head on a labeled split."""
    labels = np.asarray(labels)
    if labels.shape[0] == 0:
        raise ValueError("empty split")
    zs = [network.encode(x, enc) for x, enc in zip(features, params.encoders)]
    probs = network.classify(np.hstack(zs), params.classifiers[-1])
    preds = np.argmax(probs, axis=1)
    return weighted_f1(labels, preds, probs.shape[1])


def loss_gradients(params: network.ModelParams, state: network.ForwardState,
                   labels_src: np.ndarray, pseudo, gamma: np.ndarray,
                   config: TrainConfig):
    """Losses and full parameter gradients for one forward state.

    Combines the bottleneck term (source batch, all heads), the pseudo-label
    term (fused target head), and the gamma-weighted alignment terms into a
    single backward accumulation.
    """
    m = params.n_modalities
    reps_src, reps_tgt = state.reps_src, state.reps_tgt
    all_src = list(reps_src.z) + [reps_src.z_concat]

    ib = losses.ib_loss(all_src, state.probs_src, labels_src, config.beta,
                        config.var_floor, config.prob_floor)
    pl = losses.pl_loss(state.probs_tgt[m], pseudo, config.prob_floor)
    ca = np.array([losses.coral_loss(zs, zt)
                   for zs, zt in zip(reps_src.z, reps_tgt.z)]
                  + [losses.coral_loss(reps_src.z_concat, reps_tgt.z_concat)])
    breakdown = losses.loss_breakdown(ib, pl, ca, gamma,
                                      config.alpha1, config.alpha2)

    dlogits_src = [losses.ce_mean_grad_logits(p, labels_src)
                   for p in state.probs_src]
    dz_src = [losses.entropy_reg_grad(z, config.beta, config.var_floor)
              for z in reps_src.z]
    dz_concat_src = losses.entropy_reg_grad(reps_src.z_concat, config.beta,
                                            config.var_floor)
    dz_tgt = [None] * m
    dz_concat_tgt = None
    if config.alpha2 > 0:
        for i in range(m):
            g_src, g_tgt = losses.coral_grads(reps_src.z[i], reps_tgt.z[i])
            scale = config.alpha2 * gamma[i]
            dz_src[i] = dz_src[i] + scale * g_src
            dz_tgt[i] = scale * g_tgt
        g_src, g_tgt = losses.coral_grads(reps_src.z_concat, reps_tgt.z_concat)
        scale = config.alpha2 * gamma[m]
        dz_concat_src = dz_concat_src + scale * g_src
        dz_concat_tgt = scale * g_tgt

    dlogits_tgt = [None] * m
    dlogits_tgt.append(config.alpha1
                       * losses.pl_grad_logits(state.probs_tgt[m], pseudo))

    grads = network.model_backward(params, state,
                                   dlogits_src=dlogits_src,
                                   dlogits_tgt=dlogits_tgt,
                                   dz_src=dz_src, dz_tgt=dz_tgt,
                                   dz_concat_src=dz_concat_src,
                                   dz_concat_tgt=dz_concat_tgt)
    return breakdown, grads


def _solve_gamma(q: np.ndarray, config: TrainConfig) -> np.ndarray:
    if config.solver_mode == "closed_form":
        return balance.closed_form(np.diag(q).copy(), config.diag_floor).gamma
    if config.solver_mode == "frank_wolfe":
        return balance.solve_qp_frankwolfe(q, config.fw_max_iter,
                                           config.fw_tol).gamma
    if config.solver_mode == "exact_oracle":
        return balance.solve_qp_exact_small(q).gamma
    return np.full(q.shape[0], 1.0 / q.shape[0])


def train(dataset: MultimodalDataset, config: TrainConfig):
    """Run the full training loop; returns (params, report).

    Deterministic under (config, dataset): model init and batch sampling
    draw from substreams of the config seed.
    """
    config.validate_for(dataset)
    spec = dataset.spec
    m = spec.modalities
    init_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 101)))
    batch_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 202)))
    params = network.init_model(spec.feature_dims, config.hidden_width,
                                config.rep_dim, spec.classes, init_rng)
    adam = network.adam_init(params)
    uniform = np.full(m + 1, 1.0 / (m + 1))
    audit_before = dataset.train_label_reads
    truth_tgt = dataset.eval_only_target_train_labels()

    report = TrainReport()
    for k in range(config.iterations):
        t0 = time.perf_counter_ns()
        src_idx = batch_rng.choice(spec.source_samples, size=config.batch_size,
                                   replace=False)
        tgt_idx = batch_rng.choice(spec.target_samples, size=config.batch_size,
                                   replace=False)
        xs = [x[src_idx] for x in dataset.source_features]
        ys = dataset.source_labels[src_idx]
        xt = [x[tgt_idx] for x in dataset.target_train_features]

        try:
            state = network.forward_all(xs, xt, params)
            pseudo = pseudolabel.pseudo_labels(state.probs_tgt,
                                               config.min_votes)

            if config.alpha2 > 0:
                blocks = balance.two_pass_gradients(
                    state.reps_src, state.reps_tgt, config.ca_grad_domains)
                q = balance.assemble_gram(blocks)
                r = balance.dominance_ratio(q)
                gamma = _solve_gamma(q, config)
            else:
                # Alignment off: the solver is never invoked and the logged
                # weights match solver_mode=uniform exactly.
                r = 0.0
                gamma = uniform

            breakdown, grads = loss_gradients(params, state, ys, pseudo,
                                              gamma, config)
            if not np.isfinite(breakdown.total):
                raise FloatingPointError(
                    f"non-finite loss: ib={breakdown.ib!r} pl={breakdown.pl!r} "
                    f"ca={breakdown.ca!r}")
            network.adam_step(params, grads, adam, config.learning_rate)
        except (ValueError, FloatingPointError) as exc:
            raise TrainingDivergedError(
                f"aborting at iteration {k}: {exc}") from exc

        selected, correct, _ = pseudolabel.pl_accuracy(pseudo, truth_tgt[tgt_idx])
        wall = time.perf_counter_ns() - t0
        report.rows.append(IterationRow(
            iteration=k, ib=breakdown.ib, pl=breakdown.pl, ca=breakdown.ca,
            gamma=gamma, r=r, pl_selected=selected, pl_correct=correct,
            wall_ns=wall))

    if dataset.train_label_reads != audit_before:
        raise RuntimeError("target-train labels were read during training")

    report.source_f1, _ = evaluate(params, dataset.source_features,
                                   dataset.source_labels)
    report.target_f1, report.per_class_f1 = evaluate(
        params, dataset.target_test_features, dataset.target_test_labels)
    return params, report


def ablation_suite(dataset: MultimodalDataset, base_config: TrainConfig,
                   seeds) -> list:
    """Train every ablation setting over the seed list; mean and std per cell."""
    rows = []
    for setting, overrides in ABLATION_SETTINGS:
        f1s = []
        for seed in seeds:
            config = replace(base_config, seed=int(seed), **overrides)
            _, rep = train(dataset, config)
            f1s.append(rep.target_f1)
        values = np.array(f1s)
        rows.append(AblationRow(setting=setting, f1_values=tuple(f1s),
                                mean_f1=float(values.mean()),
                                std_f1=float(values.std())))
    return rows


# ---------------------------------------------------------------------------
# Persistence.

def report_header(n_objectives: int) -> str:
    cols = ["iter", "ib", "pl"]
    cols += [f"ca_{i + 1}" for i in range(n_objectives)]
    cols += [f"gamma_{i + 1}" for i in range(n_objectives)]
    cols += ["r", "pl_selected", "pl_correct", "wall_ns"]
    return ",".join(cols)


def write_report_csv(report: TrainReport, path, n_objectives: int) -> None:
    """Persist per-iteration rows.

    The wall_ns column is written as 0 so two identical runs produce
    byte-identical files; measured timings live in memory and in
    summary.json.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(report_header(n_objectives) + "\n")
        for row in report.rows:
            fields = [str(row.iteration), repr(float(row.ib)),
                      repr(float(row.pl))]
            fields += [repr(float(v)) for v in row.ca]
            fields += [repr(float(v)) for v in row.gamma]
            fields += [repr(float(row.r)), str(row.pl_selected),
                       str(row.pl_correct), "0"]
            fh.write(",".join(fields) + "\n")


def write_summary_json(report: TrainReport, config: TrainConfig, path) -> None:
    summary = {
        "config": asdict(config),
        "seed": config.seed,
        "iterations": len(report.rows),
        "source_f1": report.source_f1,
        "target_f1": report.target_f1,
        "per_class_f1": [float(v) for v in report.per_class_f1],
        "total_wall_ns": int(sum(r.wall_ns for r in report.rows)),
        "final_gamma": ([float(v) for v in report.rows[-1].gamma]
                        if report.rows else None),
    }
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


def write_ablation_csv(rows, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("setting,n_seeds,mean_f1,std_f1\n")
        for row in rows:
            fh.write(f"{row.setting},{len(row.f1_values)},"
                     f"{repr(row.mean_f1)},{repr(row.std_f1)}\n")
