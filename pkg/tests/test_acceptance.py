"""Acceptance suite: one test per release criterion, each printing a
pass/fail line with the measured margin.

Run as `pytest tests/test_acceptance.py -s` to see the lines as they pass.
"""

import time

import numpy as np
from click.testing import CliRunner

from boomda.balance import (GradientBlocks, assemble_gram, closed_form,
                            descent_check, dominance_ratio, kkt_residual,
                            solve_qp_exact_small, solve_qp_frankwolfe,
                            two_pass_gradients)
from boomda.cli import main as cli_main
from boomda.losses import coral_grads
from boomda.network import forward_all, init_model
from boomda.numerics import new_rng, simplex_grid
from boomda.pseudolabel import select, vote
from boomda.synthdata import imbalanced_benchmark_spec, generate
from boomda.trainer import TrainConfig, ablation_suite


def _report(number, name, ok, detail=""):
    print(f"[criterion {number:02d}] {'PASS' if ok else 'FAIL'} "
          f"{name}: {detail}")
    assert ok, f"criterion {number} ({name}): {detail}"


def gram_blocks(rng, n_modalities, length, normalize=True):
    scale = np.sqrt(length) if normalize else 1.0
    return GradientBlocks(
        own=[rng.standard_normal(length) / scale for _ in range(n_modalities)],
        joint=[rng.standard_normal(length) / scale
               for _ in range(n_modalities)])


def test_criterion_01_closed_form_theorem():
    """Closed form solves the diagonal problem exactly: KKT residuals with
    mu = 0 below 1e-10 and objective gap to the face oracle below 1e-10,
    for 1000 random positive diagonals, in under 5 seconds."""
    rng = new_rng(101)
    t0 = time.perf_counter()
    worst_kkt = 0.0
    worst_gap = 0.0
    for _ in range(1000):
        dim = int(rng.integers(2, 6))
        diag = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), size=dim))
        cf = closed_form(diag)
        res = kkt_residual(diag, cf.gamma)
        worst_kkt = max(worst_kkt, res.stationarity_norm, res.primal_violation,
                        res.complementarity, max(0.0, -res.min_gamma))
        exact = solve_qp_exact_small(np.diag(diag))
        worst_gap = max(worst_gap, abs(cf.objective - exact.objective))
    elapsed = time.perf_counter() - t0
    ok = worst_kkt <= 1e-10 and worst_gap < 1e-10 and elapsed < 5.0
    _report(1, "closed-form optimality", ok,
            f"kkt={worst_kkt:.2e} gap={worst_gap:.2e} time={elapsed:.2f}s")


def test_criterion_02_frank_wolfe_vs_oracles():
    """Frank-Wolfe at 200 iterations lands within 1e-6 of the face
    oracle on 500 random PSD Gram matrices of dimension 2-5, and the face
    oracle agrees with the step-1e-3 simplex grid within 1e-5 (grid run at
    the dimensions where 1e-3 resolution is tractable). Under 30 s."""
    rng = new_rng(202)
    t0 = time.perf_counter()
    grids = {2: simplex_grid(2, 1e-3), 3: simplex_grid(3, 1e-3)}
    worst_fw = 0.0
    worst_grid = 0.0
    for trial in range(500):
        m = 1 + trial % 4
        q = assemble_gram(gram_blocks(rng, m, 1024))
        exact = solve_qp_exact_small(q)
        fw = solve_qp_frankwolfe(q, max_iter=200, tol=1e-8)
        worst_fw = max(worst_fw, fw.objective - exact.objective)
        if m + 1 in grids:
            g = grids[m + 1]
            grid_best = float(np.min(np.einsum("ij,jk,ik->i", g, q, g)))
            assert grid_best >= exact.objective - 1e-12
            worst_grid = max(worst_grid, abs(grid_best - exact.objective))
    elapsed = time.perf_counter() - t0
    ok = worst_fw <= 1e-6 and worst_grid <= 1e-5 and elapsed < 30.0
    _report(2, "simplex-QP solver correctness", ok,
            f"fw_gap={worst_fw:.2e} grid_gap={worst_grid:.2e} "
            f"time={elapsed:.1f}s")


def test_criterion_03_min_norm_descent():
    """The exact solution's combined direction is a common descent
    direction: every objective's inner product with it reaches ||d||^2."""
    rng = new_rng(303)
    worst = np.inf
    stationary = 0
    for _ in range(200):
        m = int(rng.integers(1, 5))
        blocks = gram_blocks(rng, m, int(rng.integers(2, 40)), normalize=False)
        gamma = solve_qp_exact_small(assemble_gram(blocks)).gamma
        rep = descent_check(blocks, gamma)
        if np.sqrt(rep.norm_sq) <= 1e-8:
            stationary += 1
            continue
        worst = min(worst, float(rep.inner.min() - rep.norm_sq))
    ok = worst >= -1e-8
    _report(3, "min-norm descent property", ok,
            f"worst margin={worst:.2e} stationary={stationary}/200")


def test_criterion_04_gram_sparsity_and_two_passes():
    """Blockwise Gram assembly equals the dense product, and the two-sweep
    gradient extraction equals one backward per objective."""
    rng = new_rng(404)
    worst_gram = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 5))
        blocks = gram_blocks(rng, m, int(rng.integers(2, 60)), normalize=False)
        lengths = [g.size for g in blocks.own]
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        dense = np.zeros((m + 1, offsets[-1]))
        for i in range(m):
            dense[i, offsets[i]:offsets[i + 1]] = blocks.own[i]
            dense[m, offsets[i]:offsets[i + 1]] = blocks.joint[i]
        worst_gram = max(worst_gram, float(np.max(np.abs(
            assemble_gram(blocks) - dense @ dense.T))))

    worst_pass = 0.0
    for seed in range(10):
        m = 2 + seed % 2
        model = init_model((3,) * m, 3, 2, 2, new_rng(seed))
        rng2 = new_rng(1000 + seed)
        xs = [rng2.normal(size=(6, 3)) for _ in range(m)]
        xt = [rng2.normal(size=(6, 3)) for _ in range(m)]
        state = forward_all(xs, xt, model)
        blocks = two_pass_gradients(state.reps_src, state.reps_tgt)
        g_src, g_tgt = coral_grads(state.reps_src.z_concat,
                                   state.reps_tgt.z_concat)
        for i in range(m):
            os_, ot = coral_grads(state.reps_src.z[i], state.reps_tgt.z[i])
            ref_own = np.concatenate([os_.ravel(), ot.ravel()])
            ref_joint = np.concatenate(
                [np.split(g_src, m, axis=1)[i].ravel(),
                 np.split(g_tgt, m, axis=1)[i].ravel()])
            worst_pass = max(worst_pass,
                             float(np.max(np.abs(blocks.own[i] - ref_own))),
                             float(np.max(np.abs(blocks.joint[i] - ref_joint))))
    ok = worst_gram <= 1e-12 and worst_pass <= 1e-12
    _report(4, "gram sparsity and two-pass gradients", ok,
            f"gram={worst_gram:.2e} two_pass={worst_pass:.2e}")


def test_criterion_05_gradient_fidelity():
    """Every analytic loss gradient matches central finite differences to
    relative error 1e-4 over 20 random draws on a sub-100-parameter net,
    via the gradcheck CLI command."""
    from boomda.gradcheck import _tiny_problem, get_param_vector
    n_params = get_param_vector(_tiny_problem(new_rng(0)).params).size
    assert n_params <= 100, n_params

    runner = CliRunner()
    result = runner.invoke(cli_main, ["gradcheck", "--seed", "0",
                                      "--draws", "20"])
    lines = [line for line in result.output.splitlines() if line]
    ok = (result.exit_code == 0 and len(lines) == 6
          and all(line.endswith("PASS") for line in lines))
    _report(5, "gradient fidelity", ok,
            f"{n_params}-parameter net; " + "; ".join(lines))


def test_criterion_06_diagonal_approximation_consistency():
    """Where off-diagonal mass is small (r <= 0.05), the closed-form
    weights cost at most 5% more objective than the exact solution."""
    rng = new_rng(606)
    trials = 0
    worst_rel = 0.0
    while trials < 200:
        dim = int(rng.integers(2, 6))
        diag = np.exp(rng.uniform(np.log(0.2), np.log(5.0), size=dim))
        off = rng.uniform(-1.0, 1.0, size=(dim, dim))
        off = (off + off.T) / 2
        np.fill_diagonal(off, 0.0)
        q = np.diag(diag) + rng.uniform(0, 0.05) * diag.min() * off
        if dominance_ratio(q) > 0.05:
            continue
        trials += 1
        cf = closed_form(np.diag(q).copy())
        obj_cf = float(cf.gamma @ q @ cf.gamma)
        exact = solve_qp_exact_small(q)
        worst_rel = max(worst_rel,
                        abs(obj_cf - exact.objective) / exact.objective)
    ok = worst_rel <= 0.05
    _report(6, "diagonal approximation consistency", ok,
            f"worst relative gap={worst_rel:.4f} over {trials} trials")


def test_criterion_07_end_to_end_balancing_benefit():
    """On the default imbalanced-shift benchmark, balanced alignment beats
    uniform weighting in mean target F1 over 5 seeds, and the ablation
    chain (alignment + pseudo labels) >= (alignment only) >= (neither)
    holds in the mean. Under 10 minutes."""
    t0 = time.perf_counter()
    dataset = generate(imbalanced_benchmark_spec())
    config = TrainConfig(iterations=600)
    rows = {r.setting: r for r in
            ablation_suite(dataset, config, seeds=range(5))}
    elapsed = time.perf_counter() - t0
    balanced = rows["ca_balanced_pl"].mean_f1
    uniform = rows["ca_unbalanced_pl"].mean_f1
    ca_only = rows["ca_only"].mean_f1
    none = rows["no_ca_no_pl"].mean_f1
    ok = (balanced >= uniform and balanced >= ca_only >= none
          and elapsed < 600.0)
    _report(7, "end-to-end balancing benefit", ok,
            f"balanced={balanced:.4f} uniform={uniform:.4f} "
            f"ca_only={ca_only:.4f} none={none:.4f} time={elapsed:.0f}s")


def test_criterion_08_solver_efficiency(tmp_path):
    """Median per-call wall time of the closed form stays at or below
    Frank-Wolfe (max_iter 50) for dimensions 3 through 6, measured through
    the solverbench command's CSV."""
    out = tmp_path / "bench.csv"
    runner = CliRunner()
    result = runner.invoke(cli_main, ["solverbench", "--dims", "3,4,5,6",
                                      "--trials", "50", "--seed", "808",
                                      "--out", str(out)])
    assert result.exit_code == 0, result.output
    walls = {}
    for line in out.read_text().splitlines()[1:]:
        method, dim, _, _, _, wall_ns = line.split(",")
        walls.setdefault((method, int(dim)), []).append(int(wall_ns))
    detail = []
    ok = True
    for dim in (3, 4, 5, 6):
        cf = np.median(walls[("closed_form", dim)])
        fw = np.median(walls[("frank_wolfe", dim)])
        ok = ok and cf <= fw
        detail.append(f"dim{dim}: cf={cf:.0f}ns fw={fw:.0f}ns")
    _report(8, "solver efficiency direction", ok, "; ".join(detail))


def test_criterion_09_pseudo_label_invariants():
    """Selection shrinks monotonically with the vote threshold, and the
    full threshold selects exactly the unanimous samples."""
    rng = new_rng(909)
    ok = True
    for _ in range(1000):
        heads = int(rng.integers(2, 6))
        n = int(rng.integers(1, 40))
        c = int(rng.integers(2, 6))
        counts = vote([rng.random((n, c)) for _ in range(heads)])
        sizes = [len(select(counts, v)) for v in range(1, heads + 1)]
        ok = ok and sizes == sorted(sizes, reverse=True)
        unanimous = set(np.flatnonzero(counts.max(axis=1) == heads))
        ok = ok and set(select(counts, heads)) == unanimous
        if not ok:
            break
    _report(9, "pseudo-labeling invariants", ok, "1000 randomized trials")


def test_criterion_10_byte_identical_reports(tmp_path):
    """Two identical train invocations produce byte-identical report.csv."""
    runner = CliRunner()
    spec = tmp_path / "spec.cfg"
    spec.write_text("modalities = 2\nclasses = 3\nfeature_dims = 4\n"
                    "source_samples = 60\ntarget_samples = 60\nseed = 3\n"
                    "noise_sigma = 1.0,0.1\n")
    data = tmp_path / "data"
    assert runner.invoke(cli_main, ["gen", "--spec", str(spec),
                                    "--out", str(data)]).exit_code == 0
    cfg = tmp_path / "train.cfg"
    cfg.write_text("iterations = 40\nbatch_size = 12\nhidden_width = 4\n"
                   "rep_dim = 3\nseed = 5\nmin_votes = 2\n")
    blobs = []
    for name in ("run1", "run2"):
        out = tmp_path / name
        result = runner.invoke(cli_main, ["train", "--data", str(data),
                                          "--config", str(cfg),
                                          "--out", str(out)])
        assert result.exit_code == 0, result.output
        blobs.append((out / "report.csv").read_bytes())
    ok = blobs[0] == blobs[1]
    _report(10, "deterministic training reports", ok,
            f"{len(blobs[0])} bytes compared")
