"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected into an "acceptance criteria" section of the
pytest terminal summary (see ``conftest.py``).
"""
import time

import numpy as np
import pytest

import oracles
from rankup.cli import main
from rankup.data import AugmentConfig, DataSpec, augment, build_splits
from rankup.losses import (
    ArcLossConfig,
    arc_labeled_loss,
    arc_unlabeled_fixmatch_loss,
    pairwise_targets,
    ranknet_loss,
    regression_loss,
)
from rankup.metrics import mae, r2, srcc
from rankup.model import forward, gradient_check, init_model
from rankup.rda import (
    PseudoLabelTable,
    RdaConfig,
    align,
    interpolate_labeled_distribution,
    maybe_refresh,
    rda_batch_loss,
    table_update,
)
from rankup.trainer import TrainConfig, run_protocol, train

# -- 1. gradient correctness -------------------------------------------------


def _random_problem(seed):
    rng = np.random.default_rng(1000 + seed)
    n_in = int(rng.integers(1, 4))
    hidden = tuple(int(h) for h in rng.integers(2, 6, size=int(rng.integers(1, 3))))
    m = init_model(n_in, hidden, seed=seed)
    m.params[:] += rng.normal(scale=0.5, size=m.n_params)
    m.touch()
    n = int(rng.integers(3, 7))
    return m, rng.normal(size=(n, n_in)), rng.normal(size=n), rng


def _reg(fn):
    return lambda reg, arc: (*fn(reg), np.zeros_like(arc))


def _arc(fn):
    def loss_fn(reg, arc):
        loss, g = fn(arc)
        return loss, np.zeros_like(reg), g

    return loss_fn


def _composite(y, n_lb, tbl, weak, cfg, omega_arc, warm):
    """l_reg + warm * l_rda + omega_arc * (l_lb + omega_ulb * l_ulb) over [labeled; weak; strong] rows."""
    n_u = len(weak)

    def loss_fn(reg, arc):
        l_reg, g_reg = regression_loss(reg[:n_lb], y)
        l_rda, g_rda, _ = rda_batch_loss(tbl, tbl.ids, reg[n_lb : n_lb + n_u])
        l_lb, g_lb = arc_labeled_loss(arc[:n_lb], y)
        # weak-view scores are frozen constants, as in the training step
        l_ulb, g_s, _ = arc_unlabeled_fixmatch_loss(weak, arc[n_lb + n_u :], cfg)
        loss = l_reg + warm * l_rda + omega_arc * (l_lb + cfg.omega_ulb * l_ulb)
        g_r = np.concatenate([g_reg, warm * g_rda, np.zeros(n_u)])
        g_a = np.concatenate([omega_arc * g_lb, np.zeros(n_u), omega_arc * cfg.omega_ulb * g_s])
        return loss, g_r, g_a

    return loss_fn


def test_criterion_1_gradient_correctness(criterion):
    t0 = time.perf_counter()
    worst = {}
    n_cases = 25
    for seed in range(n_cases):
        m, X, y, rng = _random_problem(seed)
        n = X.shape[0]
        T = pairwise_targets(rng.integers(0, 3, n))
        labels = np.round(y, 1)
        weak = rng.normal(scale=1.5, size=n)
        cfg = ArcLossConfig(tau=0.7)
        tbl = PseudoLabelTable(np.arange(n))
        table_update(tbl, tbl.ids, rng.normal(size=n))
        maybe_refresh(tbl, y, 0, RdaConfig())
        cases = {
            "mae": _reg(lambda r: regression_loss(r, y, "mae")),
            "ranknet_loss": _arc(lambda a: ranknet_loss(a, T)),
            "arc_labeled_loss": _arc(lambda a: arc_labeled_loss(a, labels)),
            "arc_unlabeled_fixmatch_loss": _arc(lambda a: arc_unlabeled_fixmatch_loss(weak, a, cfg)[:2]),
            "rda_batch_loss": _reg(lambda r: rda_batch_loss(tbl, tbl.ids, r)[:2]),
        }
        for name, fn in cases.items():
            worst[name] = max(worst.get(name, 0.0), gradient_check(m, X, fn, eps=1e-5))

        # composite on a two-hidden-layer model, labeled batch of 4
        mc = init_model(2, (5, 4), seed=100 + seed)
        mc.params[:] += rng.normal(scale=0.5, size=mc.n_params)
        mc.touch()
        xl, xu = rng.normal(size=(4, 2)), rng.normal(size=(n, 2))
        xs = augment(xu, "strong", AugmentConfig(), rng)
        weak_scores = forward(mc, xu)[1]
        fn = _composite(y[:4] if n >= 4 else rng.normal(size=4), 4, tbl, weak_scores, cfg, 0.2, 0.5)
        worst["composite"] = max(worst.get("composite", 0.0), gradient_check(mc, np.vstack([xl, xu, xs]), fn, eps=1e-5))
    elapsed = time.perf_counter() - t0
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    criterion(1, ok, f"max relative error over {n_cases} models: {detail} ({elapsed:.1f}s)")


# -- 2. pairwise-loss oracle equivalence ------------------------------------


def test_criterion_2_pairwise_oracles(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = {"ranknet": 0.0, "arc_labeled": 0.0, "arc_fixmatch": 0.0}
    diag_only = ties = 0
    for k in range(200):
        n = 1 + k % 6
        diag_only += n == 1
        s, w = rng.normal(scale=2.5, size=n), rng.normal(scale=2.5, size=n)
        y = rng.integers(0, 3, n).astype(float)
        ties += len(np.unique(y)) < n
        if k % 10 == 0:
            # exact score ties, including the all-equal case
            s[:] = s[0]
        tau = float(rng.choice([0.6, 0.7, 0.9, 0.95]))
        T = pairwise_targets(y)
        worst["ranknet"] = max(worst["ranknet"], abs(ranknet_loss(s, T)[0] - oracles.ranknet_loss(s, lambda i, j: T[i, j])))
        worst["arc_labeled"] = max(worst["arc_labeled"], abs(arc_labeled_loss(s, y)[0] - oracles.arc_labeled_loss(s, y)))
        got, _, rate = arc_unlabeled_fixmatch_loss(w, s, ArcLossConfig(tau=tau))
        ref, ref_rate = oracles.arc_fixmatch_loss(w, s, tau)
        worst["arc_fixmatch"] = max(worst["arc_fixmatch"], abs(got - ref), abs(rate - ref_rate))
    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-10 for v in worst.values()) and elapsed < 30 and diag_only > 0 and ties > 0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    criterion(2, ok, f"200 instances (N<=6, {diag_only} diagonal-only, {ties} with label ties): max |diff| {detail} ({elapsed:.1f}s)")


# -- 3. RDA correctness suite ----------------------------------------------


def test_criterion_3_rda_suite(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    failures = []
    for case in range(500):
        k = int(rng.integers(2, 17))
        m = int(rng.integers(1, 65))
        labels = rng.normal(size=k) if case % 3 else rng.integers(0, 4, k).astype(float)
        pseudo = rng.normal(size=m) if case % 4 else rng.integers(0, 3, m).astype(float)
        dist = interpolate_labeled_distribution(labels, m)
        out = align(pseudo, dist)
        checks = {
            "multiset": np.array_equal(np.sort(out), dist.sorted_values),
            "rank": all(out[i] <= out[j] for i in range(m) for j in range(m) if pseudo[i] < pseudo[j]),
            "range": labels.min() <= out.min() and out.max() <= labels.max(),
            "idempotent": np.array_equal(align(out, dist), out),
            "direction": np.array_equal(align(pseudo, dist, descending=True), out),
        }
        failures += [f"{name}@{case}" for name, ok in checks.items() if not ok]
    interp = interpolate_labeled_distribution([2.0, 5.0, 8.0], 5)
    worked = align([1.0, 9.0, 4.0, 3.0, 7.0], interp)
    example_ok = interp.sorted_values.tolist() == [2.0, 3.5, 5.0, 6.5, 8.0] and worked.tolist() == [2.0, 8.0, 5.0, 3.5, 6.5]
    elapsed = time.perf_counter() - t0
    ok = not failures and example_ok and elapsed < 30
    detail = "all five properties hold on 500 instances" if not failures else f"violations {failures[:5]}"
    criterion(3, ok, f"{detail}; worked example {'matches' if example_ok else 'differs'} ({elapsed:.1f}s)")


# -- 4. loss-reduction equivalences ----------------------------------------


def _trajectory(method, data, **kw):
    snaps = []
    cfg = TrainConfig(method=method, total_iters=100, eval_every=100, **kw)
    train(cfg, data, 0, callback=lambda it, m: snaps.append(m.params.tobytes()))
    return snaps


def test_criterion_4_loss_reduction(criterion):
    t0 = time.perf_counter()
    data = build_splits(DataSpec(n_labeled=50, n_samples=1000), seed=0)
    sup = _trajectory("supervised", data)
    rda_off = _trajectory("rankup_rda", data, omega_arc=0.0, omega_rda=0.0)
    ru = _trajectory("rankup", data)
    rda_no_align = _trajectory("rankup_rda", data, omega_rda=0.0)
    first = sup == rda_off
    second = ru == rda_no_align
    elapsed = time.perf_counter() - t0
    ok = first and second and len(sup) == 100 and elapsed < 60
    criterion(
        4,
        ok,
        f"rankup_rda(arc=0, rda=0) == supervised: {first}; rankup_rda(rda=0) == rankup: {second} "
        f"(100 iterations, bitwise; {elapsed:.1f}s)",
    )


# -- 5. desk-scale label-efficiency ordering --------------------------------

SINE = DataSpec(n_labeled=50, task="sine", n_samples=5000, noise_sigma=0.1)
DESK = dict(seeds=(0, 1, 2))


@pytest.mark.slow
def test_criterion_5_label_efficiency(criterion):
    t0 = time.perf_counter()
    mean = {}
    per_seed = {}
    for method in ("supervised", "rankup", "rankup_rda"):
        rep = run_protocol(TrainConfig(method=method, **DESK), SINE)
        mean[method] = rep.mean["mae"]
        per_seed[method] = [round(r["mae"], 4) for r in rep.per_seed]
    elapsed = time.perf_counter() - t0
    gain = 1.0 - mean["rankup"] / mean["supervised"]
    first = gain >= 0.10
    second = mean["rankup_rda"] <= 1.02 * mean["rankup"]
    ok = first and second and elapsed < 15 * 60
    detail = ", ".join(f"{k} {v:.4f} {per_seed[k]}" for k, v in mean.items())
    criterion(
        5,
        ok,
        f"mean test MAE {detail}; rankup gain {gain:.1%} (need >= 10%); "
        f"rankup_rda <= 1.02 x rankup: {second} ({elapsed:.0f}s)",
    )


# -- 6. FixMatch masking ----------------------------------------------------


def test_criterion_6_masking(criterion):
    t0 = time.perf_counter()
    data = build_splits(DataSpec(n_labeled=50, n_samples=1000), seed=0)
    logged = train(TrainConfig(method="rankup", tau=1.0, total_iters=50, eval_every=50), data, 0).logs
    zero_at_one = all(e["mask_rate"] == 0.0 for e in logged)

    checkpoints = {}

    def keep(it, m):
        if it % 500 == 0:
            checkpoints[it] = m.copy()

    # the ranking scores spread out slowly; later checkpoints give non-trivial rates at tau = 0.8
    train(TrainConfig(method="rankup", total_iters=2000, eval_every=2000), data, 0, callback=keep)
    rng = np.random.default_rng(6)
    xu = augment(data[1].features[:224], "weak", AugmentConfig(), rng)
    taus = (0.6, 0.8, 0.95, 1.0)
    table = {}
    monotone = True
    for it, m in sorted(checkpoints.items()):
        scores = forward(m, xu)[1]
        rates = [arc_unlabeled_fixmatch_loss(scores, scores, ArcLossConfig(tau=t))[2] for t in taus]
        table[it] = [round(r, 3) for r in rates]
        monotone &= all(a >= b for a, b in zip(rates, rates[1:])) and rates[-1] == 0.0
    elapsed = time.perf_counter() - t0
    ok = zero_at_one and monotone and elapsed < 60
    criterion(
        6,
        ok,
        f"mask_rate 0 at every logged iteration with tau=1: {zero_at_one}; "
        f"rates at tau {taus} per checkpoint {table} non-increasing: {monotone} ({elapsed:.1f}s)",
    )


# -- 7. metrics oracle equivalence -----------------------------------------


def test_criterion_7_metrics(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = {"mae": 0.0, "r2": 0.0, "srcc": 0.0}
    tie_heavy = 0
    for k in range(100):
        n = int(rng.integers(3, 40))
        if k % 2:
            # at most five distinct values on both sides
            p = rng.integers(1, 6, n).astype(float)
            t = rng.integers(1, 6, n).astype(float)
            tie_heavy += 1
        else:
            p, t = rng.normal(size=n), rng.normal(size=n)
        if np.ptp(p) == 0 or np.ptp(t) == 0:
            p[0], t[0] = 0.0, 9.0
        worst["mae"] = max(worst["mae"], abs(mae(p, t) - oracles.mae(p, t)))
        worst["r2"] = max(worst["r2"], abs(r2(p, t) - oracles.r2(p, t)))
        worst["srcc"] = max(worst["srcc"], abs(srcc(p, t) - oracles.srcc(p, t)))
    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-10 for v in worst.values()) and elapsed < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    criterion(7, ok, f"100 instances ({tie_heavy} tie-heavy): max |diff| {detail} ({elapsed:.2f}s)")


# -- 8. seed-protocol reproducibility ----------------------------------------


def test_criterion_8_reproducible_runs(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(
        "experiment: repro\n"
        "dataset: {task: sine, n_samples: 1000, noise_sigma: 0.1}\n"
        "split: {n_labeled: 50, seeds: [0, 1, 2]}\n"
        "method: {method: rankup_rda, total_iters: 600, eval_every: 200, refresh_period: 128}\n"
    )
    codes = [main(["run", "--config", str(cfg), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    n_summaries = sum(f.name == "summary.json" for f in files)
    elapsed = time.perf_counter() - t0
    ok = codes == [0, 0] and same and n_summaries == 4 and elapsed < 15 * 60
    criterion(
        8,
        ok,
        f"two cmd_run invocations: exit codes {codes}; {len(files)} artifacts incl. {n_summaries} summary JSON files "
        f"bit-identical: {same} ({elapsed:.1f}s)",
    )


# -- 9. RDA cost amortization ----------------------------------------------


def test_criterion_9_rda_amortization(criterion):
    t0 = time.perf_counter()
    data = build_splits(DataSpec(n_labeled=50, n_samples=1000), seed=0)
    cfg = TrainConfig(method="rankup_rda", total_iters=4096, eval_every=4096, refresh_period=1024, labeled_batch=8, hidden=(16,))
    rec = train(cfg, data, 0)
    calls = rec.table.align_calls
    elapsed = time.perf_counter() - t0
    ok = calls == 5 and rec.table.last_refresh_iter == 4096 and elapsed < 300
    criterion(9, ok, f"align invocations over 4096 iterations with T=1024: {calls} (expected 4 + 1 bootstrap) ({elapsed:.1f}s)")
