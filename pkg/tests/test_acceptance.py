"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the terminal
summary (section "acceptance criteria") whether it passes or fails.
Criteria 5-10 share the seeded default blob benchmark from conftest.
"""

import time

import numpy as np
import pytest

from miue.bench import TrainConfig, per_class_accuracy, spearman, train_victim, verify_theorem1
from miue.cli import main
from miue.estimators import (MIConfig, bivariate_gaussian_mi, histogram_mi_1d, kde_mi_1d, knn_mi, mine_mi)
from miue.model import accuracy
from miue.rng import RngState, sample_gaussian

from test_autodiff import BUILDERS, check_against_fd

MI_TIE = 0.02


def _gaussian_pair(seed, rho, n):
    xy = sample_gaussian(RngState(seed), [0.0, 0.0], [[1.0, rho], [rho, 1.0]], n)
    return xy[:, :1], xy[:, 1:]


def test_criterion_1_estimator_accuracy(acceptance):
    start = time.perf_counter()
    rows, ok = [], True
    for rho in (0.3, 0.6, 0.9):
        X, Y = _gaussian_pair(7, rho, 20000)
        oracle = bivariate_gaussian_mi(rho)
        knn = knn_mi(X, Y, 3).value_nats
        kde = kde_mi_1d(X, Y).value_nats
        hist = histogram_mi_1d(X, Y, 100).value_nats
        mine = mine_mi(X, Y, MIConfig(estimator="mine"), RngState(7).split(f"mine-{rho}")).value_nats
        good = (abs(knn - oracle) <= 0.05 and abs(kde - oracle) <= 0.10 and abs(hist - oracle) <= 0.15
                and oracle - 0.15 <= mine <= oracle + 0.10)
        ok &= good
        rows.append(f"rho={rho}: oracle {oracle:.3f} knn {knn:.3f} kde {kde:.3f} hist {hist:.3f} mine {mine:.3f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    acceptance("1 estimator accuracy", ok, "; ".join(rows) + f"; {elapsed:.0f}s")
    assert ok, rows


def test_criterion_2_independence_null(acceptance):
    estimators = {
        "knn": lambda x, y, s: knn_mi(x, y, 3).value_nats,
        "kde": lambda x, y, s: kde_mi_1d(x, y).value_nats,
        # bins=10 here; 100 bins on 5000 points carries a plug-in bias far above 0.03
        "histogram": lambda x, y, s: histogram_mi_1d(x, y, 10).value_nats,
        "mine": lambda x, y, s: mine_mi(x, y, MIConfig(estimator="mine"), RngState(s).split("mine")).value_nats,
    }
    means = {}
    for name, est in estimators.items():
        values = []
        for seed in range(20):
            r = RngState(1000 + seed)
            x, y = r.split("x").standard_normal((5000, 1)), r.split("y").standard_normal((5000, 1))
            values.append(est(x, y, seed))
        means[name] = float(np.mean(values))
    ok = all(v < 0.03 for v in means.values())
    detail = ", ".join(f"{k} {v:.4f}" for k, v in means.items())
    acceptance("2 independence null", ok, detail)
    assert ok, means


def test_criterion_3_gradient_integrity(acceptance):
    names = set()
    for seed in range(60):
        build = BUILDERS[seed % len(BUILDERS)]
        fn, args = build(RngState(seed).split("graph"))
        check_against_fd(fn, *args, tol=1e-4)
        names.add(build.__name__)
    ok = "_g_miue" in names and "_g_ce" in names
    acceptance("3 gradient integrity", ok, f"60 random graphs from {len(names)} families, rel err < 1e-4")
    assert ok


def test_criterion_4_bound_verifier(acceptance):
    start = time.perf_counter()
    root = RngState(2024)
    violations, margins = 0, {}
    for d in (1, 2, 4, 8):
        rep = verify_theorem1(d, 1000, root.split(f"dim-{d}"))
        violations += len(rep.violations) + len(rep.flagged)
        margins[d] = rep.min_margin_by_dim()[d]
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 30
    detail = f"{violations} violations, min margins " + ", ".join(f"d={d}: {m:.3f}" for d, m in margins.items())
    acceptance("4 bound verifier", ok, detail + f"; {elapsed:.1f}s")
    assert ok


def test_criterion_5_ue_efficacy(benchmark, acceptance):
    _, miue, _ = benchmark.report("miue", "miue")
    _, rand, _ = benchmark.report("random", "random")
    elapsed = benchmark.seconds("miue")
    drop_ok = miue.poisoned_test_acc <= miue.clean_test_acc - 30
    fit_ok = miue.poisoned_train_acc >= 99
    control_ok = abs(rand.poisoned_test_acc - rand.clean_test_acc) <= 3
    ok = drop_ok and fit_ok and control_ok and elapsed < 600
    detail = (f"clean {miue.clean_test_acc:.1f}, MI-UE test {miue.poisoned_test_acc:.1f} "
              f"(train {miue.poisoned_train_acc:.1f}), random {rand.poisoned_test_acc:.1f}; {elapsed:.0f}s")
    acceptance("5 UE efficacy", ok, detail)
    assert fit_ok and control_ok and elapsed < 600, detail
    assert drop_ok, detail


def _ordered_with_one_tie(values, tol):
    """values[0] >= values[1] >= ...; one adjacent pair may be inverted by at most ``tol``."""
    ties = 0
    for a, b in zip(values, values[1:]):
        if a >= b:
            continue
        if b - a <= tol:
            ties += 1
        else:
            return False
    return ties <= 1


def test_criterion_6_mi_ordering(benchmark, acceptance):
    reps = {g: benchmark.report(g, g)[1] for g in ("random", "em", "miue")}
    acc = [reps[g].acc_gap for g in ("random", "em", "miue")]
    mi = [reps[g].mi_gap for g in ("random", "em", "miue")]
    try:
        rho = spearman(acc, mi)
    except ValueError:
        rho = float("nan")
    ordered = _ordered_with_one_tie([reps["miue"].mi_gap, reps["em"].mi_gap, reps["random"].mi_gap], MI_TIE)
    ok = rho > 0 and ordered
    detail = (f"acc gaps random/em/miue {acc[0]:.2f}/{acc[1]:.2f}/{acc[2]:.2f}, "
              f"mi gaps {mi[0]:.3f}/{mi[1]:.3f}/{mi[2]:.3f}, spearman {rho:.2f}")
    acceptance("6 MI-reduction ordering", ok, detail)
    assert ok, detail


def test_criterion_7_depth_trend(benchmark, acceptance):
    reps = [benchmark.report(f"miue-depth{k}", "miue", model={"hidden_dims": [64] * k})[1] if k != 2
            else benchmark.report("miue", "miue")[1] for k in (1, 2, 3)]
    acc = [r.acc_gap for r in reps]
    mi = [r.mi_gap for r in reps]
    try:
        rho = spearman(acc, mi)
    except ValueError:
        rho = float("nan")
    ok = rho > 0
    detail = (f"depth 1/2/3 acc gaps {acc[0]:.2f}/{acc[1]:.2f}/{acc[2]:.2f}, "
              f"mi gaps {mi[0]:.3f}/{mi[1]:.3f}/{mi[2]:.3f}, spearman {rho:.2f}")
    acceptance("7 depth trend", ok, detail)
    assert ok, detail


def test_criterion_8_one_class(benchmark, acceptance):
    train, test, _, clean, poisoned, poison = benchmark.models("miue-class0", "miue",
                                                               generator={"class_mask": [0]})
    assert np.all(poison.deltas[train.labels != 0] == 0)
    before = 100 * per_class_accuracy(clean, test)
    after = 100 * per_class_accuracy(poisoned, test)
    ok = after[0] <= before[0] - 30 and np.all(np.abs(after[1:] - before[1:]) <= 5)
    detail = "per-class clean " + "/".join(f"{v:.1f}" for v in before) + ", poisoned " + "/".join(
        f"{v:.1f}" for v in after)
    acceptance("8 one-class poisoning", ok, detail)
    assert ok, detail


def test_criterion_9_ball_and_determinism(benchmark, acceptance):
    keys = [("random", "random", {}), ("em", "em", {}), ("miue", "miue", {}),
            ("miue-class0", "miue", {"generator": {"class_mask": [0]}})]
    worst = 0.0
    for key, gen, extra in keys:
        _, _, poison = benchmark.report(key, gen, **extra)
        assert poison.max_abs() <= poison.budget.epsilon
        worst = max(worst, poison.max_abs() - poison.budget.epsilon)
    cfg, _, _ = benchmark.report("miue", "miue")
    out = cfg.raw["output_dir"]
    before = {name: open(f"{out}/{name}", "rb").read() for name in ("poison.csv", "report.json")}
    assert main(["run-experiment", "--seed", "0", "--output-dir", out]) == 0
    after = {name: open(f"{out}/{name}", "rb").read() for name in before}
    same = before == after
    ok = worst <= 0 and same
    acceptance("9 ball feasibility and determinism", ok,
               f"max(|delta| - eps) = {worst:.3g}; rerun byte-identical: {same}")
    assert ok


def test_criterion_10_adversarial_training(benchmark, acceptance):
    train, test, spec, _, standard, poison = benchmark.models("miue", "miue")
    cfg = TrainConfig(mode="adversarial", at_budget=poison.budget.epsilon)
    robust, _ = train_victim(train, poison, spec, cfg, RngState(0).split("victim"), test)
    st_acc = 100 * accuracy(standard, test.inputs, test.labels)
    at_acc = 100 * accuracy(robust, test.inputs, test.labels)
    ok = at_acc >= st_acc + 20
    acceptance("10 adversarial training", ok, f"ST victim {st_acc:.1f}, AT victim {at_acc:.1f}")
    assert ok, (st_acc, at_acc)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
