"""
Acceptance gate: one test per criterion, each recording a PASS/FAIL line that
is printed in the terminal summary (``pytest tests/test_acceptance.py``).
"""

import json
import time

import numpy as np

import checks
from conftest import ACCEPTANCE_LINES
from drifa import checkpoint, config
from drifa.ablation import GRIDS, run_ablation
from drifa.cli import main
from drifa.config import RunConfig
from drifa.optim import PlateauScheduler
from drifa.training import build_model, evaluate, load_split, train_run
from drifa.uncertainty import deterministic_predict, mc_predict


def record(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_1_gradients():
    start = time.perf_counter()
    ops = checks.op_gradient_errors()
    modules = {"mfa": checks.mfa_gradient_error(), "mifa": checks.mifa_gradient_error()}
    net = checks.net_gradient_error(channels=4, seed=0)
    elapsed = time.perf_counter() - start
    worst_small = max(list(ops.values()) + list(modules.values()))
    ok = worst_small < 1e-4 and net < 1e-3 and elapsed < 120
    record(1, ok, f"ops/modules worst {worst_small:.2e} (<1e-4), full net {net:.2e} (<1e-3), {elapsed:.0f}s (<120s)")


def test_criterion_2_oracles():
    errs = checks.oracle_errors(trials=20)
    worst = max(errs.values())
    record(2, worst <= 1e-12, f"worst |lib - oracle| {worst:.2e} over 20 inputs x {len(errs)} ops (<=1e-12)")


def test_criterion_3_fuzz():
    problems = checks.fuzz_violations(count=100)
    record(3, not problems, f"{len(problems)} violations in 100 random configs" + (f": {problems[:3]}" if problems else ""))


def test_criterion_4_neutrality():
    bad = checks.neutrality_mismatches()
    record(4, not bad, f"{len(bad)} of 4 configs differ with learnable weights on vs off")


def test_criterion_5_learning():
    cfg = RunConfig.for_profile("desk").with_overrides(data={"noise_sigma": 0.1, "shared_signal_strength": 1.0})
    start = time.perf_counter()
    model, data, _ = train_run(cfg)
    acc = evaluate(model, data.test).tasks[0].accuracy
    elapsed = time.perf_counter() - start
    ok = acc >= 0.95 and elapsed < 600
    record(5, ok, f"test accuracy {100 * acc:.1f}% (>=95%) after {cfg.train.epochs} epochs, {elapsed:.0f}s (<600s)")


# Settings shared by every row of the criterion-6 grid.
ABLATION_OVERRIDES = {
    "data": {"samples_per_class": 250, "noise_sigma": 0.2, "shared_signal_strength": 0.3},
}


def test_criterion_6_ablation_ordering():
    cfg = RunConfig.for_profile("desk").with_overrides(**ABLATION_OVERRIDES)
    start = time.perf_counter()
    result = run_ablation(cfg, GRIDS["table2"], list(range(5)), "table2")
    elapsed = time.perf_counter() - start
    acc = {row.row: 100 * row.mean()[0] for row in result.rows}
    base, both = acc["none"], acc["mfa+mifa"]
    single = max(acc["mfa"], acc["mifa"])
    ok = base <= single <= both and both - base >= 2.0 and elapsed < 3600
    detail = ", ".join(f"{k} {v:.2f}" for k, v in acc.items())
    record(6, ok, f"mean acc over 5 seeds: {detail}; need none <= max(mfa, mifa) <= mfa+mifa and gap >= 2; "
                  f"{elapsed / 60:.1f} min (<60)")


def test_criterion_7_uncertainty():
    cfg = RunConfig.for_profile("desk").with_overrides(data={"samples_per_class": 250, "noise_sigma": 1.25})
    model, data, _ = train_run(cfg)
    y = data.test.labels[:, 0]
    mc = mc_predict(model, data.test.inputs, cfg.ensemble_config())[0]
    det = deterministic_predict(model, data.test.inputs)[0]
    det_acc, uq_acc = 100 * np.mean(det.predicted == y), 100 * np.mean(mc.predicted == y)
    wrong = mc.predicted != y
    gap = float(mc.entropy[wrong].mean() - mc.entropy[~wrong].mean()) if wrong.any() and (~wrong).any() else float("nan")
    ok = abs(uq_acc - det_acc) <= 2.0 and gap >= 0.05
    record(7, ok, f"deterministic {det_acc:.1f}% vs UQ {uq_acc:.1f}% (|diff|<=2), "
                  f"entropy wrong - right {gap:.3f} nats (>=0.05)")


def test_criterion_8_determinism(tmp_path):
    raw = {"profile": "desk", "model": {"channels": 4, "blocks": 1},
           "data": {"samples_per_class": 20, "noise_sigma": 0.3}, "train": {"epochs": 3}}
    (tmp_path / "c.json").write_text(json.dumps(raw))
    runs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["train", "--config", str(tmp_path / "c.json"), "--seed", "3", "--out", str(r)]) for r in runs]
    names = ("checkpoint.drif", "metrics.csv", "train_log.csv")
    same = all((runs[0] / n).read_bytes() == (runs[1] / n).read_bytes() for n in names)

    params = checkpoint.load(runs[0] / "checkpoint.drif")
    checkpoint.save(tmp_path / "copy.drif", params)
    again = checkpoint.load(tmp_path / "copy.drif")
    exact = list(again) == list(params) and all(again[k].tobytes() == v.tobytes() for k, v in params.items())
    exact = exact and (tmp_path / "copy.drif").read_bytes() == (runs[0] / "checkpoint.drif").read_bytes()

    cfg = config.load(runs[0] / "config.json")
    data = load_split(cfg)
    model = build_model(cfg, data.train)
    model.load_state_dict(again)
    eval_same = evaluate(model, data.test, cfg.hash()).to_csv() == (runs[0] / "metrics.csv").read_text()
    ok = codes == [0, 0] and same and exact and eval_same
    record(8, ok, f"repeat train identical: {same}; checkpoint round trip bit-exact: {exact}; "
                  f"reloaded eval matches: {eval_same}")


def test_criterion_9_scheduler():
    sched = PlateauScheduler(lr=0.001, factor=0.2, patience=5, min_lr=1e-5)
    trace = [1.0, 0.9, 0.8] + [0.8] * 5 + [0.7] + [0.75] * 5 + [0.7] * 10
    lrs = [sched.step(v) for v in trace]
    distinct = [lr for k, lr in enumerate(lrs) if k == 0 or lr != lrs[k - 1]]
    ok = distinct == [0.001, 0.0002, 4e-05, 1e-05] and lrs[-1] == 1e-05
    record(9, ok, f"lr sequence {distinct} (want [0.001, 0.0002, 4e-05, 1e-05])")
