import numpy as np
import pytest

from drifa.ablation import GRIDS, AblationResult, RowResult, parse_grid, parse_row, row_label, run_ablation
from drifa.config import RunConfig
from drifa.errors import InvalidFlag
from drifa.net import OMEGA_FLAGS


def test_baseline_and_modules():
    base = parse_row("none")
    assert not base["mfa"] and not base["mifa"]
    assert all(base[w] for w in OMEGA_FLAGS)
    both = parse_row("mfa+mifa")
    assert both["mfa"] and both["mifa"] and both["hifa"] and both["mlifa"]


def test_halves_enable_their_module_only_partly():
    flags = parse_row("hifa+mgifa")
    assert flags["mfa"] and flags["hifa"] and not flags["clia"]
    assert flags["mifa"] and flags["mgifa"] and not flags["mlifa"]


def test_omega_tokens_are_exact():
    flags = parse_row("mfa+omega_d+omega_c")
    assert [flags[w] for w in OMEGA_FLAGS] == [True, False, True, False, False, False]
    assert not any(parse_row("mifa+no_omega")[w] for w in OMEGA_FLAGS)


@pytest.mark.parametrize("row", ["mfa+attention", "omega_x"])
def test_invalid_flags(row):
    with pytest.raises(InvalidFlag):
        parse_row(row)


def test_grids():
    assert parse_grid("table2") == ["none", "mfa", "mifa", "mfa+mifa"]
    assert parse_grid("none; mifa , mfa+mifa+no_omega") == ["none", "mifa", "mfa+mifa+no_omega"]
    with pytest.raises(InvalidFlag):
        parse_grid(" ; ")
    with pytest.raises(InvalidFlag):
        parse_grid("mfa;warp")
    for name in ("table6-mfa", "table6-mifa"):
        rows = GRIDS[name]
        assert len(rows) == 6
        counts = [sum(parse_row(r)[w] for w in OMEGA_FLAGS) for r in rows]
        assert counts == [0, 1, 2, 2, 2, 3]
    assert len(GRIDS["table6"]) == 12


def test_labels():
    assert row_label("none") == "DRIFA-Net (Baseline)"
    assert row_label("mfa+mifa") == "DRIFA-Net + MFA + MIFA"
    assert row_label("mfa+omega_d+omega_c") == "DRIFA-Net + MFA"


def _fake(grid, rows, seeds=(0, 1)):
    rng = np.random.default_rng(0)
    results = []
    for r in rows:
        res = RowResult(r, parse_row(r))
        res.per_seed = [list(rng.uniform(0.5, 1.0, 4)) for _ in seeds]
        results.append(res)
    return AblationResult(grid, results, list(seeds))


def test_table_and_csv():
    result = _fake("table2", GRIDS["table2"])
    csv = result.to_csv().splitlines()
    assert csv[0].startswith("row,method,mfa,mifa,accuracy,accuracy_std")
    assert len(csv) == 5 and csv[4].startswith("mfa+mifa,DRIFA-Net + MFA + MIFA,1,1,")
    row = result.rows[2]
    fields = csv[3].split(",")
    assert float(fields[4]) == pytest.approx(np.mean([s[0] for s in row.per_seed]), abs=1e-6)
    assert float(fields[5]) == pytest.approx(np.std([s[0] for s in row.per_seed]), abs=1e-6)
    table = result.to_table()
    assert "DRIFA-Net (Baseline)" in table and "±" in table


def test_table6_layout():
    table = _fake("table6", GRIDS["table6"]).to_table().splitlines()
    assert "DRIFA-Net+MFA" in table[0] and "DRIFA-Net+MIFA" in table[0]
    body = table[3:9]
    assert len(body) == 6
    assert body[0].count("x") == 6 and body[-1].count("✓") == 6


def test_run_ablation_structure():
    cfg = RunConfig.for_profile("desk").with_overrides(model={"channels": 2, "blocks": 1},
                                                      data={"samples_per_class": 10}, train={"epochs": 1})
    seen = []
    result = run_ablation(cfg, GRIDS["table6-mfa"], [0], "table6-mfa", progress=lambda r, s, m: seen.append(r))
    assert [r.row for r in result.rows] == GRIDS["table6-mfa"] == seen
    assert all(len(r.per_seed) == 1 and len(r.per_seed[0]) == 4 for r in result.rows)
