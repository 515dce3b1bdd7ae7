"""
Ablation grids: train and evaluate one model per row per seed.

A row is a ``+``-joined set of tokens, ``none`` for the bare backbone:

* ``mfa`` / ``mifa`` switch a whole attention module on;
* ``hifa``, ``clia`` (inside MFA) and ``mgifa``, ``mlifa`` (inside MIFA)
  switch on only the named halves;
* ``omega_*`` tokens list exactly which learnable modulation weights stay on;
  ``no_omega`` alone turns them all off. Rows without omega tokens keep all on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import RunConfig
from .errors import InvalidFlag
from .net import MODULE_FLAGS, OMEGA_FLAGS
from .training import build_model, evaluate, fit, load_split

_MFA_OMEGAS = ("omega_d", "omega_l", "omega_c")
_MIFA_OMEGAS = ("omega_dm", "omega_lm", "omega_cm")


def _omega_rows(module: str, names) -> list[str]:
    d, l, c = names
    subsets = [(), (c,), (l, c), (d, c), (d, l), (d, l, c)]
    return ["+".join((module,) + (s or ("no_omega",))) for s in subsets]


GRIDS = {
    "table2": ["none", "mfa", "mifa", "mfa+mifa"],
    "table3": ["none", "hifa+mgifa", "clia+mlifa", "hifa+clia+mgifa+mlifa"],
    "table6-mfa": _omega_rows("mfa", _MFA_OMEGAS),
    "table6-mifa": _omega_rows("mifa", _MIFA_OMEGAS),
}
GRIDS["table6"] = GRIDS["table6-mfa"] + GRIDS["table6-mifa"]

_COLUMN = {"mfa": "MFA", "mifa": "MIFA", "hifa": "HIFA", "clia": "CLIA", "mgifa": "MGIFA", "mlifa": "MLIFA",
           "omega_d": "w_d", "omega_l": "w_l", "omega_c": "w_c",
           "omega_dm": "w_dm", "omega_lm": "w_lm", "omega_cm": "w_cm"}


def parse_row(row: str) -> dict[str, bool]:
    """Model-section flag values for one grid row."""
    tokens = {t.strip().lower() for t in row.split("+") if t.strip()}
    tokens.discard("none")
    valid = set(MODULE_FLAGS) | set(OMEGA_FLAGS) | {"no_omega"}
    bad = tokens - valid
    if bad:
        raise InvalidFlag(f"unknown ablation flags {sorted(bad)}; valid: {sorted(valid)}")
    flags: dict[str, bool] = {}
    for module, parts in (("mfa", ("hifa", "clia")), ("mifa", ("mgifa", "mlifa"))):
        named = tokens & set(parts)
        flags[module] = module in tokens or bool(named)
        for part in parts:
            flags[part] = part in named if named else True
    explicit = "no_omega" in tokens or bool(tokens & set(OMEGA_FLAGS))
    for w in OMEGA_FLAGS:
        flags[w] = w in tokens if explicit else True
    return flags


def parse_grid(spec: str) -> list[str]:
    if spec in GRIDS:
        return list(GRIDS[spec])
    rows = [r.strip() for r in spec.replace(";", ",").split(",") if r.strip()]
    if not rows:
        raise InvalidFlag("empty ablation grid")
    for r in rows:
        parse_row(r)
    return rows


def row_label(row: str) -> str:
    tokens = [t for t in row.split("+") if t and t not in ("none", "no_omega") and not t.startswith("omega")]
    if not tokens:
        return "DRIFA-Net (Baseline)"
    return "DRIFA-Net + " + " + ".join(t.upper() for t in tokens)


@dataclass
class RowResult:
    row: str
    flags: dict[str, bool]
    per_seed: list[list[float]] = field(default_factory=list)  # [acc, prec, rec, f1] per seed

    def mean(self) -> np.ndarray:
        return np.mean(self.per_seed, axis=0)

    def std(self) -> np.ndarray:
        return np.std(self.per_seed, axis=0)


@dataclass
class AblationResult:
    grid: str
    rows: list[RowResult]
    seeds: list[int]

    def columns(self) -> list[str]:
        used = set()
        for r in self.rows:
            used |= {t for t in r.row.split("+")} & set(_COLUMN)
        if any("no_omega" in r.row for r in self.rows):
            used |= {w for r in self.rows for w in OMEGA_FLAGS if (w in _MFA_OMEGAS) == ("mfa" in r.row.split("+"))}
        order = list(MODULE_FLAGS) + list(OMEGA_FLAGS)
        return [c for c in order if c in used]

    def _effective(self, r: RowResult, col: str) -> bool:
        f = r.flags
        if col in ("hifa", "clia"):
            return f["mfa"] and f[col]
        if col in ("mgifa", "mlifa"):
            return f["mifa"] and f[col]
        return f[col]

    def to_csv(self) -> str:
        cols = self.columns()
        head = ["row", "method"] + cols + ["accuracy", "accuracy_std", "precision", "precision_std",
                                           "recall", "recall_std", "f1", "f1_std", "seeds"]
        lines = [",".join(head)]
        for r in self.rows:
            mean, std = r.mean(), r.std()
            vals = [r.row, row_label(r.row)] + [str(int(self._effective(r, c))) for c in cols]
            for m, s in zip(mean, std):
                vals += [f"{m:.6f}", f"{s:.6f}"]
            vals.append(str(len(r.per_seed)))
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        if self.grid == "table6" and len(self.rows) == 12:
            return self._table6()
        cols = self.columns()
        header = " ".join(f"{_COLUMN[c]:>5}" for c in cols) + f"  {'Method':<38}" + "".join(
            f"{h:>14}" for h in ("Acc", "Prec", "Rec", "F1"))
        lines = [header, "-" * len(header)]
        for r in self.rows:
            marks = " ".join(f"{'✓' if self._effective(r, c) else 'x':>5}" for c in cols)
            mean, std = 100 * r.mean(), 100 * r.std()
            lines.append(marks + f"  {row_label(r.row):<38}" + "".join(
                f"{m:8.2f}±{s:5.2f}" for m, s in zip(mean, std)))
        lines.append(f"(mean ± std over seeds {self.seeds})")
        return "\n".join(lines) + "\n"

    def _table6(self) -> str:
        left, right = self.rows[:6], self.rows[6:]
        head = ("  w_d   w_l   w_c      Acc      F1 |  w_dm  w_lm  w_cm      Acc      F1")
        lines = ["DRIFA-Net+MFA" + " " * 25 + "| DRIFA-Net+MIFA", head, "-" * len(head)]
        for a, b in zip(left, right):
            ma, mb = 100 * a.mean(), 100 * b.mean()
            ta = " ".join(f"{'✓' if a.flags[w] else 'x':>5}" for w in _MFA_OMEGAS)
            tb = " ".join(f"{'✓' if b.flags[w] else 'x':>5}" for w in _MIFA_OMEGAS)
            lines.append(f"{ta} {ma[0]:8.2f}{ma[3]:8.2f} | {tb} {mb[0]:8.2f}{mb[3]:8.2f}")
        lines.append(f"(mean over seeds {self.seeds})")
        return "\n".join(lines) + "\n"


def run_ablation(cfg: RunConfig, rows: list[str], seeds: list[int], grid_name: str = "custom",
                 progress: Callable[[str, int, list[float]], None] | None = None) -> AblationResult:
    """Every row sees the same data and initialization seed for a given seed index."""
    results = [RowResult(row, parse_row(row)) for row in rows]
    for s in seeds:
        seeded = cfg.with_overrides(data={"seed": cfg.data.seed + s}, train={"seed": cfg.train.seed + s})
        data = load_split(seeded)
        for res in results:
            run_cfg = seeded.with_overrides(model=res.flags)
            model = build_model(run_cfg, data.train)
            fit(model, data, run_cfg.train)
            report = evaluate(model, data.test)
            row_metrics = np.mean([m.as_row() for m in report.tasks], axis=0).tolist()
            res.per_seed.append(row_metrics)
            if progress is not None:
                progress(res.row, s, row_metrics)
    return AblationResult(grid_name, results, list(seeds))
