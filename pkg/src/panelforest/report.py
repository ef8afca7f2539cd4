"""Side-by-side comparison artifacts: coefficient/importance tables and
importance figures.

Tables render values at 4 decimal places with the dispersion measure in a
paired row beneath each estimate (standard errors for regressions,
standard deviations for importances) and a metrics footer; a companion
``*_full.csv`` keeps full float precision for machine consumption.
Figures are hand-written SVG so output is deterministic and diffable:
horizontal bars sorted by importance, gray when the importance p-value
exceeds 0.05.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ._common import star_code
from .forest import ForestMetrics
from .gmm import GmmFit
from .linear import LinearFit, t_tests
from .vimp import PermImportanceResult, SeqTestDecision

__all__ = [
    "VariableCell",
    "ModelBlock",
    "ComparisonReport",
    "from_linear",
    "from_gmm",
    "from_forest",
    "build_report",
    "emit_tables",
    "emit_importance_figure",
]

SETTINGS = ("static", "dynamic")
MODELS = ("linear", "gmm", "rf")


@dataclass(frozen=True)
class VariableCell:
    """One table entry: estimate or importance, its dispersion, and p."""

    name: str
    value: float
    dispersion: float | None = None
    p: float | None = None

    @property
    def stars(self) -> str:
        return star_code(self.p) if self.p is not None else ""


@dataclass(frozen=True)
class ModelBlock:
    """One fitted model's contribution to the comparison."""

    group: str
    setting: str  # static | dynamic
    model: str  # linear | gmm | rf
    cells: tuple[VariableCell, ...]
    metrics: dict[str, float]
    footer: dict[str, str] = field(default_factory=dict)
    fingerprint: str = ""

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")


def from_linear(fit: LinearFit, group: str, setting: str,
                fingerprint: str | None = None) -> ModelBlock:
    """Adapt a linear fit (coefficients, robust/classical SEs, stars).

    `fingerprint` overrides the fit's own when the fit was estimated on a
    group subset of a shared source dataset.
    """
    tests = t_tests(fit)
    cells = tuple(VariableCell(name, t.estimate, t.se, t.p)
                  for name, t in tests.items())
    m = fit.metrics
    metrics = {"r2": m.r_squared, "adj_r2": m.adj_r_squared,
               "f_stat": m.f_statistic, "n_obs": fit.n_obs}
    footer = {"covariance": fit.cov_method, "entities": str(fit.n_entities)}
    return ModelBlock(group, setting, "linear", cells, metrics, footer,
                      fingerprint if fingerprint is not None else fit.fingerprint)


def from_gmm(fit: GmmFit, group: str, setting: str = "dynamic",
             fingerprint: str | None = None) -> ModelBlock:
    cells = []
    for i, name in enumerate(fit.coef_names):
        se = math.sqrt(max(fit.covariance[i, i], 0.0))
        z = fit.coefficients[name] / se if se > 0 else math.nan
        p = 2.0 * (1.0 - _phi(abs(z))) if not math.isnan(z) else math.nan
        cells.append(VariableCell(name, fit.coefficients[name], se, p))
    metrics = {"n_obs": fit.n_obs_level + fit.n_obs_diff,
               "wald": fit.wald.statistic, "instruments": fit.instrument_count}
    ar1, ar2 = fit.ar_tests.get(1), fit.ar_tests.get(2)
    footer = {
        "sargan": f"{fit.sargan.statistic:.4f} (df={fit.sargan.df})"
                  if fit.sargan.applicable else "n/a",
        "sargan_p": f"{fit.sargan.p:.4f}" if fit.sargan.applicable else "n/a",
        "ar1_z": _fmt_ar(ar1),
        "ar2_z": _fmt_ar(ar2),
        "wald": f"{fit.wald.statistic:.4f}{star_code(fit.wald.p)}",
        "entities": str(fit.n_entities),
    }
    return ModelBlock(group, setting, "gmm", tuple(cells), metrics, footer,
                      fingerprint if fingerprint is not None else fit.fingerprint)


def _fmt_ar(ar) -> str:
    if ar is None or not ar.applicable:
        return "n/a"
    return f"{ar.z:.4f}{star_code(ar.p)}"


def _phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def from_forest(metrics: ForestMetrics, importance: PermImportanceResult,
                group: str, setting: str,
                decisions: Mapping[str, SeqTestDecision] | None = None,
                fingerprint: str = "") -> ModelBlock:
    """Adapt forest results: importance scores, stds, sequential p-values."""
    cells = []
    for name in importance.means:
        p = None
        if decisions and name in decisions:
            p = decisions[name].p_estimate
        cells.append(VariableCell(name, importance.means[name],
                                  importance.stds[name], p))
    block_metrics = {"r2": metrics.r2, "adj_r2": metrics.adj_r2,
                     "mse": metrics.mse, "f_stat": metrics.pseudo_f,
                     "n_obs": metrics.n_obs}
    footer = {"f_label": "pseudo_f", "importance_metric": importance.metric,
              "n_repeats": str(importance.n_repeats)}
    return ModelBlock(group, setting, "rf", tuple(cells), block_metrics, footer,
                      fingerprint)


@dataclass(frozen=True)
class ComparisonReport:
    """Aligned model blocks sharing one dataset fingerprint."""

    blocks: tuple[ModelBlock, ...]
    provenance: dict

    def select(self, setting: str, model: str) -> list[ModelBlock]:
        return [b for b in self.blocks if b.setting == setting and b.model == model]

    @property
    def groups(self) -> list[str]:
        seen = []
        for b in self.blocks:
            if b.group not in seen:
                seen.append(b.group)
        return seen


def build_report(fits: Iterable[ModelBlock], importance: Iterable[ModelBlock] = (),
                 provenance: Mapping | None = None) -> ComparisonReport:
    """Merge regression and importance blocks into one report.

    All blocks carrying a fingerprint must agree on it; missing model
    cells simply stay absent (they are never zero-filled).
    """
    blocks = tuple(fits) + tuple(importance)
    if not blocks:
        raise ValueError("nothing to report")
    prints = {b.fingerprint for b in blocks if b.fingerprint}
    if len(prints) > 1:
        raise ValueError(f"dataset fingerprint mismatch across fits: {sorted(prints)}")
    return ComparisonReport(blocks, dict(provenance or {}))


def _f4(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "n/a"
    if math.isinf(x):
        return "inf"
    return f"{x:.4f}"


def _write_model_table(path: Path, blocks: Sequence[ModelBlock]) -> None:
    groups = []
    for b in blocks:
        if b.group not in groups:
            groups.append(b.group)
    by_group = {b.group: b for b in blocks}
    var_order: list[str] = []
    for b in blocks:
        for cell in b.cells:
            if cell.name not in var_order:
                var_order.append(cell.name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", *groups])
        for name in var_order:
            value_row, disp_row = [name], [""]
            for g in groups:
                cell = next((c for c in by_group[g].cells if c.name == name), None)
                if cell is None:
                    value_row.append("")
                    disp_row.append("")
                else:
                    value_row.append(f"{_f4(cell.value)}{cell.stars}")
                    disp_row.append(f"({_f4(cell.dispersion)})" if cell.dispersion
                                    is not None else "")
            writer.writerow(value_row)
            writer.writerow(disp_row)
        metric_keys: list[str] = []
        for b in blocks:
            for k in b.metrics:
                if k not in metric_keys:
                    metric_keys.append(k)
        for k in metric_keys:
            row = [k]
            for g in groups:
                v = by_group[g].metrics.get(k)
                row.append(_f4(v) if not isinstance(v, int) else str(v))
            writer.writerow(row)
        footer_keys: list[str] = []
        for b in blocks:
            for k in b.footer:
                if k not in footer_keys:
                    footer_keys.append(k)
        for k in footer_keys:
            writer.writerow([k, *[by_group[g].footer.get(k, "") for g in groups]])


def _write_full_precision(path: Path, blocks: Sequence[ModelBlock]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "setting", "model", "variable", "value",
                         "dispersion", "p"])
        for b in blocks:
            for c in b.cells:
                writer.writerow([b.group, b.setting, b.model, c.name, repr(c.value),
                                 "" if c.dispersion is None else repr(c.dispersion),
                                 "" if c.p is None else repr(c.p)])


TABLE_PLAN = (
    ("table_static_linear.csv", "static", "linear"),
    ("table_dynamic_gmm.csv", "dynamic", "gmm"),
    ("rf_importance_static.csv", "static", "rf"),
    ("rf_importance_dynamic.csv", "dynamic", "rf"),
)


def emit_tables(report: ComparisonReport, out_dir,
                only: Iterable[tuple[str, str]] | None = None) -> list[Path]:
    """Write the comparison tables under out_dir/tables.

    Produces table_static_linear.csv, table_dynamic_gmm.csv,
    rf_importance_static.csv and rf_importance_dynamic.csv (plus _full
    companions); tables without any contributing fit hold headers only.
    `only` restricts emission to the given (setting, model) pairs so a
    partial pipeline step does not touch the other tables.
    """
    out = Path(out_dir) / "tables"
    out.mkdir(parents=True, exist_ok=True)
    wanted = set(only) if only is not None else None
    written = []
    for fname, setting, model in TABLE_PLAN:
        if wanted is not None and (setting, model) not in wanted:
            continue
        blocks = report.select(setting, model)
        path = out / fname
        if blocks:
            _write_model_table(path, blocks)
            _write_full_precision(out / fname.replace(".csv", "_full.csv"), blocks)
        else:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                csv.writer(fh).writerow(["variable"])
        written.append(path)
    return written


SVG_BAR_COLOR = "#4878a8"
SVG_GRAY = "#b0b0b0"


def emit_importance_figure(decisions: Mapping[str, SeqTestDecision | float],
                           scores: PermImportanceResult | Mapping[str, tuple],
                           path) -> Path:
    """Horizontal importance bar chart as deterministic SVG.

    Bars are sorted by importance descending; a bar is gray when its
    p-value exceeds 0.05, colored otherwise; whiskers show +/- one std.
    `decisions` and `scores` must cover identical variable sets.
    """
    if isinstance(scores, PermImportanceResult):
        score_map = {n: (scores.means[n], scores.stds[n]) for n in scores.means}
    else:
        score_map = {n: (float(v[0]), float(v[1])) for n, v in scores.items()}
    if not score_map:
        raise ValueError("no variables to draw")
    if set(score_map) != set(decisions):
        raise ValueError("decisions and scores cover different variables: "
                         f"{sorted(set(score_map) ^ set(decisions))}")

    def p_of(d) -> float:
        return d.p_estimate if isinstance(d, SeqTestDecision) else float(d)

    order = sorted(score_map, key=lambda n: score_map[n][0], reverse=True)
    bar_h, gap, left, top = 24, 10, 170, 30
    width = 640
    plot_w = width - left - 40
    height = top + len(order) * (bar_h + gap) + 40
    upper = max(max(m + s for m, s in score_map.values()), 1e-12)
    lower = min(0.0, min(m - s for m, s in score_map.values()))
    span = upper - lower

    def sx(v: float) -> float:
        return left + (v - lower) / span * plot_w

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{left}" y="18" font-family="sans-serif" font-size="13">'
        'Permutation importance (gray: p &gt; 0.05)</text>',
        f'<line x1="{sx(0):.2f}" y1="{top}" x2="{sx(0):.2f}" '
        f'y2="{height - 30}" stroke="#555" stroke-width="1"/>',
    ]
    for i, name in enumerate(order):
        mean, std = score_map[name]
        p = p_of(decisions[name])
        y = top + i * (bar_h + gap)
        x0, x1 = sorted((sx(0.0), sx(mean)))
        fill = SVG_GRAY if p > 0.05 else SVG_BAR_COLOR
        lines.append(f'<rect class="bar" x="{x0:.2f}" y="{y}" '
                     f'width="{max(x1 - x0, 0.5):.2f}" height="{bar_h}" fill="{fill}"/>')
        wy = y + bar_h / 2
        lines.append(f'<line x1="{sx(mean - std):.2f}" y1="{wy:.2f}" '
                     f'x2="{sx(mean + std):.2f}" y2="{wy:.2f}" '
                     'stroke="#333" stroke-width="1.5"/>')
        lines.append(f'<text x="{left - 8}" y="{wy + 4:.2f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="12">{_xml(name)}</text>')
        lines.append(f'<text x="{x1 + 6:.2f}" y="{wy + 4:.2f}" '
                     f'font-family="sans-serif" font-size="11">{mean:.4f}'
                     f'{star_code(p)}</text>')
    lines.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _xml(s: str) -> str:
    return (s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def write_manifest(out_dir, config: Mapping, seed: int,
                   fingerprint: str, timestamp: str | None = None) -> Path:
    """Write provenance.json: config echo, seed, data fingerprint, and a
    content hash over every artifact file (manifest excluded).

    The content hash is reproducible across runs; the optional timestamp
    lives only here and is excluded from hashing.
    """
    import hashlib

    out = Path(out_dir)
    digest = hashlib.sha256()
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "provenance.json":
            digest.update(str(p.relative_to(out)).encode())
            digest.update(p.read_bytes())
    manifest = {
        "seed": seed,
        "dataset_fingerprint": fingerprint,
        "config": dict(config),
        "content_hash": digest.hexdigest(),
    }
    if timestamp is not None:
        manifest["created_at"] = timestamp
    path = out / "provenance.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path
