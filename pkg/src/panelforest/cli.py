"""Config-driven command line: describe -> fit-linear -> fit-gmm -> fit-rf
-> importance -> compare (or `all`).

Configuration is one JSON file; `--seed`, `--workers`, `--out`, `--input`
and `--demo` override its top-level keys (flag wins over file, file wins
over defaults).  A seed is mandatory: there is no wall-clock fallback.
The PANELFOREST_WORKERS environment variable supplies the default worker
count.  Progress goes to stdout; artifacts land under the output
directory only.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as dsm
from . import demo as demo_mod
from . import gmm as gmm_mod
from . import linear as lin
from . import report as rpt
from . import vimp as vimp_mod
from ._rng import derive_seed
from .forest import ForestConfig, fit_forest, forest_metrics, oob_score
from .vimp import SeqTestConfig, permutation_importance, rfvimptest_all

__all__ = ["main", "RunConfig", "ConfigError"]

SUBCOMMANDS = ("describe", "fit-linear", "fit-gmm", "fit-rf", "importance",
               "compare", "all")


class ConfigError(ValueError):
    """Invalid run configuration; message lists every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" +
                         "\n".join(f"  - {p}" for p in self.problems))


@dataclass
class RunConfig:
    seed: int
    out: str
    input: str | None = None
    demo: bool = False
    workers: int = 1
    groups: dict[str, list[str]] = field(default_factory=dict)
    log_vars: list[str] = field(default_factory=list)
    outlier_rule: dict = field(default_factory=lambda: {"kind": "none"})
    outlier_vars: list[str] = field(default_factory=list)
    lag_vars: list[str] = field(default_factory=list)
    lag_order: int = 1
    static: dict = field(default_factory=dict)
    dynamic: dict = field(default_factory=dict)
    forest: dict = field(default_factory=dict)
    seq_test: dict = field(default_factory=dict)
    importance_repeats: int = 10

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        problems = []
        if raw.get("seed") is None:
            problems.append("seed is mandatory (reproducibility first; no clock default)")
        if not raw.get("demo") and not raw.get("input"):
            problems.append("either input (CSV path) or demo must be set")
        if raw.get("demo") and raw.get("input"):
            problems.append("input and demo are mutually exclusive")
        pre = raw.get("preprocessing", {})
        models = raw.get("models", {})
        for name, grp in (raw.get("groups") or {}).items():
            if not grp:
                problems.append(f"group {name!r} is empty")
        workers = raw.get("workers", _default_workers())
        try:
            workers = int(workers)
            if workers < 1:
                problems.append("workers must be >= 1")
        except (TypeError, ValueError):
            problems.append(f"workers must be an integer, got {workers!r}")
        lag_order = pre.get("lag_order", 1)
        if not isinstance(lag_order, int) or lag_order < 1:
            problems.append(f"preprocessing.lag_order must be a positive int, got {lag_order!r}")
        rule = pre.get("outlier_rule", {"kind": "none"})
        if rule.get("kind", "none") not in ("none", "iqr", "zscore"):
            problems.append(f"unknown outlier rule kind {rule.get('kind')!r}")
        if problems:
            raise ConfigError(problems)
        return cls(
            seed=int(raw["seed"]),
            out=str(raw.get("out", "panelforest-out")),
            input=raw.get("input"),
            demo=bool(raw.get("demo", False)),
            workers=workers,
            groups={k: list(v) for k, v in (raw.get("groups") or {}).items()},
            log_vars=list(pre.get("log_vars", [])),
            outlier_rule=dict(rule),
            outlier_vars=list(pre.get("outlier_vars", [])),
            lag_vars=list(pre.get("lag_vars", [])),
            lag_order=lag_order,
            static=dict(models.get("static", {})),
            dynamic=dict(models.get("dynamic", {})),
            forest=dict(raw.get("forest", {})),
            seq_test=dict(raw.get("seq_test", {})),
            importance_repeats=int(raw.get("importance_repeats", 10)),
        )

    def echo(self) -> dict:
        """Plain dict for the provenance manifest."""
        return {
            "input": self.input, "demo": self.demo, "seed": self.seed,
            "workers": self.workers, "groups": self.groups,
            "preprocessing": {"log_vars": self.log_vars,
                              "outlier_rule": self.outlier_rule,
                              "outlier_vars": self.outlier_vars,
                              "lag_vars": self.lag_vars,
                              "lag_order": self.lag_order},
            "models": {"static": self.static, "dynamic": self.dynamic},
            "forest": self.forest, "seq_test": self.seq_test,
            "importance_repeats": self.importance_repeats,
        }


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("PANELFOREST_WORKERS", "1")))
    except ValueError:
        return 1


class Runner:
    """Loads data once, derives per-step artifacts on demand."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self._raw = None
        self._prepared = None
        self._removal_log = None

    # -- data ----------------------------------------------------------

    @property
    def raw(self) -> dsm.PanelDataset:
        if self._raw is None:
            if self.cfg.demo:
                self._raw = demo_mod.make_demo_panel(self.cfg.seed)
            else:
                self._raw = dsm.load_csv(self.cfg.input)
            self._validate_against_data(self._raw)
        return self._raw

    def _validate_against_data(self, ds: dsm.PanelDataset) -> None:
        problems = []
        known = set(ds.entities)
        for name, members in self.cfg.groups.items():
            unknown = [m for m in members if m not in known]
            if unknown:
                problems.append(f"group {name!r} references unknown entities {unknown}")
        have = set(ds.columns)
        for var in self.cfg.log_vars + self.cfg.outlier_vars:
            if var not in have:
                problems.append(f"preprocessing references unknown column {var!r}")
        if problems:
            raise ConfigError(problems)

    @property
    def prepared(self) -> dsm.PanelDataset:
        """Outlier-filtered, log-transformed, lagged dataset."""
        if self._prepared is None:
            ds = self.raw
            rule = dsm.OutlierRule(self.cfg.outlier_rule.get("kind", "none"),
                                   float(self.cfg.outlier_rule.get("k", 1.5)))
            vars_ = self.cfg.outlier_vars or [n for n in ds.columns]
            ds, log = dsm.remove_outliers(ds, vars_, rule)
            self._removal_log = log
            if self.cfg.log_vars:
                ds = dsm.log_transform(ds, self.cfg.log_vars)
            lag_vars = [v for v in self.cfg.lag_vars if v in ds.columns]
            missing = [v for v in self.cfg.lag_vars if v not in ds.columns]
            if missing:
                raise ConfigError([f"lag variable {v!r} not found after transforms"
                                   for v in missing])
            if lag_vars:
                ds = dsm.add_lags(ds, lag_vars, self.cfg.lag_order)
            self._prepared = ds
        return self._prepared

    @property
    def groups(self) -> dict[str, list[str]]:
        if self.cfg.groups:
            return self.cfg.groups
        return {"all": self.prepared.entities}

    def group_data(self, members: list[str]) -> dsm.PanelDataset:
        mask = np.isin(self.prepared.entity.astype(str), members)
        return self.prepared.select_rows(mask)

    # -- model specs ----------------------------------------------------

    def static_spec(self) -> lin.ModelSpec:
        s = self.cfg.static
        if not s:
            raise ConfigError(["models.static is required for this step"])
        return lin.ModelSpec(
            dependent=s["dependent"],
            regressors=tuple(s.get("regressors", [])),
            controls=tuple(s.get("controls", [])),
            include_time_dummies=bool(s.get("time_dummies", False)),
            effects=s.get("effects", "fixed"),
        )

    def dynamic_spec(self) -> gmm_mod.GmmSpec:
        d = self.cfg.dynamic
        if not d:
            raise ConfigError(["models.dynamic is required for this step"])
        lags = d.get("instrument_lags", [2, 4])
        if isinstance(lags, dict):
            lags = {k: tuple(v) for k, v in lags.items()}
        else:
            lags = tuple(lags)
        return gmm_mod.GmmSpec(
            dependent=d["dependent"],
            regressors=tuple(d.get("regressors", [])),
            instrument_lags=lags,
            include_time_dummies=bool(d.get("time_dummies", False)),
        )

    def forest_config(self, *path) -> ForestConfig:
        f = self.cfg.forest
        return ForestConfig(
            n_trees=int(f.get("n_trees", 150)),
            mtry=f.get("mtry"),
            min_leaf=int(f.get("min_leaf", 5)),
            max_depth=f.get("max_depth"),
            seed=derive_seed(self.cfg.seed, "forest", *path),
        )

    def seq_config(self) -> SeqTestConfig:
        return SeqTestConfig(**{k: (tuple(v) if k == "sapt_bounds" and v else v)
                                for k, v in self.cfg.seq_test.items()})

    def rf_design(self, ds: dsm.PanelDataset, setting: str):
        """Feature matrix for the forest: static spec regressors/controls,
        plus the lagged dependent in the dynamic setting."""
        s = self.cfg.static
        dep = s["dependent"]
        features = list(s.get("regressors", [])) + list(s.get("controls", []))
        if setting == "dynamic":
            lagdep = f"{dep}(t-{self.cfg.lag_order})"
            if lagdep not in ds.columns:
                raise ConfigError([f"dynamic RF needs {lagdep!r}; add {dep!r} to "
                                   "preprocessing.lag_vars"])
            features = [lagdep] + features
        mask = ds.complete_rows([dep, *features])
        X = np.column_stack([ds.column(f)[mask] for f in features])
        y = ds.column(dep)[mask]
        return X, y, features, mask

    # -- steps -----------------------------------------------------------

    def step_describe(self) -> None:
        ds = self.raw
        stats = dsm.describe(ds)
        tables = self.out / "tables"
        tables.mkdir(parents=True, exist_ok=True)
        with open(tables / "descriptive_stats.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variable", "mean", "median", "min", "max",
                        "std_dev", "skewness", "kurtosis", "count"])
            for row in stats.rows():
                w.writerow([row[0]] + [_fmt(v) for v in row[1:-1]] + [row[-1]])
        numeric = list(ds.columns)
        corr = dsm.correlation_matrix(ds, numeric)
        with open(tables / "correlation_matrix.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variable", *corr.names])
            for i, name in enumerate(corr.names):
                w.writerow([name] + [_fmt(v) for v in corr.matrix[i]])
        print(f"describe: {ds.n_rows} rows, {len(ds.entities)} entities, "
              f"years {ds.years[0]}-{ds.years[-1]}")

    def step_fit_linear(self) -> list[rpt.ModelBlock]:
        spec = self.static_spec()
        blocks, hausman_rows, re_blocks = [], [], []
        for gname, members in self.groups.items():
            sub = self.group_data(members)
            fe = lin.fit(lin.ModelSpec(spec.dependent, spec.regressors, spec.controls,
                                       spec.include_time_dummies, "fixed"), sub)
            fe = lin.robust_covariance(fe)
            re = lin.fit(lin.ModelSpec(spec.dependent, spec.regressors, spec.controls,
                                       spec.include_time_dummies, "random"), sub)
            haus = lin.hausman(lin.fit(lin.ModelSpec(spec.dependent, spec.regressors,
                                                     spec.controls,
                                                     spec.include_time_dummies,
                                                     "fixed"), sub), re)
            re = lin.robust_covariance(re)
            main = fe if spec.effects != "random" else re
            fp = self.prepared.fingerprint()
            blocks.append(rpt.from_linear(main, gname, "static", fingerprint=fp))
            re_blocks.append(rpt.from_linear(re if spec.effects != "random" else fe,
                                             gname, "static", fingerprint=fp))
            hausman_rows.append([gname, _fmt(haus.statistic), haus.df, _fmt(haus.p),
                                 haus.preferred, haus.nonpsd])
            print(f"fit-linear[{gname}]: n={main.n_obs} R2={main.metrics.r_squared:.4f}")
        tables = self.out / "tables"
        tables.mkdir(parents=True, exist_ok=True)
        with open(tables / "hausman.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group", "statistic", "df", "p", "preferred", "nonpsd"])
            w.writerows(hausman_rows)
        rpt.emit_tables(rpt.build_report(blocks), self.out,
                        only=[("static", "linear")])
        # the estimator not chosen as main still gets reported
        alt = "random" if spec.effects != "random" else "fixed"
        rpt._write_model_table(tables / f"table_static_linear_{alt}.csv", re_blocks)
        return blocks

    def step_fit_gmm(self) -> list[rpt.ModelBlock]:
        spec = self.dynamic_spec()
        blocks = []
        for gname, members in self.groups.items():
            sub = self.group_data(members)
            fit = gmm_mod.fit_system_gmm(spec, sub)
            blocks.append(rpt.from_gmm(fit, gname,
                                       fingerprint=self.prepared.fingerprint()))
            print(f"fit-gmm[{gname}]: n_diff={fit.n_obs_diff} n_level={fit.n_obs_level} "
                  f"instruments={fit.instrument_count} sargan_p={_fmt(fit.sargan.p)}")
        rpt.emit_tables(rpt.build_report(blocks), self.out,
                        only=[("dynamic", "gmm")])
        return blocks

    def step_fit_rf(self) -> dict:
        """Fit forests per (group, setting); returns everything the
        importance and compare steps need."""
        results = {}
        for setting in ("static", "dynamic"):
            for gname, members in self.groups.items():
                sub = self.group_data(members)
                X, y, features, _ = self.rf_design(sub, setting)
                fcfg = self.forest_config(gname, setting)
                forest = fit_forest(X, y, fcfg, features)
                metrics = forest_metrics(forest, X, y)
                oob = oob_score(forest, X, y)
                imp = permutation_importance(
                    forest, X, y, n_repeats=self.cfg.importance_repeats,
                    seed=derive_seed(self.cfg.seed, "vimp", gname, setting))
                results[(gname, setting)] = {
                    "X": X, "y": y, "features": features,
                    "metrics": metrics, "oob": oob, "importance": imp,
                }
                print(f"fit-rf[{gname}/{setting}]: n={metrics.n_obs} "
                      f"R2={metrics.r2:.4f} OOB_R2={oob.oob_r2:.4f}")
        rpt.emit_tables(rpt.build_report([], self.rf_blocks(results)), self.out,
                        only=[("static", "rf"), ("dynamic", "rf")])
        return results

    def rf_blocks(self, results: dict, decisions_all: dict | None = None
                  ) -> list[rpt.ModelBlock]:
        blocks = []
        for (gname, setting), res in results.items():
            decisions = (decisions_all or {}).get((gname, setting))
            blocks.append(rpt.from_forest(res["metrics"], res["importance"],
                                          gname, setting, decisions=decisions,
                                          fingerprint=self.prepared.fingerprint()))
        return blocks

    def step_importance(self, rf_results=None) -> dict:
        if rf_results is None:
            rf_results = self.step_fit_rf()
        cfg = self.seq_config()
        decisions_all = {}
        tables = self.out / "tables"
        tables.mkdir(parents=True, exist_ok=True)
        for (gname, setting), res in rf_results.items():
            X, y, features = res["X"], res["y"], res["features"]
            decisions = rfvimptest_all(
                X, y, features, cfg,
                master_seed=derive_seed(self.cfg.seed, "seqtest", gname, setting),
                workers=self.cfg.workers, feature_names=features,
                forest_config=self.forest_config(gname, setting))
            decisions_all[(gname, setting)] = decisions
            stars = vimp_mod.significance_codes(decisions)
            imp = res["importance"]
            with open(tables / f"importance_decisions_{gname}_{setting}.csv",
                      "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["variable", "importance", "std", "p_estimate",
                            "decision", "m_used", "stopping_reason", "stars"])
                for name, dec in decisions.items():
                    w.writerow([name, _fmt(dec.observed_vimp),
                                _fmt(imp.stds.get(name)), _fmt(dec.p_estimate),
                                dec.decision, dec.m, dec.stopping_reason,
                                stars[name]])
            rpt.emit_importance_figure(
                decisions, imp, self.out / "figures" / f"importance_{gname}_{setting}.svg")
            n_sig = sum(d.decision == "significant" for d in decisions.values())
            print(f"importance[{gname}/{setting}]: {n_sig}/{len(decisions)} significant")
        # re-emit the importance tables, now with sequential p-values
        rpt.emit_tables(rpt.build_report([], self.rf_blocks(rf_results, decisions_all)),
                        self.out, only=[("static", "rf"), ("dynamic", "rf")])
        return decisions_all

    def step_compare(self, blocks=None) -> None:
        if blocks is None:
            linear_blocks = self.step_fit_linear()
            gmm_blocks = self.step_fit_gmm()
            blocks = linear_blocks + gmm_blocks + self.rf_blocks(self.step_fit_rf())
        import hashlib
        config_hash = hashlib.sha256(
            json.dumps(self.cfg.echo(), sort_keys=True).encode()).hexdigest()
        report = rpt.build_report(blocks, provenance={
            "seed": self.cfg.seed,
            "config_hash": config_hash,
            "dataset_fingerprint": self.prepared.fingerprint(),
        })
        tables = self.out / "tables"
        tables.mkdir(parents=True, exist_ok=True)
        with open(tables / "model_comparison.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["group", "setting", "model", "r2", "adj_r2", "mse",
                        "f_stat", "n_obs"])
            for b in report.blocks:
                w.writerow([b.group, b.setting, b.model,
                            _fmt(b.metrics.get("r2")), _fmt(b.metrics.get("adj_r2")),
                            _fmt(b.metrics.get("mse")), _fmt(b.metrics.get("f_stat")),
                            b.metrics.get("n_obs", "")])
        print(f"compare: {len(report.blocks)} model blocks")

    def run(self, subcommand: str) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        if subcommand == "describe":
            self.step_describe()
        elif subcommand == "fit-linear":
            self._write_removal_log()
            self.step_fit_linear()
        elif subcommand == "fit-gmm":
            self._write_removal_log()
            self.step_fit_gmm()
        elif subcommand == "fit-rf":
            self._write_removal_log()
            self.step_fit_rf()
        elif subcommand == "importance":
            self._write_removal_log()
            self.step_importance()
        elif subcommand == "compare":
            self._write_removal_log()
            self.step_compare()
        elif subcommand == "all":
            self.step_describe()
            self._write_removal_log()
            linear_blocks = self.step_fit_linear()
            gmm_blocks = self.step_fit_gmm()
            rf_results = self.step_fit_rf()
            decisions_all = self.step_importance(rf_results)
            rf_blocks = self.rf_blocks(rf_results, decisions_all)
            self.step_compare(linear_blocks + gmm_blocks + rf_blocks)
            rpt.emit_tables(rpt.build_report(linear_blocks + gmm_blocks, rf_blocks),
                            self.out)
            rpt.write_manifest(self.out, self.cfg.echo(), self.cfg.seed,
                               self.prepared.fingerprint())
            print(f"all: artifacts under {self.out}")

    def _write_removal_log(self) -> None:
        _ = self.prepared
        dsm.write_removal_log(self._removal_log or [], self.out / "removal_log.csv")


def _fmt(v) -> str:
    if v is None:
        return ""
    try:
        f = float(v)
    except (TypeError, ValueError):
        return str(v)
    if math.isnan(f):
        return "n/a"
    return f"{f:.4f}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panelforest",
        description="Panel regressions, System GMM and random-forest importance "
                    "analysis from one config file.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("-c", "--config", help="JSON config file")
    parser.add_argument("--demo", action="store_true",
                        help="run on the bundled synthetic panel")
    parser.add_argument("--input", help="input CSV (overrides config)")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--workers", type=int,
                        help="parallel workers (overrides config and "
                             "PANELFOREST_WORKERS)")
    parser.add_argument("--out", help="output directory (overrides config)")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError([f"config file not found: {path}"])
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config is not valid JSON: {exc}"]) from None
    if args.demo and not raw:
        raw = demo_mod.demo_config(seed=args.seed if args.seed is not None else 0)
    # flag overrides beat file values
    if args.demo:
        raw["demo"] = True
        raw.pop("input", None)
    if args.input is not None:
        raw["input"] = args.input
        raw["demo"] = False
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.out is not None:
        raw["out"] = args.out
    return RunConfig.from_mapping(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        Runner(cfg).run(args.subcommand)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
