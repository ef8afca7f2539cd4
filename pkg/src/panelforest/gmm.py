"""One-step System GMM for dynamic panels, with diagnostics.

The estimator stacks first-differenced equations (instrumented by lagged
levels, lags >= 2) on top of level equations (instrumented by lag-1 first
differences), weighting with the standard one-step H matrix: tridiagonal
(2 on the diagonal, -1 on the first off-diagonal) for the differenced
block, identity for the level block.  Instruments are collapsed by default
(one column per lag distance) to curb proliferation when the entity and
period counts are similar.

Diagnostics: Sargan over-identification test under the one-step weight,
Arellano-Bond AR(1)/AR(2) tests on the differenced residuals, and a
chi-square Wald test of joint significance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg as sla
from scipy import stats as sps

from .dataset import PanelDataset
from .linear import TIME_DUMMY_PREFIX, WaldResult

__all__ = [
    "GmmSpec",
    "GmmFit",
    "SarganResult",
    "ArResult",
    "fit_system_gmm",
    "sargan_test",
    "ar_test",
    "wald_joint",
]


@dataclass(frozen=True)
class GmmSpec:
    """Dynamic model: dependent on its own first lag plus regressors.

    instrument_lags gives the level-lag range used to instrument the
    differenced equations, either one (min, max) pair for every
    instrumented variable or a per-variable mapping; min must be >= 2.
    collapse=False expands instruments per period (GMM-style) instead of
    one column per lag distance.
    """

    dependent: str
    regressors: tuple[str, ...]
    lag_dependent: int = 1
    instrument_lags: tuple[int, int] | Mapping[str, tuple[int, int]] = (2, 4)
    include_time_dummies: bool = False
    collapse: bool = True

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        if self.lag_dependent != 1:
            raise ValueError("only first-order dependent lags are supported")
        if self.dependent in self.regressors:
            raise ValueError(f"dependent {self.dependent!r} also appears as a regressor")
        for var, (lo, hi) in self._lag_items():
            if lo < 2:
                raise ValueError(f"instrument min_lag must be >= 2 (got {lo} for {var!r}); "
                                 "levels dated t-1 are not valid for the differenced equation")
            if hi < lo:
                raise ValueError(f"instrument max_lag < min_lag for {var!r}")

    def _lag_items(self):
        if isinstance(self.instrument_lags, Mapping):
            return list(self.instrument_lags.items())
        return [("*", tuple(self.instrument_lags))]

    def lags_for(self, var: str) -> tuple[int, int]:
        if isinstance(self.instrument_lags, Mapping):
            lo, hi = self.instrument_lags.get(var, (2, 4))
        else:
            lo, hi = self.instrument_lags
        return int(lo), int(hi)

    @property
    def lagdep_name(self) -> str:
        return f"{self.dependent}(t-1)"


@dataclass(frozen=True)
class SarganResult:
    statistic: float
    df: int
    p: float

    @property
    def applicable(self) -> bool:
        return self.df >= 1


@dataclass(frozen=True)
class ArResult:
    z: float
    p: float

    @property
    def applicable(self) -> bool:
        return not math.isnan(self.z)


@dataclass(frozen=True)
class GmmFit:
    """One-step System GMM estimate with instrument accounting.

    Diff-block context (design rows, instruments, weights) is retained so
    the AR tests and Sargan statistic are recomputable from the fit alone.
    lagdep_stable is False when |rho| >= 1.
    """

    spec: GmmSpec
    coef_names: tuple[str, ...]
    coefficients: dict[str, float]
    covariance: np.ndarray
    instrument_count: int
    parameter_count: int
    instrument_names: tuple[str, ...]
    n_obs_diff: int
    n_obs_level: int
    n_entities: int
    residuals_diff: np.ndarray
    residuals_level: np.ndarray
    diff_entity: np.ndarray
    diff_year: np.ndarray
    level_entity: np.ndarray
    level_year: np.ndarray
    sargan: SarganResult
    ar_tests: dict[int, ArResult]
    wald: WaldResult
    lagdep_stable: bool
    fingerprint: str
    # estimation context
    design_diff: np.ndarray
    z_matrix: np.ndarray
    zx: np.ndarray
    z_is_level_row: np.ndarray
    row_entity_all: np.ndarray
    weight: np.ndarray
    a_inv: np.ndarray
    sigma2: float

    @property
    def beta(self) -> np.ndarray:
        return np.array([self.coefficients[n] for n in self.coef_names])


def _entity_frames(ds: PanelDataset, names: Sequence[str]):
    """Per-entity (years, {name: year->value}) maps over non-missing cells."""
    frames = {}
    for code in ds.entities:
        rows = ds.entity == code
        years = ds.year[rows]
        cols = {}
        for name in names:
            vals = ds.column(name)[rows]
            cols[name] = {int(t): float(v) for t, v in zip(years, vals) if not math.isnan(v)}
        frames[code] = cols
    return frames


def fit_system_gmm(spec: GmmSpec, ds: PanelDataset) -> GmmFit:
    """Estimate the dynamic model by one-step System GMM."""
    return _fit_gmm(spec, ds, include_level=True)


def _fit_gmm(spec: GmmSpec, ds: PanelDataset, include_level: bool = True) -> GmmFit:
    # difference-only mode (include_level=False) is internal, used by the
    # test suite where the one-step weight is exactly efficient
    ds.require_columns([spec.dependent, *spec.regressors])
    dep, regs = spec.dependent, spec.regressors
    frames = _entity_frames(ds, [dep, *regs])
    inst_vars = [dep, *regs]

    diff_rows, level_rows = [], []  # (entity, year)
    for code in ds.entities:
        cols = frames[code]
        dep_years = cols[dep]
        for t in sorted(dep_years):
            if (t - 1) not in dep_years:
                continue
            regs_now = all(t in cols[r] for r in regs)
            if include_level and regs_now:
                level_rows.append((code, t))
            if (t - 2) in dep_years and regs_now and all((t - 1) in cols[r] for r in regs):
                diff_rows.append((code, t))

    if not diff_rows:
        usable = {code: sum(1 for t in frames[code][dep] if (t - 1) in frames[code][dep]
                            and (t - 2) in frames[code][dep])
                  for code in ds.entities}
        raise ValueError("no entity contributes 3 consecutive usable periods; "
                         f"per-entity usable differenced periods: {usable}")

    n_d, n_l = len(diff_rows), len(level_rows)
    years_used = sorted({t for _, t in diff_rows} | {t for _, t in level_rows})
    dummy_years = years_used[1:] if spec.include_time_dummies else []

    param_names = [spec.lagdep_name, *regs]
    param_names += [f"{TIME_DUMMY_PREFIX}{t}" for t in dummy_years]
    if include_level:
        param_names.append("const")
    k = len(param_names)

    def val(code, name, t):
        return frames[code][name].get(t)

    # stacked outcome and design: diff block first, then level block
    y_stack = np.zeros(n_d + n_l)
    x_stack = np.zeros((n_d + n_l, k))
    for i, (code, t) in enumerate(diff_rows):
        y_stack[i] = val(code, dep, t) - val(code, dep, t - 1)
        x_stack[i, 0] = val(code, dep, t - 1) - val(code, dep, t - 2)
        for j, r in enumerate(regs, start=1):
            x_stack[i, j] = val(code, r, t) - val(code, r, t - 1)
        for j, s in enumerate(dummy_years, start=1 + len(regs)):
            x_stack[i, j] = float(t == s) - float(t - 1 == s)
    for i, (code, t) in enumerate(level_rows, start=n_d):
        y_stack[i] = val(code, dep, t)
        x_stack[i, 0] = val(code, dep, t - 1)
        for j, r in enumerate(regs, start=1):
            x_stack[i, j] = val(code, r, t)
        for j, s in enumerate(dummy_years, start=1 + len(regs)):
            x_stack[i, j] = float(t == s)
        if include_level:
            x_stack[i, k - 1] = 1.0

    z_cols, z_names = _build_instruments(spec, frames, diff_rows, level_rows,
                                         inst_vars, dummy_years, include_level)
    z = np.column_stack(z_cols)
    nonzero = np.any(z != 0.0, axis=0)
    z = z[:, nonzero]
    z_names = tuple(name for name, keep in zip(z_names, nonzero) if keep)
    n_inst = z.shape[1]
    if n_inst < k:
        raise ValueError(f"under-identified: {n_inst} instruments for {k} parameters "
                         f"(instruments: {list(z_names)})")

    entities_arr = np.array([c for c, _ in diff_rows] + [c for c, _ in level_rows],
                            dtype=object)
    n_entities = len(set(entities_arr.tolist()))
    if n_inst >= n_entities:
        warnings.warn(f"instrument proliferation: {n_inst} instruments with only "
                      f"{n_entities} entities", stacklevel=2)

    diff_years_arr = np.array([t for _, t in diff_rows])
    is_level = np.zeros(n_d + n_l, dtype=bool)
    is_level[n_d:] = True

    # one-step weight: W = (sum_i Z_i' H_i Z_i)^-1
    s_zhz = np.zeros((n_inst, n_inst))
    for code in sorted(set(entities_arr.tolist())):
        rows = np.where(entities_arr == code)[0]
        d_rows = rows[~is_level[rows]]
        h = np.zeros((len(rows), len(rows)))
        local = {r: i for i, r in enumerate(rows)}
        for r in d_rows:
            h[local[r], local[r]] = 2.0
            for r2 in d_rows:
                if abs(int(diff_years_arr[r]) - int(diff_years_arr[r2])) == 1:
                    h[local[r], local[r2]] = -1.0
        for r in rows[is_level[rows]]:
            h[local[r], local[r]] = 1.0
        zi = z[rows]
        s_zhz += zi.T @ h @ zi

    w_mat = _safe_inverse(s_zhz, z_names, "moment matrix Z'HZ")
    zx = z.T @ x_stack
    zy = z.T @ y_stack
    a_mat = zx.T @ w_mat @ zx
    a_inv = _safe_inverse(a_mat, param_names, "GMM normal matrix")
    theta = a_inv @ (zx.T @ (w_mat @ zy))

    u = y_stack - x_stack @ theta
    # clustered one-step sandwich
    omega = np.zeros((n_inst, n_inst))
    for code in sorted(set(entities_arr.tolist())):
        rows = entities_arr == code
        s_i = z[rows].T @ u[rows]
        omega += np.outer(s_i, s_i)
    cov = a_inv @ (zx.T @ w_mat @ omega @ w_mat @ zx) @ a_inv

    u_diff, u_level = u[:n_d], u[n_d:]
    if include_level:
        sigma2 = (float(u_diff @ u_diff) / 2.0 + float(u_level @ u_level)) / (n_d + n_l)
    else:
        sigma2 = float(u_diff @ u_diff) / (2.0 * n_d)

    coefficients = {name: float(b) for name, b in zip(param_names, theta)}
    fit = GmmFit(
        spec=spec,
        coef_names=tuple(param_names),
        coefficients=coefficients,
        covariance=cov,
        instrument_count=n_inst,
        parameter_count=k,
        instrument_names=z_names,
        n_obs_diff=n_d,
        n_obs_level=n_l,
        n_entities=n_entities,
        residuals_diff=u_diff,
        residuals_level=u_level,
        diff_entity=np.array([c for c, _ in diff_rows], dtype=object),
        diff_year=diff_years_arr,
        level_entity=np.array([c for c, _ in level_rows], dtype=object),
        level_year=np.array([t for _, t in level_rows]),
        sargan=SarganResult(math.nan, 0, math.nan),
        ar_tests={},
        wald=WaldResult(math.nan, 0, math.nan),
        lagdep_stable=abs(coefficients[spec.lagdep_name]) < 1.0,
        fingerprint=ds.fingerprint(),
        design_diff=x_stack[:n_d],
        z_matrix=z,
        zx=zx,
        z_is_level_row=is_level,
        row_entity_all=entities_arr,
        weight=w_mat,
        a_inv=a_inv,
        sigma2=sigma2,
    )
    sargan = sargan_test(fit)
    ar = {1: ar_test(fit, 1), 2: ar_test(fit, 2)}
    joint = [n for n in param_names if n != "const"]
    wald = wald_joint(fit, joint)
    object.__setattr__(fit, "sargan", sargan)
    object.__setattr__(fit, "ar_tests", ar)
    object.__setattr__(fit, "wald", wald)
    return fit


def _build_instruments(spec, frames, diff_rows, level_rows, inst_vars,
                       dummy_years, include_level):
    """Assemble instrument columns over the stacked rows.

    Missing history becomes a zero cell, which keeps the corresponding
    moment condition trivially valid.
    """
    n_d, n_l = len(diff_rows), len(level_rows)
    cols, names = [], []

    def vget(code, name, t):
        return frames[code][name].get(t, 0.0) if t in frames[code][name] else 0.0

    for v in inst_vars:
        lo, hi = spec.lags_for(v)
        if spec.collapse:
            for lag in range(lo, hi + 1):
                col = np.zeros(n_d + n_l)
                for i, (code, t) in enumerate(diff_rows):
                    col[i] = vget(code, v, t - lag)
                cols.append(col)
                names.append(f"diff:{v}(t-{lag})")
        else:
            periods = sorted({t for _, t in diff_rows})
            for t0 in periods:
                for lag in range(lo, hi + 1):
                    col = np.zeros(n_d + n_l)
                    for i, (code, t) in enumerate(diff_rows):
                        if t == t0:
                            col[i] = vget(code, v, t - lag)
                    cols.append(col)
                    names.append(f"diff:{v}(t-{lag})@{t0}")
    if include_level:
        for v in inst_vars:
            if spec.collapse:
                col = np.zeros(n_d + n_l)
                for i, (code, t) in enumerate(level_rows, start=n_d):
                    a, b = frames[code][v].get(t - 1), frames[code][v].get(t - 2)
                    col[i] = (a - b) if a is not None and b is not None else 0.0
                cols.append(col)
                names.append(f"level:D.{v}(t-1)")
            else:
                periods = sorted({t for _, t in level_rows})
                for t0 in periods:
                    col = np.zeros(n_d + n_l)
                    for i, (code, t) in enumerate(level_rows, start=n_d):
                        if t == t0:
                            a, b = frames[code][v].get(t - 1), frames[code][v].get(t - 2)
                            col[i] = (a - b) if a is not None and b is not None else 0.0
                    cols.append(col)
                    names.append(f"level:D.{v}(t-1)@{t0}")
    for s in dummy_years:
        col = np.zeros(n_d + n_l)
        for i, (code, t) in enumerate(diff_rows):
            col[i] = float(t == s) - float(t - 1 == s)
        for i, (code, t) in enumerate(level_rows, start=n_d):
            col[i] = float(t == s)
        cols.append(col)
        names.append(f"iv:{TIME_DUMMY_PREFIX}{s}")
    if include_level:
        col = np.zeros(n_d + n_l)
        col[n_d:] = 1.0
        cols.append(col)
        names.append("iv:const")
    return cols, names


def _safe_inverse(mat: np.ndarray, names: Sequence[str], what: str) -> np.ndarray:
    """Invert, or raise naming the columns that make `mat` singular."""
    try:
        cond = np.linalg.cond(mat)
    except np.linalg.LinAlgError:
        cond = math.inf
    if not math.isfinite(cond) or cond > 1e12:
        r = np.abs(np.diag(sla.qr(mat, mode="economic", pivoting=True)[1]))
        tol = (r[0] if r.size else 0.0) * len(names) * 1e-12
        rank = int((r > tol).sum())
        perm = sla.qr(mat, mode="economic", pivoting=True)[2]
        bad = sorted(str(names[i]) for i in perm[rank:])
        raise ValueError(f"singular {what}; deficient columns: {bad}")
    return np.linalg.inv(mat)


def sargan_test(fit: GmmFit) -> SarganResult:
    """Over-identification test under the one-step weight.

    S = u'Z (Z'HZ)^-1 Z'u / sigma2 ~ chi-square(instruments - parameters).
    A just-identified model gets the inapplicable marker (df=0, NaN).
    """
    df = fit.instrument_count - fit.parameter_count
    if df < 1:
        return SarganResult(math.nan, 0, math.nan)
    u = np.concatenate([fit.residuals_diff, fit.residuals_level])
    g = fit.z_matrix.T @ u
    stat = float(g @ fit.weight @ g) / fit.sigma2
    return SarganResult(stat, df, float(sps.chi2.sf(stat, df)))


def ar_test(fit: GmmFit, order: int) -> ArResult:
    """Arellano-Bond test for order-m serial correlation in Du.

    Standardized covariance of the differenced residuals with their
    calendar lag-m values, accounting for estimation error in the
    coefficients; two-sided normal p.  NaN marker when no residual pairs
    overlap at distance `order`.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    w = fit.residuals_diff
    n_d = len(w)
    key_to_idx = {(e, int(t)): i
                  for i, (e, t) in enumerate(zip(fit.diff_entity, fit.diff_year))}
    w_lag = np.zeros(n_d)
    matched = 0
    for i, (e, t) in enumerate(zip(fit.diff_entity, fit.diff_year)):
        j = key_to_idx.get((e, int(t) - order))
        if j is not None:
            w_lag[i] = w[j]
            matched += 1
    if matched == 0:
        return ArResult(math.nan, math.nan)

    q = float(w_lag @ w)
    term1 = 0.0
    m_vec = np.zeros(fit.instrument_count)
    u_all = np.concatenate([fit.residuals_diff, fit.residuals_level])
    diff_mask = ~fit.z_is_level_row
    for code in sorted(set(fit.row_entity_all.tolist())):
        rows = fit.row_entity_all == code
        d_rows = rows & diff_mask
        wi = u_all[d_rows]
        wl_i = w_lag[d_rows[:n_d]]
        a_i = float(wl_i @ wi)
        term1 += a_i * a_i
        s_i = fit.z_matrix[rows].T @ u_all[rows]
        m_vec += s_i * a_i

    c = fit.design_diff.T @ w_lag
    term2 = -2.0 * float(c @ fit.a_inv @ (fit.zx.T @ (fit.weight @ m_vec)))
    term3 = float(c @ fit.covariance @ c)
    var = term1 + term2 + term3
    if var <= 0.0:
        var = term1 + term3  # cross-term overshoot; fall back to the outer terms
    if var <= 0.0:
        return ArResult(math.nan, math.nan)
    z_stat = q / math.sqrt(var)
    return ArResult(z_stat, 2.0 * float(sps.norm.sf(abs(z_stat))))


def wald_joint(fit: GmmFit, subset: Sequence[str]) -> WaldResult:
    """Chi-square Wald test that the GMM coefficients in `subset` are zero."""
    subset = list(subset)
    missing = [s for s in subset if s not in fit.coef_names]
    if missing:
        raise KeyError(f"coefficients not in fit: {missing}")
    idx = [fit.coef_names.index(s) for s in subset]
    b = np.array([fit.coefficients[s] for s in subset])
    v = fit.covariance[np.ix_(idx, idx)]
    try:
        stat = float(b @ np.linalg.solve(v, b))
    except np.linalg.LinAlgError:
        raise ValueError(f"singular covariance block for subset {subset}") from None
    if not math.isfinite(stat):
        raise ValueError(f"singular covariance block for subset {subset}")
    return WaldResult(stat, len(subset), float(sps.chi2.sf(stat, len(subset))))
