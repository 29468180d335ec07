"""Covariate screening: masked Pearson, Granger causality, Lasso lag importance.

Lightweight checks run before model training to rank candidate drivers.
The Pearson mask exists to restrict correlation to informative regimes
(e.g. daytime for solar-driven series, where nighttime zeros would induce
trivial correlations).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .data import SeriesFrame
from .errors import ConvergenceError, DegenerateDesignError

logger = logging.getLogger(__name__)

DEFAULT_MAX_LAG = 24
DEFAULT_ALPHA = 0.05
_VAR_EPS = 1e-12


# ---------------------------------------------------------------------------
# masked Pearson correlation

@dataclass(frozen=True)
class MaskedPearson:
    r: float | None
    n_used: int
    degenerate: bool = False


def masked_pearson(x: np.ndarray, y: np.ndarray, mask: np.ndarray) -> MaskedPearson:
    """Sample Pearson correlation over mask-selected indices only.

    Degenerate variance on the mask yields a flagged result instead of NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not (x.shape == y.shape == mask.shape):
        raise ValueError("x, y and mask must share one shape")
    xs, ys = x[mask], y[mask]
    if xs.size < 3:
        raise ValueError(f"need at least 3 masked-in points, got {xs.size}")
    if not (np.isfinite(xs).all() and np.isfinite(ys).all()):
        raise ValueError("non-finite values inside the mask")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom < _VAR_EPS:
        return MaskedPearson(None, xs.size, degenerate=True)
    r = float(np.clip((xc @ yc) / denom, -1.0, 1.0))
    return MaskedPearson(r, xs.size)


def daytime_mask(frame: SeriesFrame, channel: str | None = None, threshold: float = 0.0,
                 hours: tuple[int, int] = (8, 18)) -> np.ndarray:
    """Mask-in where a designated channel exceeds a threshold, else a clock window."""
    if channel is not None:
        return frame.channel(channel) > threshold
    hour = frame.timestamps.astype("datetime64[h]").astype(np.int64) % 24
    lo, hi = hours
    return (hour >= lo) & (hour < hi)


# ---------------------------------------------------------------------------
# Granger causality

@dataclass(frozen=True)
class GrangerResult:
    f_stat: float
    p_value: float
    decision: bool
    max_lag: int
    n_rows: int
    rss_restricted: float
    rss_unrestricted: float


def _lag_design(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Columns [x_{t-1}, ..., x_{t-max_lag}] for rows t = max_lag .. n-1."""
    n = series.size
    return np.column_stack([series[max_lag - k:n - k] for k in range(1, max_lag + 1)])


def _ols_rss(design: np.ndarray, y: np.ndarray, label: str) -> float:
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise DegenerateDesignError(f"rank-deficient {label} design ({rank}/{design.shape[1]})",
                                    float(np.linalg.cond(design)))
    resid = y - design @ coef
    return float(resid @ resid)


def granger_test(x: np.ndarray, y: np.ndarray, max_lag: int = DEFAULT_MAX_LAG,
                 alpha: float = DEFAULT_ALPHA) -> GrangerResult:
    """Does the history of x improve a least-squares AR model of y?

    Restricted model regresses y on its own lags; the unrestricted model adds
    x lags. F-test on the RSS reduction with (max_lag, n - 2*max_lag - 1)
    degrees of freedom, n being the number of regression rows.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise ValueError("x and y must be 1-d series of equal length")
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if np.array_equal(x, y):
        raise ValueError("candidate driver is identical to the target; test is degenerate")
    n_rows = x.size - max_lag
    df2 = n_rows - 2 * max_lag - 1
    if df2 < 1:
        raise ValueError(f"series too short: {n_rows} rows for {2 * max_lag + 1} parameters")

    y_resp = y[max_lag:]
    ones = np.ones((n_rows, 1))
    restricted = np.hstack([ones, _lag_design(y, max_lag)])
    unrestricted = np.hstack([restricted, _lag_design(x, max_lag)])

    rss_r = _ols_rss(restricted, y_resp, "restricted")
    rss_u = _ols_rss(unrestricted, y_resp, "unrestricted")

    if rss_u < _VAR_EPS:
        f_stat, p_value = float("inf"), 0.0
    else:
        f_stat = max(0.0, (rss_r - rss_u) / max_lag) / (rss_u / df2)
        p_value = float(sps.f.sf(f_stat, max_lag, df2))
    return GrangerResult(f_stat, p_value, p_value < alpha, max_lag, n_rows, rss_r, rss_u)


# ---------------------------------------------------------------------------
# Lasso coordinate descent

def soft_threshold(value: float, amount: float) -> float:
    return np.sign(value) * max(abs(value) - amount, 0.0)


def lasso_objective(design: np.ndarray, y: np.ndarray, coef: np.ndarray, lam: float) -> float:
    """(1/2n)||y - Xw||^2 + lam*||w||_1."""
    resid = y - design @ coef
    return float((resid @ resid) / (2.0 * design.shape[0]) + lam * np.abs(coef).sum())


def lasso_coordinate_descent(design: np.ndarray, y: np.ndarray, lam: float,
                             coef_init: np.ndarray | None = None,
                             max_iter: int = 1000, tol: float = 1e-10,
                             on_sweep=None) -> tuple[np.ndarray, int]:
    """Cyclic coordinate descent with soft-thresholding updates.

    Minimizes (1/2n)||y - Xw||^2 + lam*||w||_1 (no intercept; center/scale
    beforehand). Returns (coefficients, sweeps used). Raises ConvergenceError
    after max_iter full sweeps without the max coordinate update dropping
    below tol. on_sweep, when given, is called with (sweep_index, coef copy)
    after every full sweep.
    """
    design = np.asarray(design, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = design.shape
    if lam < 0:
        raise ValueError("lam must be >= 0")
    coef = np.zeros(d) if coef_init is None else coef_init.astype(np.float64).copy()
    col_sq = (design ** 2).sum(axis=0) / n
    resid = y - design @ coef

    max_delta = float("inf")
    for sweep in range(max_iter):
        max_delta = 0.0
        for j in range(d):
            if col_sq[j] < _VAR_EPS:
                continue
            old = coef[j]
            if old != 0.0:
                resid += design[:, j] * old
            rho = (design[:, j] @ resid) / n
            coef[j] = soft_threshold(rho, lam) / col_sq[j]
            if coef[j] != 0.0:
                resid -= design[:, j] * coef[j]
            max_delta = max(max_delta, abs(coef[j] - old))
        if on_sweep is not None:
            on_sweep(sweep, coef.copy())
        if max_delta <= tol:
            return coef, sweep + 1
    raise ConvergenceError(f"coordinate descent did not converge in {max_iter} sweeps", max_delta)


@dataclass(frozen=True)
class LassoImportance:
    names: tuple[str, ...]
    scores: dict[str, float]               # sum of |coef| over lags, per covariate
    ranking: tuple[str, ...]               # descending by score
    chosen_lambda: float
    lambda_grid: tuple[float, ...]
    val_mse: dict[float, float] = field(default_factory=dict)


def lasso_lag_importance(covariates: np.ndarray, names: list[str] | tuple[str, ...],
                         target: np.ndarray, max_lag: int = DEFAULT_MAX_LAG,
                         lambda_grid: np.ndarray | None = None,
                         val_fraction: float = 0.25, max_iter: int = 2000) -> LassoImportance:
    """Rank covariates by summed absolute L1 coefficients over lags 1..max_lag.

    Builds a lag-augmented design of all covariates, standardizes internally
    (intercept handled by centering, hence unpenalized), picks lambda by MSE
    on a chronological validation slice, refits on all rows, and scores each
    covariate by the l1 mass of its lag block.
    """
    covariates = np.atleast_2d(np.asarray(covariates, dtype=np.float64))
    target = np.asarray(target, dtype=np.float64)
    n_cov = covariates.shape[0]
    if len(names) != n_cov:
        raise ValueError(f"{n_cov} covariate rows but {len(names)} names")
    if covariates.shape[1] != target.size:
        raise ValueError("covariates and target must share their length")
    n_rows = target.size - max_lag
    if n_rows < 2 * (n_cov * max_lag):
        logger.warning("lag design has %d rows for %d columns; estimates will be noisy",
                       n_rows, n_cov * max_lag)

    design = np.hstack([_lag_design(covariates[m], max_lag) for m in range(n_cov)])
    y = target[max_lag:]

    n_fit = max(1, int(round(n_rows * (1.0 - val_fraction))))
    fit_X, val_X = design[:n_fit], design[n_fit:]
    fit_y, val_y = y[:n_fit], y[n_fit:]

    mean = fit_X.mean(axis=0)
    std = fit_X.std(axis=0)
    std[std < _VAR_EPS] = 1.0
    y_mean = fit_y.mean()

    fit_Xs = (fit_X - mean) / std
    val_Xs = (val_X - mean) / std
    fit_yc = fit_y - y_mean
    val_yc = val_y - y_mean

    if lambda_grid is None:
        lam_max = float(np.abs(fit_Xs.T @ fit_yc).max() / n_fit)
        lam_max = max(lam_max, 1e-12)
        lambda_grid = np.logspace(np.log10(lam_max), np.log10(lam_max * 1e-3), 20)
    lambda_grid = np.asarray(sorted(lambda_grid, reverse=True), dtype=np.float64)

    val_mse: dict[float, float] = {}
    best_lam, best_mse = float(lambda_grid[0]), float("inf")
    coef = np.zeros(design.shape[1])
    for lam in lambda_grid:
        coef, _ = lasso_coordinate_descent(fit_Xs, fit_yc, float(lam),
                                           coef_init=coef, max_iter=max_iter)
        if len(val_yc):
            mse = float(np.mean((val_yc - val_Xs @ coef) ** 2))
        else:
            mse = float(np.mean((fit_yc - fit_Xs @ coef) ** 2))
        val_mse[float(lam)] = mse
        if mse < best_mse - 1e-15:
            best_mse, best_lam = mse, float(lam)

    all_mean = design.mean(axis=0)
    all_std = design.std(axis=0)
    all_std[all_std < _VAR_EPS] = 1.0
    design_s = (design - all_mean) / all_std
    final_coef, _ = lasso_coordinate_descent(design_s, y - y.mean(), best_lam, max_iter=max_iter)

    scores = {}
    for m, name in enumerate(names):
        block = final_coef[m * max_lag:(m + 1) * max_lag]
        scores[name] = float(np.abs(block).sum())
    ranking = tuple(sorted(names, key=lambda nm: scores[nm], reverse=True))
    return LassoImportance(tuple(names), scores, ranking, best_lam,
                           tuple(float(l) for l in lambda_grid), val_mse)


# ---------------------------------------------------------------------------
# frame-level report

@dataclass
class CovariateScreen:
    name: str
    pearson_r: float | None = None
    pearson_n: int = 0
    pearson_degenerate: bool = False
    granger_f: float | None = None
    granger_p: float | None = None
    granger_decision: bool | None = None
    lasso_score: float | None = None
    notes: list[str] = field(default_factory=list)


@dataclass
class ScreeningReport:
    target: str
    max_lag: int
    alpha: float
    mask_description: str
    records: list[CovariateScreen]
    rankings: dict[str, list[str]]

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "max_lag": self.max_lag,
            "alpha": self.alpha,
            "mask": self.mask_description,
            "covariates": [vars(r) for r in self.records],
            "rankings": self.rankings,
        }

    def render_table(self) -> str:
        header = f"{'covariate':<20} {'pearson_r':>10} {'granger_F':>10} {'granger_p':>10} {'lasso':>10}"
        lines = [f"screening vs target {self.target!r} (max_lag={self.max_lag}, alpha={self.alpha}, "
                 f"mask={self.mask_description})", header, "-" * len(header)]
        for r in self.records:
            def fmt(v, spec="10.4f"):
                return format(v, spec) if isinstance(v, float) else f"{'-':>10}"
            lines.append(f"{r.name:<20} {fmt(r.pearson_r)} {fmt(r.granger_f)} "
                         f"{fmt(r.granger_p)} {fmt(r.lasso_score)}")
        for method, names in self.rankings.items():
            lines.append(f"ranking[{method}]: {', '.join(names) if names else '(none)'}")
        return "\n".join(lines) + "\n"


def screen_frame(frame: SeriesFrame, target: str | None = None,
                 max_lag: int = DEFAULT_MAX_LAG, alpha: float = DEFAULT_ALPHA,
                 mask: np.ndarray | None = None,
                 mask_description: str = "all rows") -> ScreeningReport:
    """Run all screening methods for every covariate channel against one target.

    Individual test failures are recorded in the per-covariate notes and do
    not abort the remaining tests.
    """
    schema = frame.schema
    target = target or schema.targets[0]
    cov_names: list[str] = []
    for name in (*schema.past_covariates, *schema.future_covariates):
        if name not in cov_names:
            cov_names.append(name)
    if mask is None:
        mask = np.ones(frame.n_rows, dtype=bool)

    y = frame.channel(target)
    records = [CovariateScreen(name) for name in cov_names]
    for rec in records:
        x = frame.channel(rec.name)
        try:
            pr = masked_pearson(x, y, mask & np.isfinite(x) & np.isfinite(y))
            rec.pearson_r, rec.pearson_n, rec.pearson_degenerate = pr.r, pr.n_used, pr.degenerate
        except (ValueError, DegenerateDesignError) as exc:
            rec.notes.append(f"pearson skipped: {exc}")
        try:
            ok = np.isfinite(x) & np.isfinite(y)
            if not ok.all():
                raise ValueError("missing values present; impute before the Granger test")
            gr = granger_test(x, y, max_lag=max_lag, alpha=alpha)
            rec.granger_f, rec.granger_p, rec.granger_decision = gr.f_stat, gr.p_value, gr.decision
        except (ValueError, DegenerateDesignError) as exc:
            rec.notes.append(f"granger skipped: {exc}")

    rankings: dict[str, list[str]] = {}
    scored = [r for r in records if r.pearson_r is not None]
    rankings["pearson"] = [r.name for r in sorted(scored, key=lambda r: abs(r.pearson_r), reverse=True)]
    tested = [r for r in records if r.granger_p is not None]
    rankings["granger"] = [r.name for r in sorted(tested, key=lambda r: r.granger_p)]

    if cov_names:
        try:
            cov_matrix = np.stack([frame.channel(n) for n in cov_names])
            finite = np.isfinite(cov_matrix).all(axis=0) & np.isfinite(y)
            if not finite.all():
                raise ValueError("missing values present; impute before lasso screening")
            lasso = lasso_lag_importance(cov_matrix, cov_names, y, max_lag=max_lag)
            for rec in records:
                rec.lasso_score = lasso.scores[rec.name]
            rankings["lasso"] = list(lasso.ranking)
        except (ValueError, ConvergenceError) as exc:
            logger.warning("lasso screening skipped: %s", exc)
            for rec in records:
                rec.notes.append(f"lasso skipped: {exc}")
            rankings["lasso"] = []
    else:
        rankings["lasso"] = []

    return ScreeningReport(target, max_lag, alpha, mask_description, records, rankings)
