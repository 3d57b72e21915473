"""Hand-crafted landscape features.

Five cheap feature groups (fitness-distance correlation, dispersion,
information content, nearest-better clustering, objective distribution) form
the in-run baseline fed to meta-policies.  Three additional groups
(meta-model fits, level-set classification, principal components) consume no
extra function evaluations but are heavier; they are only used offline, in
the full-suite extractor for timing and correlation studies.

Features that are undefined for a sample (zero variance, duplicate points)
are reported as ``None`` rather than NaN; consumers impute or skip
explicitly.  All functions are deterministic in (X, y): the information
content tour is the nearest-neighbor tour from the best sample, not a random
walk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .analyzer import Observation

Feature = Optional[float]

DEFAULT_QUANTILES = (0.02, 0.05, 0.1, 0.25)

# {0} plus a logarithmic grid, applied to min-max normalized objective slopes.
IC_EPS_GRID = (0.0, *np.logspace(-5, 5, 15))

DEFAULT_BOUNDS = (-5.0, 5.0)


def _pairwise_distances(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def _pearson(a: np.ndarray, b: np.ndarray) -> Feature:
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0:
        return None
    return float(a @ b) / denom


def _box(lb, ub, d: int) -> tuple[np.ndarray, np.ndarray]:
    lb = DEFAULT_BOUNDS[0] if lb is None else lb
    ub = DEFAULT_BOUNDS[1] if ub is None else ub
    return (
        np.broadcast_to(np.asarray(lb, dtype=float), (d,)),
        np.broadcast_to(np.asarray(ub, dtype=float), (d,)),
    )


def fdc_features(X, y, lb=None, ub=None) -> dict[str, Feature]:
    """Fitness-distance group: correlation of objectives with distance to the
    best sample, pairwise-distance and objective-gap statistics, and the
    best-to-centroid distance normalized by the box diagonal."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m = X.shape[0]
    lb, ub = _box(lb, ub, X.shape[1])
    diagonal = float(np.linalg.norm(ub - lb))
    best = int(np.argmin(y))
    dist_to_best = np.linalg.norm(X - X[best], axis=1)
    iu = np.triu_indices(m, k=1)
    pair_dist = _pairwise_distances(X)[iu]
    obj_diff = np.abs(y[:, None] - y[None, :])[iu]
    centroid = X.mean(axis=0)
    return {
        "fdc_correlation": _pearson(y, dist_to_best),
        "fdc_dist_mean": float(pair_dist.mean()),
        "fdc_dist_std": float(pair_dist.std()),
        "fdc_obj_diff_mean": float(obj_diff.mean()),
        "fdc_obj_diff_std": float(obj_diff.std()),
        "fdc_best_to_centroid": float(np.linalg.norm(X[best] - centroid)) / diagonal,
    }


def dispersion_features(
    X, y, quantiles: Sequence[float] = DEFAULT_QUANTILES
) -> dict[str, Feature]:
    """Ratio and difference of the mean pairwise distance among the best
    ceil(q*m) samples versus the whole sample, per quantile."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m = X.shape[0]
    D = _pairwise_distances(X)
    iu = np.triu_indices(m, k=1)
    full_mean = float(D[iu].mean())
    order = np.argsort(y, kind="stable")
    out: dict[str, Feature] = {}
    for q in quantiles:
        k = math.ceil(q * m)
        ratio_name = f"dispersion_ratio_q{q:g}"
        diff_name = f"dispersion_diff_q{q:g}"
        if k < 2:
            out[ratio_name] = None
            out[diff_name] = None
            continue
        sub = order[:k]
        sub_mean = float(D[np.ix_(sub, sub)][np.triu_indices(k, k=1)].mean())
        out[ratio_name] = sub_mean / full_mean if full_mean > 0 else None
        out[diff_name] = sub_mean - full_mean
    return out


def nearest_neighbor_tour(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Deterministic tour: start at the best sample (ties broken by index),
    repeatedly move to the nearest unvisited sample (ties by index)."""
    m = X.shape[0]
    D = _pairwise_distances(X)
    tour = np.empty(m, dtype=int)
    tour[0] = int(np.argmin(y))
    visited = np.zeros(m, dtype=bool)
    visited[tour[0]] = True
    for step in range(1, m):
        row = D[tour[step - 1]].copy()
        row[visited] = np.inf
        tour[step] = int(np.argmin(row))
        visited[tour[step]] = True
    return tour


def _ic_entropy(symbols: np.ndarray) -> float:
    """Entropy (base 6) of ordered pairs of unequal consecutive symbols."""
    a, b = symbols[:-1], symbols[1:]
    total = a.shape[0]
    if total == 0:
        return 0.0
    h = 0.0
    for p in (-1, 0, 1):
        for q in (-1, 0, 1):
            if p == q:
                continue
            prob = float(np.sum((a == p) & (b == q))) / total
            if prob > 0:
                h -= prob * math.log(prob, 6)
    return h


def _ic_partial(symbols: np.ndarray) -> float:
    """Length of the zero-stripped, repeat-collapsed symbol sequence over n."""
    nz = symbols[symbols != 0]
    if nz.size == 0:
        return 0.0
    changes = 1 + int(np.sum(nz[1:] != nz[:-1]))
    return changes / symbols.shape[0]


def information_content(X, y) -> dict[str, Feature]:
    """Smoothness/ruggedness/neutrality statistics of the fitness sequence
    along the nearest-neighbor tour, under an epsilon grid."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    names = ("ic_h_max", "ic_eps_settling", "ic_m0", "ic_eps_half", "ic_neutrality")
    tour = nearest_neighbor_tour(X, y)
    steps = np.linalg.norm(np.diff(X[tour], axis=0), axis=1)
    if np.any(steps == 0):
        return {n: None for n in names}
    y_min, y_max = float(y.min()), float(y.max())
    yn = (y - y_min) / (y_max - y_min) if y_max > y_min else np.zeros_like(y)
    slopes = np.diff(yn[tour]) / steps
    h_values = []
    m_values = []
    for eps in IC_EPS_GRID:
        symbols = np.where(slopes > eps, 1, np.where(slopes < -eps, -1, 0))
        h_values.append(_ic_entropy(symbols))
        m_values.append(_ic_partial(symbols))
    symbols0 = np.where(slopes > 0, 1, np.where(slopes < 0, -1, 0))
    m0 = m_values[0]
    eps_settling: Feature = None
    for eps, h in zip(IC_EPS_GRID[1:], h_values[1:]):
        if h < 0.05:
            eps_settling = math.log10(eps)
            break
    eps_half: Feature = None
    for eps, mv in zip(reversed(IC_EPS_GRID[1:]), reversed(m_values[1:])):
        if mv >= 0.5 * m0:
            eps_half = math.log10(eps)
            break
    return {
        "ic_h_max": max(h_values),
        "ic_eps_settling": eps_settling,
        "ic_m0": m0,
        "ic_eps_half": eps_half,
        "ic_neutrality": float(np.mean(symbols0 == 0)),
    }


def nearest_better_distances(X, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-candidate nearest-neighbor and nearest-better-neighbor distances.

    "Better" means strictly smaller objective, ties broken by index order.
    The entry for the best candidate is NaN in the nearest-better vector.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m = X.shape[0]
    D = _pairwise_distances(X)
    np.fill_diagonal(D, np.inf)
    nn = D.min(axis=1)
    idx = np.arange(m)
    better = (y[None, :] < y[:, None]) | ((y[None, :] == y[:, None]) & (idx[None, :] < idx[:, None]))
    masked = np.where(better, D, np.inf)
    nb = masked.min(axis=1)
    nb[np.isinf(nb)] = np.nan
    return nn, nb


def nbc_features(X, y) -> dict[str, Feature]:
    """Nearest-better clustering: nb/nn ratio statistics and the correlation
    between nearest-neighbor distance and objective rank."""
    y = np.asarray(y, dtype=float)
    nn, nb = nearest_better_distances(X, y)
    has_better = ~np.isnan(nb)
    out: dict[str, Feature] = {}
    nn_mean = float(nn.mean())
    if nn_mean == 0.0 or not np.any(has_better):
        out["nbc_ratio_mean"] = None
        out["nbc_ratio_std"] = None
    else:
        out["nbc_ratio_mean"] = float(nb[has_better].mean()) / nn_mean
        with_nn = has_better & (nn > 0)
        out["nbc_ratio_std"] = (
            float((nb[with_nn] / nn[with_nn]).std()) if np.any(with_nn) else None
        )
    ranks = np.argsort(np.argsort(y, kind="stable"), kind="stable").astype(float)
    out["nbc_nn_rank_correlation"] = _pearson(nn, ranks)
    return out


def _histogram_peaks(y: np.ndarray, bins: int = 10) -> int:
    """Local maxima of a fixed-bandwidth histogram of y (plateaus collapse)."""
    lo, hi = float(y.min()), float(y.max())
    if hi == lo:
        return 1
    counts, _ = np.histogram(y, bins=bins, range=(lo, hi))
    padded = np.concatenate([[0], counts, [0]])
    peaks = 0
    i = 1
    while i < len(padded) - 1:
        j = i
        while j + 1 < len(padded) - 1 and padded[j + 1] == padded[i]:
            j += 1
        if padded[i] > 0 and padded[i - 1] < padded[i] and padded[j + 1] < padded[i]:
            peaks += 1
        i = j + 1
    return peaks


def distribution_features(y) -> dict[str, Feature]:
    """Sample skewness, excess kurtosis, and histogram peak count."""
    y = np.asarray(y, dtype=float)
    centered = y - y.mean()
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        skew: Feature = None
        kurt: Feature = None
    else:
        skew = float(np.mean(centered**3)) / m2**1.5
        kurt = float(np.mean(centered**4)) / m2**2 - 3.0
    return {
        "distr_skewness": skew,
        "distr_kurtosis": kurt,
        "distr_peak_count": float(_histogram_peaks(y)),
    }


def ela_features(
    X, y, lb=None, ub=None, quantiles: Sequence[float] = DEFAULT_QUANTILES
) -> dict[str, Feature]:
    """The in-run baseline: concatenation of the five cheap groups."""
    out: dict[str, Feature] = {}
    out.update(fdc_features(X, y, lb, ub))
    out.update(dispersion_features(X, y, quantiles))
    out.update(information_content(X, y))
    out.update(nbc_features(X, y))
    out.update(distribution_features(y))
    return out


ELA_FEATURE_NAMES: tuple[str, ...] = tuple(
    ela_features(np.eye(3) * np.arange(3)[:, None] - 1.0, np.arange(3.0), -5.0, 5.0)
)


def impute_missing(features: dict[str, Feature], names: Sequence[str]) -> np.ndarray:
    """Fixed-width vector with missing markers imputed as 0."""
    return np.array(
        [0.0 if features[n] is None else float(features[n]) for n in names]
    )


# --- offline-only groups (no extra function evaluations, but heavier) -------


def _design_with_interactions(X: np.ndarray) -> np.ndarray:
    m, d = X.shape
    columns = [np.ones((m, 1)), X]
    for i in range(d):
        columns.append(X[:, i : i + 1] * X[:, i:])
    return np.concatenate(columns, axis=1)


def _r_squared(y: np.ndarray, residuals: np.ndarray) -> Feature:
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return None
    return 1.0 - float(np.sum(residuals**2)) / ss_tot


def meta_model_features(X, y) -> dict[str, Feature]:
    """Goodness-of-fit statistics of linear and quadratic surrogate models."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m, d = X.shape
    lin_design = np.concatenate([np.ones((m, 1)), X], axis=1)
    lin_coef, *_ = np.linalg.lstsq(lin_design, y, rcond=None)
    lin_r2 = _r_squared(y, y - lin_design @ lin_coef)
    slopes = np.abs(lin_coef[1:])
    slope_ratio = (
        float(slopes.min() / slopes.max()) if slopes.size and slopes.max() > 0 else None
    )
    quad_design = _design_with_interactions(X)
    quad_coef, *_ = np.linalg.lstsq(quad_design, y, rcond=None)
    quad_r2 = _r_squared(y, y - quad_design @ quad_coef)
    curvature = np.abs(quad_coef[1 + d :])
    curvature = curvature[curvature > 0]
    cond = float(curvature.max() / curvature.min()) if curvature.size else None

    def adjusted(r2: Feature, p: int) -> Feature:
        if r2 is None or m - p - 1 <= 0:
            return None
        return 1.0 - (1.0 - r2) * (m - 1) / (m - p - 1)

    return {
        "mm_lin_r2": lin_r2,
        "mm_lin_r2_adj": adjusted(lin_r2, d),
        "mm_lin_slope_ratio": slope_ratio,
        "mm_quad_r2": quad_r2,
        "mm_quad_r2_adj": adjusted(quad_r2, quad_design.shape[1] - 1),
        "mm_quad_cond": cond,
    }


def _gaussian_discriminant(
    X_tr: np.ndarray, labels: np.ndarray, X_te: np.ndarray, pooled: bool
) -> Optional[np.ndarray]:
    d = X_tr.shape[1]
    classes = (False, True)
    if not (np.any(labels) and np.any(~labels)):
        return None
    means, covs, priors = {}, {}, {}
    pooled_cov = np.zeros((d, d))
    for c in classes:
        G = X_tr[labels == c]
        means[c] = G.mean(axis=0)
        cov = np.cov(G.T, bias=True).reshape(d, d) if G.shape[0] > 1 else np.zeros((d, d))
        covs[c] = cov
        priors[c] = G.shape[0] / X_tr.shape[0]
        pooled_cov += cov * G.shape[0]
    pooled_cov /= X_tr.shape[0]
    scores = np.empty((X_te.shape[0], 2))
    for ci, c in enumerate(classes):
        cov = pooled_cov if pooled else covs[c]
        cov = cov + np.eye(d) * (1e-8 + 1e-6 * np.trace(cov) / d)
        diff = X_te - means[c]
        solved = np.linalg.solve(cov, diff.T).T
        maha = np.sum(diff * solved, axis=1)
        sign, logdet = np.linalg.slogdet(cov)
        scores[:, ci] = -0.5 * maha - 0.5 * logdet + math.log(priors[c])
    return scores[:, 1] > scores[:, 0]


def level_set_features(
    X, y, quantiles: Sequence[float] = (0.1, 0.25, 0.5), folds: int = 5
) -> dict[str, Feature]:
    """Cross-validated misclassification rates of linear and quadratic
    discriminants separating below-quantile samples from the rest."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    m = X.shape[0]
    out: dict[str, Feature] = {}
    fold_id = np.arange(m) % folds
    for q in quantiles:
        labels = y <= np.quantile(y, q)
        rates = {"lda": [], "qda": []}
        for f in range(folds):
            te = fold_id == f
            if not np.any(te) or np.all(te):
                continue
            for kind, pooled in (("lda", True), ("qda", False)):
                pred = _gaussian_discriminant(X[~te], labels[~te], X[te], pooled)
                if pred is not None:
                    rates[kind].append(float(np.mean(pred != labels[te])))
        for kind in ("lda", "qda"):
            name = f"ls_mmce_{kind}_q{q:g}"
            out[name] = float(np.mean(rates[kind])) if rates[kind] else None
        both = out[f"ls_mmce_lda_q{q:g}"], out[f"ls_mmce_qda_q{q:g}"]
        out[f"ls_ratio_q{q:g}"] = (
            both[0] / both[1] if None not in both and both[1] > 0 else None
        )
    return out


def principal_component_features(X, y) -> dict[str, Feature]:
    """Explained-variance summaries of the sample and the sample-plus-objective."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)

    def stats(M: np.ndarray) -> tuple[Feature, Feature]:
        cov = np.cov(M.T, bias=True)
        eig = np.sort(np.linalg.eigvalsh(np.atleast_2d(cov)))[::-1]
        total = float(eig.sum())
        if total <= 0:
            return None, None
        ratio = np.cumsum(eig) / total
        n90 = int(np.searchsorted(ratio, 0.9) + 1)
        return float(eig[0] / total), n90 / eig.shape[0]

    first_x, frac_x = stats(X)
    first_xy, frac_xy = stats(np.column_stack([X, y]))
    return {
        "pca_expl_first_x": first_x,
        "pca_frac90_x": frac_x,
        "pca_expl_first_xy": first_xy,
        "pca_frac90_xy": frac_xy,
    }


def full_suite_features(X, y, lb=None, ub=None) -> dict[str, Feature]:
    """All groups, including the offline-only ones; used for the wall-time
    benchmark and correlation studies."""
    out = ela_features(X, y, lb, ub)
    out.update(meta_model_features(X, y))
    out.update(level_set_features(X, y))
    out.update(principal_component_features(X, y))
    return out


FULL_SUITE_FEATURE_NAMES: tuple[str, ...] = tuple(
    full_suite_features(
        np.arange(30.0).reshape(10, 3) % 7 - 3.0, np.arange(10.0) % 4, -5.0, 5.0
    )
)


# --- hand-crafted optimization-state features --------------------------------


@dataclass(frozen=True)
class RunContext:
    """What an optimizer run knows at step t, for state-style extractors."""

    obs: Observation
    t: int
    horizon: int
    best_so_far: float
    prev_best: float
    worst_so_far: float
    steps_since_improvement: int


HANDCRAFTED_NAMES: tuple[str, ...] = (
    "budget_fraction",
    "pop_best_vs_history",
    "pop_spread",
    "mean_dist_to_best",
    "mean_pairwise_dist",
    "stagnation",
    "last_improvement",
    "centroid_to_best",
)


def handcrafted_state(ctx: RunContext) -> np.ndarray:
    """Eight bounded optimization-state features, each in [0, 1]."""
    obs = ctx.obs
    diagonal = float(np.linalg.norm(obs.ub - obs.lb))
    y = obs.y
    y_range = float(y.max() - y.min())
    hist_range = ctx.worst_so_far - ctx.best_so_far
    best_idx = int(np.argmin(y))
    dist_to_best = np.linalg.norm(obs.X - obs.X[best_idx], axis=1)
    m = obs.size
    iu = np.triu_indices(m, k=1)
    pair_mean = float(_pairwise_distances(obs.X)[iu].mean())
    improvement = ctx.prev_best - ctx.best_so_far
    rel_improvement = (
        max(0.0, improvement) / max(abs(ctx.prev_best), 1e-12)
        if math.isfinite(ctx.prev_best)
        else 0.0
    )
    centroid = obs.X.mean(axis=0)
    horizon = max(ctx.horizon, 1)
    return np.array(
        [
            ctx.t / horizon,
            (float(y.min()) - ctx.best_so_far) / hist_range if hist_range > 0 else 0.0,
            float(((y - y.min()) / y_range).std()) if y_range > 0 else 0.0,
            float(dist_to_best.mean()) / diagonal,
            pair_mean / diagonal,
            ctx.steps_since_improvement / horizon,
            min(rel_improvement, 1.0),
            float(np.linalg.norm(centroid - obs.X[best_idx])) / diagonal,
        ]
    )


def features_to_csv(rows: Sequence[dict[str, Feature]], names: Sequence[str]) -> str:
    """CSV text with a header naming each feature; missing values as NA."""
    lines = [",".join(names)]
    for row in rows:
        lines.append(
            ",".join(
                "NA" if row[n] is None else repr(float(row[n])) for n in names
            )
        )
    return "\n".join(lines) + "\n"
