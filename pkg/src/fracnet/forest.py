"""Random-forest regression built from scratch on CART variance-reduction
trees: bootstrap aggregation, out-of-bag scoring, permutation importance,
and cross-validated grid search.

Trees are fit by the numba kernels in _tree_kernels; everything here is
bookkeeping, seeding, and metrics. All randomness flows from explicit seeds
through numpy SeedSequence spawning, so fits, importances, and searches are
reproducible bit-for-bit.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ._tree_kernels import LEAF, NO_DEPTH_LIMIT, build_tree, predict_tree, \
    predict_tree_permuted

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 100
    max_depth: int | None = None
    max_features: str = "all"        # all | sqrt | log2
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    bootstrap: bool = True           # always on; OOB scoring needs it
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.max_features not in ("all", "sqrt", "log2"):
            raise ValueError("max_features must be all, sqrt, or log2")
        if not self.bootstrap:
            raise ValueError("bootstrap resampling is always on")

    def resolved_max_features(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            return min(n_features, math.ceil(math.sqrt(n_features)))
        if self.max_features == "log2":
            return min(n_features, max(1, math.ceil(math.log2(n_features))))
        return n_features

    def resolved_max_depth(self) -> int:
        return NO_DEPTH_LIMIT if self.max_depth is None else self.max_depth


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, x: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if rows is None:
            rows = np.arange(len(x), dtype=np.int64)
        out = np.empty(len(rows))
        predict_tree(self.feature, self.threshold, self.left, self.right,
                     self.value, x, rows.astype(np.int64), out)
        return out


@dataclass
class ForestModel:
    params: ForestParams
    feature_names: list[str]
    trees: list[Tree]
    inbag_counts: np.ndarray          # (n_trees, n_rows) bootstrap multiplicities
    tree_seeds: np.ndarray            # per-tree (bootstrap, feature) seed pairs
    n_rows: int

    def oob_mask(self, t: int) -> np.ndarray:
        return self.inbag_counts[t] == 0


def fit_tree(x: np.ndarray, y: np.ndarray, params: ForestParams,
             feature_seed: int, sample_idx: np.ndarray | None = None) -> Tree:
    """One CART tree on x[sample_idx] (all rows when sample_idx is None).

    Greedy SSE-reduction splits over a seeded candidate-feature subset;
    deterministic for fixed inputs and seed.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if len(x) < 1:
        raise ValueError("need at least one row")
    if sample_idx is None:
        sample_idx = np.arange(len(x), dtype=np.int64)
    arrays = build_tree(
        x, y, sample_idx.astype(np.int64), params.resolved_max_depth(),
        params.resolved_max_features(x.shape[1]), params.min_samples_split,
        params.min_samples_leaf, feature_seed)
    return Tree(*arrays)


def _tree_seed_pairs(seed: int, n_trees: int) -> np.ndarray:
    """Per-tree (bootstrap seed, feature-subset seed) from one root seed."""
    ss = np.random.SeedSequence(seed)
    states = [child.generate_state(2) for child in ss.spawn(n_trees)]
    return np.array(states, dtype=np.uint64)


def fit_forest(x: np.ndarray, y: np.ndarray, feature_names: list[str],
               params: ForestParams, n_jobs: int = 1) -> ForestModel:
    """Bootstrap-aggregated forest with recorded in-bag multisets."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = len(x)
    if n == 0:
        raise ValueError("empty training table")
    seeds = _tree_seed_pairs(params.seed, params.n_estimators)
    inbag = np.zeros((params.n_estimators, n), dtype=np.int32)
    boots = []
    for t in range(params.n_estimators):
        rng = np.random.default_rng(seeds[t, 0])
        idx = rng.integers(0, n, size=n)
        boots.append(idx.astype(np.int64))
        inbag[t] = np.bincount(idx, minlength=n)

    def _fit(t: int) -> Tree:
        # feature-subset seed must fit numba's 32-bit seed argument
        return fit_tree(x, y, params, int(seeds[t, 1] % (2 ** 32)), boots[t])

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(_fit, range(params.n_estimators)))
    else:
        trees = [_fit(t) for t in range(params.n_estimators)]
    model = ForestModel(params=params, feature_names=list(feature_names),
                        trees=trees, inbag_counts=inbag, tree_seeds=seeds,
                        n_rows=n)
    if np.any(inbag.min(axis=0) > 0):
        warnings.warn("some rows are in-bag for every tree; "
                      "they are excluded from OOB aggregation")
    return model


def predict(model: ForestModel, x: np.ndarray) -> np.ndarray:
    """Mean of the individual tree predictions."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != len(model.feature_names):
        raise ValueError(
            f"schema mismatch: expected {len(model.feature_names)} feature "
            f"columns, got shape {x.shape}")
    acc = np.zeros(len(x))
    for tree in model.trees:
        acc += tree.predict(x)
    return acc / len(model.trees)


def r2_score(y: np.ndarray, yhat: np.ndarray) -> float:
    """Coefficient of determination, 1 - SSE / SST."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if len(y) < 2:
        raise ValueError("need at least two rows")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise ValueError("undefined R^2: zero target variance")
    sse = float(np.sum((y - yhat) ** 2))
    return 1.0 - sse / sst


def _oob_prediction(model: ForestModel, x: np.ndarray,
                    permuted: tuple[int, np.ndarray] | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
    """OOB-aggregated predictions and per-row coverage counts.

    When `permuted` is (column, values) the column is virtually replaced by
    values (a row-aligned permutation of the original column).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = len(x)
    acc = np.zeros(n)
    count = np.zeros(n, dtype=np.int64)
    for t, tree in enumerate(model.trees):
        rows = np.nonzero(model.oob_mask(t))[0].astype(np.int64)
        if len(rows) == 0:
            continue
        out = np.empty(len(rows))
        if permuted is None:
            predict_tree(tree.feature, tree.threshold, tree.left, tree.right,
                         tree.value, x, rows, out)
        else:
            col, values = permuted
            predict_tree_permuted(tree.feature, tree.threshold, tree.left,
                                  tree.right, tree.value, x, rows, col,
                                  values[rows], out)
        acc[rows] += out
        count[rows] += 1
    return acc, count


def oob_score(model: ForestModel, x: np.ndarray, y: np.ndarray) -> float:
    """R^2 of OOB-aggregated predictions against the targets."""
    acc, count = _oob_prediction(model, x)
    covered = count > 0
    if covered.sum() < 2:
        raise ValueError("too few OOB-covered rows for a score")
    yhat = acc[covered] / count[covered]
    return r2_score(np.asarray(y)[covered], yhat)


@dataclass
class ImportanceReport:
    feature_names: list[str]
    importance: np.ndarray        # mean OOB-score drop per feature
    normalized: np.ndarray        # share of the positive total
    baseline_oob: float
    repeats: int

    def ranking(self) -> list[tuple[str, float]]:
        order = np.argsort(-self.importance, kind="stable")
        return [(self.feature_names[i], float(self.importance[i]))
                for i in order]


def permutation_importance(model: ForestModel, x: np.ndarray, y: np.ndarray,
                           repeats: int = 5, seed: int = 0,
                           n_jobs: int = 1) -> ImportanceReport:
    """Mean drop of the OOB score when one feature column is shuffled.

    Permutations are drawn sequentially from the seed before any parallel
    work, so the result is independent of n_jobs.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    baseline = oob_score(model, x, y)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    p = x.shape[1]
    jobs = [(col, x[rng.permutation(len(x)), col])
            for col in range(p) for _ in range(repeats)]

    def _drop(job: tuple[int, np.ndarray]) -> float:
        col, values = job
        acc, count = _oob_prediction(model, x, permuted=(col, values))
        covered = count > 0
        yhat = acc[covered] / count[covered]
        return baseline - r2_score(y[covered], yhat)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            drops = list(pool.map(_drop, jobs))
    else:
        drops = [_drop(job) for job in jobs]
    importance = np.array(drops).reshape(p, repeats).mean(axis=1)
    positive = np.clip(importance, 0.0, None)
    total = positive.sum()
    normalized = positive / total if total > 0 else positive
    return ImportanceReport(feature_names=list(model.feature_names),
                            importance=importance, normalized=normalized,
                            baseline_oob=baseline, repeats=repeats)


@dataclass
class GridSearchResult:
    best_params: ForestParams
    best_score: float
    cv_table: list[dict]


def grid_search(x: np.ndarray, y: np.ndarray, feature_names: list[str],
                grid: list[ForestParams], folds: int = 3, seed: int = 0,
                groups: np.ndarray | None = None,
                n_jobs: int = 1) -> GridSearchResult:
    """Exhaustive k-fold cross-validated search over a parameter list.

    Folds are made over rows, or over whole groups when `groups` is given
    (group-aware splitting by network id). The winner maximizes the mean
    validation R^2; ties break toward fewer trees, then shallower depth.
    """
    if not grid:
        raise ValueError("empty grid")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if groups is None:
        order = rng.permutation(len(x))
        fold_of_row = np.empty(len(x), dtype=np.int64)
        for f in range(folds):
            fold_of_row[order[f::folds]] = f
    else:
        uniq = np.unique(groups)
        order = rng.permutation(len(uniq))
        fold_of_group = {uniq[order[i]]: i % folds for i in range(len(uniq))}
        fold_of_row = np.array([fold_of_group[g] for g in groups])
    cv_table: list[dict] = []
    best: tuple | None = None
    for gi, params in enumerate(grid):
        scores = []
        for f in range(folds):
            val = fold_of_row == f
            if val.sum() < 2 or (~val).sum() < 1:
                warnings.warn(f"fold {f} too small; skipped")
                continue
            yv = y[val]
            if np.all(yv == yv[0]):
                warnings.warn(f"fold {f} has zero target variance; skipped")
                continue
            sub = replace(params, seed=params.seed + f)
            model = fit_forest(x[~val], y[~val], feature_names, sub,
                               n_jobs=n_jobs)
            scores.append(r2_score(yv, predict(model, x[val])))
        mean_score = float(np.mean(scores)) if scores else float("-inf")
        cv_table.append({"params": params, "fold_scores": scores,
                         "mean_score": mean_score})
        depth_rank = params.max_depth if params.max_depth is not None \
            else NO_DEPTH_LIMIT
        key = (-mean_score, params.n_estimators, depth_rank, gi)
        if best is None or key < best[0]:
            best = (key, params, mean_score)
    assert best is not None
    return GridSearchResult(best_params=best[1], best_score=best[2],
                            cv_table=cv_table)


def expand_grid(n_estimators: list[int], max_depth: list[int | None],
                max_features: list[str], min_samples_leaf: list[int],
                min_samples_split: list[int], seed: int = 0
                ) -> list[ForestParams]:
    """Cartesian product of hyperparameter values, in a stable order."""
    out = []
    for ne in n_estimators:
        for md in max_depth:
            for mf in max_features:
                for ml in min_samples_leaf:
                    for ms in min_samples_split:
                        out.append(ForestParams(
                            n_estimators=ne, max_depth=md, max_features=mf,
                            min_samples_leaf=ml,
                            min_samples_split=max(2, ms), seed=seed))
    return out


@dataclass
class CorrelationMatrix:
    feature_names: list[str]
    matrix: np.ndarray
    constant_columns: list[str]


def correlation_matrix(columns: dict[str, np.ndarray]) -> CorrelationMatrix:
    """Pearson correlation across feature columns.

    Constant columns get zero correlations (flagged) and a unit diagonal.
    """
    names = list(columns)
    if not names:
        raise ValueError("no columns")
    n = len(next(iter(columns.values())))
    if n < 3:
        raise ValueError("need at least 3 rows")
    data = np.vstack([np.asarray(columns[k], dtype=np.float64) for k in names])
    std = data.std(axis=1)
    constant = [names[i] for i in range(len(names)) if std[i] == 0.0]
    with np.errstate(invalid="ignore", divide="ignore"):
        mat = np.corrcoef(data)
    mat = np.where(np.isfinite(mat), mat, 0.0)
    for i in range(len(names)):
        if std[i] == 0.0:
            mat[i, :] = 0.0
            mat[:, i] = 0.0
            mat[i, i] = 1.0
    np.clip(mat, -1.0, 1.0, out=mat)
    return CorrelationMatrix(feature_names=names, matrix=mat,
                             constant_columns=constant)


# ---------------------------------------------------------------------------
# persistence

def model_to_json(model: ForestModel) -> str:
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "params": {
            "n_estimators": model.params.n_estimators,
            "max_depth": model.params.max_depth,
            "max_features": model.params.max_features,
            "min_samples_leaf": model.params.min_samples_leaf,
            "min_samples_split": model.params.min_samples_split,
            "bootstrap": model.params.bootstrap,
            "seed": model.params.seed,
        },
        "feature_names": model.feature_names,
        "n_rows": model.n_rows,
        "tree_seeds": [[int(a), int(b)] for a, b in model.tree_seeds],
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "n_samples": t.n_samples.tolist(),
            }
            for t in model.trees
        ],
    }
    return json.dumps(doc)


def model_from_json(text: str) -> ForestModel:
    doc = json.loads(text)
    if doc["schema_version"] != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema {doc['schema_version']}")
    params = ForestParams(**doc["params"])
    trees = [
        Tree(feature=np.array(t["feature"], dtype=np.int32),
             threshold=np.array(t["threshold"]),
             left=np.array(t["left"], dtype=np.int32),
             right=np.array(t["right"], dtype=np.int32),
             value=np.array(t["value"]),
             n_samples=np.array(t["n_samples"], dtype=np.int32))
        for t in doc["trees"]
    ]
    seeds = np.array(doc["tree_seeds"], dtype=np.uint64)
    n = doc["n_rows"]
    inbag = np.zeros((len(trees), n), dtype=np.int32)
    for t in range(len(trees)):
        rng = np.random.default_rng(seeds[t, 0])
        inbag[t] = np.bincount(rng.integers(0, n, size=n), minlength=n)
    return ForestModel(params=params, feature_names=doc["feature_names"],
                       trees=trees, inbag_counts=inbag, tree_seeds=seeds,
                       n_rows=n)
