"""Linear discriminant classification, repeated stratified cross-validation and ROC analysis.

The positive class throughout is AF recurrence (label 1); SR maintenance is 0.
Scores are oriented so that larger values are more AF-like.
"""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ClassMissing,
    DimensionMismatch,
    FoldWithoutBothClasses,
    OneClassOnly,
    SingularCovariance,
)
from .stats import mann_whitney_u, mcnemar  # noqa: F401  (re-exported for model comparison)

log = logging.getLogger(__name__)

RIDGE_FACTOR = 1e-8
PRIORS = ("training", "equal")


# --- LDA -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LdaModel:
    weights: np.ndarray
    bias: float
    class_means: tuple[np.ndarray, np.ndarray]  # (SR, AF)
    pooled_covariance: np.ndarray
    feature_names: tuple[str, ...] = ()

    @property
    def n_features(self) -> int:
        return self.weights.size


def _labels(y) -> np.ndarray:
    y = np.asarray(y).reshape(-1)
    if y.dtype.kind not in "biu":
        y = np.array([str(v).upper() == "AF" or v is True or v == 1 for v in y], dtype=int)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 (SR) or 1 (AF)")
    return y.astype(np.int64)


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatch("feature matrix must be 2-D")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains non-finite values")
    return X


def _fit_arrays(X: np.ndarray, y: np.ndarray, priors: str = "training"):
    """Core LDA fit; returns ``(w, b, m0, m1, S)``."""
    x0, x1 = X[y == 0], X[y == 1]
    n0, n1 = x0.shape[0], x1.shape[0]
    if n0 < 2 or n1 < 2:
        raise ClassMissing(f"need at least 2 samples per class, got SR={n0}, AF={n1}")
    m0, m1 = x0.mean(axis=0), x1.mean(axis=0)
    r0, r1 = x0 - m0, x1 - m1
    S = (r0.T @ r0 + r1.T @ r1) / (n0 + n1 - 2)
    d = S.shape[0]
    lam = RIDGE_FACTOR * float(np.trace(S)) / d
    try:
        L = np.linalg.cholesky(S + lam * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("pooled covariance is singular after ridge") from exc
    diff = m1 - m0
    w = np.linalg.solve(L.T, np.linalg.solve(L, diff))
    if priors == "training":
        shift = float(np.log(n1 / n0))
    elif priors == "equal":
        shift = 0.0
    else:
        raise ValueError(f"priors must be one of {PRIORS}")
    b = -float(w @ (m0 + m1)) / 2 + shift
    return w, b, m0, m1, S


def fit_lda(X, y, feature_names: Sequence[str] = (), priors: str = "training") -> LdaModel:
    """Two-class LDA with a pooled covariance.

    The covariance gets a ridge of ``1e-8 * trace / d`` on its diagonal.  The
    boundary sits at the midpoint of the class means, shifted by the log
    ratio of the class priors (training frequencies unless ``priors="equal"``).
    """
    X = _design(X)
    y = _labels(y)
    if X.shape[0] != y.size:
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.size} labels")
    if feature_names and len(feature_names) != X.shape[1]:
        raise DimensionMismatch("feature_names length does not match the columns")
    w, b, m0, m1, S = _fit_arrays(X, y, priors)
    return LdaModel(w, b, (m0, m1), S, tuple(feature_names))


def score(model: LdaModel, x) -> np.ndarray | float:
    """Signed discriminant ``w . x + b``; positive means AF-like."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    X = arr[None, :] if single else arr
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DimensionMismatch(f"expected {model.n_features} features, got shape {arr.shape}")
    s = X @ model.weights + model.bias
    return float(s[0]) if single else s


def predict(model: LdaModel, X) -> np.ndarray:
    return (np.atleast_1d(score(model, X)) > 0).astype(np.int64)


# --- ROC -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RocCurve:
    """Staircase ROC; point ``i`` classifies ``score >= thresholds[i]`` as AF.

    The first point has an infinite threshold (nothing positive).
    """

    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auc: float

    @property
    def se(self) -> np.ndarray:
        return self.tpr

    @property
    def sp(self) -> np.ndarray:
        return 1.0 - self.fpr


def rank_auc(scores, labels) -> float:
    """AUC as the Mann-Whitney U statistic of the positives over ``n+ * n-``."""
    s = np.asarray(scores, dtype=float)
    y = _labels(labels)
    return mann_whitney_u(s[y == 1], s[y == 0]) / (np.sum(y == 1) * np.sum(y == 0))


def roc_curve(scores, labels) -> RocCurve:
    """ROC over the unique scores, with ties forming a single step; trapezoidal AUC."""
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = _labels(labels)
    if s.size != y.size:
        raise DimensionMismatch("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), s.size - 1]
    tp = np.r_[0, np.cumsum(y_sorted)[last]]
    fp = np.r_[0, np.cumsum(1 - y_sorted)[last]]
    # integer trapezoid sum, so ties get exactly half credit
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    thr = np.r_[np.inf, s_sorted[last]]
    return RocCurve(thr, tp / n_pos, fp / n_neg, float(auc))


def select_threshold(curve: RocCurve) -> float:
    """Threshold with the smallest |Se - Sp|, then the largest Se + Sp, then the lowest value."""
    thr, se, sp = curve.thresholds, curve.se, curve.sp
    finite = np.isfinite(thr)
    idx = np.flatnonzero(finite) if finite.any() else np.arange(thr.size)
    gap = np.abs(se[idx] - sp[idx])
    total = se[idx] + sp[idx]
    tol = 1e-12
    cand = idx[gap <= gap.min() + tol]
    total = se[cand] + sp[cand]
    cand = cand[total >= total.max() - tol]
    return float(thr[cand[np.argmin(thr[cand])]])


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @staticmethod
    def from_predictions(pred, truth) -> Confusion:
        p = np.asarray(pred).astype(bool)
        t = np.asarray(truth).astype(bool)
        return Confusion(int(np.sum(p & t)), int(np.sum(p & ~t)),
                         int(np.sum(~p & ~t)), int(np.sum(~p & t)))

    def metrics(self) -> dict[str, float]:
        def ratio(a, b):
            return a / b if b else float("nan")
        n = self.tp + self.fp + self.tn + self.fn
        return {
            "se": ratio(self.tp, self.tp + self.fn),
            "sp": ratio(self.tn, self.tn + self.fp),
            "acc": ratio(self.tp + self.tn, n),
            "ppv": ratio(self.tp, self.tp + self.fp),
            "npv": ratio(self.tn, self.tn + self.fn),
        }


# --- cross-validation ----------------------------------------------------------

@dataclass(frozen=True)
class CvConfig:
    n_folds: int = 10
    n_repeats: int = 100
    stratified: bool = True
    rng_seed: int = 0
    priors: str = "training"

    def __post_init__(self):
        if self.n_folds < 2:
            raise ValueError("n_folds must be >= 2")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be >= 1")
        if self.priors not in PRIORS:
            raise ValueError(f"priors must be one of {PRIORS}")


def stratified_folds(y, n_folds: int, rng: np.random.Generator, stratified: bool = True) -> np.ndarray:
    """Fold index per sample.

    Each class is shuffled and dealt round-robin, the second class continuing
    where the first stopped, so per-class counts and fold sizes both differ
    by at most one.
    """
    y = _labels(y)
    folds = np.empty(y.size, dtype=np.int64)
    if not stratified:
        perm = rng.permutation(y.size)
        folds[perm] = np.arange(y.size) % n_folds
    else:
        start = 0
        for cls in (0, 1):
            members = rng.permutation(np.flatnonzero(y == cls))
            folds[members] = (start + np.arange(members.size)) % n_folds
            start = (start + members.size) % n_folds
    for k in range(n_folds):
        in_fold = y[folds == k]
        if in_fold.size == 0 or in_fold.min() == in_fold.max():
            raise FoldWithoutBothClasses(f"fold {k} lacks one of the classes")
    return folds


def out_of_fold_scores(X: np.ndarray, y: np.ndarray, folds: np.ndarray, n_folds: int,
                       priors: str = "training") -> np.ndarray:
    out = np.empty(y.size)
    for k in range(n_folds):
        test = folds == k
        w, b, *_ = _fit_arrays(X[~test], y[~test], priors)
        out[test] = X[test] @ w + b
    return out


METRICS = ("se", "sp", "acc", "auc", "ppv", "npv")


@dataclass(frozen=True, eq=False)
class RepeatResult:
    scores: np.ndarray
    threshold: float
    predictions: np.ndarray
    roc: RocCurve
    metrics: dict[str, float]


def evaluate_scores(scores: np.ndarray, y: np.ndarray) -> RepeatResult:
    """ROC, balanced threshold and confusion metrics for one set of pooled scores."""
    roc = roc_curve(scores, y)
    u_auc = rank_auc(scores, y)
    if abs(roc.auc - u_auc) > 1e-12:
        raise AssertionError(f"trapezoidal AUC {roc.auc} != rank AUC {u_auc}")
    thr = select_threshold(roc)
    pred = (scores >= thr).astype(np.int64)
    m = Confusion.from_predictions(pred, y).metrics()
    m["auc"] = roc.auc
    return RepeatResult(scores, thr, pred, roc, m)


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    """Mean metrics over repeats, with the per-repeat values kept."""

    feature_names: tuple[str, ...]
    se: float
    sp: float
    acc: float
    auc: float
    ppv: float
    npv: float
    per_repeat: dict[str, np.ndarray] = field(default_factory=dict)
    thresholds: np.ndarray = field(default_factory=lambda: np.empty(0))
    predictions: np.ndarray = field(default_factory=lambda: np.empty((0, 0), dtype=np.int64))
    rocs: tuple[RocCurve, ...] = ()

    def means(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def _report(names: Sequence[str], results: Sequence[RepeatResult]) -> EvaluationReport:
    per = {m: np.array([r.metrics[m] for r in results]) for m in METRICS}
    means = {}
    for m, v in per.items():
        ok = v[~np.isnan(v)]
        means[m] = float(ok.mean()) if ok.size else float("nan")
    return EvaluationReport(
        tuple(names), **means, per_repeat=per,
        thresholds=np.array([r.threshold for r in results]),
        predictions=np.array([r.predictions for r in results]),
        rocs=tuple(r.roc for r in results),
    )


def _repeat_seeds(cfg: CvConfig) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(cfg.rng_seed).spawn(cfg.n_repeats)


def cross_validate(X, y, cfg: CvConfig = CvConfig(),
                   feature_names: Sequence[str] = ()) -> EvaluationReport:
    """Repeated (stratified) k-fold CV of LDA on arrays.

    Each repeat reshuffles the folds, pools the out-of-fold scores, builds
    one ROC, picks its balanced threshold and computes the metrics there.
    """
    X = _design(X)
    y = _labels(y)
    if X.shape[0] != y.size:
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.size} labels")
    results = []
    for ss in _repeat_seeds(cfg):
        rng = np.random.default_rng(ss)
        folds = stratified_folds(y, cfg.n_folds, rng, cfg.stratified)
        s = out_of_fold_scores(X, y, folds, cfg.n_folds, cfg.priors)
        results.append(evaluate_scores(s, y))
    return _report(feature_names, results)


def repeated_cv(cohort, feature_set: Sequence[str], cfg: CvConfig = CvConfig()) -> EvaluationReport:
    """:func:`cross_validate` on the named feature columns of a labelled cohort."""
    return cross_validate(cohort.matrix(feature_set), cohort.labels(), cfg, feature_names=feature_set)


# --- feature selection ---------------------------------------------------------

def _cv_error(X: np.ndarray, y: np.ndarray, folds: np.ndarray, n_folds: int, priors: str) -> float:
    s = out_of_fold_scores(X, y, folds, n_folds, priors)
    return float(np.mean((s > 0).astype(np.int64) != y))


def forward_select(X: np.ndarray, y: np.ndarray, n_folds: int, rng: np.random.Generator,
                   priors: str = "training") -> list[int]:
    """Greedy forward selection with CV misclassification as criterion.

    Starts from the empty set, whose error is that of always predicting the
    majority class, and adds the best column only while the error strictly
    decreases.  Ties between columns go to the earlier one.
    """
    k = min(n_folds, int(np.sum(y == 0)), int(np.sum(y == 1)))
    if k < 2:
        raise FoldWithoutBothClasses("training partition too small for inner cross-validation")
    folds = stratified_folds(y, k, rng)
    chosen: list[int] = []
    best = float(min(np.mean(y), 1 - np.mean(y)))
    while len(chosen) < X.shape[1]:
        trial = []
        for j in range(X.shape[1]):
            if j in chosen:
                continue
            trial.append((_cv_error(X[:, chosen + [j]], y, folds, k, priors), j))
        err, j = min(trial)
        if err < best - 1e-12:
            best = err
            chosen.append(j)
        else:
            break
    return chosen


@dataclass(frozen=True, eq=False)
class SelectionResult:
    candidates: tuple[str, ...]
    frequencies: dict[str, float]  # share of training partitions selecting each feature
    set_counts: dict[tuple[str, ...], int]
    final_set: tuple[str, ...]
    report: EvaluationReport  # nested CV performance of the selection procedure


def sequential_forward_selection(cohort, candidate_features: Sequence[str],
                                 cfg: CvConfig = CvConfig()) -> SelectionResult:
    """Nested CV: forward selection inside each outer training partition.

    The outer held-out fold is scored by an LDA fitted on the selected
    columns.  Returns selection frequencies over all ``repeats * folds``
    partitions, the most frequent feature set and the nested CV report.
    """
    if len(candidate_features) < 2:
        raise ValueError("need at least two candidate features")
    names = tuple(candidate_features)
    X = _design(cohort.matrix(names))
    y = cohort.labels()
    return _select(X, y, names, cfg)


def _select(X: np.ndarray, y: np.ndarray, names: tuple[str, ...], cfg: CvConfig) -> SelectionResult:
    hits = Counter()
    sets: Counter = Counter()
    results = []
    runs = 0
    for ss in _repeat_seeds(cfg):
        s_outer, s_inner = ss.spawn(2)
        folds = stratified_folds(y, cfg.n_folds, np.random.default_rng(s_outer), cfg.stratified)
        inner_rng = np.random.default_rng(s_inner)
        scores = np.empty(y.size)
        for k in range(cfg.n_folds):
            test = folds == k
            Xt, yt = X[~test], y[~test]
            cols = forward_select(Xt, yt, cfg.n_folds, inner_rng, cfg.priors)
            runs += 1
            key = tuple(names[j] for j in sorted(cols))
            sets[key] += 1
            hits.update(names[j] for j in cols)
            if cols:
                w, b, *_ = _fit_arrays(Xt[:, cols], yt, cfg.priors)
                scores[test] = X[test][:, cols] @ w + b
            else:
                # empty model: constant prior log-odds
                scores[test] = float(np.log(np.sum(yt == 1) / np.sum(yt == 0)))
        results.append(evaluate_scores(scores, y))
    freq = {n: hits[n] / runs for n in names}
    order = {n: i for i, n in enumerate(names)}
    final = min(sets, key=lambda s: (-sets[s], len(s), [order[n] for n in s]))
    log.info("forward selection: most frequent set %s (%d of %d)", final, sets[final], runs)
    return SelectionResult(names, freq, dict(sets), final, _report(names, results))
