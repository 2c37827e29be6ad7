"""Energy and execution-time regression models.

A model maps (normalized default-clock profile ++ candidate core/mem clock)
to one target, so a single fitted model serves every frequency configuration
of the device. Three families are supported: ordinary least squares, lasso
via cyclic coordinate descent, and gradient-boosted regression trees.
Fitting is deterministic given the seed; fitted models are immutable and safe
for concurrent prediction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import gbrt
from .schema import Dataset, NormStats, ValidationError, compute_norm_stats

MODEL_FORMAT = "dvfsched.model/1"

# Labels of the candidate-config columns appended after the profile features.
CANDIDATE_LABELS = ("candidate_core_clock_mhz", "candidate_mem_clock_mhz")

LASSO_TOL = 1e-7
LASSO_MAX_SWEEPS = 10_000
OLS_RIDGE = 1e-8

TARGETS = ("energy", "time")


class ModelFormatError(ValueError):
    """A model file is unreadable, truncated, or inconsistent."""


# ---------------------------------------------------------------------------
# model kinds


@dataclass(frozen=True)
class OLSKind:
    name = "ols"


@dataclass(frozen=True)
class LassoKind:
    name = "lasso"
    lam: float = 0.01

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValidationError(f"lasso lambda must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class GBRTKind:
    name = "gbrt"
    n_trees: int = 200
    max_depth: int = 3
    shrinkage: float = 0.1
    min_leaf: int = 2

    def __post_init__(self) -> None:
        if self.n_trees < 1 or self.max_depth < 0 or self.min_leaf < 1:
            raise ValidationError(f"bad GBRT hyperparameters: {self}")
        if not 0.0 < self.shrinkage <= 1.0:
            raise ValidationError(f"shrinkage must be in (0,1], got {self.shrinkage}")


ModelKind = OLSKind | LassoKind | GBRTKind


def kind_to_dict(kind: ModelKind) -> dict:
    if isinstance(kind, OLSKind):
        return {"name": "ols"}
    if isinstance(kind, LassoKind):
        return {"name": "lasso", "lam": kind.lam}
    if isinstance(kind, GBRTKind):
        return {"name": "gbrt", "n_trees": kind.n_trees, "max_depth": kind.max_depth,
                "shrinkage": kind.shrinkage, "min_leaf": kind.min_leaf}
    raise ValidationError(f"unknown model kind {kind!r}")


def kind_from_dict(d: dict) -> ModelKind:
    name = d.get("name")
    if name == "ols":
        return OLSKind()
    if name == "lasso":
        return LassoKind(lam=float(d["lam"]))
    if name == "gbrt":
        return GBRTKind(n_trees=int(d["n_trees"]), max_depth=int(d["max_depth"]),
                        shrinkage=float(d["shrinkage"]), min_leaf=int(d["min_leaf"]))
    raise ModelFormatError(f"unknown model kind name {name!r}")


# ---------------------------------------------------------------------------
# fitted models


def model_fingerprint(input_labels: Sequence[str]) -> str:
    """Hash of the ordered input column names; checked at prediction time."""
    payload = "\x1f".join(input_labels).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class LinearParams:
    coef: tuple[float, ...]
    intercept: float


@dataclass(frozen=True)
class GBRTParams:
    base_score: float
    shrinkage: float
    trees: tuple[dict, ...]
    loss_curve: tuple[float, ...]


@dataclass(frozen=True)
class TrainMeta:
    seed: int
    n_samples: int
    training_rmse: float


@dataclass(frozen=True)
class FittedModel:
    kind: ModelKind
    target: str
    input_labels: tuple[str, ...]
    fingerprint: str
    params: LinearParams | GBRTParams
    meta: TrainMeta
    _trees: tuple[gbrt.TreeNode, ...] = field(default=(), compare=False, repr=False)

    @property
    def n_inputs(self) -> int:
        return len(self.input_labels)

    @property
    def kind_name(self) -> str:
        return self.kind.name

    def _tree_objs(self) -> tuple[gbrt.TreeNode, ...]:
        if self._trees:
            return self._trees
        trees = tuple(gbrt.TreeNode.from_dict(t) for t in self.params.trees)
        object.__setattr__(self, "_trees", trees)
        return trees

    def predict(self, x: Sequence[float] | np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_inputs,):
            raise ValidationError(
                f"input has shape {x.shape}, model expects ({self.n_inputs},)")
        if isinstance(self.params, LinearParams):
            return float(np.dot(self.params.coef, x) + self.params.intercept)
        return float(gbrt.gbrt_predict(self.params.base_score, self._tree_objs(),
                                       self.params.shrinkage, x))

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ValidationError(
                f"input has shape {X.shape}, model expects (n, {self.n_inputs})")
        if isinstance(self.params, LinearParams):
            return X @ np.array(self.params.coef) + self.params.intercept
        return gbrt.gbrt_predict_batch(self.params.base_score, self._tree_objs(),
                                       self.params.shrinkage, X)


def predict(m, x) -> float:
    """Predict a single target value; pure function of (model, input)."""
    return m.predict(x)


# ---------------------------------------------------------------------------
# fitting


def _check_training_inputs(X: np.ndarray, y: np.ndarray) -> None:
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValidationError("training data contains non-finite values")


def _fit_ols(X: np.ndarray, y: np.ndarray) -> LinearParams:
    n, d = X.shape
    if n < d:
        raise ValidationError(f"OLS needs n >= d, got n={n} d={d}")
    A = np.hstack([X, np.ones((n, 1))])
    # equilibrate columns so the ridge safeguard is scale-free and the normal
    # equations stay well conditioned for raw-MHz clock columns
    norms = np.sqrt((A ** 2).sum(axis=0))
    norms = np.where(norms == 0.0, 1.0, norms)
    As = A / norms
    G = As.T @ As + OLS_RIDGE * np.eye(d + 1)
    beta = np.linalg.solve(G, As.T @ y) / norms
    return LinearParams(coef=tuple(beta[:-1].tolist()), intercept=float(beta[-1]))


def _soft_threshold(z: float, lam: float) -> float:
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


def _fit_lasso(X: np.ndarray, y: np.ndarray, lam: float) -> LinearParams:
    # Objective: (1/2n)||y - Xb - b0||^2 + lam * ||b||_1, intercept unpenalized.
    # Centering X and y removes the intercept from the descent.
    n, d = X.shape
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    col_sq = (Xc ** 2).sum(axis=0) / n
    beta = np.zeros(d)
    resid = yc.copy()
    for _ in range(LASSO_MAX_SWEEPS):
        max_delta = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue  # constant column stays at 0
            old = beta[j]
            rho = float(Xc[:, j] @ resid) / n + col_sq[j] * old
            new = _soft_threshold(rho, lam) / col_sq[j]
            if new != old:
                resid -= (new - old) * Xc[:, j]
                beta[j] = new
            delta = abs(new - old)
            if delta > max_delta:
                max_delta = delta
        if max_delta < LASSO_TOL:
            break
    intercept = y_mean - float(x_mean @ beta)
    return LinearParams(coef=tuple(beta.tolist()), intercept=intercept)


def fit(kind: ModelKind, X: np.ndarray, y: np.ndarray, seed: int, *,
        target: str = "value",
        input_labels: Sequence[str] | None = None) -> FittedModel:
    """Fit a model of ``kind`` on the design matrix X and target vector y.

    ``input_labels`` name the columns of X and define the schema fingerprint;
    they default to x0..x{d-1} for ad-hoc matrices.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_training_inputs(X, y)
    if X.shape[0] < 2:
        raise ValidationError(f"need at least 2 samples, got {X.shape[0]}")
    if input_labels is None:
        input_labels = tuple(f"x{j}" for j in range(X.shape[1]))
    input_labels = tuple(input_labels)
    if len(input_labels) != X.shape[1]:
        raise ValidationError(
            f"{len(input_labels)} input labels for {X.shape[1]} columns")

    trees: tuple[gbrt.TreeNode, ...] = ()
    if isinstance(kind, OLSKind):
        params: LinearParams | GBRTParams = _fit_ols(X, y)
    elif isinstance(kind, LassoKind):
        params = _fit_lasso(X, y, kind.lam)
    elif isinstance(kind, GBRTKind):
        base, tree_objs, losses = gbrt.fit_gbrt(
            X, y, n_trees=kind.n_trees, max_depth=kind.max_depth,
            shrinkage=kind.shrinkage, min_leaf=kind.min_leaf)
        trees = tuple(tree_objs)
        params = GBRTParams(base_score=base, shrinkage=kind.shrinkage,
                            trees=tuple(t.to_dict() for t in tree_objs),
                            loss_curve=tuple(losses))
    else:
        raise ValidationError(f"unknown model kind {kind!r}")

    model = FittedModel(
        kind=kind, target=target, input_labels=input_labels,
        fingerprint=model_fingerprint(input_labels), params=params,
        meta=TrainMeta(seed=int(seed), n_samples=int(X.shape[0]), training_rmse=0.0),
        _trees=trees)
    training_rmse = float(np.sqrt(np.mean((model.predict_many(X) - y) ** 2)))
    object.__setattr__(model, "meta",
                       TrainMeta(seed=int(seed), n_samples=int(X.shape[0]),
                                 training_rmse=training_rmse))
    return model


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class EvalReport:
    rmse: float
    mae: float
    n_samples: int
    per_app_rmse: Mapping[str, float]

    def __post_init__(self) -> None:
        if self.rmse < 0 or self.mae < 0:
            raise ValidationError("rmse/mae must be >= 0")


def evaluate(m, X: np.ndarray, y: np.ndarray,
             app_ids: Sequence[str] | None = None) -> EvalReport:
    """RMSE/MAE of model predictions on (X, y), with an optional per-app
    breakdown when row app ids are supplied."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValidationError("cannot evaluate on an empty set")
    preds = m.predict_many(X)
    resid = preds - y
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    mae = float(np.mean(np.abs(resid)))
    per_app: dict[str, float] = {}
    if app_ids is not None:
        if len(app_ids) != len(y):
            raise ValidationError("app_ids length does not match y")
        for app in sorted(set(app_ids)):
            mask = np.array([a == app for a in app_ids])
            per_app[app] = float(np.sqrt(np.mean(resid[mask] ** 2)))
    return EvalReport(rmse=rmse, mae=mae, n_samples=int(len(y)), per_app_rmse=per_app)


# ---------------------------------------------------------------------------
# dataset -> design matrix


@dataclass(frozen=True)
class DesignMatrix:
    X: np.ndarray
    y_energy: np.ndarray
    y_time: np.ndarray
    labels: tuple[str, ...]
    app_ids: tuple[str, ...]
    stats: NormStats

    def target(self, name: str) -> np.ndarray:
        if name == "energy":
            return self.y_energy
        if name == "time":
            return self.y_time
        raise ValidationError(f"unknown target {name!r}; expected one of {TARGETS}")


def build_design_matrix(d: Dataset, stats: NormStats | None = None) -> DesignMatrix:
    """Assemble supervised rows from a trace dataset.

    Each record contributes one row: the z-scored default-clock profile of its
    application followed by the record's own (core, mem) clocks — the exact
    input shape available at scheduling time, where only a default-clock
    mini-profile of the job is known. ``stats`` defaults to stats over all of
    ``d``'s feature rows (the same stats ``normalize`` would compute).
    """
    if len(d) == 0:
        raise ValidationError("cannot build a design matrix from an empty dataset")
    if d.norm_stats is not None:
        # features are already z-scored; the dataset's own stats are the only
        # coherent choice
        if stats is not None and stats != d.norm_stats:
            raise ValidationError("dataset is normalized; cannot apply foreign stats")
        stats = d.norm_stats
        profiles = {app: np.asarray(d.default_profile(app), dtype=float)
                    for app in d.app_ids()}
    else:
        if stats is None:
            stats = compute_norm_stats(d.feature_matrix())
        profiles = {app: stats.transform(d.default_profile(app)) for app in d.app_ids()}
    rows = np.empty((len(d), len(d.schema) + 2))
    for i, rec in enumerate(d.records):
        rows[i, :-2] = profiles[rec.app_id]
        rows[i, -2] = rec.config.core_clock
        rows[i, -1] = rec.config.mem_clock
    labels = tuple(d.schema.names) + CANDIDATE_LABELS
    return DesignMatrix(X=rows, y_energy=d.energies(), y_time=d.times(),
                        labels=labels, app_ids=tuple(r.app_id for r in d.records),
                        stats=stats)


def cross_validate(kind: ModelKind, d: Dataset, k_folds: int, seed: int,
                   target: str = "energy") -> list[EvalReport]:
    """K-fold cross-validation grouped by application id."""
    if k_folds < 2:
        raise ValidationError(f"k_folds must be >= 2, got {k_folds}")
    apps = d.app_ids()
    if len(apps) < k_folds:
        raise ValidationError(f"{len(apps)} distinct apps < {k_folds} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(apps))
    folds: list[list[str]] = [[] for _ in range(k_folds)]
    for pos, idx in enumerate(order):
        folds[pos % k_folds].append(apps[idx])

    reports = []
    for fold_apps in folds:
        held = set(fold_apps)
        train = d.subset([a for a in apps if a not in held])
        test = d.subset(fold_apps)
        dm_train = build_design_matrix(train)
        dm_test = build_design_matrix(test, stats=dm_train.stats)
        model = fit(kind, dm_train.X, dm_train.target(target), seed,
                    target=target, input_labels=dm_train.labels)
        reports.append(evaluate(model, dm_test.X, dm_test.target(target),
                                app_ids=dm_test.app_ids))
    return reports


# ---------------------------------------------------------------------------
# persistence


def save_model(m: FittedModel, path: str | Path) -> None:
    if isinstance(m.params, LinearParams):
        params = {"coef": list(m.params.coef), "intercept": m.params.intercept}
    else:
        params = {"base_score": m.params.base_score, "shrinkage": m.params.shrinkage,
                  "trees": list(m.params.trees), "loss_curve": list(m.params.loss_curve)}
    doc = {
        "format": MODEL_FORMAT,
        "kind": kind_to_dict(m.kind),
        "target": m.target,
        "input_labels": list(m.input_labels),
        "fingerprint": m.fingerprint,
        "params": params,
        "meta": {"seed": m.meta.seed, "n_samples": m.meta.n_samples,
                 "training_rmse": m.meta.training_rmse},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> FittedModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path}: not a valid model file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(
            f"{path}: unsupported format {doc.get('format')!r}, expected {MODEL_FORMAT}")
    try:
        kind = kind_from_dict(doc["kind"])
        labels = tuple(str(s) for s in doc["input_labels"])
        stored_fp = doc["fingerprint"]
        p = doc["params"]
        if kind.name in ("ols", "lasso"):
            params: LinearParams | GBRTParams = LinearParams(
                coef=tuple(float(v) for v in p["coef"]), intercept=float(p["intercept"]))
            if len(params.coef) != len(labels):
                raise ModelFormatError(
                    f"{path}: coefficient vector length {len(params.coef)} != "
                    f"input dimension {len(labels)}")
        else:
            params = GBRTParams(base_score=float(p["base_score"]),
                                shrinkage=float(p["shrinkage"]),
                                trees=tuple(p["trees"]),
                                loss_curve=tuple(float(v) for v in p["loss_curve"]))
        meta = TrainMeta(seed=int(doc["meta"]["seed"]),
                         n_samples=int(doc["meta"]["n_samples"]),
                         training_rmse=float(doc["meta"]["training_rmse"]))
        target = str(doc["target"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: malformed model document: {exc}") from None
    if model_fingerprint(labels) != stored_fp:
        raise ModelFormatError(f"{path}: fingerprint does not match input labels")
    return FittedModel(kind=kind, target=target, input_labels=labels,
                       fingerprint=stored_fp, params=params, meta=meta)
