"""Clustered knowledge base of profiled applications.

An unseen application arrives with only its default-clock mini-profile; the
matcher normalizes that profile, finds the nearest cluster centroid, then the
nearest known application inside that cluster. The matched application's
stored profile is what the prediction models are queried with downstream.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .models import CANDIDATE_LABELS, model_fingerprint
from .schema import Dataset, FeatureSchema, NormStats, ValidationError
from .traces import normalize


@dataclass(frozen=True)
class ClusterModel:
    centroids: tuple[tuple[float, ...], ...]
    assignments: tuple[int, ...]
    inertia: float
    n_iter: int
    inertia_trace: tuple[float, ...]

    @property
    def k(self) -> int:
        return len(self.centroids)

    def centroid_matrix(self) -> np.ndarray:
        return np.array(self.centroids, dtype=float)


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, float]:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(points)), labels].sum())
    return labels, inertia


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[int(rng.integers(n))]
    for i in range(1, k):
        d2 = ((points[:, None, :] - centroids[None, :i, :]) ** 2).sum(axis=2).min(axis=1)
        total = d2.sum()
        if total == 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = points[idx]
    return centroids


def kmeans(points: Sequence[Sequence[float]] | np.ndarray, k: int, seed: int,
           max_iter: int = 100) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding; deterministic per seed.

    Iterates to an assignment fixpoint or ``max_iter``; the recorded inertia
    trace (one entry per assignment step) is non-increasing. A cluster that
    loses all its points is re-seeded on the point farthest from its centroid.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or len(P) == 0:
        raise ValidationError("kmeans needs a non-empty 2-D point array")
    if not 1 <= k <= len(P):
        raise ValidationError(f"k must be in [1, {len(P)}], got {k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(P, k, rng)

    labels = np.full(len(P), -1)
    trace: list[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new_labels, inertia = _assign(P, centroids)
        trace.append(inertia)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        assigned_d2 = ((P - centroids[labels]) ** 2).sum(axis=1)
        for c in range(k):
            members = P[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                centroids[c] = P[int(np.argmax(assigned_d2))]
    return ClusterModel(
        centroids=tuple(tuple(float(v) for v in c) for c in centroids),
        assignments=tuple(int(v) for v in labels),
        inertia=trace[-1],
        n_iter=n_iter,
        inertia_trace=tuple(trace),
    )


def default_k(n_apps: int) -> int:
    """Rule-of-thumb cluster count: sqrt(n/2), at least 1."""
    return max(1, int(round(math.sqrt(n_apps / 2.0))))


@dataclass(frozen=True)
class KnowledgeBase:
    """Normalized default-clock profiles of known apps plus their clustering."""

    schema: FeatureSchema
    stats: NormStats
    app_ids: tuple[str, ...]
    profiles: tuple[tuple[float, ...], ...]
    clusters: ClusterModel

    def __post_init__(self) -> None:
        if len(self.app_ids) != len(self.profiles):
            raise ValidationError("one profile per app required")
        if len(self.clusters.assignments) != len(self.app_ids):
            raise ValidationError("one cluster assignment per app required")
        for c in self.clusters.centroids:
            if len(c) != len(self.schema):
                raise ValidationError("centroid dimension != schema dimension")

    @property
    def input_labels(self) -> tuple[str, ...]:
        return tuple(self.schema.names) + CANDIDATE_LABELS

    @property
    def fingerprint(self) -> str:
        return model_fingerprint(self.input_labels)

    def profile_of(self, app_id: str) -> tuple[float, ...]:
        try:
            return self.profiles[self.app_ids.index(app_id)]
        except ValueError:
            raise ValidationError(f"unknown app {app_id!r}") from None


@dataclass(frozen=True)
class MatchResult:
    cluster_id: int
    app_id: str
    distance: float


def build_knowledge_base(d: Dataset, k: int | None = None, seed: int = 0) -> KnowledgeBase:
    """Cluster the per-app default-clock profiles of ``d``.

    The dataset is normalized first if it is not already; the stats become
    part of the knowledge base so incoming query profiles can be projected
    into the same space.
    """
    if d.norm_stats is None:
        d = normalize(d)
    apps = d.app_ids()
    profiles = [d.default_profile(app) for app in apps]  # raises naming the app
    if k is None:
        k = default_k(len(apps))
    if not 1 <= k <= len(apps):
        raise ValidationError(f"k must be in [1, {len(apps)}], got {k}")
    clusters = kmeans(np.array(profiles, dtype=float), k=k, seed=seed)
    return KnowledgeBase(schema=d.schema, stats=d.norm_stats, app_ids=apps,
                         profiles=tuple(profiles), clusters=clusters)


def match_application(profile: Sequence[float] | np.ndarray,
                      kb: KnowledgeBase) -> MatchResult:
    """Nearest centroid, then nearest member of that cluster (Euclidean).

    ``profile`` is a raw default-clock feature vector; it is z-scored with the
    knowledge base's stats before matching. Centroid ties break toward the
    lower cluster index, member ties toward the lexicographically smaller
    app id.
    """
    z = np.asarray(profile, dtype=float)
    if z.shape != (len(kb.schema),):
        raise ValidationError(
            f"profile has shape {z.shape}, knowledge base expects ({len(kb.schema)},)")
    z = kb.stats.transform(z)
    d2_centroids = ((kb.clusters.centroid_matrix() - z) ** 2).sum(axis=1)
    cluster_id = int(np.argmin(d2_centroids))

    best_app = None
    best_d2 = math.inf
    for i, app in enumerate(kb.app_ids):  # app_ids are sorted: first win = lexicographic
        if kb.clusters.assignments[i] != cluster_id:
            continue
        d2 = float(((np.array(kb.profiles[i]) - z) ** 2).sum())
        if d2 < best_d2:
            best_d2 = d2
            best_app = app
    if best_app is None:
        raise ValidationError(f"cluster {cluster_id} has no members")
    return MatchResult(cluster_id=cluster_id, app_id=best_app,
                       distance=math.sqrt(best_d2))


# ---------------------------------------------------------------------------
# persistence

KB_FORMAT = "dvfsched.kb/1"


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    doc = {
        "format": KB_FORMAT,
        "schema": {"names": list(kb.schema.names), "units": list(kb.schema.units)},
        "stats": {"mean": list(kb.stats.mean), "std": list(kb.stats.std)},
        "app_ids": list(kb.app_ids),
        "profiles": [list(p) for p in kb.profiles],
        "clusters": {
            "centroids": [list(c) for c in kb.clusters.centroids],
            "assignments": list(kb.clusters.assignments),
            "inertia": kb.clusters.inertia,
            "n_iter": kb.clusters.n_iter,
            "inertia_trace": list(kb.clusters.inertia_trace),
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_kb(path: str | Path) -> KnowledgeBase:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{path}: not a valid knowledge base file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != KB_FORMAT:
        raise ValidationError(f"{path}: unsupported knowledge base format")
    try:
        cl = doc["clusters"]
        clusters = ClusterModel(
            centroids=tuple(tuple(float(v) for v in c) for c in cl["centroids"]),
            assignments=tuple(int(v) for v in cl["assignments"]),
            inertia=float(cl["inertia"]),
            n_iter=int(cl["n_iter"]),
            inertia_trace=tuple(float(v) for v in cl["inertia_trace"]),
        )
        return KnowledgeBase(
            schema=FeatureSchema(names=tuple(doc["schema"]["names"]),
                                 units=tuple(doc["schema"]["units"])),
            stats=NormStats(mean=tuple(doc["stats"]["mean"]),
                            std=tuple(doc["stats"]["std"])),
            app_ids=tuple(str(a) for a in doc["app_ids"]),
            profiles=tuple(tuple(float(v) for v in p) for p in doc["profiles"]),
            clusters=clusters,
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed knowledge base: {exc}") from None
