"""Normalization, closed-form ridge regression, and model introspection.

The solve targets centered labels: b = mean(y), and w solves
(X~'X~ + R) w = X~'(y - b) over normalized features X~ via a Cholesky
factorization. Predictions are clip(w.x~ + b, -1, 1).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    EmptyHoldout,
    SingularSystem,
    TooFewRows,
)
from .features import FeatureLayout

DATASET_MAGIC = b"DGRD"
STD_FLOOR = 1e-8
_CHUNK = 1024


@dataclass
class Dataset:
    """Rows of (features, expert command, iteration, episode, takeover)."""

    features: np.ndarray  # (n, d) float32
    labels: np.ndarray  # (n,) float32
    iterations: np.ndarray  # (n,) uint16
    episodes: np.ndarray  # (n,) uint32
    takeover: np.ndarray  # (n,) uint8
    layout: FeatureLayout | None = None

    def __post_init__(self):
        n = self.features.shape[0]
        for arr in (self.labels, self.iterations, self.episodes, self.takeover):
            if arr.shape != (n,):
                raise DimensionMismatch("dataset column lengths disagree")
        if n and (
            not np.isfinite(self.labels).all()
            or self.labels.min() < -1.0
            or self.labels.max() > 1.0
        ):
            raise ValueError("labels must be finite and in [-1, 1]")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def select(self, mask: np.ndarray) -> "Dataset":
        return Dataset(
            features=self.features[mask],
            labels=self.labels[mask],
            iterations=self.iterations[mask],
            episodes=self.episodes[mask],
            takeover=self.takeover[mask],
            layout=self.layout,
        )

    def restrict_columns(self, keep: np.ndarray, layout: FeatureLayout) -> "Dataset":
        return Dataset(
            features=np.ascontiguousarray(self.features[:, keep]),
            labels=self.labels,
            iterations=self.iterations,
            episodes=self.episodes,
            takeover=self.takeover,
            layout=layout,
        )

    @staticmethod
    def from_rows(
        rows: list[tuple[np.ndarray, float, int, int, bool]],
        layout: FeatureLayout | None = None,
    ) -> "Dataset":
        if rows:
            feats = np.stack([r[0] for r in rows]).astype(np.float32)
        else:
            feats = np.zeros((0, 0), dtype=np.float32)
        return Dataset(
            features=feats,
            labels=np.array([r[1] for r in rows], dtype=np.float32),
            iterations=np.array([r[2] for r in rows], dtype=np.uint16),
            episodes=np.array([r[3] for r in rows], dtype=np.uint32),
            takeover=np.array([r[4] for r in rows], dtype=np.uint8),
            layout=layout,
        )

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        parts = [p for p in parts if p.n_rows]
        if not parts:
            raise ValueError("nothing to concatenate")
        return Dataset(
            features=np.concatenate([p.features for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            iterations=np.concatenate([p.iterations for p in parts]),
            episodes=np.concatenate([p.episodes for p in parts]),
            takeover=np.concatenate([p.takeover for p in parts]),
            layout=parts[0].layout,
        )


def _row_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [
            ("features", "<f4", (dim,)),
            ("label", "<f4"),
            ("iteration", "<u2"),
            ("episode", "<u4"),
            ("takeover", "u1"),
        ]
    )


def save_dataset(path, dataset: Dataset) -> None:
    """Binary dump: DGRD header (u32 dim, u64 rows) then packed rows."""
    rows = np.zeros(dataset.n_rows, dtype=_row_dtype(dataset.dim))
    rows["features"] = dataset.features
    rows["label"] = dataset.labels
    rows["iteration"] = dataset.iterations
    rows["episode"] = dataset.episodes
    rows["takeover"] = dataset.takeover
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC + struct.pack("<IQ", dataset.dim, dataset.n_rows))
        fh.write(rows.tobytes())


def load_dataset(path, layout: FeatureLayout | None = None) -> Dataset:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != DATASET_MAGIC:
            raise ValueError(f"{path}: not a dataset file")
        dim, n = struct.unpack("<IQ", header[4:])
        rows = np.frombuffer(fh.read(), dtype=_row_dtype(dim), count=n)
    return Dataset(
        features=np.ascontiguousarray(rows["features"]).reshape(n, dim),
        labels=rows["label"].copy(),
        iterations=rows["iteration"].copy(),
        episodes=rows["episode"].copy(),
        takeover=rows["takeover"].copy(),
        layout=layout,
    )


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension mean/std with the std floored at STD_FLOOR."""

    mean: np.ndarray
    std: np.ndarray

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def fit_normalizer(data: Dataset) -> Normalizer:
    """Population mean and standard deviation over all rows."""
    if data.n_rows < 2:
        raise TooFewRows("normalizer needs at least 2 rows")
    x = data.features.astype(np.float64)
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    return Normalizer(mean=mean, std=std)


def build_regularizer(layout: FeatureLayout, lambda_base: float) -> np.ndarray:
    """Diagonal R with R_ii = lambda * (total dimension count of i's group)."""
    if lambda_base < 0:
        raise ValueError("lambda_base must be >= 0")
    r = np.empty(layout.total_dim)
    totals = {g: layout.group_total(g) for g in layout.group_ids()}
    for e in layout.entries:
        r[e.start : e.start + e.length] = lambda_base * totals[e.group]
    return r


@dataclass(frozen=True)
class RidgeModel:
    """Linear lateral-command policy: clip(w . normalize(x) + b, -1, 1)."""

    w: np.ndarray
    b: float
    normalizer: Normalizer
    layout: FeatureLayout
    lambda_base: float

    def raw_score(self, x: np.ndarray) -> float:
        """Unclipped w.x~ + b."""
        xt = self.normalizer.normalize(self._checked(x))
        return float(self.w @ xt + self.b)

    def _checked(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.layout.total_dim,):
            raise DimensionMismatch(
                f"expected {self.layout.total_dim} dims, got {x.shape}"
            )
        return x


def solve_ridge(
    data: Dataset,
    normalizer: Normalizer,
    regularizer: np.ndarray,
    lambda_base: float = 0.0,
    layout: FeatureLayout | None = None,
) -> RidgeModel:
    """Closed-form ridge solve on normalized features and centered labels."""
    if data.n_rows < 1:
        raise TooFewRows("ridge solve needs at least 1 row")
    d = data.dim
    if regularizer.shape != (d,):
        raise DimensionMismatch("regularizer length does not match feature dim")
    layout = layout or data.layout or FeatureLayout.single_group("All", d)

    y = data.labels.astype(np.float64)
    b = float(y.mean())
    yc = y - b
    gram = np.zeros((d, d))
    rhs = np.zeros(d)
    for lo in range(0, data.n_rows, _CHUNK):
        chunk = normalizer.normalize(data.features[lo : lo + _CHUNK])
        gram += chunk.T @ chunk
        rhs += chunk.T @ yc[lo : lo + _CHUNK]
    gram[np.diag_indices_from(gram)] += regularizer
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        w = scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(
            "normal equations not positive definite (some R_ii = 0?)"
        ) from exc
    return RidgeModel(
        w=w, b=b, normalizer=normalizer, layout=layout, lambda_base=lambda_base
    )


def predict(model: RidgeModel, x: np.ndarray) -> float:
    """Lateral command in [-1, 1]; positive means leftward."""
    return float(np.clip(model.raw_score(x), -1.0, 1.0))


def predict_batch(model: RidgeModel, features: np.ndarray) -> np.ndarray:
    if features.shape[1] != model.layout.total_dim:
        raise DimensionMismatch("feature matrix width does not match model")
    out = np.empty(features.shape[0])
    for lo in range(0, features.shape[0], _CHUNK):
        xt = model.normalizer.normalize(features[lo : lo + _CHUNK])
        out[lo : lo + _CHUNK] = xt @ model.w + model.b
    return np.clip(out, -1.0, 1.0)


@dataclass(frozen=True)
class Contributions:
    """Per-layout-slice shares of the unclipped prediction."""

    layout: FeatureLayout
    values: np.ndarray  # aligned with layout.entries
    intercept: float

    def total(self) -> float:
        return float(self.values.sum() + self.intercept)

    def by_group(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for e, val in zip(self.layout.entries, self.values):
            out[e.group] = out.get(e.group, 0.0) + float(val)
        return out

    def per_window(self, group: str) -> dict[int, float]:
        return {
            e.window: float(val)
            for e, val in zip(self.layout.entries, self.values)
            if e.group == group and e.window is not None
        }


def contributions(model: RidgeModel, x: np.ndarray) -> Contributions:
    """Decompose the unclipped prediction into per-(group, window) terms."""
    xt = model.normalizer.normalize(model._checked(x))
    terms = model.w * xt
    values = np.array(
        [
            terms[e.start : e.start + e.length].sum()
            for e in model.layout.entries
        ]
    )
    return Contributions(layout=model.layout, values=values, intercept=model.b)


def imitation_loss(model: RidgeModel, holdout: Dataset) -> float:
    """Mean squared error of the clipped prediction against expert labels."""
    if holdout.n_rows == 0:
        raise EmptyHoldout("imitation loss needs a non-empty holdout")
    preds = predict_batch(model, holdout.features)
    resid = preds - holdout.labels.astype(np.float64)
    return float(np.mean(resid * resid))


def save_model(path, model: RidgeModel) -> None:
    doc = {
        "lambda_base": model.lambda_base,
        "b": model.b,
        "w": model.w.tolist(),
        "mean": model.normalizer.mean.tolist(),
        "std": model.normalizer.std.tolist(),
        "layout": model.layout.to_json_dict(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> RidgeModel:
    with open(path) as fh:
        doc = json.load(fh)
    return RidgeModel(
        w=np.asarray(doc["w"], dtype=np.float64),
        b=float(doc["b"]),
        normalizer=Normalizer(
            mean=np.asarray(doc["mean"], dtype=np.float64),
            std=np.asarray(doc["std"], dtype=np.float64),
        ),
        layout=FeatureLayout.from_json_dict(doc["layout"]),
        lambda_base=float(doc["lambda_base"]),
    )
