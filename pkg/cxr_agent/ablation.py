"""
Feature-combination ablation: block-structured feature matrices, an
L2-regularized logistic regression trained by full-batch gradient descent,
and a runner scoring each block combination by held-out AUC.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import TrainConfig
from .context import Vocabulary
from .exceptions import (
    CxrAgentError,
    DimensionMismatch,
    LabelError,
    SingleClass,
    TrainingDiverged,
    UnknownBlock,
)
from .ingest import EmbeddingTable
from .metrics import auc
from .tools import FeatureRecord

logger = logging.getLogger(__name__)

BLOCK_RADIOMICS = "radiomics"
BLOCK_XAI = "xai"
BLOCK_TEXT = "text_embedding"
BLOCK_VOCAB = "vocab_indicator"
BLOCK_ORDER = (BLOCK_RADIOMICS, BLOCK_XAI, BLOCK_TEXT, BLOCK_VOCAB)
BLOCK_ALIASES = {"text": BLOCK_TEXT, "vocab": BLOCK_VOCAB}

MIN_STD = 1e-12
MAX_STEP_HALVINGS = 40
GRAD_TOLERANCE = 1e-8


class FeatureMatrix(BaseModel):
    """Row-per-study feature matrix whose columns are split into named blocks."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    study_ids: Tuple[str, ...]
    values: np.ndarray
    labels: np.ndarray
    blocks: Dict[str, Tuple[int, int]]

    @model_validator(mode="after")
    def _consistent(self) -> "FeatureMatrix":
        if self.values.ndim != 2:
            raise ValueError("feature values must be 2D")
        rows, cols = self.values.shape
        if len(self.study_ids) != rows or self.labels.shape != (rows,):
            raise ValueError("study ids, labels and rows disagree")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")
        cursor = 0
        for name, (start, stop) in sorted(self.blocks.items(), key=lambda kv: kv[1]):
            if start != cursor or stop <= start:
                raise ValueError(f"block {name} [{start}, {stop}) breaks the column partition")
            cursor = stop
        if cursor != cols:
            raise ValueError(f"blocks cover {cursor} of {cols} columns")
        return self

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def select(self, blocks: Sequence[str]) -> np.ndarray:
        """Columns of the named blocks, in the order given."""
        spans = []
        for name in blocks:
            key = BLOCK_ALIASES.get(name, name)
            if key not in self.blocks:
                raise UnknownBlock(
                    f"unknown feature block {name!r}; available: {sorted(self.blocks)}"
                )
            spans.append(self.blocks[key])
        return np.concatenate([self.values[:, a:b] for a, b in spans], axis=1)


def assemble_matrix(
    study_ids: Sequence[str],
    labels: Sequence[int],
    blocks: Dict[str, np.ndarray],
) -> FeatureMatrix:
    """Concatenate per-block arrays in canonical block order."""
    ordered = [name for name in BLOCK_ORDER if name in blocks]
    ordered += sorted(name for name in blocks if name not in BLOCK_ORDER)
    spans: Dict[str, Tuple[int, int]] = {}
    cursor = 0
    for name in ordered:
        width = blocks[name].shape[1]
        spans[name] = (cursor, cursor + width)
        cursor += width
    values = np.concatenate([np.asarray(blocks[n], dtype=np.float64) for n in ordered], axis=1)
    return FeatureMatrix(
        study_ids=tuple(study_ids),
        values=values,
        labels=np.asarray(labels, dtype=np.int64),
        blocks=spans,
    )


def build_feature_matrix(
    records: Sequence[FeatureRecord],
    vocab: Vocabulary,
    embeddings: Optional[EmbeddingTable] = None,
    label_name: str = "label",
) -> FeatureMatrix:
    """Feature matrix over records with a known binary label.

    A block is included only when every kept record provides it. Records
    missing from the embedding table are dropped when one is given.
    Vocabulary features are binary indicators, one column per sorted term.
    """
    kept: List[FeatureRecord] = []
    labels: List[int] = []
    for rec in records:
        value = rec.label(label_name)
        if value is None:
            continue
        if embeddings is not None and rec.study_id not in embeddings.vectors:
            logger.warning(f"Study {rec.study_id} has no text embedding; dropped")
            continue
        kept.append(rec)
        labels.append(value)
    if not kept:
        raise LabelError(f"no record carries a known {label_name!r} label")

    blocks: Dict[str, np.ndarray] = {}
    if all(r.radiomics is not None for r in kept):
        blocks[BLOCK_RADIOMICS] = np.stack([r.radiomics.vector() for r in kept])
    if all(r.xai is not None for r in kept):
        blocks[BLOCK_XAI] = np.stack([r.xai.vector() for r in kept])
    if embeddings is not None:
        blocks[BLOCK_TEXT] = np.stack(
            [np.asarray(embeddings.vectors[r.study_id]) for r in kept]
        )
    terms = vocab.sorted_terms()
    matched = [set(r.anchors.matched) for r in kept]
    blocks[BLOCK_VOCAB] = np.asarray(
        [[1.0 if t in m else 0.0 for t in terms] for m in matched]
    )
    logger.info(f"Feature matrix: {len(kept)} rows, blocks {sorted(blocks)}")
    return assemble_matrix([r.study_id for r in kept], labels, blocks)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LogisticModel(BaseModel):
    """Standardized-input logistic regression; zero-variance columns dropped."""

    model_config = ConfigDict(frozen=True)

    weights: Tuple[float, ...]
    bias: float
    kept_columns: Tuple[int, ...]
    means: Tuple[float, ...]
    stds: Tuple[float, ...]
    n_features: int = Field(ge=1)
    train_config: TrainConfig
    loss_history: Tuple[float, ...]

    def _standardize(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"model expects {self.n_features} features, got shape {X.shape}"
            )
        cols = list(self.kept_columns)
        return (X[:, cols] - np.asarray(self.means)) / np.asarray(self.stds)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return self._standardize(X) @ np.asarray(self.weights) + self.bias

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision_function(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.decision_function(X) >= 0.0).astype(np.int64)


def _loss(Z: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, l2: float) -> float:
    z = Z @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w))


def _curvature_bound(Z: np.ndarray, l2: float) -> float:
    """Lipschitz constant of the regularized log-loss gradient in (w, b)."""
    design = np.column_stack([Z, np.ones(Z.shape[0])])
    return 0.25 * float(np.linalg.norm(design, 2)) ** 2 / Z.shape[0] + l2


def train_logistic(X: np.ndarray, y: Sequence[int], cfg: TrainConfig) -> LogisticModel:
    """Full-batch gradient descent on mean log-loss plus (l2/2)||w||^2.

    Every epoch starts from the larger of the configured learning rate and
    the inverse curvature bound, then halves the step while it would raise
    the loss, so the recorded loss never increases. Training stops once the
    gradient norm drops below GRAD_TOLERANCE or after `cfg.epochs` epochs.
    Weights start from a small seeded random draw; with l2 > 0 the optimum
    is unique and the draw does not affect the converged weights.

    Raises:
        DimensionMismatch: X is not 2D or rows differ from labels.
        LabelError: labels are not 0/1.
        SingleClass: only one class present.
        TrainingDiverged: the loss history is not monotone.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(y)
    if X.ndim != 2 or labels.shape != (X.shape[0],):
        raise DimensionMismatch(f"features {X.shape} vs labels {labels.shape}")
    if X.shape[0] < 2:
        raise DimensionMismatch("training needs at least two rows")
    if not np.all(np.isin(labels, (0, 1))):
        raise LabelError("labels must be 0 or 1")
    labels = labels.astype(np.float64)
    if labels.min() == labels.max():
        raise SingleClass("training labels contain a single class")

    means = X.mean(axis=0)
    stds = X.std(axis=0)
    kept = np.flatnonzero(stds >= MIN_STD)
    if kept.size < X.shape[1]:
        logger.info(f"Dropping {X.shape[1] - kept.size} zero-variance columns")
    Z = (X[:, kept] - means[kept]) / stds[kept]
    n = Z.shape[0]

    rng = np.random.default_rng(cfg.seed)
    w = rng.normal(0.0, 0.01, size=kept.size)
    b = 0.0
    initial_step = max(cfg.learning_rate, 1.0 / _curvature_bound(Z, cfg.l2_lambda))
    loss = _loss(Z, labels, w, b, cfg.l2_lambda)
    history = [loss]

    for _ in range(cfg.epochs):
        residual = _sigmoid(Z @ w + b) - labels
        grad_w = Z.T @ residual / n + cfg.l2_lambda * w
        grad_b = float(residual.mean())
        if np.sqrt(np.dot(grad_w, grad_w) + grad_b * grad_b) < GRAD_TOLERANCE:
            break
        step = initial_step
        for _ in range(MAX_STEP_HALVINGS):
            w_new = w - step * grad_w
            b_new = b - step * grad_b
            new_loss = _loss(Z, labels, w_new, b_new, cfg.l2_lambda)
            if new_loss <= loss:
                break
            step *= 0.5
        else:
            break
        w, b, loss = w_new, b_new, new_loss
        history.append(loss)

    if np.any(np.diff(history) > 0):
        raise TrainingDiverged("training loss increased between epochs")

    return LogisticModel(
        weights=tuple(w.tolist()),
        bias=b,
        kept_columns=tuple(int(c) for c in kept),
        means=tuple(means[kept].tolist()),
        stds=tuple(stds[kept].tolist()),
        n_features=X.shape[1],
        train_config=cfg,
        loss_history=tuple(history),
    )


def stratified_split(
    labels: Sequence[int], test_fraction: float, seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded per-class shuffle; each class keeps its share in both parts."""
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        n_test = int(round(idx.size * test_fraction))
        if idx.size >= 2:
            n_test = min(max(n_test, 1), idx.size - 1)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


class AblationConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    blocks: Tuple[str, ...] = Field(min_length=1)


DEFAULT_CONFIGURATIONS: Tuple[AblationConfig, ...] = (
    AblationConfig(name="Radiomics only", blocks=(BLOCK_RADIOMICS,)),
    AblationConfig(name="XAI only", blocks=(BLOCK_XAI,)),
    AblationConfig(name="Text only", blocks=(BLOCK_TEXT,)),
    AblationConfig(name="Radiomics + Text", blocks=(BLOCK_RADIOMICS, BLOCK_TEXT)),
    AblationConfig(name="XAI + Text", blocks=(BLOCK_XAI, BLOCK_TEXT)),
    AblationConfig(
        name="Radiomics + XAI + Text", blocks=(BLOCK_RADIOMICS, BLOCK_XAI, BLOCK_TEXT)
    ),
)


def parse_configuration(text: str) -> AblationConfig:
    """A `radiomics+text` style configuration; block names separated by `+` or `,`."""
    blocks = tuple(b.strip() for b in text.replace(",", "+").split("+") if b.strip())
    if not blocks:
        raise UnknownBlock(f"empty configuration: {text!r}")
    return AblationConfig(name=text, blocks=blocks)


class AblationRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    configuration: str
    blocks: Tuple[str, ...]
    auc: Optional[float] = None
    n_features: Optional[int] = None
    n_train: int = 0
    n_test: int = 0
    error: Optional[str] = None


class AblationTable(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int
    rows: Tuple[AblationRow, ...]

    @property
    def failures(self) -> int:
        return sum(1 for r in self.rows if r.error is not None)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "Feature Configuration": r.configuration,
                    "AUC": "error" if r.auc is None else f"{r.auc:.3f}",
                    "Features": "" if r.n_features is None else r.n_features,
                    "Train": r.n_train,
                    "Test": r.n_test,
                    "Error": r.error or "",
                }
                for r in self.rows
            ]
        )

    def to_text(self) -> str:
        return self.to_frame().to_string(index=False)


def run_ablation(
    matrix: FeatureMatrix,
    configurations: Sequence[AblationConfig],
    cfg: TrainConfig,
    concurrency: int = 4,
) -> AblationTable:
    """Train and score each configuration on one shared stratified split.

    A failing configuration yields a row with `error` set; others complete.
    """
    if not configurations:
        raise UnknownBlock("at least one configuration is required")
    train_idx, test_idx = stratified_split(matrix.labels, cfg.test_fraction, cfg.seed)
    y_train, y_test = matrix.labels[train_idx], matrix.labels[test_idx]

    def score(conf: AblationConfig) -> AblationRow:
        try:
            X = matrix.select(conf.blocks)
            model = train_logistic(X[train_idx], y_train, cfg)
            value = auc(model.decision_function(X[test_idx]), y_test)
        except CxrAgentError as e:
            logger.warning(f"Ablation configuration {conf.name!r} failed: {e}")
            return AblationRow(
                configuration=conf.name,
                blocks=conf.blocks,
                n_train=int(train_idx.size),
                n_test=int(test_idx.size),
                error=f"{type(e).__name__}: {e}",
            )
        logger.info(f"{conf.name}: AUC {value:.4f}")
        return AblationRow(
            configuration=conf.name,
            blocks=conf.blocks,
            auc=value,
            n_features=int(X.shape[1]),
            n_train=int(train_idx.size),
            n_test=int(test_idx.size),
        )

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        rows = tuple(pool.map(score, configurations))
    return AblationTable(seed=cfg.seed, rows=rows)
