"""Learning the class-motion correlation matrix.

``train_joint_boost`` runs one exponential-loss boosting problem per label
(every object label and both motion labels) in lock-step rounds. In round
``s`` a label may pick a decision stump or reuse another label's strong
classifier from round ``s - 1``; the weight given to a reused classifier is
its reuse weight ``beta``. ``compute_lambda`` turns the reuse weights into
the object-by-motion correlation matrix. ``cooccurrence_lambda`` estimates
the same matrix from ground-truth label maps alone.
"""

import csv
import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, DegenerateLabel, EmptyData, InvalidParameter, ShapeMismatch, UntrainedModel
from .grid import MOTION_LABELS, LabelField, LabelSpace, PathLike
from .potentials import CorrelationMatrix

logger = logging.getLogger(__name__)

NORMALIZATION_EPS = 1e-12
ERROR_CLIP = 1e-10
MIN_INSTANCES = 10


@dataclass(frozen=True)
class TrainingSet:
    """Feature vectors with one object label and one motion label per instance."""

    features: np.ndarray
    object_labels: LabelSpace
    object_index: np.ndarray
    motion_index: np.ndarray

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise ShapeMismatch(f"features must be N x D, got {features.shape}")
        if not np.all(np.isfinite(features)):
            raise DataError("training features must be finite")
        objects = np.array(self.object_index, dtype=np.int64).reshape(-1)
        motions = np.array(self.motion_index, dtype=np.int64).reshape(-1)
        if objects.size != features.shape[0] or motions.size != features.shape[0]:
            raise ShapeMismatch("every instance needs one object and one motion label")
        if objects.size and (objects.min() < 0 or objects.max() >= self.object_labels.count):
            raise DataError("object label index out of range")
        if motions.size and (motions.min() < 0 or motions.max() >= MOTION_LABELS.count):
            raise DataError("motion label index out of range")
        for array in (features, objects, motions):
            array.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "object_index", objects)
        object.__setattr__(self, "motion_index", motions)

    @property
    def size(self) -> int:
        """Number of instances."""
        return int(self.features.shape[0])

    @property
    def label_names(self) -> Tuple[str, ...]:
        """Object labels followed by motion labels."""
        return self.object_labels.names + MOTION_LABELS.names

    def targets(self) -> np.ndarray:
        """Return ``(N, n + 2)`` indicator targets in ``{-1, +1}``."""
        n = self.object_labels.count
        out = -np.ones((self.size, n + MOTION_LABELS.count))
        out[np.arange(self.size), self.object_index] = 1.0
        out[np.arange(self.size), n + self.motion_index] = 1.0
        return out

    @classmethod
    def concat(cls, parts: Sequence["TrainingSet"]) -> "TrainingSet":
        """Stack training sets that share a label space and feature width."""
        if not parts:
            raise EmptyData("no training sets to concatenate")
        labels = parts[0].object_labels
        if any(part.object_labels != labels for part in parts):
            raise ShapeMismatch("training sets use different object label spaces")
        return cls(
            np.vstack([part.features for part in parts]),
            labels,
            np.concatenate([part.object_index for part in parts]),
            np.concatenate([part.motion_index for part in parts]),
        )


def read_training_csv(path: PathLike, object_labels: Optional[LabelSpace] = None) -> TrainingSet:
    """Read instances: ``D`` feature columns, then object and motion label names.

    A header row is skipped when its first field is not numeric. Without
    ``object_labels`` the label space is the object names in order of first
    appearance.
    """
    with open(path, newline="", encoding="utf-8") as handle:
        rows = [row for row in csv.reader(handle) if row]
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise EmptyData(f"{path}: no training instances")
    widths = {len(row) for row in rows}
    if len(widths) != 1 or widths.pop() < 3:
        raise DataError(f"{path}: rows must have the same number of fields, at least 3")
    names = [row[-2].strip() for row in rows]
    if object_labels is None:
        object_labels = LabelSpace(tuple(dict.fromkeys(names)))
    try:
        features = np.array([[float(v) for v in row[:-2]] for row in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    objects = [object_labels.index(name) for name in names]
    motions = [MOTION_LABELS.index(row[-1].strip()) for row in rows]
    return TrainingSet(features, object_labels, np.array(objects), np.array(motions))


def write_training_csv(path: PathLike, data: TrainingSet) -> None:
    """Write a training set in the layout read by :func:`read_training_csv`."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([f"f{k}" for k in range(data.features.shape[1])] + ["object", "motion"])
        for row, obj, mot in zip(data.features, data.object_index, data.motion_index):
            writer.writerow([repr(float(v)) for v in row] + [data.object_labels.names[obj], MOTION_LABELS.names[mot]])


def _majority(values: np.ndarray, count: int) -> int:
    return int(np.argmax(np.bincount(values, minlength=count)))


def training_set_from_label_maps(
    features: np.ndarray, gt_object: LabelField, gt_motion: LabelField, block: int = 1
) -> TrainingSet:
    """Pool per-pixel features over square blocks into training instances.

    Each ``block x block`` tile (partial tiles at the borders included)
    becomes one instance with the mean feature vector over its labelled
    pixels and the majority object and motion label. ``block = 1`` gives
    one instance per labelled pixel.
    """
    if block < 1:
        raise InvalidParameter(f"block size must be >= 1, got {block}")
    shape = gt_object.shape
    grid = np.asarray(features, dtype=np.float64)
    if grid.ndim == 2:
        grid = grid[:, :, None]
    if grid.shape[:2] != (shape.height, shape.width) or gt_motion.shape != shape:
        raise ShapeMismatch("features and label maps must share a grid")
    valid = gt_object.valid & gt_motion.valid
    rows: List[np.ndarray] = []
    objects: List[int] = []
    motions: List[int] = []
    for top in range(0, shape.height, block):
        for left in range(0, shape.width, block):
            mask = valid[top : top + block, left : left + block]
            if not np.any(mask):
                continue
            tile = grid[top : top + block, left : left + block][mask]
            rows.append(tile.mean(axis=0))
            objects.append(_majority(gt_object.assignment[top : top + block, left : left + block][mask], gt_object.labels.count))
            motions.append(_majority(gt_motion.assignment[top : top + block, left : left + block][mask], MOTION_LABELS.count))
    if not rows:
        raise EmptyData("label maps contain no labelled pixels")
    return TrainingSet(np.array(rows), gt_object.labels, np.array(objects), np.array(motions))


# Joint boosting


@dataclass(frozen=True)
class WeakLearner:
    """A decision stump or a reused strong classifier ``sign * sgn(H_{s-1, source})``."""

    kind: str
    feature: int = -1
    threshold: float = 0.0
    polarity: int = 1
    source: int = -1

    def describe(self, names: Sequence[str]) -> str:
        """Describe the stump in terms of feature names."""
        if self.kind == "stump":
            op = ">" if self.polarity > 0 else "<="
            return f"t[{self.feature}] {op} {self.threshold:.6g}"
        return f"{'+' if self.polarity > 0 else '-'}H[{names[self.source]}]"


def _sign(values: np.ndarray) -> np.ndarray:
    return np.where(values >= 0, 1.0, -1.0)


def _stump(features: np.ndarray, learner: WeakLearner) -> np.ndarray:
    return learner.polarity * np.where(features[:, learner.feature] > learner.threshold, 1.0, -1.0)


@dataclass(frozen=True)
class BoostedModel:
    """Per-label boosted classifiers with reuse weights.

    Attributes:
        label_names: Object labels followed by ``stationary`` and ``moving``.
        object_count: Number of object labels ``n``.
        learners: ``learners[s][c]`` is the weak learner of label ``c`` in round ``s``.
        alpha: ``(S, n + 2)`` learner weights.
        reuse_weights: ``(S, n + 2, n + 2, 2)``; ``[s, c, m, 0]`` is the weight of
            ``+H_{s-1, m}`` in label ``c``'s round ``s``, ``[..., 1]`` of ``-H_{s-1, m}``.
        loss_history: ``(n + 2, S)`` exponential loss after each round.
    """

    label_names: Tuple[str, ...]
    object_count: int
    learners: Tuple[Tuple[WeakLearner, ...], ...]
    alpha: np.ndarray
    reuse_weights: np.ndarray
    loss_history: np.ndarray
    feature_count: int = 0

    @property
    def rounds(self) -> int:
        """Number of boosting rounds ``S``."""
        return int(self.alpha.shape[0])

    def strong_scores(self, features: np.ndarray, rounds: Optional[int] = None) -> np.ndarray:
        """Evaluate every label's strong classifier ``H`` on ``(N, D)`` features.

        Args:
            features: Instances to score.
            rounds: Stop after this many rounds; defaults to all.

        Returns:
            ``(N, n + 2)`` scores; the sign is the one-vs-all decision.
        """
        table = np.asarray(features, dtype=np.float64)
        limit = self.rounds if rounds is None else min(rounds, self.rounds)
        scores = np.zeros((table.shape[0], len(self.label_names)))
        for s in range(limit):
            previous = scores.copy()
            for c, learner in enumerate(self.learners[s]):
                if learner.kind == "stump":
                    h = _stump(table, learner)
                else:
                    h = learner.polarity * _sign(previous[:, learner.source])
                scores[:, c] += self.alpha[s, c] * h
        return scores

    def to_dict(self) -> dict:
        """Return a JSON-serializable form."""
        return {
            "label_names": list(self.label_names),
            "object_count": self.object_count,
            "learners": [
                [
                    {
                        "kind": w.kind,
                        "feature": w.feature,
                        "threshold": w.threshold,
                        "polarity": w.polarity,
                        "source": w.source,
                    }
                    for w in row
                ]
                for row in self.learners
            ],
            "alpha": self.alpha.tolist(),
            "reuse_weights": self.reuse_weights.tolist(),
            "loss_history": self.loss_history.tolist(),
        }


def _thresholds(column: np.ndarray, limit: int, rng: np.random.Generator) -> np.ndarray:
    values = np.unique(column)
    if values.size < 2:
        return np.empty(0)
    mids = 0.5 * (values[:-1] + values[1:])
    if mids.size > limit:
        mids = np.sort(rng.choice(mids, size=limit, replace=False))
    return mids


def train_joint_boost(
    data: TrainingSet, rounds: int, seed: int = 0, max_thresholds: int = 64
) -> BoostedModel:
    """Train per-label boosted classifiers with cross-label classifier reuse.

    Candidates of label ``c`` in round ``s`` are enumerated in a fixed order:
    ``+sgn(H_{s-1, m})`` for every other label ``m`` ascending, then
    ``-sgn(H_{s-1, m})`` likewise, then decision stumps by feature, threshold
    and polarity. The first candidate with the lowest weighted error wins, so
    ties favour reuse.

    Args:
        data: Training instances; at least 10.
        rounds: Boosting rounds ``S``; at least 2.
        seed: Seeds the threshold subsampling of features with many values.
        max_thresholds: Candidate thresholds kept per feature.

    Returns:
        The trained model.

    Raises:
        EmptyData: Too few instances or no usable weak learner.
        DegenerateLabel: A label has the same target for every instance.
        InvalidParameter: ``rounds < 2``.
    """
    if rounds < 2:
        raise InvalidParameter(f"boosting needs at least 2 rounds, got {rounds}")
    if data.size < MIN_INSTANCES:
        raise EmptyData(f"boosting needs at least {MIN_INSTANCES} instances, got {data.size}")
    names = data.label_names
    targets = data.targets()
    constant = [names[c] for c in range(len(names)) if np.all(targets[:, c] == targets[0, c])]
    if constant:
        raise DegenerateLabel(f"labels {constant} have identical targets for every instance")

    rng = np.random.default_rng(seed)
    stumps: List[WeakLearner] = []
    outputs: List[np.ndarray] = []
    for feature in range(data.features.shape[1]):
        column = data.features[:, feature]
        for threshold in _thresholds(column, max_thresholds, rng):
            base = np.where(column > threshold, 1.0, -1.0)
            for polarity in (1, -1):
                stumps.append(WeakLearner("stump", feature, float(threshold), polarity))
                outputs.append(polarity * base)
    stump_outputs = np.array(outputs).reshape(len(outputs), data.size)

    labels = len(names)
    weights = np.full((labels, data.size), 1.0 / data.size)
    scores = np.zeros((data.size, labels))
    alpha = np.zeros((rounds, labels))
    reuse = np.zeros((rounds, labels, labels, 2))
    loss = np.zeros((labels, rounds))
    learners: List[Tuple[WeakLearner, ...]] = []

    for s in range(rounds):
        previous = _sign(scores) if s > 0 else None
        chosen: List[WeakLearner] = []
        for c in range(labels):
            pool: List[WeakLearner] = []
            pool_outputs: List[np.ndarray] = []
            if previous is not None:
                others = [m for m in range(labels) if m != c]
                for polarity in (1, -1):
                    for m in others:
                        pool.append(WeakLearner("reuse", polarity=polarity, source=m))
                        pool_outputs.append(polarity * previous[:, m])
            candidates = np.vstack(pool_outputs + [stump_outputs]) if pool_outputs else stump_outputs
            if candidates.shape[0] == 0:
                raise EmptyData("no weak learner can be formed: every feature is constant")
            mistakes = candidates != targets[:, c][None, :]
            errors = mistakes @ weights[c]
            best = int(np.argmin(errors))
            learner = pool[best] if best < len(pool) else stumps[best - len(pool)]
            eps = float(np.clip(errors[best], ERROR_CLIP, 1.0 - ERROR_CLIP))
            a = 0.5 * math.log((1.0 - eps) / eps)
            alpha[s, c] = a
            if learner.kind == "reuse":
                reuse[s, c, learner.source, 0 if learner.polarity > 0 else 1] = a
            h = candidates[best]
            scores[:, c] += a * h
            updated = weights[c] * np.exp(-a * targets[:, c] * h)
            weights[c] = updated / updated.sum()
            loss[c, s] = float(np.mean(np.exp(-targets[:, c] * scores[:, c])))
            chosen.append(learner)
        learners.append(tuple(chosen))
        logger.debug("boosting round %d: mean loss %.4f", s + 1, float(loss[:, s].mean()))

    increases = np.diff(loss, axis=1) > 1e-12 * np.maximum(loss[:, :-1], 1.0)
    if np.any(increases):
        logger.warning("exponential loss increased for labels %s", [names[c] for c in np.flatnonzero(increases.any(axis=1))])
    logger.info("boosting: %d labels, %d rounds, final mean loss %.4f", labels, rounds, float(loss[:, -1].mean()))
    return BoostedModel(
        label_names=names,
        object_count=data.object_labels.count,
        learners=tuple(learners),
        alpha=alpha,
        reuse_weights=reuse,
        loss_history=loss,
        feature_count=int(data.features.shape[1]),
    )


def compute_lambda(model: BoostedModel, w_corr: float = 1.0) -> CorrelationMatrix:
    """Turn reuse weights into the object-by-motion correlation matrix.

    ``raw(l, m) = sum_{s >= 2} alpha[s, l] * (beta_s(+H_m) - beta_s(-H_m))``,
    divided by ``max(sum_s alpha[s, l], 1e-12)``, clipped to ``[-1, 1]`` and
    negated so that positive reuse becomes a low (compatible) cost.
    """
    if model.rounds < 2:
        raise UntrainedModel(f"lambda needs at least 2 rounds, model has {model.rounds}")
    n = model.object_count
    motion_cols = slice(n, n + MOTION_LABELS.count)
    beta = model.reuse_weights[1:, :n, motion_cols, :]
    raw = np.einsum("sl,slm->lm", model.alpha[1:, :n], beta[..., 0] - beta[..., 1])
    totals = np.maximum(model.alpha[:, :n].sum(axis=0), NORMALIZATION_EPS)
    values = -np.clip(raw / totals[:, None], -1.0, 1.0)
    return CorrelationMatrix(LabelSpace(model.label_names[:n]), values + 0.0, w_corr)


def cooccurrence_lambda(
    labels_object: Iterable[LabelField], labels_motion: Iterable[LabelField], w_corr: float = 1.0
) -> CorrelationMatrix:
    """Estimate ``lambda = -phi`` from paired ground-truth label maps.

    ``phi(l, m)`` is the Pearson correlation of the indicators ``[x = l]``
    and ``[y = m]`` over pixels labelled in both maps; it is 0 when either
    indicator is constant.
    """
    objects: List[np.ndarray] = []
    motions: List[np.ndarray] = []
    space: Optional[LabelSpace] = None
    for obj, mot in zip(labels_object, labels_motion):
        if obj.shape != mot.shape:
            raise ShapeMismatch("paired label maps must share a grid")
        if space is not None and obj.labels != space:
            raise ShapeMismatch("object label maps use different label spaces")
        space = obj.labels
        valid = obj.valid & mot.valid
        objects.append(obj.assignment[valid].astype(np.int64))
        motions.append(mot.assignment[valid].astype(np.int64))
    if space is None or not sum(o.size for o in objects):
        raise EmptyData("no pixel is labelled in both layers")
    x = np.concatenate(objects)
    y = np.concatenate(motions)
    a = (x[:, None] == np.arange(space.count)[None, :]).astype(np.float64)
    b = (y[:, None] == np.arange(MOTION_LABELS.count)[None, :]).astype(np.float64)
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    cov = (da.T @ db) / x.size
    scale = np.sqrt(np.outer((da * da).sum(axis=0) / x.size, (db * db).sum(axis=0) / x.size))
    phi = np.divide(cov, scale, out=np.zeros_like(cov), where=scale > 0)
    absent = [space.names[l] for l in np.flatnonzero(a.sum(axis=0) == 0)]
    if absent:
        logger.warning("object labels absent from the data get no correlation: %s", absent)
    return CorrelationMatrix(space, np.clip(-phi, -1.0, 1.0) + 0.0, w_corr)
