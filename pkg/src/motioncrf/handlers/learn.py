"""Handler for the ``learn`` command."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..config import read_key_values
from ..errors import ConfigError, InvalidParameter, MotionCRFError, ShapeMismatch
from ..grid import MOTION_LABELS, GridShape, LabelField, LabelSpace, load_array, read_label_map
from ..learning import (
    BoostedModel,
    TrainingSet,
    compute_lambda,
    cooccurrence_lambda,
    read_training_csv,
    train_joint_boost,
    training_set_from_label_maps,
)
from ..potentials import CorrelationMatrix, write_correlation_csv
from ..utils.messages import format_message
from ..utils.response import create_command_response
from .base import BaseCommandHandler

logger = logging.getLogger(__name__)

MODES = ("boost", "cooccurrence")


def load_label_space(path: Optional[str]) -> Optional[LabelSpace]:
    """Read ``object_labels`` from a labels config file."""
    if path is None:
        return None
    values = read_key_values(path)
    if "object_labels" not in values:
        raise ConfigError(f"{path}: key 'object_labels' is missing")
    return LabelSpace.parse(values["object_labels"])


def _label_maps(request: Dict[str, Any], labels: LabelSpace) -> List[tuple]:
    objects: Sequence[str] = request.get("gt_object") or []
    motions: Sequence[str] = request.get("gt_motion") or []
    if not objects or len(objects) != len(motions):
        raise ConfigError("give the same positive number of object and motion label maps")
    for path in (*objects, *motions):
        if not Path(path).is_file():
            raise ConfigError(f"{path}: file not found")
    return [(read_label_map(o, labels), read_label_map(m, MOTION_LABELS)) for o, m in zip(objects, motions)]


def _training_data(request: Dict[str, Any], labels: Optional[LabelSpace]) -> TrainingSet:
    if request.get("training"):
        path = Path(request["training"])
        if not path.is_file():
            raise ConfigError(f"{path}: file not found")
        return read_training_csv(path, labels)
    if labels is None:
        raise ConfigError("label maps need a labels config (--labels)")
    features: Sequence[str] = request.get("features") or []
    pairs = _label_maps(request, labels)
    if len(features) != len(pairs):
        raise ConfigError("boost mode needs one feature tensor per label-map pair")
    parts = []
    for feature_path, (gt_object, gt_motion) in zip(features, pairs):
        if not Path(feature_path).is_file():
            raise ConfigError(f"{feature_path}: file not found")
        try:
            table = load_array(feature_path)
            parts.append(training_set_from_label_maps(table, gt_object, gt_motion, int(request.get("block", 1))))
        except ShapeMismatch as exc:
            raise ShapeMismatch(f"{feature_path}: {exc}") from None
    return TrainingSet.concat(parts)


def _log_learners(model: BoostedModel) -> None:
    for c, name in enumerate(model.label_names):
        chosen = [model.learners[s][c].describe(model.label_names) for s in range(model.rounds)]
        logger.info("%s learners: %s", name, ", ".join(chosen))


def _cooccurrence(request: Dict[str, Any], labels: Optional[LabelSpace], w_corr: float) -> CorrelationMatrix:
    if request.get("training"):
        data = _training_data(request, labels)
        shape = GridShape(1, data.size)
        return cooccurrence_lambda(
            [LabelField(shape, data.object_labels, data.object_index)],
            [LabelField(shape, MOTION_LABELS, data.motion_index)],
            w_corr,
        )
    if labels is None:
        raise ConfigError("label maps need a labels config (--labels)")
    pairs = _label_maps(request, labels)
    return cooccurrence_lambda([o for o, _ in pairs], [m for _, m in pairs], w_corr)


class LearnHandler(BaseCommandHandler):
    """Learn the class-motion correlation matrix.

    Request keys: ``mode`` (boost or cooccurrence), ``output`` (CSV path),
    ``training`` (CSV) or ``gt_object``/``gt_motion``/``features`` lists,
    ``labels`` (labels config), ``rounds``, ``seed``, ``block``, ``w_corr``
    and optionally ``model_output`` for the boosted model as JSON.
    """

    @property
    def command(self) -> str:
        """Return the subcommand name."""
        return "learn"

    async def process_request(self, request: Dict[str, Any]) -> Dict[str, Any]:
        """Train or count, then write the correlation CSV."""
        mode = request.get("mode", "boost")
        output = Path(request["output"])
        outputs = [str(output)]
        try:
            if mode not in MODES:
                raise InvalidParameter(f"mode must be one of {MODES}, got {mode!r}")
            labels = load_label_space(request.get("labels"))
            w_corr = float(request.get("w_corr", 1.0))
            model = None
            if mode == "boost":
                rounds = int(request.get("rounds", 10))
                if rounds < 2:
                    raise InvalidParameter(f"boost mode needs at least 2 rounds, got {rounds}")
                data = _training_data(request, labels)
                model = train_joint_boost(data, rounds, seed=int(request.get("seed", 0)))
                _log_learners(model)
                matrix = compute_lambda(model, w_corr)
            else:
                matrix = _cooccurrence(request, labels, w_corr)
            try:
                output.parent.mkdir(parents=True, exist_ok=True)
                write_correlation_csv(output, matrix)
                if model is not None and request.get("model_output"):
                    with open(request["model_output"], "w", encoding="utf-8") as handle:
                        json.dump(model.to_dict(), handle, sort_keys=True)
                        handle.write("\n")
                    outputs.append(str(request["model_output"]))
            except OSError as exc:
                raise ConfigError(f"{exc.filename or output}: cannot write ({exc.strerror})") from None
        except MotionCRFError as exc:
            return self.create_fallback_response(exc)

        logger.info("lambda range [%.3f, %.3f]", float(np.min(matrix.values)), float(np.max(matrix.values)))
        message = format_message("learn_success", mode=mode, count=matrix.object_labels.count, output=output)
        return create_command_response(0, message, outputs)
