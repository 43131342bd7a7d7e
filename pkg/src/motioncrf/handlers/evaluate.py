"""Handler for the ``eval`` command."""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Set, Tuple

from ..errors import ConfigError, DataError, MotionCRFError
from ..evaluation import ConfusionMatrix, accumulate_confusion, mean_iou, write_metrics_csv
from ..grid import MOTION_LABELS, LabelSpace, read_label_map
from ..utils.messages import format_message
from ..utils.response import create_command_response
from .base import BaseCommandHandler
from .learn import load_label_space

logger = logging.getLogger(__name__)

LAYER_FILES = {"object": "labels_object.pgm", "motion": "labels_motion.pgm"}
# written by infer next to the CRF labels, never scored
UNSCORED_FILES = ("labels_motion_geometric.pgm",)


def _label_maps(root: Path) -> Set[Path]:
    return {path.relative_to(root) for path in root.rglob("*.pgm") if path.name not in UNSCORED_FILES}


def check_file_sets(pred_dir: Path, gt_dir: Path) -> None:
    """Require both trees to hold the same label maps at the same relative paths.

    Raises:
        ConfigError: Naming the first unknown, missing or extra file.
    """
    pred, gt = _label_maps(pred_dir), _label_maps(gt_dir)
    known = sorted(LAYER_FILES.values())
    for root, found in ((pred_dir, pred), (gt_dir, gt)):
        unknown = sorted(path for path in found if path.name not in known)
        if unknown:
            raise ConfigError(f"{root / unknown[0]}: unknown label map (expected one of {', '.join(known)})")
    missing = sorted(gt - pred)
    if missing:
        raise ConfigError(f"{pred_dir / missing[0]}: file not found (prediction for {gt_dir / missing[0]})")
    extra = sorted(pred - gt)
    if extra:
        raise ConfigError(f"{pred_dir / extra[0]}: no ground truth at {gt_dir / extra[0]}")


def matching_pairs(pred_dir: Path, gt_dir: Path, name: str) -> List[Tuple[Path, Path]]:
    """Pair every ground-truth ``name`` under ``gt_dir`` with the same relative path under ``pred_dir``."""
    return [(pred_dir / gt.relative_to(gt_dir), gt) for gt in sorted(gt_dir.rglob(name))]


def evaluate_layer(pairs: List[Tuple[Path, Path]], labels: LabelSpace) -> ConfusionMatrix:
    """Accumulate one confusion matrix over all image pairs."""
    cm = ConfusionMatrix.empty(labels)
    for pred, gt in pairs:
        try:
            cm = accumulate_confusion(read_label_map(pred, labels), read_label_map(gt, labels), cm)
        except DataError as exc:
            raise type(exc)(f"{pred}: {exc}") from None
    return cm


def _score(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4f}"


class EvaluateHandler(BaseCommandHandler):
    """Score predicted label maps against ground truth.

    Request keys: ``pred_dir``, ``gt_dir``, ``labels`` (labels config) and
    ``output_dir`` for ``iou_object.csv`` and ``iou_motion.csv``.
    """

    @property
    def command(self) -> str:
        """Return the subcommand name."""
        return "eval"

    async def process_request(self, request: Dict[str, Any]) -> Dict[str, Any]:
        """Accumulate confusion over matching files and write the IoU tables."""
        pred_dir, gt_dir = Path(request["pred_dir"]), Path(request["gt_dir"])
        output_dir = Path(request["output_dir"])
        outputs: List[str] = []
        scores: Dict[str, Optional[float]] = {"object": None, "motion": None}
        images = 0
        try:
            for path in (pred_dir, gt_dir):
                if not path.is_dir():
                    raise ConfigError(f"{path}: directory not found")
            check_file_sets(pred_dir, gt_dir)
            spaces = {"object": load_label_space(request.get("labels")), "motion": MOTION_LABELS}
            layers = {layer: matching_pairs(pred_dir, gt_dir, name) for layer, name in LAYER_FILES.items()}
            if not any(layers.values()):
                raise ConfigError(f"{gt_dir}: no ground-truth label maps found")
            if layers["object"] and spaces["object"] is None:
                raise ConfigError("object label maps need a labels config (--labels)")
            try:
                output_dir.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise ConfigError(f"{output_dir}: cannot create output directory ({exc.strerror})") from None
            for layer, pairs in layers.items():
                if not pairs:
                    logger.warning("no %s label maps under %s", layer, gt_dir)
                    continue
                cm = evaluate_layer(pairs, spaces[layer])
                target = output_dir / f"iou_{layer}.csv"
                write_metrics_csv(target, cm)
                outputs.append(str(target))
                scores[layer] = mean_iou(cm)
                images = max(images, len(pairs))
        except MotionCRFError as exc:
            return self.create_fallback_response(exc)

        message = format_message(
            "eval_success", images=images, object_miou=_score(scores["object"]), motion_miou=_score(scores["motion"])
        )
        return create_command_response(0, message, outputs, mean_iou=scores)
