"""Mean-field inference for the joint object and motion CRF.

Both layers are updated in parallel from the same pre-step state, and each
update is blended with the previous state by ``damping``. Potts messages are
Gaussian-filtered distributions: for label ``l`` the penalty is the filtered
mass of every other label at that pixel.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Tuple

import numba
import numpy as np

from .errors import InvalidParameter, NonFiniteUpdate, ShapeMismatch, SizeGuardExceeded
from .filtering import DEFAULT_ACCURACY, FeatureMap, GaussianOperator, KernelSpec, brute_force_filter
from .grid import LabelField, PathLike, ProbabilityField, softmax_rows
from .potentials import EnergyMode, JointModel, joint_unary, pairwise_matrices

logger = logging.getLogger(__name__)

FilterMode = Literal["fast", "exact"]
Layer = Literal["object", "motion"]

ORACLE_MAX_PIXELS = 10
ORACLE_MAX_OBJECT_LABELS = 3


@dataclass(frozen=True)
class InferenceConfig:
    """Iteration schedule and message filtering mode."""

    max_iterations: int = 30
    residual_tolerance: float = 1e-3
    damping: float = 0.5
    filter_accuracy: float = DEFAULT_ACCURACY
    mode: FilterMode = "fast"

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise InvalidParameter(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not (math.isfinite(self.residual_tolerance) and self.residual_tolerance > 0):
            raise InvalidParameter(f"residual_tolerance must be positive, got {self.residual_tolerance}")
        if not 0.0 <= self.damping < 1.0:
            raise InvalidParameter(f"damping must lie in [0, 1), got {self.damping}")
        if not 0.0 < self.filter_accuracy < 1.0:
            raise InvalidParameter(f"filter_accuracy must lie in (0, 1), got {self.filter_accuracy}")
        if self.mode not in ("fast", "exact"):
            raise InvalidParameter(f"filter mode must be 'fast' or 'exact', got {self.mode!r}")


@dataclass(frozen=True)
class InferenceResult:
    """Final marginals, MPM labels and convergence record.

    Layers that were not inferred are ``None``.
    """

    q_object: Optional[ProbabilityField]
    q_motion: Optional[ProbabilityField]
    labels_object: Optional[LabelField]
    labels_motion: Optional[LabelField]
    iterations: int
    residual: float
    trace: List[float] = field(default_factory=list)


MessageFilter = Callable[[np.ndarray], np.ndarray]


def make_filter(features: FeatureMap, kernel: KernelSpec, config: InferenceConfig) -> MessageFilter:
    """Return a callable computing ``sum_{j != i} k(i, j) Q[j]``."""
    if config.mode == "exact":
        return lambda values: brute_force_filter(values, features, kernel)
    return GaussianOperator(features, kernel, config.filter_accuracy).apply


def _potts(messages: np.ndarray) -> np.ndarray:
    return messages.sum(axis=1, keepdims=True) - messages


def _blend(update: np.ndarray, previous: np.ndarray, damping: float, layer: str) -> np.ndarray:
    blended = (1.0 - damping) * update + damping * previous if damping else update
    if not np.all(np.isfinite(blended)):
        raise NonFiniteUpdate(f"{layer} update produced non-finite values")
    return blended


def _step(
    q_object: Optional[np.ndarray],
    q_motion: Optional[np.ndarray],
    model: JointModel,
    config: InferenceConfig,
    filters: Dict[str, MessageFilter],
) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    coupling = model.correlation.coupling
    coupled = q_object is not None and q_motion is not None and not model.correlation.is_decoupled
    new_object = new_motion = None
    if q_object is not None:
        energy = model.object_unary.costs + _potts(filters["object"](q_object))
        if coupled:
            energy = energy + q_motion @ coupling.T
        new_object = _blend(softmax_rows(energy), q_object, config.damping, "object")
    if q_motion is not None:
        energy = model.motion_unary.costs + _potts(filters["motion"](q_motion))
        if coupled:
            energy = energy + q_object @ coupling
        new_motion = _blend(softmax_rows(energy), q_motion, config.damping, "motion")
    return new_object, new_motion


def mean_field_step(
    q_object: ProbabilityField,
    q_motion: ProbabilityField,
    model: JointModel,
    config: InferenceConfig,
) -> Tuple[ProbabilityField, ProbabilityField]:
    """Apply one damped parallel update to both layers.

    Args:
        q_object: Current object marginals.
        q_motion: Current motion marginals.
        model: Joint model on the same grid.
        config: Damping and filtering mode.

    Returns:
        The updated ``(q_object, q_motion)``.

    Raises:
        ShapeMismatch: When a field does not match the model.
        NonFiniteUpdate: When an update is not finite.
    """
    if q_object.shape != model.shape or q_motion.shape != model.shape:
        raise ShapeMismatch("marginals must match the model grid")
    if q_object.labels != model.object_unary.labels or q_motion.labels != model.motion_unary.labels:
        raise ShapeMismatch("marginal label spaces must match the model")
    filters = {
        "object": make_filter(model.object_features, model.object_kernel, config),
        "motion": make_filter(model.motion_features, model.motion_kernel, config),
    }
    new_object, new_motion = _step(q_object.values, q_motion.values, model, config, filters)
    return (
        ProbabilityField(model.shape, q_object.labels, new_object),
        ProbabilityField(model.shape, q_motion.labels, new_motion),
    )


def map_labels(q: ProbabilityField) -> LabelField:
    """Return the per-pixel argmax of ``q``, ties to the lowest label index."""
    return LabelField(q.shape, q.labels, np.argmax(q.values, axis=1).astype(np.uint8))


def _iterate(
    model: JointModel,
    config: InferenceConfig,
    layers: Tuple[Layer, ...],
) -> InferenceResult:
    filters: Dict[str, MessageFilter] = {}
    q_object = q_motion = None
    if "object" in layers:
        filters["object"] = make_filter(model.object_features, model.object_kernel, config)
        q_object = softmax_rows(model.object_unary.costs)
    if "motion" in layers:
        filters["motion"] = make_filter(model.motion_features, model.motion_kernel, config)
        q_motion = softmax_rows(model.motion_unary.costs)

    trace: List[float] = []
    residual = math.inf
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        new_object, new_motion = _step(q_object, q_motion, model, config, filters)
        residual = max(
            float(np.max(np.abs(new_object - q_object))) if q_object is not None else 0.0,
            float(np.max(np.abs(new_motion - q_motion))) if q_motion is not None else 0.0,
        )
        q_object, q_motion = new_object, new_motion
        trace.append(residual)
        logger.debug("mean-field %s iteration %d: residual %.3e", "+".join(layers), iterations, residual)
        if residual < config.residual_tolerance:
            break
    else:
        logger.warning(
            "mean field stopped after %d iterations with residual %.3e", config.max_iterations, residual
        )

    shape = model.shape
    field_object = ProbabilityField(shape, model.object_unary.labels, q_object) if q_object is not None else None
    field_motion = ProbabilityField(shape, model.motion_unary.labels, q_motion) if q_motion is not None else None
    return InferenceResult(
        q_object=field_object,
        q_motion=field_motion,
        labels_object=map_labels(field_object) if field_object is not None else None,
        labels_motion=map_labels(field_motion) if field_motion is not None else None,
        iterations=iterations,
        residual=residual,
        trace=trace,
    )


def run_layer_inference(model: JointModel, config: InferenceConfig, layer: Layer) -> InferenceResult:
    """Run a single-layer dense CRF with no cross term."""
    if layer not in ("object", "motion"):
        raise InvalidParameter(f"unknown layer {layer!r}")
    result = _iterate(model, config, (layer,))
    logger.info("%s layer: %d iterations, residual %.3e", layer, result.iterations, result.residual)
    return result


def run_inference(model: JointModel, config: InferenceConfig) -> InferenceResult:
    """Run joint mean-field inference to convergence.

    Marginals start at the softmax of each layer's unary. Iteration stops when
    the largest absolute change over both layers is below
    ``config.residual_tolerance`` or after ``config.max_iterations`` steps.
    Without coupling the layers are run independently, so the result equals
    two single-layer runs exactly.
    """
    if model.correlation.is_decoupled:
        first = run_layer_inference(model, config, "object")
        second = run_layer_inference(model, config, "motion")
        length = max(len(first.trace), len(second.trace))
        trace = [
            max(first.trace[k] if k < len(first.trace) else 0.0, second.trace[k] if k < len(second.trace) else 0.0)
            for k in range(length)
        ]
        return InferenceResult(
            q_object=first.q_object,
            q_motion=second.q_motion,
            labels_object=first.labels_object,
            labels_motion=second.labels_motion,
            iterations=max(first.iterations, second.iterations),
            residual=max(first.residual, second.residual),
            trace=trace,
        )
    result = _iterate(model, config, ("object", "motion"))
    logger.info("joint inference: %d iterations, residual %.3e", result.iterations, result.residual)
    return result


def write_residual_trace(path: PathLike, trace: List[float]) -> None:
    """Write the per-iteration residuals as ``iteration,residual`` CSV."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["iteration", "residual"])
        for iteration, residual in enumerate(trace, start=1):
            writer.writerow([iteration, repr(float(residual))])


# Exhaustive oracle


@numba.njit(cache=True)
def _state_energy(digits, table, p, g, n_motion):  # pragma: no cover - compiled
    n = digits.shape[0]
    energy = 0.0
    for i in range(n):
        xi = digits[i] // n_motion
        yi = digits[i] % n_motion
        energy += table[i, xi, yi]
        for j in range(i + 1, n):
            if xi != digits[j] // n_motion:
                energy += p[i, j]
            if yi != digits[j] % n_motion:
                energy += g[i, j]
    return energy


@numba.njit(cache=True)
def _advance(digits, base):  # pragma: no cover - compiled
    for i in range(digits.shape[0]):
        digits[i] += 1
        if digits[i] < base:
            return True
        digits[i] = 0
    return False


@numba.njit(cache=True)
def _enumerate_marginals(table, p, g):  # pragma: no cover - compiled
    n, n_object, n_motion = table.shape
    base = n_object * n_motion
    digits = np.zeros(n, dtype=np.int64)
    lowest = np.inf
    while True:
        energy = _state_energy(digits, table, p, g, n_motion)
        if energy < lowest:
            lowest = energy
        if not _advance(digits, base):
            break
    q_object = np.zeros((n, n_object))
    q_motion = np.zeros((n, n_motion))
    total = 0.0
    digits[:] = 0
    while True:
        weight = np.exp(-(_state_energy(digits, table, p, g, n_motion) - lowest))
        total += weight
        for i in range(n):
            q_object[i, digits[i] // n_motion] += weight
            q_motion[i, digits[i] % n_motion] += weight
        if not _advance(digits, base):
            break
    return q_object / total, q_motion / total


def brute_force_marginals(
    model: JointModel, mode: EnergyMode = "dense-exact", connectivity: int = 4
) -> Tuple[ProbabilityField, ProbabilityField]:
    """Exact per-layer marginals of the joint Gibbs distribution by enumeration.

    Args:
        model: Joint model with at most 10 pixels and 3 object labels.
        mode: Pairwise terms from the dense kernels or the neighbourhood graph.
        connectivity: 4 or 8, for neighbourhood mode.

    Returns:
        Exact ``(q_object, q_motion)``.

    Raises:
        SizeGuardExceeded: When the instance is too large to enumerate.
    """
    if model.shape.size > ORACLE_MAX_PIXELS or model.object_unary.labels.count > ORACLE_MAX_OBJECT_LABELS:
        raise SizeGuardExceeded(
            f"enumeration is limited to {ORACLE_MAX_PIXELS} pixels and {ORACLE_MAX_OBJECT_LABELS} object labels"
        )
    p, g = pairwise_matrices(model, mode, connectivity)
    table = np.ascontiguousarray(joint_unary(model.object_unary, model.motion_unary, model.correlation))
    q_object, q_motion = _enumerate_marginals(table, np.ascontiguousarray(p), np.ascontiguousarray(g))
    return (
        ProbabilityField(model.shape, model.object_unary.labels, q_object),
        ProbabilityField(model.shape, model.motion_unary.labels, q_motion),
    )
