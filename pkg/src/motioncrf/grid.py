"""Grid-aligned fields, distribution utilities and file formats.

All per-pixel fields are stored flattened in row-major pixel order with the
origin at the top-left: pixel ``i`` is ``(i // width, i % width)``. Costs are
natural-log units.
"""

import logging
import math
import os
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .errors import (
    AllZeroPixel,
    BadMagic,
    DataError,
    DimOverflow,
    InvalidParameter,
    LabelOutOfRange,
    NonFiniteValue,
    ShapeMismatch,
    TruncatedPayload,
    VersionMismatch,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]

IGNORE_LABEL = 255
TENSOR_MAGIC = b"TNSR"
TENSOR_VERSION = 1
_MAX_ELEMENTS = 2**32


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GridShape:
    """Image grid size in pixels."""

    height: int
    width: int

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise InvalidParameter(f"grid must be at least 1x1, got {self.height}x{self.width}")

    @property
    def size(self) -> int:
        """Number of pixels."""
        return self.height * self.width

    def pixel(self, index: int) -> Tuple[int, int]:
        """Return ``(row, col)`` of a flat pixel index."""
        return divmod(index, self.width)

    def index(self, row: int, col: int) -> int:
        """Return the flat index of ``(row, col)``."""
        return row * self.width + col


@dataclass(frozen=True)
class LabelSpace:
    """Ordered, unique label names."""

    names: Tuple[str, ...]

    def __post_init__(self) -> None:
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise InvalidParameter("label space must contain at least one label")
        if len(set(names)) != len(names):
            raise InvalidParameter(f"label names must be unique: {names}")
        if len(names) >= IGNORE_LABEL:
            raise InvalidParameter(f"at most {IGNORE_LABEL - 1} labels are supported")

    @property
    def count(self) -> int:
        """Number of labels."""
        return len(self.names)

    def index(self, name: str) -> int:
        """Return the index of a label name."""
        try:
            return self.names.index(name)
        except ValueError:
            raise LabelOutOfRange(f"unknown label {name!r}; expected one of {self.names}") from None

    @classmethod
    def parse(cls, text: str) -> "LabelSpace":
        """Build a label space from a comma-separated list."""
        return cls(tuple(part.strip() for part in text.split(",") if part.strip()))


MOTION_LABELS = LabelSpace(("stationary", "moving"))
STATIONARY, MOVING = 0, 1


def _as_table(values: np.ndarray, shape: GridShape, labels: LabelSpace, what: str) -> np.ndarray:
    table = np.asarray(values, dtype=np.float64)
    if table.ndim == 3:
        table = table.reshape(-1, table.shape[-1])
    if table.shape != (shape.size, labels.count):
        raise ShapeMismatch(
            f"{what} has shape {table.shape}, expected ({shape.size}, {labels.count})"
        )
    return table


@dataclass(frozen=True)
class ProbabilityField:
    """Per-pixel distributions over a label space, shape ``(N, L)``."""

    shape: GridShape
    labels: LabelSpace
    values: np.ndarray

    def __post_init__(self) -> None:
        table = np.array(_as_table(self.values, self.shape, self.labels, "probability field"))
        if not np.all(np.isfinite(table)) or np.any(table < 0):
            raise NonFiniteValue("probabilities must be finite and non-negative")
        if np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-6):
            raise DataError("probabilities must sum to one at every pixel")
        object.__setattr__(self, "values", _frozen(table))

    def image(self) -> np.ndarray:
        """Return the values as ``(H, W, L)``."""
        return self.values.reshape(self.shape.height, self.shape.width, self.labels.count)


@dataclass(frozen=True)
class UnaryField:
    """Per-pixel per-label costs, shape ``(N, L)``."""

    shape: GridShape
    labels: LabelSpace
    costs: np.ndarray

    def __post_init__(self) -> None:
        table = np.array(_as_table(self.costs, self.shape, self.labels, "unary field"))
        if not np.all(np.isfinite(table)):
            raise NonFiniteValue("unary costs must be finite")
        object.__setattr__(self, "costs", _frozen(table))

    def image(self) -> np.ndarray:
        """Return the costs as ``(H, W, L)``."""
        return self.costs.reshape(self.shape.height, self.shape.width, self.labels.count)


@dataclass(frozen=True)
class LabelField:
    """Per-pixel label indices ``(H, W)``; ``IGNORE_LABEL`` marks unlabeled pixels."""

    shape: GridShape
    labels: LabelSpace
    assignment: np.ndarray

    def __post_init__(self) -> None:
        grid = np.array(self.assignment)
        if grid.ndim == 1 and grid.size == self.shape.size:
            grid = grid.reshape(self.shape.height, self.shape.width)
        if grid.shape != (self.shape.height, self.shape.width):
            raise ShapeMismatch(
                f"label map has shape {grid.shape}, expected {(self.shape.height, self.shape.width)}"
            )
        if np.any(grid < 0) or np.any(grid > IGNORE_LABEL):
            raise LabelOutOfRange(f"label indices must lie in [0, {IGNORE_LABEL}]")
        grid = grid.astype(np.uint8)
        valid = grid != IGNORE_LABEL
        if np.any(grid[valid] >= self.labels.count):
            raise LabelOutOfRange(
                f"label index {int(grid[valid].max())} outside [0, {self.labels.count})"
            )
        object.__setattr__(self, "assignment", _frozen(grid))

    @property
    def valid(self) -> np.ndarray:
        """Mask of non-ignore pixels."""
        return self.assignment != IGNORE_LABEL


def normalize_distribution(raw: np.ndarray, shape: GridShape, labels: LabelSpace) -> ProbabilityField:
    """Scale each pixel's non-negative weights so they sum to one.

    Args:
        raw: ``(N, L)`` or ``(H, W, L)`` non-negative weights.
        shape: Grid the weights live on.
        labels: Label space of the last axis.

    Returns:
        The normalized field; ratios within a pixel are preserved.

    Raises:
        NonFiniteValue: On NaN, infinity or negative entries.
        AllZeroPixel: When a pixel has no positive entry.
    """
    table = _as_table(raw, shape, labels, "distribution")
    if not np.all(np.isfinite(table)) or np.any(table < 0):
        raise NonFiniteValue("distribution entries must be finite and non-negative")
    totals = table.sum(axis=1, keepdims=True)
    empty = np.flatnonzero(totals[:, 0] <= 0)
    if empty.size:
        raise AllZeroPixel(f"pixel {int(empty[0])} has no positive weight")
    return ProbabilityField(shape, labels, table / totals)


def softmax_rows(costs: np.ndarray) -> np.ndarray:
    """Apply a row-wise ``exp(-c) / sum exp(-c)`` with min-subtraction."""
    shifted = np.exp(-(costs - costs.min(axis=1, keepdims=True)))
    return shifted / shifted.sum(axis=1, keepdims=True)


def softmax_from_costs(costs: UnaryField) -> ProbabilityField:
    """Convert costs into per-pixel distributions ``exp(-c) / Z``."""
    return ProbabilityField(costs.shape, costs.labels, softmax_rows(costs.costs))


# TNSR tensors


def save_tensor(path: PathLike, dims: Sequence[int], payload: np.ndarray) -> None:
    """Write a little-endian row-major float32 tensor.

    Args:
        path: Destination file.
        dims: Non-empty list of dimensions.
        payload: Values; converted to little-endian float32.

    Raises:
        DimOverflow: When a dim or the element count does not fit 32 bits.
        ShapeMismatch: When the payload length disagrees with ``dims``.
    """
    dims = [int(d) for d in dims]
    if not dims or any(d < 0 for d in dims):
        raise InvalidParameter(f"invalid tensor dims {dims}")
    count = math.prod(dims)
    if any(d >= _MAX_ELEMENTS for d in dims) or count > _MAX_ELEMENTS:
        raise DimOverflow(f"tensor dims {dims} exceed the 32-bit element limit")
    data = np.ascontiguousarray(payload, dtype="<f4").reshape(-1)
    if data.size != count:
        raise ShapeMismatch(f"payload has {data.size} values, dims {dims} require {count}")
    header = (
        TENSOR_MAGIC
        + np.uint8(TENSOR_VERSION).tobytes()
        + np.array([len(dims)], dtype="<u4").tobytes()
        + np.array(dims, dtype="<u4").tobytes()
    )
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(data.tobytes())


def load_tensor(path: PathLike) -> Tuple[Tuple[int, ...], np.ndarray]:
    """Read a TNSR file and return ``(dims, flat float32 payload)``."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < 9:
        raise TruncatedPayload(f"{path}: header is truncated")
    if blob[:4] != TENSOR_MAGIC:
        raise BadMagic(f"{path}: bad magic {blob[:4]!r}")
    if blob[4] != TENSOR_VERSION:
        raise VersionMismatch(f"{path}: unsupported version {blob[4]}")
    ndim = int(np.frombuffer(blob, dtype="<u4", count=1, offset=5)[0])
    offset = 9 + 4 * ndim
    if len(blob) < offset:
        raise TruncatedPayload(f"{path}: dims are truncated")
    dims = tuple(int(d) for d in np.frombuffer(blob, dtype="<u4", count=ndim, offset=9))
    count = math.prod(dims)
    if count > _MAX_ELEMENTS:
        raise DimOverflow(f"{path}: dims {dims} exceed the 32-bit element limit")
    if len(blob) - offset != 4 * count:
        raise TruncatedPayload(
            f"{path}: payload has {len(blob) - offset} bytes, dims {dims} require {4 * count}"
        )
    payload = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).copy()
    return dims, payload


def save_array(path: PathLike, array: np.ndarray) -> None:
    """Write an array as a TNSR tensor using its own shape as dims."""
    array = np.asarray(array)
    save_tensor(path, array.shape or (1,), array)


def load_array(path: PathLike) -> np.ndarray:
    """Read a TNSR tensor as a float32 array shaped by its dims."""
    dims, payload = load_tensor(path)
    return payload.reshape(dims)


# PGM label maps


def write_label_map(path: PathLike, field: LabelField) -> None:
    """Write a label map as an 8-bit binary PGM (P5)."""
    Image.fromarray(np.ascontiguousarray(field.assignment, dtype=np.uint8)).save(path, format="PPM")


def read_label_map(path: PathLike, labels: LabelSpace) -> LabelField:
    """Read an 8-bit PGM written by :func:`write_label_map`."""
    with Image.open(path) as image:
        if image.mode != "L":
            raise DataError(f"{path}: expected an 8-bit grayscale map, got mode {image.mode}")
        grid = np.asarray(image, dtype=np.uint8)
    shape = GridShape(*grid.shape)
    try:
        return LabelField(shape, labels, grid)
    except LabelOutOfRange as exc:
        raise LabelOutOfRange(f"{path}: {exc}") from None
