"""Palette PNG renders of label maps."""

from typing import Sequence, Tuple

import numpy as np
from PIL import Image

from .grid import IGNORE_LABEL, LabelField, PathLike

Color = Tuple[int, int, int]

# stationary, moving
MOTION_PALETTE: Tuple[Color, ...] = ((0, 0, 255), (255, 0, 0))

OBJECT_PALETTE: Tuple[Color, ...] = (
    (128, 64, 128),
    (70, 70, 70),
    (0, 0, 142),
    (107, 142, 35),
    (220, 20, 60),
    (250, 170, 30),
    (220, 220, 0),
    (190, 153, 153),
    (70, 130, 180),
    (152, 251, 152),
    (244, 35, 232),
    (0, 60, 100),
    (119, 11, 32),
    (255, 255, 255),
    (102, 102, 156),
    (0, 80, 100),
)

IGNORE_COLOR: Color = (0, 0, 0)


def render_labels(path: PathLike, labels: LabelField, palette: Sequence[Color] = OBJECT_PALETTE) -> None:
    """Save ``labels`` as a paletted PNG; labels past the palette wrap around."""
    flat = [0] * (256 * 3)
    for index in range(IGNORE_LABEL):
        flat[3 * index : 3 * index + 3] = palette[index % len(palette)]
    flat[3 * IGNORE_LABEL : 3 * IGNORE_LABEL + 3] = IGNORE_COLOR
    grid = np.ascontiguousarray(labels.assignment, dtype=np.uint8)
    image = Image.frombytes("P", (grid.shape[1], grid.shape[0]), grid.tobytes())
    image.putpalette(flat)
    image.save(path, format="PNG")
