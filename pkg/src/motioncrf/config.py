"""Plain-text ``key=value`` configuration for the pipeline and its rig.

Files are parsed with ``python-dotenv``. Any key can be overridden by an
environment variable ``MOTIONCRF_<KEY>`` (for example
``MOTIONCRF_W_CORR=0``), and relative paths resolve against the directory of
the file that names them.
"""

import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, TypeVar

from dotenv import dotenv_values

from .egomotion import DEFAULT_TAU_MOVE, CameraRig, MotionNoiseModel, RansacParams
from .errors import ConfigError, InvalidParameter
from .grid import LabelSpace, PathLike
from .inference import InferenceConfig
from .potentials import KernelParams

logger = logging.getLogger(__name__)

ENV_PREFIX = "MOTIONCRF_"
LAYERS = ("joint", "object", "motion")
PATH_KEYS = (
    "object_unary",
    "image",
    "flow_01",
    "flow_12",
    "disparity_0",
    "disparity_1",
    "disparity_2",
    "correlation",
    "rig",
)
RIG_KEYS = ("fx", "fy", "cx", "cy", "baseline")
REQUIRED_PATHS = {
    "object": ("object_unary", "image"),
    "motion": ("flow_01", "flow_12", "disparity_0", "disparity_1"),
    "joint": ("object_unary", "image", "flow_01", "flow_12", "disparity_0", "disparity_1"),
}
KNOWN_KEYS = PATH_KEYS + RIG_KEYS + (
    "object_labels",
    "sigma_flow",
    "sigma_d",
    "theta_beta",
    "theta_v",
    "theta_p",
    "theta_f",
    "w_app",
    "w_smooth",
    "w_flow",
    "tau_move",
    "w_corr",
    "max_iterations",
    "residual_tolerance",
    "damping",
    "filter_accuracy",
    "filter_mode",
    "ransac_iterations",
    "ransac_threshold",
    "seed",
    "layers",
    "output_dir",
)

T = TypeVar("T")


def read_key_values(path: PathLike) -> Dict[str, str]:
    """Parse a ``key=value`` file; blank values are dropped."""
    source = Path(path)
    if not source.is_file():
        raise ConfigError(f"{source}: file not found")
    return {key.strip().lower(): value.strip() for key, value in dotenv_values(source).items() if value}


def write_key_values(path: PathLike, values: Mapping[str, Any]) -> None:
    """Write ``key=value`` lines in the given order."""
    with open(path, "w", encoding="utf-8") as handle:
        for key, value in values.items():
            handle.write(f"{key}={value}\n")


def environment_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """Return known keys set through ``MOTIONCRF_<KEY>`` variables."""
    environ = os.environ if environ is None else environ
    found = {}
    for key in KNOWN_KEYS:
        value = environ.get(f"{ENV_PREFIX}{key.upper()}")
        if value:
            found[key] = value
    return found


def _parse(values: Mapping[str, str], key: str, cast: Callable[[str], T], default: T) -> T:
    raw = values.get(key)
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError:
        raise InvalidParameter(f"config key {key!r}: cannot parse {raw!r}") from None


def load_rig(values: Mapping[str, str]) -> CameraRig:
    """Build a camera rig from ``fx, fy, cx, cy, baseline`` values."""
    missing = [key for key in RIG_KEYS if key not in values]
    if missing:
        raise ConfigError(f"camera rig is missing keys {missing}")
    return CameraRig(*(_parse(values, key, float, 0.0) for key in RIG_KEYS))


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one ``infer`` run needs."""

    paths: Dict[str, Optional[Path]]
    object_labels: LabelSpace
    rig: Optional[CameraRig]
    noise: MotionNoiseModel
    kernel: KernelParams
    inference: InferenceConfig
    ransac: RansacParams
    tau_move: float = DEFAULT_TAU_MOVE
    w_corr: float = 1.0
    layers: str = "joint"
    output_dir: Path = Path("out")
    source: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.layers not in LAYERS:
            raise InvalidParameter(f"layers must be one of {LAYERS}, got {self.layers!r}")
        if not self.tau_move > 0:
            raise InvalidParameter(f"tau_move must be positive, got {self.tau_move}")
        if not self.w_corr >= 0:
            raise InvalidParameter(f"w_corr must be >= 0, got {self.w_corr}")
        if self.layers != "object" and self.rig is None:
            raise ConfigError("motion layers need a camera rig (keys fx, fy, cx, cy, baseline or rig=<file>)")

    @property
    def uses_motion(self) -> bool:
        """True when the motion layer is inferred."""
        return self.layers in ("joint", "motion")

    @property
    def uses_object(self) -> bool:
        """True when the object layer is inferred."""
        return self.layers in ("joint", "object")

    def path(self, key: str) -> Optional[Path]:
        """Return the resolved input path for ``key``, or ``None``."""
        return self.paths.get(key)

    def manifest(self) -> Dict[str, Any]:
        """Collect every parameter needed to reproduce the run."""
        return {
            "layers": self.layers,
            "object_labels": list(self.object_labels.names),
            "inputs": {key: str(value) for key, value in sorted(self.paths.items()) if value is not None},
            "rig": asdict(self.rig) if self.rig is not None else None,
            "noise": asdict(self.noise),
            "kernel": asdict(self.kernel),
            "inference": asdict(self.inference),
            "ransac": asdict(self.ransac),
            "tau_move": self.tau_move,
            "w_corr": self.w_corr,
        }


def load_pipeline_config(
    path: PathLike,
    overrides: Optional[Mapping[str, str]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> PipelineConfig:
    """Load, merge and validate a pipeline configuration.

    Precedence, lowest first: the file, an optional ``rig`` file it names,
    ``MOTIONCRF_<KEY>`` environment variables, then ``overrides``.

    Args:
        path: The ``key=value`` config file.
        overrides: Values from the command line.
        environ: Environment mapping; defaults to ``os.environ``.

    Returns:
        The validated config.

    Raises:
        ConfigError: Missing file or key, or a value out of range.
    """
    source = Path(path)
    base = source.parent
    from_file = read_key_values(source)
    layered = environment_overrides(environ)
    layered.update({key.lower(): str(value) for key, value in (overrides or {}).items()})
    values = {**from_file, **layered}
    unknown = sorted(set(values) - set(KNOWN_KEYS))
    if unknown:
        logger.warning("ignoring unknown config keys %s", unknown)

    paths: Dict[str, Optional[Path]] = {}
    for key in PATH_KEYS:
        if key in values:
            candidate = Path(values[key])
            paths[key] = candidate if candidate.is_absolute() else base / candidate

    rig_values = {key: from_file[key] for key in RIG_KEYS if key in from_file}
    if paths.get("rig") is not None:
        rig_values.update(read_key_values(paths["rig"]))
    rig_values.update({key: layered[key] for key in RIG_KEYS if key in layered})

    layers = values.get("layers", "joint")
    if layers not in LAYERS:
        raise InvalidParameter(f"layers must be one of {LAYERS}, got {layers!r}")
    for key in REQUIRED_PATHS[layers]:
        if paths.get(key) is None:
            raise ConfigError(f"config key {key!r} is required for layers={layers}")
    for key, value in paths.items():
        if value is not None and not value.is_file():
            raise ConfigError(f"{value}: file not found (config key {key!r})")

    if "object_labels" not in values:
        raise ConfigError("config key 'object_labels' is required")
    output = Path(values.get("output_dir", "out"))
    rig = load_rig(rig_values) if layers != "object" or rig_values else None
    seed = _parse(values, "seed", int, 0)
    return PipelineConfig(
        paths=paths,
        object_labels=LabelSpace.parse(values["object_labels"]),
        rig=rig,
        noise=MotionNoiseModel(
            sigma_flow=_parse(values, "sigma_flow", float, 1.0),
            sigma_d=_parse(values, "sigma_d", float, 0.5),
        ),
        kernel=KernelParams(
            theta_beta=_parse(values, "theta_beta", float, 3.0),
            theta_v=_parse(values, "theta_v", float, 10.0),
            theta_p=_parse(values, "theta_p", float, 1.0),
            theta_f=_parse(values, "theta_f", float, 1.0),
            w_app=_parse(values, "w_app", float, 1.0),
            w_smooth=_parse(values, "w_smooth", float, 1.0),
            w_flow=_parse(values, "w_flow", float, 1.0),
        ),
        inference=InferenceConfig(
            max_iterations=_parse(values, "max_iterations", int, 30),
            residual_tolerance=_parse(values, "residual_tolerance", float, 1e-3),
            damping=_parse(values, "damping", float, 0.5),
            filter_accuracy=_parse(values, "filter_accuracy", float, 1e-4),
            mode=values.get("filter_mode", "fast"),  # type: ignore[arg-type]
        ),
        ransac=RansacParams(
            iterations=_parse(values, "ransac_iterations", int, 500),
            threshold=_parse(values, "ransac_threshold", float, 3.0),
            seed=seed,
        ),
        tau_move=_parse(values, "tau_move", float, DEFAULT_TAU_MOVE),
        w_corr=_parse(values, "w_corr", float, 1.0),
        layers=layers,
        output_dir=output if output.is_absolute() else base / output,
        source=source,
    )
