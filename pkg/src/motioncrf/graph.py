"""LangGraph pipeline for one ``infer`` run.

Object class costs and the geometric motion likelihood are combined in a
joint CRF and solved by mean-field inference. The nodes are: load inputs,
estimate ego-motion, motion unaries, build model, run inference and write
outputs. Object-only runs skip the two motion nodes.
"""

import json
import logging
import os
import shutil
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, TypedDict

import numpy as np
from langgraph.graph import END, StateGraph

from motioncrf.config import PipelineConfig, load_pipeline_config
from motioncrf.egomotion import (
    DisparityField,
    FlowField,
    FrameBundle,
    RigidMotion,
    geometric_motion_labels,
    motion_unary_field,
    ransac_ego_motion,
)
from motioncrf.errors import ConfigError, ShapeMismatch
from motioncrf.grid import (
    MOTION_LABELS,
    GridShape,
    LabelField,
    UnaryField,
    load_array,
    save_array,
    write_label_map,
)
from motioncrf.inference import InferenceResult, run_inference, run_layer_inference, write_residual_trace
from motioncrf.potentials import CorrelationMatrix, JointModel, build_joint_model, read_correlation_csv
from motioncrf.render import MOTION_PALETTE, OBJECT_PALETTE, render_labels

logger = logging.getLogger(__name__)


class PipelineState(TypedDict, total=False):
    """State passed between pipeline nodes."""

    config_path: str
    overrides: Dict[str, str]
    render: bool
    config: PipelineConfig
    inputs: Dict[str, Any]
    motions: List[RigidMotion]
    motion_unary: UnaryField
    model: JointModel
    result: InferenceResult
    outputs: List[str]


def _load(config: PipelineConfig, key: str, shape: Optional[GridShape], channels: Optional[int]) -> np.ndarray:
    path = config.path(key)
    array = load_array(path).astype(np.float64)
    if channels is None:
        if array.ndim == 3 and array.shape[2] == 1:
            array = array[:, :, 0]
        expected_ndim = 2
    else:
        expected_ndim = 3
    if array.ndim != expected_ndim or (channels is not None and array.shape[2] != channels):
        raise ShapeMismatch(f"{path}: unexpected tensor dims {array.shape}")
    if shape is not None and array.shape[:2] != (shape.height, shape.width):
        raise ShapeMismatch(f"{path}: grid {array.shape[:2]} differs from {(shape.height, shape.width)}")
    return array


def load_inputs(state: PipelineState) -> Dict[str, Any]:
    """Read the config and every tensor it names."""
    config = load_pipeline_config(state["config_path"], state.get("overrides"))
    inputs: Dict[str, Any] = {}
    shape: Optional[GridShape] = None

    if config.uses_object:
        costs = _load(config, "object_unary", None, config.object_labels.count)
        shape = GridShape(costs.shape[0], costs.shape[1])
        inputs["object_unary"] = UnaryField(shape, config.object_labels, costs)
        image = load_array(config.path("image")).astype(np.float64)
        if image.shape[:2] != (shape.height, shape.width):
            raise ShapeMismatch(f"{config.path('image')}: grid {image.shape[:2]} differs from the unary grid")
        inputs["image"] = image

    if config.uses_motion:
        flow_01 = _load(config, "flow_01", shape, 2)
        shape = shape or GridShape(flow_01.shape[0], flow_01.shape[1])
        inputs["flow_01"] = FlowField(shape, flow_01)
        inputs["flow_12"] = FlowField(shape, _load(config, "flow_12", shape, 2))
        for key in ("disparity_0", "disparity_1", "disparity_2"):
            if config.path(key) is not None:
                inputs[key] = DisparityField(shape, _load(config, key, shape, None))

    if config.path("correlation") is not None:
        correlation = read_correlation_csv(config.path("correlation"), config.object_labels, config.w_corr)
    else:
        correlation = CorrelationMatrix.zeros(config.object_labels, config.w_corr)
    inputs["correlation"] = correlation
    inputs["shape"] = shape
    logger.info("loaded inputs for a %dx%d grid (layers=%s)", shape.height, shape.width, config.layers)
    return {"config": config, "inputs": inputs}


def estimate_ego_motion(state: PipelineState) -> Dict[str, Any]:
    """Estimate the camera motion of both frame pairs by RANSAC."""
    config, inputs = state["config"], state["inputs"]
    pairs = (
        ("flow_01", "disparity_0", "disparity_1"),
        ("flow_12", "disparity_1", "disparity_2"),
    )
    motions = []
    for index, (flow, disparity, following) in enumerate(pairs):
        motion, _ = ransac_ego_motion(
            inputs[flow],
            inputs[disparity],
            config.rig,
            config.noise,
            replace(config.ransac, seed=config.ransac.seed + index),
            inputs.get(following),
        )
        motions.append(motion)
    return {"motions": motions}


def compute_motion_unary(state: PipelineState) -> Dict[str, Any]:
    """Evaluate the three-frame Mahalanobis motion unary."""
    config, inputs = state["config"], state["inputs"]
    frames = FrameBundle(
        inputs["flow_01"],
        inputs["flow_12"],
        inputs["disparity_0"],
        inputs["disparity_1"],
        inputs.get("disparity_2"),
        state["motions"][0],
        state["motions"][1],
    )
    return {"motion_unary": motion_unary_field(frames, config.rig, config.noise, config.tau_move)}


def build_model(state: PipelineState) -> Dict[str, Any]:
    """Assemble the joint model; absent layers get flat unaries."""
    config, inputs = state["config"], state["inputs"]
    shape: GridShape = inputs["shape"]
    object_unary = inputs.get("object_unary") or UnaryField(
        shape, config.object_labels, np.zeros((shape.size, config.object_labels.count))
    )
    motion_unary = state.get("motion_unary") or UnaryField(shape, MOTION_LABELS, np.zeros((shape.size, 2)))
    image = inputs.get("image")
    if image is None:
        image = np.zeros((shape.height, shape.width))
    flow = inputs["flow_01"].vectors if "flow_01" in inputs else np.zeros((shape.height, shape.width, 2))
    model = build_joint_model(object_unary, motion_unary, image, flow, config.kernel, inputs["correlation"])
    return {"model": model}


def infer(state: PipelineState) -> Dict[str, Any]:
    """Run mean-field inference on the requested layers."""
    config, model = state["config"], state["model"]
    if config.layers == "joint":
        result = run_inference(model, config.inference)
    else:
        result = run_layer_inference(model, config.inference, config.layers)  # type: ignore[arg-type]
    return {"result": result}


def _write_all(state: PipelineState, staging: Path) -> List[str]:
    config, result = state["config"], state["result"]
    names: List[str] = []
    if result.labels_object is not None:
        write_label_map(staging / "labels_object.pgm", result.labels_object)
        save_array(staging / "q_object.tnsr", result.q_object.image())
        names += ["labels_object.pgm", "q_object.tnsr"]
        if state.get("render"):
            render_labels(staging / "labels_object.png", result.labels_object, OBJECT_PALETTE)
            names.append("labels_object.png")
    if result.labels_motion is not None:
        write_label_map(staging / "labels_motion.pgm", result.labels_motion)
        save_array(staging / "q_motion.tnsr", result.q_motion.image())
        names += ["labels_motion.pgm", "q_motion.tnsr"]
        unary = state["motion_unary"]
        geometric = LabelField(unary.shape, MOTION_LABELS, geometric_motion_labels(unary))
        write_label_map(staging / "labels_motion_geometric.pgm", geometric)
        names.append("labels_motion_geometric.pgm")
        if state.get("render"):
            render_labels(staging / "labels_motion.png", result.labels_motion, MOTION_PALETTE)
            names.append("labels_motion.png")
    write_residual_trace(staging / "residuals.csv", result.trace)
    manifest = config.manifest()
    manifest.update(
        {
            "iterations": result.iterations,
            "residual": result.residual,
            "ego_motion": [
                {"rotvec": m.rotvec.tolist(), "translation": m.translation.tolist()} for m in state.get("motions", [])
            ],
        }
    )
    with open(staging / "manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, sort_keys=True, indent=2)
        handle.write("\n")
    names += ["residuals.csv", "manifest.json"]
    return names


def write_outputs(state: PipelineState) -> Dict[str, Any]:
    """Write every output into a staging directory, then swap it into place."""
    target: Path = state["config"].output_dir
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    except OSError as exc:
        raise ConfigError(f"{target}: cannot create output directory ({exc.strerror})") from None
    try:
        names = _write_all(state, staging)
        if target.exists():
            retired = Path(tempfile.mkdtemp(prefix=f".{target.name}.old.", dir=target.parent))
            os.replace(target, retired / target.name)
            os.replace(staging, target)
            shutil.rmtree(retired, ignore_errors=True)
        else:
            os.replace(staging, target)
    except OSError as exc:
        raise ConfigError(f"{target}: cannot write outputs ({exc.strerror})") from None
    finally:
        if staging.exists():
            shutil.rmtree(staging, ignore_errors=True)
    logger.info("wrote %d files to %s", len(names), target)
    return {"outputs": [str(target / name) for name in names]}


def route_after_load(state: PipelineState) -> str:
    """Skip the motion nodes for object-only runs."""
    return "estimate_ego_motion" if state["config"].uses_motion else "build_model"


pipeline = (
    StateGraph(PipelineState)
    .add_node("load_inputs", load_inputs)
    .add_node("estimate_ego_motion", estimate_ego_motion)
    .add_node("compute_motion_unary", compute_motion_unary)
    .add_node("build_model", build_model)
    .add_node("run_inference", infer)
    .add_node("write_outputs", write_outputs)
    .add_edge("__start__", "load_inputs")
    .add_conditional_edges("load_inputs", route_after_load, ["estimate_ego_motion", "build_model"])
    .add_edge("estimate_ego_motion", "compute_motion_unary")
    .add_edge("compute_motion_unary", "build_model")
    .add_edge("build_model", "run_inference")
    .add_edge("run_inference", "write_outputs")
    .add_edge("write_outputs", END)
    .compile()
)
