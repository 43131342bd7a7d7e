import csv

import numpy as np
import pytest

from motioncrf.egomotion import DisparityField, FlowField, FrameBundle, MotionNoiseModel, motion_unary_field
from motioncrf.errors import InvalidParameter, ShapeMismatch, SizeGuardExceeded
from motioncrf.evaluation import ConfusionMatrix, accumulate_confusion, iou_per_class
from motioncrf.grid import MOTION_LABELS, GridShape, LabelSpace, ProbabilityField, UnaryField, softmax_rows
from motioncrf.inference import (
    InferenceConfig,
    brute_force_marginals,
    map_labels,
    mean_field_step,
    run_inference,
    run_layer_inference,
    write_residual_trace,
)
from motioncrf.learning import cooccurrence_lambda
from motioncrf.potentials import CorrelationMatrix, KernelParams, build_joint_model, kernel_matrix

OBJECTS = LabelSpace(("road", "building", "car"))
PAIR = LabelSpace(("road", "car"))
EXACT = InferenceConfig(mode="exact")


def uniform(shape: GridShape, labels: LabelSpace) -> ProbabilityField:
    return ProbabilityField(shape, labels, np.full((shape.size, labels.count), 1.0 / labels.count))


def random_model(shape: GridShape, rng: np.random.Generator, params: KernelParams, w_corr: float):
    object_unary = UnaryField(shape, PAIR, rng.normal(0, 1.5, (shape.size, 2)))
    motion_unary = UnaryField(shape, MOTION_LABELS, rng.normal(0, 1.5, (shape.size, 2)))
    image = rng.uniform(0, 255, (shape.height, shape.width, 3))
    flow = rng.normal(0, 1, (shape.height, shape.width, 2))
    correlation = CorrelationMatrix(PAIR, rng.uniform(-1, 1, (2, 2)), w_corr)
    return build_joint_model(object_unary, motion_unary, image, flow, params, correlation)


def scene_model(scene, w_corr: float = 5.0, params: KernelParams = KernelParams()):
    frames = FrameBundle(
        FlowField.from_array(scene.flows[0]),
        FlowField.from_array(scene.flows[1]),
        DisparityField.from_array(scene.disparities[0]),
        DisparityField.from_array(scene.disparities[1]),
        DisparityField.from_array(scene.disparities[2]),
        scene.motions[0],
        scene.motions[1],
    )
    motion_unary = motion_unary_field(frames, scene.rig, MotionNoiseModel())
    correlation = cooccurrence_lambda([scene.gt_object], [scene.gt_motion], w_corr)
    return build_joint_model(scene.object_unary, motion_unary, scene.image, scene.flows[0], params, correlation)


def iou(pred, gt):
    return iou_per_class(accumulate_confusion(pred, gt, ConfusionMatrix.empty(gt.labels)))


def test_config_validation() -> None:
    with pytest.raises(InvalidParameter):
        InferenceConfig(max_iterations=0)
    with pytest.raises(InvalidParameter):
        InferenceConfig(residual_tolerance=0.0)
    with pytest.raises(InvalidParameter):
        InferenceConfig(damping=1.0)
    with pytest.raises(InvalidParameter):
        InferenceConfig(mode="approximate")


def test_map_labels_examples() -> None:
    shape = GridShape(1, 2)
    q = ProbabilityField(shape, PAIR, np.array([[0.2, 0.8], [0.5, 0.5]]))
    assert map_labels(q).assignment.tolist() == [[1, 0]]
    triple = ProbabilityField(GridShape(1, 1), OBJECTS, np.array([[0.3, 0.3, 0.4]]))
    assert map_labels(triple).assignment.tolist() == [[2]]


def test_unary_only_model_is_a_fixed_point() -> None:
    shape = GridShape(3, 4)
    rng = np.random.default_rng(0)
    params = KernelParams(w_app=0.0, w_smooth=0.0, w_flow=0.0)
    model = random_model(shape, rng, params, w_corr=0.0)
    result = run_inference(model, EXACT)
    assert result.iterations == 1
    assert result.residual < 1e-12
    np.testing.assert_allclose(result.q_object.values, softmax_rows(model.object_unary.costs), atol=1e-12)
    expected = np.argmin(model.motion_unary.costs, axis=1).reshape(3, 4)
    np.testing.assert_array_equal(result.labels_motion.assignment, expected)


def test_step_normalizes_and_checks_shapes() -> None:
    shape = GridShape(3, 3)
    model = random_model(shape, np.random.default_rng(1), KernelParams(), w_corr=2.0)
    q_object, q_motion = mean_field_step(uniform(shape, PAIR), uniform(shape, MOTION_LABELS), model, EXACT)
    np.testing.assert_allclose(q_object.values.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(q_motion.values.sum(axis=1), 1.0, atol=1e-6)
    with pytest.raises(ShapeMismatch):
        mean_field_step(uniform(GridShape(1, 9), PAIR), uniform(shape, MOTION_LABELS), model, EXACT)


def test_motion_evidence_pulls_object_label_through_cross_term() -> None:
    shape = GridShape(1, 1)
    object_unary = UnaryField(shape, OBJECTS, np.zeros((1, 3)))
    motion_unary = UnaryField(shape, MOTION_LABELS, np.array([[10.0, 0.0]]))
    correlation = CorrelationMatrix(OBJECTS, np.array([[0.0, 0.0], [0.0, 0.0], [1.0, -1.0]]), 10.0)
    model = build_joint_model(
        object_unary, motion_unary, np.zeros((1, 1)), np.zeros((1, 1, 2)), KernelParams(), correlation
    )
    q_motion = ProbabilityField(shape, MOTION_LABELS, softmax_rows(motion_unary.costs))
    q_object, _ = mean_field_step(uniform(shape, OBJECTS), q_motion, model, EXACT)
    car = OBJECTS.index("car")
    assert q_object.values[0, car] > q_object.values[0, 0]
    assert q_object.values[0, car] > q_object.values[0, 1]


def test_two_pixel_step_matches_hand_expansion() -> None:
    shape = GridShape(1, 2)
    model = random_model(shape, np.random.default_rng(2), KernelParams(theta_beta=1.0, theta_v=50.0), w_corr=1.5)
    rng = np.random.default_rng(3)
    q_object = ProbabilityField(shape, PAIR, softmax_rows(rng.normal(size=(2, 2))))
    q_motion = ProbabilityField(shape, MOTION_LABELS, softmax_rows(rng.normal(size=(2, 2))))
    config = InferenceConfig(mode="exact", damping=0.0)
    new_object, new_motion = mean_field_step(q_object, q_motion, model, config)

    p = kernel_matrix(model.object_features, model.object_kernel)[0, 1]
    g = kernel_matrix(model.motion_features, model.motion_kernel)[0, 1]
    coupling = model.correlation.coupling
    for i, j in ((0, 1), (1, 0)):
        energy = np.array(
            [
                model.object_unary.costs[i, l]
                + p * q_object.values[j, 1 - l]
                + sum(q_motion.values[i, m] * coupling[l, m] for m in range(2))
                for l in range(2)
            ]
        )
        expected = np.exp(-energy) / np.exp(-energy).sum()
        np.testing.assert_allclose(new_object.values[i], expected, atol=1e-9)
        energy = np.array(
            [
                model.motion_unary.costs[i, m]
                + g * q_motion.values[j, 1 - m]
                + sum(q_object.values[i, l] * coupling[l, m] for l in range(2))
                for m in range(2)
            ]
        )
        expected = np.exp(-energy) / np.exp(-energy).sum()
        np.testing.assert_allclose(new_motion.values[i], expected, atol=1e-9)


def test_damping_blends_with_previous_state() -> None:
    shape = GridShape(2, 2)
    model = random_model(shape, np.random.default_rng(5), KernelParams(), w_corr=1.0)
    q_object, q_motion = uniform(shape, PAIR), uniform(shape, MOTION_LABELS)
    full, _ = mean_field_step(q_object, q_motion, model, InferenceConfig(mode="exact", damping=0.0))
    damped, _ = mean_field_step(q_object, q_motion, model, InferenceConfig(mode="exact", damping=0.25))
    np.testing.assert_allclose(damped.values, 0.75 * full.values + 0.25 * q_object.values, atol=1e-12)


def test_decoupled_joint_run_equals_layer_runs() -> None:
    shape = GridShape(6, 7)
    model = random_model(shape, np.random.default_rng(6), KernelParams(), w_corr=0.0)
    joint = run_inference(model, EXACT)
    alone_object = run_layer_inference(model, EXACT, "object")
    alone_motion = run_layer_inference(model, EXACT, "motion")
    np.testing.assert_array_equal(joint.labels_object.assignment, alone_object.labels_object.assignment)
    np.testing.assert_array_equal(joint.labels_motion.assignment, alone_motion.labels_motion.assignment)
    assert alone_object.q_motion is None and alone_object.labels_motion is None
    with pytest.raises(InvalidParameter):
        run_layer_inference(model, EXACT, "depth")


def test_brute_force_trivial_cases() -> None:
    shape = GridShape(1, 1)
    object_unary = UnaryField(shape, PAIR, np.array([[0.0, 1.0]]))
    motion_unary = UnaryField(shape, MOTION_LABELS, np.array([[0.5, 0.0]]))
    correlation = CorrelationMatrix(PAIR, np.array([[0.5, -0.5], [-1.0, 1.0]]), 1.0)
    model = build_joint_model(object_unary, motion_unary, np.zeros((1, 1)), np.zeros((1, 1, 2)), KernelParams(), correlation)
    q_object, q_motion = brute_force_marginals(model)
    table = np.array([[0.0 + 0.5 + 0.5, 0.0 + 0.0 - 0.5], [1.0 + 0.5 - 1.0, 1.0 + 0.0 + 1.0]])
    weights = np.exp(-table) / np.exp(-table).sum()
    np.testing.assert_allclose(q_object.values[0], weights.sum(axis=1), atol=1e-12)
    np.testing.assert_allclose(q_motion.values[0], weights.sum(axis=0), atol=1e-12)

    flat = GridShape(2, 2)
    zero = build_joint_model(
        UnaryField(flat, PAIR, np.zeros((4, 2))),
        UnaryField(flat, MOTION_LABELS, np.zeros((4, 2))),
        np.zeros((2, 2)),
        np.zeros((2, 2, 2)),
        KernelParams(w_app=0.0, w_smooth=0.0, w_flow=0.0),
    )
    q_object, q_motion = brute_force_marginals(zero)
    np.testing.assert_allclose(q_object.values, 0.5, atol=1e-12)
    np.testing.assert_allclose(q_motion.values, 0.5, atol=1e-12)


def test_brute_force_size_guard() -> None:
    model = random_model(GridShape(3, 4), np.random.default_rng(7), KernelParams(), w_corr=1.0)
    with pytest.raises(SizeGuardExceeded):
        brute_force_marginals(model)


def test_mean_field_agrees_with_exact_marginals() -> None:
    """Mean field is approximate: agreement is measured over many small instances."""
    rng = np.random.default_rng(8)
    shape = GridShape(2, 4)
    params = KernelParams(w_app=0.25, w_smooth=0.25, w_flow=0.5)
    config = InferenceConfig(mode="exact", max_iterations=200, residual_tolerance=1e-8)
    agree = total = 0
    errors = []
    for _ in range(100):
        model = random_model(shape, rng, params, w_corr=0.5)
        exact_object, exact_motion = brute_force_marginals(model)
        result = run_inference(model, config)
        for approx, exact in ((result.q_object, exact_object), (result.q_motion, exact_motion)):
            agree += int(np.sum(np.argmax(approx.values, axis=1) == np.argmax(exact.values, axis=1)))
            total += shape.size
            errors.append(np.abs(approx.values - exact.values).sum(axis=1))
    assert agree / total >= 0.9
    assert float(np.mean(np.concatenate(errors))) <= 0.15


def test_residual_trace_csv(tmp_path) -> None:
    path = tmp_path / "residuals.csv"
    write_residual_trace(path, [0.5, 0.25, 1e-4])
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["iteration", "residual"]
    assert [int(row[0]) for row in rows[1:]] == [1, 2, 3]
    assert [float(row[1]) for row in rows[1:]] == [0.5, 0.25, 1e-4]


def test_scene_converges_and_recovers_motion(scene) -> None:
    result = run_inference(scene_model(scene), InferenceConfig())
    assert result.residual < 1e-3
    assert result.iterations == len(result.trace) <= 30
    stationary, moving = iou(result.labels_motion, scene.gt_motion)
    assert stationary >= 0.9
    assert moving >= 0.9


def test_fast_filter_matches_exact_labels(small_scene) -> None:
    model = scene_model(small_scene)
    fast = run_inference(model, InferenceConfig(mode="fast"))
    exact = run_inference(model, InferenceConfig(mode="exact"))
    for layer in ("labels_object", "labels_motion"):
        same = getattr(fast, layer).assignment == getattr(exact, layer).assignment
        assert same.mean() >= 0.99
