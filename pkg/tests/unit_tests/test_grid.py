import math

import numpy as np
import pytest

from motioncrf.errors import (
    AllZeroPixel,
    BadMagic,
    DataError,
    InvalidParameter,
    LabelOutOfRange,
    NonFiniteValue,
    TruncatedPayload,
    VersionMismatch,
)
from motioncrf.grid import (
    IGNORE_LABEL,
    MOTION_LABELS,
    GridShape,
    LabelField,
    LabelSpace,
    ProbabilityField,
    UnaryField,
    load_array,
    load_tensor,
    normalize_distribution,
    read_label_map,
    save_tensor,
    softmax_from_costs,
    write_label_map,
)

PAIR = LabelSpace(("a", "b"))


def test_grid_shape_row_major() -> None:
    shape = GridShape(3, 4)
    assert shape.size == 12
    assert shape.pixel(7) == (1, 3)
    assert shape.index(1, 3) == 7
    with pytest.raises(InvalidParameter):
        GridShape(0, 4)


def test_label_space_rules() -> None:
    assert MOTION_LABELS.names == ("stationary", "moving")
    assert LabelSpace.parse(" road, car ,").names == ("road", "car")
    with pytest.raises(InvalidParameter):
        LabelSpace(("a", "a"))
    with pytest.raises(InvalidParameter):
        LabelSpace(())
    with pytest.raises(LabelOutOfRange):
        PAIR.index("c")


@pytest.mark.parametrize(
    "raw, expected",
    [((0.5, 0.5), (0.5, 0.5)), ((2.0, 2.0), (0.5, 0.5)), ((1.0, 3.0), (0.25, 0.75))],
)
def test_normalize_distribution_examples(raw, expected) -> None:
    field = normalize_distribution(np.array([raw]), GridShape(1, 1), PAIR)
    np.testing.assert_allclose(field.values[0], expected)


def test_normalize_distribution_errors_and_idempotence() -> None:
    shape = GridShape(1, 2)
    with pytest.raises(AllZeroPixel):
        normalize_distribution(np.array([[1.0, 1.0], [0.0, 0.0]]), shape, PAIR)
    with pytest.raises(NonFiniteValue):
        normalize_distribution(np.array([[1.0, np.nan], [1.0, 1.0]]), shape, PAIR)
    with pytest.raises(NonFiniteValue):
        normalize_distribution(np.array([[1.0, -1.0], [1.0, 1.0]]), shape, PAIR)
    rng = np.random.default_rng(3)
    once = normalize_distribution(rng.random((2, 2)) + 0.1, shape, PAIR)
    twice = normalize_distribution(once.values, shape, PAIR)
    np.testing.assert_allclose(twice.values, once.values, atol=1e-12)


def test_softmax_examples() -> None:
    shape = GridShape(1, 3)
    costs = UnaryField(shape, PAIR, np.array([[0.0, 0.0], [0.0, math.log(3.0)], [1000.0, 1001.0]]))
    q = softmax_from_costs(costs).values
    np.testing.assert_allclose(q[0], (0.5, 0.5))
    np.testing.assert_allclose(q[1], (0.75, 0.25))
    np.testing.assert_allclose(q[2], (1 / (1 + math.exp(-1)), 1 - 1 / (1 + math.exp(-1))), rtol=1e-12)
    assert q[2, 0] == pytest.approx(0.731, abs=1e-3)


def test_softmax_shift_invariance_and_argmax() -> None:
    rng = np.random.default_rng(0)
    shape = GridShape(4, 5)
    labels = LabelSpace(("a", "b", "c"))
    table = rng.normal(0, 5, (shape.size, 3))
    table[0] = (1.0, 1.0, 2.0)
    base = softmax_from_costs(UnaryField(shape, labels, table)).values
    shifted = softmax_from_costs(UnaryField(shape, labels, table + rng.normal(0, 50, (shape.size, 1)))).values
    np.testing.assert_allclose(base, shifted, atol=1e-12)
    np.testing.assert_array_equal(np.argmax(base, axis=1), np.argmin(table, axis=1))
    assert np.argmax(base[0]) == 0


def test_fields_reject_bad_values() -> None:
    shape = GridShape(1, 1)
    with pytest.raises(NonFiniteValue):
        UnaryField(shape, PAIR, np.array([[np.inf, 0.0]]))
    with pytest.raises(DataError):
        ProbabilityField(shape, PAIR, np.array([[0.3, 0.3]]))
    with pytest.raises(LabelOutOfRange):
        LabelField(shape, PAIR, np.array([[2]]))
    assert not LabelField(shape, PAIR, np.array([[IGNORE_LABEL]])).valid.any()


def test_tensor_file_size_and_round_trip(tmp_path) -> None:
    path = tmp_path / "one.tnsr"
    save_tensor(path, [1], np.array([0.0]))
    assert path.stat().st_size == 17
    save_tensor(path, [2, 2], np.array([1.0, 2.0, 3.0, 4.0]))
    dims, payload = load_tensor(path)
    assert dims == (2, 2)
    np.testing.assert_array_equal(payload, [1.0, 2.0, 3.0, 4.0])


def test_tensor_round_trip_is_bit_exact(tmp_path) -> None:
    path = tmp_path / "bits.tnsr"
    rng = np.random.default_rng(1)
    bits = rng.integers(0, 2**32, size=64, dtype=np.uint32)
    bits[:4] = [0x00000000, 0x80000000, 0x00000001, 0x7FC00001]
    payload = bits.view("<f4")
    save_tensor(path, [8, 8], payload)
    _, loaded = load_tensor(path)
    np.testing.assert_array_equal(loaded.view(np.uint32), bits)


def test_tensor_format_errors(tmp_path) -> None:
    path = tmp_path / "t.tnsr"
    save_tensor(path, [2], np.array([1.0, 2.0]))
    blob = path.read_bytes()
    (tmp_path / "magic.tnsr").write_bytes(b"XNSR" + blob[4:])
    with pytest.raises(BadMagic):
        load_tensor(tmp_path / "magic.tnsr")
    (tmp_path / "version.tnsr").write_bytes(blob[:4] + b"\x02" + blob[5:])
    with pytest.raises(VersionMismatch):
        load_tensor(tmp_path / "version.tnsr")
    (tmp_path / "short.tnsr").write_bytes(blob[:-1])
    with pytest.raises(TruncatedPayload):
        load_tensor(tmp_path / "short.tnsr")
    assert load_array(path).shape == (2,)


def test_label_map_pgm(tmp_path) -> None:
    labels = LabelSpace(("road", "building", "car"))
    grid = np.array([[0, 1, 2], [IGNORE_LABEL, 2, 0]])
    path = tmp_path / "labels.pgm"
    write_label_map(path, LabelField(GridShape(2, 3), labels, grid))
    assert path.read_bytes()[:2] == b"P5"
    back = read_label_map(path, labels)
    np.testing.assert_array_equal(back.assignment, grid)
    with pytest.raises(LabelOutOfRange):
        read_label_map(path, PAIR)
