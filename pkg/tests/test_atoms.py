import numpy as np
import pytest

from dislo.atoms import AtomicMeasure


def test_merge_and_drop_zero():
    mu = AtomicMeasure([[0, 0], [1, 0], [0, 0]], [1, 2, -1])
    assert len(mu) == 1
    assert mu.weights.tolist() == [2]


def test_arithmetic_and_parts():
    mu = AtomicMeasure([[0, 0], [1, 0]], [1, -1])
    nu = AtomicMeasure([[1, 0], [2, 0]], [1, 1])
    s = mu + nu
    assert s == AtomicMeasure([[0, 0], [2, 0]], [1, 1])
    assert (mu - mu).is_empty
    assert mu.positive() == AtomicMeasure.dirac([0, 0])
    assert mu.negative() == AtomicMeasure.dirac([1, 0])
    assert mu.total_variation == 2 and mu.total_mass == 0
    assert mu.abs().weights.tolist() == [1, 1]


def test_non_integer_weights_rejected():
    with pytest.raises(ValueError):
        AtomicMeasure([[0, 0]], [0.5])


def test_immutable():
    mu = AtomicMeasure.dirac([0, 0])
    with pytest.raises(AttributeError):
        mu.points = np.zeros((1, 2))


def test_json_roundtrip_and_list_form():
    mu = AtomicMeasure([[0.25, 0.5], [0.75, 0.5]], [1, -1])
    assert AtomicMeasure.from_json(mu.to_json()) == mu
    assert AtomicMeasure.from_json([[0.25, 0.5, 1], [0.75, 0.5, -1]]) == mu


def test_expanded_repeats_multiplicity():
    mu = AtomicMeasure([[0, 0], [1, 1]], [2, -1])
    assert len(mu.expanded()) == 3


def test_order_independent_equality():
    a = AtomicMeasure([[1, 0], [0, 0]], [1, -1])
    b = AtomicMeasure([[0, 0], [1, 0]], [-1, 1])
    assert a == b
    assert a.sort_key() == b.sort_key()


def test_translate_and_map():
    mu = AtomicMeasure([[1.0, 2.0]], [1])
    np.testing.assert_allclose(mu.translated([1, 1]).points, [[2.0, 3.0]])
    np.testing.assert_allclose(mu.mapped(np.diag([2.0, 3.0])).points, [[2.0, 6.0]])
