import numpy as np
import pytest

from graphalign.embed import wl_alignment
from graphalign.errors import DegeneratePriorError
from graphalign.graph import random_graph
from graphalign.marginals import (
    Marginals,
    adaptive_marginals,
    floor_marginals,
    marginals_from_alignment,
    uniform_marginals,
)


def test_from_uniform_plan():
    m = marginals_from_alignment(np.full((2, 2), 0.25))
    np.testing.assert_allclose(m.mu, [0.5, 0.5])
    np.testing.assert_allclose(m.nu, [0.5, 0.5])


def test_from_asymmetric_plan():
    m = marginals_from_alignment([[0.5, 0.1], [0.2, 0.2]])
    np.testing.assert_allclose(m.mu, [0.6, 0.4])
    np.testing.assert_allclose(m.nu, [0.7, 0.3])


def test_from_singleton():
    m = marginals_from_alignment([[1.0]])
    assert m.mu.tolist() == [1.0] and m.nu.tolist() == [1.0]


def test_zero_mass_is_degenerate():
    with pytest.raises(DegeneratePriorError):
        marginals_from_alignment(np.zeros((2, 3)))


@pytest.mark.parametrize("n1,n2", [(2, 4), (1, 1), (3, 3)])
def test_uniform(n1, n2):
    m = uniform_marginals(n1, n2)
    np.testing.assert_allclose(m.mu, np.full(n1, 1 / n1))
    np.testing.assert_allclose(m.nu, np.full(n2, 1 / n2))


def test_uniform_rejects_empty():
    with pytest.raises(ValueError):
        uniform_marginals(0, 3)


def test_mass_mismatch_rejected():
    with pytest.raises(ValueError):
        Marginals([0.5, 0.5], [0.5])
    with pytest.raises(ValueError):
        Marginals([-0.1, 1.1], [1.0])


def test_adaptive_identity_embeddings():
    m = adaptive_marginals(np.eye(3), np.eye(3))
    np.testing.assert_allclose(m.mu, np.full(3, 1 / 3))
    np.testing.assert_allclose(m.nu, np.full(3, 1 / 3))


def test_adaptive_hand_example():
    m = adaptive_marginals(np.array([[1.0, 0.0]]), np.eye(2))
    np.testing.assert_allclose(m.mu, [1.0])
    np.testing.assert_allclose(m.nu, [1.0, 0.0])


def test_adaptive_falls_back_on_negative_similarity():
    prev = uniform_marginals(1, 1)
    with pytest.warns(RuntimeWarning):
        m = adaptive_marginals(np.array([[1.0]]), np.array([[-1.0]]), previous=prev)
    assert m is prev
    with pytest.raises(DegeneratePriorError):
        adaptive_marginals(np.array([[1.0]]), np.array([[-1.0]]))


def test_wl_marginals_are_probability_vectors():
    gs, gt = random_graph(30, seed=0), random_graph(40, seed=1)
    m = marginals_from_alignment(wl_alignment(gs, gt))
    assert m.mu.sum() == pytest.approx(1.0, abs=1e-9)
    assert m.nu.sum() == pytest.approx(1.0, abs=1e-9)
    assert len(m.mu) == 30 and len(m.nu) == 40


def test_floor_keeps_mass_and_removes_zeros():
    m = floor_marginals(Marginals([1.0, 0.0], [0.5, 0.5]))
    assert (m.mu > 0).all()
    assert m.mu.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(m.nu, [0.5, 0.5])
