import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rde_lab.measure_core import (
    Measure,
    MeasureError,
    SimplexAtomMeasure,
    StateSpace,
    TensorMeasure,
    canonicalize,
    diag_measure,
    diagonal_mass,
    first_moment,
    marginal,
    merge_atoms,
    moment_measure,
    product,
    symmetry_check,
    tv_distance,
)
from oracles import brute_moment
from strategies import laws

S2 = StateSpace.of_size(2)


def m(*w):
    return Measure.of(list(w))


def atoms(*pairs):
    return SimplexAtomMeasure.from_atoms([(w, m(*p)) for w, p in pairs])


# -- construction

def test_state_space_rejects_duplicates():
    with pytest.raises(MeasureError):
        StateSpace(("a", "a"))


def test_measure_renormalises_within_tolerance():
    mu = Measure(S2, np.array([0.5, 0.5 + 1e-13]))
    assert mu.weights.sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("w", [[0.6, 0.6], [-0.1, 1.1], [0.9, 0.0]])
def test_measure_rejects_invalid(w):
    with pytest.raises(MeasureError):
        Measure(S2, np.array(w))


def test_tensor_rejects_wrong_size():
    with pytest.raises(MeasureError):
        TensorMeasure(S2, 2, np.ones(3) / 3)


def test_tensor_order_cap():
    with pytest.raises(MeasureError):
        product([m(1, 0)] * 4)


# -- product, marginal, diag

def test_product_point_masses():
    assert product([m(1, 0), m(0, 1)]).array()[0, 1] == 1.0


def test_product_uniform():
    assert np.allclose(product([m(.5, .5), m(.5, .5)]).entries, .25)


def test_product_entries_big_endian():
    assert np.allclose(product([m(.3, .7), m(.6, .4)]).entries, [.18, .12, .42, .28])


def test_product_mixed_spaces():
    with pytest.raises(MeasureError):
        product([m(.5, .5), Measure.of([1 / 3] * 3)])


def test_marginal_examples():
    u = product([m(.5, .5), m(.5, .5)])
    assert np.allclose(marginal(u, [1]).entries, [.5, .5])
    assert np.allclose(marginal(product([m(.3, .7), m(.6, .4)]), [2]).entries, [.6, .4])
    assert np.allclose(marginal(diag_measure(m(.3, .7), 2), [1]).entries, [.3, .7])


def test_marginal_bad_coords():
    u = product([m(.5, .5), m(.5, .5)])
    with pytest.raises(MeasureError):
        marginal(u, [3])
    with pytest.raises(MeasureError):
        marginal(u, [1, 1])


def test_marginal_reorders():
    nu = product([m(.3, .7), m(.6, .4), m(1, 0)])
    swapped = marginal(nu, [2, 1]).array()
    assert np.allclose(swapped, np.outer([.6, .4], [.3, .7]))


def test_diag_examples():
    assert np.allclose(diag_measure(m(.5, .5), 2).entries, [.5, 0, 0, .5])
    assert diag_measure(m(1, 0), 2).array()[0, 0] == 1.0
    d3 = diag_measure(m(.3, .7), 3).array()
    assert d3[0, 0, 0] == pytest.approx(.3) and d3[1, 1, 1] == pytest.approx(.7)
    assert d3.sum() == pytest.approx(1.0)


# -- moments

def test_moment_of_mu_bar_is_diag():
    rho = atoms((.5, (1, 0)), (.5, (0, 1)))
    assert np.allclose(moment_measure(rho, 2).entries, diag_measure(m(.5, .5), 2).entries)


def test_moment_of_single_atom_is_product():
    assert np.allclose(moment_measure(atoms((1, (.5, .5))), 2).entries, .25)


def test_first_moment_barycentre():
    rho = atoms((.5, (.2, .8)), (.5, (.6, .4)))
    assert np.allclose(first_moment(rho).weights, [.4, .6])
    assert np.allclose(moment_measure(rho, 1).entries, [.4, .6])


@given(st.integers(1, 5), st.integers(2, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_moment_matches_loops(n_atoms, k, order, seed):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(n_atoms))
    p = rng.dirichlet(np.ones(k), n_atoms)
    rho = SimplexAtomMeasure(StateSpace.of_size(k), w, p)
    assert np.allclose(moment_measure(rho, order).array(), brute_moment(w, p, order), atol=1e-14)


@given(st.integers(1, 5), st.integers(2, 3), st.integers(0, 2**31))
def test_moment_marginals_and_symmetry(n_atoms, k, seed):
    rng = np.random.default_rng(seed)
    rho = SimplexAtomMeasure(StateSpace.of_size(k), rng.dirichlet(np.ones(n_atoms)),
                             rng.dirichlet(np.ones(k), n_atoms))
    fm = first_moment(rho)
    for order in (2, 3):
        nu = moment_measure(rho, order)
        assert symmetry_check(nu)[0]
        for c in range(1, order + 1):
            assert tv_distance(marginal(nu, [c]).as_measure(), fm) <= 1e-14


# -- diagonal mass and tv

def test_diagonal_mass_examples():
    assert diagonal_mass(diag_measure(m(.5, .5), 2)) == pytest.approx(1.0)
    assert diagonal_mass(product([m(.5, .5), m(.5, .5)])) == pytest.approx(.5)
    assert diagonal_mass(product([m(.3, .7), m(.3, .7)])) == pytest.approx(.58)


def test_diagonal_mass_wrong_order():
    with pytest.raises(MeasureError):
        diagonal_mass(product([m(.5, .5)] * 3))


@given(laws(3))
def test_diagonal_mass_identities(w):
    mu = Measure.of(w)
    assert diagonal_mass(diag_measure(mu, 2)) == pytest.approx(1.0, abs=1e-14)
    assert diagonal_mass(product([mu, mu])) == pytest.approx(float((w ** 2).sum()), abs=1e-14)


def test_tv_examples():
    a = m(.3, .7)
    assert tv_distance(a, a) == 0.0
    assert tv_distance(m(1, 0), m(0, 1)) == 1.0
    assert tv_distance(m(.3, .7), m(.5, .5)) == pytest.approx(.2)


def test_tv_shape_mismatch():
    with pytest.raises(MeasureError):
        tv_distance(m(.5, .5), Measure.of([1 / 3] * 3))


@given(laws(3), laws(3))
def test_product_then_marginal(a, b):
    nu = product([Measure.of(a), Measure.of(b)])
    assert np.allclose(marginal(nu, [1]).entries, a, atol=1e-15)
    assert np.allclose(marginal(nu, [2]).entries, b, atol=1e-15)


# -- canonical forms

def test_canonicalize_merges_identical():
    c = canonicalize(atoms((.5, (.3, .7)), (.5, (.3, .7))))
    assert c.n_atoms == 1 and c.weights[0] == pytest.approx(1.0)


def test_canonicalize_drops_zero_weight():
    rho = SimplexAtomMeasure(S2, np.array([1.0, 0.0]), np.array([[.3, .7], [1, 0]]))
    assert canonicalize(rho).n_atoms == 1


def test_canonicalize_merges_within_eps():
    rho = SimplexAtomMeasure(S2, np.array([.5, .5]), np.array([[.5, .5], [.5 + 1e-14, .5 - 1e-14]]))
    assert canonicalize(rho, 1e-12).n_atoms == 1
    assert canonicalize(rho, 0.0).n_atoms == 2


def test_canonicalize_sorted():
    c = canonicalize(atoms((.2, (.9, .1)), (.3, (.1, .9)), (.5, (.5, .5))))
    assert [tuple(p) for p in c.points] == sorted(tuple(p) for p in c.points)


def test_merge_is_single_linkage():
    pts = np.array([[0.5, 0.5], [0.5 + 8e-13, 0.5 - 8e-13], [0.5 + 1.6e-12, 0.5 - 1.6e-12]])
    out = merge_atoms(S2, np.ones(3) / 3, pts, 1e-12)
    assert out.n_atoms == 1


@given(st.integers(1, 8), st.integers(0, 2**31), st.sampled_from([0.0, 1e-12, 1e-3]))
def test_canonicalize_moments(n_atoms, seed, eps):
    rng = np.random.default_rng(seed)
    pts = rng.dirichlet(np.ones(3), n_atoms)
    pts = np.vstack([pts, pts[: n_atoms // 2]])  # exact duplicates must merge
    w = rng.dirichlet(np.ones(len(pts)))
    rho = SimplexAtomMeasure(StateSpace.of_size(3), w, pts)
    c = canonicalize(rho, eps)
    merges = rho.n_atoms - c.n_atoms
    assert tv_distance(first_moment(c), first_moment(rho)) <= 1e-12 + eps
    assert np.abs(moment_measure(c, 2).entries - moment_measure(rho, 2).entries).max() <= 1e-12 + eps * max(merges, 1)


# -- symmetry

def test_symmetry_examples():
    assert symmetry_check(diag_measure(m(.3, .7), 2))[0]
    assert symmetry_check(product([m(.3, .7), m(.3, .7)]))[0]
    ok, worst = symmetry_check(product([m(1, 0), m(0, 1)]))
    assert not ok and worst == pytest.approx(1.0)


# -- serialisation

def test_tensor_csv_roundtrip():
    nu = product([m(.3, .7), m(.6, .4)])
    text = nu.to_csv()
    back = TensorMeasure.from_csv(text, S2)
    assert np.array_equal(back.entries, nu.entries)
    assert text.splitlines()[1].startswith("0,0,")


def test_tensor_json_roundtrip():
    nu = diag_measure(Measure.of([.2, .3, .5]), 3)
    back = TensorMeasure.from_json(json.loads(json.dumps(nu.to_json())))
    assert np.array_equal(back.entries, nu.entries) and back.order == 3


def test_atoms_json_roundtrip():
    rho = atoms((.25, (.2, .8)), (.75, (.6, .4)))
    back = SimplexAtomMeasure.from_json(json.loads(json.dumps(rho.to_json())))
    assert np.array_equal(back.points, rho.points) and np.array_equal(back.weights, rho.weights)


def test_values_are_read_only():
    mu = m(.3, .7)
    with pytest.raises(ValueError):
        mu.weights[0] = 1.0
