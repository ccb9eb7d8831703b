import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ectfem.assembly import MU0
from ectfem.mesh import ConductorIndexMap, Region, build_mesh
from ectfem.meshgen import generate_box_mesh
from ectfem.signals import (PotentialSolution, SignalPoint, conductor_tets, delta_impedance,
                            electric_field, signal_modes, skin_depth, surface_impedance, tet_curl)
from oracles import affine_gradients

REF = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)


def full_map(n):
    return ConductorIndexMap(np.arange(n, dtype=np.int64), np.arange(n, dtype=np.int64))


@pytest.fixture(scope="module")
def box():
    return generate_box_mesh(2, region=Region.TUBE)


@pytest.fixture(scope="module")
def single():
    return build_mesh(REF, np.array([[0, 1, 2, 3]]), np.array([int(Region.DEFECT)]))


def random_solution(rng, mesh, omega=3.0):
    n = mesh.n_nodes
    A = rng.normal(size=(n, 3)) + 1j * rng.normal(size=(n, 3))
    V = rng.normal(size=n) + 1j * rng.normal(size=n)
    return PotentialSolution(A, V, omega, full_map(n))


# --- closed forms

def test_skin_depth_unit_case():
    assert skin_depth(2.0, 1.0, 1.0) == 1.0


def test_skin_depth_reference_value():
    d = skin_depth(2 * math.pi * 100e3, 4e-7 * math.pi, 1e6)
    assert abs(d - 1.5915e-3) <= 1e-7
    assert d == pytest.approx(math.sqrt(2 / (2 * math.pi * 100e3 * 4e-7 * math.pi * 1e6)), rel=1e-15)


def test_skin_depth_scaling():
    assert skin_depth(1.0, 1.0, 4.0) == pytest.approx(skin_depth(1.0, 1.0, 1.0) / 2, rel=1e-15)


@pytest.mark.parametrize("args", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
def test_closed_forms_reject_non_positive(args):
    with pytest.raises(ValueError):
        skin_depth(*args)
    with pytest.raises(ValueError):
        surface_impedance(*args)


def test_surface_impedance():
    assert surface_impedance(2.0, 1.0, 1.0) == 1 - 1j
    w, mu, s = 2 * math.pi * 100e3, 4e-7 * math.pi, 1e6
    z = surface_impedance(w, mu, s)
    oracle = (1 - 1j) / (math.sqrt(2 / (w * mu * s)) * s)
    assert abs(z - oracle) <= 1e-12 * abs(oracle)
    assert z.real == pytest.approx(6.283e-4, rel=1e-3)
    assert abs(z) == pytest.approx(math.sqrt(2) / (skin_depth(w, mu, s) * s), rel=1e-15)


# --- electric field

def test_field_from_linear_potential(box):
    n = box.n_nodes
    sol = PotentialSolution(np.zeros((n, 3), complex), box.nodes[:, 0] + 0j, 5.0, full_map(n))
    E = electric_field(sol, box)
    assert np.abs(E - [1, 0, 0]).max() < 1e-13


def test_field_from_constant_potential_vector(box):
    n = box.n_nodes
    a = np.array([1 + 2j, -0.5, 3j])
    sol = PotentialSolution(np.tile(a, (n, 1)), np.zeros(n, complex), 7.0, full_map(n))
    assert np.abs(electric_field(sol, box) - 1j * 7.0 * a).max() < 1e-13


def test_no_potential_gradient_in_insulators():
    m = generate_box_mesh(1, region=Region.VACUUM)
    n = m.n_nodes
    cmap = ConductorIndexMap(np.full(n, -1, dtype=np.int64), np.zeros(0, dtype=np.int64))
    sol = PotentialSolution(np.ones((n, 3), complex), np.zeros(0, complex), 2.0, cmap)
    assert not conductor_tets(m, cmap).any()
    assert np.allclose(electric_field(sol, m), 2j)


def test_field_matches_per_tet_gradient_oracle(box, rng):
    sol = random_solution(rng, box)
    E = electric_field(sol, box)
    for k, t in enumerate(box.tets):
        G, _ = affine_gradients(box.nodes[t])
        expect = 1j * sol.omega * sol.A[t].mean(axis=0) + G.T @ sol.V[t]
        assert np.abs(E[k] - expect).max() <= 1e-13 * np.abs(expect).max()


def test_curl_matches_oracle(box, rng):
    sol = random_solution(rng, box)
    C = tet_curl(sol, box)
    for k, t in enumerate(box.tets):
        G, _ = affine_gradients(box.nodes[t])
        # d A_j / d x_i = sum_a A_a,j G_a,i
        J = sol.A[t].T @ G
        expect = np.array([J[2, 1] - J[1, 2], J[0, 2] - J[2, 0], J[1, 0] - J[0, 1]])
        assert np.abs(C[k] - expect).max() <= 1e-12 * np.abs(expect).max()


def test_field_linearity(box, rng):
    s1, s2 = random_solution(rng, box), random_solution(rng, box)
    alpha = 0.3 - 1.7j
    comb = PotentialSolution(alpha * s1.A + s2.A, alpha * s1.V + s2.V, s1.omega, s1.cmap)
    lhs = electric_field(comb, box)
    rhs = alpha * electric_field(s1, box) + electric_field(s2, box)
    assert np.abs(lhs - rhs).max() <= 1e-14 * np.abs(rhs).max()


# --- impedance variation

def _hand_fields(B, g, omega):
    """Nodal A = B x x / 2 (curl B) and V = g . x on the reference tet."""
    A = 0.5 * np.cross(B, REF)
    return PotentialSolution(A + 0j, (REF @ g) + 0j, omega, full_map(4))


def test_delta_impedance_hand_oracle(single):
    omega = 2.0
    Bk, gk = np.array([1.0, 2.0, -1.0]), np.array([0.5, 0.0, 1.0])
    Bl, gl = np.array([0.0, 1.0, 3.0]), np.array([-1.0, 2.0, 0.0])
    sk, sl = _hand_fields(Bk, gk, omega), _hand_fields(Bl, gl, omega)
    mu_e, mu_d, sig, sig_e = 2.0, 3.0, 5.0, 0.5
    vol = 1 / 6
    centroid = REF.mean(axis=0)
    Ek = 1j * omega * 0.5 * np.cross(Bk, centroid) + gk
    El = 1j * omega * 0.5 * np.cross(Bl, centroid) + gl
    hand = (1 / (1j * omega)) * (mu_e - mu_d) / (mu_d * mu_e) * vol * (Bk @ Bl) \
        + (sig - sig_e) * vol * (Ek @ El)
    got = delta_impedance(sk, sl, single, np.array([0]), mu_e, mu_d, sig, sig_e, omega)
    assert abs(got - hand) <= 1e-13 * abs(hand)
    conj = delta_impedance(sk, sl, single, np.array([0]), mu_e, mu_d, sig, sig_e, omega, conjugate=True)
    hand_c = (1 / (1j * omega)) * (mu_e - mu_d) / (mu_d * mu_e) * vol * (Bk @ Bl) \
        + (sig - sig_e) * vol * (Ek @ El.conj())
    assert abs(conj - hand_c) <= 1e-13 * abs(hand_c)


def test_delta_impedance_zero_prefactors(box, rng):
    s1, s2 = random_solution(rng, box), random_solution(rng, box)
    tets = np.arange(box.n_tets)
    assert delta_impedance(s1, s2, box, tets, MU0, MU0, 1.0, 1.0, 3.0) == 0


def test_delta_impedance_empty_defect(box, rng, caplog):
    s = random_solution(rng, box)
    with caplog.at_level("WARNING"):
        assert delta_impedance(s, s, box, np.array([], dtype=int), MU0, 2 * MU0, 1.0, 0.5, 3.0) == 0
    assert "empty" in caplog.text


def test_delta_impedance_per_tet_sigma(box, rng):
    s1, s2 = random_solution(rng, box), random_solution(rng, box)
    tets = np.arange(box.n_tets)
    sig = rng.uniform(1, 2, box.n_tets)
    total = delta_impedance(s1, s2, box, tets, MU0, MU0, sig, 0.1, 3.0)
    parts = sum(delta_impedance(s1, s2, box, np.array([k]), MU0, MU0, sig[k], 0.1, 3.0)
                for k in tets)
    assert abs(total - parts) <= 1e-13 * abs(total)


def test_delta_impedance_bilinear(box, rng):
    s1, s2, r = (random_solution(rng, box) for _ in range(3))
    tets = np.arange(0, box.n_tets, 3)
    a = 1.5 + 0.5j
    comb = PotentialSolution(a * s1.A + s2.A, a * s1.V + s2.V, s1.omega, s1.cmap)
    args = (box, tets, 2 * MU0, MU0, 1e6, 1.0, 3.0)
    lhs = delta_impedance(comb, r, *args)
    rhs = a * delta_impedance(s1, r, *args) + delta_impedance(s2, r, *args)
    assert abs(lhs - rhs) <= 1e-13 * abs(rhs)


# --- signal modes

def test_signal_modes_arithmetic():
    assert signal_modes(np.zeros((2, 2))) == (0, 0)
    fa, _ = signal_modes(np.array([[2, 4], [0, 0]]))
    assert fa == 3j
    _, f3 = signal_modes(np.array([[1 + 1j, 0], [0, 1 + 1j]]))
    assert f3 == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=1e6, allow_nan=False, allow_infinity=False),
                min_size=4, max_size=4))
def test_signal_modes_definition(vals):
    dz = np.array(vals).reshape(2, 2)
    fa, f3 = signal_modes(dz)
    assert fa == 0.5j * (dz[0, 0] + dz[0, 1])
    assert f3 == 0.5j * (dz[0, 0] - dz[1, 1])
    p = SignalPoint.from_delta(0.0, dz)
    assert p.z_fa == fa and p.z_f3 == f3 and not p.failed


def test_failure_point():
    p = SignalPoint.failure(1e-3)
    assert p.failed and np.isnan(p.z_fa.real) and np.isnan(p.delta_z).all()
