"""Canonical form, observables, and serialization of cMPS states."""

import numpy as np
import pytest

from cmpskit.linalg import TransferBlock, transfer_matrix
from cmpskit.state import (
    ModelParams,
    canonicalize,
    correlation_length,
    density,
    energy_density,
    order_parameter,
    random_state,
    rotate_phase,
    state_from_dict,
    state_to_dict,
)


def random_qr(rng, D):
    Q = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D)) - 1.5 * np.eye(D)
    R = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    return Q, R


def kron_expectation(state, A, B):
    """Brute-force <l| A (x) conj(B) |r> via the dense Kronecker product."""
    D = state.D
    op = np.kron(A, B.conj())
    lvec = np.eye(D, dtype=complex).T.ravel()
    return lvec @ op @ state.r.ravel()


def test_canonicalize_scalar():
    st = canonicalize(np.array([[-0.3]]), np.array([[1.0]]))
    assert abs(st.Q[0, 0] + 0.5) < 1e-12
    assert abs(st.R[0, 0] - 1.0) < 1e-12


def test_canonicalize_idempotent():
    rng = np.random.default_rng(1)
    st = canonicalize(*random_qr(rng, 3))
    st2 = canonicalize(st.Q, st.R)
    assert np.linalg.norm(st2.Q - st.Q) < 1e-11 * max(1.0, np.linalg.norm(st.Q))
    assert np.linalg.norm(st2.R - st.R) < 1e-11 * max(1.0, np.linalg.norm(st.R))


def test_canonicalize_preserves_density():
    rng = np.random.default_rng(4)
    D = 4
    Q, R = random_qr(rng, D)
    st = canonicalize(Q, R)
    # recanonicalize a gauge-perturbed copy; density is a physical observable
    g = np.eye(D) + 0.3 * (rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D)))
    gi = np.linalg.inv(g)
    st2 = canonicalize(gi @ st.Q @ g, gi @ st.R @ g)
    assert abs(density(st2) - density(st)) < 1e-10 * max(1.0, density(st))


def test_canonical_form_properties():
    rng = np.random.default_rng(8)
    st = canonicalize(*random_qr(rng, 4))
    assert st.canonical_defect() < 1e-10
    assert abs(st.eta) < 1e-10
    assert abs(np.trace(st.r) - 1.0) < 1e-12
    assert np.linalg.eigvalsh(st.r).min() > -1e-12


def test_density_coherent_and_vacuum():
    r0 = 0.8 - 0.3j
    st = canonicalize(np.array([[-abs(r0) ** 2 / 2]]), np.array([[r0]]))
    assert abs(density(st) - abs(r0) ** 2) < 1e-12
    stv = canonicalize(np.array([[-0.5]]), np.array([[0.0]]))
    assert density(stv) < 1e-14


def test_density_matches_kron_oracle():
    rng = np.random.default_rng(10)
    st = canonicalize(*random_qr(rng, 4))
    want = kron_expectation(st, st.R, st.R).real
    assert abs(density(st) - want) < 1e-12 * max(1.0, want)


def test_energy_density_d1_closed_forms():
    r0 = 1.0 / np.sqrt(2.0)  # rho = 1/2 minimizes -mu rho + c rho^2 at mu=c=1
    st = canonicalize(np.array([[-r0 ** 2 / 2]]), np.array([[r0]]))
    e = energy_density(st, ModelParams(c=1.0, mu=1.0))
    assert abs(e + 0.25) < 1e-12
    # generic coherent state: e = -mu rho + c rho^2
    rho = 0.37
    st = canonicalize(np.array([[-rho / 2]]), np.array([[np.sqrt(rho)]]))
    e = energy_density(st, ModelParams(c=1.3, mu=0.7))
    assert abs(e - (-0.7 * rho + 1.3 * rho ** 2)) < 1e-12


def test_energy_density_matches_kron_oracle():
    rng = np.random.default_rng(12)
    st = canonicalize(*random_qr(rng, 4))
    params = ModelParams(c=1.1, mu=0.9, u=0.4 - 0.2j)
    C = st.Q @ st.R - st.R @ st.Q
    R2 = st.R @ st.R
    want = (kron_expectation(st, C, C)
            - params.mu * kron_expectation(st, st.R, st.R)
            + params.c * kron_expectation(st, R2, R2)
            + np.conj(params.u) * kron_expectation(st, R2, np.eye(st.D, dtype=complex))
            + params.u * kron_expectation(st, np.eye(st.D, dtype=complex), R2))
    assert abs(energy_density(st, params) - want.real) < 1e-12 * max(1.0, abs(want))


def test_order_parameter():
    r0 = 0.6 + 0.2j
    st = canonicalize(np.array([[-abs(r0) ** 2 / 2]]), np.array([[r0]]))
    assert abs(order_parameter(st) - r0) < 1e-12
    stv = canonicalize(np.array([[-0.5]]), np.array([[0.0]]))
    assert abs(order_parameter(stv)) < 1e-14
    theta = 1.1
    rot = rotate_phase(st, theta)
    assert abs(order_parameter(rot) - np.exp(1j * theta) * order_parameter(st)) < 1e-12


def test_correlation_length_sentinel_and_dense():
    st = canonicalize(np.array([[-0.5]]), np.array([[1.0]]))
    assert correlation_length(st) == np.inf

    rng = np.random.default_rng(14)
    st = canonicalize(*random_qr(rng, 2))
    w = np.linalg.eigvals(transfer_matrix(TransferBlock(st.Q, st.R)))
    w = w[np.argsort(-w.real)]
    i0 = int(np.argmin(np.abs(w)))
    w2 = np.delete(w, i0)
    lam2 = w2[np.argmax(w2.real)]
    assert abs(correlation_length(st) - (-1.0 / lam2.real)) < 1e-10


def test_correlation_length_near_decoupled_product():
    # two D=1 states embedded at D=2 (weak off-diagonal coupling keeps the
    # fixed point full rank; a strictly decoupled embedding is reducible)
    Q = np.array([[-0.5, 0.05], [0.0, -0.5]], dtype=complex)
    R = np.diag([1.0, 0.6]).astype(complex)
    st = canonicalize(Q, R)
    xi = correlation_length(st)
    w = np.linalg.eigvals(transfer_matrix(TransferBlock(st.Q, st.R)))
    w = w[np.argsort(-w.real)]
    i0 = int(np.argmin(np.abs(w)))
    lam2 = np.delete(w, i0)
    lam2 = lam2[np.argmax(lam2.real)]
    assert np.isfinite(xi) and abs(xi - (-1.0 / lam2.real)) < 1e-9


def test_gauge_invariance_of_observables():
    rng = np.random.default_rng(16)
    D = 3
    st = canonicalize(*random_qr(rng, D))
    params = ModelParams(c=1.0, mu=1.0, u=0.2)
    g = np.eye(D) + 0.4 * (rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D)))
    gi = np.linalg.inv(g)
    st2 = canonicalize(gi @ st.Q @ g, gi @ st.R @ g)
    assert abs(density(st2) - density(st)) < 1e-10 * max(1.0, density(st))
    assert abs(energy_density(st2, params) - energy_density(st, params)) < 1e-9
    assert abs(abs(order_parameter(st2)) - abs(order_parameter(st))) < 1e-10


def test_phase_rotation_symmetries():
    rng = np.random.default_rng(18)
    st = canonicalize(*random_qr(rng, 3))
    ll = ModelParams(c=1.0, mu=1.0)
    e0 = energy_density(st, ll)
    for theta in np.linspace(0.3, 5.9, 8):
        assert abs(energy_density(rotate_phase(st, theta), ll) - e0) < 1e-12 * max(1.0, abs(e0))
    pairing = ModelParams(c=1.0, mu=1.0, u=1.0)
    ep = energy_density(st, pairing)
    assert abs(energy_density(rotate_phase(st, np.pi), pairing) - ep) < 1e-12 * max(1.0, abs(ep))
    assert np.allclose(rotate_phase(st, 0.0).R, st.R)


def test_rotation_preserves_canonical_form():
    rng = np.random.default_rng(20)
    st = canonicalize(*random_qr(rng, 4))
    rot = rotate_phase(st, np.pi)
    assert rot.canonical_defect() < 1e-10


def test_serialization_round_trip_bit_exact():
    rng = np.random.default_rng(22)
    st = canonicalize(*random_qr(rng, 3))
    params = ModelParams(c=1.0, mu=0.8, u=0.1 + 0.05j)
    d = state_to_dict(st, params)
    import json

    d2 = json.loads(json.dumps(d))
    st2, params2 = state_from_dict(d2)
    assert np.array_equal(st2.Q, st.Q)
    assert np.array_equal(st2.R, st.R)
    assert np.array_equal(st2.r, st.r)
    assert params2 == params


def test_states_are_immutable():
    rng = np.random.default_rng(24)
    st = random_state(3, rho_target=0.5, rng=rng)
    with pytest.raises(ValueError):
        st.Q[0, 0] = 0.0


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(c=-1.0, mu=1.0)
