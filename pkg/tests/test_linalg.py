"""Transfer-map primitives against dense Kronecker-product oracles."""

import numpy as np
import pytest

from cmpskit.linalg import (
    Deflation,
    LinalgError,
    TransferBlock,
    leading_fixed_points,
    lowest_eigenpairs,
    solve_shifted_transfer,
    transfer_apply,
    transfer_matrix,
)


def random_block(rng, D, mixed=False):
    def mat():
        return rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))

    Qa, Ra = mat() - 1.5 * np.eye(D), mat()
    if mixed:
        return TransferBlock(Qa, Ra, mat() - 1.5 * np.eye(D), mat())
    return TransferBlock(Qa, Ra)


def test_transfer_apply_scalar_normalized():
    block = TransferBlock(np.array([[-0.5]]), np.array([[1.0]]))
    x = np.ones((1, 1), dtype=complex)
    assert abs(transfer_apply(block, x, "right")[0, 0]) < 1e-15


def test_transfer_apply_scalar():
    block = TransferBlock(np.array([[-1.0]]), np.array([[1.0]]))
    x = np.ones((1, 1), dtype=complex)
    assert abs(transfer_apply(block, x, "right")[0, 0] + 1.0) < 1e-15


@pytest.mark.parametrize("mixed", [False, True])
def test_transfer_apply_matches_kron(mixed):
    rng = np.random.default_rng(7)
    block = random_block(rng, 2, mixed=mixed)
    Tmat = transfer_matrix(block)
    x = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    got = transfer_apply(block, x, "right").ravel()
    want = Tmat @ x.ravel()
    assert np.linalg.norm(got - want) < 1e-13 * np.linalg.norm(want)
    # left action is the transpose in the trace pairing Tr(y T(x)) = Tr(T^L(y) x)
    gotl = transfer_apply(block, x, "left").ravel()
    wantl = (x.ravel() @ Tmat).reshape(-1)  # row-vector convention: vec(y)^T T
    # Tr(y T(x)) = vec(y^T) . vec(T(x)); check via explicit traces below instead
    y = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    lhs = np.trace(y @ transfer_apply(block, x, "right"))
    rhs = np.trace(transfer_apply(block, y, "left") @ x)
    assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))
    del gotl, wantl


def test_transfer_left_right_adjoint_same_block():
    # for a same-state block, Tr(y^dag T(x)) = Tr((T_left(y))^dag x)
    rng = np.random.default_rng(11)
    block = random_block(rng, 3)
    for _ in range(8):
        x = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        y = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        lhs = np.trace(y.conj().T @ transfer_apply(block, x, "right"))
        rhs = np.trace(transfer_apply(block, y, "left").conj().T @ x)
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def test_transfer_apply_rejects_bad_shape():
    rng = np.random.default_rng(0)
    block = random_block(rng, 3)
    with pytest.raises(ValueError):
        transfer_apply(block, np.zeros((2, 2)), "right")


def test_leading_fixed_points_scalar():
    eta, l, r = leading_fixed_points(np.array([[-0.5]]), np.array([[1.0]]))
    assert abs(eta) < 1e-14 and abs(l[0, 0] - 1) < 1e-14 and abs(r[0, 0] - 1) < 1e-14
    eta, l, r = leading_fixed_points(np.array([[-1.0]]), np.array([[1.0]]))
    assert abs(eta + 1.0) < 1e-14


@pytest.mark.parametrize("D", [4, 8])
def test_leading_fixed_points_random(D):
    rng = np.random.default_rng(3)
    Q = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D)) - 1.5 * np.eye(D)
    R = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    eta, l, r = leading_fixed_points(Q, R, tol=1e-13)
    # dense oracle: full eigendecomposition of the D^2 x D^2 matrix
    Tmat = transfer_matrix(TransferBlock(Q, R))
    w = np.linalg.eigvals(Tmat)
    assert abs(eta - w.real.max()) < 1e-10 * max(1.0, abs(eta))
    shifted = TransferBlock(Q - 0.5 * eta * np.eye(D), R)
    assert np.linalg.norm(transfer_apply(shifted, r, "right")) < 1e-9
    assert np.linalg.norm(transfer_apply(shifted, l, "left")) < 1e-9
    assert np.linalg.norm(l - l.conj().T) < 1e-12
    assert np.linalg.norm(r - r.conj().T) < 1e-12
    assert abs(np.trace(l @ r) - 1.0) < 1e-12
    assert abs(np.trace(r) - 1.0) < 1e-12


def test_eta_shift_resolves_to_zero():
    rng = np.random.default_rng(5)
    D = 4
    Q = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D)) - 1.5 * np.eye(D)
    R = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    eta, _, _ = leading_fixed_points(Q, R)
    eta2, _, _ = leading_fixed_points(Q - 0.5 * eta * np.eye(D), R)
    assert abs(eta2) < 1e-10 * max(1.0, abs(eta))


def test_solve_shifted_scalar():
    block = TransferBlock(np.array([[-1.0]]), np.array([[1.0]]))  # T = -1
    b = np.array([[0.7 + 0.2j]])
    x = solve_shifted_transfer(block, 0.0, b)
    assert abs(x[0, 0] - b[0, 0]) < 1e-12
    x = solve_shifted_transfer(block, 2j, np.array([[1.0 + 0j]]))
    assert abs(x[0, 0] - 1.0 / (1.0 + 2j)) < 1e-12


def test_solve_shifted_gapped_vs_dense():
    rng = np.random.default_rng(13)
    D = 3
    block = random_block(rng, D, mixed=True)
    rhs = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    p = 0.8
    x = solve_shifted_transfer(block, 1j * p, rhs, rtol=1e-12)
    Tmat = transfer_matrix(block)
    want = np.linalg.solve(1j * p * np.eye(D * D) - Tmat, rhs.ravel())
    assert np.linalg.norm(x.ravel() - want) < 1e-10 * np.linalg.norm(want)


def test_solve_shifted_deflated_vs_dense_pseudo_inverse():
    rng = np.random.default_rng(17)
    D = 3
    Q = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D)) - 1.5 * np.eye(D)
    R = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    eta, l, r = leading_fixed_points(Q, R)
    Q = Q - 0.5 * eta * np.eye(D)
    block = TransferBlock(Q, R)
    defl = Deflation(l, r)
    rhs = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    x = solve_shifted_transfer(block, 0.0, rhs, deflation=defl, rtol=1e-12)

    # dense build: project out the zero eigenspace, invert on the complement
    Tmat = transfer_matrix(block)
    w, V = np.linalg.eig(Tmat)
    i0 = int(np.argmin(np.abs(w)))
    g = np.zeros_like(w)
    keep = np.arange(len(w)) != i0
    g[keep] = 1.0 / (0.0 - w[keep])
    Pinv = V @ np.diag(g) @ np.linalg.inv(V)
    want = Pinv @ rhs.ravel()
    assert np.linalg.norm(x.ravel() - want) < 1e-10 * max(1.0, np.linalg.norm(want))
    # solution stays in the deflated complement
    assert abs(np.trace(l @ x)) < 1e-10 * np.linalg.norm(x)


def test_solve_shifted_zero_shift_ungapped_requires_deflation():
    rng = np.random.default_rng(2)
    D = 3
    Q = rng.standard_normal((D, D)) - 1.5 * np.eye(D) + 0j
    R = rng.standard_normal((D, D)) + 0j
    eta, _, _ = leading_fixed_points(Q, R)
    block = TransferBlock(Q - 0.5 * eta * np.eye(D), R)  # genuinely ungapped
    with pytest.raises(LinalgError):
        solve_shifted_transfer(block, 0.0, np.eye(D, dtype=complex), maxiter=60)


def test_lowest_eigenpairs_identity():
    w, vecs = lowest_eigenpairs(lambda y: y, D=3, k=3)
    assert np.allclose(w, 1.0)
    assert len(vecs) == 3


def test_lowest_eigenpairs_kronecker_structure():
    rng = np.random.default_rng(23)
    D = 3
    A = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    A = 0.5 * (A + A.conj().T)
    w, _ = lowest_eigenpairs(lambda y: A @ y, D=D, k=4)
    wa = np.sort(np.linalg.eigvalsh(A))
    # each eigenvalue of A appears D-fold
    want = np.sort(np.repeat(wa, D))[:4]
    assert np.allclose(w, want, atol=1e-10)


def test_lowest_eigenpairs_random_dense_oracle():
    rng = np.random.default_rng(29)
    D = 3
    n = D * D
    H = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    H = 0.5 * (H + H.conj().T)
    w, vecs = lowest_eigenpairs(lambda y: (H @ y.ravel()).reshape(D, D), D=D, k=5,
                                hermiticity_check=rng)
    want = np.sort(np.linalg.eigvalsh(H))[:5]
    assert np.allclose(w, want, atol=1e-10)
    for E, y in zip(w, vecs):
        res = np.linalg.norm((H @ y.ravel()).reshape(D, D) - E * y)
        assert res < 1e-8 * max(1.0, abs(E))
    # eigenvectors orthonormal
    V = np.column_stack([y.ravel() for y in vecs])
    assert np.linalg.norm(V.conj().T @ V - np.eye(5)) < 1e-10


def test_lowest_eigenpairs_iterative_path():
    rng = np.random.default_rng(31)
    D = 12  # n = 144 > dense cutoff
    n = D * D
    H = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    H = 0.5 * (H + H.conj().T)
    w, vecs = lowest_eigenpairs(lambda y: (H @ y.ravel()).reshape(D, D), D=D, k=4,
                                tol=1e-9)
    want = np.sort(np.linalg.eigvalsh(H))[:4]
    assert np.allclose(w, want, atol=1e-7)
