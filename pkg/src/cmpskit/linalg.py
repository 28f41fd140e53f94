"""Matrix-free linear algebra on cMPS transfer maps.

The transfer map T_ab = Q_a (x) 1 + 1 (x) conj(Q_b) + R_a (x) conj(R_b) acts
on D x D matrices and is never materialized (except in the small-D dense
helpers used as test oracles).  Row-major vectorization is used throughout,
so that (A (x) conj(B)) vec(x) = vec(A x B^dag).

Conventions for a matrix x and a transfer block (Q_a, R_a; Q_b, R_b):

    right action:  T(x)   = Q_a x + x Q_b^dag + R_a x R_b^dag
    left action:   T^L(x) = x Q_a + Q_b^dag x + R_b^dag x R_a

The left action is the transpose with respect to the trace pairing,
Tr(y T(x)) = Tr(T^L(y) x), which is how row vectors <l| act in the
expectation-value formulas.
"""

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

__all__ = [
    "TransferBlock",
    "Deflation",
    "LinalgError",
    "DegenerateTransferError",
    "SolverConvergenceError",
    "transfer_apply",
    "transfer_matrix",
    "leading_fixed_points",
    "solve_shifted_transfer",
    "lowest_eigenpairs",
]


class LinalgError(RuntimeError):
    """Base class for numerical failures in this module."""


class DegenerateTransferError(LinalgError):
    """Leading transfer eigenvalue is (numerically) degenerate."""


class SolverConvergenceError(LinalgError):
    """An iterative solver did not reach the requested residual."""


class TransferBlock:
    """Mixed transfer map T_ab built from a top pair (Q_a, R_a) and a bottom
    pair (Q_b, R_b), all D x D."""

    def __init__(self, Qa, Ra, Qb=None, Rb=None):
        Qa = np.asarray(Qa, dtype=complex)
        Ra = np.asarray(Ra, dtype=complex)
        Qb = Qa if Qb is None else np.asarray(Qb, dtype=complex)
        Rb = Ra if Rb is None else np.asarray(Rb, dtype=complex)
        D = Qa.shape[0]
        for M in (Qa, Ra, Qb, Rb):
            if M.shape != (D, D):
                raise ValueError(f"inconsistent block dimensions: {M.shape} vs D={D}")
        self.Qa, self.Ra, self.Qb, self.Rb = Qa, Ra, Qb, Rb
        self.D = D
        # adjoints are used on every application; build them once
        self._Qbd = Qb.conj().T
        self._Rbd = Rb.conj().T

    def same_pair(self):
        return self.Qa is self.Qb and self.Ra is self.Rb or (
            np.array_equal(self.Qa, self.Qb) and np.array_equal(self.Ra, self.Rb)
        )

    def __repr__(self):
        return f"TransferBlock(D={self.D})"


class Deflation:
    """Zero-eigenspace data (l, r) of a transfer map, Hermitian PSD with
    Tr(l r) = 1.  Supplies the rank-1 projector P = 1 - |r><l|."""

    def __init__(self, l, r):
        l = np.asarray(l, dtype=complex)
        r = np.asarray(r, dtype=complex)
        if l.shape != r.shape or l.shape[0] != l.shape[1]:
            raise ValueError("deflation pair must be square matrices of equal shape")
        pairing = np.trace(l @ r)
        if abs(pairing - 1.0) > 1e-12:
            raise ValueError(f"Tr(l r) = {pairing}, expected 1 to 1e-12")
        herm_defect = max(np.linalg.norm(l - l.conj().T), np.linalg.norm(r - r.conj().T))
        if herm_defect > 1e-10 * max(1.0, np.linalg.norm(l), np.linalg.norm(r)):
            raise ValueError("deflation pair is not Hermitian to tolerance")
        self.l = l
        self.r = r

    def project_right(self, x):
        """P x = x - r Tr(l x): removes the zero mode from a ket matrix."""
        return x - np.trace(self.l @ x) * self.r

    def project_left(self, a):
        """a P = a - l Tr(a r): removes the zero mode from a bra matrix."""
        return a - np.trace(a @ self.r) * self.l


def transfer_apply(block, x, side="right"):
    """Apply T_ab (side='right') or its trace-pairing transpose (side='left')
    to the D x D matrix x.  Cost is Theta(D^3)."""
    if x.shape != (block.D, block.D):
        raise ValueError(f"x has shape {x.shape}, expected ({block.D}, {block.D})")
    if side == "right":
        return block.Qa @ x + x @ block._Qbd + block.Ra @ x @ block._Rbd
    if side == "left":
        return x @ block.Qa + block._Qbd @ x + block._Rbd @ x @ block.Ra
    raise ValueError(f"side must be 'right' or 'left', got {side!r}")


def transfer_matrix(block):
    """Dense D^2 x D^2 matrix of T_ab in row-major vectorization.  Only for
    small D (tests, dense fallbacks)."""
    D = block.D
    eye = np.eye(D)
    return (np.kron(block.Qa, eye) + np.kron(eye, block.Qb.conj())
            + np.kron(block.Ra, block.Rb.conj()))


def _as_linear_operator(block, side):
    D = block.D
    n = D * D

    def mv(v):
        return transfer_apply(block, v.reshape(D, D), side).ravel()

    return spla.LinearOperator((n, n), matvec=mv, dtype=complex)


def _hermitize_positive(M):
    """Project onto Hermitian matrices and fix the overall sign so the trace
    is positive; eigensolvers return fixed points only up to phase."""
    M = 0.5 * (M + M.conj().T)
    tr = np.trace(M).real
    if tr < 0:
        M = -M
    return M


def _dense_leading_pair(Tmat, D):
    """Leading eigenvalue plus left/right fixed-point matrices from a dense
    solve.  Returns (eta_complex, gap_to_second, l_mat, r_mat)."""
    w, vl, vr = sla.eig(Tmat, left=True, right=True)
    order = np.argsort(-w.real)
    i0 = order[0]
    gap = w[order[0]].real - w[order[1]].real if len(order) > 1 else np.inf
    # scipy's vl columns satisfy vl^H T = w vl^H, i.e. a = conj(vl) obeys
    # a^T T = w a^T; the bra matrix pairing Tr(l x) = vec(l^T) . vec(x)
    # identifies a with vec(l^T)
    lmat = vl[:, i0].conj().reshape(D, D).T
    rmat = vr[:, i0].reshape(D, D)
    return w[i0], gap, lmat, rmat


def leading_fixed_points(Q, R, tol=1e-12, dense_cutoff=6, degeneracy_tol=1e-8,
                         v0r=None, v0l=None, check_degenerate=True):
    """Dominant eigenvalue and fixed points of the same-state transfer map.

    Returns (eta, l, r) with eta the real part of the leading eigenvalue and
    l, r Hermitian PSD normalized so Tr(r) = 1 and Tr(l r) = 1.  Raises
    DegenerateTransferError when the leading eigenvalue is not isolated
    (skipped with check_degenerate=False, which also lets the Arnoldi run
    with a single Ritz pair; used on warm restarts inside optimizers).
    """
    Q = np.asarray(Q, dtype=complex)
    R = np.asarray(R, dtype=complex)
    block = TransferBlock(Q, R)
    D = block.D
    n = D * D

    if D == 1:
        eta = (2 * Q[0, 0].real + abs(R[0, 0]) ** 2).real
        one = np.ones((1, 1), dtype=complex)
        return eta, one.copy(), one.copy()

    if D <= dense_cutoff:
        Tmat = transfer_matrix(block)
        lam, gap, lmat, rmat = _dense_leading_pair(Tmat, D)
        if check_degenerate and gap < degeneracy_tol:
            raise DegenerateTransferError(
                f"leading transfer eigenvalue degenerate: gap {gap:.3e}")
        l = _hermitize_positive(lmat)
        r = _hermitize_positive(rmat)
    else:
        k = min(4, n - 2) if check_degenerate else 1
        ncv = min(n, max(3 * k + 3, 24))
        eye0 = np.eye(D, dtype=complex).ravel()
        vr0 = eye0 if v0r is None else np.asarray(v0r, dtype=complex).ravel()
        vl0 = eye0 if v0l is None else np.asarray(v0l, dtype=complex).ravel()
        try:
            wr, vr = spla.eigs(_as_linear_operator(block, "right"), k=k,
                               which="LR", v0=vr0, ncv=ncv, tol=min(tol, 1e-12))
            wl, vl = spla.eigs(_as_linear_operator(block, "left"), k=k,
                               which="LR", v0=vl0, ncv=ncv, tol=min(tol, 1e-12))
        except spla.ArpackError as exc:
            raise SolverConvergenceError(f"ARPACK failed on transfer map: {exc}") from exc
        ir = int(np.argmax(wr.real))
        il = int(np.argmax(wl.real))
        gap_r = np.sort(wr.real)[-2] if k >= 2 else -np.inf
        if check_degenerate and k >= 2 and wr.real[ir] - gap_r < degeneracy_tol:
            raise DegenerateTransferError(
                f"leading transfer eigenvalue degenerate: gap {wr.real[ir] - gap_r:.3e}")
        lam = wr[ir]
        r = _hermitize_positive(vr[:, ir].reshape(D, D))
        l = _hermitize_positive(vl[:, il].reshape(D, D))

    eta = lam.real
    trr = np.trace(r).real
    if abs(trr) < 1e-14:
        raise LinalgError("right fixed point has vanishing trace")
    r = r / trr
    pairing = np.trace(l @ r).real
    if abs(pairing) < 1e-14:
        raise LinalgError("fixed-point pairing Tr(l r) vanishes")
    l = l / pairing

    shifted = TransferBlock(Q - 0.5 * eta * np.eye(D), R)
    res_r = np.linalg.norm(transfer_apply(shifted, r, "right"))
    res_l = np.linalg.norm(transfer_apply(shifted, l, "left"))
    scale = max(1.0, abs(eta))
    if res_r > 100 * tol * scale * np.linalg.norm(r) or \
       res_l > 100 * tol * scale * np.linalg.norm(l):
        raise SolverConvergenceError(
            f"fixed-point residuals too large: {res_r:.3e}, {res_l:.3e}")
    psd_floor = -1e-10
    if min(np.linalg.eigvalsh(l).min(), np.linalg.eigvalsh(r).min()) < psd_floor * max(
            1.0, np.linalg.norm(l), np.linalg.norm(r)):
        raise LinalgError("fixed points not PSD to tolerance")
    return eta, l, r


def solve_shifted_transfer(block, shift, rhs, side="right", deflation=None,
                           rtol=1e-10, maxiter=2000, outer_v=None):
    """Solve (shift - T_ab) x = rhs (optionally deflated) without forming T_ab.

    With a Deflation supplied this realizes the projected pseudo-inverse
    (-T_ab - (-shift))^P: the right-hand side and the solution are both
    projected onto the complement of the zero eigenspace.  `side='left'`
    solves the transposed (bra) system a (shift - T_ab) = rhs.  `outer_v`
    may carry an LGMRES augmentation list reused across related solves.
    """
    D = block.D
    rhs = np.asarray(rhs, dtype=complex)
    if rhs.shape != (D, D):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({D}, {D})")

    if deflation is not None:
        project = deflation.project_right if side == "right" else deflation.project_left
        b = project(rhs)
    else:
        project = None
        b = rhs

    n = D * D

    def mv(v):
        x = v.reshape(D, D)
        if project is not None:
            x = project(x)
        y = shift * x - transfer_apply(block, x, side)
        if project is not None:
            y = project(y)
        return y.ravel()

    op = spla.LinearOperator((n, n), matvec=mv, dtype=complex)
    bnorm = np.linalg.norm(b)
    if bnorm <= 1e-15 * max(1.0, np.linalg.norm(rhs)):
        # rhs lies in the deflated direction up to roundoff
        return np.zeros((D, D), dtype=complex)
    x, info = spla.lgmres(op, b.ravel(), rtol=rtol, atol=0.0, maxiter=maxiter,
                          inner_m=30, outer_k=3, outer_v=outer_v)
    X = x.reshape(D, D)
    if project is not None:
        X = project(X)
    resvec = shift * X - transfer_apply(block, X, side) - b
    if project is not None:
        resvec = project(resvec)
    res = np.linalg.norm(resvec)
    if info != 0 or res > 10 * rtol * bnorm:
        if deflation is None and shift == 0 and block.same_pair():
            raise LinalgError(
                "zero-shift solve on a same-state block stagnated; the block is "
                "likely ungapped and needs a Deflation")
        raise SolverConvergenceError(
            f"shifted transfer solve stagnated: info={info}, rel residual={res / bnorm:.3e}")
    return X


def lowest_eigenpairs(apply_fn, D, k, tol=1e-8, dense_cutoff=64, v0=None,
                      hermiticity_check=None, maxiter=None):
    """k smallest eigenpairs of a Hermitian operator acting on D x D matrices.

    `apply_fn` maps a D x D matrix to a D x D matrix and must be Hermitian
    under the trace inner product <A, B> = Tr(A^dag B) (caller's contract;
    set `hermiticity_check` to an RNG to spot-check it).  Returns
    (energies ascending, [Y_1, ...]) with orthonormal eigenvectors and
    verified residuals ||apply(Y) - E Y|| <= tol * max(1, |E|_max).
    """
    n = D * D

    def mv(v):
        return apply_fn(v.reshape(D, D)).ravel()

    if hermiticity_check is not None:
        a = hermiticity_check.standard_normal((D, D)) + 1j * hermiticity_check.standard_normal((D, D))
        b = hermiticity_check.standard_normal((D, D)) + 1j * hermiticity_check.standard_normal((D, D))
        ab = np.vdot(a.ravel(), mv(b.ravel()))
        ba = np.vdot(b.ravel(), mv(a.ravel()))
        scale = max(abs(ab), abs(ba), 1e-300)
        if abs(ab - np.conj(ba)) > 1e-9 * scale:
            raise LinalgError(
                f"operator fails Hermiticity spot-check: defect {abs(ab - np.conj(ba)) / scale:.3e}")

    if n <= dense_cutoff or k >= n - 1:
        H = np.empty((n, n), dtype=complex)
        basis = np.eye(n, dtype=complex)
        for j in range(n):
            H[:, j] = mv(basis[:, j])
        H = 0.5 * (H + H.conj().T)
        w, V = np.linalg.eigh(H)
        w, V = w[:k], V[:, :k]
    else:
        op = spla.LinearOperator((n, n), matvec=mv, dtype=complex)
        ncv = min(n, max(4 * k + 10, 40))
        if v0 is None:
            v0 = np.ones(n, dtype=complex) / np.sqrt(n)
        try:
            w, V = spla.eigsh(op, k=k, which="SA", tol=tol * 1e-2, ncv=ncv,
                              v0=v0, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            if len(exc.eigenvalues) >= k:
                w, V = exc.eigenvalues[:k], exc.eigenvectors[:, :k]
            else:
                raise SolverConvergenceError(f"eigsh did not converge: {exc}") from exc
        order = np.argsort(w)
        w, V = w[order], V[:, order]

    scale = max(1.0, float(np.max(np.abs(w)))) if len(w) else 1.0
    vecs = []
    for j in range(len(w)):
        y = V[:, j].reshape(D, D)
        res = np.linalg.norm(mv(V[:, j]) - w[j] * V[:, j])
        if res > tol * scale * 10:
            raise SolverConvergenceError(
                f"eigenpair {j} residual {res:.3e} exceeds {tol * scale * 10:.3e}")
        vecs.append(y)
    return np.real(w), vecs
