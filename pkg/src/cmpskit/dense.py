"""Dense small-D reference for the excitation quadratic forms.

Materializes every transfer block as a D^2 x D^2 matrix, forms true
pseudo-inverses by eigendecomposition, and evaluates the effective
Hamiltonian and norm forms on the full 2D^2-dimensional (V, W) parameter
space by enumerating every ordering of the three positions involved
(operator insertion, ket perturbation, bra perturbation).  Cost is O(D^4)
per matrix element; the module exists to cross-check the matrix-free solver
at D <= 4 and shares no contraction code with it.

Term bookkeeping.  The gauge-reduced expressions keep only chains whose
leftmost insertion is the operator (the left gauge condition kills the
rest); here the full set is evaluated so that the matrices annihilate the
gauge null directions exactly.  Chains containing an ungapped same-state
slot drop its volume-divergent rank-1 part (the ground-state energy
subtraction), and in the trivial sector at p != 0 each mixed slot carries a
finite principal-value rank-1 part -+ i/p |r><l| which is expanded
explicitly.  Conventions: row-major vectorization, (A (x) conj(B)) vec(x) =
vec(A x B^dag), bra pairing Tr(l x) = vec(l^T) . vec(x).
"""

import numpy as np

from .linalg import TransferBlock, transfer_matrix

__all__ = [
    "dense_pseudo_inverse",
    "dense_effective_matrices",
    "dense_norm_matrix",
    "y_basis_matrix",
    "vw_basis",
]


def _kop(A, B):
    """Matrix of the superoperator A (x) conj(B): x -> A x B^dag."""
    return np.kron(A, B.conj())


def dense_pseudo_inverse(Tmat, z, deflate):
    """Spectral matrix of (z - T)^P via eigendecomposition: inverts z - T on
    the complement of T's zero eigenspace (zeroing that mode when `deflate`),
    or the plain inverse on the full space otherwise."""
    w, V = np.linalg.eig(Tmat)
    g = 1.0 / (z - w)
    if deflate:
        i0 = int(np.argmin(np.abs(w)))
        if abs(w[i0]) > 1e-8:
            raise ValueError(f"asked to deflate but smallest |eig| = {abs(w[i0]):.3e}")
        g[i0] = 0.0
    return V @ np.diag(g) @ np.linalg.inv(V)


def vw_basis(D):
    """Basis of the full (V, W) space: index m < D^2 puts a unit matrix in V
    (row-major), m >= D^2 in W."""
    n = D * D
    out = []
    for m in range(2 * n):
        V = np.zeros((D, D), dtype=complex)
        W = np.zeros((D, D), dtype=complex)
        if m < n:
            V.ravel()[m] = 1.0
        else:
            W.ravel()[m - n] = 1.0
        out.append((V, W))
    return out


def y_basis_matrix(sector):
    """Columns stack vec(V), vec(W) of y_to_vw applied to the Y basis."""
    from .excitations import y_to_vw

    D = sector.left.D
    n = D * D
    Z = np.zeros((2 * n, n), dtype=complex)
    for m in range(n):
        Y = np.zeros((D, D), dtype=complex)
        Y.ravel()[m] = 1.0
        V, W = y_to_vw(Y, sector)
        Z[:n, m] = V.ravel()
        Z[n:, m] = W.ravel()
    return Z


class _Slot:
    """Pseudo-inverse slot in a factor chain: a deflated/plain inverse matrix
    plus an optional rank-1 principal-value part sigma |r0><l0|."""

    def __init__(self, mat, sigma=None, r0vec=None, l0row=None):
        self.mat = mat
        self.sigma = sigma
        self.r0vec = r0vec
        self.l0row = l0row


def _eval_chain(row, factors, tail):
    """Sum over all slot expansions of row . f1 . f2 ... . tail."""
    if not factors:
        return row @ tail
    f, rest = factors[0], factors[1:]
    if isinstance(f, _Slot):
        val = _eval_chain(row @ f.mat, rest, tail)
        if f.sigma is not None:
            val += f.sigma * (row @ f.r0vec) * _eval_chain(f.l0row, rest, tail)
        return val
    return _eval_chain(row @ f, rest, tail)


class _DenseContext:
    def __init__(self, sector):
        s1, s2 = sector.left, sector.right
        self.D = D = s1.D
        self.p = float(sector.p)
        ip = 1j * self.p
        self.Q1, self.R1 = s1.Q, s1.R
        self.Q2, self.R2 = s2.Q, s2.R
        self.C1 = self.Q1 @ self.R1 - self.R1 @ self.Q1
        self.C2 = self.Q2 @ self.R2 - self.R2 @ self.Q2
        self.R1sq = self.R1 @ self.R1
        self.R2sq = self.R2 @ self.R2
        self.eye = np.eye(D, dtype=complex)
        self.trivial = sector.trivial_mode
        self.r1 = s1.r
        self.r2 = s2.r

        T11 = transfer_matrix(TransferBlock(self.Q1, self.R1))
        T22 = transfer_matrix(TransferBlock(self.Q2, self.R2))
        T12 = transfer_matrix(TransferBlock(self.Q1, self.R1, self.Q2, self.R2))
        T21 = transfer_matrix(TransferBlock(self.Q2, self.R2, self.Q1, self.R1))
        self.lrow = self.eye.T.ravel()
        self.rvec = s2.r.ravel()
        self.P11 = _Slot(dense_pseudo_inverse(T11, 0.0, deflate=True))
        self.P22 = _Slot(dense_pseudo_inverse(T22, 0.0, deflate=True))
        sing = self.trivial and self.p != 0.0
        r0, l0 = (self.rvec, self.lrow) if self.trivial else (None, None)
        self.S21 = _Slot(dense_pseudo_inverse(T21, +ip, deflate=self.trivial),
                         sigma=(-1j / self.p) if sing else None, r0vec=r0, l0row=l0)
        self.S12 = _Slot(dense_pseudo_inverse(T12, -ip, deflate=self.trivial),
                         sigma=(+1j / self.p) if sing else None, r0vec=r0, l0row=l0)

    # perturbation factors (ket pair V, W; bra pair Vb, Wb enters conjugated)
    def K1(self, V, W):
        return _kop(V, self.eye) + _kop(W, self.R1)

    def K2(self, V, W):
        return _kop(V, self.eye) + _kop(W, self.R2)

    def B1f(self, Vb, Wb):
        return _kop(self.eye, Vb) + _kop(self.R1, Wb)

    def B2f(self, Vb, Wb):
        return _kop(self.eye, Vb) + _kop(self.R2, Wb)

    def M_of(self, V, W):
        return (self.Q1 @ W - W @ self.Q2 + V @ self.R2 - self.R1 @ V
                + 1j * self.p * W)

    def RW(self, V, W):
        return self.R1 @ W + W @ self.R2


def _pieces(ctx, coeffs):
    """Insertion factors per Hamiltonian piece.

    ins_ab: operator insertion with the ket row in state a and the bra row in
    state b.  e1/e2: collision of the operator with the ket perturbation (bra
    row still in state 1 / already in state 2).  f1/f2: collision with the
    bra perturbation (ket row in state 1 / 2).  g: all three coincide.

    omega is the piece's ground-state expectation density.  The ground-state
    subtraction spreads over the whole line; in the same-state regions it
    cancels the rank-1 volume parts of the deflated slots, but in the mixed
    region between the two perturbations nothing deflates, so the insertions
    ins21/ins12 enter subtracted as ins - omega * identity.
    """
    R1, R2, C1, C2 = ctx.R1, ctx.R2, ctx.C1, ctx.C2
    R1sq, R2sq, eye = ctx.R1sq, ctx.R2sq, ctx.eye
    RW, M = ctx.RW, ctx.M_of
    r1 = ctx.r1

    pieces = []
    if coeffs.get("dens", 0.0) != 0:
        pieces.append(dict(
            weight=coeffs["dens"],
            omega=np.trace(R1 @ r1 @ R1.conj().T),
            ins11=_kop(R1, R1), ins22=_kop(R2, R2),
            ins21=_kop(R2, R1), ins12=_kop(R1, R2),
            e1=lambda V, W: _kop(W, R1),
            e2=lambda V, W: _kop(W, R2),
            f1=lambda Vb, Wb: _kop(R1, Wb),
            f2=lambda Vb, Wb: _kop(R2, Wb),
            g=lambda V, W, Vb, Wb: _kop(W, Wb),
        ))
    if coeffs.get("int", 0.0) != 0:
        pieces.append(dict(
            weight=coeffs["int"],
            omega=np.trace(R1sq @ r1 @ R1sq.conj().T),
            ins11=_kop(R1sq, R1sq), ins22=_kop(R2sq, R2sq),
            ins21=_kop(R2sq, R1sq), ins12=_kop(R1sq, R2sq),
            e1=lambda V, W: _kop(RW(V, W), R1sq),
            e2=lambda V, W: _kop(RW(V, W), R2sq),
            f1=lambda Vb, Wb: _kop(R1sq, R1 @ Wb) + _kop(R1sq, Wb @ R2),
            f2=lambda Vb, Wb: _kop(R2sq, R1 @ Wb) + _kop(R2sq, Wb @ R2),
            g=lambda V, W, Vb, Wb: (_kop(RW(V, W), R1 @ Wb)
                                    + _kop(RW(V, W), Wb @ R2)),
        ))
    if coeffs.get("kin", 0.0) != 0:
        pieces.append(dict(
            weight=coeffs["kin"],
            omega=np.trace(C1 @ r1 @ C1.conj().T),
            ins11=_kop(C1, C1), ins22=_kop(C2, C2),
            ins21=_kop(C2, C1), ins12=_kop(C1, C2),
            e1=lambda V, W: _kop(M(V, W), C1),
            e2=lambda V, W: _kop(M(V, W), C2),
            f1=lambda Vb, Wb: _kop(C1, M(Vb, Wb)),
            f2=lambda Vb, Wb: _kop(C2, M(Vb, Wb)),
            g=lambda V, W, Vb, Wb: _kop(M(V, W), M(Vb, Wb)),
        ))
    u = complex(coeffs.get("pair", 0.0))
    if u != 0:
        pieces.append(dict(       # psi^dag psi^dag: creators act on the bra row
            weight=u,
            omega=np.conj(np.trace(R1sq @ r1)),
            ins11=_kop(eye, R1sq), ins22=_kop(eye, R2sq),
            ins21=_kop(eye, R1sq), ins12=_kop(eye, R2sq),
            e1=None, e2=None,
            f1=lambda Vb, Wb: _kop(eye, R1 @ Wb) + _kop(eye, Wb @ R2),
            f2=lambda Vb, Wb: _kop(eye, R1 @ Wb) + _kop(eye, Wb @ R2),
            g=None,
        ))
        pieces.append(dict(       # psi psi: annihilators act on the ket row
            weight=np.conj(u),
            omega=np.trace(R1sq @ r1),
            ins11=_kop(R1sq, eye), ins22=_kop(R2sq, eye),
            ins21=_kop(R2sq, eye), ins12=_kop(R1sq, eye),
            e1=lambda V, W: _kop(RW(V, W), eye),
            e2=lambda V, W: _kop(RW(V, W), eye),
            f1=None, f2=None,
            g=None,
        ))
    return pieces


def dense_effective_matrices(sector, params, coeffs=None):
    """Dense (H_p, N_p) on the full (V, W) space, 2D^2 x 2D^2 each.

    H_p is the quadratic form of (H - E0); restricted to the gauge slice the
    generalized problem H_p x = E N_p x reproduces the matrix-free operator,
    and both matrices annihilate the gauge null vectors
    (Q1 X - X Q2 + ip X, R1 X - X R2).
    """
    if coeffs is None:
        coeffs = {"kin": 1.0, "dens": -params.mu, "int": params.c,
                  "pair": complex(params.u)}
    ctx = _DenseContext(sector)
    pieces = _pieces(ctx, coeffs)
    basis = vw_basis(ctx.D)
    n2 = len(basis)
    lrow, rvec = ctx.lrow, ctx.rvec
    P11, P22, S21, S12 = ctx.P11, ctx.P22, ctx.S21, ctx.S12
    r2 = ctx.r2

    eye_big = np.eye(ctx.D * ctx.D, dtype=complex)
    for pc in pieces:
        pc["l_ins11_P11"] = (lrow @ pc["ins11"]) @ P11.mat
        pc["ins22_r"] = pc["ins22"] @ rvec
        pc["ins21_sub"] = pc["ins21"] - pc["omega"] * eye_big
        pc["ins12_sub"] = pc["ins12"] - pc["omega"] * eye_big

    ket = []
    for (V, W) in basis:
        ket.append(dict(
            V=V, W=W,
            K1=ctx.K1(V, W),
            lK1=lrow @ ctx.K1(V, W),
            K2r=ctx.K2(V, W) @ rvec,
            e1=[None if pc["e1"] is None else pc["e1"](V, W) for pc in pieces],
            e2=[None if pc["e2"] is None else pc["e2"](V, W) for pc in pieces],
        ))
    bra = []
    for (Vb, Wb) in basis:
        bra.append(dict(
            Vb=Vb, Wb=Wb,
            B1f=ctx.B1f(Vb, Wb),
            lB1f=lrow @ ctx.B1f(Vb, Wb),
            B2fr=ctx.B2f(Vb, Wb) @ rvec,
            f1=[None if pc["f1"] is None else pc["f1"](Vb, Wb) for pc in pieces],
            f2=[None if pc["f2"] is None else pc["f2"](Vb, Wb) for pc in pieces],
        ))

    H = np.zeros((n2, n2), dtype=complex)
    N = np.zeros((n2, n2), dtype=complex)
    for ib, b in enumerate(bra):
        Wb = b["Wb"]
        for ik, k in enumerate(ket):
            W = k["W"]
            WWr = (W @ r2 @ Wb.conj().T).ravel()
            lWW = (Wb.conj().T @ W).T.ravel()
            val = 0.0 + 0.0j
            for j, pc in enumerate(pieces):
                w = pc["weight"]
                # operator left / right of coincident perturbations
                val += w * (pc["l_ins11_P11"] @ WWr)
                val += w * _eval_chain(lWW, [P22], pc["ins22_r"])
                # operator leftmost, perturbations split
                val += w * _eval_chain(pc["l_ins11_P11"] @ k["K1"], [S21], b["B2fr"])
                val += w * _eval_chain(pc["l_ins11_P11"] @ b["B1f"], [S12], k["K2r"])
                # operator between the perturbations (subtracted insertion)
                val += w * _eval_chain(k["lK1"], [S21, pc["ins21_sub"], S21], b["B2fr"])
                val += w * _eval_chain(b["lB1f"], [S12, pc["ins12_sub"], S12], k["K2r"])
                # operator rightmost, perturbations split
                val += w * _eval_chain(k["lK1"], [S21, ctx.B2f(b["Vb"], Wb), P22],
                                       pc["ins22_r"])
                val += w * _eval_chain(b["lB1f"], [S12, ctx.K2(k["V"], W), P22],
                                       pc["ins22_r"])
                # operator colliding with the ket perturbation
                if k["e1"][j] is not None:
                    val += w * _eval_chain(lrow @ k["e1"][j], [S21], b["B2fr"])
                    val += w * _eval_chain(b["lB1f"], [S12], k["e2"][j] @ rvec)
                # operator colliding with the bra perturbation
                if b["f1"][j] is not None:
                    val += w * _eval_chain(lrow @ b["f1"][j], [S12], k["K2r"])
                    val += w * _eval_chain(k["lK1"], [S21], b["f2"][j] @ rvec)
                # all three coincident
                if pc["g"] is not None:
                    val += w * (lrow @ pc["g"](k["V"], W, b["Vb"], Wb) @ rvec)
            H[ib, ik] = val
            # norm form: the two orderings plus the local term
            N[ib, ik] = (_eval_chain(k["lK1"], [S21], b["B2fr"])
                         + _eval_chain(b["lB1f"], [S12], k["K2r"])
                         + lrow @ WWr)

    if ctx.trivial and ctx.p == 0.0:
        # at zero momentum the trivial-sector forms are only defined on the
        # subspace orthogonal to the ground state (the delta(p) singular
        # term); restrict both slots to it.  The gauge slice lies inside.
        r = sector.left.r
        s = np.concatenate([r.T.ravel(),
                            (r @ sector.left.R.conj().T).T.ravel()])
        P = np.eye(n2, dtype=complex) - np.outer(s.conj(), s) / (s @ s.conj())
        H = P @ H @ P
        N = P @ N @ P
    return H, N


def dense_norm_matrix(sector):
    from .state import ModelParams

    _, N = dense_effective_matrices(
        sector, ModelParams(c=1.0, mu=0.0), coeffs={"dens": 0.0})
    return N
