"""Variational quasiparticle excitations on top of a uniform cMPS.

The excitation ansatz replaces (Q, R) at one position by (V, W) and
superposes over positions with momentum p.  Between two identical ground
states it describes trivial excitations; between a ground state and its
phase-rotated partner (R -> e^{i theta} R) it describes topological ones.

Imposing the left gauge condition l V + R^dag l W = 0 and parametrizing

    W = l^{-1/2} Y r^{-1/2},   V = -l^{-1} R^dag l^{1/2} Y r^{-1/2}

turns the Rayleigh-Ritz problem into an ordinary Hermitian eigenproblem for
Y: the effective norm matrix becomes the identity and the effective
Hamiltonian (with the ground-state energy already subtracted) acts on Y
matrix-free at Theta(D^3) cost per application.  Every nonlocal contraction
resolves a projected transfer inverse (-T_aa)^P or a gapped mixed inverse
(-T_ab -+ ip)^P through iterative shifted solves.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    Deflation,
    LinalgError,
    TransferBlock,
    lowest_eigenpairs,
    solve_shifted_transfer,
    transfer_apply,
    transfer_matrix,
)
from .state import RankDeficientError, energy_density, rotate_phase

__all__ = [
    "ExcitationSector",
    "SectorError",
    "EffectiveOperator",
    "SpectrumPoint",
    "CompositeCurves",
    "y_to_vw",
    "vw_to_y_adjoint",
    "gauge_vector",
    "norm_overlap",
    "apply_effective_h",
    "solve_spectrum",
    "scan_dispersion",
    "branch_overlap",
    "reference_y",
    "delta_particle_number",
    "combine_topological",
    "pair_cloud",
]


class SectorError(ValueError):
    """Sector invariants violated (gap, energy matching, gauge)."""


@dataclass
class ExcitationSector:
    """(left state, right state, momentum, mode) bundle.

    Trivial sectors share one state on both sides; topological sectors pair a
    state with its phase-rotated partner, for which the mixed transfer matrix
    must be gapped.
    """

    left: object
    right: object
    p: float
    theta: float | None = None
    _gap: float | None = field(default=None, repr=False, compare=False)

    @staticmethod
    def trivial(state, p=0.0):
        return ExcitationSector(left=state, right=state, p=float(p), theta=None)

    @staticmethod
    def topological(state, theta=np.pi, p=0.0):
        if theta % (2 * np.pi) == 0.0:
            raise SectorError("topological sector needs theta != 0")
        return ExcitationSector(left=state, right=rotate_phase(state, theta),
                                p=float(p), theta=float(theta))

    @property
    def trivial_mode(self):
        return self.theta is None

    def with_momentum(self, p):
        sec = ExcitationSector(left=self.left, right=self.right, p=float(p),
                               theta=self.theta)
        sec._gap = self._gap
        return sec

    def mixed_gap(self, dense_cutoff=6):
        """Largest real part of the mixed transfer spectrum (cached); must be
        strictly negative for a valid topological sector."""
        if self._gap is not None:
            return self._gap
        block = TransferBlock(self.left.Q, self.left.R, self.right.Q, self.right.R)
        D = block.D
        if D <= dense_cutoff:
            w = np.linalg.eigvals(transfer_matrix(block))
            gap = float(w.real.max())
        else:
            import scipy.sparse.linalg as spla

            def mv(v):
                return transfer_apply(block, v.reshape(D, D), "right").ravel()

            op = spla.LinearOperator((D * D, D * D), matvec=mv, dtype=complex)
            w = spla.eigs(op, k=min(3, D * D - 2), which="LR",
                          v0=self.left.r.ravel().copy(), return_eigenvectors=False)
            gap = float(w.real.max())
        self._gap = gap
        return gap

    def validate(self, params=None, energy_tol=1e-9, gap_min=1e-7):
        if self.trivial_mode:
            if self.left is not self.right and not (
                    np.array_equal(self.left.Q, self.right.Q)
                    and np.array_equal(self.left.R, self.right.R)):
                raise SectorError("trivial sector requires identical states")
            return
        if not np.array_equal(self.left.Q, self.right.Q):
            raise SectorError("topological sector requires Q_right = Q_left")
        if not np.allclose(self.right.R, np.exp(1j * self.theta) * self.left.R,
                           rtol=0, atol=1e-13 * max(1.0, np.linalg.norm(self.left.R))):
            raise SectorError("topological sector requires R_right = e^{i theta} R_left")
        gap = self.mixed_gap()
        if gap > -gap_min:
            raise SectorError(
                f"mixed transfer matrix not gapped: max Re eigenvalue {gap:.3e}")
        if params is not None:
            e1 = energy_density(self.left, params)
            e2 = energy_density(self.right, params)
            if abs(e1 - e2) > energy_tol * max(1.0, abs(e1)):
                raise SectorError(
                    f"asymptotic energy densities differ: {e1} vs {e2}")


def _sqrt_factors(r, cond_max=1e12):
    """Hermitian r^{1/2} and r^{-1/2}; refuses near-singular fixed points
    (regularizing would silently break the norm identity)."""
    w, U = np.linalg.eigh(0.5 * (r + r.conj().T))
    if w.min() <= 0 or w.max() / w.min() > cond_max:
        raise RankDeficientError(
            f"right fixed point ill-conditioned: eigenvalues in [{w.min():.3e}, "
            f"{w.max():.3e}], condition {w.max() / max(w.min(), 1e-300):.3e}; "
            "re-optimize the ground state instead of regularizing")
    rh = (U * np.sqrt(w)) @ U.conj().T
    rih = (U / np.sqrt(w)) @ U.conj().T
    return rh, rih


def y_to_vw(Y, sector):
    """Map the gauge parameter Y to the excitation pair (V, W) satisfying the
    left gauge condition l V + R^dag l W = 0 (exact up to roundoff)."""
    _, rih = _sqrt_factors(sector.right.r)
    W = Y @ rih
    V = -sector.left.R.conj().T @ W
    return V, W


def vw_to_y_adjoint(FV, FW, sector, rih=None):
    """Adjoint of y_to_vw: pull a linear functional (F_V, F_W) on (V, W) back
    to Y-space, i.e. the matrix G with Tr(Y^dag G) = Tr(V^dag F_V) + Tr(W^dag F_W)."""
    if rih is None:
        _, rih = _sqrt_factors(sector.right.r)
    return (FW - sector.left.R @ FV) @ rih


def gauge_vector(sector, X):
    """Null direction of the excitation map: (Q1 X - X Q2 + ip X, R1 X - X R2).

    The plane-wave state built from this pair vanishes identically, so the
    effective Hamiltonian and norm forms must annihilate it.
    """
    Q1, R1 = sector.left.Q, sector.left.R
    Q2, R2 = sector.right.Q, sector.right.R
    return Q1 @ X - X @ Q2 + 1j * sector.p * X, R1 @ X - X @ R2


def norm_overlap(Y1, Y2):
    """Excitation overlap density in the gauge-fixed parametrization:
    Tr(Y1^dag Y2) (the effective norm matrix is the identity)."""
    return complex(np.vdot(np.asarray(Y1).ravel(), np.asarray(Y2).ravel()))


class EffectiveOperator:
    """Matrix-free (H - E0) restricted to the gauge-fixed excitation space.

    Evaluates the kinetic, density, interaction, and pairing quadratic forms
    with the bra slot left open, resolving the transfer pseudo-inverses by
    deflated/shifted Krylov solves.  Hermitian on Y under Tr(Y1^dag op(Y2)).

    `coeffs` overrides the Hamiltonian combination (kin, dens, int, pair);
    the default is (1, -mu, c, u).  A pure density operator (0, 1, 0, 0)
    yields the particle-number form used for Delta N.
    """

    def __init__(self, sector, params, coeffs=None, inner_rtol=1e-10,
                 validate=True, reuse_krylov=True):
        self.sector = sector
        self.params = params
        self.p = float(sector.p)
        if validate:
            sector.validate(params=params if coeffs is None else None)
        if coeffs is None:
            coeffs = {"kin": 1.0, "dens": -params.mu, "int": params.c,
                      "pair": complex(params.u)}
        self.a_kin = coeffs.get("kin", 0.0)
        self.a_dens = coeffs.get("dens", 0.0)
        self.a_int = coeffs.get("int", 0.0)
        self.a_pp = complex(coeffs.get("pair", 0.0))      # psi^dag psi^dag
        self.a_ppb = np.conj(self.a_pp)                   # psi psi
        self.inner_rtol = inner_rtol

        s1, s2 = sector.left, sector.right
        self.D = s1.D
        Q1, R1, Q2, R2 = s1.Q, s1.R, s2.Q, s2.R
        self.Q1, self.R1, self.Q2, self.R2 = Q1, R1, Q2, R2
        self.R1d, self.R2d = R1.conj().T, R2.conj().T
        self.Q1d, self.Q2d = Q1.conj().T, Q2.conj().T
        self.C1 = Q1 @ R1 - R1 @ Q1
        self.C2 = Q2 @ R2 - R2 @ Q2
        self.C1d = self.C1.conj().T
        self.R1sq = R1 @ R1
        self.R2sq = R2 @ R2
        self.R1sqd = self.R1sq.conj().T
        self.r1, self.r2 = s1.r, s2.r
        self.r2h, self.r2ih = _sqrt_factors(self.r2)
        self.r2R2d = self.r2 @ self.R2d
        self.R2r2 = R2 @ self.r2

        self.block11 = TransferBlock(Q1, R1)
        self.block22 = TransferBlock(Q2, R2)
        self.block12 = TransferBlock(Q1, R1, Q2, R2)
        self.block21 = TransferBlock(Q2, R2, Q1, R1)
        eye = np.eye(self.D, dtype=complex)
        self.defl1 = Deflation(eye, self.r1)
        self.defl2 = Deflation(eye, self.r2)
        self.defl_mixed = self.defl1 if sector.trivial_mode else None

        # Y-independent environments: the Hamiltonian left covector through
        # (-T11)^P and the right environment through (-T22)^P
        c0 = (self.a_kin * (self.C1d @ self.C1)
              + self.a_dens * (self.R1d @ R1)
              + self.a_int * (self.R1sqd @ self.R1sq)
              + self.a_pp * self.R1sqd
              + self.a_ppb * self.R1sq)
        e_r = (self.a_kin * (self.C2 @ self.r2 @ self.C2.conj().T)
               + self.a_dens * (R2 @ self.r2 @ self.R2d)
               + self.a_int * (self.R2sq @ self.r2 @ self.R2sq.conj().T)
               + self.a_pp * (self.r2 @ self.R2sq.conj().T)
               + self.a_ppb * (self.R2sq @ self.r2))
        self.HL = solve_shifted_transfer(self.block11, 0.0, c0, side="left",
                                         deflation=self.defl1, rtol=inner_rtol)
        self.HR = solve_shifted_transfer(self.block22, 0.0, e_r, side="right",
                                         deflation=self.defl2, rtol=inner_rtol)
        self.HLR1 = self.HL @ R1
        self._ov_left = [] if reuse_krylov else None
        self._ov_right = [] if reuse_krylov else None

    def apply(self, Y):
        """One application of the effective Hamiltonian to Y; Theta(D^3)."""
        p = self.p
        ip = 1j * p
        R1, R2, r2 = self.R1, self.R2, self.r2
        W = Y @ self.r2ih
        V = -(self.R1d @ W)
        M = self.Q1 @ W - W @ self.Q2 + V @ R2 - R1 @ V + ip * W
        RW = R1 @ W + W @ R2

        K_r = V @ r2 + W @ self.r2R2d
        X2 = solve_shifted_transfer(self.block12, -ip, K_r, side="right",
                                    deflation=self.defl_mixed, rtol=self.inner_rtol,
                                    outer_v=self._ov_right)
        c3 = self.HL @ V + self.R1d @ (self.HL @ W)
        c_e = (self.a_kin * (self.C1d @ M)
               + self.a_dens * (self.R1d @ W)
               + self.a_int * (self.R1sqd @ RW)
               + self.a_ppb * RW)
        d = solve_shifted_transfer(self.block21, ip, c3 + c_e, side="left",
                                   deflation=self.defl_mixed, rtol=self.inner_rtol,
                                   outer_v=self._ov_left)

        FV = d @ r2 + self.HL @ X2
        FW = d @ self.R2r2 + self.HLR1 @ X2
        # terms where the operator insertion meets the bra perturbation
        FW += self.a_dens * (R1 @ X2)
        FW += self.a_int * (self.R1d @ (self.R1sq @ X2) + self.R1sq @ X2 @ self.R2d)
        G = self.C1 @ X2
        FW += self.a_kin * (self.Q1d @ G - G @ self.Q2d - ip * G)
        FV += self.a_kin * (G @ self.R2d - self.R1d @ G)
        FW += self.a_pp * (self.R1d @ X2 + X2 @ self.R2d)
        # fully local terms
        FW += self.a_dens * (W @ r2)
        FW += self.a_int * (self.R1d @ (RW @ r2) + RW @ self.r2R2d)
        G2 = M @ r2
        FW += self.a_kin * (self.Q1d @ G2 - G2 @ self.Q2d - ip * G2)
        FV += self.a_kin * (G2 @ self.R2d - self.R1d @ G2)
        # operator insertion strictly left / right of both perturbations
        FW += self.HL @ W @ r2 + W @ self.HR
        return (FW - R1 @ FV) @ self.r2ih

    __call__ = apply

    def to_matrix(self):
        """Dense D^2 x D^2 matrix of the operator (basis-by-basis application;
        small-D diagnostics and tests only)."""
        n = self.D * self.D
        H = np.empty((n, n), dtype=complex)
        for j in range(n):
            e = np.zeros(n, dtype=complex)
            e[j] = 1.0
            H[:, j] = self.apply(e.reshape(self.D, self.D)).ravel()
        return H

    def hermiticity_defect(self, rng, npairs=2):
        """Relative defect of Tr(Y1^dag H Y2) = conj(Tr(Y2^dag H Y1))."""
        worst = 0.0
        for _ in range(npairs):
            a = rng.standard_normal((self.D, self.D)) + 1j * rng.standard_normal((self.D, self.D))
            b = rng.standard_normal((self.D, self.D)) + 1j * rng.standard_normal((self.D, self.D))
            ab = np.vdot(a.ravel(), self.apply(b).ravel())
            ba = np.vdot(b.ravel(), self.apply(a).ravel())
            worst = max(worst, abs(ab - np.conj(ba)) / max(abs(ab), abs(ba), 1e-300))
        return worst


def apply_effective_h(Y, op):
    """Functional form of EffectiveOperator.apply."""
    return op.apply(Y)


def density_operator(sector, params, inner_rtol=1e-10, validate=False):
    """Particle-number quadratic form (the density part of the Hamiltonian
    with unit weight); used for Delta N."""
    return EffectiveOperator(sector, params, coeffs={"dens": 1.0},
                             inner_rtol=inner_rtol, validate=validate)


def delta_particle_number(Y, sector, params=None, op=None, imag_tol=1e-9):
    """Change in particle number of the excitation relative to the ground
    state: the density form on (V, W) over the norm Tr(Y^dag Y)."""
    if op is None:
        if params is None:
            raise ValueError("need params or a prebuilt density operator")
        op = density_operator(sector, params)
    num = np.vdot(Y.ravel(), op.apply(Y).ravel())
    den = np.vdot(Y.ravel(), Y.ravel()).real
    val = num / den
    if abs(val.imag) > imag_tol * max(1.0, abs(val.real)):
        raise LinalgError(f"Delta N has imaginary part {val.imag:.3e}")
    return float(val.real)


def reference_y(sector, inner_rtol=1e-10):
    """Gauge-slice projection (Riesz vector) of the bare psi^dag excitation,
    whose unfixed parameters are (V, W) = (0, 1).

    For a topological sector this is the string-dressed particle reference;
    the Y returned satisfies Tr(Y^dag Y') = <reference | slice state Y'>.
    """
    s1, s2 = sector.left, sector.right
    D = s1.D
    eye = np.eye(D, dtype=complex)
    _, rih = _sqrt_factors(s2.r)
    block21 = TransferBlock(s2.Q, s2.R, s1.Q, s1.R)
    defl = Deflation(eye, s1.r) if sector.trivial_mode else None
    # <l| (V0 x 1 + W0 x conj(R1)) with (V0, W0) = (0, 1) gives the covector R1^dag
    c = solve_shifted_transfer(block21, 1j * sector.p, s1.R.conj().T, side="left",
                               deflation=defl, rtol=inner_rtol)
    FV = c @ s2.r
    FW = c @ (s2.R @ s2.r) + s2.r
    G = (FW - s1.R @ FV) @ rih
    return G


def branch_overlap(Y, sector, ref=None):
    """|normalized overlap| of the excitation Y with the projected psi^dag
    reference; tags the particle branch."""
    if ref is None:
        ref = reference_y(sector)
    num = abs(np.vdot(Y.ravel(), ref.ravel()))
    den = np.linalg.norm(Y.ravel()) * np.linalg.norm(ref.ravel())
    return float(num / den) if den > 0 else 0.0


@dataclass
class SpectrumPoint:
    """Excitation energies (relative to E0) and labels at one momentum."""

    p: float
    energies: np.ndarray = None
    eigvecs: list = None
    overlaps: np.ndarray = None
    delta_n: np.ndarray = None
    residual_tol: float = None
    error: str = None

    @property
    def ok(self):
        return self.error is None


def solve_spectrum(sector, params, k, tol=1e-8, inner_rtol=1e-10,
                   compute_overlaps=True, compute_delta_n=False, seed=0,
                   validate=True, maxiter=None):
    """k lowest eigenpairs of the effective Hamiltonian in the given sector."""
    op = EffectiveOperator(sector, params, inner_rtol=inner_rtol, validate=validate)
    n = sector.left.D ** 2
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v0 /= np.linalg.norm(v0)
    energies, vecs = lowest_eigenpairs(op.apply, sector.left.D, k=min(k, n),
                                       tol=tol, v0=v0, maxiter=maxiter)
    point = SpectrumPoint(p=sector.p, energies=np.asarray(energies), eigvecs=vecs,
                          residual_tol=tol)
    if compute_overlaps:
        ref = reference_y(sector, inner_rtol=inner_rtol)
        point.overlaps = np.array([branch_overlap(y, sector, ref=ref) for y in vecs])
    if compute_delta_n:
        dop = density_operator(sector, params, inner_rtol=inner_rtol)
        point.delta_n = np.array(
            [delta_particle_number(y, sector, op=dop) for y in vecs])
    return point


def scan_dispersion(sector_template, p_values, params, k, tol=1e-8,
                    inner_rtol=1e-10, compute_overlaps=True,
                    compute_delta_n=False, seed=0, on_error="record"):
    """One SpectrumPoint per momentum; failures are recorded per point and the
    scan continues (on_error='raise' propagates instead)."""
    sector_template.validate(params=params)
    points = []
    for i, p in enumerate(p_values):
        sector = sector_template.with_momentum(p)
        try:
            pt = solve_spectrum(sector, params, k=k, tol=tol,
                                inner_rtol=inner_rtol,
                                compute_overlaps=compute_overlaps,
                                compute_delta_n=compute_delta_n,
                                seed=seed + 7919 * i, validate=False)
        except (LinalgError, SectorError) as exc:
            if on_error == "raise":
                raise
            pt = SpectrumPoint(p=float(p), error=str(exc))
        points.append(pt)
    return points


def _even_interp(p, xs, ys):
    """Interpolate an even-in-momentum branch given samples on any side."""
    xs = np.abs(np.asarray(xs, dtype=float))
    order = np.argsort(xs)
    return np.interp(np.abs(p), xs[order], np.asarray(ys, dtype=float)[order])


def _branch_tables(points, prefer_overlap):
    ps, es = [], []
    for pt in points:
        if not pt.ok:
            continue
        if prefer_overlap and pt.overlaps is not None:
            idx = int(np.argmax(pt.overlaps))
        else:
            idx = 0
        ps.append(pt.p)
        es.append(pt.energies[idx])
    if not ps:
        raise ValueError("no valid points in spectrum")
    return np.asarray(ps), np.asarray(es)


@dataclass
class CompositeCurves:
    p: np.ndarray
    type1: np.ndarray
    type2: np.ndarray
    cloud_p: np.ndarray
    cloud_e: np.ndarray


def combine_topological(spectrum_hole, spectrum_particle, rho, p_out=None,
                        grid_tol=None):
    """Combine two topological branches into the trivial-sector composites.

    Type I at momentum p: hole frozen at -pi rho plus a particle at
    |p| + pi rho.  Type II at momentum p: particle frozen at +pi rho plus a
    hole at |p| - pi rho (hole momentum confined to [-pi rho, pi rho], so the
    curve lives on |p| <= 2 pi rho and closes at the umklapp points).  Also
    returns the all-pairs momentum/energy sum cloud of the two input spectra.
    """
    pf = math.pi * rho
    ph, eh = _branch_tables(spectrum_hole, prefer_overlap=False)
    pq, eq = _branch_tables(spectrum_particle, prefer_overlap=True)
    hole_max = np.abs(ph).max()
    part_max = np.abs(pq).max()
    if grid_tol is None:
        diffs = np.diff(np.sort(np.abs(ph)))
        grid_tol = float(diffs.max()) if len(diffs) else 0.1 * pf
    if hole_max < pf - grid_tol:
        raise ValueError(
            f"hole grid reaches |p|={hole_max:.4f} < pi rho={pf:.4f}")
    if part_max < pf - grid_tol:
        raise ValueError(
            f"particle grid reaches |p|={part_max:.4f} < pi rho={pf:.4f}")

    if p_out is None:
        p_out = np.linspace(-2 * pf, 2 * pf, 41)
    p_out = np.asarray(p_out, dtype=float)
    max_needed = np.abs(p_out).max() + pf
    if part_max < max_needed - grid_tol - 1e-12:
        raise ValueError(
            f"particle grid reaches |p|={part_max:.4f} < needed {max_needed:.4f}")

    e_hole_edge = _even_interp(pf, ph, eh)
    type1 = e_hole_edge + _even_interp(np.abs(p_out) + pf, pq, eq)
    e_part_edge = _even_interp(pf, pq, eq)
    hole_m = np.abs(p_out) - pf
    type2 = np.where(np.abs(p_out) <= 2 * pf + grid_tol,
                     e_part_edge + _even_interp(np.abs(hole_m), ph, eh), np.nan)

    cloud_p, cloud_e = pair_cloud(spectrum_hole, spectrum_particle)
    return CompositeCurves(p=p_out, type1=type1, type2=type2,
                           cloud_p=cloud_p, cloud_e=cloud_e)


def pair_cloud(points_a, points_b=None):
    """All-pairs (p_i + p_j, E_i + E_j) over the lowest branch of two
    topological spectra (the two-kink continuum estimate)."""
    if points_b is None:
        points_b = points_a
    pa, ea = _branch_tables(points_a, prefer_overlap=False)
    pb, eb = _branch_tables(points_b, prefer_overlap=False)
    P = (pa[:, None] + pb[None, :]).ravel()
    E = (ea[:, None] + eb[None, :]).ravel()
    return P, E
