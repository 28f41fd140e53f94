"""Uniform cMPS states in left-canonical gauge and their local observables.

A state is a pair of D x D matrices (Q, R).  After canonicalization the left
fixed point of the transfer map is the identity, the leading transfer
eigenvalue vanishes, and the right fixed point r is Hermitian PSD with unit
trace.  All observables below assume (and the constructor enforces) this
gauge, in which the canonical-form relation Q + Q^dag + R^dag R = 0 holds.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    TransferBlock,
    LinalgError,
    leading_fixed_points,
    transfer_apply,
    transfer_matrix,
)

__all__ = [
    "ModelParams",
    "CmpsState",
    "Observables",
    "RankDeficientError",
    "canonicalize",
    "random_state",
    "density",
    "energy_density",
    "order_parameter",
    "correlation_length",
    "rotate_phase",
    "observables",
    "state_to_dict",
    "state_from_dict",
    "save_state",
    "load_state",
]


class RankDeficientError(LinalgError):
    """A fixed point is numerically rank deficient; the gauge transform is
    refused rather than regularized."""


@dataclass(frozen=True)
class ModelParams:
    """Hamiltonian parameters: repulsion c > 0, chemical potential mu, and a
    complex pairing strength u (u = 0 is the pure Lieb-Liniger model)."""

    c: float
    mu: float
    u: complex = 0.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"interaction strength c must be positive, got {self.c}")

    @property
    def has_pairing(self):
        return self.u != 0

    def to_dict(self):
        u = complex(self.u)
        return {"c": float(self.c), "mu": float(self.mu), "u": [u.real, u.imag]}

    @staticmethod
    def from_dict(d):
        u = d.get("u", [0.0, 0.0])
        return ModelParams(c=float(d["c"]), mu=float(d["mu"]), u=complex(u[0], u[1]))


@dataclass(frozen=True)
class Observables:
    rho: float
    e: float
    order_param: complex
    corr_length: float
    gamma: float

    def to_dict(self):
        op = complex(self.order_param)
        xi = self.corr_length
        return {
            "rho": self.rho,
            "e": self.e,
            "order_param": [op.real, op.imag],
            "corr_length": None if math.isinf(xi) else xi,
            "gamma": self.gamma,
        }


class CmpsState:
    """Left-canonical uniform cMPS.  Immutable; construct via canonicalize().

    Attributes: Q, R (read-only arrays), D, r (right fixed point, Tr r = 1),
    eta (leading transfer eigenvalue after normalization, ~0).
    """

    def __init__(self, Q, R, r, eta=0.0, _trusted=False):
        Q = np.array(Q, dtype=complex)
        R = np.array(R, dtype=complex)
        r = np.array(r, dtype=complex)
        if not _trusted:
            defect = np.linalg.norm(Q + Q.conj().T + R.conj().T @ R)
            if defect > 1e-8 * max(1.0, np.linalg.norm(Q)):
                raise ValueError(
                    f"not left-canonical (defect {defect:.3e}); use canonicalize()")
        for M in (Q, R, r):
            M.flags.writeable = False
        self.Q, self.R, self.r = Q, R, r
        self.D = Q.shape[0]
        self.eta = float(eta)

    @property
    def l(self):
        """Left fixed point; the identity in this gauge."""
        return np.eye(self.D, dtype=complex)

    def canonical_defect(self):
        return float(np.linalg.norm(self.Q + self.Q.conj().T + self.R.conj().T @ self.R))

    def transfer_block(self, other=None):
        if other is None:
            return TransferBlock(self.Q, self.R)
        return TransferBlock(self.Q, self.R, other.Q, other.R)

    def __repr__(self):
        return f"CmpsState(D={self.D})"


def canonicalize(Q, R, tol=1e-12, rank_rtol=1e-12, fp_hint=None,
                 check_degenerate=True):
    """Bring (Q, R) to left-canonical form with zero leading transfer
    eigenvalue; physical expectation values are unchanged.  `fp_hint` may
    carry a nearby right fixed point to warm-start the eigensolver;
    `check_degenerate=False` skips the leading-gap diagnostic (optimizer
    inner loops, where the state moves in small steps)."""
    Q = np.asarray(Q, dtype=complex)
    R = np.asarray(R, dtype=complex)
    eta, l, r = leading_fixed_points(Q, R, tol=tol, v0r=fp_hint,
                                     check_degenerate=check_degenerate)
    D = Q.shape[0]
    Q = Q - 0.5 * eta * np.eye(D)

    w, U = np.linalg.eigh(l)
    if w.min() <= rank_rtol * w.max():
        raise RankDeficientError(
            f"left fixed point rank deficient: eig range [{w.min():.3e}, {w.max():.3e}]")
    lh = (U * np.sqrt(w)) @ U.conj().T        # l^{1/2}
    lhi = (U / np.sqrt(w)) @ U.conj().T       # l^{-1/2}
    Qc = lh @ Q @ lhi
    Rc = lh @ R @ lhi
    rc = lh @ r @ lh
    rc = 0.5 * (rc + rc.conj().T)
    rc = rc / np.trace(rc).real

    # exact polish: the residual defect is Hermitian, so absorbing half of it
    # into Q makes the canonical relation hold to machine precision
    defect = Qc + Qc.conj().T + Rc.conj().T @ Rc
    Qc = Qc - 0.5 * defect
    eta2, _, rc = leading_fixed_points(Qc, Rc, tol=tol, v0r=rc,
                                       check_degenerate=False)
    Qc = Qc - 0.5 * eta2 * np.eye(D)
    return CmpsState(Qc, Rc, rc, eta=0.0, _trusted=True)


def right_fixed_point(Q, R, v0=None, tol=1e-13):
    """Right fixed point of an exactly left-canonical pair (the left fixed
    point is the identity and the leading eigenvalue vanishes by
    construction, so only r needs an eigensolve)."""
    D = Q.shape[0]
    if D == 1:
        return np.ones((1, 1), dtype=complex)
    block = TransferBlock(Q, R)
    n = D * D
    if D <= 6:
        w, V = np.linalg.eig(transfer_matrix(block))
        i0 = int(np.argmax(w.real))
        r = V[:, i0].reshape(D, D)
    else:
        import scipy.sparse.linalg as spla

        def mv(v):
            return transfer_apply(block, v.reshape(D, D), "right").ravel()

        op = spla.LinearOperator((n, n), matvec=mv, dtype=complex)
        v0 = np.eye(D, dtype=complex).ravel() if v0 is None else np.asarray(v0).ravel()
        try:
            w, V = spla.eigs(op, k=1, which="LR", v0=v0, ncv=min(n, 24),
                             tol=tol, maxiter=100)
        except spla.ArpackError as exc:
            raise LinalgError(f"fixed-point eigensolve failed: {exc}") from exc
        r = V[:, 0].reshape(D, D)
    r = 0.5 * (r + r.conj().T)
    tr = np.trace(r).real
    if abs(tr) < 1e-14:
        raise LinalgError("right fixed point has vanishing trace")
    r = r / tr
    res = np.linalg.norm(transfer_apply(block, r, "right"))
    if res > 1e-8 * max(1.0, np.linalg.norm(Q)):
        raise LinalgError(f"right fixed point residual {res:.3e}; state not canonical?")
    return r


def retract_tangent_step(state, V, W, fp_tol=1e-13):
    """Move along a gauge-fixed tangent direction and return to the canonical
    manifold exactly: with l V + R^dag l W = 0 the canonical-form defect of
    (Q + V, R + W) equals W^dag W, absorbed into Q."""
    Q = state.Q + V - 0.5 * (W.conj().T @ W)
    R = state.R + W
    r = right_fixed_point(Q, R, v0=state.r, tol=fp_tol)
    return CmpsState(Q, R, r, eta=0.0, _trusted=True)


def random_state(D, rho_target, rng, q_scale=0.25):
    """Random canonical state with density roughly rho_target; the standard
    initialization for ground-state searches."""
    R = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    R *= math.sqrt(rho_target) / np.linalg.norm(R) * math.sqrt(D)
    A = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    Q = -0.5 * (R.conj().T @ R) + q_scale * (A - A.conj().T)
    return canonicalize(Q, R)


def density(state):
    """Particle density rho = Tr(l R r R^dag) >= 0."""
    val = np.trace(state.R @ state.r @ state.R.conj().T)
    return float(val.real)


def energy_density(state, params):
    """Grand-canonical energy density of the (possibly paired) model.

    e = Tr(l [Q,R] r [Q,R]^dag) - mu Tr(l R r R^dag) + c Tr(l R^2 r R^2dag)
        + 2 Re(conj(u) Tr(l R^2 r)).
    """
    Q, R, r = state.Q, state.R, state.r
    C = Q @ R - R @ Q
    R2 = R @ R
    kin = np.trace(C @ r @ C.conj().T)
    dens = np.trace(R @ r @ R.conj().T)
    inter = np.trace(R2 @ r @ R2.conj().T)
    e = kin - params.mu * dens + params.c * inter
    if params.has_pairing:
        e = e + 2.0 * (np.conj(params.u) * np.trace(R2 @ r)).real
    if abs(e.imag) > 1e-12 * max(1.0, abs(e.real)):
        raise LinalgError(f"energy density has imaginary part {e.imag:.3e}")
    return float(e.real)


def order_parameter(state):
    """U(1) order parameter <psi> = Tr(l R r)."""
    return complex(np.trace(state.R @ state.r))


def correlation_length(state, dense_cutoff=6, k=6):
    """-1 / Re(lambda_2) with lambda_2 the subleading transfer eigenvalue;
    infinity for D = 1 (no subleading eigenvalue exists)."""
    D = state.D
    if D == 1:
        return math.inf
    block = state.transfer_block()
    n = D * D
    if D <= dense_cutoff:
        w = np.linalg.eigvals(transfer_matrix(block))
    else:
        import scipy.sparse.linalg as spla

        def mv(v):
            return transfer_apply(block, v.reshape(D, D), "right").ravel()

        op = spla.LinearOperator((n, n), matvec=mv, dtype=complex)
        kk = min(k, n - 2)
        w = spla.eigs(op, k=kk, which="LR", v0=state.r.ravel().copy(),
                      return_eigenvectors=False)
    order = np.argsort(-w.real)
    w = w[order]
    # drop the single eigenvalue closest to zero (the fixed point)
    i0 = int(np.argmin(np.abs(w)))
    w2 = np.delete(w, i0)
    lam2 = w2[np.argmax(w2.real)]
    if lam2.real >= -1e-14:
        raise LinalgError(f"subleading transfer eigenvalue not gapped: {lam2}")
    return float(-1.0 / lam2.real)


def rotate_phase(state, theta):
    """Return (Q, e^{i theta} R); fixed points and canonical form carry over."""
    return CmpsState(state.Q, np.exp(1j * theta) * state.R, state.r,
                     eta=state.eta, _trusted=True)


def observables(state, params):
    rho = density(state)
    return Observables(
        rho=rho,
        e=energy_density(state, params),
        order_param=order_parameter(state),
        corr_length=correlation_length(state),
        gamma=params.c / rho if rho > 0 else math.inf,
    )


def _complex_mat_to_list(M):
    return [[z.real, z.imag] for z in M.ravel()]


def _complex_mat_from_list(pairs, D):
    flat = np.array([complex(re, im) for re, im in pairs], dtype=complex)
    return flat.reshape(D, D)


def state_to_dict(state, params=None):
    d = {
        "D": state.D,
        "Q": _complex_mat_to_list(state.Q),
        "R": _complex_mat_to_list(state.R),
        "r": _complex_mat_to_list(state.r),
    }
    if params is not None:
        d["params"] = params.to_dict()
    return d


def state_from_dict(d):
    D = int(d["D"])
    Q = _complex_mat_from_list(d["Q"], D)
    R = _complex_mat_from_list(d["R"], D)
    if "r" in d:
        r = _complex_mat_from_list(d["r"], D)
        state = CmpsState(Q, R, r, _trusted=True)
    else:
        state = canonicalize(Q, R)
    params = ModelParams.from_dict(d["params"]) if "params" in d else None
    return state, params


def save_state(path, state, params=None):
    with open(path, "w") as fh:
        json.dump(state_to_dict(state, params), fh)


def load_state(path):
    with open(path) as fh:
        return state_from_dict(json.load(fh))
