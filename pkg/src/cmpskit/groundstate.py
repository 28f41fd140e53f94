"""Variational ground-state search over uniform cMPS matrices (Q, R).

The energy density is minimized by nonlinear conjugate gradient in the
gauge-fixed tangent parametrization: search directions live in Y-space
(the same parametrization the excitation solver uses at p = 0), where the
tangent-space metric is the identity, and steps deform (Q, R) by the induced
(V, W) followed by re-canonicalization.  Backtracking keeps the energy
trajectory monotone up to line-search tolerance.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import Deflation, LinalgError, solve_shifted_transfer
from .state import (
    CmpsState,
    ModelParams,
    canonicalize,
    energy_density,
    observables,
    random_state,
    retract_tangent_step,
)

__all__ = [
    "OptimizerConfig",
    "GroundStateResult",
    "energy_gradient",
    "optimize",
    "tune_mu_for_gamma",
    "embed_state",
]


@dataclass
class OptimizerConfig:
    grad_tol: float = 1e-8
    max_iters: int = 4000
    step0: float = 0.1
    shrink: float = 0.5
    grow: float = 1.6
    max_step: float = 2.0
    min_step: float = 1e-13
    armijo: float = 1e-4
    seed: int = 0
    fp_tol: float = 1e-13
    inner_rtol: float = 1e-11
    use_cg: bool = True
    record_trace: bool = True

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")


@dataclass
class GroundStateResult:
    state: CmpsState
    observables: object
    grad_norm_final: float
    iterations: int
    converged: bool
    energy_trace: list = field(default_factory=list)


def _r_invsqrt(r):
    w, U = np.linalg.eigh(0.5 * (r + r.conj().T))
    w = np.clip(w, 1e-300, None)
    return (U / np.sqrt(w)) @ U.conj().T


def _energy_and_gradient(state, params, inner_rtol=1e-11, krylov_cache=None):
    """Energy density and its Riemannian gradient in Y-space.

    The directional derivative along a tangent direction Yd (through the
    induced (V, W) deformation of (Q, R)) is 2 Re Tr(Yd^dag G).
    `krylov_cache` carries LGMRES augmentation vectors across calls.
    """
    Q, R, r = state.Q, state.R, state.r
    D = state.D
    Rd = R.conj().T
    Qd = Q.conj().T
    C = Q @ R - R @ Q
    Cd = C.conj().T
    R2 = R @ R
    R2d = R2.conj().T
    c, mu, u = params.c, params.mu, complex(params.u)

    c0 = Cd @ C - mu * (Rd @ R) + c * (R2d @ R2) + u * R2d + np.conj(u) * R2
    Er = (C @ r @ Cd - mu * (R @ r @ Rd) + c * (R2 @ r @ R2d)
          + u * (r @ R2d) + np.conj(u) * (R2 @ r))
    e = np.trace(Er).real

    block = state.transfer_block()
    defl = Deflation(np.eye(D, dtype=complex), r)
    ovl = ovr = None
    if krylov_cache is not None:
        ovl = krylov_cache.setdefault("left", [])
        ovr = krylov_cache.setdefault("right", [])
    HLs = solve_shifted_transfer(block, 0.0, c0, side="left", deflation=defl,
                                 rtol=inner_rtol, outer_v=ovl)
    HR = solve_shifted_transfer(block, 0.0, Er, side="right", deflation=defl,
                                rtol=inner_rtol, outer_v=ovr)

    Cr = C @ r
    FV = Cr @ Rd - Rd @ Cr + HR + HLs @ r
    FW = (Qd @ Cr - Cr @ Qd - mu * (R @ r)
          + c * (Rd @ R2 @ r + R2 @ r @ Rd)
          + u * (Rd @ r + r @ Rd)
          + R @ HR + HLs @ R @ r)
    rih = _r_invsqrt(r)
    G = (FW - R @ FV) @ rih
    return e, G, rih


def energy_gradient(state, params, inner_rtol=1e-11):
    """Y-space energy gradient; vanishes at variational minima."""
    _, G, _ = _energy_and_gradient(state, params, inner_rtol)
    return G


def _step_state(state, Ydir, alpha, rih, fp_tol):
    W = alpha * (Ydir @ rih)
    V = -(state.R.conj().T @ W)
    if not np.all(np.isfinite(W)):
        raise LinalgError("non-finite step")
    return retract_tangent_step(state, V, W, fp_tol=fp_tol)


def _mean_field_density(params):
    rho = (params.mu + 2 * abs(params.u)) / (2 * params.c)
    return max(rho, 0.05)


def optimize(params, D, config=None, init=None):
    """Minimize the energy density at bond dimension D.

    Returns best-so-far with converged=False when the gradient tolerance is
    not reached within the iteration budget.
    """
    cfg = config or OptimizerConfig()
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        state = random_state(D, _mean_field_density(params), rng)
    elif isinstance(init, CmpsState):
        state = init if init.D == D else embed_state(init, D, rng)
    else:
        state = canonicalize(*init)

    cache = {}
    e, G, rih = _energy_and_gradient(state, params, cfg.inner_rtol, cache)
    gnorm = np.linalg.norm(G)
    trace = [e] if cfg.record_trace else []
    direction = -G
    alpha = cfg.step0
    it = 0
    escale = max(1.0, abs(e))
    band = 200 * cfg.fp_tol * escale       # energy-evaluation resolution
    best = (e, gnorm, state)               # energy first, gradient tiebreak
    flat_mode = False                      # Armijo until decreases hit `band`
    stall = 0
    prev_step = None
    alpha_cap = cfg.max_step

    def better(e_t, g_t, cur):
        e_b, g_b, _ = cur
        if e_t < e_b - 1e-12 * escale:
            return True
        return e_t <= e_b + 1e-12 * escale and g_t < g_b

    def line_search(direction, m, alpha):
        while alpha >= cfg.min_step:
            try:
                trial = _step_state(state, direction, alpha, rih, cfg.fp_tol)
                e_t = energy_density(trial, params)
            except LinalgError:
                alpha *= cfg.shrink
                continue
            if np.isfinite(e_t) and e_t <= e + cfg.armijo * alpha * m:
                return trial, e_t, alpha
            alpha *= cfg.shrink
        return None, None, alpha

    while it < cfg.max_iters and gnorm > cfg.grad_tol:
        it += 1
        m = 2.0 * np.real(np.vdot(direction.ravel(), G.ravel()))
        if m >= 0:      # not a descent direction: restart CG
            direction = -G
            m = -2.0 * gnorm ** 2
        if not flat_mode and abs(m) * alpha < band:
            flat_mode = True
            alpha_cap = max(4.0 * alpha, 1e-3 * cfg.step0)

        if flat_mode:
            # decreases are below the energy resolution: safeguarded
            # Barzilai-Borwein gradient flow, tracking the gradient norm
            direction = -G
            if prev_step is not None:
                dx, dg = prev_step[0].ravel(), (G - prev_step[1]).ravel()
                denom = np.real(np.vdot(dx, dg))
                if denom > 0:
                    alpha_bb = np.real(np.vdot(dx, dx)) / denom
                    alpha = float(np.clip(alpha_bb, cfg.min_step, alpha_cap))
            trial = None
            for _ in range(10):
                if alpha < cfg.min_step:
                    break
                try:
                    cand = _step_state(state, direction, alpha, rih, cfg.fp_tol)
                    e_t = energy_density(cand, params)
                except LinalgError:
                    alpha *= cfg.shrink
                    continue
                if np.isfinite(e_t) and e_t <= best[0] + band:
                    trial = cand
                    break
                alpha *= cfg.shrink
            if trial is None:
                break
            prev_step = (alpha * direction, G)
        else:
            trial, e_t, alpha = line_search(direction, m, alpha)
            if trial is None and not np.array_equal(direction, -G):
                direction = -G
                trial, e_t, alpha = line_search(direction, -2.0 * gnorm ** 2,
                                                cfg.step0)
            if trial is None:
                flat_mode = True
                alpha = 1e-2 * cfg.step0
                alpha_cap = cfg.step0
                continue
            alpha = min(alpha * cfg.grow, cfg.max_step)

        state = trial
        e, G_new, rih = _energy_and_gradient(state, params, cfg.inner_rtol,
                                             cache)
        if cfg.use_cg:
            num = np.real(np.vdot((G_new - G).ravel(), G_new.ravel()))
            beta = max(0.0, num / max(gnorm ** 2, 1e-300))
            direction = -G_new + beta * direction
        else:
            direction = -G_new
        G = G_new
        gnorm = np.linalg.norm(G)
        if cfg.record_trace:
            trace.append(e)
        if better(e, gnorm, best):
            best = (e, gnorm, state)
            stall = 0
        else:
            stall += 1
            if flat_mode and stall >= 60:
                break           # gradient no longer improving
    e, gnorm, state = best
    return GroundStateResult(
        state=state,
        observables=observables(state, params),
        grad_norm_final=float(gnorm),
        iterations=it,
        converged=bool(gnorm <= cfg.grad_tol),
        energy_trace=trace,
    )


def embed_state(state, D_new, rng, noise=1e-3):
    """Continuation in bond dimension: embed a converged D_old solution as the
    leading block and pad with small noise (keeps the energy while opening
    new variational directions)."""
    D_old = state.D
    if D_new < D_old:
        raise ValueError("embedding only grows the bond dimension")
    if D_new == D_old:
        return state
    scaleQ = max(np.linalg.norm(state.Q) / D_old, 0.1)
    scaleR = max(np.linalg.norm(state.R) / D_old, 0.1)

    def pad(M, scale, diag_shift):
        out = np.zeros((D_new, D_new), dtype=complex)
        out[:D_old, :D_old] = M
        blk = rng.standard_normal((D_new, D_new)) + 1j * rng.standard_normal((D_new, D_new))
        blk[:D_old, :D_old] = 0.0
        out += noise * scale * blk
        for i in range(D_old, D_new):
            out[i, i] += diag_shift
        return out

    Q = pad(state.Q, scaleQ, -0.5 * abs(np.trace(state.Q)) / D_old - 0.5)
    R = pad(state.R, scaleR, 0.0)
    return canonicalize(Q, R)


def tune_mu_for_gamma(c, gamma_target, D, tol=1e-3, config=None, init=None,
                      use_bethe_seed=True, max_rounds=30):
    """Find mu such that the converged state's gamma = c / rho hits the
    target; secant iteration in log-log with bracket fallback."""
    if gamma_target <= 0:
        raise ValueError("gamma_target must be positive")
    cfg = config or OptimizerConfig()

    mu0 = 2.0 * c * c / gamma_target        # exact D = 1 relation
    if use_bethe_seed:
        try:
            from .bethe import mu_for_gamma

            mu0 = mu_for_gamma(c, gamma_target)
        except Exception:
            pass

    state = init
    history = []

    def measure(mu):
        nonlocal state
        res = optimize(ModelParams(c, mu), D, cfg, init=state)
        state = res.state
        gamma = c / res.observables.rho
        history.append((mu, gamma, res))
        return gamma, res

    mu = mu0
    gamma, res = measure(mu)
    lo = hi = None                 # bracket in log(mu) on f = log(gamma/target)
    for _ in range(max_rounds):
        f = math.log(gamma / gamma_target)
        if abs(gamma - gamma_target) / gamma_target < tol:
            return mu, res
        # gamma decreases with mu (rho grows); maintain a bracket
        if f > 0:
            lo = (math.log(mu), f) if lo is None or math.log(mu) > lo[0] else lo
        else:
            hi = (math.log(mu), f) if hi is None or math.log(mu) < hi[0] else hi
        if len(history) >= 2:
            (m1, g1, _), (m2, g2, _) = history[-2], history[-1]
            if g1 != g2:
                slope = (math.log(g2 / g1)) / (math.log(m2 / m1))
                lmu = math.log(m2) - math.log(g2 / gamma_target) / slope
            else:
                lmu = math.log(m2) + (0.3 if f > 0 else -0.3)
        else:
            lmu = math.log(mu) + (0.4 if f > 0 else -0.4)
        if lo is not None and hi is not None and not (lo[0] < lmu < hi[0]):
            lmu = 0.5 * (lo[0] + hi[0])
        mu = math.exp(lmu)
        gamma, res = measure(mu)
    raise LinalgError(
        f"mu tuning did not bracket gamma={gamma_target} within {max_rounds} rounds; "
        f"last gamma={gamma}")
