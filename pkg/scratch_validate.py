"""Scratch validation of dense oracle vs matrix-free effective operator."""
import numpy as np

from cmpskit.state import ModelParams, canonicalize
from cmpskit.excitations import (
    ExcitationSector, EffectiveOperator, y_to_vw, gauge_vector,
)
from cmpskit.dense import dense_effective_matrices, y_basis_matrix

rng = np.random.default_rng(42)


def random_canonical(D):
    Q = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D)) - 1.5 * np.eye(D)
    R = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    return canonicalize(Q, R)


def check(D, p, trivial, u):
    st = random_canonical(D)
    params = ModelParams(c=1.1, mu=0.9, u=u)
    if trivial:
        sec = ExcitationSector.trivial(st, p)
    else:
        sec = ExcitationSector.topological(st, np.pi, p)
    H, N = dense_effective_matrices(sec, params)
    n2 = H.shape[0]

    herm_H = np.linalg.norm(H - H.conj().T) / max(np.linalg.norm(H), 1e-300)
    herm_N = np.linalg.norm(N - N.conj().T) / max(np.linalg.norm(N), 1e-300)

    # gauge annihilation
    worstH = worstN = 0.0
    for _ in range(5):
        X = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
        V, W = gauge_vector(sec, X)
        g = np.concatenate([V.ravel(), W.ravel()])
        gn = np.linalg.norm(g)
        worstH = max(worstH, np.linalg.norm(H @ g) / (np.linalg.norm(H) * gn))
        worstN = max(worstN, np.linalg.norm(N @ g) / (np.linalg.norm(N) * gn))
        worstH = max(worstH, np.linalg.norm(g.conj() @ H) / (np.linalg.norm(H) * gn))

    # Y-basis reduction
    Z = y_basis_matrix(sec)
    NY = Z.conj().T @ N @ Z
    idres = np.linalg.norm(NY - np.eye(D * D)) / np.sqrt(D * D)
    HY = Z.conj().T @ H @ Z

    op = EffectiveOperator(sec, params, inner_rtol=1e-12)
    Hfast = op.to_matrix()
    rel = np.linalg.norm(Hfast - HY) / max(np.linalg.norm(HY), 1e-300)
    herm_fast = op.hermiticity_defect(rng)

    tag = "TRIV" if trivial else "TOPO"
    print(f"D={D} p={p:+.2f} {tag} u={u}: hermH={herm_H:.2e} hermN={herm_N:.2e} "
          f"gaugeH={worstH:.2e} gaugeN={worstN:.2e} NY-1={idres:.2e} "
          f"|Hfast-HY|={rel:.2e} hermfast={herm_fast:.2e}")
    return rel, worstH, idres


for D in (2,):
    for trivial in (False, True):
        for p in (0.0, 0.7, -1.3):
            for u in (0.0, 1.0):
                check(D, p, trivial, u)
