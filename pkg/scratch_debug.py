"""Isolate which Hamiltonian piece breaks gauge annihilation."""
import numpy as np

from cmpskit.state import ModelParams, canonicalize
from cmpskit.excitations import ExcitationSector, gauge_vector
from cmpskit.dense import dense_effective_matrices

rng = np.random.default_rng(42)
D = 2
Q = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D)) - 1.5 * np.eye(D)
R = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
st = canonicalize(Q, R)
params = ModelParams(c=1.0, mu=1.0, u=1.0)

for trivial in (False, True):
    for p in (0.0, 0.7):
        sec = ExcitationSector.trivial(st, p) if trivial else \
            ExcitationSector.topological(st, np.pi, p)
        for name, coeffs in [
            ("dens", {"dens": 1.0}),
            ("int", {"int": 1.0}),
            ("kin", {"kin": 1.0}),
            ("pair", {"pair": 1.0}),
        ]:
            H, N = dense_effective_matrices(sec, params, coeffs=coeffs)
            worst = 0.0
            for _ in range(4):
                X = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
                V, W = gauge_vector(sec, X)
                g = np.concatenate([V.ravel(), W.ravel()])
                worst = max(worst, np.linalg.norm(H @ g)
                            / (max(np.linalg.norm(H), 1e-300) * np.linalg.norm(g)))
            tag = "TRIV" if trivial else "TOPO"
            print(f"{tag} p={p:+.1f} {name:5s}: gaugeH={worst:.2e}")
