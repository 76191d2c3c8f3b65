"""
Checking the symmetries of a random model
=========================================
"""

# %%
import numpy as np

from hermnet import AtomicStructure
from hermnet.model import predict, predict_energy
from hermnet.selfcheck import random_rotation, small_model
from hermnet.synthetic import random_cluster

rng = np.random.default_rng(0)
cfg, params = small_model("htnet", seed=3)
st = random_cluster(rng, 6, [1, 8], min_dist=1.0)
e, atom_e, f = predict(st, params, cfg)
print(f"E = {e:.6f} eV, sum of atomic terms {atom_e.sum():.6f}")

# %% [markdown]
# Rotating the structure leaves the energy alone and rotates the forces.

# %%
R = random_rotation(rng)
e2, _, f2 = predict(AtomicStructure(st.species, st.positions @ R.T + 1.5), params, cfg)
print(abs(e2 - e), np.abs(f2 - f @ R.T).max())

# %%
# forces are minus the energy gradient: compare with central differences
h = 1e-4
fd = np.zeros_like(f)
for i in range(len(st)):
    for k in range(3):
        p, m = st.positions.copy(), st.positions.copy()
        p[i, k] += h
        m[i, k] -= h
        fd[i, k] = -(predict_energy(AtomicStructure(st.species, p), params, cfg)[0]
                     - predict_energy(AtomicStructure(st.species, m), params, cfg)[0]) / (2 * h)
print("max |F - F_fd| / max |F|:", np.abs(f - fd).max() / np.abs(f).max())

# %%
# the same invariants are bundled as a quick self test
from hermnet.selfcheck import run_selfcheck

for r in run_selfcheck():
    print("PASS" if r.passed else "FAIL", r.name, r.detail)
