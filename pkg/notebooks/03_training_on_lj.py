"""
Fitting a Lennard-Jones mixture
===============================

Label a few synthetic clusters with a two-element pair potential and fit a
small HVNet to energies and forces.
"""

# %%
import numpy as np

from hermnet import HermNet, ModelConfig, TrainConfig, evaluate, train
from hermnet.io import parse_extxyz, write_extxyz
from hermnet.synthetic import lj_cluster_dataset

ds = lj_cluster_dataset(20, seed=1)
print(len(ds), "frames, elements", ds.element_set)
force_std = np.concatenate([fr.forces.ravel() for fr in ds]).std()

# %%
# datasets survive a trip through extended XYZ text unchanged
assert parse_extxyz(write_extxyz(ds)) == ds

# %%
model = HermNet(ModelConfig("hvnet", hidden=16, layers=2, r_cut=5.0, element_set=ds.element_set), seed=0)
cfg = TrainConfig(lr0=1e-3, batch_size=5, max_epochs=40)
result = train(model, ds[:16], ds[16:], cfg,
               on_epoch=lambda row: row["epoch"] % 10 or print(row["epoch"], f"{row['train_loss']:.4g}"))

# %%
for name, part in (("train", ds[:16]), ("val", ds[16:])):
    m = evaluate(model, part)
    print(name, f"force MAE {m.force_mae:.4f} eV/Å ({100 * m.force_mae / force_std:.1f}% of std)")
