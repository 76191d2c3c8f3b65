"""
Atomic graphs and relation types
================================

A structure becomes a directed graph of neighbor edges. Edges are then
grouped by element, which is what gives each element its own weights.
"""

# %%
import numpy as np

from hermnet import AtomicStructure
from hermnet.graph import build_cutoff_graph, decompose, present_triads, relation_count

water = AtomicStructure([8, 1, 1], [[0.0, 0.0, 0.0], [0.757, 0.586, 0.0], [-0.757, 0.586, 0.0]])
g = build_cutoff_graph(water, r_cut=5.0)
print(g.n_edges, "edges")

# %% [markdown]
# Each edge stores ``r_vec = pos[src] + shift - pos[dst]``, so it points from
# the receiving atom toward its neighbor.

# %%
for e in g.edges():
    print(e.src, "->", e.dst, np.round(e.r_vec, 3))

# %%
# vertex relations: one group per receiving element
for key, idx in decompose(g, "vertex").relations.items():
    print(key, len(idx))

# pair relations: one group per (source, destination) element pair
for key, idx in decompose(g, "pair").relations.items():
    print(key, len(idx))

print(sorted(map(str, present_triads(g))))

# %% [markdown]
# The number of possible relations grows with the number of elements.

# %%
for n in range(1, 6):
    print(n, [relation_count(range(1, n + 1), kind) for kind in ("vertex", "pair", "triad")])

# %%
# periodic cells work the same way, image shifts included
cu = AtomicStructure([29], [[0.0, 0.0, 0.0]], 2.55 * np.eye(3), (True, True, True))
print(build_cutoff_graph(cu, 3.0).n_edges, "self-image edges for a one-atom cell")
