# %% [markdown]
# # Choosing C and gamma by cross-validation
#
# Five folds over the adjacency entries and the node attributes. Each cell of
# the grid is scored by held-out AUC and attribute accuracy, and the cell with
# the best worst-normalised score wins.

# %%
from mtcov import EMConfig, generate, preset
from mtcov.cv import GridSpec, grid_search

graph, design, _ = generate(preset("G1", 300, seed=0, match=0.7))

# %%
grid = GridSpec(c_values=[2, 3], gamma_values=[0.1, 0.4, 0.7, 0.9], n_folds=5, seed=0)
report = grid_search(graph, design, grid, EMConfig(2, n_restarts=3), progress=lambda c: print(c.C, c.gamma, c.auc_mean))
print(report.table())
print("selected", report.selected)

# %% [markdown]
# Held-out entries can also be drawn so that edges are over-represented.
# `tpe` is the chance that a single draw lands on an edge.

# %%
biased = grid_search(graph, design, GridSpec([2], [0.4, 0.7], n_folds=3, tpe=0.03), EMConfig(2, n_restarts=2))
print(biased.table())
