# %% [markdown]
# # Link and attribute prediction on held-out data
#
# Hide 20% of the entries and of the attribute rows, fit on the rest, then
# score the hidden part against the random and most-frequent baselines.

# %%
import numpy as np

from mtcov import EMConfig, fit, generate, preset
from mtcov.cv import holdout_accuracy, holdout_auc, uniform_holdout
from mtcov.em import predict_attributes, predict_scores
from mtcov.metrics import baselines

graph, design, _ = generate(preset("G3", 400, seed=2, match=0.6))
mask = uniform_holdout(graph, design, 0.2, seed=0)
res = fit(graph, design, mask, EMConfig(2, gamma=0.5, n_restarts=5))

# %%
print("AUC", holdout_auc(res.params, graph, mask))
print("accuracy", holdout_accuracy(res.params, design, mask))
train = np.setdiff1d(np.arange(graph.n_nodes), mask.attribute_nodes)
test_truth = design.assignment[mask.attribute_nodes]
print(baselines(design.assignment[train], design.n_categories, test_truth))

# %% [markdown]
# Expected edge counts for arbitrary (source, target, layer) triples, and the
# category distribution of any node.

# %%
print(predict_scores(res.params, [(0, 1, 0), (0, 399, 3)]))
labels, probs = predict_attributes(res.params, mask.attribute_nodes[:5])
print(labels, np.round(probs, 3))
