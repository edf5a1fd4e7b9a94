# Automatic relevance determination in action: the prior precision of the
# uninformative fourth input grows by orders of magnitude during the
# alternating schedule, switching its network off, while the informative
# precisions settle near O(1) values.

import numpy as np

from banam import TrainConfig, initialize_model, standardize, synth_toy, train_map

ds, _ = synth_toy(n=1000, seed=0)
train, stats = standardize(ds)
model = initialize_model(train.X, train.y, task="regression", hidden=64, seed=0)
result = train_map(model, train.X, train.y, TrainConfig(lr_params=0.1, max_epochs=1500, seed=0))

history = result.history
print(f"{'epoch':>6} {'marglik':>10} " + " ".join(f"{f'lam{i + 1}':>9}" for i in range(4)))
for epoch, bound, lams in zip(history.refresh_epoch, history.marglik, history.lambdas):
    print(f"{epoch:>6} {bound:>10.1f} " + " ".join(f"{v:>9.3f}" for v in lams))

lams = model.lambdas
print("\nfinal precisions:", np.round(lams, 2))
print("lambda_4 / median(informative):", round(lams[3] / np.median(lams[:3]), 1))
print("a large ratio means the fourth network is effectively off")

# the switched-off network also contributes (almost) nothing to predictions
contrib = model.feature_nets[3].forward(train.X[:, 3])
print("max |f4 contribution| over training data:", float(np.abs(contrib).max()))
