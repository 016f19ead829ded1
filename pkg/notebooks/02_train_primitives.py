# %% [markdown]
# # Training the spectral classifier on synthetic primitives
#
# A reduced run (4 classes, small grid, few epochs) so the script finishes
# in a minute or two on one core.  The CLI with no size flags trains the
# full-size model.

# %%
import numpy as np

from sphclass import bench
from sphclass import spectral_net as sn
from sphclass.datasets import generate_primitives, split

ds = generate_primitives(["sphere", "cube", "torus", "cone"], per_class=40, points=1024, seed=0)
train_set, test_set = split(ds, 0.25, seed=0)
print(len(train_set), "train /", len(test_set), "test")

# %%
cfg = sn.NetConfig(classes=4, filters=8, shells=5, degree=9, resolution=32, hidden=128)
tcfg = sn.TrainConfig(epochs=6, batch_size=16)
params, history = sn.train(train_set, cfg, tcfg)
for row in history:
    print(f"epoch {row['epoch']:2d}  loss {row['loss']:.4f}  train acc {row['train_acc']:.3f}")

# %%
res = sn.evaluate(params, test_set)
print("clean test accuracy:", round(res.accuracy, 4))
print(res.confusion)

# %% [markdown]
# ## Robustness
# Accuracy as uniform outliers replace a growing fraction of the points.
# Each level is averaged over three corruption draws.

# %%
table = bench.run_sweep(params, test_set,
                        bench.SweepSpec("outlier_fraction", [0.0, 0.25, 0.5], trials=3))
for row in table.rows:
    print(f"outliers {row['level']:>5s}: {row['accuracy_mean']:.3f} +- {row['accuracy_std']:.3f}")
