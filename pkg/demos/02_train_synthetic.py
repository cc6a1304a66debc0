"""
Training on a synthetic sea
===========================

Generate travelling-wave truth, sample it at three buoys, fit the adapters
of the frozen backbone, and compare the test estimate with persistence.
Pass an epoch count as the first argument (default 15).
"""
import sys

import numpy as np

from orca_swh.data import synth_generate
from orca_swh.model import ModelConfig, OrcaModel
from orca_swh.reports import write_heatmap
from orca_swh.training import TrainConfig, persistence_metrics, segment_metrics, split_time, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 15

data = synth_generate(seed=1, K=8, J=8, T=32, M=3, F=3)
ds = data.dataset
print("features:", ds.feature_names, "buoy cells:", ds.locations.tolist())

# oldest 8/10 of the steps train, then validation, then test
split = split_time(ds.shape[2])
cfg = ModelConfig(width=32, layers=2, heads=4, soft_prompt_len=8, window=8, patch_len=4, stride=2)
model = OrcaModel.for_dataset(cfg, ds, split.train)
print("tokens per fibre:", model.n_tokens)
n_train = sum(model.params[k].size for k in model.params.trainable_names())
n_all = sum(a.size for a in model.params.arrays.values())
print(f"trainable entries: {n_train} of {n_all}")

result = train(model, ds, data.surrogate, split, TrainConfig(alpha=0.3, max_epochs=epochs, patience=None))
for row in result.history[:: max(1, epochs // 5)]:
    print(f"epoch {row['epoch']:3d}  L1 {row['L1']:.4f}  L2 {row['L2']:.4f}  val {row['val_L1']:.4f}")

model.params = result.params
ours = segment_metrics(model, ds, split.test)
naive = persistence_metrics(ds, split.test)
print(f"test MAE {ours.mae:.4f}   persistence MAE {naive.mae:.4f}")

est = model.estimate(ds, split.test)
err = np.abs(est - data.truth.values[:, :, split.test])
print(f"grid-wide MAE against the hidden truth: {err.mean():.4f}")
lo, hi = write_heatmap("synthetic_heatmap.png", est[:, :, 0])
print(f"wrote synthetic_heatmap.png (min {lo:.3f}, max {hi:.3f})")
