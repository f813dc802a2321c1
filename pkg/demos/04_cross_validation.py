"""
Five-fold cross-validation and metrics
======================================

Split raw spectra first, then preprocess and augment inside each training
fold only. A small model and budget keep this to a couple of minutes.
"""

import numpy as np

from ropesat.augment import AugmentConfig
from ropesat.evaluation import audit_no_leakage, cross_validate
from ropesat.model import ModelConfig, OptimizerConfig
from ropesat.synthgen import default_profiles, generate_cohort

ds = generate_cohort(default_profiles(), 30, seed=3)
cfg = ModelConfig(embed_dim=32, num_heads=4, head_conv_channels=16, fc_hidden=32)
res = cross_validate(cfg, ds, AugmentConfig(copies_per_sample=10), seed=3,
                     optimizer_cfg=OptimizerConfig(epochs=8))

for f in res.folds:
    print("fold", f.fold, "accuracy %.3f" % f.report.accuracy,
          "leaks:", len(audit_no_leakage(f)))

agg = res.aggregate
print("mean accuracy %.3f +- %.3f" % (agg["accuracy"]["mean"], agg["accuracy"]["sd"]))
for name in ds.class_names:
    print("%-12s sensitivity %.3f specificity %.3f AUC %.3f" % (
        name, agg["sensitivity"][name]["mean"], agg["specificity"][name]["mean"],
        agg["auc"][name]["mean"]))

# pooled confusion matrix, rows = true class
print(np.sum([f.report.confusion for f in res.folds], axis=0))
