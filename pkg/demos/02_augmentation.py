"""
Same-class mixup augmentation
=============================

Every augmented spectrum is alpha * (lam * x + (1 - lam) * y) + noise,
with y drawn from the same class as x.
"""

import numpy as np

from ropesat.augment import AugmentConfig, augment_dataset, sample_beta
from ropesat.preprocess import preprocess_dataset
from ropesat.synthgen import default_profiles, generate_cohort

train = preprocess_dataset(generate_cohort(default_profiles(), 5, seed=1))

# lam ~ Beta(0.4, 0.4) is U-shaped: most copies stay close to one parent
lam = sample_beta((0.4, 0.4), np.random.default_rng(0), size=100_000)
print("lam mean %.3f var %.4f" % (lam.mean(), lam.var()))
print("share of lam in the outer tenths: %.2f" % np.mean((lam < 0.1) | (lam > 0.9)))

aug = augment_dataset(train, AugmentConfig(copies_per_sample=200, seed=0))
print(len(train), "->", len(aug), "spectra")

# provenance of one augmented record
rec = aug.spectra[len(train)]
print(rec.id, rec.label, {k: rec.meta[k] for k in ("parent_a", "parent_b")})
print("lambda %.3f alpha %.3f" % (rec.meta["lambda"], rec.meta["alpha"]))
