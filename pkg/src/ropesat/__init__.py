"""Explainable infrared spectral classification with a rotary sparse-attention transformer."""

from .augment import AugmentConfig, augment_dataset, augment_pair, sample_beta
from .evaluation import compute_metrics, cross_validate, make_splits
from .explain import BandTable, SaliencyMap, class_overlap_report, grad_cam, overlap_ratio, salient_regions
from .preprocess import PreprocessConfig, pca_projection, preprocess_dataset, second_derivative, snv
from .spectra import Dataset, Spectrum, WavenumberGrid, crop_to_fingerprint, load_dataset, save_dataset
from .synthgen import ClassProfile, Peak, generate_cohort

__version__ = "0.1.0"
