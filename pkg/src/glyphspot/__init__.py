"""glyphspot: character spotting on degraded document images.

Segments pages into whitespace-bound candidate regions, cuts fixed 48x32
kernels, and classifies each as a complete character or reject with
HOG+PCA shallow models, a strided-convolution encoder network, or a
two-stage cascade of them.
"""

__version__ = "0.1.0"

from .classifiers import KnnModel, Prediction, SvmModel, knn_predict, svm_predict, svm_train
from .encoder import EncoderModel, encoder_forward, train_encoder
from .features import HogParams, PcaModel, hog, l2hys, pca_fit, pca_transform
from .persist import load_model, save_model
from .pipeline import (
    CascadeModel,
    EncoderClassifier,
    FeatureClassifier,
    Metrics,
    SpotConfig,
    SpotReport,
    evaluate,
    spot,
)
from .raster import BinaryImage, GrayImage, SynthConfig, binarize, load_image, save_image, synth_page
from .segmentation import Box, Kernel, build_manifest, extract_kernel, propose_regions

__all__ = [
    "__version__",
    "Box",
    "BinaryImage",
    "CascadeModel",
    "EncoderClassifier",
    "EncoderModel",
    "FeatureClassifier",
    "GrayImage",
    "HogParams",
    "Kernel",
    "KnnModel",
    "Metrics",
    "PcaModel",
    "Prediction",
    "SpotConfig",
    "SpotReport",
    "SvmModel",
    "SynthConfig",
    "binarize",
    "build_manifest",
    "encoder_forward",
    "evaluate",
    "extract_kernel",
    "hog",
    "knn_predict",
    "l2hys",
    "load_image",
    "load_model",
    "pca_fit",
    "pca_transform",
    "propose_regions",
    "save_image",
    "save_model",
    "spot",
    "svm_predict",
    "svm_train",
    "synth_page",
    "train_encoder",
]
