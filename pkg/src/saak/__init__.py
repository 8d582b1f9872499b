"""Multi-stage Saak transform: data-driven KLT kernels with sign-to-position
augmentation, cross-entropy feature selection and light classifiers."""

from ._backend import BACKEND
from .classifier import evaluate, predict, train_logistic, train_mlp
from .dataset_io import ImageSet, load_cifar10, load_mnist, load_stl10, load_tensor, save_tensor
from .kernels import SaakKernelSet, StageConfig, fit_stage_kernels, kernel_cosine_similarity
from .selection import EntropyMap, SelectionMask, apply_selection, entropy_map, select
from .transform import SaakCascade, fit_cascade, forward_cascade, forward_stage, inverse_stage

__version__ = "0.1.0"
