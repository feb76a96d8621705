"""Multilinear mapping layers plus a 3-D convolutional classifier for
hyperspectral image patches."""

from .tensor import (
    Matrix,
    Tensor3,
    Tensor4,
    dematricize,
    frobenius_norm,
    kronecker,
    matricize,
    mode_n_product,
)
from .linalg import ConvergenceError, TruncatedSVD, orthonormal_init, truncated_svd
from .mapping import (
    MappingStack,
    average_patch,
    energy_retained,
    fit,
    identity_stack,
    project,
    reconstruct,
)
from .data import (
    DataError,
    FormatError,
    HsiCube,
    LabeledPatchSet,
    SynthSpec,
    extract_patches,
    load_cube,
    load_mapping,
    normalize,
    save_cube,
    save_mapping,
    split,
    synth_cube,
)
from .metrics import ConfusionMatrix, aa, confusion, kappa, oa
from .model import (
    ConvSpec,
    McnnConfig,
    McnnModel,
    PoolSpec,
    build,
    forward,
    load_checkpoint,
    predict,
    save_checkpoint,
    train_epochs,
)
from .optim import AdamConfig, adam_step

__version__ = "0.1.0"
