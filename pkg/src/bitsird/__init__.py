"""bitsird: 1-bit XNOR/popcount segmentation engine for small-target detection."""

from .bitcore import PackedBitTensor, pack_bits, sign_quantize, unpack_bits, xnor_dot
from .binconv import ConvSpec, binary_conv2d, float_pm1_conv2d_oracle
from .dbconv import (
    DBConvParams,
    compute_scalars,
    db_conv,
    db_conv_direct_oracle,
    param_bits,
)
from .grad import (
    SteConfig,
    approx_error_sq,
    dysoftsign,
    dysoftsign_grad,
    ste_backward,
    ste_forward,
)
from .network import AccountingReport, Model, NetConfig
from .train import TrainConfig, cosine_lr, soft_iou_loss, train_loop
from .data import SceneConfig, SyntheticDataset, DirectoryDataset, generate_scene
from .metrics import MetricsReport, evaluate, miou, pd_fa
from .checkpoint import load_checkpoint, save_checkpoint
from .estimator import BinarySegmenter

__all__ = [
    "PackedBitTensor",
    "pack_bits",
    "sign_quantize",
    "unpack_bits",
    "xnor_dot",
    "ConvSpec",
    "binary_conv2d",
    "float_pm1_conv2d_oracle",
    "DBConvParams",
    "compute_scalars",
    "db_conv",
    "db_conv_direct_oracle",
    "param_bits",
    "SteConfig",
    "approx_error_sq",
    "dysoftsign",
    "dysoftsign_grad",
    "ste_backward",
    "ste_forward",
    "AccountingReport",
    "Model",
    "NetConfig",
    "TrainConfig",
    "cosine_lr",
    "soft_iou_loss",
    "train_loop",
    "SceneConfig",
    "SyntheticDataset",
    "DirectoryDataset",
    "generate_scene",
    "MetricsReport",
    "evaluate",
    "miou",
    "pd_fa",
    "load_checkpoint",
    "save_checkpoint",
    "BinarySegmenter",
]

__version__ = "0.1.0"
