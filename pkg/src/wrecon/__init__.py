"""Wavelet-CNN reconstruction of undersampled MR-style images on a
self-contained CPU autodiff engine."""

from .autodiff import (
    Parameter,
    ShapeError,
    Tensor,
    adam_step,
    add,
    backward,
    batchnorm2d,
    conv2d,
    default_dtype,
    finite_difference_grad,
    mse_loss,
    mul,
    no_grad,
    relu,
    scale,
    sum_all,
)
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    init_cascade_from_standalone,
    load_checkpoint,
    restore_models,
    save_checkpoint,
    snapshot_checkpoint,
)
from .data import (
    PairedDataset,
    Phantom,
    build_dataset,
    export_png,
    gen_phantoms,
    load_image,
    load_image_f32,
    load_png,
    save_image_f32,
)
from .kspace import (
    INFINITE,
    FidelityConfig,
    SamplingMask,
    data_fidelity,
    fft2c,
    generate_mask,
    ifft2c,
    load_mask,
    save_mask,
    undersample,
    zero_filled,
)
from .metrics import (
    MetricReport,
    hfen,
    nmse,
    psnr,
    read_report_csv,
    ssim,
    wilcoxon_signed_rank,
    write_report_csv,
)
from .model import (
    CascadeConfig,
    WCNNConfig,
    WCNNModel,
    build_wcnn,
    cascade_forward,
    data_fidelity_layer,
    dcwcnn_forward,
    wcnn_forward,
)
from .training import EpochLog, TrainSettings, train
from .wavelet import (
    SubbandSet,
    dwt2_haar,
    dwt_layer,
    dwt_stack,
    iwt2_haar,
    iwt_layer,
    iwt_stack,
)

__version__ = "0.1.0"
