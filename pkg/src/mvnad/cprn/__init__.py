"""Cross-modal prototype reconstruction network at desk scale."""

from mvnad.cprn.encoder import (
    EncoderConfig,
    FeatureError,
    FeaturePyramid,
    FrozenEncoder,
    encode,
    export_features,
    import_features,
)
from mvnad.cprn.model import (
    ABLATIONS,
    TrainConfig,
    ablation_mode,
    assignment_distribution,
    cpga_forward,
    loss_entropy,
    loss_recon,
    model_forward,
    ucp_forward,
)
from mvnad.cprn.runtime import AnomalyResult, CprnModel, UntrainedModelError, fit, infer, train_step

__all__ = [
    "ABLATIONS",
    "AnomalyResult",
    "CprnModel",
    "EncoderConfig",
    "FeatureError",
    "FeaturePyramid",
    "FrozenEncoder",
    "TrainConfig",
    "UntrainedModelError",
    "ablation_mode",
    "assignment_distribution",
    "cpga_forward",
    "encode",
    "export_features",
    "fit",
    "import_features",
    "infer",
    "loss_entropy",
    "loss_recon",
    "model_forward",
    "train_step",
    "ucp_forward",
]
