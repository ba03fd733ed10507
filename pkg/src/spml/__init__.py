"""Single-positive multi-label learning workbench.

Library pieces: `numerics` (stable elementary math), `robust_loss` (the
soft pseudo-label / instance weight / power-loss core), `adapters` (prior
losses and their shared bundle form), `data` (synthetic generation and
CSV persistence), `trainer` (desk-scale models and the epoch loop),
`evaluation` (mAP, Wasserstein distance, analysis curves), plus the
config/runner/cli layers for reproducible experiments.
"""

__version__ = "0.1.0"

from .robust_loss import (  # noqa: F401
    EpochLossParams,
    GrLossParams,
    InstanceWeightParams,
    PseudoLabelParams,
    RobustnessParams,
    ScheduleSpec,
    batch_loss,
    instance_weight,
    missing_label_grad_wrt_logit,
    missing_label_loss,
    negative_loss,
    per_label_grad_wrt_logit,
    per_label_loss,
    positive_loss,
    pseudo_label,
    pseudo_label_params_from_prior,
    scar_posterior,
    schedule_value,
)
