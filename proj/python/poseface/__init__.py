"""Python surface of the pose-adaptive margin recognition library.

Re-exports the compiled extension module, so `import poseface` works whenever
the built `poseface_core` extension is on the path.
"""

from poseface_core import (  # noqa: F401
    PoseFaceError,
    adaptive_ratio,
    arcface_loss,
    auc,
    cosine_similarity,
    eer,
    generate_dataset,
    gradcheck_worst,
    kfold_accuracy,
    margin_logits,
    orth_penalty,
    paa_loss,
    pose_basis,
    pose_loss,
    rank1,
    tar_at_far,
)

__all__ = [
    "PoseFaceError",
    "adaptive_ratio",
    "arcface_loss",
    "auc",
    "cosine_similarity",
    "eer",
    "generate_dataset",
    "gradcheck_worst",
    "kfold_accuracy",
    "margin_logits",
    "orth_penalty",
    "paa_loss",
    "pose_basis",
    "pose_loss",
    "rank1",
    "tar_at_far",
]
