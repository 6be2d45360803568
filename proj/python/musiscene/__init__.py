"""Python bindings for the MusiScene pipeline.

The compiled extension exposes the pipeline's main operations: the exact
caption prompts, caption scoring, the embedding-distribution distance and
label divergence used for audio evaluation, subjective survey aggregation,
and the full command-line entry point for end-to-end runs.
"""

from ._core import (
    frechet_distance,
    fusion_prompt,
    label_kl,
    msi_prompt,
    run_cli,
    score_captions,
    subjective_means,
)

__all__ = [
    "frechet_distance",
    "fusion_prompt",
    "label_kl",
    "msi_prompt",
    "run_cli",
    "score_captions",
    "subjective_means",
]
