"""Attend-and-Excite laboratory.

A small text-conditioned diffusion model over a synthetic shapes world,
with cross-attention instrumentation, inference-time latent optimization,
an exact oracle detector, and benchmark metrics. The heavy lifting lives
in the C++ extension module `aexlab._core`; this package re-exports it.
"""

from aexlab._core import (
    Model,
    RunConfig,
    TokenPrompt,
    Vocabulary,
    benchmark_prompts,
    detect,
    encode_prompt,
    gaussian_kernel,
    heatmap,
    neglect_rate,
    oracle_similarities,
    paired_ttest,
    render_scene,
    sample,
    train,
    write_png,
)

__all__ = [
    "Model",
    "RunConfig",
    "TokenPrompt",
    "Vocabulary",
    "benchmark_prompts",
    "detect",
    "encode_prompt",
    "gaussian_kernel",
    "heatmap",
    "neglect_rate",
    "oracle_similarities",
    "paired_ttest",
    "render_scene",
    "sample",
    "train",
    "write_png",
]
