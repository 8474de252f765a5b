"""Multimodal VAE lab: PoE/MoE/MoPoE fusion, sigma-VAE objectives, synthetic
tabletop manipulation data, and cross-modal trajectory generation.

The heavy lifting lives in the compiled extension; this package re-exports it.
"""

from multivae._core import (  # noqa: F401
    check_success,
    default_vocabulary,
    evaluate_success,
    generate_dataset,
    infer_trajectory,
    kl_to_standard_normal,
    log_prob,
    make_instruction,
    mopoe_component_count,
    mse_recon,
    positional_encoding,
    product_of_experts,
    render_topview,
    reparam_sample,
    sample_scene,
    sigma_vae_recon,
    synthesize_trajectory,
    train,
)

__all__ = [
    "check_success",
    "default_vocabulary",
    "evaluate_success",
    "generate_dataset",
    "infer_trajectory",
    "kl_to_standard_normal",
    "log_prob",
    "make_instruction",
    "mopoe_component_count",
    "mse_recon",
    "positional_encoding",
    "product_of_experts",
    "render_topview",
    "reparam_sample",
    "sample_scene",
    "sigma_vae_recon",
    "synthesize_trajectory",
    "train",
]
