"""Hamiltonian sequence VAE (C++ core) with a thin numpy interface."""

from ._hvae import (
    ContractError,
    CapacityError,
    Dataset,
    Error,
    FormatError,
    Model,
    ShapeError,
    assemble_hamiltonian,
    dataset_from_bytes,
    expm,
    expm_frechet,
    export_grid,
    load_dataset,
    make_datasets,
    mse,
    operator_residuals,
    parameter_count,
    psnr,
    quantize,
    read_ppm,
    reconstruction_scores,
    render_sequence,
    rollout_scores,
    ssim,
    swap_fidelity,
    symplectic_form,
    train,
)

ACTIONS = ("orbit", "pulse", "slide")

__all__ = [name for name in dir() if not name.startswith("_")]
