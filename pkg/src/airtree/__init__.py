"""Airway-tree modeling: vesselness prior, dual-channel 3D UNet 3+,
region-growing post-processing and centerline evaluation metrics."""

from .eigen import EigenTriple, eig_sym3
from .metrics import CenterlineRef, EvalReport, branch_detected_rate, dice, evaluate, tree_detected_rate
from .phantom import PhantomSpec, make_phantom
from .pipeline import PipelineConfig, run_pipeline, split_dataset
from .postproc import Seed, find_seed, largest_cc, postprocess, region_grow
from .unet3p import NetParams, NetSpec, build_unet3p, forward, infer, loss, train_toy
from .vesselness import VesselnessParams, frangi, gaussian_smooth, hessian_at_scale, vesselness_response
from .volume import Volume3, normalize_ct, read_mha, write_mha

__all__ = [
    "CenterlineRef",
    "EigenTriple",
    "EvalReport",
    "NetParams",
    "NetSpec",
    "PhantomSpec",
    "PipelineConfig",
    "Seed",
    "Volume3",
    "VesselnessParams",
    "branch_detected_rate",
    "build_unet3p",
    "dice",
    "eig_sym3",
    "evaluate",
    "find_seed",
    "forward",
    "frangi",
    "gaussian_smooth",
    "hessian_at_scale",
    "infer",
    "largest_cc",
    "loss",
    "make_phantom",
    "normalize_ct",
    "postprocess",
    "read_mha",
    "region_grow",
    "run_pipeline",
    "split_dataset",
    "train_toy",
    "tree_detected_rate",
    "vesselness_response",
    "write_mha",
]

__version__ = "0.1.0"
