"""End-to-end pipeline: normalize -> vesselness -> inference -> post-processing
-> evaluation, with deterministic artifacts and staged failure reporting.

Artifacts are written with a `.partial` suffix while the run is in flight
and renamed on overall success, so an aborted run leaves only `.partial`
files behind.
"""

from __future__ import annotations

import math
import os
import random
from dataclasses import dataclass

import numpy as np

from .config import ConfigView, parse_config
from .errors import EmptyMaskError, ValidationError
from .metrics import CenterlineRef, EvalReport, evaluate, read_centerline
from .postproc import postprocess
from .unet3p import NetParams, infer, load_params
from .vesselness import VesselnessParams, frangi
from .volume import Volume3, normalize_ct, read_mha, write_mha


class PipelineError(RuntimeError):
    """A stage failed; carries the stage name and the underlying cause."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


@dataclass(frozen=True)
class PipelineConfig:
    ct_path: str
    params_path: str
    out_dir: str
    truth_path: str | None = None
    centerline_path: str | None = None
    normalize_lo: float = -1000.0
    normalize_hi: float = 600.0
    vesselness: VesselnessParams = VesselnessParams()
    threshold: float = 0.5
    branch_frac: float = 0.8
    seed: int = 0
    strict: bool = False

    @staticmethod
    def from_file(path: str) -> "PipelineConfig":
        cfg = ConfigView(parse_config(path), path)
        c_raw = cfg.get("vesselness.c", "auto")
        vp = VesselnessParams(
            scales=cfg.get_floats("vesselness.scales", VesselnessParams().scales),
            alpha=cfg.get_float("vesselness.alpha", 0.5),
            beta=cfg.get_float("vesselness.beta", 0.5),
            c="auto" if c_raw == "auto" else float(c_raw),
            polarity=cfg.get("vesselness.polarity", "dark"),
            gamma=cfg.get_float("vesselness.gamma", 1.0),
        )
        return PipelineConfig(
            ct_path=cfg.get("paths.ct"),
            params_path=cfg.get("paths.params"),
            out_dir=cfg.get("paths.out_dir"),
            truth_path=cfg.values.get("paths.truth"),
            centerline_path=cfg.values.get("paths.centerline"),
            normalize_lo=cfg.get_float("normalize.lo", -1000.0),
            normalize_hi=cfg.get_float("normalize.hi", 600.0),
            vesselness=vp,
            threshold=cfg.get_float("infer.threshold", 0.5),
            branch_frac=cfg.get_float("metrics.branch_frac", 0.8),
            seed=cfg.get_int("run.seed", 0),
            strict=cfg.get_bool("run.strict", False),
        )

    def validate(self) -> None:
        for what, p in (("ct", self.ct_path), ("params", self.params_path),
                        ("truth", self.truth_path), ("centerline", self.centerline_path)):
            if p is not None and not os.path.exists(p):
                raise ValidationError(f"input path for {what} does not exist: {p}")
        self.vesselness.validate()
        if self.normalize_lo >= self.normalize_hi:
            raise ValidationError("normalize.lo must be < normalize.hi")


ARTIFACTS = ("vessel.mha", "pred.mha", "final.mha", "report.txt")


def file_plan(cfg: PipelineConfig) -> list[str]:
    """Exact list of files a run would write (dry-run support)."""
    return [os.path.join(cfg.out_dir, name) for name in ARTIFACTS]


def run_pipeline(cfg: PipelineConfig) -> EvalReport:
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    written: list[str] = []

    def emit(name: str, writer) -> None:
        path = os.path.join(cfg.out_dir, name) + ".partial"
        writer(path)
        written.append(path)

    def stage(name: str, fn):
        try:
            return fn()
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, exc) from exc

    ct = stage("load-ct", lambda: read_mha(cfg.ct_path))
    params: NetParams = stage("load-params", lambda: load_params(cfg.params_path))
    truth = stage("load-truth", lambda: read_mha(cfg.truth_path)) if cfg.truth_path else None
    ref: CenterlineRef | None = None
    if cfg.centerline_path:
        if truth is None:
            raise PipelineError(
                "load-centerline", ValidationError("centerline metrics require paths.truth")
            )
        ref = stage("load-centerline", lambda: read_centerline(cfg.centerline_path, truth))

    norm = stage("normalize", lambda: normalize_ct(ct, cfg.normalize_lo, cfg.normalize_hi))
    vessel = stage("frangi", lambda: frangi(norm, cfg.vesselness))
    if not np.isfinite(vessel.data).all():
        raise PipelineError("frangi", FloatingPointError("non-finite vesselness values"))
    emit("vessel.mha", lambda p: write_mha(vessel, p))

    pred = stage("infer", lambda: infer(params, norm, vessel, cfg.threshold))
    emit("pred.mha", lambda p: write_mha(pred, p))

    if cfg.strict and not pred.data.any():
        raise PipelineError("postprocess", EmptyMaskError("empty prediction in strict mode"))
    final = stage("postprocess", lambda: postprocess(pred))
    emit("final.mha", lambda p: write_mha(final, p))

    if truth is not None:
        report = stage("evaluate", lambda: evaluate(final, truth, ref, cfg.branch_frac))
    else:
        report = EvalReport(dice=float("nan"), tp=0, fp=int(final.data.sum()), fn=0)
    def write_report(p):
        with open(p, "w") as fh:
            fh.write(report.as_text())

    emit("report.txt", write_report)

    # all stages succeeded: promote partial files
    for partial in written:
        os.replace(partial, partial[: -len(".partial")])
    return report


def split_dataset(cases: list[str], ratio: float = 0.9, seed: int = 0) -> tuple[list[str], list[str]]:
    """Deterministic shuffle, first ceil(ratio*n) cases train, rest test."""
    if len(cases) < 2:
        raise ValidationError(f"need at least 2 cases to split, got {len(cases)}")
    if not 0 < ratio < 1:
        raise ValidationError(f"ratio must be in (0, 1), got {ratio}")
    shuffled = list(cases)
    random.Random(seed).shuffle(shuffled)
    n_train = math.ceil(ratio * len(shuffled))
    return shuffled[:n_train], shuffled[n_train:]
