"""Dual-channel 3D UNet 3+ with full-scale skip aggregation.

Channel 0 carries the normalized CT, channel 1 the vesselness map. Every
decoder scale fuses resized contributions from all encoder scales at or
below it plus every coarser decoder/bottleneck scale, so each decoder sees
levels+1 sources. Desk-scale training is plain (momentum) gradient descent
on soft-Dice + BCE.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor5
from .errors import ShapeError, TrainingError, ValidationError
from .volume import Volume3

PARAMS_FORMAT_VERSION = "unet3p-v1"
DICE_EPS = 1e-5
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class NetSpec:
    levels: int = 4
    base_channels: int = 4
    skip_channels: int = 4
    in_channels: int = 2
    out_channels: int = 1

    def validate(self) -> None:
        if self.in_channels != 2:
            raise ValidationError("dual-channel input required: in_channels must be 2")
        if self.out_channels != 1:
            raise ValidationError("out_channels must be 1")
        if self.levels < 1 or self.base_channels < 1 or self.skip_channels < 1:
            raise ValidationError(f"invalid NetSpec: {self}")

    def encoder_channels(self, level: int) -> int:
        """Output channels of encoder level 1..levels (doubling per level)."""
        return self.base_channels * (1 << (level - 1))

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * (1 << self.levels)

    @property
    def fused_channels(self) -> int:
        return (self.levels + 1) * self.skip_channels


@dataclass
class NetParams:
    spec: NetSpec
    tensors: dict[str, np.ndarray]
    seed: int

    def copy(self) -> "NetParams":
        return NetParams(self.spec, {k: v.copy() for k, v in self.tensors.items()}, self.seed)

    def astype(self, dtype) -> "NetParams":
        return NetParams(
            self.spec, {k: v.astype(dtype) for k, v in self.tensors.items()}, self.seed
        )


def _layer_inventory(spec: NetSpec) -> list[tuple[str, int, int, int]]:
    """(name, cin, cout, kernel_size) conv layers in a stable order."""
    layers = []
    cin = spec.in_channels
    for lvl in range(1, spec.levels + 1):
        cout = spec.encoder_channels(lvl)
        layers.append((f"enc{lvl}.conv1", cin, cout, 3))
        layers.append((f"enc{lvl}.conv2", cout, cout, 3))
        cin = cout
    layers.append(("bottleneck.conv1", cin, spec.bottleneck_channels, 3))
    layers.append(("bottleneck.conv2", spec.bottleneck_channels, spec.bottleneck_channels, 3))

    def source_channels(scale: int, decoder_scale: int) -> int:
        if scale <= decoder_scale:
            return spec.encoder_channels(scale)
        if scale == spec.levels + 1:
            return spec.bottleneck_channels
        return spec.fused_channels  # coarser decoder output

    for d in range(spec.levels, 0, -1):
        for s in range(1, spec.levels + 2):
            layers.append((f"dec{d}.from{s}", source_channels(s, d), spec.skip_channels, 3))
        layers.append((f"dec{d}.fuse", spec.fused_channels, spec.fused_channels, 3))
    layers.append(("head", spec.fused_channels, spec.out_channels, 1))
    return layers


def parameter_count(spec: NetSpec) -> int:
    return sum(k ** 3 * cin * cout + cout for _, cin, cout, k in _layer_inventory(spec))


def build_unet3p(spec: NetSpec, seed: int = 0) -> NetParams:
    """Deterministic initialization: kernels uniform +-sqrt(1/fan_in), zero biases."""
    spec.validate()
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, cin, cout, k in _layer_inventory(spec):
        bound = np.sqrt(1.0 / (cin * k ** 3))
        tensors[f"{name}.w"] = rng.uniform(-bound, bound, size=(cout, cin, k, k, k))
        tensors[f"{name}.b"] = np.zeros((1, cout, 1, 1, 1))
    return NetParams(spec, tensors, seed)


def _wrap(params: NetParams, trainable: bool) -> dict[str, Tensor5]:
    return {k: Tensor5(v, requires_grad=trainable) for k, v in params.tensors.items()}


def _conv_block(t: dict[str, Tensor5], name: str, x: Tensor5) -> Tensor5:
    return ad.relu(ad.conv3d(x, t[f"{name}.w"], t[f"{name}.b"]))


def forward_graph(params: NetParams, x: Tensor5, trainable: bool = False) -> Tensor5:
    """Build the full computation graph; returns per-voxel probabilities."""
    return _forward_with(_wrap(params, trainable), params.spec, x)


def forward(params: NetParams, x: np.ndarray) -> np.ndarray:
    """Pure inference: (n, 2, d, h, w) probabilities with no graph retained."""
    return forward_graph(params, Tensor5(np.asarray(x)), trainable=False).data


def _dice_term(pred: Tensor5, truth: Tensor5) -> Tensor5:
    inter = (pred * truth).sum()
    return 1.0 - (2.0 * inter + DICE_EPS) / (pred.sum() + truth.sum() + DICE_EPS)


def loss(pred: Tensor5, truth: Tensor5) -> Tensor5:
    """Soft-Dice loss plus voxel-mean binary cross-entropy (one-element tensor)."""
    if pred.shape != truth.shape:
        raise ShapeError(f"loss shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    nvox = float(pred.data.size)
    # clamp keeps log finite when float32 sigmoid saturates to exactly 0 or 1
    p = pred.clip(BCE_CLAMP, 1.0 - BCE_CLAMP)
    bce = -(truth * p.log() + (1.0 - truth) * (1.0 - p).log()).sum() * (1.0 / nvox)
    return _dice_term(pred, truth) + bce


def loss_from_logits(logits: Tensor5, truth: Tensor5) -> Tensor5:
    """Same soft-Dice + BCE loss, with the BCE term evaluated in logit space.

    BCE(sigmoid(z), y) == softplus(z) - z*y identically; this form keeps a
    live gradient when float32 sigmoid saturates to exactly 0 or 1, which
    the clamped probability form cannot (its gradient dies with the clamp).
    The trainer uses this path; `loss` remains the probability-space API.
    """
    if logits.shape != truth.shape:
        raise ShapeError(f"loss shape mismatch: logits {logits.shape} vs truth {truth.shape}")
    nvox = float(logits.data.size)
    bce = (ad.softplus(logits) - logits * truth).sum() * (1.0 / nvox)
    return _dice_term(ad.sigmoid(logits), truth) + bce


def _stack_case(image2ch: np.ndarray, mask: np.ndarray, dtype) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(image2ch, dtype=dtype)
    y = np.asarray(mask, dtype=dtype)
    if x.ndim == 4:
        x = x[None]
    if y.ndim == 3:
        y = y[None, None]
    elif y.ndim == 4:
        y = y[None]
    return x, y


def train_toy(
    params: NetParams,
    pairs: list[tuple[np.ndarray, np.ndarray]],
    steps: int,
    lr: float,
    momentum: float = 0.9,
    dtype=np.float64,
    callback=None,
) -> tuple[NetParams, list[float]]:
    """Full-batch (momentum) gradient descent; returns new params and loss history."""
    if not pairs:
        raise ValidationError("train_toy needs at least one (image, mask) pair")
    params = params.astype(dtype)
    cases = [_stack_case(img, msk, dtype) for img, msk in pairs]
    velocity = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    history: list[float] = []

    for step in range(steps):
        grads = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.tensors.items()}
        total = 0.0
        for x, y in cases:
            t = _wrap(params, trainable=True)
            # rebuild graph with the live tensors of this step
            out = _logits_with(t, params.spec, Tensor5(x))
            step_loss = loss_from_logits(out, Tensor5(y))
            step_loss.backward()
            total += step_loss.item()
            for name, tensor in t.items():
                if tensor.grad is not None:
                    grads[name] += tensor.grad
        total /= len(cases)
        if not np.isfinite(total):
            raise TrainingError(step)
        history.append(total)
        for name in params.tensors:
            g = grads[name] / len(cases)
            velocity[name] = momentum * velocity[name] - lr * g
            params.tensors[name] = (params.tensors[name] + velocity[name]).astype(dtype)
        if callback is not None and callback(step, total, params):
            break
    return params, history


def _forward_with(t: dict[str, Tensor5], spec: NetSpec, x: Tensor5) -> Tensor5:
    return ad.sigmoid(_logits_with(t, spec, x))


def _logits_with(t: dict[str, Tensor5], spec: NetSpec, x: Tensor5) -> Tensor5:
    """Network body up to the pre-sigmoid head output."""
    n, c, d, h, w = x.shape
    if c != 2:
        raise ShapeError(f"dual-channel input required, got {c} channels")
    div = 1 << spec.levels
    if d % div or h % div or w % div:
        raise ShapeError(f"spatial dims {(d, h, w)} must be divisible by 2^levels = {div}")
    # encoder: features[s] lives at scale s (downsampled by 2^(s-1))
    features: dict[int, Tensor5] = {}
    cur = x
    for lvl in range(1, spec.levels + 1):
        cur = _conv_block(t, f"enc{lvl}.conv2", _conv_block(t, f"enc{lvl}.conv1", cur))
        features[lvl] = cur
        cur = ad.maxpool3d(cur, 2)
    cur = _conv_block(t, "bottleneck.conv2", _conv_block(t, "bottleneck.conv1", cur))
    features[spec.levels + 1] = cur
    for dlvl in range(spec.levels, 0, -1):
        sources = []
        for s in range(1, spec.levels + 2):
            src = features[s]
            if s < dlvl:
                src = ad.maxpool3d(src, 1 << (dlvl - s))
            elif s > dlvl:
                src = ad.upsample_nn(src, 1 << (s - dlvl))
            sources.append(ad.conv3d(src, t[f"dec{dlvl}.from{s}.w"], t[f"dec{dlvl}.from{s}.b"]))
        features[dlvl] = _conv_block(t, f"dec{dlvl}.fuse", ad.concat(sources))
    return ad.conv3d(features[1], t["head.w"], t["head.b"])


def _pad_to_multiple(arr: np.ndarray, div: int) -> tuple[np.ndarray, tuple[int, int, int]]:
    dims = arr.shape
    padded = tuple((-n) % div for n in dims)
    if any(padded):
        arr = np.pad(arr, tuple((0, p) for p in padded))
    return arr, dims


def infer(
    params: NetParams,
    ct: Volume3,
    vessel: Volume3,
    threshold: float = 0.5,
) -> Volume3:
    """Dual-channel inference on a volume pair; returns a binary uint8 mask.

    ct is expected already normalized to [0, 1]. Volumes are zero-padded to
    the next multiple of 2^levels and cropped back afterwards.
    """
    if not ct.same_grid(vessel):
        raise ValidationError(
            f"channel grids differ: ct {ct.dims}/{ct.spacing} vs vessel "
            f"{vessel.dims}/{vessel.spacing}"
        )
    div = 1 << params.spec.levels
    # Volume3 is (x, y, z); tensors are (d, h, w) = (z, y, x)
    ct_arr, dims = _pad_to_multiple(ct.data.astype(np.float64).transpose(2, 1, 0), div)
    vs_arr, _ = _pad_to_multiple(vessel.data.astype(np.float64).transpose(2, 1, 0), div)
    x = np.stack([ct_arr, vs_arr])[None]
    prob = forward(params.astype(x.dtype), x)[0, 0]
    d, h, w = ct.dims[2], ct.dims[1], ct.dims[0]
    mask = (prob[:d, :h, :w] > threshold).astype(np.uint8).transpose(2, 1, 0)
    return Volume3(mask, ct.spacing, ct.origin)


# ---------------------------------------------------------------------------
# persistence: text manifest + little-endian float32 blob


def save_params(params: NetParams, path: str) -> None:
    spec = params.spec
    names = sorted(params.tensors)
    buf = io.BytesIO()
    entries = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(params.tensors[name], dtype="<f4")
        entries.append((name, params.tensors[name].shape, offset))
        buf.write(arr.tobytes())
        offset += arr.nbytes
    lines = [
        f"format = {PARAMS_FORMAT_VERSION}",
        f"levels = {spec.levels}",
        f"base_channels = {spec.base_channels}",
        f"skip_channels = {spec.skip_channels}",
        f"in_channels = {spec.in_channels}",
        f"out_channels = {spec.out_channels}",
        f"seed = {params.seed}",
    ]
    for name, shape, off in entries:
        lines.append(f"tensor = {name} {','.join(map(str, shape))} {off}")
    lines.append(f"blob = {offset}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(buf.getvalue())


def load_params(path: str) -> NetParams:
    fields: dict[str, str] = {}
    tensors_meta = []
    with open(path, "rb") as fh:
        while True:
            raw = fh.readline()
            if not raw:
                raise ValidationError(f"{path}: params file ended before blob marker")
            key, _, value = raw.decode("ascii").strip().partition(" = ")
            if key == "tensor":
                name, shape_s, off_s = value.split()
                tensors_meta.append((name, tuple(int(v) for v in shape_s.split(",")), int(off_s)))
            else:
                fields[key] = value
            if key == "blob":
                blob = fh.read(int(value))
                break
    if fields.get("format") != PARAMS_FORMAT_VERSION:
        raise ValidationError(
            f"{path}: unsupported params format {fields.get('format')!r}, "
            f"expected {PARAMS_FORMAT_VERSION}"
        )
    spec = NetSpec(
        levels=int(fields["levels"]),
        base_channels=int(fields["base_channels"]),
        skip_channels=int(fields["skip_channels"]),
        in_channels=int(fields["in_channels"]),
        out_channels=int(fields["out_channels"]),
    )
    expected_shapes = {}
    for name, cin, cout, k in _layer_inventory(spec):
        expected_shapes[f"{name}.w"] = (cout, cin, k, k, k)
        expected_shapes[f"{name}.b"] = (1, cout, 1, 1, 1)
    tensors = {}
    for name, shape, off in tensors_meta:
        if name not in expected_shapes:
            raise ValidationError(f"{path}: unexpected tensor {name}")
        if shape != expected_shapes[name]:
            raise ValidationError(
                f"{path}: tensor {name} has shape {shape}, spec requires {expected_shapes[name]}"
            )
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
        tensors[name] = arr.astype(np.float32).reshape(shape)
    missing = set(expected_shapes) - set(tensors)
    if missing:
        raise ValidationError(f"{path}: missing tensors {sorted(missing)}")
    return NetParams(spec, tensors, int(fields.get("seed", 0)))
