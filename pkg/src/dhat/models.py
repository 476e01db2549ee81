"""Small convolutional classifiers with a final-conv feature tap.

Architectures here are intentionally tiny (well under 1M parameters) and
norm-free or GroupNorm-based, so the forward pass is the same function in
train and eval mode. Attack generation therefore always sees a fixed,
deterministic model.
"""

import hashlib
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from .errors import ConfigurationError, ContractError
from .validation import as_label_tensor

CHECKPOINT_SCHEMA_VERSION = 1


class SmallCNN(nn.Module):
    """Three conv stages; the tap point is the output of the last ReLU."""

    arch_name = "small-cnn"

    def __init__(self, num_classes):
        super().__init__()
        self.num_classes = num_classes
        self.features = nn.Sequential(
            nn.Conv2d(3, 8, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(8, 16, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=1, padding=1), nn.ReLU(),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(32, num_classes)

    @property
    def feature_module(self):
        return self.features[-1]

    def forward(self, x):
        f = self.features(x)
        return self.head(self.pool(f).flatten(1))


class _ResBlock(nn.Module):
    def __init__(self, c_in, c_out, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.n1 = nn.GroupNorm(4, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.n2 = nn.GroupNorm(4, c_out)
        self.act = nn.ReLU()
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.act(self.n1(self.conv1(x)))
        out = self.n2(self.conv2(out))
        return self.act(out + self.shortcut(x))


class SmallResNet(nn.Module):
    """Three residual stages with GroupNorm; tap point is the last block output."""

    arch_name = "small-resnet"

    def __init__(self, num_classes):
        super().__init__()
        self.num_classes = num_classes
        self.stem = nn.Sequential(nn.Conv2d(3, 16, 3, padding=1, bias=False),
                                  nn.GroupNorm(4, 16), nn.ReLU())
        self.block1 = _ResBlock(16, 16)
        self.block2 = _ResBlock(16, 32, stride=2)
        self.block3 = _ResBlock(32, 64, stride=2)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(64, num_classes)

    @property
    def feature_module(self):
        return self.block3

    def forward(self, x):
        f = self.block3(self.block2(self.block1(self.stem(x))))
        return self.head(self.pool(f).flatten(1))


_ARCHITECTURES = {
    "small-cnn": SmallCNN,
    "small-resnet": SmallResNet,
}


def build_classifier(arch, num_classes, seed):
    """Construct a registered architecture with seed-deterministic init."""
    if arch not in _ARCHITECTURES:
        known = ", ".join(sorted(_ARCHITECTURES))
        raise ConfigurationError(f"model.arch: unknown architecture {arch!r} (known: {known})")
    if not isinstance(num_classes, int) or num_classes < 2:
        raise ConfigurationError(f"model.num_classes: must be an integer >= 2, got {num_classes!r}")
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = _ARCHITECTURES[arch](num_classes)
    model.eval()
    return model


def forward_logits(model, images):
    """Run the classifier; returns (B, K) logits differentiable w.r.t. inputs and parameters."""
    if not isinstance(images, torch.Tensor) or images.dim() != 4:
        shape = tuple(images.shape) if isinstance(images, torch.Tensor) else type(images).__name__
        raise ContractError(f"images: expected a (B, C, H, W) tensor, got {shape}")
    if images.shape[1] != 3:
        raise ContractError(f"images: architecture expects 3 channels, got {images.shape[1]}")
    return model(images)


def capture_features_and_grads(model, images, target_labels):
    """Tap the final conv feature maps and their target-logit gradients.

    Gradients are d(logit of target class)/d(feature map), taken from the
    same forward pass that produced the features.
    """
    tap = getattr(model, "feature_module", None)
    if tap is None:
        raise ConfigurationError("model has no feature_module tap point registered")
    targets = as_label_tensor(target_labels, getattr(model, "num_classes", None))

    captured = []

    def hook(_module, _inputs, output):
        captured.append(output)

    handle = tap.register_forward_hook(hook)
    try:
        with torch.enable_grad():
            needs_grad = images if images.requires_grad else images.detach()
            logits = forward_logits(model, needs_grad)
            feats = captured[-1]
            selected = logits.gather(1, targets.view(-1, 1)).sum()
            grads = torch.autograd.grad(selected, feats)[0]
    finally:
        handle.remove()
    return feats.detach(), grads.detach()


def parameter_checksum(model):
    """SHA-256 over the raw bytes of all parameters, in state-dict order."""
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    """A resumable training snapshot. Round-trips bit-exactly through save/load."""

    arch: str
    num_classes: int
    model_state: dict
    optimizer_state: Optional[dict]
    epoch: int
    global_step: int
    rng_state: Optional[torch.Tensor]  # torch.Generator state of the training run
    config_hash: str
    metrics_records: list
    schema_version: int = CHECKPOINT_SCHEMA_VERSION

    def build_model(self):
        model = build_classifier(self.arch, self.num_classes, seed=0)
        model.load_state_dict(self.model_state)
        model.eval()
        return model

    def to_payload(self):
        return {
            "schema_version": self.schema_version,
            "arch": self.arch,
            "num_classes": self.num_classes,
            "model_state": self.model_state,
            "optimizer_state": self.optimizer_state,
            "epoch": self.epoch,
            "global_step": self.global_step,
            "rng_state": self.rng_state,
            "config_hash": self.config_hash,
            "metrics_records": self.metrics_records,
        }

    @classmethod
    def from_payload(cls, payload):
        if payload.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
            raise ConfigurationError(
                f"checkpoint schema_version {payload.get('schema_version')!r} not supported"
            )
        fields = {k: payload[k] for k in (
            "arch", "num_classes", "model_state", "optimizer_state", "epoch",
            "global_step", "rng_state", "config_hash", "metrics_records",
        )}
        return cls(**fields, schema_version=payload["schema_version"])


def save_checkpoint(checkpoint: Checkpoint, path):
    torch.save(checkpoint.to_payload(), path)
    return path


def load_checkpoint(path):
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
    return Checkpoint.from_payload(payload)
