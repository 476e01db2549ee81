"""Gradient-weighted class attention maps and background separation.

The attention map for an image is built from the final-conv features:
channel weights are the spatial mean of the target-logit gradient, the
weighted feature sum is ReLU'd, bilinearly upsampled to image size
(align_corners=False), and min-max normalized per example. A constant raw
map normalizes to all zeros.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ContractError
from .models import capture_features_and_grads
from .validation import check_same_batch

AUX_MODEL = "aux-model"
TRAINED_MODEL = "trained-model"


@dataclass
class AttentionMap:
    """Per-example pixel attention in [0, 1], same spatial dims as the input."""

    values: torch.Tensor      # (B, H, W)
    source: str               # which model produced it
    target_class: torch.Tensor  # (B,) labels the map was computed for

    def __len__(self):
        return self.values.shape[0]


def check_omega(omega):
    """Background threshold must lie strictly inside (0, 1)."""
    omega = float(omega)
    if not 0.0 < omega < 1.0:
        raise ConfigurationError(f"omega: must lie strictly in (0, 1), got {omega}")
    return omega


def _normalize_per_example(raw):
    flat = raw.flatten(1)
    lo = flat.min(dim=1).values.view(-1, 1, 1)
    hi = flat.max(dim=1).values.view(-1, 1, 1)
    span = hi - lo
    constant = span <= 0
    span = torch.where(constant, torch.ones_like(span), span)
    normalized = (raw - lo) / span
    return torch.where(constant.expand_as(raw), torch.zeros_like(raw), normalized)


def grad_cam(model, images, targets, source=TRAINED_MODEL):
    """Pixel-wise attention map of `model` for the target classes of `images`."""
    feats, grads = capture_features_and_grads(model, images, targets)
    weights = grads.mean(dim=(2, 3))                        # (B, C_f)
    raw = torch.relu((weights[:, :, None, None] * feats).sum(dim=1, keepdim=True))
    upsampled = F.interpolate(raw, size=images.shape[2:], mode="bilinear",
                              align_corners=False).squeeze(1)
    values = _normalize_per_example(upsampled)
    return AttentionMap(values=values.detach(), source=source,
                        target_class=targets.detach().clone())


def _map_values(attention):
    values = attention.values if isinstance(attention, AttentionMap) else attention
    if not isinstance(values, torch.Tensor) or values.dim() != 3:
        shape = tuple(values.shape) if isinstance(values, torch.Tensor) else type(values).__name__
        raise ContractError(f"attention map: expected a (B, H, W) tensor, got {shape}")
    return values


def separate_background(images, attention, omega):
    """Keep pixels whose attention is below omega, zero the rest.

    The indicator is applied identically across channels, so the result is
    the background portion of each image.
    """
    omega = check_omega(omega)
    values = _map_values(attention)
    if values.shape[1:] != images.shape[2:]:
        raise ContractError(
            f"attention map dims {tuple(values.shape[1:])} do not match images {tuple(images.shape[2:])}"
        )
    check_same_batch(images, values, names=["images", "attention"])
    keep = (values < omega).to(images.dtype).unsqueeze(1)
    return images * keep


def attention_region_iou(attention, region_mask, bin_threshold=0.5):
    """IoU between the binarized attention map and a ground-truth region.

    The map is binarized at `bin_threshold` (>=). An empty union scores 0.
    Returns a per-example tensor in [0, 1].
    """
    values = _map_values(attention)
    if isinstance(region_mask, AttentionMap):
        raise ContractError("region_mask must be a binary mask tensor, not an AttentionMap")
    if region_mask.shape != values.shape:
        raise ContractError(
            f"region mask shape {tuple(region_mask.shape)} does not match map {tuple(values.shape)}"
        )
    attn_region = values >= bin_threshold
    region = region_mask > 0.5
    inter = (attn_region & region).flatten(1).sum(dim=1).to(torch.float64)
    union = (attn_region | region).flatten(1).sum(dim=1).to(torch.float64)
    iou = torch.where(union > 0, inter / torch.where(union > 0, union, torch.ones_like(union)),
                      torch.zeros_like(union))
    return iou
