"""Input validation helpers.

All model-facing entry points funnel their array inputs through these
checks so that shape and range violations fail loudly with a clear
message instead of propagating NaNs or silent broadcasts.
"""

import numpy as np
import torch

from .errors import ContractError


def as_image_tensor(images, name="images"):
    """Coerce to a float32 (B, C, H, W) tensor with values in [0, 1]."""
    if isinstance(images, np.ndarray):
        images = torch.from_numpy(images)
    if not isinstance(images, torch.Tensor):
        raise ContractError(f"{name}: expected a tensor or ndarray, got {type(images).__name__}")
    if images.dim() != 4:
        raise ContractError(f"{name}: expected shape (B, C, H, W), got {tuple(images.shape)}")
    images = images.to(torch.float32)
    if not torch.isfinite(images).all():
        raise ContractError(f"{name}: contains non-finite values")
    lo, hi = images.min().item(), images.max().item()
    if lo < 0.0 or hi > 1.0:
        raise ContractError(f"{name}: pixel values must lie in [0, 1], found range [{lo:.4g}, {hi:.4g}]")
    return images


def as_label_tensor(labels, num_classes=None, name="labels"):
    """Coerce to an int64 (B,) tensor; optionally bound-check against num_classes."""
    if isinstance(labels, np.ndarray):
        labels = torch.from_numpy(labels)
    if not isinstance(labels, torch.Tensor):
        raise ContractError(f"{name}: expected a tensor or ndarray, got {type(labels).__name__}")
    if labels.dim() != 1:
        raise ContractError(f"{name}: expected shape (B,), got {tuple(labels.shape)}")
    labels = labels.to(torch.int64)
    if labels.numel() > 0:
        lo, hi = int(labels.min()), int(labels.max())
        if lo < 0:
            raise ContractError(f"{name}: negative label {lo}")
        if num_classes is not None and hi >= num_classes:
            raise ContractError(f"{name}: label {hi} out of range for {num_classes} classes")
    return labels


def as_mask_tensor(masks, name="fg_masks"):
    """Coerce to a float32 (B, H, W) tensor of {0, 1} with a nonempty foreground per example."""
    if isinstance(masks, np.ndarray):
        masks = torch.from_numpy(masks)
    if not isinstance(masks, torch.Tensor):
        raise ContractError(f"{name}: expected a tensor or ndarray, got {type(masks).__name__}")
    if masks.dim() != 3:
        raise ContractError(f"{name}: expected shape (B, H, W), got {tuple(masks.shape)}")
    masks = masks.to(torch.float32)
    if not torch.logical_or(masks == 0.0, masks == 1.0).all():
        raise ContractError(f"{name}: values must be exactly 0 or 1")
    per_example = masks.flatten(1).sum(dim=1)
    if (per_example == 0).any():
        empty = int((per_example == 0).nonzero()[0])
        raise ContractError(f"{name}: example {empty} has no foreground pixels")
    return masks


def check_same_batch(*tensors, names=None):
    sizes = [t.shape[0] for t in tensors]
    if len(set(sizes)) > 1:
        names = names or [f"arg{i}" for i in range(len(tensors))]
        detail = ", ".join(f"{n}={s}" for n, s in zip(names, sizes))
        raise ContractError(f"mismatched batch sizes: {detail}")


def check_logits(logits, name="logits"):
    """Validate a (B, K) logit tensor: 2-D, K >= 2, finite."""
    if not isinstance(logits, torch.Tensor) or logits.dim() != 2:
        shape = tuple(logits.shape) if isinstance(logits, torch.Tensor) else type(logits).__name__
        raise ContractError(f"{name}: expected a (B, K) tensor, got {shape}")
    if logits.shape[1] < 2:
        raise ContractError(f"{name}: need at least 2 classes, got {logits.shape[1]}")
    if not torch.isfinite(logits).all():
        raise ContractError(f"{name}: contains non-finite values")
    return logits


def check_same_shape(a, b, name_a="a", name_b="b"):
    if a.shape != b.shape:
        raise ContractError(
            f"shape mismatch: {name_a} is {tuple(a.shape)}, {name_b} is {tuple(b.shape)}"
        )
