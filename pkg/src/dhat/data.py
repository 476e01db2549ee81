"""Datasets: synthetic spurious-background generator and small-image ingestion.

The synthetic generator draws a class-determined foreground glyph on a
background whose color cue agrees with the class label only with a
configured probability, so a model can "cheat" by reading the background.
Ground-truth foreground masks come for free, which is what the attention
IoU diagnostics are scored against.
"""

import hashlib
import json
import os
import pickle
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .errors import ConfigurationError, ContractError, IngestionError
from .validation import as_image_tensor, as_label_tensor, as_mask_tensor, check_same_batch

_EXPORT_SCHEMA_VERSION = 1

# Background palette: one saturated color per class, well separated so the
# cue survives small l-inf perturbations.
_PALETTE = np.array(
    [
        [0.80, 0.35, 0.35],  # red
        [0.35, 0.35, 0.80],  # blue
        [0.35, 0.75, 0.35],  # green
        [0.80, 0.75, 0.30],  # yellow
        [0.75, 0.35, 0.75],  # magenta
        [0.35, 0.75, 0.75],  # cyan
    ],
    dtype=np.float32,
)

_BG_NOISE = 0.03     # amplitude of uniform background noise
_GLYPH_VALUE = 0.95  # near-white foreground, high contrast against every palette entry


@dataclass
class LabeledBatch:
    """A batch of images in [0,1] with integer labels and optional foreground masks."""

    images: torch.Tensor          # (B, C, H, W) float32 in [0, 1]
    labels: torch.Tensor          # (B,) int64 in [0, num_classes)
    num_classes: int
    fg_masks: Optional[torch.Tensor] = None  # (B, H, W) float32 of {0, 1}

    def __post_init__(self):
        self.images = as_image_tensor(self.images)
        self.labels = as_label_tensor(self.labels, self.num_classes)
        if self.fg_masks is not None:
            self.fg_masks = as_mask_tensor(self.fg_masks)
            if self.fg_masks.shape[1:] != self.images.shape[2:]:
                raise ContractError(
                    f"fg_masks spatial dims {tuple(self.fg_masks.shape[1:])} do not match "
                    f"images {tuple(self.images.shape[2:])}"
                )
            check_same_batch(self.images, self.fg_masks, names=["images", "fg_masks"])
        check_same_batch(self.images, self.labels, names=["images", "labels"])

    def __len__(self):
        return self.images.shape[0]

    def select(self, indices):
        """Row-subset view (copies); indices may be a tensor, list, or slice."""
        masks = self.fg_masks[indices] if self.fg_masks is not None else None
        return LabeledBatch(self.images[indices], self.labels[indices], self.num_classes, masks)


@dataclass
class SpuriousSpec:
    """Parameters of the synthetic spurious-background dataset."""

    num_classes: int = 2
    image_size: int = 32
    train_correlation: float = 0.95
    test_correlation: float = 0.5
    train_samples: int = 5000
    test_samples: int = 1000
    seed: int = 0

    def validate(self):
        if not isinstance(self.num_classes, int) or not 2 <= self.num_classes <= len(_PALETTE):
            raise ConfigurationError(
                f"num_classes: must be an integer in [2, {len(_PALETTE)}], got {self.num_classes!r}"
            )
        if not isinstance(self.image_size, int) or self.image_size < 8:
            raise ConfigurationError(f"image_size: must be an integer >= 8, got {self.image_size!r}")
        for name in ("train_correlation", "test_correlation"):
            v = getattr(self, name)
            if not 0.0 <= float(v) <= 1.0:
                raise ConfigurationError(f"{name}: must lie in [0, 1], got {v!r}")
        for name in ("train_samples", "test_samples"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigurationError(f"{name}: must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int):
            raise ConfigurationError(f"seed: must be an integer, got {self.seed!r}")
        return self


def _glyph_mask(class_id, size, rng):
    """Boolean (size, size) mask of the class glyph at a jittered position.

    Glyph geometries are class-disjoint: plus, hollow square, X, filled disc,
    T, and L shapes.
    """
    g = max(size // 2, 6)            # glyph box edge
    t = max(size // 16, 1)           # stroke thickness
    box = np.zeros((g, g), dtype=bool)
    i, j = np.mgrid[0:g, 0:g]
    c = (g - 1) / 2.0
    if class_id == 0:    # plus
        box[np.abs(i - c) <= t] = True
        box[np.abs(j - c) <= t] = True
    elif class_id == 1:  # hollow square
        border = (i < 2 * t) | (i >= g - 2 * t) | (j < 2 * t) | (j >= g - 2 * t)
        box[border] = True
    elif class_id == 2:  # X
        box[np.abs(i - j) <= t] = True
        box[np.abs(i + j - (g - 1)) <= t] = True
    elif class_id == 3:  # filled disc
        box[(i - c) ** 2 + (j - c) ** 2 <= (g / 2.0 - t) ** 2] = True
    elif class_id == 4:  # T
        box[i < 2 * t] = True
        box[np.abs(j - c) <= t] = True
    elif class_id == 5:  # L
        box[:, :2 * t] = True
        box[g - 2 * t:, :] = True
    else:
        raise ConfigurationError(f"num_classes: no glyph registered for class {class_id}")

    mask = np.zeros((size, size), dtype=bool)
    margin = size - g
    top = int(rng.integers(0, margin + 1))
    left = int(rng.integers(0, margin + 1))
    mask[top:top + g, left:left + g] = box
    return mask


def _generate_split(spec, correlation, samples, rng):
    """Render one split; returns (images, labels, masks, cue_match) arrays."""
    n, k, s = samples, spec.num_classes, spec.image_size
    images = np.empty((n, 3, s, s), dtype=np.float32)
    labels = rng.integers(0, k, size=n).astype(np.int64)
    masks = np.empty((n, s, s), dtype=np.float32)
    cue_match = np.empty(n, dtype=bool)

    for idx in range(n):
        y = int(labels[idx])
        cue_match[idx] = bool(rng.random() < correlation)
        if cue_match[idx]:
            cue = y
        else:
            # uniform over the other classes
            cue = int(rng.integers(0, k - 1))
            if cue >= y:
                cue += 1
        bg = _PALETTE[cue][:, None, None] + rng.uniform(
            -_BG_NOISE, _BG_NOISE, size=(3, s, s)
        ).astype(np.float32)
        glyph = _glyph_mask(y, s, rng)
        img = bg
        img[:, glyph] = _GLYPH_VALUE
        images[idx] = np.clip(img, 0.0, 1.0)
        masks[idx] = glyph.astype(np.float32)

    return images, labels, masks, cue_match


def generate_spurious_split(spec: SpuriousSpec, split: str):
    """Generate one split of the spurious dataset.

    Returns (batch, cue_match) where cue_match[i] records whether example i's
    background cue agrees with its label. Deterministic in (spec.seed, split).
    """
    spec.validate()
    if split not in ("train", "test"):
        raise ConfigurationError(f"split: must be 'train' or 'test', got {split!r}")
    train_ss, test_ss = np.random.SeedSequence(spec.seed).spawn(2)
    if split == "train":
        rng = np.random.default_rng(train_ss)
        corr, n = spec.train_correlation, spec.train_samples
    else:
        rng = np.random.default_rng(test_ss)
        corr, n = spec.test_correlation, spec.test_samples
    images, labels, masks, cue_match = _generate_split(spec, corr, n, rng)
    batch = LabeledBatch(images, labels, spec.num_classes, masks)
    return batch, cue_match


def generate_spurious_dataset(spec: SpuriousSpec):
    """Generate (train, test) batches per the spec. Pure function of the seed."""
    train, _ = generate_spurious_split(spec, "train")
    test, _ = generate_spurious_split(spec, "test")
    return train, test


def split_foreground_background(batch: LabeledBatch):
    """Split a masked batch into foreground-only and background-only copies.

    fg_only zeroes background pixels, bg_only zeroes foreground pixels;
    elementwise fg_only + bg_only reconstructs the input exactly.
    """
    if batch.fg_masks is None:
        raise ContractError("split_foreground_background: batch has no fg_masks")
    m = batch.fg_masks.unsqueeze(1)  # (B, 1, H, W)
    fg_images = batch.images * m
    bg_images = batch.images * (1.0 - m)
    fg = LabeledBatch(fg_images, batch.labels.clone(), batch.num_classes)
    bg = LabeledBatch(bg_images, batch.labels.clone(), batch.num_classes)
    return fg, bg


# ---------------------------------------------------------------------------
# Standard small-image datasets (canonical pickle batch layout)
# ---------------------------------------------------------------------------

_CIFAR10_TRAIN_FILES = [f"data_batch_{i}" for i in range(1, 6)]
_CIFAR10_TEST_FILES = ["test_batch"]


def _read_cifar_file(path, label_key):
    if not os.path.exists(path):
        raise IngestionError(f"missing dataset file: {path}")
    try:
        with open(path, "rb") as fh:
            record = pickle.load(fh, encoding="bytes")
        data = record[b"data"]
        labels = np.asarray(record[label_key], dtype=np.int64)
    except (pickle.UnpicklingError, KeyError, EOFError, ValueError) as exc:
        raise IngestionError(f"corrupt dataset file: {path} ({exc})") from exc
    images = data.reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def _load_cifar(path, train_files, test_files, label_key, num_classes, limit_train, limit_test):
    def read_split(files, limit):
        xs, ys = [], []
        for name in files:
            x, y = _read_cifar_file(os.path.join(path, name), label_key)
            xs.append(x)
            ys.append(y)
        images = np.concatenate(xs, axis=0)
        labels = np.concatenate(ys, axis=0)
        if limit is not None:
            images, labels = images[:limit], labels[:limit]
        return LabeledBatch(images, labels, num_classes)

    return read_split(train_files, limit_train), read_split(test_files, limit_test)


def load_standard_dataset(path, name, limit_train=None, limit_test=None):
    """Load a small-image dataset from its canonical binary layout.

    Pixels are rescaled to [0, 1]; no foreground masks. `limit_*` truncates to
    the first N examples in canonical file order.
    """
    name = str(name).lower()
    if name == "cifar10":
        return _load_cifar(path, _CIFAR10_TRAIN_FILES, _CIFAR10_TEST_FILES, b"labels", 10,
                           limit_train, limit_test)
    if name == "cifar100":
        return _load_cifar(path, ["train"], ["test"], b"fine_labels", 100,
                           limit_train, limit_test)
    raise ConfigurationError(f"dataset.name: unknown dataset identifier {name!r}")


# ---------------------------------------------------------------------------
# Export / import of generated datasets
# ---------------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def export_dataset(train: LabeledBatch, test: LabeledBatch, out_dir, spec=None):
    """Write both splits as .npy arrays plus a JSON manifest with checksums."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"schema_version": _EXPORT_SCHEMA_VERSION, "num_classes": train.num_classes,
                "spec": spec, "splits": {}}
    for split, batch in (("train", train), ("test", test)):
        files = {"images": f"{split}_images.npy", "labels": f"{split}_labels.npy"}
        np.save(os.path.join(out_dir, files["images"]), batch.images.numpy())
        np.save(os.path.join(out_dir, files["labels"]), batch.labels.numpy())
        if batch.fg_masks is not None:
            files["fg_masks"] = f"{split}_fg_masks.npy"
            np.save(os.path.join(out_dir, files["fg_masks"]),
                    batch.fg_masks.numpy().astype(np.uint8))
        manifest["splits"][split] = {
            "files": files,
            "num_examples": len(batch),
            "sha256": {k: _sha256(os.path.join(out_dir, v)) for k, v in files.items()},
        }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return os.path.join(out_dir, "manifest.json")


def import_dataset(in_dir):
    """Load a dataset exported by export_dataset, verifying checksums."""
    manifest_path = os.path.join(in_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise IngestionError(f"missing dataset file: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != _EXPORT_SCHEMA_VERSION:
        raise IngestionError(
            f"unsupported dataset schema_version {manifest.get('schema_version')!r} in {manifest_path}"
        )
    out = {}
    for split, entry in manifest["splits"].items():
        arrays = {}
        for kind, fname in entry["files"].items():
            fpath = os.path.join(in_dir, fname)
            if not os.path.exists(fpath):
                raise IngestionError(f"missing dataset file: {fpath}")
            if _sha256(fpath) != entry["sha256"][kind]:
                raise IngestionError(f"checksum mismatch for dataset file: {fpath}")
            arrays[kind] = np.load(fpath)
        masks = arrays.get("fg_masks")
        out[split] = LabeledBatch(
            arrays["images"], arrays["labels"], manifest["num_classes"],
            masks.astype(np.float32) if masks is not None else None,
        )
    return out["train"], out["test"]
