"""Sign-gradient attacks under an l-infinity budget.

Covers single-step FGSM, iterated PGD, and the inverse (loss-descending)
variant that produces high-confidence examples. All outputs are projected
to the epsilon ball around the original image and clamped to valid pixel
range, so constraint satisfaction holds by construction.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ContractError
from .models import forward_logits
from .validation import check_logits, check_same_batch

ADVERSARIAL = "adversarial"
INVERSE = "inverse"
_LOSS_KINDS = ("cross-entropy", "cw-margin")


def parse_pixel_value(value, field="epsilon"):
    """Parse an attack magnitude given as a float or a "k/255" string.

    The string form is evaluated as numerator/255 exactly, avoiding float
    drift from hand-rounded decimal configs.
    """
    if isinstance(value, str):
        parts = value.split("/")
        try:
            if len(parts) == 2:
                return float(int(parts[0])) / float(int(parts[1]))
            return float(value)
        except ValueError:
            raise ConfigurationError(f"{field}: cannot parse {value!r} (use a float or 'k/255')")
    if isinstance(value, (int, float)):
        return float(value)
    raise ConfigurationError(f"{field}: expected a number or 'k/255' string, got {type(value).__name__}")


@dataclass
class AttackConfig:
    """Parameters of a sign-gradient attack.

    step_size may be 0 (a degenerate attack that returns the input), and
    epsilon >= 0; nothing ties step_size to epsilon.
    """

    epsilon: float
    step_size: float
    iterations: int = 1
    norm: str = "linf"
    loss_kind: str = "cross-entropy"
    direction: str = ADVERSARIAL
    random_start: bool = False
    clamp: Tuple[float, float] = (0.0, 1.0)

    def validate(self):
        if self.epsilon < 0:
            raise ConfigurationError(f"epsilon: must be >= 0, got {self.epsilon}")
        if self.step_size < 0:
            raise ConfigurationError(f"step_size: must be >= 0, got {self.step_size}")
        if not isinstance(self.iterations, int) or self.iterations < 1:
            raise ConfigurationError(f"iterations: must be an integer >= 1, got {self.iterations!r}")
        if self.norm != "linf":
            raise ConfigurationError(f"norm: only 'linf' is supported, got {self.norm!r}")
        if self.loss_kind not in _LOSS_KINDS:
            raise ConfigurationError(f"loss_kind: must be one of {_LOSS_KINDS}, got {self.loss_kind!r}")
        if self.direction not in (ADVERSARIAL, INVERSE):
            raise ConfigurationError(f"direction: must be 'adversarial' or 'inverse', got {self.direction!r}")
        lo, hi = self.clamp
        if not lo < hi:
            raise ConfigurationError(f"clamp: lower bound must be below upper, got {self.clamp}")
        return self

    @classmethod
    def from_dict(cls, raw, field="attack"):
        raw = dict(raw)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"{field}: unknown keys {sorted(unknown)}")
        for key in ("epsilon", "step_size"):
            if key in raw:
                raw[key] = parse_pixel_value(raw[key], field=f"{field}.{key}")
        if "clamp" in raw:
            raw["clamp"] = tuple(raw["clamp"])
        return cls(**raw).validate()


def classification_margin(logits, labels):
    """Per-example true-class margin: z_true - max over other classes."""
    check_logits(logits)
    check_same_batch(logits, labels, names=["logits", "labels"])
    true = logits.gather(1, labels.view(-1, 1)).squeeze(1)
    masked = logits.scatter(1, labels.view(-1, 1), float("-inf"))
    other = masked.max(dim=1).values
    return true - other


def cw_margin_loss(logits, labels, kappa=0.0):
    """Margin surrogate used for CW-style attacks, as a per-example loss.

    Returns -max(margin, -kappa); an attacker that ascends this loss drives
    the true-class margin down until it reaches -kappa.
    """
    margin = classification_margin(logits, labels)
    return -torch.clamp(margin, min=-kappa)


def _attack_objective(logits, labels, loss_kind):
    if loss_kind == "cross-entropy":
        return F.cross_entropy(logits, labels)
    return cw_margin_loss(logits, labels).mean()


def run_attack(model, images, labels, cfg: AttackConfig, generator: Optional[torch.Generator] = None):
    """Tensor-level attack loop shared by fgsm/pgd/inverse_pgd.

    Ascends the attack objective for direction='adversarial' and descends it
    for direction='inverse'. sign(0) = 0, so dead pixels never move.
    """
    cfg.validate()
    check_same_batch(images, labels, names=["images", "labels"])
    sign = 1.0 if cfg.direction == ADVERSARIAL else -1.0
    lo, hi = cfg.clamp
    x0 = images.detach()
    x = x0.clone()

    if cfg.random_start:
        noise = torch.empty_like(x0)
        if generator is None:
            noise.uniform_(-cfg.epsilon, cfg.epsilon)
        else:
            # uniform_ has no generator arg on all backends; rand does
            noise = (torch.rand(x0.shape, generator=generator, dtype=x0.dtype,
                                device=x0.device) * 2.0 - 1.0) * cfg.epsilon
        x = torch.clamp(x0 + noise, lo, hi)

    was_training = model.training
    model.eval()
    try:
        for _ in range(cfg.iterations):
            x = x.detach().requires_grad_(True)
            with torch.enable_grad():
                loss = _attack_objective(forward_logits(model, x), labels, cfg.loss_kind)
            grad = torch.autograd.grad(loss, x)[0]
            x = x.detach() + sign * cfg.step_size * torch.sign(grad)
            delta = torch.clamp(x - x0, -cfg.epsilon, cfg.epsilon)
            x = torch.clamp(x0 + delta, lo, hi)
    finally:
        model.train(was_training)
    return x.detach()


def fgsm(model, batch, cfg: AttackConfig):
    """Single ascent step of size step_size along the loss-gradient sign.

    No epsilon projection is applied: the max perturbation is step_size itself.
    """
    cfg.validate()
    if cfg.iterations != 1:
        raise ContractError(f"fgsm requires iterations=1, got {cfg.iterations}")
    if cfg.direction != ADVERSARIAL:
        raise ContractError("fgsm requires direction='adversarial'")
    if cfg.random_start:
        raise ContractError("fgsm does not take a random start")
    # a single step of size eta never leaves the eta ball, so projection is a no-op
    eff = AttackConfig(epsilon=cfg.step_size, step_size=cfg.step_size,
                       iterations=1, loss_kind=cfg.loss_kind, direction=ADVERSARIAL,
                       random_start=False, clamp=cfg.clamp)
    return run_attack(model, batch.images, batch.labels, eff)


def pgd(model, batch, cfg: AttackConfig, generator: Optional[torch.Generator] = None):
    """Iterated projected sign-gradient ascent within the epsilon ball."""
    cfg.validate()
    if cfg.direction != ADVERSARIAL:
        raise ContractError("pgd requires direction='adversarial'; use inverse_pgd to descend")
    return run_attack(model, batch.images, batch.labels, cfg, generator)


def inverse_pgd(model, batch, cfg: AttackConfig, generator: Optional[torch.Generator] = None):
    """Projected sign-gradient descent: high-confidence (inverse) examples."""
    cfg.validate()
    if cfg.direction != INVERSE:
        raise ContractError("inverse_pgd requires direction='inverse'")
    return run_attack(model, batch.images, batch.labels, cfg, generator)
