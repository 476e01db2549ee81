"""Training objectives: debiased logit construction, the two regularizers,
and the combined objective plus baseline variants.

KL terms are computed from log-softmax throughout; the alignment target
distribution is always gradient-blocked, distillation style.
"""

from dataclasses import dataclass, field
from typing import Optional

import torch
import torch.nn.functional as F

from .attention import check_omega
from .errors import ConfigurationError, ContractError
from .validation import check_logits, check_same_shape


@dataclass
class LogitBundle:
    """The four logit views of a batch under the debiasing pipeline.

    z_debiased is z_inv - z_bg by construction. Baselines that never touch
    background logits leave z_bg / z_debiased unset.
    """

    z_adv: torch.Tensor
    z_inv: torch.Tensor
    z_bg: Optional[torch.Tensor] = None
    z_debiased: Optional[torch.Tensor] = None

    @classmethod
    def from_parts(cls, z_adv, z_inv, z_bg=None):
        check_logits(z_adv, "z_adv")
        check_logits(z_inv, "z_inv")
        check_same_shape(z_adv, z_inv, "z_adv", "z_inv")
        z_deb = None
        if z_bg is not None:
            check_logits(z_bg, "z_bg")
            check_same_shape(z_inv, z_bg, "z_inv", "z_bg")
            z_deb = debias_logits(z_inv, z_bg)
        return cls(z_adv=z_adv, z_inv=z_inv, z_bg=z_bg, z_debiased=z_deb)

    def validate(self):
        check_logits(self.z_adv, "z_adv")
        check_logits(self.z_inv, "z_inv")
        if (self.z_bg is None) != (self.z_debiased is None):
            raise ContractError("z_bg and z_debiased must be set together")
        if self.z_bg is not None:
            check_logits(self.z_bg, "z_bg")
            check_logits(self.z_debiased, "z_debiased")
            if not torch.equal(self.z_debiased, self.z_inv - self.z_bg):
                raise ContractError("bundle invariant violated: z_debiased != z_inv - z_bg")
        return self


@dataclass
class LossWeights:
    """Weights and switches of the combined objective."""

    lambda1: float = 1.0
    lambda2: float = 1.0
    omega: float = 0.35
    p_norm: float = 2.0
    eps_num: float = 1e-12

    def validate(self):
        if self.lambda1 < 0:
            raise ConfigurationError(f"lambda1: must be >= 0, got {self.lambda1}")
        if self.lambda2 < 0:
            raise ConfigurationError(f"lambda2: must be >= 0, got {self.lambda2}")
        check_omega(self.omega)
        if self.p_norm < 1:
            raise ConfigurationError(f"p_norm: must be >= 1, got {self.p_norm}")
        if self.eps_num <= 0:
            raise ConfigurationError(f"eps_num: must be > 0, got {self.eps_num}")
        return self


def debias_logits(z_inv, z_bg):
    """Remove the background contribution from high-confidence logits."""
    check_logits(z_inv, "z_inv")
    check_logits(z_bg, "z_bg")
    check_same_shape(z_inv, z_bg, "z_inv", "z_bg")
    return z_inv - z_bg


def _kl_alignment(target_logits, pred_logits):
    # KL(softmax(target) || softmax(pred)) with the target gradient-blocked
    log_p = F.log_softmax(target_logits.detach(), dim=1)
    log_q = F.log_softmax(pred_logits, dim=1)
    return (log_p.exp() * (log_p - log_q)).sum(dim=1).mean()


def dhlr_loss(z_debiased, z_adv):
    """Align adversarial logits with the debiased high-confidence targets.

    Batch mean of KL(softmax(z_debiased) || softmax(z_adv)); the target
    distribution is gradient-blocked.
    """
    check_logits(z_debiased, "z_debiased")
    check_logits(z_adv, "z_adv")
    check_same_shape(z_debiased, z_adv, "z_debiased", "z_adv")
    return _kl_alignment(z_debiased, z_adv)


def floe_loss(z_inv, z_bg, p=2.0, eps_num=1e-12):
    """Penalize the part of the high-confidence logits explained by background.

    Per example, subtract the projection of z_inv onto z_bg and take the
    p-norm of the residual; the batch mean is returned. A zero background
    vector leaves the residual equal to z_inv.
    """
    check_logits(z_inv, "z_inv")
    check_logits(z_bg, "z_bg")
    check_same_shape(z_inv, z_bg, "z_inv", "z_bg")
    if p < 1:
        raise ConfigurationError(f"p_norm: must be >= 1, got {p}")
    if eps_num <= 0:
        raise ConfigurationError(f"eps_num: must be > 0, got {eps_num}")
    inner = (z_inv * z_bg).sum(dim=1, keepdim=True)
    sq_norm = (z_bg * z_bg).sum(dim=1, keepdim=True)
    residual = z_inv - (inner / (sq_norm + eps_num)) * z_bg
    per_example = residual.abs().pow(p).sum(dim=1).pow(1.0 / p)
    return per_example.mean()


def dhat_objective_terms(bundle: LogitBundle, labels, weights: LossWeights):
    """Combined objective split into (total, ce, dhlr, floe) scalars."""
    bundle.validate()
    weights.validate()
    if bundle.z_bg is None:
        raise ContractError("combined objective needs background logits in the bundle")
    ce = F.cross_entropy(bundle.z_adv, labels)
    dhlr = dhlr_loss(bundle.z_debiased, bundle.z_adv)
    floe = floe_loss(bundle.z_inv, bundle.z_bg, p=weights.p_norm, eps_num=weights.eps_num)
    total = ce + weights.lambda1 * dhlr + weights.lambda2 * floe
    return total, ce, dhlr, floe


def dhat_objective(bundle: LogitBundle, labels, weights: LossWeights):
    """Adversarial cross-entropy plus the two debiasing regularizers."""
    total, _, _, _ = dhat_objective_terms(bundle, labels, weights)
    return total


def uiat_style_objective_terms(z_adv, z_inv, labels, align_weight=1.0):
    """Baseline: CE on adversarial logits plus KL alignment to the raw
    high-confidence logits (no debiasing). Returns (total, ce, kl)."""
    check_logits(z_adv, "z_adv")
    check_logits(z_inv, "z_inv")
    check_same_shape(z_adv, z_inv, "z_adv", "z_inv")
    if align_weight < 0:
        raise ConfigurationError(f"align_weight: must be >= 0, got {align_weight}")
    ce = F.cross_entropy(z_adv, labels)
    kl = _kl_alignment(z_inv, z_adv)
    return ce + align_weight * kl, ce, kl


def uiat_style_objective(z_adv, z_inv, labels, align_weight=1.0):
    total, _, _ = uiat_style_objective_terms(z_adv, z_inv, labels, align_weight)
    return total
