"""
Loss terms for the disentangled sequence VAE.

total = recon + kl_weight * kl
        + lambda_dis * (task + sens + cov + adv_sens + adv_task)
        + lambda_causal * causal
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import torch
import torch.nn.functional as F

from config import ModelConfig
from errors import CovarianceError
from model import PAD_ID, HeadOutputs, ModelOutputs

logger = logging.getLogger(__name__)

VARIANCE_GUARD = 1e-8
DIS_TERMS = ('task', 'sens', 'cov', 'adv_sens', 'adv_task')


def vae_loss(distributions: torch.Tensor, target_ids: torch.Tensor, mu: torch.Tensor,
             logvar: torch.Tensor, log_space: bool = False) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    (recon, kl). recon sums the per-token negative log likelihood over non-PAD
    targets and averages over the batch; kl is the closed-form divergence from
    the standard normal prior, averaged over the batch.

    distributions holds probabilities, or log-probabilities when log_space=True.
    """
    if log_space:
        log_probs = distributions
    else:
        tiny = torch.finfo(distributions.dtype).tiny
        log_probs = torch.log(distributions.clamp_min(tiny))
    nll = -log_probs.gather(-1, target_ids.unsqueeze(-1)).squeeze(-1)
    mask = (target_ids != PAD_ID).to(nll.dtype)
    recon = (nll * mask).sum(dim=-1).mean()
    kl = (-0.5 * (1.0 + logvar - mu.pow(2) - logvar.exp()).sum(dim=-1)).mean()
    return recon, kl


def _entropy(target: torch.Tensor) -> torch.Tensor:
    return -(torch.xlogy(target, target) + torch.xlogy(1.0 - target, 1.0 - target))


def soft_bce(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy against soft labels minus the label entropy (0 at a perfect fit)."""
    target = target.to(logits.dtype)
    bce = F.binary_cross_entropy_with_logits(logits, target, reduction='none')
    return (bce - _entropy(target)).mean()


def covariance_loss(z_u: torch.Tensor, z_p: torch.Tensor) -> torch.Tensor:
    """Mean |entry| of the batch cross-covariance between z_u and z_p."""
    if z_u.shape[0] < 2:
        raise CovarianceError(f"Covariance needs a batch of at least 2, got {z_u.shape[0]}")
    zu = z_u - z_u.mean(dim=0, keepdim=True)
    zp = z_p - z_p.mean(dim=0, keepdim=True)
    cross = zu.transpose(0, 1) @ zp / z_u.shape[0]
    return cross.abs().mean()


@dataclass
class DisentanglementTerms:
    task: torch.Tensor
    sens: torch.Tensor
    cov: torch.Tensor
    adv_sens: torch.Tensor
    adv_task: torch.Tensor


def disentanglement_loss(heads: HeadOutputs, u: torch.Tensor, p: torch.Tensor,
                         z_u: torch.Tensor, z_p: torch.Tensor) -> DisentanglementTerms:
    """
    The adversarial terms are negated BCEs. Gradient reversal on the adversary
    weights makes the adversaries minimize BCE while the encoder maximizes it.
    """
    if z_u.shape[0] < 2:
        raise CovarianceError(f"Disentanglement loss needs a batch of at least 2, got {z_u.shape[0]}")
    return DisentanglementTerms(
        task=soft_bce(heads.u_logit, u),
        sens=soft_bce(heads.p_logit, p),
        cov=covariance_loss(z_u, z_p),
        adv_sens=-soft_bce(heads.p_adv_logit, p),
        adv_task=-soft_bce(heads.u_adv_logit, u),
    )


def causal_loss(p: torch.Tensor, z_u: torch.Tensor) -> torch.Tensor:
    """
    l2 norm of the least-squares coefficient of batch-centered z_u on
    batch-centered p; 0 when p has (almost) no variance.
    """
    p = p.reshape(-1).to(z_u.dtype)
    pc = p - p.mean()
    zc = z_u - z_u.mean(dim=0, keepdim=True)
    denom = pc @ pc
    if float(denom) < VARIANCE_GUARD:
        return (z_u * 0.0).sum()
    beta = (pc @ zc) / denom
    return torch.sqrt(beta.pow(2).sum() + 1e-12)


@dataclass
class LossBreakdown:
    recon: torch.Tensor
    kl: torch.Tensor
    task: torch.Tensor
    sens: torch.Tensor
    cov: torch.Tensor
    adv_sens: torch.Tensor
    adv_task: torch.Tensor
    causal: torch.Tensor
    total: torch.Tensor
    kl_weight: float
    lambda_dis: float
    lambda_causal: float
    active: Dict[str, bool] = field(default_factory=dict)

    def reconstruct_total(self) -> float:
        """Total recomputed from the logged parts."""
        value = float(self.recon) + self.kl_weight * float(self.kl)
        value += self.lambda_dis * sum(float(getattr(self, name)) for name in DIS_TERMS
                                       if self.active.get(name, True))
        if self.active.get('causal', True):
            value += self.lambda_causal * float(self.causal)
        return value

    def to_dict(self) -> Dict[str, float]:
        names = ('recon', 'kl') + DIS_TERMS + ('causal', 'total')
        out = {name: float(getattr(self, name)) for name in names}
        out['kl_weight'] = self.kl_weight
        return out


def active_terms(cfg: ModelConfig) -> Dict[str, bool]:
    return {
        'task': cfg.use_disentangle,
        'sens': cfg.use_disentangle,
        'cov': cfg.use_disentangle,
        'adv_sens': cfg.use_adversarial,
        'adv_task': cfg.use_adversarial,
        'causal': cfg.use_causal,
    }


def compute_losses(outputs: ModelOutputs, target_ids: torch.Tensor, u: torch.Tensor,
                   p: torch.Tensor, cfg: ModelConfig, kl_weight: float) -> LossBreakdown:
    """Every term for one batch; switched-off terms are logged with weight 0."""
    log_probs = F.log_softmax(outputs.decoded.logits, dim=-1)
    recon, kl = vae_loss(log_probs, target_ids[:, 1:], outputs.code.mu, outputs.code.logvar, log_space=True)
    code = outputs.code
    dis = disentanglement_loss(outputs.heads, u, p, code.z_u, code.z_p)
    causal = causal_loss(p, code.z_u)

    active = active_terms(cfg)
    total = recon + kl_weight * kl
    for name in DIS_TERMS:
        if active[name]:
            total = total + cfg.lambda_dis * getattr(dis, name)
    if active['causal']:
        total = total + cfg.lambda_causal * causal

    return LossBreakdown(
        recon=recon, kl=kl,
        task=dis.task, sens=dis.sens, cov=dis.cov,
        adv_sens=dis.adv_sens, adv_task=dis.adv_task,
        causal=causal, total=total,
        kl_weight=kl_weight, lambda_dis=cfg.lambda_dis, lambda_causal=cfg.lambda_causal,
        active=active,
    )
