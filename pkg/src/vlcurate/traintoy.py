"""Desk-scale contrastive trainer on synthetic paired data.

Generates planted-alignment Gaussian pairs (two noisy views of a shared
concept prototype, optionally with duplicated samples standing in for false
negatives), trains two linear encoders with the alignment objective, the
learnable inverse temperature, and optionally the concept classifier term,
and reports loss curves plus retrieval recall on a held-out split.

Everything is seeded and single-threaded per step, so a fixed configuration
reproduces its outputs byte for byte.  The point is to exercise estimator
properties at desk scale, not to reproduce any benchmark number.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import hnnce
from .conceptlab import PseudoLabel


@dataclass(frozen=True)
class SyntheticPairSpec:
    n_concepts: int = 8
    dim: int = 16  # raw view dimensionality
    noise: float = 0.4  # view noise scale
    alignment: float = 1.0  # planted alignment strength
    duplicate_rate: float = 0.0  # fraction of samples that copy an earlier latent

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.n_concepts < 2:
            raise ValueError("need at least 2 concepts")
        if not 0.0 <= self.duplicate_rate <= 1.0:
            raise ValueError("duplicate_rate must lie in [0, 1]")
        if self.noise < 0 or self.alignment < 0:
            raise ValueError("noise and alignment must be nonnegative")


def generate_pairs(spec: SyntheticPairSpec, n: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (image views, text views, concept ids), each with n rows.

    Every sample owns a unit latent drawn around its concept prototype,
    and both views are noisy renderings of that latent, so the correct
    pair is identifiable in retrieval.  A duplicated sample reuses the
    latent (not just the concept) of an earlier sample: its text is a
    false negative for the earlier image and vice versa.
    """
    prototypes = rng.standard_normal((spec.n_concepts, spec.dim))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    concepts = rng.integers(0, spec.n_concepts, size=n)
    latents = prototypes[concepts] + rng.standard_normal((n, spec.dim))
    latents /= np.linalg.norm(latents, axis=1, keepdims=True)
    for i in range(1, n):
        if rng.random() < spec.duplicate_rate:
            source = rng.integers(0, i)
            concepts[i] = concepts[source]
            latents[i] = latents[source]
    u = spec.alignment * latents + spec.noise * rng.standard_normal((n, spec.dim))
    v = spec.alignment * latents + spec.noise * rng.standard_normal((n, spec.dim))
    return u, v, concepts


@dataclass(frozen=True)
class ToyTrainConfig:
    spec: SyntheticPairSpec = field(default_factory=SyntheticPairSpec)
    n_train: int = 64
    n_eval: int = 64
    embed_dim: int = 8
    steps: int = 200
    lr: float = 0.02
    tau_lr_scale: float = 0.01  # temperature moves on a much steeper axis
    loss: str = "hn"  # "hn" or "info"
    alpha: float = 1.0
    beta: float = 0.0
    with_concepts: bool = False  # add the concept classifier term
    train_tau: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.loss not in ("hn", "info"):
            raise ValueError("loss must be 'hn' or 'info'")
        if self.lr <= 0 or self.steps < 1:
            raise ValueError("lr must be positive and steps >= 1")
        hnnce.HnConfig(alpha=self.alpha, beta=self.beta)  # range check


@dataclass
class ToyRunResult:
    losses: list[float]
    inv_taus: list[float]
    r1_i2t: float
    r1_t2i: float
    final_loss: float


def _row_normalize(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / norms, norms


def _norm_backprop(grad_unit: np.ndarray, unit: np.ndarray,
                   norms: np.ndarray) -> np.ndarray:
    # d/dm of m/||m||: remove the radial component, shrink by the norm
    radial = (grad_unit * unit).sum(axis=1, keepdims=True)
    return (grad_unit - radial * unit) / norms


def train_toy(config: ToyTrainConfig) -> ToyRunResult:
    """Train the linear dual encoder; see module docstring for the setup."""
    rng = np.random.default_rng(config.seed)
    spec = config.spec
    u_train, v_train, c_train = generate_pairs(spec, config.n_train, rng)
    u_eval, v_eval, _ = generate_pairs(spec, config.n_eval, rng)

    scale = 1.0 / math.sqrt(spec.dim)
    w_img = scale * rng.standard_normal((spec.dim, config.embed_dim))
    w_txt = scale * rng.standard_normal((spec.dim, config.embed_dim))
    w_cls = scale * rng.standard_normal((config.embed_dim, spec.n_concepts))
    log_scale = math.log(1.0 / hnnce.INIT_TAU)  # learnable inverse temperature
    labels = [PseudoLabel(entries=((int(c), 1.0),)) for c in c_train]

    losses: list[float] = []
    inv_taus: list[float] = []
    for _ in range(config.steps):
        scale = min(math.exp(log_scale), hnnce.MAX_INV_TAU)
        tau = 1.0 / scale
        x_raw = u_train @ w_img
        t_raw = v_train @ w_txt
        x_unit, x_norms = _row_normalize(x_raw)
        t_unit, t_norms = _row_normalize(t_raw)
        batch = hnnce.EmbeddingBatch(image=x_unit, text=t_unit, tau=tau)

        if config.with_concepts:
            obj_logits = x_unit @ w_cls
            result = hnnce.total_objective(
                batch, hnnce.HnConfig(config.alpha, config.beta),
                obj_logits=obj_logits, obj_labels=labels)
            grad_x_unit = result.grad_image + result.grad_obj_logits @ w_cls.T
            grad_cls = x_unit.T @ result.grad_obj_logits
        elif config.loss == "info":
            result = hnnce.info_nce_loss(batch)
            grad_x_unit, grad_cls = result.grad_image, None
        else:
            result = hnnce.hn_nce_loss(
                batch, hnnce.HnConfig(config.alpha, config.beta))
            grad_x_unit, grad_cls = result.grad_image, None

        losses.append(result.loss)
        inv_taus.append(1.0 / tau)

        grad_w_img = u_train.T @ _norm_backprop(grad_x_unit, x_unit, x_norms)
        grad_w_txt = v_train.T @ _norm_backprop(result.grad_text, t_unit, t_norms)
        w_img -= config.lr * grad_w_img
        w_txt -= config.lr * grad_w_txt
        if grad_cls is not None:
            w_cls -= config.lr * grad_cls
        if config.train_tau:
            # tau = exp(-theta) with theta = log inverse temperature
            log_scale -= config.lr * config.tau_lr_scale * (-tau * result.grad_tau)
            log_scale = min(log_scale, math.log(hnnce.MAX_INV_TAU))

    # held-out retrieval with the final encoders
    x_eval, _ = _row_normalize(u_eval @ w_img)
    t_eval, _ = _row_normalize(v_eval @ w_txt)
    sims = x_eval @ t_eval.T
    hits_i2t = (sims.argmax(axis=1) == np.arange(config.n_eval)).mean()
    hits_t2i = (sims.argmax(axis=0) == np.arange(config.n_eval)).mean()
    return ToyRunResult(losses=losses, inv_taus=inv_taus,
                        r1_i2t=float(hits_i2t), r1_t2i=float(hits_t2i),
                        final_loss=losses[-1])
