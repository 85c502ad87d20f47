"""Contrastive alignment objectives with hard-negative reweighting.

For a batch of n unit-normalized image/text embedding pairs and temperature
tau, the similarity matrix is S_ij = x_i . t_j / tau.  The hard-negative
objective damps the positive term by alpha and reweights each negative by an
unnormalized von Mises-Fisher factor with concentration beta:

    w[i][j] = (n - 1) * exp(beta * S_ij) / sum_{k != i} exp(beta * S_ik)

so each row of weights sums to n - 1 over the negatives.  With alpha = 1 and
beta = 0 the objective reduces exactly to symmetric InfoNCE.

Gradients are computed analytically.  By default the weights are treated as
constants of the current batch (importance weights, not learned functions);
``HnConfig.grad_through_weights`` switches on the full derivative for
ablations.  All reductions use max-subtracted log-sum-exp so that similarity
magnitudes up to the inverse-temperature clamp (100.0) and beta up to 50
stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# learnable inverse temperature: init 1/0.07, clamped at 100.0
INIT_TAU = 0.07
MAX_INV_TAU = 100.0
MIN_TAU = 1.0 / MAX_INV_TAU

ROW_NORM_TOL = 1e-6

# (alpha, beta) presets: large noisy corpora vs small clean corpora
PRESET_LARGE_NOISY = (1.0, 0.25)
PRESET_SMALL_CLEAN = (0.999, 0.5)


@dataclass(frozen=True)
class EmbeddingBatch:
    image: np.ndarray  # (n, d), unit rows
    text: np.ndarray  # (n, d), unit rows
    tau: float

    def __post_init__(self):
        x, t = np.asarray(self.image, float), np.asarray(self.text, float)
        object.__setattr__(self, "image", x)
        object.__setattr__(self, "text", t)
        if x.ndim != 2 or x.shape != t.shape:
            raise ValueError("image and text must be matrices of equal shape")
        if x.shape[0] < 2:
            raise ValueError("a batch needs at least 2 pairs (no negatives otherwise)")
        if not (np.isfinite(self.tau) and self.tau >= MIN_TAU):
            raise ValueError(
                f"tau must be >= {MIN_TAU} so similarity scaling stays <= {MAX_INV_TAU}")
        for name, m in (("image", x), ("text", t)):
            norms = np.linalg.norm(m, axis=1)
            if np.abs(norms - 1.0).max() > ROW_NORM_TOL:
                raise ValueError(f"{name} rows must be unit-normalized")

    @property
    def n(self) -> int:
        return self.image.shape[0]


@dataclass(frozen=True)
class HnConfig:
    alpha: float = 1.0
    beta: float = 0.0
    grad_through_weights: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")


@dataclass(frozen=True)
class LossResult:
    loss: float
    grad_image: np.ndarray
    grad_text: np.ndarray
    grad_tau: float


def similarity_matrix(batch: EmbeddingBatch) -> np.ndarray:
    return batch.image @ batch.text.T / batch.tau


def hn_weights(similarities: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Hard-negative weights for both alignment directions.

    Returns (w_i2t, w_t2i) with the convention that row i holds the
    weights of pair i's negatives: w_i2t[i][j] normalizes exp(beta*S_ij)
    over j != i, and w_t2i[i][j] normalizes exp(beta*S_ji) over the
    column k != i.  Diagonals are 0 (positives are never reweighted) and
    every row sums to n - 1 over the negatives.
    """
    s = np.asarray(similarities, float)
    n = s.shape[0]
    if s.shape != (n, n) or n < 2:
        raise ValueError("similarity matrix must be square with n >= 2")
    masked = beta * s
    idx = np.arange(n)
    masked = masked.copy()
    masked[idx, idx] = -np.inf

    row_max = masked.max(axis=1, keepdims=True)
    row_exp = np.exp(masked - row_max)
    w_i2t = (n - 1) * row_exp / row_exp.sum(axis=1, keepdims=True)

    col_max = masked.max(axis=0, keepdims=True)
    col_exp = np.exp(masked - col_max)
    w_t2i = ((n - 1) * col_exp / col_exp.sum(axis=0, keepdims=True)).T
    return w_i2t, w_t2i


def _denominators(s: np.ndarray, alpha: float,
                  weights: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stable log-denominators for both directions.

    log_d[i] = log( alpha*e^{S_ii} + sum_{j!=i} e^{S_ij} * w_i2t[i][j] )
    log_e[i] = log( alpha*e^{S_ii} + sum_{j!=i} e^{S_ji} * w_t2i[i][j] )
    """
    w_i2t, w_t2i = weights
    n = s.shape[0]
    idx = np.arange(n)

    coef_row = w_i2t.copy()
    coef_row[idx, idx] = alpha
    m_row = s.max(axis=1, keepdims=True)
    log_d = (np.log((coef_row * np.exp(s - m_row)).sum(axis=1)) + m_row[:, 0])

    coef_col = w_t2i.T.copy()  # coef_col[j, i] weights e^{S_ji} in column i
    coef_col[idx, idx] = alpha
    m_col = s.max(axis=0, keepdims=True)
    log_e = (np.log((coef_col * np.exp(s - m_col)).sum(axis=0)) + m_col[0, :])
    return log_d, log_e


def _hn_forward_arrays(x: np.ndarray, t: np.ndarray, tau: float,
                       alpha: float, beta: float,
                       weights: tuple[np.ndarray, np.ndarray] | None = None) -> float:
    # unvalidated forward pass; finite-difference probes perturb rows off
    # the unit sphere, which the loss itself is perfectly defined for
    s = x @ t.T / tau
    if weights is None:
        weights = hn_weights(s, beta)
    log_d, log_e = _denominators(s, alpha, weights)
    diag = np.diag(s)
    return float((log_d - diag).sum() + (log_e - diag).sum())


def hn_nce_forward(batch: EmbeddingBatch, cfg: HnConfig,
                   weights: tuple[np.ndarray, np.ndarray] | None = None) -> float:
    """Loss value only; ``weights`` pins the hard-negative weights.

    Passing the weights computed at a reference point makes this the
    surrogate objective whose exact derivative is the default
    (stop-gradient) analytic gradient, which is what a finite-difference
    check must evaluate in that mode.
    """
    return _hn_forward_arrays(batch.image, batch.text, batch.tau,
                              cfg.alpha, cfg.beta, weights)


def hn_nce_loss(batch: EmbeddingBatch, cfg: HnConfig) -> LossResult:
    """Hard-negative contrastive loss with analytic gradients.

    Gradients are taken with respect to the image matrix, the text
    matrix, and tau.  The hard-negative weights are held constant unless
    ``cfg.grad_through_weights`` is set.
    """
    s = similarity_matrix(batch)
    n = batch.n
    idx = np.arange(n)
    w_i2t, w_t2i = hn_weights(s, cfg.beta)
    log_d, log_e = _denominators(s, cfg.alpha, (w_i2t, w_t2i))
    diag = np.diag(s)
    loss = float((log_d - diag).sum() + (log_e - diag).sum())

    # p_row[i, j] = coefficient_ij * e^{S_ij} / D_i, rows sum to 1
    coef_row = w_i2t.copy()
    coef_row[idx, idx] = cfg.alpha
    p_row = coef_row * np.exp(s - log_d[:, None])
    coef_col = w_t2i.T.copy()
    coef_col[idx, idx] = cfg.alpha
    p_col = coef_col * np.exp(s - log_e[None, :])

    if cfg.grad_through_weights:
        beta = cfg.beta
        off = 1.0 - np.eye(n)
        q_row = (p_row * off).sum(axis=1)  # sum of negative mass per row
        q_col = (p_col * off).sum(axis=0)
        g_row = (1.0 + beta) * p_row * off - beta * w_i2t * q_row[:, None] / (n - 1)
        g_col = (1.0 + beta) * p_col * off - beta * w_t2i.T * q_col[None, :] / (n - 1)
        g_row[idx, idx] = p_row[idx, idx]
        g_col[idx, idx] = p_col[idx, idx]
        g = g_row + g_col
    else:
        g = p_row + p_col
    g[idx, idx] -= 2.0

    grad_image = g @ batch.text / batch.tau
    grad_text = g.T @ batch.image / batch.tau
    grad_tau = float(-(g * s).sum() / batch.tau)
    return LossResult(loss, grad_image, grad_text, grad_tau)


def info_nce_loss(batch: EmbeddingBatch) -> LossResult:
    """Symmetric InfoNCE with the positive term in both denominators."""
    s = similarity_matrix(batch)
    n = batch.n
    idx = np.arange(n)
    m_row = s.max(axis=1, keepdims=True)
    log_row = np.log(np.exp(s - m_row).sum(axis=1)) + m_row[:, 0]
    m_col = s.max(axis=0, keepdims=True)
    log_col = np.log(np.exp(s - m_col).sum(axis=0)) + m_col[0, :]
    diag = np.diag(s)
    loss = float((log_row - diag).sum() + (log_col - diag).sum())

    p_row = np.exp(s - log_row[:, None])
    p_col = np.exp(s - log_col[None, :])
    g = p_row + p_col
    g[idx, idx] -= 2.0
    grad_image = g @ batch.text / batch.tau
    grad_text = g.T @ batch.image / batch.tau
    grad_tau = float(-(g * s).sum() / batch.tau)
    return LossResult(loss, grad_image, grad_text, grad_tau)


@dataclass(frozen=True)
class TotalResult:
    loss: float
    grad_image: np.ndarray
    grad_text: np.ndarray
    grad_tau: float
    grad_obj_logits: np.ndarray | None
    grad_attr_logits: np.ndarray | None
    parts: dict = field(default_factory=dict)


def total_objective(batch: EmbeddingBatch, cfg: HnConfig,
                    obj_logits: np.ndarray | None = None,
                    obj_labels: Sequence | None = None,
                    attr_logits: np.ndarray | None = None,
                    attr_labels: Sequence | None = None) -> TotalResult:
    """Alignment loss plus the object/attribute classifier terms.

    The classifier terms are sums over the batch of the pseudo-label
    cross-entropy; either may be disabled by passing None.  Gradients are
    additive: alignment gradients flow to the embeddings and tau,
    classifier gradients to their logits.
    """
    from .conceptlab import ce_pseudo_loss

    align = hn_nce_loss(batch, cfg)
    parts = {"alignment": align.loss}
    total = align.loss

    def ce_block(logits, labels, name):
        nonlocal total
        if logits is None and labels is None:
            return None
        if logits is None or labels is None:
            raise ValueError(f"{name}: logits and labels must be given together")
        logits = np.asarray(logits, float)
        if logits.shape[0] != len(labels):
            raise ValueError(f"{name}: one label per batch row required")
        grad = np.zeros_like(logits)
        subtotal = 0.0
        for i, label in enumerate(labels):
            loss_i, grad_i = ce_pseudo_loss(logits[i], label)
            subtotal += loss_i
            grad[i] = grad_i
        parts[name] = subtotal
        total += subtotal
        return grad

    grad_obj = ce_block(obj_logits, obj_labels, "objects")
    grad_attr = ce_block(attr_logits, attr_labels, "attributes")
    return TotalResult(loss=total, grad_image=align.grad_image,
                       grad_text=align.grad_text, grad_tau=align.grad_tau,
                       grad_obj_logits=grad_obj, grad_attr_logits=grad_attr,
                       parts=parts)


def beta_concentration_probe(batch: EmbeddingBatch,
                             betas: Sequence[float]) -> list[tuple[float, float]]:
    """How much of the negative weight mass lands on the hardest negative.

    For each beta, returns the worst-case (minimum over rows) fraction
    max_j w[i][j] / (n - 1) of the image-to-text weights.  The fraction
    is 1/(n-1) at beta = 0 and approaches 1 as beta grows whenever every
    row has a strict hardest negative.
    """
    s = similarity_matrix(batch)
    n = batch.n
    out = []
    for beta in betas:
        w_i2t, _ = hn_weights(s, beta)
        fraction = float((w_i2t.max(axis=1) / (n - 1)).min())
        out.append((float(beta), fraction))
    return out


# ---------------------------------------------------------------------------
# Batch constructors used by demos, fixtures, and the CLI


def random_batch(n: int, d: int, tau: float,
                 rng: np.random.Generator) -> EmbeddingBatch:
    """Random unit-row batch; pairs are unrelated (pure noise alignment)."""
    x = rng.standard_normal((n, d))
    t = rng.standard_normal((n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    return EmbeddingBatch(image=x, text=t, tau=tau)


def margin_batch(n: int = 4, margin: float = 0.1, tau: float = 1.0,
                 lowest: float = 0.05) -> EmbeddingBatch:
    """Batch whose rows have strictly staircased negative similarities.

    Row i's negatives take the cosine values lowest, lowest+margin, ...,
    assigned cyclically, so each row has a unique hardest negative with a
    gap of exactly ``margin`` (in cosine units) to the runner-up.  Built
    exactly: images are basis vectors and each text vector reproduces one
    prescribed cosine column, padded to unit norm on a private axis.
    """
    if n < 3:
        raise ValueError("need n >= 3 for a meaningful staircase")
    cos = np.zeros((n, n))
    top = lowest + margin * (n - 2)
    for i in range(n):
        for rank, j in enumerate((i + 1 + np.arange(n - 1)) % n):
            cos[i, j] = top - margin * rank
    np.fill_diagonal(cos, top + margin)
    col_sq = (cos ** 2).sum(axis=0)
    if col_sq.max() > 1.0:
        raise ValueError("cosine columns exceed unit norm; lower the staircase")
    d = 2 * n
    image = np.zeros((n, d))
    image[:, :n] = np.eye(n)
    text = np.zeros((n, d))
    text[:, :n] = cos.T
    text[np.arange(n), n + np.arange(n)] = np.sqrt(1.0 - col_sq)
    return EmbeddingBatch(image=image, text=text, tau=tau)
