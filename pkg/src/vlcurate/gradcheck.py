"""Finite-difference verification of the analytic gradients.

Central differences with a fixed step are compared elementwise against the
analytic gradients of the alignment losses (wrt the image matrix, the text
matrix, and tau) and of the pseudo-label cross-entropy.

Two weight-handling modes are checked for the hard-negative loss.  In the
default stop-gradient mode the estimator differentiates the surrogate whose
hard-negative weights are constants of the batch, so the probe evaluates the
loss with the weights pinned at the unperturbed point.  In the
grad-through-weights mode the probe evaluates the plain loss, weights
recomputed at every perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import conceptlab, hnnce

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-5
# entries below the floor are compared absolutely at the floor scale, which
# keeps finite-difference roundoff (~1e-10 absolute here) from flagging
# structurally tiny gradient entries
ERROR_FLOOR = 1e-4

GRID_ALPHAS = (1.0, 0.999, 0.9)
GRID_BETAS = (0.0, 0.25, 0.5)


@dataclass(frozen=True)
class CheckRow:
    block: str
    max_rel_err: float
    passed: bool


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray,
                       step: float = DEFAULT_STEP) -> np.ndarray:
    """Elementwise central finite differences of a scalar function."""
    x = np.asarray(x, float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    base = x.copy().reshape(-1)
    for i in range(base.size):
        orig = base[i]
        base[i] = orig + step
        hi = f(base.reshape(x.shape))
        base[i] = orig - step
        lo = f(base.reshape(x.shape))
        base[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       floor: float = ERROR_FLOOR) -> float:
    a = np.asarray(analytic, float).reshape(-1)
    b = np.asarray(numeric, float).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def check_hn_cell(alpha: float, beta: float, n: int = 6, d: int = 8,
                  tau: float = 0.5, seed: int = 0, step: float = DEFAULT_STEP,
                  tolerance: float = DEFAULT_TOLERANCE) -> list[CheckRow]:
    """Both weight modes x three parameter blocks for one (alpha, beta)."""
    rng = np.random.default_rng(seed)
    batch = hnnce.random_batch(n, d, tau, rng)
    x0, t0 = batch.image, batch.text
    rows: list[CheckRow] = []

    for mode in ("stopgrad", "full"):
        cfg = hnnce.HnConfig(alpha=alpha, beta=beta,
                             grad_through_weights=(mode == "full"))
        result = hnnce.hn_nce_loss(batch, cfg)
        if mode == "stopgrad":
            frozen = hnnce.hn_weights(hnnce.similarity_matrix(batch), beta)
        else:
            frozen = None

        def forward_x(x):
            return hnnce._hn_forward_arrays(x, t0, tau, alpha, beta, frozen)

        def forward_t(t):
            return hnnce._hn_forward_arrays(x0, t, tau, alpha, beta, frozen)

        def forward_tau(v):
            return hnnce._hn_forward_arrays(x0, t0, float(v[0]), alpha, beta, frozen)

        checks = (
            ("image", result.grad_image, central_difference(forward_x, x0, step)),
            ("text", result.grad_text, central_difference(forward_t, t0, step)),
            ("tau", np.array([result.grad_tau]),
             central_difference(forward_tau, np.array([tau]), step)),
        )
        for name, analytic, numeric in checks:
            err = max_relative_error(analytic, numeric)
            rows.append(CheckRow(
                block=f"hn[alpha={alpha:g},beta={beta:g}]/{name}/{mode}",
                max_rel_err=err, passed=err < tolerance))
    return rows


def check_info_nce(n: int = 6, d: int = 8, tau: float = 0.5, seed: int = 0,
                   step: float = DEFAULT_STEP,
                   tolerance: float = DEFAULT_TOLERANCE) -> list[CheckRow]:
    rng = np.random.default_rng(seed)
    batch = hnnce.random_batch(n, d, tau, rng)
    x0, t0 = batch.image, batch.text
    result = hnnce.info_nce_loss(batch)

    # InfoNCE equals the hard-negative forward at alpha=1, beta=0
    def forward_x(x):
        return hnnce._hn_forward_arrays(x, t0, tau, 1.0, 0.0)

    def forward_t(t):
        return hnnce._hn_forward_arrays(x0, t, tau, 1.0, 0.0)

    def forward_tau(v):
        return hnnce._hn_forward_arrays(x0, t0, float(v[0]), 1.0, 0.0)

    rows = []
    checks = (
        ("image", result.grad_image, central_difference(forward_x, x0, step)),
        ("text", result.grad_text, central_difference(forward_t, t0, step)),
        ("tau", np.array([result.grad_tau]),
         central_difference(forward_tau, np.array([tau]), step)),
    )
    for name, analytic, numeric in checks:
        err = max_relative_error(analytic, numeric)
        rows.append(CheckRow(block=f"infonce/{name}", max_rel_err=err,
                             passed=err < tolerance))
    return rows


def check_ce_pseudo(size: int = 12, k: int = 4, seed: int = 0,
                    step: float = 1e-6,
                    tolerance: float = DEFAULT_TOLERANCE) -> list[CheckRow]:
    rng = np.random.default_rng(seed)
    probs = rng.random(size)
    label = conceptlab.topk_sparsify(probs, k)
    logits = rng.standard_normal(size)
    _, analytic = conceptlab.ce_pseudo_loss(logits, label)
    numeric = central_difference(
        lambda z: conceptlab.ce_pseudo_loss(z, label)[0], logits, step)
    err = max_relative_error(analytic, numeric)
    return [CheckRow(block="ce_pseudo/logits", max_rel_err=err,
                     passed=err < tolerance)]


def run_grid(alphas=GRID_ALPHAS, betas=GRID_BETAS, n: int = 6, d: int = 8,
             tau: float = 0.5, seed: int = 0, step: float = DEFAULT_STEP,
             tolerance: float = DEFAULT_TOLERANCE) -> list[CheckRow]:
    """Every (alpha, beta) cell plus InfoNCE and the pseudo-label CE."""
    rows: list[CheckRow] = []
    for alpha in alphas:
        for beta in betas:
            rows.extend(check_hn_cell(alpha, beta, n=n, d=d, tau=tau,
                                      seed=seed, step=step, tolerance=tolerance))
    rows.extend(check_info_nce(n=n, d=d, tau=tau, seed=seed, step=step,
                               tolerance=tolerance))
    rows.extend(check_ce_pseudo(seed=seed, tolerance=tolerance))
    return rows


def report_tsv(rows: list[CheckRow]) -> str:
    lines = ["block\tmax_rel_err\tstatus"]
    for row in rows:
        status = "pass" if row.passed else "FAIL"
        lines.append(f"{row.block}\t{row.max_rel_err:.3e}\t{status}")
    return "\n".join(lines) + "\n"
