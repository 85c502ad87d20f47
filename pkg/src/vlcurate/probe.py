"""Prompt-initialized linear probing with projected gradient descent.

The classifier starts from the zero-shot prompt matrix W0 and learns a
delta W plus a bias b under L2-ball constraints ||W||_F <= delta and
||b||_2 <= delta_b, so that few-shot training cannot drift far from the
zero-shot solution.  With delta = delta_b = 0 the probe *is* the zero-shot
classifier; growing the radii interpolates toward an unconstrained linear
probe.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ProbeProblem:
    features: np.ndarray  # (n, d) frozen image-tower outputs
    labels: np.ndarray  # (n,) ints in [0, n_classes)
    w0: np.ndarray  # (d, n_classes) prompt initialization
    delta: float  # radius for the weight delta (Frobenius)
    delta_b: float  # radius for the bias (Euclidean)

    def __post_init__(self):
        x = np.asarray(self.features, float)
        y = np.asarray(self.labels, int)
        w0 = np.asarray(self.w0, float)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "w0", w0)
        if x.ndim != 2 or w0.ndim != 2 or x.shape[1] != w0.shape[0]:
            raise ValueError("features (n, d) and w0 (d, c) must share d")
        if w0.shape[1] < 2:
            raise ValueError("need at least 2 classes")
        if y.shape != (x.shape[0],):
            raise ValueError("one integer label per feature row required")
        if y.min() < 0 or y.max() >= w0.shape[1]:
            raise ValueError("labels outside [0, n_classes)")
        if self.delta < 0 or self.delta_b < 0:
            raise ValueError("radii must be nonnegative")

    @property
    def n_classes(self) -> int:
        return self.w0.shape[1]


@dataclass
class ProbeSolution:
    w: np.ndarray  # (d, c) delta weights
    b: np.ndarray  # (c,)
    trajectory: list[tuple[float, float, float]] = field(default_factory=list)
    # (full-batch loss, ||W||_F, ||b||_2) per recorded iterate


def project_l2(m: np.ndarray, radius: float) -> np.ndarray:
    """Project onto the L2 ball: Frobenius for matrices, Euclidean for vectors."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    m = np.asarray(m, float)
    if radius == 0:
        return np.zeros_like(m)
    norm = np.linalg.norm(m)
    if norm <= radius:
        return m.copy()
    return m * (radius / norm)


def _ce_value_grad(x: np.ndarray, y: np.ndarray, w0: np.ndarray,
                   w: np.ndarray, b: np.ndarray):
    """Mean cross-entropy of logits x (W + W0) + b, with grads wrt W and b."""
    logits = x @ (w + w0) + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    n = x.shape[0]
    loss = -log_probs[np.arange(n), y].mean()
    probs = np.exp(log_probs)
    probs[np.arange(n), y] -= 1.0
    probs /= n
    return float(loss), x.T @ probs, probs.sum(axis=0)


def probe_loss(problem: ProbeProblem, w: np.ndarray, b: np.ndarray) -> float:
    loss, _, _ = _ce_value_grad(problem.features, problem.labels, problem.w0, w, b)
    return loss


def pgd_fit(problem: ProbeProblem, step_size: float, iterations: int,
            batch_size: int | None = None, seed: int = 0) -> ProbeSolution:
    """Projected gradient descent on the constrained probe objective.

    Full batch unless ``batch_size`` is given (mini-batches are drawn
    from a generator seeded with ``seed``).  The trajectory records the
    full-batch loss and both norms at the start and after every step;
    every recorded iterate is feasible because the projection runs
    before recording.
    """
    if step_size <= 0:
        raise ValueError("step size must be positive")
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    x, y, w0 = problem.features, problem.labels, problem.w0
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    w = np.zeros_like(w0)
    b = np.zeros(problem.n_classes)
    solution = ProbeSolution(w=w, b=b)

    def record():
        loss = probe_loss(problem, w, b)
        if not np.isfinite(loss):
            raise RuntimeError(
                f"non-finite loss at iterate {len(solution.trajectory)}")
        solution.trajectory.append(
            (loss, float(np.linalg.norm(w)), float(np.linalg.norm(b))))

    record()
    for _ in range(iterations):
        if batch_size is None or batch_size >= n:
            xb, yb = x, y
        else:
            pick = rng.choice(n, size=batch_size, replace=False)
            xb, yb = x[pick], y[pick]
        _, grad_w, grad_b = _ce_value_grad(xb, yb, w0, w, b)
        w = project_l2(w - step_size * grad_w, problem.delta)
        b = project_l2(b - step_size * grad_b, problem.delta_b)
        record()
    solution.w, solution.b = w, b
    return solution


def zero_shot_init(prompt_embeddings: np.ndarray) -> np.ndarray:
    """W0 from class prompt embeddings: column j is prompt j.

    With unit-normalized features the logits x^T W0 are cosine scores, so
    argmax classification equals nearest-prompt retrieval.
    """
    prompts = np.asarray(prompt_embeddings, float)
    if prompts.ndim != 2:
        raise ValueError("prompt embeddings must be (n_classes, d)")
    norms = np.linalg.norm(prompts, axis=1)
    if np.abs(norms - 1.0).max() > 1e-6:
        raise ValueError("prompt rows must be unit-normalized")
    return prompts.T.copy()


def predict(problem: ProbeProblem, w: np.ndarray, b: np.ndarray,
            features: np.ndarray | None = None) -> np.ndarray:
    x = problem.features if features is None else np.asarray(features, float)
    return np.argmax(x @ (w + problem.w0) + b, axis=1)


def accuracy(problem: ProbeProblem, solution: ProbeSolution,
             features: np.ndarray | None = None,
             labels: np.ndarray | None = None) -> float:
    y = problem.labels if labels is None else np.asarray(labels, int)
    pred = predict(problem, solution.w, solution.b, features)
    return float((pred == y).mean())


def grid_search(features: np.ndarray, labels: np.ndarray, w0: np.ndarray,
                deltas: Sequence[float], delta_bs: Sequence[float],
                step_size: float, iterations: int,
                eval_features: np.ndarray | None = None,
                eval_labels: np.ndarray | None = None,
                seed: int = 0) -> list[dict]:
    """Fit one probe per (delta, delta_b) pair and tabulate accuracies.

    Each grid point owns its optimizer state, so callers may distribute
    points across workers; results are returned in grid order regardless.
    """
    results = []
    for delta in deltas:
        for delta_b in delta_bs:
            problem = ProbeProblem(features=features, labels=labels, w0=w0,
                                   delta=delta, delta_b=delta_b)
            solution = pgd_fit(problem, step_size=step_size,
                               iterations=iterations, seed=seed)
            row = {
                "delta": float(delta),
                "delta_b": float(delta_b),
                "train_loss": solution.trajectory[-1][0],
                "train_accuracy": accuracy(problem, solution),
            }
            if eval_features is not None and eval_labels is not None:
                row["eval_accuracy"] = accuracy(problem, solution,
                                                eval_features, eval_labels)
            results.append(row)
    return results
