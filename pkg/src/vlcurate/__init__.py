"""Toolkit for curating image-text corpora and training against them.

Submodules:

* ``semgraph`` — caption dependency parses to object/attribute/action
  graphs, caption complexity, action inventory.
* ``catfilter`` — streaming complexity/action/text-spot/score filters with
  per-stage statistics over line-delimited records.
* ``conceptlab`` — concept vocabularies, 1/K soft targets, square-root
  resampling weights, top-k pseudo-labels, pseudo-label cross-entropy.
* ``hnnce`` — symmetric InfoNCE and its hard-negative reweighted variant
  with analytic gradients, plus the combined training objective.
* ``probe`` — prompt-initialized few-shot linear probing via projected
  gradient descent with L2-ball constraints.
* ``traintoy`` — seeded synthetic-pair trainer exercising the objectives.
* ``gradcheck`` — finite-difference verification of every analytic gradient.
"""

__version__ = "0.1.0"

from . import catfilter, conceptlab, gradcheck, hnnce, matrixio, probe, semgraph, traintoy

__all__ = [
    "__version__",
    "catfilter",
    "conceptlab",
    "gradcheck",
    "hnnce",
    "matrixio",
    "probe",
    "semgraph",
    "traintoy",
]
