"""Concept vocabularies and distillation targets.

Builds frequency-thresholded vocabularies of canonical object/attribute
concepts from parsed captions, turns per-caption concept sets into uniform
1/K soft targets, computes inverse-square-root resampling weights that
upsample images with rare concepts, and sparsifies teacher probability
vectors to top-k pseudo-labels with the matching cross-entropy loss and
gradient.

The teacher model itself is external: anything that produces a probability
vector over the vocabulary can feed ``topk_sparsify``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from . import semgraph
from .semgraph import SemanticGraph

DEFAULT_MIN_COUNT = 250
DEFAULT_TOP_K = 10


@dataclass(frozen=True)
class Concept:
    concept_id: int
    key: str
    frequency: int


@dataclass(frozen=True)
class ConceptVocab:
    kind: str  # semgraph.OBJECT or semgraph.ATTRIBUTE
    concepts: tuple[Concept, ...]

    def __len__(self) -> int:
        return len(self.concepts)

    @property
    def key_to_id(self) -> dict[str, int]:
        return {c.key: c.concept_id for c in self.concepts}


@dataclass(frozen=True)
class SoftTarget:
    present: tuple[int, ...]  # distinct concept ids, ascending
    dense: np.ndarray  # length-V vector, 1/K on present ids, 0 elsewhere


@dataclass(frozen=True)
class PseudoLabel:
    """Sparse probability vector: <= k (id, prob) entries summing to 1."""

    entries: tuple[tuple[int, float], ...]

    def to_dense(self, size: int) -> np.ndarray:
        dense = np.zeros(size)
        for concept_id, prob in self.entries:
            dense[concept_id] = prob
        return dense


def canonicalize(lemma: str, lexicon: Mapping[str, str]) -> str:
    """Map a lemma to its canonical key; unmapped lemmas map to themselves."""
    return lexicon.get(lemma, lemma)


def build_vocab(graphs: Iterable[SemanticGraph],
                kind: str,
                lexicon: Mapping[str, str] | None = None,
                min_count: int = DEFAULT_MIN_COUNT) -> ConceptVocab:
    """Count canonical keys of ``kind`` nodes and keep the frequent ones.

    Keys occurring fewer than ``min_count`` times are dropped.  Ids are
    dense 0..V-1, assigned by descending frequency with lexicographic
    tie-breaking, so identical corpora always yield identical ids.
    """
    if kind not in (semgraph.OBJECT, semgraph.ATTRIBUTE):
        raise ValueError(f"vocabulary kind must be object or attribute, got {kind!r}")
    lexicon = lexicon or {}
    counts: Counter[str] = Counter()
    for graph in graphs:
        for node in graph.nodes:
            if node.kind == kind:
                counts[canonicalize(node.lemma, lexicon)] += 1
    survivors = sorted(
        ((key, freq) for key, freq in counts.items() if freq >= min_count),
        key=lambda item: (-item[1], item[0]),
    )
    concepts = tuple(Concept(i, key, freq) for i, (key, freq) in enumerate(survivors))
    return ConceptVocab(kind=kind, concepts=concepts)


def soft_targets(present_ids: Iterable[int], vocab: ConceptVocab) -> SoftTarget:
    """Uniform 1/K target over the distinct present concept ids."""
    ids = sorted(set(present_ids))
    if not ids:
        raise ValueError("no concepts present: sample contributes no target")
    size = len(vocab)
    for concept_id in ids:
        if not 0 <= concept_id < size:
            raise ValueError(f"concept id {concept_id} outside vocabulary of {size}")
    dense = np.zeros(size)
    dense[ids] = 1.0 / len(ids)
    return SoftTarget(present=tuple(ids), dense=dense)


def sqrt_resample_weights(image_concept_freqs: Sequence[Sequence[float]],
                          target_length: float) -> np.ndarray:
    """Per-image sampling weights, scaled to sum to ``target_length``.

    ``image_concept_freqs[i]`` lists the corpus frequencies of the
    concepts present in image i.  An image's unnormalized weight is
    1/sqrt of its rarest concept's frequency, so tail concepts are
    upsampled; the sum of weights equals the expected number of draws.
    """
    if target_length <= 0:
        raise ValueError("target_length must be positive")
    raw = np.empty(len(image_concept_freqs))
    for i, freqs in enumerate(image_concept_freqs):
        if len(freqs) == 0:
            raise ValueError(f"image {i} has no concepts")
        low = min(freqs)
        if low <= 0:
            raise ValueError(f"image {i} has nonpositive concept frequency {low}")
        raw[i] = 1.0 / math.sqrt(low)
    return raw * (target_length / raw.sum())


def topk_sparsify(probs: np.ndarray, k: int = DEFAULT_TOP_K) -> PseudoLabel:
    """Keep the k largest entries (ties to the lower id) and renormalize."""
    if k <= 0:
        raise ValueError("k must be positive")
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1:
        raise ValueError("probability vector must be 1-D")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probabilities must be finite and nonnegative")
    total = p.sum()
    if total <= 0:
        raise ValueError("probability vector must have positive mass")
    order = np.argsort(-p, kind="stable")[:k]
    kept = [(int(i), float(p[i])) for i in sorted(order) if p[i] > 0]
    mass = sum(prob for _, prob in kept)
    return PseudoLabel(entries=tuple((i, prob / mass) for i, prob in kept))


def ce_pseudo_loss(logits: np.ndarray,
                   label: PseudoLabel) -> tuple[float, np.ndarray]:
    """Cross-entropy of a pseudo-label against classifier logits.

    Returns ``(loss, grad)`` where loss = -sum_j q_j log softmax(z)_j over
    the label support and grad = softmax(z) - q.  The gradient entries sum
    to zero by construction.
    """
    z = np.asarray(logits, dtype=float)
    if z.ndim != 1:
        raise ValueError("logits must be 1-D")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    shifted = z - z.max()
    log_norm = math.log(np.exp(shifted).sum())
    log_softmax = shifted - log_norm
    loss = -sum(prob * log_softmax[i] for i, prob in label.entries)
    grad = np.exp(log_softmax) - label.to_dense(len(z))
    return float(loss), grad


# ---------------------------------------------------------------------------
# File formats: vocab and lexicon are TSV, pseudo-labels are JSONL


def save_vocab(vocab: ConceptVocab, fh: TextIO) -> None:
    for c in vocab.concepts:
        fh.write(f"{c.concept_id}\t{c.key}\t{c.frequency}\n")


def load_vocab(fh: TextIO, kind: str) -> ConceptVocab:
    concepts = []
    for line in fh:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        concept_id, key, freq = line.split("\t")
        concepts.append(Concept(int(concept_id), key, int(freq)))
    concepts.sort(key=lambda c: c.concept_id)
    for expect, c in enumerate(concepts):
        if c.concept_id != expect:
            raise ValueError(f"vocabulary ids not dense at {c.concept_id}")
    return ConceptVocab(kind=kind, concepts=tuple(concepts))


def load_lexicon(fh: TextIO) -> dict[str, str]:
    """lemma -> canonical key, one tab-separated pair per line."""
    lexicon: dict[str, str] = {}
    for line in fh:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        lemma, key = line.split("\t")
        lexicon[lemma] = key
    return lexicon


def pseudo_label_line(record_id: str, obj: PseudoLabel | None,
                      attr: PseudoLabel | None) -> str:
    payload: dict = {"id": record_id}
    if obj is not None:
        payload["obj"] = [[i, p] for i, p in obj.entries]
    if attr is not None:
        payload["attr"] = [[i, p] for i, p in attr.entries]
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def parse_pseudo_label_line(line: str) -> tuple[str, PseudoLabel | None,
                                                PseudoLabel | None]:
    obj = json.loads(line)

    def unpack(key: str) -> PseudoLabel | None:
        if key not in obj:
            return None
        return PseudoLabel(entries=tuple((int(i), float(p)) for i, p in obj[key]))

    return obj["id"], unpack("obj"), unpack("attr")
