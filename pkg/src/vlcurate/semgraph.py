"""Semantic graphs from dependency-parsed captions.

A caption arrives as a dependency parse (CoNLL-U or in-memory tokens) and
leaves as a typed graph of objects, attributes, and actions.  On top of the
graph this module computes the two scalar signals used by the corpus filters:
the caption complexity level (max relations attached to any single object)
and the number of actions.

Parsing English is out of scope here; the rule layer consumes Universal
Dependencies annotations produced elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

# node kinds
OBJECT = "object"
ATTRIBUTE = "attribute"
ACTION = "action"

# edge relations
HAS_ATTR = "has_attr"
HAS_PART = "has_part"
ACT_HAS_SUBJ = "act_has_subj"
ACT_HAS_OBJ = "act_has_obj"
IS_ACT_SUBJ = "is_act_subj"
IS_ACT_OBJ = "is_act_obj"

RELATIONS = (HAS_ATTR, HAS_PART, ACT_HAS_SUBJ, ACT_HAS_OBJ, IS_ACT_SUBJ, IS_ACT_OBJ)

# mirrored argument relations: action-centric <-> object-centric
_MIRROR = {ACT_HAS_SUBJ: IS_ACT_SUBJ, ACT_HAS_OBJ: IS_ACT_OBJ}

# verbs that denote attribution/possession rather than a depictable action
EXCLUDED_VERB_LEMMAS = frozenset({"be", "look", "seem", "have"})

_KIND_ORDER = {OBJECT: 0, ATTRIBUTE: 1, ACTION: 2}


class ParseError(ValueError):
    """Malformed dependency parse; ``token_index`` points at the offender."""

    def __init__(self, message: str, token_index: int | None = None):
        super().__init__(message)
        self.token_index = token_index


@dataclass(frozen=True)
class Token:
    """One token of a dependency parse.

    ``head`` is the 0-based index of the syntactic head, or None for the
    sentence root.  ``upos`` is a coarse Universal POS tag (NOUN, PROPN,
    ADJ, VERB, NUM, ADP, DET, ...); tags outside that set are carried
    through untouched and simply match no rule.
    """

    form: str
    lemma: str
    upos: str
    head: int | None
    deprel: str


@dataclass(frozen=True)
class DependencyParse:
    tokens: tuple[Token, ...]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class GraphNode:
    node_id: int
    kind: str
    lemma: str
    span: tuple[int, int]  # [start, end) token indices


@dataclass(frozen=True)
class GraphEdge:
    src: int
    relation: str
    dst: int


@dataclass(frozen=True)
class SemanticGraph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[GraphEdge, ...]

    def nodes_of_kind(self, kind: str) -> list[GraphNode]:
        return [n for n in self.nodes if n.kind == kind]


def parse(tokens: Sequence[tuple[str, str, str, int | None, str]]) -> DependencyParse:
    """Build a DependencyParse from (form, lemma, upos, head, deprel) tuples."""
    return DependencyParse(tuple(Token(*t) for t in tokens))


def validate_parse(p: DependencyParse) -> None:
    """Check tree shape: heads in range, exactly one root, no cycles."""
    n = len(p.tokens)
    roots = [i for i, t in enumerate(p.tokens) if t.head is None]
    if n and not roots:
        raise ParseError("parse has no root token", 0)
    if len(roots) > 1:
        raise ParseError("parse has multiple roots", roots[1])
    for i, t in enumerate(p.tokens):
        if t.head is not None and not (0 <= t.head < n):
            raise ParseError(f"head index {t.head} out of range", i)
        if t.head == i:
            raise ParseError("token is its own head", i)
        if not t.deprel:
            raise ParseError("empty dependency relation", i)
    # walk up from every token; a repeat before reaching the root is a cycle
    for i in range(n):
        seen = set()
        j: int | None = i
        while j is not None:
            if j in seen:
                raise ParseError("cycle in head chain", i)
            seen.add(j)
            j = p.tokens[j].head


def _base_rel(deprel: str) -> str:
    # UD subtypes like nmod:with or nsubj:pass share the base relation
    return deprel.split(":", 1)[0]


def build_graph(p: DependencyParse) -> SemanticGraph:
    """Apply the extraction rules to a validated parse.

    Rules, in terms of UD annotations:

    * NOUN tokens become objects, except noun-compound modifiers
      (``compound`` under another noun), which become attributes of the
      head noun.  PROPN tokens produce nothing.
    * ``amod``/``advmod`` adjectives and ``nummod`` numerals become
      attributes of their head's node (objects or attributes may host
      attributes, so "dark green" chains work).
    * A noun attached by ``nmod`` whose case marker is the adposition
      "with" is a part of the head noun (``has_part``).
    * VERB tokens become actions unless their lemma is one of
      ``EXCLUDED_VERB_LEMMAS``; ``nsubj``/``obj`` children that map to
      object nodes become the action's arguments, with mirrored
      object-centric edges.  A verb used as an ``amod`` modifier emits
      both an attribute of the head noun and an argument-less action.
    """
    validate_parse(p)
    toks = p.tokens
    n = len(toks)
    children: dict[int, list[int]] = {i: [] for i in range(n)}
    for i, t in enumerate(toks):
        if t.head is not None:
            children[t.head].append(i)

    # (token index, kind) -> provisional node key; resolved to dense ids later
    made: dict[tuple[int, str], dict] = {}

    def add_node(i: int, kind: str) -> None:
        made.setdefault((i, kind), {"lemma": toks[i].lemma, "span": (i, i + 1)})

    def is_participial(i: int) -> bool:
        t = toks[i]
        return (
            t.upos == "VERB"
            and _base_rel(t.deprel) == "amod"
            and t.head is not None
            and toks[t.head].upos == "NOUN"
        )

    # pass 1: unconditional nodes (objects, actions)
    for i, t in enumerate(toks):
        if t.upos == "NOUN":
            compound = (
                _base_rel(t.deprel) == "compound"
                and t.head is not None
                and toks[t.head].upos == "NOUN"
            )
            if not compound:
                add_node(i, OBJECT)
        elif t.upos == "VERB" and t.lemma.lower() not in EXCLUDED_VERB_LEMMAS:
            add_node(i, ACTION)

    def attr_host(i: int) -> tuple[int, str] | None:
        """Node on token i that may carry a has_attr edge (object first)."""
        if (i, OBJECT) in made:
            return (i, OBJECT)
        if (i, ATTRIBUTE) in made:
            return (i, ATTRIBUTE)
        return None

    def attr_candidate(i: int) -> bool:
        t = toks[i]
        if t.head is None:
            return False
        base = _base_rel(t.deprel)
        if t.upos == "NOUN":
            return base == "compound" and toks[t.head].upos == "NOUN"
        if t.upos == "ADJ":
            return base in ("amod", "advmod")
        if t.upos == "NUM":
            return base == "nummod"
        if t.upos == "VERB":
            return is_participial(i) and t.lemma.lower() not in EXCLUDED_VERB_LEMMAS
        return False

    # pass 2: attribute nodes, shallowest first so attribute-of-attribute
    # chains find their host already materialised
    depth = [0] * n
    for i, t in enumerate(toks):
        d, j = 0, t.head
        while j is not None:
            d += 1
            j = toks[j].head
        depth[i] = d
    attr_edges: list[tuple[tuple[int, str], tuple[int, str]]] = []
    for i in sorted(range(n), key=lambda i: (depth[i], i)):
        if not attr_candidate(i):
            continue
        host = attr_host(toks[i].head)  # type: ignore[arg-type]
        if host is None:
            continue
        add_node(i, ATTRIBUTE)
        attr_edges.append((host, (i, ATTRIBUTE)))

    # canonical ids: token order, objects before attributes before actions
    ordered = sorted(made, key=lambda k: (k[0], _KIND_ORDER[k[1]]))
    ids = {key: idx for idx, key in enumerate(ordered)}
    nodes = tuple(
        GraphNode(ids[key], key[1], made[key]["lemma"], made[key]["span"])
        for key in ordered
    )

    edges: list[GraphEdge] = []
    for host, attr in attr_edges:
        edges.append(GraphEdge(ids[host], HAS_ATTR, ids[attr]))

    # has_part: nmod noun with a "with" case marker
    for i, t in enumerate(toks):
        if (i, OBJECT) not in made or _base_rel(t.deprel) != "nmod" or t.head is None:
            continue
        if (t.head, OBJECT) not in made:
            continue
        has_with = any(
            toks[c].upos == "ADP"
            and _base_rel(toks[c].deprel) == "case"
            and toks[c].lemma.lower() == "with"
            for c in children[i]
        )
        if has_with:
            edges.append(GraphEdge(ids[(t.head, OBJECT)], HAS_PART, ids[(i, OBJECT)]))

    # action arguments, plus mirrored object-centric edges
    for i in range(n):
        if (i, ACTION) not in made or is_participial(i):
            continue
        act = ids[(i, ACTION)]
        for c in children[i]:
            base = _base_rel(toks[c].deprel)
            if (c, OBJECT) not in made:
                continue
            obj = ids[(c, OBJECT)]
            if base == "nsubj":
                edges.append(GraphEdge(act, ACT_HAS_SUBJ, obj))
                edges.append(GraphEdge(obj, IS_ACT_SUBJ, act))
            elif base in ("obj", "dobj"):
                edges.append(GraphEdge(act, ACT_HAS_OBJ, obj))
                edges.append(GraphEdge(obj, IS_ACT_OBJ, act))

    edges.sort(key=lambda e: (e.src, e.relation, e.dst))
    return SemanticGraph(nodes, tuple(edges))


def complexity(graph: SemanticGraph) -> int:
    """Max relation count over object nodes; 0 when no object exists.

    A relation is an outgoing has_attr, has_part, is_act_subj, or
    is_act_obj edge, so taking part in an action counts once no matter
    how many other arguments the action has.
    """
    counted = (HAS_ATTR, HAS_PART, IS_ACT_SUBJ, IS_ACT_OBJ)
    per_obj: dict[int, int] = {n.node_id: 0 for n in graph.nodes if n.kind == OBJECT}
    for e in graph.edges:
        if e.src in per_obj and e.relation in counted:
            per_obj[e.src] += 1
    return max(per_obj.values(), default=0)


def action_count(graph: SemanticGraph) -> int:
    return sum(1 for n in graph.nodes if n.kind == ACTION)


def check_graph(graph: SemanticGraph) -> None:
    """Assert the structural invariants; raises ValueError on violation."""
    kinds: dict[int, str] = {}
    for node in graph.nodes:
        if node.node_id in kinds:
            raise ValueError(f"duplicate node id {node.node_id}")
        kinds[node.node_id] = node.kind
    seen: set[tuple[int, str, int]] = set()
    for e in graph.edges:
        if e.src not in kinds or e.dst not in kinds:
            raise ValueError(f"edge {e} references unknown node")
        key = (e.src, e.relation, e.dst)
        if key in seen:
            raise ValueError(f"duplicate edge {e}")
        seen.add(key)
        if e.relation == HAS_ATTR:
            ok = kinds[e.src] in (OBJECT, ATTRIBUTE) and kinds[e.dst] == ATTRIBUTE
        elif e.relation == HAS_PART:
            ok = kinds[e.src] == OBJECT and kinds[e.dst] == OBJECT
        elif e.relation in (ACT_HAS_SUBJ, ACT_HAS_OBJ):
            ok = kinds[e.src] == ACTION and kinds[e.dst] == OBJECT
        elif e.relation in (IS_ACT_SUBJ, IS_ACT_OBJ):
            ok = kinds[e.src] == OBJECT and kinds[e.dst] == ACTION
        else:
            raise ValueError(f"unknown relation {e.relation!r}")
        if not ok:
            raise ValueError(f"edge {e} violates kind constraints")
    for rel, mirror in _MIRROR.items():
        fwd = {(e.src, e.dst) for e in graph.edges if e.relation == rel}
        back = {(e.dst, e.src) for e in graph.edges if e.relation == mirror}
        if fwd != back:
            raise ValueError(f"{rel}/{mirror} edges are not mirrored")
    for node in graph.nodes:
        if node.kind == ACTION and node.lemma.lower() in EXCLUDED_VERB_LEMMAS:
            raise ValueError(f"excluded verb {node.lemma!r} appears as an action")


def serialize_graph(graph: SemanticGraph) -> str:
    """Canonical text form: nodes by span then kind, edges lexicographic."""
    lines = []
    for n in sorted(graph.nodes, key=lambda n: (n.span, _KIND_ORDER[n.kind], n.lemma)):
        lines.append(f"node\t{n.node_id}\t{n.kind}\t{n.lemma}\t{n.span[0]}:{n.span[1]}")
    for e in sorted(graph.edges, key=lambda e: (e.src, e.relation, e.dst)):
        lines.append(f"edge\t{e.src}\t{e.relation}\t{e.dst}")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# CoNLL-U ingestion

_UPOS_MAP: Mapping[str, str] = {}  # upos strings are used verbatim


def parse_conllu_block(block: str) -> DependencyParse:
    """One sentence block (comments allowed, multiword/empty ids skipped)."""
    toks: list[Token] = []
    for raw in block.splitlines():
        line = raw.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 8:
            raise ParseError(f"expected >=8 tab-separated columns, got {len(cols)}",
                             len(toks))
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            continue  # multiword ranges and empty nodes carry no tree edges
        try:
            head_col = int(cols[6])
        except ValueError as exc:
            raise ParseError(f"non-integer head {cols[6]!r}", len(toks)) from exc
        head = None if head_col == 0 else head_col - 1
        toks.append(Token(form=cols[1], lemma=cols[2], upos=cols[3],
                          head=head, deprel=cols[7]))
    return DependencyParse(tuple(toks))


def iter_conllu(text: str) -> Iterator[DependencyParse]:
    """Yield one DependencyParse per blank-line-separated sentence block."""
    block: list[str] = []
    for line in text.splitlines():
        if line.strip():
            block.append(line)
        elif block:
            yield parse_conllu_block("\n".join(block))
            block = []
    if block:
        yield parse_conllu_block("\n".join(block))
