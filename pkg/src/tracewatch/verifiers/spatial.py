"""Diagonal map relations as strict orders on two independent axes.

Every diagonal relation fixes one strict inequality on the row axis and one
on the column axis. A set of relations is satisfiable exactly when neither
axis digraph has a cycle, so consistency checking needs no solver.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

from tracewatch.extraction import ExtractedState, StateKind, parse_relation_line
from tracewatch.geometry import Compass, DiagRelation
from tracewatch.trace import Verdict

# (row sign, col sign) of subject relative to object: -1 means smaller
_AXES: dict[Compass, tuple[int, int]] = {
    Compass.NW: (-1, -1),
    Compass.NE: (-1, 1),
    Compass.SW: (1, -1),
    Compass.SE: (1, 1),
}
_BY_AXES = {v: k for k, v in _AXES.items()}
# cardinal -> the two diagonals that flank it
_FLANKS: dict[Compass, tuple[Compass, Compass]] = {
    Compass.N: (Compass.NW, Compass.NE),
    Compass.S: (Compass.SW, Compass.SE),
    Compass.W: (Compass.NW, Compass.SW),
    Compass.E: (Compass.NE, Compass.SE),
}


def normalize_relation(rel: DiagRelation) -> DiagRelation:
    """Orient so the lexicographically smaller name is the subject."""
    if rel.object < rel.subject:
        return DiagRelation(rel.object, rel.dir.opposite(), rel.subject)
    return rel


def _axis_edges(rel: DiagRelation) -> tuple[tuple[str, str], tuple[str, str]]:
    """(row edge, col edge); an edge u -> v means u < v on that axis."""
    rs, cs = _AXES[rel.dir]
    s, o = rel.subject, rel.object
    row = (s, o) if rs < 0 else (o, s)
    col = (s, o) if cs < 0 else (o, s)
    return row, col


class _Digraph:
    def __init__(self) -> None:
        self.succ: dict[str, set[str]] = {}
        self.label: dict[tuple[str, str], DiagRelation] = {}

    def copy(self) -> _Digraph:
        g = _Digraph()
        g.succ = {k: set(v) for k, v in self.succ.items()}
        g.label = dict(self.label)
        return g

    def path(self, src: str, dst: str) -> list[str] | None:
        """Some directed path src -> ... -> dst, by iterative DFS."""
        if src == dst:
            return [src]
        parent: dict[str, str] = {src: src}
        stack = [src]
        while stack:
            u = stack.pop()
            for v in self.succ.get(u, ()):
                if v in parent:
                    continue
                parent[v] = u
                if v == dst:
                    out = [v]
                    while out[-1] != src:
                        out.append(parent[out[-1]])
                    return out[::-1]
                stack.append(v)
        return None

    def add(self, u: str, v: str, rel: DiagRelation) -> None:
        self.succ.setdefault(u, set()).add(v)
        self.label.setdefault((u, v), rel)


@dataclass
class RelationStore:
    entities: set[str] = field(default_factory=set)
    asserted: list[DiagRelation] = field(default_factory=list)
    row_lt: _Digraph = field(default_factory=_Digraph)
    col_lt: _Digraph = field(default_factory=_Digraph)

    @classmethod
    def from_relations(cls, relations: Sequence[DiagRelation], entities: Sequence[str] = ()) -> RelationStore:
        store = cls(set(entities))
        for rel in relations:
            verdict = assert_relation(store, rel)
            if not verdict.passed:
                raise ValueError(f"inconsistent relation set: {verdict.feedback}")
        return store

    def copy(self) -> RelationStore:
        return RelationStore(set(self.entities), list(self.asserted), self.row_lt.copy(), self.col_lt.copy())

    def snapshot(self) -> tuple:
        return (
            frozenset(self.entities),
            tuple(self.asserted),
            {k: frozenset(v) for k, v in self.row_lt.succ.items() if v},
            {k: frozenset(v) for k, v in self.col_lt.succ.items() if v},
        )

    def is_consistent(self) -> bool:
        return not _has_cycle(self.row_lt) and not _has_cycle(self.col_lt)


def _has_cycle(g: _Digraph) -> bool:
    state: dict[str, int] = {}
    for root in list(g.succ):
        if root in state:
            continue
        stack = [(root, iter(g.succ.get(root, ())))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state.get(nxt) == 1:
                return True
            elif nxt not in state:
                state[nxt] = 1
                stack.append((nxt, iter(g.succ.get(nxt, ()))))
    return False


def _describe_cycle(g: _Digraph, closing: tuple[str, str], new: DiagRelation, axis: str) -> str:
    u, v = closing
    chain = g.path(v, u)
    rels: list[str] = []
    for a, b in zip(chain, chain[1:]):
        text = g.label[(a, b)].render()
        if text not in rels:
            rels.append(text)
    order = " < ".join([u, *chain])
    given = "; ".join(f"'{r}'" for r in rels)
    return f"'{new.render()}' contradicts {given}: on the {axis} axis it needs {order}, which is a cycle"


def assert_relation(store: RelationStore, rel: DiagRelation) -> Verdict:
    """Add ``rel`` if it keeps both axes acyclic; otherwise leave the store untouched."""
    if rel.subject == rel.object:
        return Verdict(False, f"'{rel.render()}' relates an entity to itself.")
    if not rel.dir.is_diagonal:
        return Verdict(False, f"'{rel.render()}' is not a diagonal relation.")
    row_edge, col_edge = _axis_edges(rel)
    for axis, g, (u, v) in (("row", store.row_lt, row_edge), ("column", store.col_lt, col_edge)):
        # adding u -> v closes a cycle iff v already reaches u
        if g.path(v, u) is not None:
            return Verdict(False, _describe_cycle(g, (u, v), rel, axis) + ".")
    store.entities.update((rel.subject, rel.object))
    store.row_lt.add(*row_edge, rel)
    store.col_lt.add(*col_edge, rel)
    store.asserted.append(rel)
    return Verdict(True)


def _axis_order(g: _Digraph, x: str, y: str) -> int:
    if g.path(x, y) is not None:
        return -1
    if g.path(y, x) is not None:
        return 1
    return 0


def entailed_direction(store: RelationStore, x: str, y: str) -> Compass | None:
    """Direction of ``x`` relative to ``y`` forced by the store, if any."""
    if x == y:
        raise ValueError("direction of an entity relative to itself is undefined")
    rs, cs = _axis_order(store.row_lt, x, y), _axis_order(store.col_lt, x, y)
    if rs and cs:
        return _BY_AXES[(rs, cs)]
    if not (rs or cs):
        return None
    # exactly one axis is ordered: a cardinal needs both flanking diagonals asserted
    asserted = {(normalize_relation(r)) for r in store.asserted}
    for cardinal, (d1, d2) in _FLANKS.items():
        if all(normalize_relation(DiagRelation(x, d, y)) in asserted for d in (d1, d2)):
            return cardinal
    return None


def entities_in_direction(store: RelationStore, anchor: str, direction: Compass) -> set[str]:
    """Entities whose direction relative to ``anchor`` is entailed to be ``direction``."""
    return {e for e in store.entities if e != anchor and entailed_direction(store, e, anchor) is direction}


def verify_conclusion(store: RelationStore, claim: DiagRelation) -> Verdict:
    """Check a claimed relation against a store built from the instance; never mutates it."""
    unknown = [e for e in (claim.subject, claim.object) if e not in store.entities]
    if unknown:
        names = ", ".join(repr(u) for u in unknown)
        return Verdict(False, f"{names} is not an object on this map; use the complete names exactly as given.")
    if claim.subject == claim.object:
        return Verdict(False, f"'{claim.render()}' relates an entity to itself.")
    entailed = entailed_direction(store, claim.subject, claim.object)
    if not claim.dir.is_diagonal:
        if entailed is claim.dir:
            return Verdict(True)
        d1, d2 = _FLANKS[claim.dir]
        return Verdict(
            False,
            f"{claim.subject} can only be {claim.dir.value} of {claim.object} if both the {d1.value} and "
            f"{d2.value} relations are confirmed, and the map does not confirm that.",
        )
    verdict = assert_relation(store.copy(), claim)
    if not verdict.passed:
        return verdict
    if entailed is not None and entailed is not claim.dir:
        return Verdict(False, f"the map implies {claim.subject} is to the {entailed.value} of {claim.object}, not the {claim.dir.value}.")
    return Verdict(True)


def structured_step_to_relations(step_text: str) -> tuple[list[DiagRelation], list[str]]:
    """Parse relation lines (bulleted or not); returns (relations, errors)."""
    rels, errors = [], []
    for line in step_text.splitlines():
        body = line.strip().lstrip("-*• ").strip()
        if not body or body.startswith(">>>"):
            continue
        rel, err = parse_relation_line(body)
        if err:
            errors.append(err)
        else:
            rels.append(rel)
    return rels, errors


def satisfiability_oracle(relations: Sequence[DiagRelation], max_entities: int = 6) -> bool:
    """Brute force over row and column orderings of the entities.

    The two axes are independent, so the search over row permutations and
    over column permutations is done separately; the answer is the same as
    enumerating all pairs.
    """
    names = sorted({r.subject for r in relations} | {r.object for r in relations})
    if len(names) > max_entities:
        raise ValueError(f"oracle refuses {len(names)} entities (limit {max_entities})")
    if any(r.subject == r.object for r in relations):
        return False
    row_constraints = [_axis_edges(r)[0] for r in relations]
    col_constraints = [_axis_edges(r)[1] for r in relations]

    def axis_ok(constraints: list[tuple[str, str]]) -> bool:
        for perm in itertools.permutations(range(len(names))):
            rank = dict(zip(names, perm))
            if all(rank[u] < rank[v] for u, v in constraints):
                return True
        return False

    return axis_ok(row_constraints) and axis_ok(col_constraints)


@dataclass
class SpatialVerifier:
    """Per-run verifier for map states against the instance's relation set."""

    store: RelationStore

    def verify(self, state: ExtractedState) -> Verdict:
        if state.parse_error is not None:
            return Verdict(
                False,
                f"I could not read this part ({state.parse_error}). Only Northwest, Northeast, Southwest and "
                "Southeast relations are given, written as 'X is to the <Direction> of Y'.",
            )
        if state.kind is StateKind.SPATIAL_RELATION_SET:
            for rel in state.payload:
                v = self._check_listed(rel)
                if not v.passed:
                    return v
            return Verdict(True)
        if state.kind is StateKind.SPATIAL_CONCLUSION:
            return verify_conclusion(self.store, state.payload)
        return Verdict(True)

    def _check_listed(self, rel: DiagRelation) -> Verdict:
        verdict = verify_conclusion(self.store, rel)
        if not verdict.passed:
            return verdict
        if entailed_direction(self.store, rel.subject, rel.object) is not rel.dir:
            return Verdict(False, f"'{rel.render()}' is not stated in the map description; list only the given relations.")
        return Verdict(True)
