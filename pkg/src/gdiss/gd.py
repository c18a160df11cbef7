"""Reference dissemination models over simple indexed blocks.

Two executable transition systems share the simple-block state space: the
friend-gated dissemination model (create / follow / sent-by-friend) and
the all-to-all strawman (create / sent-by-anyone), which exists to be
monitored and shown non-grassroots.  Dependency graphs over block
occurrences witness that a configuration could arise from some safe
dissemination order, and the completion planner turns a nested pair of
configurations into a replayable transition sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

from .graphs import CycleError, topo_sort
from .identity import AgentId


class SimpleBlock(NamedTuple):
    creator: AgentId
    index: int
    payload: bytes | None

    def is_initial(self) -> bool:
        return self.index == 1 and self.payload is None


class ModelError(ValueError):
    pass


class TransitionError(ModelError):
    """A transition was applied without being enabled."""


@dataclass(frozen=True)
class GDTransition:
    kind: str  # "create" | "follow" | "sent"
    actor: AgentId
    block: SimpleBlock
    source: AgentId | None = None  # holder the block came from, for "sent"

    def class_key(self) -> tuple | None:
        """Liveness class; follow is volitional and has none."""
        if self.kind == "create":
            return (self.actor, "create")
        if self.kind == "sent":
            return (self.actor, "sent", self.source, self.block)
        return None


@dataclass(frozen=True)
class GDConfig:
    agents: tuple[AgentId, ...]
    states: dict[AgentId, frozenset[SimpleBlock]] = field(hash=False)

    @classmethod
    def initial(cls, agents: Iterable[AgentId]) -> "GDConfig":
        ags = tuple(sorted(agents))
        return cls(agents=ags, states={a: frozenset() for a in ags})

    def state(self, p: AgentId) -> frozenset[SimpleBlock]:
        return self.states[p]

    def all_blocks(self) -> set[SimpleBlock]:
        out: set[SimpleBlock] = set()
        for s in self.states.values():
            out |= s
        return out

    def with_block(self, p: AgentId, b: SimpleBlock) -> "GDConfig":
        states = dict(self.states)
        states[p] = states[p] | {b}
        return GDConfig(agents=self.agents, states=states)

    def dominates(self, other: "GDConfig") -> bool:
        return self.agents == other.agents and all(
            other.states[a] <= self.states[a] for a in self.agents
        )


def follows(c: GDConfig, p: AgentId, q: AgentId) -> bool:
    """p follows q when p holds any q-block."""
    return any(b.creator == q for b in c.states[p])


def friends(c: GDConfig, p: AgentId, q: AgentId) -> bool:
    return p != q and follows(c, p, q) and follows(c, q, p)


def max_index(state: frozenset[SimpleBlock], creator: AgentId) -> int:
    return max((b.index for b in state if b.creator == creator), default=0)


def is_consistent(c: GDConfig) -> bool:
    """Every held block, except inventable initial ones, is in its creator's state.

    Initial blocks (index 1, no payload) are exempt: a follow step may copy
    one before the creator has taken any step of its own.
    """
    for p in c.agents:
        for b in c.states[p]:
            if b.is_initial():
                continue
            if b not in c.states[b.creator]:
                return False
    return True


def is_complete(c: GDConfig) -> bool:
    """Each state holding an i-indexed block holds the whole lower chain."""
    for p in c.agents:
        per_creator: dict[AgentId, set[int]] = {}
        for b in c.states[p]:
            per_creator.setdefault(b.creator, set()).add(b.index)
        for indices in per_creator.values():
            top = max(indices)
            if len(indices) != top or indices != set(range(1, top + 1)):
                return False
    return True


# -- enabledness and application --------------------------------------------


def gd_transition_enabled(c: GDConfig, t: GDTransition) -> str | None:
    """None when enabled, otherwise the violated clause."""
    p = t.actor
    b = t.block
    if p not in c.states:
        return "actor not in universe"
    if b in c.states[p]:
        return "block already held"
    if t.kind == "create":
        if b.creator != p:
            return "create of a foreign block"
        want = max_index(c.states[p], p) + 1
        if b.index != want:
            return f"create index {b.index}, expected {want}"
        if b.index == 1 and b.payload is not None:
            return "initial block must have empty payload"
        return None
    if t.kind == "follow":
        if b.creator == p:
            return "follow of own block"
        if not (b.index == 1 and b.payload is None):
            return "follow must add an initial block"
        return None
    if t.kind == "sent":
        if b.creator == p:
            return "sent of own block"
        q = t.source
        if q is None or q not in c.states:
            return "missing or unknown source"
        if b not in c.states[q]:
            return "source does not hold the block"
        if not friends(c, p, q):
            return "actor and source are not friends"
        if not any(
            x.creator == b.creator and x.index == b.index - 1 for x in c.states[p]
        ):
            return "predecessor not held"
        return None
    return f"unknown kind {t.kind!r}"


def gd_enabled(
    c: GDConfig,
    p: AgentId,
    payloads: Iterable[bytes | None] = (None,),
    follow_targets: Iterable[AgentId] | None = None,
) -> list[GDTransition]:
    """All transitions currently available to p.

    Creation is enumerated once per candidate payload; the state machine
    itself places no bound on payload choice.
    """
    out: list[GDTransition] = []
    state = c.states[p]
    idx = max_index(state, p) + 1
    if idx == 1:
        out.append(GDTransition("create", p, SimpleBlock(p, 1, None)))
    else:
        seen: set[bytes | None] = set()
        for x in payloads:
            if x in seen:
                continue
            seen.add(x)
            out.append(GDTransition("create", p, SimpleBlock(p, idx, x)))
    targets = c.agents if follow_targets is None else tuple(sorted(follow_targets))
    for q in targets:
        b = SimpleBlock(q, 1, None)
        if q != p and b not in state:
            out.append(GDTransition("follow", p, b))
    for q in c.agents:
        if q == p or not friends(c, p, q):
            continue
        for b in sorted(c.states[q] - state):
            if b.creator == p or b.index < 2:
                continue
            if any(x.creator == b.creator and x.index == b.index - 1 for x in state):
                out.append(GDTransition("sent", p, b, source=q))
    return out


def gd_apply(c: GDConfig, t: GDTransition) -> GDConfig:
    why = gd_transition_enabled(c, t)
    if why is not None:
        raise TransitionError(f"transition not enabled: {why}")
    return c.with_block(t.actor, t.block)


# -- the all-to-all strawman -------------------------------------------------


def ad_transition_enabled(c: GDConfig, t: GDTransition) -> str | None:
    p = t.actor
    b = t.block
    if p not in c.states:
        return "actor not in universe"
    if b in c.states[p]:
        return "block already held"
    if t.kind == "create":
        if b.creator != p:
            return "create of a foreign block"
        want = max_index(c.states[p], p) + 1
        if b.index != want:
            return f"create index {b.index}, expected {want}"
        return None
    if t.kind == "sent":
        if b.creator == p:
            return "sent of own block"
        q = t.source
        if q is None or q not in c.states:
            return "missing or unknown source"
        if b not in c.states[q]:
            return "source does not hold the block"
        if b.index >= 2 and not any(
            x.creator == b.creator and x.index == b.index - 1 for x in c.states[p]
        ):
            return "predecessor not held"
        return None
    return f"kind {t.kind!r} not part of this model"


def ad_enabled(
    c: GDConfig, p: AgentId, payloads: Iterable[bytes | None] = (None,)
) -> list[GDTransition]:
    out: list[GDTransition] = []
    state = c.states[p]
    idx = max_index(state, p) + 1
    seen: set[bytes | None] = set()
    for x in payloads:
        if x in seen:
            continue
        seen.add(x)
        out.append(GDTransition("create", p, SimpleBlock(p, idx, x)))
    for q in c.agents:
        if q == p:
            continue
        for b in sorted(c.states[q] - state):
            if b.creator == p:
                continue
            if b.index >= 2 and not any(
                x.creator == b.creator and x.index == b.index - 1 for x in state
            ):
                continue
            out.append(GDTransition("sent", p, b, source=q))
    return out


def ad_apply(c: GDConfig, t: GDTransition) -> GDConfig:
    why = ad_transition_enabled(c, t)
    if why is not None:
        raise TransitionError(f"transition not enabled: {why}")
    return c.with_block(t.actor, t.block)


# -- dependency graphs --------------------------------------------------------

# A vertex is a block occurrence: (block, holder).
Occurrence = tuple[SimpleBlock, AgentId]


@dataclass
class DependencyGraph:
    """Directed dependencies between block occurrences.

    deps[v] holds everything v depends on: for a received occurrence, the
    occurrence it was received from, the two friendship-evidence initials,
    and the predecessor; for a created occurrence, its predecessor.
    receipt_source[v] names the holder the block was received from.
    """

    vertices: set[Occurrence] = field(default_factory=set)
    deps: dict[Occurrence, set[Occurrence]] = field(default_factory=dict)
    receipt_source: dict[Occurrence, AgentId] = field(default_factory=dict)

    def add_edge(self, v: Occurrence, dep: Occurrence) -> None:
        self.deps.setdefault(v, set()).add(dep)

    def is_acyclic(self) -> bool:
        try:
            self.sorted_vertices()
            return True
        except CycleError:
            return False

    def sorted_vertices(self) -> list[Occurrence]:
        return topo_sort(self.vertices, self.deps, tie_key=_occurrence_key)

    def edge_set(self) -> set[tuple[Occurrence, Occurrence]]:
        return {(v, d) for v, ds in self.deps.items() for d in ds}


def _occurrence_key(v: Occurrence) -> tuple:
    block, holder = v
    return (block.creator.data, block.index, holder.data, block.payload or b"")


def _initial_occurrence(creator: AgentId, holder: AgentId) -> Occurrence:
    return (SimpleBlock(creator, 1, None), holder)


def gd_dependency_graph(
    c: GDConfig,
    receipts: dict[Occurrence, AgentId] | None = None,
    prefer_old: GDConfig | None = None,
) -> DependencyGraph | None:
    """Build a concrete dependency graph over c, or None if none exists.

    Without receipt annotations each non-initial block's occurrences grow a
    spanning tree toward the creator, discovered breadth-first through
    mutual-initial evidence, lowest agent id first.  With receipts the
    given sources are used verbatim, so an inconsistent annotation yields a
    cyclic or incomplete graph.  When prefer_old is given, occurrences
    inside it are connected among themselves first, so the result restricted
    to prefer_old is itself a valid dependency graph.
    """
    dg = DependencyGraph()
    holders: dict[SimpleBlock, list[AgentId]] = {}
    for p in c.agents:
        for b in c.states[p]:
            dg.vertices.add((b, p))
            holders.setdefault(b, []).append(p)
    for b, hs in holders.items():
        hs.sort()
        if b.index == 1:
            continue  # initial blocks carry no dependencies
        creator = b.creator
        if creator not in hs:
            return None  # creator never held its own block
        if receipts is not None:
            for p in hs:
                if p == creator:
                    _add_predecessor_edge(dg, b, p)
                    continue
                source = receipts.get((b, p))
                if source is None or source not in hs:
                    return None
                _add_receipt_edges(dg, c, b, p, source)
        else:
            if not _span_block(dg, c, b, hs, prefer_old):
                return None
    return dg


def _add_predecessor_edge(dg: DependencyGraph, b: SimpleBlock, p: AgentId) -> None:
    pred = SimpleBlock(b.creator, b.index - 1, None)
    # the predecessor occurrence exists under completeness; payload unknown,
    # so resolve it among the vertices
    for v in _occurrences_of(dg, b.creator, b.index - 1, p):
        dg.add_edge((b, p), v)
        return
    dg.add_edge((b, p), (pred, p))  # dangling edge; caller's acyclicity check survives


def _occurrences_of(dg: DependencyGraph, creator: AgentId, index: int, holder: AgentId):
    for v in dg.vertices:
        blk, h = v
        if h == holder and blk.creator == creator and blk.index == index:
            yield v


def _add_receipt_edges(
    dg: DependencyGraph, c: GDConfig, b: SimpleBlock, p: AgentId, source: AgentId
) -> None:
    dg.receipt_source[(b, p)] = source
    dg.add_edge((b, p), (b, source))
    dg.add_edge((b, p), _initial_occurrence(source, p))
    dg.add_edge((b, p), _initial_occurrence(p, source))
    _add_predecessor_edge(dg, b, p)


def _span_block(
    dg: DependencyGraph,
    c: GDConfig,
    b: SimpleBlock,
    hs: list[AgentId],
    prefer_old: GDConfig | None,
) -> bool:
    """Breadth-first spanning tree of b's occurrences rooted at the creator."""
    creator = b.creator

    def linked(p: AgentId, q: AgentId, old_only: bool) -> bool:
        cfg = prefer_old if old_only else c
        if cfg is None:
            return False
        sp, sq = cfg.states.get(p), cfg.states.get(q)
        if sp is None or sq is None:
            return False
        return (
            SimpleBlock(q, 1, None) in sp
            and SimpleBlock(p, 1, None) in sq
        )

    def holds_old(p: AgentId) -> bool:
        return prefer_old is not None and b in prefer_old.states.get(p, frozenset())

    reached = {creator}
    frontier = [creator]
    phases = [True, False] if prefer_old is not None else [False]
    for old_only in phases:
        if old_only and not holds_old(creator):
            continue
        while True:
            added = False
            for q in list(frontier):
                for p in hs:
                    if p in reached:
                        continue
                    if old_only and not (holds_old(p) and holds_old(q)):
                        continue
                    if linked(p, q, old_only):
                        _add_receipt_edges(dg, c, b, p, q)
                        reached.add(p)
                        frontier.append(p)
                        added = True
            if not added:
                break
    _add_predecessor_edge(dg, b, creator)
    return len(reached) == len(hs)


def is_dissemination_consistent(
    c: GDConfig, receipts: dict[Occurrence, AgentId] | None = None
) -> bool:
    if not (is_consistent(c) and is_complete(c)):
        return False
    dg = gd_dependency_graph(c, receipts=receipts)
    return dg is not None and dg.is_acyclic()


# -- completion planner --------------------------------------------------------


class PlanError(ModelError):
    def __init__(self, clause: str):
        super().__init__(f"planning precondition violated: {clause}")
        self.clause = clause


def gd_plan(c: GDConfig, c2: GDConfig) -> list[GDTransition]:
    """A transition sequence that replays from c to exactly c2.

    Requires the two configurations to be nested, consistent, complete, and
    dissemination-consistent with nestable dependency graphs; the violated
    clause is reported otherwise.
    """
    if c.agents != c2.agents:
        raise PlanError("agent universes differ")
    if not c2.dominates(c):
        raise PlanError("configurations are not nested")
    for name, cfg in (("source", c), ("target", c2)):
        if not is_consistent(cfg):
            raise PlanError(f"{name} configuration is not consistent")
        if not is_complete(cfg):
            raise PlanError(f"{name} configuration is not complete")
    dg2 = gd_dependency_graph(c2, prefer_old=c)
    if dg2 is None or not dg2.is_acyclic():
        raise PlanError("target configuration is not dissemination-consistent")
    old = {(b, p) for p in c.agents for b in c.states[p]}
    for v in old:
        for dep in dg2.deps.get(v, ()):
            if dep in dg2.vertices and dep not in old:
                raise PlanError(
                    "source does not embed in target dependency graph"
                )
    new = [v for v in dg2.sorted_vertices() if v not in old]
    plan: list[GDTransition] = []
    for b, p in new:
        if b.creator == p:
            plan.append(GDTransition("create", p, b))
        elif b.index == 1:
            plan.append(GDTransition("follow", p, b))
        else:
            plan.append(GDTransition("sent", p, b, source=dg2.receipt_source[(b, p)]))
    return plan


def replay_plan(
    c: GDConfig, plan: Iterable[GDTransition], apply=gd_apply
) -> GDConfig:
    for t in plan:
        c = apply(c, t)
    return c
