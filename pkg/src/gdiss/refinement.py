"""From the blocklace engine down to the simple-block model, executably.

The mapping strips hash pointers, numbers each block by its position on
the creator's self-pointer chain, and ignores outboxes and input buffers.
What the containing theory asks of such a mapping is turned into checks a
test suite can run: the image of the initial configuration is initial,
the mapping is piecemeal and monotone, offers and sends stutter, and
every non-stutter image step is an enabled simple-model transition at its
image source.  The same module houses the blocklace-side dependency
graph, the nested-pair order check, and the completion planner built on
topologically sorting the new block and message occurrences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from . import gd
from .blocklace import Block, Blocklace, BlocklaceError, Ref, ref_creator
from .cgd import (
    BlockMessage,
    CGDConfig,
    CGDLocalState,
    CGDTransition,
    apply_inplace,
    cgd_transition_enabled,
)
from .gd import GDConfig, GDTransition, SimpleBlock
from .graphs import CycleError, topo_sort
from .identity import AgentId


class RefinementError(ValueError):
    pass


# -- the state mapping ---------------------------------------------------------


def sigma_store(store: Blocklace) -> frozenset[SimpleBlock]:
    out = set()
    for block in store:
        out.add(SimpleBlock(block.creator, store.index(block), block.payload))
    return frozenset(out)


def sigma_local(state: CGDLocalState) -> frozenset[SimpleBlock]:
    """Image of one local state; outbox and input buffer vanish."""
    return sigma_store(state.store)


def sigma_config(c: CGDConfig) -> GDConfig:
    return GDConfig(
        agents=c.agents, states={p: sigma_local(c.locals[p]) for p in c.agents}
    )


def check_piecemeal(c: CGDConfig) -> list[str]:
    """The whole-configuration image must equal the agent-by-agent images.

    Each local state is mapped from an isolated copy, so any accidental
    cross-agent dependence in the mapping would surface here.
    """
    whole = sigma_config(c)
    problems = []
    for p in c.agents:
        isolated = sigma_local(c.locals[p].copy())
        if whole.states[p] != isolated:
            problems.append(f"piecemeal identity fails for {p.data[:4].hex()}")
    return problems


def check_up_condition(c1: CGDConfig, c2: CGDConfig) -> list[str]:
    """Componentwise growth must map to componentwise image growth."""
    if not c2.dominates(c1):
        return ["pair is not ordered componentwise"]
    img1, img2 = sigma_config(c1), sigma_config(c2)
    problems = []
    for p in c1.agents:
        if not img1.states[p] <= img2.states[p]:
            problems.append(f"image not monotone at {p.data[:4].hex()}")
    return problems


# -- run mapping -----------------------------------------------------------------

STUTTER_KINDS = {"offer", "send"}


@dataclass
class SigmaStep:
    index: int  # position in the source run
    source: CGDTransition
    image: GDTransition | None  # None for a stutter


@dataclass
class SigmaRunResult:
    steps: list[SigmaStep]
    violations: list[str]

    @property
    def image_run(self) -> list[GDTransition]:
        return [s.image for s in self.steps if s.image is not None]

    @property
    def ok(self) -> bool:
        return not self.violations


def _image_transition(
    image: GDConfig, t: CGDTransition, block: Block, index: int
) -> tuple[GDTransition | None, str | None]:
    """Map one non-stutter step; picks a witness source for a receive."""
    simple = SimpleBlock(block.creator, index, block.payload)
    if t.kind == "create":
        return GDTransition("create", t.actor, simple), None
    if t.kind == "follow":
        return GDTransition("follow", t.actor, simple), None
    if t.kind == "receive":
        for q in image.agents:
            if q == t.actor or simple not in image.states[q]:
                continue
            cand = GDTransition("sent", t.actor, simple, source=q)
            if gd.gd_transition_enabled(image, cand) is None:
                return cand, None
        return None, (
            f"no friend of the receiver holds the image block {simple}"
        )
    return None, f"kind {t.kind!r} should have stuttered"


def sigma_run(
    initial: CGDConfig, transitions: Iterable[CGDTransition]
) -> SigmaRunResult:
    """Map a run stepwise, dropping stutters and replaying the image.

    Replay applies each image transition through the simple-model rules, so
    the result doubles as the local-safety check: any image step that is
    not enabled at its image source is reported as a violation.
    """
    work = initial.copy()
    image = sigma_config(work)
    steps: list[SigmaStep] = []
    violations: list[str] = []
    for i, t in enumerate(transitions):
        apply_inplace(work, t)
        if t.kind in STUTTER_KINDS:
            if sigma_config(work) != image:
                violations.append(f"step {i}: {t.kind} did not stutter")
            steps.append(SigmaStep(i, t, None))
            continue
        store = work.store(t.actor)
        if t.ref is not None:
            block = store.get(t.ref)
        elif t.kind == "create":
            block = store.chain_head(t.actor)  # the block just inserted
        else:
            block = None
        if block is None:
            violations.append(f"step {i}: applied block not found")
            continue
        img_t, why = _image_transition(image, t, block, store.index(block))
        if img_t is None:
            violations.append(f"step {i}: {why}")
            steps.append(SigmaStep(i, t, None))
            continue
        why2 = gd.gd_transition_enabled(image, img_t)
        if why2 is not None:
            violations.append(f"step {i}: image transition not enabled: {why2}")
            steps.append(SigmaStep(i, t, None))
            continue
        image = gd.gd_apply(image, img_t)
        if sigma_config(work) != image:
            violations.append(f"step {i}: image diverges from mapped configuration")
        steps.append(SigmaStep(i, t, img_t))
    # stutter removal must leave no repeated configurations
    for s in steps:
        if s.image is not None and s.source.kind in STUTTER_KINDS:
            violations.append(f"step {s.index}: stutter carried an image")
    return SigmaRunResult(steps=steps, violations=violations)


def check_local_safety(
    initial: CGDConfig, transitions: Iterable[CGDTransition]
) -> SigmaRunResult:
    return sigma_run(initial, transitions)


# -- productivity surrogate ---------------------------------------------------------


@dataclass
class ObligationReport:
    """Image liveness classes still enabled when a finite run is truncated."""

    fired: list[tuple] = field(default_factory=list)
    pending: list[dict] = field(default_factory=list)


def productivity_report(
    initial: CGDConfig, transitions: list[CGDTransition]
) -> ObligationReport:
    result = sigma_run(initial, transitions)
    fired = {t.class_key() for t in result.image_run if t.class_key()}
    final = initial.copy()
    for t in transitions:
        apply_inplace(final, t)
    image = sigma_config(final)
    report = ObligationReport(fired=sorted(fired, key=repr))
    for p in image.agents:
        for t in gd.gd_enabled(image, p):
            key = t.class_key()
            if key is None or key in fired:
                continue
            report.pending.append(
                {"class": key, "still_enabled": True, "fired_in_run": False}
            )
    return report


# -- blocklace-side dependency graphs ---------------------------------------------

# Vertices: ("b", holder, ref) block occurrences, ("m", owner, dest, ref)
# outbox-message occurrences.
Vertex = tuple


def _bv(holder: AgentId, ref: Ref) -> Vertex:
    return ("b", holder.data, ref)


def _mv(owner: AgentId, dest: AgentId, ref: Ref) -> Vertex:
    return ("m", owner.data, dest.data, ref)


@dataclass
class CordialGraph:
    vertices: set[Vertex] = field(default_factory=set)
    deps: dict[Vertex, set[Vertex]] = field(default_factory=dict)
    # chosen source message for each received block occurrence
    receipt_of: dict[Vertex, Vertex] = field(default_factory=dict)

    def add_edge(self, v: Vertex, dep: Vertex) -> None:
        if dep in self.vertices:
            self.deps.setdefault(v, set()).add(dep)

    def sorted_vertices(self) -> list[Vertex]:
        return topo_sort(self.vertices, self.deps, tie_key=_vertex_key)

    def is_acyclic(self) -> bool:
        try:
            self.sorted_vertices()
            return True
        except CycleError:
            return False


def _vertex_key(v: Vertex) -> tuple:
    return tuple(x if isinstance(x, (bytes, int, str)) else repr(x) for x in v)


def cgd_dependency_graph(
    c: CGDConfig, old: CGDConfig | None = None, augment: bool = False
) -> CordialGraph | None:
    """Dependency graph over block and message occurrences, or None.

    Core edges: a message depends on its block at the sender; a received
    block depends on some message addressed to the holder (preferring a
    message already present in `old`); blocks depend on their self-path and,
    for the holder's own blocks, their whole pointer set.  With augment=True
    the graph also carries the evidence and interference edges that make a
    topological replay respect send/receive/create enabledness.
    """
    g = CordialGraph()
    for p in c.agents:
        local = c.locals[p]
        for ref in local.store.refs():
            g.vertices.add(_bv(p, ref))
        for m in local.outbox:
            g.vertices.add(_mv(p, m.destination, m.ref))

    old_msgs: dict[AgentId, set[BlockMessage]] = {}
    if old is not None:
        for p in old.agents:
            old_msgs[p] = set(old.locals[p].outbox)

    for p in c.agents:
        local = c.locals[p]
        store = local.store
        # (i) message -> its block at the sender
        for m in local.outbox:
            g.add_edge(_mv(p, m.destination, m.ref), _bv(p, m.ref))
        for block in store:
            v = _bv(p, block.ref)
            creator = block.creator
            # (iii) closure edges
            for ptr in block.pointers:
                if creator == p or ptr.creator == creator:
                    if ptr.ref in store:
                        g.add_edge(v, _bv(p, ptr.ref))
                    elif creator == p:
                        return None  # own block with a dangling pointer
            if creator == p:
                continue
            # (ii) received block -> some message addressed to p
            source = _pick_message_source(c, old_msgs, p, block.ref)
            if source is None:
                return None
            g.receipt_of[v] = source
            g.add_edge(v, source)
            if augment and not block.is_initial:
                # receive gate: p already followed the creator
                initial = store.initial_of(creator)
                if initial is None:
                    return None
                g.add_edge(v, _bv(p, initial.ref))
    if augment:
        _augment_graph(c, g)
    return g


def _pick_message_source(
    c: CGDConfig,
    old_msgs: dict[AgentId, set[BlockMessage]],
    p: AgentId,
    ref: Ref,
) -> Vertex | None:
    wanted = BlockMessage(p, ref)
    candidates = []
    for q in c.agents:
        if q == p:
            continue
        if wanted in c.locals[q].outbox:
            old = old_msgs.get(q) is not None and wanted in old_msgs[q]
            candidates.append((not old, q.data, q))
    if not candidates:
        return None
    candidates.sort()
    _, _, q = candidates[0]
    return _mv(q, p, ref)


def _follows_witness_edges(
    g: CordialGraph, store, p: AgentId, v: Vertex, q: AgentId, target: AgentId
) -> None:
    """Edges placing one q-block-observes-a-target-block witness before v."""
    best: list[Ref] | None = None
    for w_ref in store.creator_refs(q):
        for t_ref in store.creator_refs(target):
            if not store.observes(w_ref, t_ref):
                continue
            path = store.observation_path(w_ref, t_ref)
            if path is not None and (best is None or (len(path), path) < (len(best), best)):
                best = path
    if best is not None:
        for ref in best:
            g.add_edge(v, _bv(p, ref))


def _augment_graph(c: CGDConfig, g: CordialGraph) -> None:
    """Evidence and interference edges for replayable topological orders."""
    for p in c.agents:
        local = c.locals[p]
        store = local.store
        own_initial = store.initial_of(p)
        for m in local.outbox:
            v = _mv(p, m.destination, m.ref)
            q = m.destination
            block = store.get(m.ref)
            if block is None:
                continue
            if not block.is_initial:
                # sending needs possession of the destination plus either
                # disclosed followership or the standing own-initial offer
                dest_initial = store.initial_of(q)
                if dest_initial is not None:
                    g.add_edge(v, _bv(p, dest_initial.ref))
                if store.follows(q, p):
                    _follows_witness_edges(g, store, p, v, q, p)
                elif own_initial is not None:
                    g.add_edge(v, _mv(p, q, own_initial.ref))
                if block.creator != p:
                    _follows_witness_edges(g, store, p, v, q, block.creator)
            # interference: once p holds a q-block observing the block, the
            # send/offer is disabled, so such blocks must arrive afterwards
            for w_ref in store.creator_refs(q):
                if store.observes(w_ref, m.ref):
                    g.add_edge(_bv(p, w_ref), v)
        # creates must happen before anything they do not observe arrives
        for block in store:
            if block.creator != p or block.is_initial:
                continue
            v = _bv(p, block.ref)
            for other_ref in store.refs():
                if other_ref == block.ref:
                    continue
                if not store.observes(block.ref, other_ref):
                    g.add_edge(_bv(p, other_ref), v)


def is_cordial_consistent(c: CGDConfig) -> bool:
    try:
        _check_shape(c, "configuration")
    except PlanError:
        return False
    g = cgd_dependency_graph(c)
    return g is not None and g.is_acyclic()


# -- the completion planner ---------------------------------------------------------


class PlanError(RefinementError):
    def __init__(self, clause: str):
        super().__init__(f"planning precondition violated: {clause}")
        self.clause = clause


def _check_shape(c: CGDConfig, name: str) -> None:
    for p in c.agents:
        store = c.store(p)
        if not store.is_closed(p):
            raise PlanError(f"{name}: local blocklace of {p.data[:4].hex()} not owner-closed")
        for m in c.locals[p].outbox:
            if m.ref not in store:
                raise PlanError(f"{name}: outbox message without its block")
        for block in store:
            if not block.is_initial and block.ref not in c.store(block.creator):
                raise PlanError(f"{name}: block held away from its creator only")


def cgd_plan(c: CGDConfig, c2: CGDConfig) -> list[CGDTransition]:
    """Transition sequence replaying from c to exactly c2.

    Both configurations must be owner-closed, consistent, componentwise
    nested, and the target's dependency graph must embed the source's
    occurrences without new dependencies; the violated clause is named
    otherwise.
    """
    if c.agents != c2.agents:
        raise PlanError("agent universes differ")
    if not c2.dominates(c):
        raise PlanError("configurations are not nested")
    _check_shape(c, "source")
    _check_shape(c2, "target")
    g = cgd_dependency_graph(c2, old=c, augment=True)
    if g is None:
        raise PlanError("target configuration is not cordial-dissemination-consistent")
    old: set[Vertex] = set()
    for p in c.agents:
        for ref in c.store(p).refs():
            old.add(_bv(p, ref))
        for m in c.locals[p].outbox:
            old.add(_mv(p, m.destination, m.ref))
    for v in old:
        for dep in g.deps.get(v, ()):
            if dep not in old:
                raise PlanError("source does not embed in target dependency graph")
    try:
        order = g.sorted_vertices()
    except CycleError:
        raise PlanError("target dependency graph is cyclic") from None
    agents_by_bytes = {p.data: p for p in c.agents}
    plan: list[CGDTransition] = []
    for v in order:
        if v in old:
            continue
        if v[0] == "b":
            _, holder_b, ref = v
            holder = agents_by_bytes[holder_b]
            block = c2.store(holder)[ref]
            if block.creator == holder:
                plan.append(
                    CGDTransition("create", holder, ref=ref, payload=block.payload)
                )
            else:
                src = g.receipt_of[v]
                sender = agents_by_bytes[src[1]]
                kind = "follow" if block.is_initial else "receive"
                plan.append(CGDTransition(kind, holder, ref=ref, peer=sender))
        else:
            _, owner_b, dest_b, ref = v
            owner = agents_by_bytes[owner_b]
            dest = agents_by_bytes[dest_b]
            block = c2.store(owner)[ref]
            kind = "offer" if block.is_initial else "send"
            plan.append(CGDTransition(kind, owner, ref=ref, peer=dest))
    return plan


def replay_cgd_plan(c: CGDConfig, plan: Iterable[CGDTransition]) -> CGDConfig:
    work = c.copy()
    for t in plan:
        apply_inplace(work, t)
    return work


# -- down-condition helper (test utility) --------------------------------------------


def sigma_inverse(
    image: GDConfig, identities, scheme
) -> CGDConfig:
    """A canonical blocklace configuration mapping onto the given image.

    Blocks are rebuilt in lexicographic-topological order, each pointing at
    the latest known block of every creator, which makes the chain indices
    come out right; messages are added so every foreign block has a source.
    Useful only at test scale.
    """
    from .blocklace import make_block

    cfg = CGDConfig({i.agent_id: i for i in identities}, scheme=scheme)
    order = sorted(
        image.all_blocks(), key=lambda b: (b.index, b.creator.data, b.payload or b"")
    )
    built: dict[SimpleBlock, Block] = {}
    seen: list[SimpleBlock] = []
    for sb in order:
        if sb not in image.states[sb.creator]:
            raise RefinementError("image not invertible: block absent at its creator")
        latest: dict[AgentId, SimpleBlock] = {}
        for prev in seen:
            cur = latest.get(prev.creator)
            if cur is None or prev.index > cur.index:
                latest[prev.creator] = prev
        pointer_blocks = [built[x] for x in latest.values()]
        if sb.index == 1:
            pointer_blocks = []  # initial blocks stay initial
        block = make_block(
            sb.creator,
            sorted(pointer_blocks, key=lambda b: b.ref),
            sb.payload,
            cfg.identities[sb.creator],
            scheme,
        )
        built[sb] = block
        seen.append(sb)
    # insert in index order so self-chains resolve; message every foreign copy
    for sb in order:
        block = built[sb]
        for p in cfg.agents:
            if sb in image.states[p]:
                store = cfg.store(p)
                if block.ref not in store:
                    store.insert(block, validate=False)
                if sb.creator != p:
                    cfg.locals[sb.creator].outbox.add(BlockMessage(p, block.ref))
    return cfg
