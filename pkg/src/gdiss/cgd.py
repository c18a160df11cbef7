"""The cordial dissemination transition system and its per-agent event loop.

Local state is a blocklace plus an outbox of addressed block messages.
Five transition kinds: create (disclose everything you know in a new
block), offer-to-follow and follow (the volitional handshake that moves
initial blocks), send (push a block to a peer you believe needs it), and
receive (absorb a block whose closure you already hold).

Friendship evidence for sending deserves a note.  A peer's followership
can only be learned from its blocks observing yours, but two fresh mutual
followers hold nothing but each other's initial blocks, which observe
nothing; were disclosed observation the only admissible evidence, neither
side could ever send first.  Sending therefore treats a standing offer in
the own outbox as an invitation-in-progress: p sends its own blocks to q
once p follows q and either q's blocks demonstrably observe p's or p has
offered q its initial block.  Relaying a third party's block still
requires disclosed evidence that the destination follows that creator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .blocklace import Block, Blocklace, BlocklaceError, Ref, create_block, ref_creator
from .identity import AgentId, AgentIdentity, MOCK_SCHEME, SignatureScheme, hash_bytes


class EngineError(ValueError):
    pass


class TransitionError(EngineError):
    """A transition was applied without being enabled."""


@dataclass(frozen=True)
class BlockMessage:
    destination: AgentId
    ref: Ref

    def sort_key(self) -> tuple:
        return (self.destination.data, self.ref)


@dataclass
class CGDLocalState:
    """One agent's formal state plus the realization-level input buffer."""

    store: Blocklace
    outbox: set[BlockMessage] = field(default_factory=set)
    inbox: dict[Ref, Block] = field(default_factory=dict)

    def copy(self) -> "CGDLocalState":
        return CGDLocalState(
            store=self.store.copy(), outbox=set(self.outbox), inbox=dict(self.inbox)
        )

    def state_digest(self) -> bytes:
        """Digest of the formal (blocklace, outbox) pair; the inbox is not state."""
        refs = b"".join(sorted(self.store.refs()))
        msgs = b"".join(m.destination.data + m.ref for m in sorted(self.outbox, key=BlockMessage.sort_key))
        return hash_bytes(refs + b"|" + msgs)


@dataclass(frozen=True)
class CGDTransition:
    kind: str  # "create" | "offer" | "follow" | "send" | "receive"
    actor: AgentId
    ref: Ref | None = None  # block at stake; for create, the expected result
    peer: AgentId | None = None  # destination (offer/send) or outbox owner (follow/receive)
    payload: bytes | None = None  # create only

    def class_key(self) -> tuple | None:
        """Liveness class; the follow handshake is volitional and has none."""
        if self.kind == "create":
            return (self.actor, "create")
        if self.kind == "send":
            return (self.actor, "send", self.peer, self.ref)
        if self.kind == "receive":
            return (self.actor, "receive", self.ref)
        return None


class CGDConfig:
    """Indexed family of local states, mutable with explicit copy.

    Identities ride along so that create transitions can sign blocks during
    replay.  apply() mutates in place; use copy() to branch.
    """

    def __init__(
        self,
        identities: dict[AgentId, AgentIdentity],
        scheme: SignatureScheme = MOCK_SCHEME,
    ):
        self.agents: tuple[AgentId, ...] = tuple(sorted(identities))
        self.identities = identities
        self.scheme = scheme
        self.locals: dict[AgentId, CGDLocalState] = {
            a: CGDLocalState(store=Blocklace(owner=a, scheme=scheme)) for a in self.agents
        }
        # Delivery cache: destination -> insertion-ordered (sender, ref) pairs
        # not yet absorbed.  Pure derived state; rebuilt on demand.
        self._undelivered: dict[AgentId, dict[tuple[AgentId, Ref], None]] = {
            a: {} for a in self.agents
        }

    def local(self, p: AgentId) -> CGDLocalState:
        return self.locals[p]

    def store(self, p: AgentId) -> Blocklace:
        return self.locals[p].store

    def copy(self) -> "CGDConfig":
        other = CGDConfig.__new__(CGDConfig)
        other.agents = self.agents
        other.identities = self.identities
        other.scheme = self.scheme
        other.locals = {a: s.copy() for a, s in self.locals.items()}
        other._undelivered = {a: dict(d) for a, d in self._undelivered.items()}
        return other

    def union_refs(self) -> set[Ref]:
        out: set[Ref] = set()
        for s in self.locals.values():
            out |= s.store.refs()
        return out

    def resolve(self, ref: Ref) -> Block | None:
        for s in self.locals.values():
            b = s.store.get(ref)
            if b is not None:
                return b
        return None

    def dominates(self, other: "CGDConfig") -> bool:
        """Componentwise: blocklace and outbox both grow."""
        if self.agents != other.agents:
            return False
        for a in self.agents:
            mine, theirs = self.locals[a], other.locals[a]
            if not theirs.store.refs() <= mine.store.refs():
                return False
            if not theirs.outbox <= mine.outbox:
                return False
        return True

    def state_digest(self, p: AgentId) -> bytes:
        return self.locals[p].state_digest()

    def config_digest(self) -> bytes:
        return hash_bytes(b"".join(self.state_digest(a) for a in self.agents))


def initial_config(
    identities: Iterable[AgentIdentity], scheme: SignatureScheme = MOCK_SCHEME
) -> CGDConfig:
    return CGDConfig({i.agent_id: i for i in identities}, scheme=scheme)


# -- knowledge predicates ------------------------------------------------------


def knows_block(c: CGDConfig, p: AgentId, ref: Ref) -> bool:
    return ref in c.store(p)


def knows_q_knows(c: CGDConfig, p: AgentId, q: AgentId, ref: Ref) -> bool:
    """p holds certified evidence that q holds the block.

    Certified means observation along pointers q-closedness forced q to
    resolve; see Blocklace.certified_refs for why plain observation would
    suppress sends of blocks the peer never actually received.
    """
    return c.store(p).agent_certainly_knows(q, ref)


def knows_follows(c: CGDConfig, p: AgentId, q: AgentId, q2: AgentId) -> bool:
    """p holds a q-block observing a q2-block."""
    return c.store(p).follows(q, q2)


def knows_friends(c: CGDConfig, p: AgentId, q: AgentId, q2: AgentId) -> bool:
    return knows_follows(c, p, q, q2) and knows_follows(c, p, q2, q)


def send_evidence(c: CGDConfig, p: AgentId, q: AgentId) -> bool:
    """p's grounds for treating q as a friend worth sending to."""
    local = c.locals[p]
    store = local.store
    if not store.has_creator(q):
        return False  # p does not follow q
    if store.follows(q, p):
        return True  # q's blocks observe p's
    own_initial = store.initial_of(p)
    if own_initial is None:
        return False
    return BlockMessage(q, own_initial.ref) in local.outbox


# -- enabledness ----------------------------------------------------------------


def _expected_create(c: CGDConfig, p: AgentId, payload: bytes | None) -> Block:
    return create_block(c.store(p), c.identities[p], payload)


def cgd_transition_enabled(c: CGDConfig, t: CGDTransition) -> str | None:
    """None when enabled, otherwise the violated clause."""
    p = t.actor
    if p not in c.locals:
        return "actor not in universe"
    local = c.locals[p]
    store = local.store

    if t.kind == "create":
        if not store.has_creator(p):
            if len(store) > 0:
                return "first own block requires an empty store"
            if t.payload is not None:
                return "initial block must have empty payload"
        else:
            if t.payload is None:
                return "non-initial block requires a payload"
            if store.chain_head(p) is None:
                return "own chain is broken"
        try:
            block = _expected_create(c, p, t.payload)
        except BlocklaceError as e:
            return str(e)
        if t.ref is not None and t.ref != block.ref:
            return "create does not reproduce the recorded block"
        return None

    if t.kind == "offer":
        q = t.peer
        if q is None or q not in c.locals or q == p:
            return "offer destination must be another agent in the universe"
        block = store.get(t.ref) if t.ref else None
        if block is None:
            return "offered block not held"
        if not block.is_initial:
            return "offered block is not initial"
        if store.agent_certainly_knows(q, block.ref):
            return "destination already observes the block"
        if BlockMessage(q, block.ref) in local.outbox:
            return "already offered"
        return None

    if t.kind == "follow":
        q = t.peer
        if q is None or q not in c.locals or q == p:
            return "follow source must be another agent in the universe"
        if t.ref is None or t.ref in store:
            return "block already held"
        peer_local = c.locals[q]
        if BlockMessage(p, t.ref) not in peer_local.outbox:
            return "no such message addressed to actor"
        block = peer_local.store.get(t.ref)
        if block is None:
            return "message block missing from sender store"
        if not block.is_initial:
            return "follow applies to initial blocks only"
        return None

    if t.kind == "send":
        q = t.peer
        if q is None or q not in c.locals or q == p:
            return "send destination must be another agent in the universe"
        block = store.get(t.ref) if t.ref else None
        if block is None:
            return "block not held"
        if BlockMessage(q, block.ref) in local.outbox:
            return "already sent"
        if not send_evidence(c, p, q):
            return "no friendship evidence for destination"
        if block.creator != p and not knows_follows(c, p, q, block.creator):
            return "no evidence destination follows the creator"
        if knows_q_knows(c, p, q, block.ref):
            return "destination already known to know the block"
        return None

    if t.kind == "receive":
        q = t.peer
        if q is None or q not in c.locals or q == p:
            return "receive source must be another agent in the universe"
        if t.ref is None or t.ref in store:
            return "block already held"
        peer_local = c.locals[q]
        if BlockMessage(p, t.ref) not in peer_local.outbox:
            return "no such message addressed to actor"
        block = peer_local.store.get(t.ref)
        if block is None:
            return "message block missing from sender store"
        if block.is_initial:
            return "initial blocks arrive through the follow handshake"
        if not store.has_creator(block.creator):
            return "actor does not follow the creator"
        if not store.would_close(block):
            return "closure of the block is not held"
        return None

    return f"unknown kind {t.kind!r}"


def cgd_enabled(
    c: CGDConfig,
    p: AgentId,
    payloads: Iterable[bytes | None] = (),
) -> list[CGDTransition]:
    """Transitions available to p, in canonical order.

    Creation candidates are enumerated from the given payload pool; the
    initial block needs no payload and is offered whenever the store is
    still empty.
    """
    out: list[CGDTransition] = []
    local = c.locals[p]
    store = local.store
    others = [q for q in c.agents if q != p]

    if not store.has_creator(p):
        if len(store) == 0:
            block = _expected_create(c, p, None)
            out.append(CGDTransition("create", p, ref=block.ref, payload=None))
    else:
        seen: set[bytes | None] = set()
        for x in payloads:
            if x is None or x in seen:
                continue
            seen.add(x)
            block = _expected_create(c, p, x)
            out.append(CGDTransition("create", p, ref=block.ref, payload=x))

    all_sorted = store.sorted_blocks()
    initials = [b for b in all_sorted if b.is_initial]
    for q in others:
        for b in initials:
            if store.agent_certainly_knows(q, b.ref):
                continue
            if BlockMessage(q, b.ref) in local.outbox:
                continue
            out.append(CGDTransition("offer", p, ref=b.ref, peer=q))

    for q in others:
        if not send_evidence(c, p, q):
            continue
        for b in all_sorted:
            if BlockMessage(q, b.ref) in local.outbox:
                continue
            if b.creator != p and not knows_follows(c, p, q, b.creator):
                continue
            if knows_q_knows(c, p, q, b.ref):
                continue
            out.append(CGDTransition("send", p, ref=b.ref, peer=q))

    und = c._undelivered[p]
    for (sender, ref) in list(und):
        if ref in store:
            del und[(sender, ref)]
            continue
        block = c.locals[sender].store.get(ref)
        if block is None:
            continue
        if block.is_initial:
            out.append(CGDTransition("follow", p, ref=ref, peer=sender))
        else:
            if store.blocks_by(block.creator) and store.would_close(block):
                out.append(CGDTransition("receive", p, ref=ref, peer=sender))
    return out


# -- application -----------------------------------------------------------------


def apply_inplace(c: CGDConfig, t: CGDTransition) -> CGDConfig:
    """Validate and mutate; the mutated config is returned for chaining."""
    why = cgd_transition_enabled(c, t)
    if why is not None:
        raise TransitionError(f"transition not enabled: {why}")
    p = t.actor
    local = c.locals[p]
    if t.kind == "create":
        block = _expected_create(c, p, t.payload)
        local.store.insert(block, validate=False)
    elif t.kind in ("offer", "send"):
        local.outbox.add(BlockMessage(t.peer, t.ref))
        c._undelivered[t.peer][(p, t.ref)] = None
    elif t.kind in ("follow", "receive"):
        block = c.locals[t.peer].store[t.ref]
        local.store.insert(block, validate=True)
        c._undelivered[p].pop((t.peer, t.ref), None)
    return c


def cgd_apply(c: CGDConfig, t: CGDTransition) -> CGDConfig:
    """Pure form: leaves c untouched and returns the successor."""
    return apply_inplace(c.copy(), t)


# -- the per-agent event loop -----------------------------------------------------


@dataclass
class LoopEvent:
    """What can happen to a running agent between drains."""

    kind: str  # "payload" | "offer" | "accept" | "block"
    payload: bytes | None = None
    peer: AgentId | None = None
    ref: Ref | None = None
    block: Block | None = None


class AgentLoop:
    """Single-agent realization of the engine over an incoming block stream.

    Blocks may arrive in any order; unabsorbable ones wait in a bounded
    input buffer until their closure fills in.  Every emission the loop
    produces corresponds to an enabled engine transition at the induced
    configuration, which the simulation harness cross-checks.
    """

    def __init__(
        self,
        identity: AgentIdentity,
        scheme: SignatureScheme = MOCK_SCHEME,
        inbox_limit: int = 4096,
    ):
        self.identity = identity
        self.agent_id = identity.agent_id
        self.store = Blocklace(owner=identity.agent_id, scheme=scheme)
        self.accepted: set[AgentId] = set()
        self.out_log: set[BlockMessage] = set()
        self.inbox: dict[Ref, Block] = {}
        self.inbox_limit = inbox_limit
        self.dropped: list[Ref] = []
        self.store.insert(create_block(self.store, identity, None), validate=False)

    # -- event entry points

    def on_payload(self, payload: bytes) -> list[tuple[AgentId, Block]]:
        """Create the next block and push it to everyone worth telling."""
        block = create_block(self.store, self.identity, payload)
        self.store.insert(block, validate=False)
        return self._forward(block)

    def on_offer_decision(self, peer: AgentId, ref: Ref) -> list[tuple[AgentId, Block]]:
        block = self.store.get(ref)
        if block is None or not block.is_initial:
            return []
        if self.store.agent_certainly_knows(peer, ref):
            return []
        msg = BlockMessage(peer, ref)
        if msg in self.out_log:
            return []
        self.out_log.add(msg)
        # a standing own offer unlocks sends toward the invitee
        return [(peer, block)] + self._rescan_toward(peer)

    def on_accept_decision(self, creator: AgentId) -> None:
        self.accepted.add(creator)

    def on_block(self, block: Block) -> None:
        """Buffer an inbound block; absorption happens at the next drain."""
        if block.ref in self.store or block.ref in self.inbox:
            return
        if len(self.inbox) >= self.inbox_limit:
            self._evict()
        self.inbox[block.ref] = block

    def drain(self) -> tuple[list[Block], list[tuple[AgentId, Block]]]:
        """Absorb everything absorbable, forwarding each absorbed block."""
        absorbed: list[Block] = []
        emissions: list[tuple[AgentId, Block]] = []
        progress = True
        while progress:
            progress = False
            for ref in sorted(self.inbox):
                block = self.inbox[ref]
                if ref in self.store:
                    del self.inbox[ref]
                    continue
                if not self._absorbable(block):
                    continue
                del self.inbox[ref]
                self.store.insert(block, validate=True)
                absorbed.append(block)
                emissions.extend(self._forward(block))
                # the absorbed block may disclose what its creator follows,
                # unlocking sends of older blocks toward that creator
                emissions.extend(self._rescan_toward(block.creator))
                progress = True
        return absorbed, emissions

    # -- internals

    def _absorbable(self, block: Block) -> bool:
        if block.is_initial:
            return block.creator in self.accepted
        if not self.store.has_creator(block.creator):
            return False
        return self.store.would_close(block)

    def _evict(self) -> None:
        for ref in list(self.inbox):
            if not self._absorbable(self.inbox[ref]):
                del self.inbox[ref]
                self.dropped.append(ref)
                return
        ref = next(iter(self.inbox))
        del self.inbox[ref]
        self.dropped.append(ref)

    def _send_evidence(self, q: AgentId) -> bool:
        if not self.store.has_creator(q):
            return False
        if self.store.follows(q, self.agent_id):
            return True
        own_initial = self.store.initial_of(self.agent_id)
        return own_initial is not None and BlockMessage(q, own_initial.ref) in self.out_log

    def _sendable(self, q: AgentId, block: Block) -> bool:
        if q == self.agent_id or BlockMessage(q, block.ref) in self.out_log:
            return False
        if not self._send_evidence(q):
            return False
        if block.creator != self.agent_id and not self.store.follows(q, block.creator):
            return False
        return not self.store.agent_certainly_knows(q, block.ref)

    def _forward(self, block: Block) -> list[tuple[AgentId, Block]]:
        """Cordiality: push to peers that follow the creator and lack the block."""
        out: list[tuple[AgentId, Block]] = []
        peers = sorted({b.creator for b in self.store}, key=lambda a: a.data)
        for q in peers:
            if self._sendable(q, block):
                self.out_log.add(BlockMessage(q, block.ref))
                out.append((q, block))
        return out

    def _rescan_toward(self, q: AgentId) -> list[tuple[AgentId, Block]]:
        if q == self.agent_id:
            return []
        out: list[tuple[AgentId, Block]] = []
        for block in self.store.sorted_blocks():
            if block.is_initial and block.creator != self.agent_id:
                continue  # foreign initials travel by explicit offers
            if self._sendable(q, block):
                self.out_log.add(BlockMessage(q, block.ref))
                out.append((q, block))
        return out
