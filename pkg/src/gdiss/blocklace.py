"""The blocklace: a store of signed, hash-linked blocks.

Blocks form a DAG through signed hash pointers.  The store keeps
incremental reachability ("observes") caches so that the predicates the
dissemination engine hammers on every step — who observes what, who
follows whom, is the store closed for its owner — are set lookups rather
than graph walks.  Blocks are immutable and shared freely between store
copies; the caches are copied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import wire
from .identity import AgentId, AgentIdentity, MOCK_SCHEME, SignatureScheme

# A block is keyed by creator and content digest; the key is the
# concatenation of both so it hashes as a single interned bytes object.
Ref = bytes


def make_ref(creator: AgentId, digest: bytes) -> Ref:
    return creator.data + digest


def ref_creator(ref: Ref) -> AgentId:
    return AgentId(ref[:32])


@dataclass(frozen=True)
class SignedPointer:
    """A copy of the pointed block's signed self-hash."""

    creator: AgentId
    digest: bytes
    signature: bytes

    @property
    def ref(self) -> Ref:
        return make_ref(self.creator, self.digest)


@dataclass(frozen=True)
class Block:
    creator: AgentId
    pointers: tuple[SignedPointer, ...]
    payload: bytes | None
    digest: bytes
    signature: bytes
    ref: Ref = field(default=b"", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "ref", make_ref(self.creator, self.digest))

    @property
    def is_initial(self) -> bool:
        return not self.pointers

    def self_pointers(self) -> list[SignedPointer]:
        return [p for p in self.pointers if p.creator == self.creator]

    def self_pointer(self) -> SignedPointer | None:
        """The unique own-creator pointer, or None for an initial block."""
        own = self.self_pointers()
        if not own:
            return None
        if len(own) > 1:
            raise BlocklaceError(f"block {self.digest.hex()[:8]} has {len(own)} self-pointers")
        return own[0]

    def __repr__(self) -> str:
        kind = "initial " if self.is_initial else ""
        return f"Block({kind}{self.creator.data[:4].hex()}…/{self.digest[:4].hex()}…)"


class BlocklaceError(ValueError):
    pass


def make_block(
    creator: AgentId,
    pointer_blocks: list[Block],
    payload: bytes | None,
    identity: AgentIdentity,
    scheme: SignatureScheme,
) -> Block:
    """Assemble and sign a block pointing at the given blocks."""
    if identity.agent_id != creator:
        raise BlocklaceError("identity does not match creator")
    triples = [(b.creator, b.digest, b.signature) for b in pointer_blocks]
    triples = wire.sort_pointer_triples(triples)
    if not triples and payload is not None:
        raise BlocklaceError("initial block must have empty payload")
    if triples and payload is None:
        raise BlocklaceError("non-initial block requires a payload")
    digest = wire.block_digest(triples, payload)
    signature = scheme.sign(digest, identity)
    pointers = tuple(SignedPointer(c, d, s) for c, d, s in triples)
    return Block(creator=creator, pointers=pointers, payload=payload, digest=digest, signature=signature)


class Blocklace:
    """Mutable add-only block store with reachability caches.

    Single-writer, multi-reader: mutate from one thread, copy() to branch.
    When constructed with an owner, the store tracks its own
    owner-closedness incrementally (no dangling self-pointers, no dangling
    pointers out of the owner's blocks).
    """

    def __init__(self, owner: AgentId | None = None, scheme: SignatureScheme = MOCK_SCHEME):
        self.owner = owner
        self.scheme = scheme
        self._blocks: dict[Ref, Block] = {}
        self._by_creator: dict[AgentId, set[Ref]] = {}
        self._reach: dict[Ref, set[Ref]] = {}
        self._agent_reach: dict[AgentId, set[Ref]] = {}
        self._pointed_by: dict[Ref, set[Ref]] = {}
        self._roots: set[Ref] = set()
        self._index: dict[Ref, int | None] = {}
        # (block ref, missing target ref) pairs that violate owner-closedness
        self._bad_dangling: set[tuple[Ref, Ref]] = set()
        self._version = 0
        self._cert_cache: dict[AgentId, tuple[int, set[Ref]]] = {}

    # -- basic container protocol ------------------------------------

    def __len__(self) -> int:
        return len(self._blocks)

    def __contains__(self, ref: Ref) -> bool:
        return ref in self._blocks

    def __iter__(self):
        return iter(self._blocks.values())

    def get(self, ref: Ref) -> Block | None:
        return self._blocks.get(ref)

    def __getitem__(self, ref: Ref) -> Block:
        return self._blocks[ref]

    def refs(self) -> set[Ref]:
        return set(self._blocks)

    def sorted_blocks(self) -> list[Block]:
        return [self._blocks[r] for r in sorted(self._blocks)]

    def blocks_by(self, creator: AgentId) -> list[Block]:
        return [self._blocks[r] for r in sorted(self._by_creator.get(creator, ()))]

    def has_creator(self, creator: AgentId) -> bool:
        return bool(self._by_creator.get(creator))

    def creator_refs(self, creator: AgentId) -> list[Ref]:
        return sorted(self._by_creator.get(creator, ()))

    def observation_path(self, src: Ref, dst: Ref) -> list[Ref] | None:
        """One pointer path from src to dst within the store, or None."""
        if src not in self._blocks:
            return None
        if src == dst:
            return [src]
        parent: dict[Ref, Ref] = {src: src}
        frontier = [src]
        while frontier:
            nxt: list[Ref] = []
            for cur in sorted(frontier):
                for ptr in self._blocks[cur].pointers:
                    t = ptr.ref
                    if t in parent or t not in self._blocks:
                        continue
                    parent[t] = cur
                    if t == dst:
                        path = [t]
                        while path[-1] != src:
                            path.append(parent[path[-1]])
                        return list(reversed(path))
                    nxt.append(t)
            frontier = nxt
        return None

    def initial_of(self, creator: AgentId) -> Block | None:
        """The creator's initial block here, lowest ref if equivocated."""
        best: Block | None = None
        for ref in self._by_creator.get(creator, ()):
            block = self._blocks[ref]
            if block.is_initial and (best is None or ref < best.ref):
                best = block
        return best

    def copy(self) -> "Blocklace":
        other = Blocklace(owner=self.owner, scheme=self.scheme)
        other._blocks = dict(self._blocks)
        other._by_creator = {k: set(v) for k, v in self._by_creator.items()}
        other._reach = {k: set(v) for k, v in self._reach.items()}
        other._agent_reach = {k: set(v) for k, v in self._agent_reach.items()}
        other._pointed_by = {k: set(v) for k, v in self._pointed_by.items()}
        other._roots = set(self._roots)
        other._index = dict(self._index)
        other._bad_dangling = set(self._bad_dangling)
        other._version = self._version
        other._cert_cache = dict(self._cert_cache)
        return other

    # -- insertion -----------------------------------------------------

    def insert(self, block: Block, validate: bool = True) -> bool:
        """Add a block; returns False if it was already present.

        Validation re-derives the digest and checks every signature, so an
        invalid block is rejected at the store boundary, never stored.
        """
        ref = block.ref
        if ref in self._blocks:
            return False
        if validate:
            self._validate(block)
        self._blocks[ref] = block
        self._by_creator.setdefault(block.creator, set()).add(ref)

        reach = {ref}
        for ptr in block.pointers:
            target = ptr.ref
            self._pointed_by.setdefault(target, set()).add(ref)
            self._roots.discard(target)
            if target in self._blocks:
                reach |= self._reach[target]
            elif self.owner is not None and (
                ptr.creator == self.owner or ptr.creator == block.creator
            ):
                self._bad_dangling.add((ref, target))
        self._reach[ref] = reach
        self._agent_reach.setdefault(block.creator, set()).update(reach)

        if not self._pointed_by.get(ref):
            self._roots.add(ref)
        self._index[ref] = self._compute_index(block)
        self._version += 1
        # This block may resolve pointers that were dangling before it
        # arrived: extend ancestors' reach and repair broken self-chains.
        if self._pointed_by.get(ref):
            self._bad_dangling = {bd for bd in self._bad_dangling if bd[1] != ref}
            self._propagate_reach(ref)
            self._repair_indices(ref)
        return True

    def _validate(self, block: Block) -> None:
        if not block.pointers and block.payload is not None:
            raise BlocklaceError("initial block must have empty payload")
        if block.pointers and block.payload is None:
            raise BlocklaceError("non-initial block requires a payload")
        triples = [(p.creator, p.digest, p.signature) for p in block.pointers]
        if triples != wire.sort_pointer_triples(triples):
            raise BlocklaceError("pointers not in canonical order")
        if wire.block_digest(triples, block.payload) != block.digest:
            raise BlocklaceError("block digest does not match content")
        if not self.scheme.verify(block.digest, block.signature, block.creator):
            raise BlocklaceError("block signature rejected")
        for ptr in block.pointers:
            if not self.scheme.verify(ptr.digest, ptr.signature, ptr.creator):
                raise BlocklaceError("pointer signature rejected")

    def _propagate_reach(self, start: Ref) -> None:
        pending = [start]
        while pending:
            ref = pending.pop()
            delta = self._reach[ref]
            for parent in self._pointed_by.get(ref, ()):
                if parent not in self._blocks:
                    continue
                parent_reach = self._reach[parent]
                if delta - parent_reach:
                    parent_reach |= delta
                    self._agent_reach[self._blocks[parent].creator] |= delta
                    pending.append(parent)

    def _compute_index(self, block: Block) -> int | None:
        if block.is_initial:
            return 1
        own = block.self_pointers()
        if len(own) != 1:
            return None
        prev = self._index.get(own[0].ref)
        return prev + 1 if prev is not None else None

    def _repair_indices(self, start: Ref) -> None:
        pending = [start]
        while pending:
            ref = pending.pop()
            if self._index.get(ref) is None:
                continue
            for parent in self._pointed_by.get(ref, ()):
                block = self._blocks.get(parent)
                if block is None or self._index.get(parent) is not None:
                    continue
                fixed = self._compute_index(block)
                if fixed is not None:
                    self._index[parent] = fixed
                    pending.append(parent)

    # -- queries -------------------------------------------------------

    def roots(self) -> list[Block]:
        """Blocks nothing in the store points at."""
        return [self._blocks[r] for r in sorted(self._roots)]

    def observes(self, b: Block | Ref, b2: Block | Ref) -> bool:
        """Reflexive pointer reachability within this store."""
        ref = b if isinstance(b, bytes) else b.ref
        ref2 = b2 if isinstance(b2, bytes) else b2.ref
        reach = self._reach.get(ref)
        if reach is None:
            raise BlocklaceError("observes: block not in store")
        return ref2 in reach

    def agent_observes(self, q: AgentId, b: Block | Ref) -> bool:
        ref = b if isinstance(b, bytes) else b.ref
        return ref in self._agent_reach.get(q, ())

    def certified_refs(self, q: AgentId) -> set[Ref]:
        """Refs provably held by q, judging from q's blocks here.

        Plain observation overshoots: a q-block can reach a block through
        pointers q itself never resolved, since foreign blocks are allowed
        dangling non-self pointers.  This walk follows only edges that
        q-closedness forces q to have resolved: every pointer of a q-created
        block, self-pointers, and pointers at q-created blocks.  A false
        "q already knows it" here would suppress a send forever, so the
        cordiality predicates use this certified form.
        """
        cached = self._cert_cache.get(q)
        if cached is not None and cached[0] == self._version:
            return cached[1]
        known: set[Ref] = set()
        frontier = list(self._by_creator.get(q, ()))
        known.update(frontier)
        while frontier:
            cur = frontier.pop()
            block = self._blocks[cur]
            for ptr in block.pointers:
                t = ptr.ref
                if t in known or t not in self._blocks:
                    continue
                if (
                    block.creator == q
                    or ptr.creator == block.creator
                    or ptr.creator == q
                ):
                    known.add(t)
                    frontier.append(t)
        self._cert_cache[q] = (self._version, known)
        return known

    def agent_certainly_knows(self, q: AgentId, b: Block | Ref) -> bool:
        ref = b if isinstance(b, bytes) else b.ref
        if ref not in self._agent_reach.get(q, ()):
            return False  # certified reach is a subset of plain reach
        return ref in self.certified_refs(q)

    def follows(self, q: AgentId, q2: AgentId) -> bool:
        """Some q-block here observes some q2-block."""
        reach = self._agent_reach.get(q)
        targets = self._by_creator.get(q2)
        if not reach or not targets:
            return False
        if len(targets) < len(reach):
            return any(t in reach for t in targets)
        return not reach.isdisjoint(targets)

    def friend(self, p: AgentId, q: AgentId) -> bool:
        """p has evidence that q follows p."""
        return self.follows(q, p)

    def is_closed(self, owner: AgentId) -> bool:
        """No dangling self-pointers, no dangling pointers from owner's blocks."""
        if owner == self.owner:
            return not self._bad_dangling
        for block in self._blocks.values():
            for ptr in block.pointers:
                if ptr.ref in self._blocks:
                    continue
                if ptr.creator == owner or ptr.creator == block.creator:
                    return False
        return True

    def closure_refs(self, ref: Ref, owner: AgentId) -> set[Ref]:
        """Refs of the minimal owner-closed set containing ref.

        Follows self-pointers of every block and all pointers of the
        owner's blocks; raises naming the first unresolvable pointer.
        """
        if ref not in self._blocks:
            raise BlocklaceError(f"closure: block {ref[32:36].hex()}… not in store")
        required = {ref}
        queue = [ref]
        while queue:
            cur = queue.pop()
            block = self._blocks.get(cur)
            if block is None:
                raise BlocklaceError(
                    f"closure: dangling pointer to {ref_creator(cur).data[:4].hex()}…/"
                    f"{cur[32:36].hex()}…"
                )
            for ptr in block.pointers:
                if ptr.creator != block.creator and ptr.creator != owner and block.creator != owner:
                    continue
                if ptr.ref not in required:
                    required.add(ptr.ref)
                    queue.append(ptr.ref)
        return required

    def p_closure(self, b: Block | Ref, owner: AgentId) -> "Blocklace":
        """Sub-store holding the minimal owner-closed set containing b."""
        ref = b if isinstance(b, bytes) else b.ref
        sub = Blocklace(owner=owner, scheme=self.scheme)
        refs = self.closure_refs(ref, owner)
        for r in self._topo_order(refs):
            sub.insert(self._blocks[r], validate=False)
        return sub

    def would_close(self, block: Block) -> bool:
        """True if the store plus this block is owner-closed.

        Requires an owner.  The incoming block's self- and owner-created
        pointers must resolve here, and any previously dangling pointer must
        be the one this block resolves.
        """
        if self.owner is None:
            raise BlocklaceError("would_close needs an owned store")
        for _, target in self._bad_dangling:
            if target != block.ref:
                return False
        for ptr in block.pointers:
            if ptr.ref in self._blocks:
                continue
            if ptr.creator == self.owner or ptr.creator == block.creator:
                return False
        return True

    def index(self, b: Block | Ref) -> int:
        """1-based position on the creator's self-pointer chain."""
        ref = b if isinstance(b, bytes) else b.ref
        if ref not in self._blocks:
            raise BlocklaceError("index: block not in store")
        idx = self._index[ref]
        if idx is None:
            raise BlocklaceError("index: broken self-path")
        return idx

    def chain_head(self, creator: AgentId) -> Block | None:
        """The creator's highest-indexed block here, if any chain exists."""
        best: Block | None = None
        best_idx = 0
        for ref in self._by_creator.get(creator, ()):
            idx = self._index.get(ref)
            if idx is not None and idx > best_idx:
                best_idx = idx
                best = self._blocks[ref]
        return best

    def equivocations(self) -> list[tuple[Block, Block]]:
        """Pairs of distinct same-creator blocks sharing a self-predecessor."""
        groups: dict[tuple[AgentId, Ref | None], list[Ref]] = {}
        for ref, block in self._blocks.items():
            own = block.self_pointers()
            if len(own) > 1:
                continue
            key = (block.creator, own[0].ref if own else None)
            groups.setdefault(key, []).append(ref)
        out = []
        for refs in groups.values():
            refs.sort()
            for i in range(len(refs)):
                for j in range(i + 1, len(refs)):
                    out.append((self._blocks[refs[i]], self._blocks[refs[j]]))
        return out

    # -- serialization ---------------------------------------------------

    def _topo_order(self, refs: set[Ref] | None = None) -> list[Ref]:
        """Pointees before pointers, ties broken by ref bytes."""
        universe = refs if refs is not None else set(self._blocks)
        indeg: dict[Ref, int] = {}
        children: dict[Ref, list[Ref]] = {}
        for r in universe:
            block = self._blocks[r]
            count = 0
            for ptr in block.pointers:
                if ptr.ref in universe:
                    count += 1
                    children.setdefault(ptr.ref, []).append(r)
            indeg[r] = count
        ready = sorted(r for r in universe if indeg[r] == 0)
        out: list[Ref] = []
        while ready:
            cur = ready.pop(0)
            out.append(cur)
            added = False
            for child in children.get(cur, ()):
                indeg[child] -= 1
                if indeg[child] == 0:
                    ready.append(child)
                    added = True
            if added:
                ready.sort()
        if len(out) != len(universe):
            raise BlocklaceError("cycle detected in blocklace")
        return out

    def encode_block(self, block: Block) -> bytes:
        triples = [(p.creator, p.digest, p.signature) for p in block.pointers]
        return wire.encode_block_fields(
            block.creator, triples, block.payload, block.signature, block.digest
        )

    def dump(self, path: str) -> None:
        """Write newline-delimited hex-encoded blocks, pointees first."""
        with open(path, "w", encoding="ascii") as fh:
            for ref in self._topo_order():
                fh.write(self.encode_block(self._blocks[ref]).hex() + "\n")

    @classmethod
    def load(
        cls,
        path: str,
        owner: AgentId | None = None,
        scheme: SignatureScheme = MOCK_SCHEME,
    ) -> "Blocklace":
        store = cls(owner=owner, scheme=scheme)
        with open(path, "r", encoding="ascii") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                store.insert(decode_block(bytes.fromhex(line), scheme))
        return store

    def state_digest(self) -> bytes:
        """Hash of the ref set; equal stores hash equal."""
        from .identity import hash_bytes

        return hash_bytes(b"".join(sorted(self._blocks)))


def decode_block(data: bytes, scheme: SignatureScheme = MOCK_SCHEME, verify: bool = True) -> Block:
    creator, triples, payload, signature, digest = wire.decode_block_fields(
        data, scheme, verify=verify
    )
    pointers = tuple(SignedPointer(c, d, s) for c, d, s in triples)
    return Block(creator=creator, pointers=pointers, payload=payload, digest=digest, signature=signature)


def create_block(store: Blocklace, identity: AgentIdentity, payload: bytes | None) -> Block:
    """Build the next block for this identity over the store.

    Points at every root plus the identity's current chain head (the head
    is usually a root already; it is added explicitly so the new block
    always carries exactly one self-pointer, even when a received block
    already points at the head).
    """
    creator = identity.agent_id
    targets = {b.ref: b for b in store.roots()}
    head = store.chain_head(creator)
    if head is not None:
        targets[head.ref] = head
    if not targets:
        if payload is not None:
            raise BlocklaceError("initial block must have empty payload")
    elif payload is None:
        raise BlocklaceError("non-initial block requires a payload")
    return make_block(creator, list(targets.values()), payload, identity, store.scheme)


# Module-level forms of the store predicates, matching the utility
# pseudocode surface: all evaluate within the given store.

def roots(store: Blocklace) -> list[Block]:
    return store.roots()


def observes(store: Blocklace, b: Block | Ref, b2: Block | Ref) -> bool:
    return store.observes(b, b2)


def agent_observes(store: Blocklace, q: AgentId, b: Block | Ref) -> bool:
    return store.agent_observes(q, b)


def follows(store: Blocklace, q: AgentId, q2: AgentId) -> bool:
    return store.follows(q, q2)


def friend(store: Blocklace, p: AgentId, q: AgentId) -> bool:
    return store.friend(p, q)


def is_closed(store: Blocklace, owner: AgentId) -> bool:
    return store.is_closed(owner)


def p_closure(store: Blocklace, b: Block | Ref, owner: AgentId) -> Blocklace:
    return store.p_closure(b, owner)


def index(store: Blocklace, b: Block | Ref) -> int:
    return store.index(b)
