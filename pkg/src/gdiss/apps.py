"""Social payloads over the block store: posts, replies, echoes, and views.

Three payload shapes ride inside blocks: a short text post, a reply
addressed to another block by (creator, chain index), and an echo
embedding a whole foreign block so followers of the echoer can see
content from authors they do not follow.  Views are derived purely from
one agent's store snapshot: a flat feed, and group transcripts rooted at
a founding block where only entries the founder echoed count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from . import wire
from .blocklace import Block, Blocklace, Ref, decode_block
from .identity import AgentId, MOCK_SCHEME, SignatureScheme

TAG_TWEET = 0x54  # 'T'
TAG_RESPOND = 0x52  # 'R'
TAG_ECHO = 0x45  # 'E'

# every initial block hashes identically: empty pointer set, no payload
INITIAL_DIGEST = wire.block_digest([], None)


class PayloadError(ValueError):
    pass


@dataclass(frozen=True)
class Tweet:
    text: str


@dataclass(frozen=True)
class Respond:
    target_creator: AgentId
    target_index: int
    text: str


@dataclass(frozen=True)
class Echo:
    embedded: Block


AppPayload = Tweet | Respond | Echo


def encode_payload(p: AppPayload) -> bytes:
    if isinstance(p, Tweet):
        return bytes([TAG_TWEET]) + p.text.encode("utf-8")
    if isinstance(p, Respond):
        if p.target_index < 1:
            raise PayloadError("reply target index must be positive")
        return (
            bytes([TAG_RESPOND])
            + p.target_creator.data
            + struct.pack(">I", p.target_index)
            + p.text.encode("utf-8")
        )
    if isinstance(p, Echo):
        body = wire.encode_block_fields(
            p.embedded.creator,
            [(x.creator, x.digest, x.signature) for x in p.embedded.pointers],
            p.embedded.payload,
            p.embedded.signature,
            p.embedded.digest,
        )
        return bytes([TAG_ECHO]) + body
    raise PayloadError(f"not an app payload: {p!r}")


def decode_payload(data: bytes, scheme: SignatureScheme = MOCK_SCHEME) -> AppPayload:
    """Parse payload bytes; echoes re-verify the embedded block end to end."""
    if not data:
        raise PayloadError("empty payload")
    tag, body = data[0], data[1:]
    if tag == TAG_TWEET:
        return Tweet(body.decode("utf-8"))
    if tag == TAG_RESPOND:
        if len(body) < 36:
            raise PayloadError("truncated reply payload")
        creator = AgentId(body[:32])
        (index,) = struct.unpack(">I", body[32:36])
        if index < 1:
            raise PayloadError("reply target index must be positive")
        return Respond(creator, index, body[36:].decode("utf-8"))
    if tag == TAG_ECHO:
        try:
            return Echo(decode_block(body, scheme))
        except wire.WireError as e:
            raise PayloadError(f"embedded block rejected: {e}") from e
    raise PayloadError(f"unknown payload tag {tag:#x}")


def try_decode(data: bytes | None, scheme: SignatureScheme) -> AppPayload | None:
    if data is None:
        return None
    try:
        return decode_payload(data, scheme)
    except PayloadError:
        return None


# -- feed derivation ----------------------------------------------------------------


@dataclass(frozen=True)
class FeedEntry:
    author: AgentId
    index: int | None  # position on the author's chain, when derivable
    text: str
    thread_parent: tuple[AgentId, int] | None
    via_echo: bool
    ref: Ref

    def sort_identity(self) -> tuple:
        return (self.author.data, self.ref)


@dataclass
class FeedView:
    viewer: AgentId
    entries: list[FeedEntry] = field(default_factory=list)


def _entry_for(
    block: Block, store: Blocklace, payload: AppPayload, via_echo: bool
) -> FeedEntry | None:
    index: int | None
    try:
        index = store.index(block.ref) if block.ref in store else None
    except Exception:
        index = None
    if isinstance(payload, Tweet):
        return FeedEntry(block.creator, index, payload.text, None, via_echo, block.ref)
    if isinstance(payload, Respond):
        return FeedEntry(
            block.creator,
            index,
            payload.text,
            (payload.target_creator, payload.target_index),
            via_echo,
            block.ref,
        )
    return None


def derive_feed(store: Blocklace, viewer: AgentId, scheme: SignatureScheme | None = None) -> FeedView:
    """Everything readable in the store, in a deterministic causal order.

    Entries embedded in echoes surface at the echoing block's position and
    are attributed to the original author; a post seen both directly and
    through an echo appears once.  Replies whose target is unknown stay
    visible as orphans (thread parent set, parent possibly absent).
    """
    scheme = scheme or store.scheme
    view = FeedView(viewer=viewer)
    seen: set[Ref] = set()
    for ref in store._topo_order():
        block = store[ref]
        payload = try_decode(block.payload, scheme)
        if payload is None:
            continue
        stack = [(block, payload, False)]
        while stack:
            blk, pl, via = stack.pop()
            if isinstance(pl, Echo):
                inner = try_decode(pl.embedded.payload, scheme)
                if inner is not None:
                    stack.append((pl.embedded, inner, True))
                continue
            if blk.ref in seen:
                continue
            entry = _entry_for(blk, store, pl, via)
            if entry is not None:
                seen.add(blk.ref)
                view.entries.append(entry)
    return view


# -- groups -------------------------------------------------------------------------


class GroupError(ValueError):
    pass


@dataclass(frozen=True)
class GroupEntry:
    author: AgentId
    text: str
    ref: Ref
    parent: tuple[AgentId, int] | None
    anchor: int  # founder-chain index this entry hangs off


@dataclass
class GroupView:
    founder: AgentId
    root: tuple[AgentId, int]
    visibility: str  # groups carry no keys; everything here is public
    entries: list[GroupEntry] = field(default_factory=list)
    members: set[AgentId] = field(default_factory=set)

    def transcript(self) -> list[tuple[str, str]]:
        return [(e.author.data[:8].hex(), e.text) for e in self.entries]


def _resolve_by_chain(store: Blocklace, creator: AgentId, index: int) -> Block | None:
    for block in store.blocks_by(creator):
        try:
            if store.index(block.ref) == index:
                return block
        except Exception:
            continue
    return None


def derive_group(
    store: Blocklace,
    founder: AgentId,
    group_root: tuple[AgentId, int],
    scheme: SignatureScheme | None = None,
) -> GroupView:
    """Transcript and membership of a group rooted at one founding block.

    The transcript holds the root, the founder's own thread messages, and
    exactly those foreign replies the founder echoed; an author the founder
    stops echoing simply stops appearing.  Every derivation step depends
    only on the founder's chain (which all members replicate), never on
    what else a member happens to hold, so the transcripts of all members
    agree once dissemination settles.
    """
    scheme = scheme or store.scheme
    root_creator, root_index = group_root
    root = _resolve_by_chain(store, root_creator, root_index)
    if root is None:
        raise GroupError(
            f"group root {root_creator.data[:4].hex()}:{root_index} not in store"
        )
    view = GroupView(founder=founder, root=group_root, visibility="public")

    # candidates: the founder's own thread messages, plus blocks embedded in
    # founder echoes; foreign keys resolve only through the echoed pool so
    # the computation is identical in every member's store
    candidates: list[tuple[Block, Respond, int]] = []
    pool: dict[Ref, Block] = {}
    for fblock in store.blocks_by(founder):
        payload = try_decode(fblock.payload, scheme)
        if isinstance(payload, Echo):
            pool[payload.embedded.ref] = payload.embedded
    for fblock in store.blocks_by(founder):
        payload = try_decode(fblock.payload, scheme)
        if payload is None:
            continue
        try:
            anchor = store.index(fblock.ref)
        except Exception:
            continue
        if isinstance(payload, Echo):
            inner = try_decode(payload.embedded.payload, scheme)
            if isinstance(inner, Respond):
                candidates.append((payload.embedded, inner, anchor))
        elif isinstance(payload, Respond):
            candidates.append((fblock, payload, anchor))

    def founder_key(block: Block) -> tuple[AgentId, int] | None:
        try:
            return (block.creator, store.index(block.ref))
        except Exception:
            return None

    def pool_key(block: Block) -> tuple[AgentId, int] | None:
        """Chain position derived by walking self-pointers inside the pool.

        Every initial block hashes to the same constant (no pointers, no
        payload), so a self-pointer at that digest pins the walk's base at
        index one even when the initial block itself was never echoed.
        """
        depth = 0
        cur = block
        while True:
            own = cur.self_pointers()
            if not own:
                return (block.creator, depth + 1)
            if own[0].digest == INITIAL_DIGEST:
                return (block.creator, depth + 2)
            prev = pool.get(own[0].ref)
            if prev is None:
                return None
            cur = prev
            depth += 1

    in_thread: dict[tuple[AgentId, int], GroupEntry] = {}
    root_payload = try_decode(root.payload, scheme)
    root_text = root_payload.text if isinstance(root_payload, Tweet) else ""
    in_thread[group_root] = GroupEntry(root.creator, root_text, root.ref, None, root_index)
    view.members.add(founder)

    added: dict[Ref, GroupEntry] = {root.ref: in_thread[group_root]}
    changed = True
    while changed:
        changed = False
        for blk, payload, anchor in candidates:
            if blk.ref in added:
                continue
            target = (payload.target_creator, payload.target_index)
            if target not in in_thread:
                continue
            entry = GroupEntry(blk.creator, payload.text, blk.ref, target, anchor)
            added[blk.ref] = entry
            key = founder_key(blk) if blk.creator == founder else pool_key(blk)
            if key is not None:
                in_thread[key] = entry  # replies may target this entry in turn
            changed = True

    entries = sorted(added.values(), key=lambda e: (e.anchor, e.author.data, e.ref))
    view.entries = entries
    for e in entries:
        if e.parent is not None:
            view.members.add(e.author)
    return view
