import itertools
import random

import pytest

from gdiss.gd import (
    GDConfig,
    GDTransition,
    PlanError,
    SimpleBlock,
    TransitionError,
    ad_apply,
    ad_enabled,
    ad_transition_enabled,
    follows,
    friends,
    gd_apply,
    gd_dependency_graph,
    gd_enabled,
    gd_plan,
    gd_transition_enabled,
    is_complete,
    is_consistent,
    is_dissemination_consistent,
    replay_plan,
)
from gdiss.identity import gen_identity

IDS = [gen_identity(bytes(31) + bytes([i + 1])).agent_id for i in range(4)]
A, B, C = IDS[0], IDS[1], IDS[2]


def cfg(*agents):
    return GDConfig.initial(agents)


def blk(creator, index, payload=None):
    return SimpleBlock(creator, index, payload)


# -- enabledness ------------------------------------------------------------


def test_initial_enabled_set():
    c = cfg(A, B, C)
    got = gd_enabled(c, A)
    creates = [t for t in got if t.kind == "create"]
    follows_ = [t for t in got if t.kind == "follow"]
    sents = [t for t in got if t.kind == "sent"]
    assert creates == [GDTransition("create", A, blk(A, 1))]
    assert {t.block.creator for t in follows_} == {B, C}
    assert all(t.block == blk(t.block.creator, 1) for t in follows_)
    assert sents == []


def test_sent_requires_friendship_and_predecessor():
    c = cfg(A, B)
    # both hold both initials (friends), B holds its second block
    c = gd_apply(c, GDTransition("create", A, blk(A, 1)))
    c = gd_apply(c, GDTransition("create", B, blk(B, 1)))
    c = gd_apply(c, GDTransition("follow", A, blk(B, 1)))
    c = gd_apply(c, GDTransition("follow", B, blk(A, 1)))
    c = gd_apply(c, GDTransition("create", B, blk(B, 2, b"x")))
    assert friends(c, A, B)
    sents = [t for t in gd_enabled(c, A) if t.kind == "sent"]
    assert sents == [GDTransition("sent", A, blk(B, 2, b"x"), source=B)]


def test_no_sent_without_friendship():
    c = cfg(A, B)
    c = gd_apply(c, GDTransition("create", B, blk(B, 1)))
    c = gd_apply(c, GDTransition("create", B, blk(B, 2, b"x")))
    c = gd_apply(c, GDTransition("follow", A, blk(B, 1)))
    # A follows B but B does not follow A: not friends
    assert follows(c, A, B) and not follows(c, B, A)
    assert [t for t in gd_enabled(c, A) if t.kind == "sent"] == []


def test_create_forces_empty_payload_at_index_one():
    c = cfg(A, B)
    bad = GDTransition("create", A, blk(A, 1, b"data"))
    assert gd_transition_enabled(c, bad) is not None
    with pytest.raises(TransitionError):
        gd_apply(c, bad)


def test_apply_create_only_actor_changes():
    c0 = cfg(A, B, C)
    c1 = gd_apply(c0, GDTransition("create", A, blk(A, 1)))
    assert c1.states[A] == {blk(A, 1)}
    assert c1.states[B] == frozenset() and c1.states[C] == frozenset()
    assert c0.states[A] == frozenset()  # input untouched


def test_double_apply_errors():
    c = cfg(A, B)
    t = GDTransition("create", A, blk(A, 1))
    c = gd_apply(c, t)
    with pytest.raises(TransitionError, match="already held"):
        gd_apply(c, t)


def test_two_agent_exchange_script():
    # befriend, then move one payload block across: six transitions
    c = cfg(A, B)
    script = [
        GDTransition("create", A, blk(A, 1)),
        GDTransition("create", B, blk(B, 1)),
        GDTransition("follow", A, blk(B, 1)),
        GDTransition("follow", B, blk(A, 1)),
        GDTransition("create", B, blk(B, 2, b"x")),
        GDTransition("sent", A, blk(B, 2, b"x"), source=B),
    ]
    for t in script:
        assert gd_transition_enabled(c, t) is None
        c = gd_apply(c, t)
    want = {blk(A, 1), blk(B, 1), blk(B, 2, b"x")}
    assert c.states[A] == want and c.states[B] == want
    assert is_consistent(c) and is_complete(c)


# -- the all-to-all strawman ---------------------------------------------------


def test_ad_initial_enabled_only_create():
    c = cfg(A, B)
    got = ad_enabled(c, A)
    assert {t.kind for t in got} == {"create"}


def test_ad_receive_needs_no_friendship():
    c = cfg(A, B)
    c = ad_apply(c, GDTransition("create", B, blk(B, 1, b"hello")))
    got = [t for t in ad_enabled(c, A) if t.kind == "sent"]
    assert got == [GDTransition("sent", A, blk(B, 1, b"hello"), source=B)]


def test_ad_allows_payload_on_first_block():
    c = cfg(A, B)
    assert ad_transition_enabled(c, GDTransition("create", A, blk(A, 1, b"x"))) is None


def test_ad_obligations_enumeration():
    c = cfg(A, B, C)
    c = ad_apply(c, GDTransition("create", C, blk(C, 1, b"z")))
    for p in (A, B):
        sents = [t for t in ad_enabled(c, p) if t.kind == "sent"]
        assert [t.block for t in sents] == [blk(C, 1, b"z")]


# -- dependency graphs ------------------------------------------------------------


def test_empty_config_graph_acyclic():
    c = cfg(A, B)
    dg = gd_dependency_graph(c)
    assert dg is not None and dg.vertices == set() and dg.is_acyclic()
    assert is_dissemination_consistent(c)


def exchange_config():
    c = cfg(A, B)
    for t in [
        GDTransition("create", A, blk(A, 1)),
        GDTransition("create", B, blk(B, 1)),
        GDTransition("follow", A, blk(B, 1)),
        GDTransition("follow", B, blk(A, 1)),
        GDTransition("create", B, blk(B, 2, b"x")),
        GDTransition("sent", A, blk(B, 2, b"x"), source=B),
    ]:
        c = gd_apply(c, t)
    return c


def test_exchange_graph_edges():
    c = exchange_config()
    dg = gd_dependency_graph(c)
    assert dg is not None and dg.is_acyclic()
    moved = blk(B, 2, b"x")
    deps = dg.deps[(moved, A)]
    assert (moved, B) in deps  # receipt
    assert (blk(B, 1), A) in deps and (blk(A, 1), B) in deps  # friendship evidence
    assert (blk(B, 1), A) in deps  # predecessor (same as friendship initial here)
    assert is_dissemination_consistent(c)


def test_adversarial_receipt_cycle_rejected():
    # c's block held by A and B; each annotated as receiving it from the other
    c = cfg(A, B, C)
    for t in [
        GDTransition("create", C, blk(C, 1)),
        GDTransition("create", A, blk(A, 1)),
        GDTransition("create", B, blk(B, 1)),
        GDTransition("follow", A, blk(C, 1)),
        GDTransition("follow", B, blk(C, 1)),
        GDTransition("follow", A, blk(B, 1)),
        GDTransition("follow", B, blk(A, 1)),
        GDTransition("follow", C, blk(A, 1)),
        GDTransition("follow", C, blk(B, 1)),
        GDTransition("create", C, blk(C, 2, b"z")),
        GDTransition("sent", A, blk(C, 2, b"z"), source=C),
        GDTransition("sent", B, blk(C, 2, b"z"), source=A),
    ]:
        c = gd_apply(c, t)
    z = blk(C, 2, b"z")
    good = {(z, A): C, (z, B): A}
    assert is_dissemination_consistent(c, receipts=good)
    bad = {(z, A): B, (z, B): A}
    assert not is_dissemination_consistent(c, receipts=bad)


# -- planner -----------------------------------------------------------------------


def test_plan_identity_is_empty():
    c = exchange_config()
    assert gd_plan(c, c) == []


def test_plan_initials_exchange():
    c0 = cfg(A, B)
    target = c0
    for t in [
        GDTransition("create", A, blk(A, 1)),
        GDTransition("create", B, blk(B, 1)),
        GDTransition("follow", A, blk(B, 1)),
        GDTransition("follow", B, blk(A, 1)),
    ]:
        target = gd_apply(target, t)
    plan = gd_plan(c0, target)
    assert len(plan) == 4
    assert sorted(t.kind for t in plan) == ["create", "create", "follow", "follow"]
    assert replay_plan(c0, plan) == target


def test_plan_rejects_non_nested():
    c = exchange_config()
    c0 = cfg(A, B)
    with pytest.raises(PlanError, match="not nested"):
        gd_plan(c, c0)


def test_plan_error_names_clause():
    c0 = cfg(A, B)
    broken = GDConfig(agents=c0.agents, states={A: frozenset({blk(B, 2, b"x")}), B: frozenset()})
    with pytest.raises(PlanError, match="consistent|complete"):
        gd_plan(c0, broken)


def random_walk(agents, steps, seed, enabled=gd_enabled, apply=gd_apply, payloads=(b"x", b"y")):
    rng = random.Random(seed)
    c = cfg(*agents)
    trace = [c]
    for _ in range(steps):
        p = rng.choice(agents)
        cands = enabled(c, p, payloads)
        if not cands:
            continue
        c = apply(c, rng.choice(cands))
        trace.append(c)
    return c, trace


def test_plan_replays_on_random_reachable_pairs():
    agents = IDS[:3]
    for seed in range(25):
        c2, trace = random_walk(agents, 14, seed)
        c1 = trace[random.Random(seed * 7).randrange(len(trace))]
        plan = gd_plan(c1, c2)
        assert replay_plan(c1, plan) == c2


# -- invariants ---------------------------------------------------------------------


def test_safety_closure_random_walks():
    for seed in range(10):
        c, trace = random_walk(IDS[:3], 20, seed)
        assert is_consistent(c) and is_complete(c)


def test_monotonicity_of_apply():
    for seed in range(10):
        c, trace = random_walk(IDS[:3], 12, seed)
        for before, after in zip(trace, trace[1:]):
            assert after.dominates(before) and before != after


def test_asynchrony_enabled_stays_enabled():
    # inflate non-actor states; an enabled transition must stay enabled
    rng = random.Random(99)
    for seed in range(30):
        c, _ = random_walk(IDS[:3], 10, seed)
        for p in IDS[:3]:
            cands = gd_enabled(c, p, (b"x",))
            if not cands:
                continue
            t = rng.choice(cands)
            d = c
            for _ in range(4):
                others = [q for q in IDS[:3] if q != p]
                q = rng.choice(others)
                qc = [x for x in gd_enabled(d, q, (b"z",)) if x.kind != "sent" or x.block != t.block]
                if qc:
                    d = gd_apply(d, rng.choice(qc))
            assert d.states[p] == c.states[p]
            assert gd_transition_enabled(d, t) is None, (t, gd_transition_enabled(d, t))
