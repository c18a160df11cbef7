import pytest

from gdiss import gd
from gdiss.cgd import (
    BlockMessage,
    CGDTransition,
    apply_inplace,
    cgd_apply,
    initial_config,
)
from gdiss.gd import GDConfig, SimpleBlock
from gdiss.identity import MOCK_SCHEME, gen_identity
from gdiss.refinement import (
    PlanError,
    cgd_plan,
    check_piecemeal,
    check_up_condition,
    is_cordial_consistent,
    productivity_report,
    replay_cgd_plan,
    sigma_config,
    sigma_inverse,
    sigma_local,
    sigma_run,
)
from gdiss.sim import Scenario, SchedulerPolicy, adapter_for, simulate

A, B, C = (gen_identity(bytes(31) + bytes([i + 1])) for i in range(3))
AID, BID, CID = A.agent_id, B.agent_id, C.agent_id


def apply_script(c, script):
    transitions = []
    for kind, actor, kw in script:
        t = CGDTransition(kind, actor, **kw)
        transitions.append(t)
        apply_inplace(c, t)
    return c, transitions


def befriend_script(c, x, y):
    xi = c.store(x).initial_of(x)
    yi = None
    script = [
        ("offer", x, {"ref": xi.ref, "peer": y}),
        ("follow", y, {"ref": xi.ref, "peer": x}),
    ]
    for kind, actor, kw in script:
        apply_inplace(c, CGDTransition(kind, actor, **kw))
    yi = c.store(y).initial_of(y)
    script2 = [
        ("offer", y, {"ref": yi.ref, "peer": x}),
        ("follow", x, {"ref": yi.ref, "peer": y}),
    ]
    for kind, actor, kw in script2:
        apply_inplace(c, CGDTransition(kind, actor, **kw))
    return [CGDTransition(k, a, **kw) for k, a, kw in script + script2]


# -- the state mapping -------------------------------------------------------------


def test_sigma_of_initial_config_is_initial():
    c = initial_config([A, B])
    img = sigma_config(c)
    assert img == GDConfig.initial([AID, BID])


def test_sigma_empty_local_state():
    c = initial_config([A, B])
    assert sigma_local(c.locals[AID]) == frozenset()


def test_sigma_single_initial():
    c = initial_config([A, B])
    apply_inplace(c, CGDTransition("create", AID, payload=None))
    assert sigma_local(c.locals[AID]) == frozenset({SimpleBlock(AID, 1, None)})


def test_sigma_chain_indices():
    c = initial_config([A])
    apply_inplace(c, CGDTransition("create", AID, payload=None))
    apply_inplace(c, CGDTransition("create", AID, payload=b"x2"))
    apply_inplace(c, CGDTransition("create", AID, payload=b"x3"))
    assert sigma_local(c.locals[AID]) == frozenset(
        {SimpleBlock(AID, 1, None), SimpleBlock(AID, 2, b"x2"), SimpleBlock(AID, 3, b"x3")}
    )


def test_sigma_ignores_outbox():
    c = initial_config([A, B])
    apply_inplace(c, CGDTransition("create", AID, payload=None))
    before = sigma_local(c.locals[AID])
    ai = c.store(AID).initial_of(AID)
    apply_inplace(c, CGDTransition("offer", AID, ref=ai.ref, peer=BID))
    assert sigma_local(c.locals[AID]) == before


# -- run mapping -----------------------------------------------------------------------


def boot(c):
    ts = []
    for ident in (A, B):
        t = CGDTransition("create", ident.agent_id, payload=None)
        apply_inplace(c, t)
        ts.append(t)
    return ts


def test_offer_and_send_steps_stutter():
    c0 = initial_config([A, B])
    work = c0.copy()
    ts = boot(work)
    ts += befriend_script(work, AID, BID)
    result = sigma_run(c0, ts)
    assert result.ok
    kinds = [s.image.kind if s.image else None for s in result.steps]
    assert kinds == ["create", "create", None, "follow", None, "follow"]


def test_full_exchange_maps_and_replays():
    c0 = initial_config([A, B])
    work = c0.copy()
    ts = boot(work)
    ts += befriend_script(work, AID, BID)
    t = CGDTransition("create", AID, payload=b"post")
    apply_inplace(work, t)
    ts.append(t)
    head = work.store(AID).chain_head(AID)
    for t in (
        CGDTransition("send", AID, ref=head.ref, peer=BID),
        CGDTransition("receive", BID, ref=head.ref, peer=AID),
    ):
        apply_inplace(work, t)
        ts.append(t)
    result = sigma_run(c0, ts)
    assert result.ok, result.violations
    image_kinds = [t.kind for t in result.image_run]
    assert image_kinds == ["create", "create", "follow", "follow", "create", "sent"]
    # the image replays to exactly the mapped final configuration
    img = GDConfig.initial([AID, BID])
    for t in result.image_run:
        img = gd.gd_apply(img, t)
    assert img == sigma_config(work)


def test_sigma_run_on_simulated_runs():
    for seed in range(8):
        sc = Scenario(
            name=f"σ{seed}",
            agents=["a", "b", "c"],
            friendships=[("a", "b", 0), ("b", "c", 0)],
            follows=[("c", "a", 0)],
            payloads=[("a", 0, b"one"), ("b", 4, b"two"), ("c", 6, b"three")],
        )
        res = simulate(sc, SchedulerPolicy(kind="seeded-random", seed=seed), 200, "cgd")
        assert res.ok
        adapter = adapter_for("cgd")
        identities = sc.identities()
        c0 = initial_config(identities.values())
        transitions = [adapter.from_json(s.transition) for s in res.run.steps]
        result = sigma_run(c0, transitions)
        assert result.ok, result.violations


# -- order and piecemeal checks ------------------------------------------------------------


def test_up_condition_trivial_pair():
    c = initial_config([A, B])
    apply_inplace(c, CGDTransition("create", AID, payload=None))
    assert check_up_condition(c, c) == []


def test_up_condition_outbox_growth_stutters():
    c1 = initial_config([A, B])
    apply_inplace(c1, CGDTransition("create", AID, payload=None))
    ai = c1.store(AID).initial_of(AID)
    c2 = cgd_apply(c1, CGDTransition("offer", AID, ref=ai.ref, peer=BID))
    assert check_up_condition(c1, c2) == []
    assert sigma_config(c1) == sigma_config(c2)


def test_up_condition_rejects_unordered():
    c1 = initial_config([A, B])
    apply_inplace(c1, CGDTransition("create", AID, payload=None))
    c0 = initial_config([A, B])
    assert check_up_condition(c1, c0) == ["pair is not ordered componentwise"]


def test_piecemeal_identity_on_rich_config():
    c = initial_config([A, B])
    boot(c)
    befriend_script(c, AID, BID)
    apply_inplace(c, CGDTransition("create", AID, payload=b"zz"))
    assert check_piecemeal(c) == []


# -- dependency graph and planner ------------------------------------------------------------


def friends_config():
    c = initial_config([A, B])
    boot(c)
    befriend_script(c, AID, BID)
    return c


def test_exchange_config_is_cordial_consistent():
    assert is_cordial_consistent(friends_config())


def test_plan_identity_empty():
    c = friends_config()
    assert cgd_plan(c, c) == []


def test_plan_handshake_from_scratch():
    c0 = initial_config([A, B])
    target = friends_config()
    plan = cgd_plan(c0, target)
    assert sorted(t.kind for t in plan) == [
        "create", "create", "follow", "follow", "offer", "offer",
    ]
    final = replay_cgd_plan(c0, plan)
    assert final.dominates(target) and target.dominates(final)


def test_plan_error_names_clause():
    c0 = initial_config([A, B])
    c1 = initial_config([A, B, C])
    with pytest.raises(PlanError, match="universes differ"):
        cgd_plan(c0, c1)
    c2 = friends_config()
    with pytest.raises(PlanError, match="not nested"):
        cgd_plan(c2, initial_config([A, B]))


def test_plan_on_simulated_prefix_pairs():
    for seed in range(6):
        sc = Scenario(
            name=f"plan{seed}",
            agents=["a", "b"],
            friendships=[("a", "b", 0)],
            payloads=[("a", 0, b"p"), ("b", 3, b"q")],
        )
        res = simulate(sc, SchedulerPolicy(kind="seeded-random", seed=seed), 120, "cgd")
        assert res.ok
        adapter = adapter_for("cgd")
        identities = sc.identities()
        transitions = [adapter.from_json(s.transition) for s in res.run.steps]
        # source = config after k steps; target = final
        for k in (0, len(transitions) // 2, len(transitions)):
            c = initial_config(identities.values())
            for t in transitions[:k]:
                apply_inplace(c, t)
            target = initial_config(identities.values())
            for t in transitions:
                apply_inplace(target, t)
            plan = cgd_plan(c, target)
            final = replay_cgd_plan(c, plan)
            assert final.dominates(target) and target.dominates(final)


# -- productivity surrogate --------------------------------------------------------------------


def test_productivity_report_quiescent_run_empty():
    sc = Scenario(
        name="prod",
        agents=["a", "b"],
        friendships=[("a", "b", 0)],
        payloads=[("a", 0, b"p")],
    )
    res = simulate(sc, SchedulerPolicy(seed=2), 200, "cgd")
    assert res.quiescent
    adapter = adapter_for("cgd")
    c0 = initial_config(sc.identities().values())
    transitions = [adapter.from_json(s.transition) for s in res.run.steps]
    report = productivity_report(c0, transitions)
    # at quiescence nothing the image still offers is left unfired except creates
    assert all(key[1] == "create" for key in (p["class"] for p in report.pending))


# -- the inverse (down-condition helper) ----------------------------------------------------------


def test_sigma_inverse_round_trip():
    img = GDConfig.initial([AID, BID])
    for t in [
        gd.GDTransition("create", AID, SimpleBlock(AID, 1, None)),
        gd.GDTransition("create", BID, SimpleBlock(BID, 1, None)),
        gd.GDTransition("follow", AID, SimpleBlock(BID, 1, None)),
        gd.GDTransition("follow", BID, SimpleBlock(AID, 1, None)),
        gd.GDTransition("create", BID, SimpleBlock(BID, 2, b"x")),
        gd.GDTransition("sent", AID, SimpleBlock(BID, 2, b"x"), source=B.agent_id),
    ]:
        img = gd.gd_apply(img, t)
    back = sigma_inverse(img, [A, B], MOCK_SCHEME)
    assert sigma_config(back) == img


def test_sigma_inverse_rejects_unheld_creator_blocks():
    img = GDConfig.initial([AID, BID])
    img = gd.gd_apply(img, gd.GDTransition("follow", AID, SimpleBlock(BID, 1, None)))
    # fabricate a non-initial foreign block with no creator copy
    states = dict(img.states)
    states[AID] = states[AID] | {SimpleBlock(BID, 2, b"zz")}
    broken = GDConfig(agents=img.agents, states=states)
    with pytest.raises(Exception, match="not invertible|absent"):
        sigma_inverse(broken, [A, B], MOCK_SCHEME)
