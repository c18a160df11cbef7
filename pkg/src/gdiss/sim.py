"""Deterministic multi-agent simulation of the dissemination protocols.

A scenario declares agents, a friendship plan, one-directional follow
intents, a payload schedule, crash times, and whether the run is expected
to go quiet.  A scheduler policy picks who moves; every step is validated
against the protocol's own enabledness predicate before it is applied
(the safety monitor), per-class liveness bookkeeping feeds the verdicts
at truncation, and the recorded run replays bit-identically from the
scenario and seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Any, Iterable

from . import cgd as cgd_mod
from . import gd as gd_mod
from .cgd import CGDConfig, CGDTransition, initial_config
from .gd import GDConfig, GDTransition, SimpleBlock
from .identity import AgentId, AgentIdentity, MOCK_SCHEME, gen_identity, hash_bytes

PROTOCOLS = ("gd", "ad", "cgd")


class SimError(ValueError):
    pass


class SafetyViolation(SimError):
    def __init__(self, actor: str, step: int, clause: str):
        super().__init__(f"step {step}: {actor}: {clause}")
        self.indictment = {"actor": actor, "step": step, "clause": clause}


# -- scenarios ---------------------------------------------------------------


@dataclass
class Scenario:
    name: str
    agents: list[str]
    friendships: list[tuple[str, str, int]] = field(default_factory=list)
    follows: list[tuple[str, str, int]] = field(default_factory=list)
    payloads: list[tuple[str, int, bytes]] = field(default_factory=list)
    crashes: dict[str, int] = field(default_factory=dict)
    expect_quiescent: bool = True
    seeds: dict[str, bytes] = field(default_factory=dict)

    def __post_init__(self) -> None:
        known = set(self.agents)
        for a, b, _ in self.friendships:
            if a not in known or b not in known:
                raise SimError(f"friendship names unknown agent: {a}, {b}")
        for a, b, _ in self.follows:
            if a not in known or b not in known:
                raise SimError(f"follow intent names unknown agent: {a}, {b}")
        for a, _, _ in self.payloads:
            if a not in known:
                raise SimError(f"payload schedule names unknown agent: {a}")
        for name in self.agents:
            self.seeds.setdefault(name, hash_bytes(f"gdiss-seed:{self.name}:{name}".encode()))

    def identities(self, scheme=MOCK_SCHEME) -> dict[str, AgentIdentity]:
        return {name: gen_identity(self.seeds[name], scheme) for name in self.agents}

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "agents": list(self.agents),
            "friendships": [[a, b, s] for a, b, s in self.friendships],
            "follows": [[a, b, s] for a, b, s in self.follows],
            "payloads": [[a, s, x.hex()] for a, s, x in self.payloads],
            "crashes": dict(self.crashes),
            "expect_quiescent": self.expect_quiescent,
            "seeds": {k: v.hex() for k, v in self.seeds.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        return cls(
            name=data["name"],
            agents=list(data["agents"]),
            friendships=[(a, b, int(s)) for a, b, s in data.get("friendships", [])],
            follows=[(a, b, int(s)) for a, b, s in data.get("follows", [])],
            payloads=[(a, int(s), bytes.fromhex(x)) for a, s, x in data.get("payloads", [])],
            crashes={k: int(v) for k, v in data.get("crashes", {}).items()},
            expect_quiescent=bool(data.get("expect_quiescent", True)),
            seeds={k: bytes.fromhex(v) for k, v in data.get("seeds", {}).items()},
        )

    def digest(self) -> str:
        return hash_bytes(json.dumps(self.to_json(), sort_keys=True).encode()).hex()

    @classmethod
    def load(cls, path: str) -> "Scenario":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def chain_scenario(
    n: int = 6,
    posts: int = 20,
    post_creator: int = 1,
    name: str = "chain",
    post_before: int = 200,
    acks_per_member: int = 3,
    expect_quiescent: bool = True,
    crashes: dict[str, int] | None = None,
) -> Scenario:
    """n agents in a friendship chain, everyone following the head creator.

    Members post a few acknowledgement payloads of their own: a block per
    member is what discloses their followership to their neighbors, and
    without that evidence nothing would ever be relayed toward them.
    """
    agents = [f"p{i}" for i in range(1, n + 1)]
    friendships = [(agents[i], agents[i + 1], 0) for i in range(n - 1)]
    head = f"p{post_creator}"
    follows = [(a, head, 0) for a in agents if a != head]
    step_gap = max(1, post_before // max(posts, 1))
    payloads = [(head, i * step_gap, f"post-{i}".encode()) for i in range(posts)]
    for i, a in enumerate(agents):
        if a == head:
            continue
        for k in range(acks_per_member):
            at = (k + 1) * (post_before // max(acks_per_member, 1)) + 2 * i
            payloads.append((a, at, f"ack-{a}-{k}".encode()))
    return Scenario(
        name=name,
        agents=agents,
        friendships=friendships,
        follows=follows,
        payloads=payloads,
        crashes=dict(crashes or {}),
        expect_quiescent=expect_quiescent,
    )


class Volition:
    """Scenario-driven choices: what to create, whom to offer, whom to accept."""

    def __init__(self, scenario: Scenario, names: dict[AgentId, str]):
        self.scenario = scenario
        self.names = names
        self.pending: dict[str, list[tuple[int, bytes]]] = {}
        for agent, at_step, payload in sorted(scenario.payloads, key=lambda t: (t[1], t[0])):
            self.pending.setdefault(agent, []).append((at_step, payload))

    def due_payloads(self, agent: AgentId, step: int) -> tuple[bytes, ...]:
        queue = self.pending.get(self.names[agent], ())
        if queue and queue[0][0] <= step:
            return (queue[0][1],)
        return ()

    def consume(self, agent: AgentId, payload: bytes | None, step: int) -> None:
        if payload is None:
            return
        queue = self.pending.get(self.names[agent])
        if queue and queue[0][0] <= step and queue[0][1] == payload:
            queue.pop(0)

    def has_pending(self, agent: AgentId, step: int) -> bool:
        return bool(self.due_payloads(agent, step))

    def next_due_step(self) -> int | None:
        heads = [q[0][0] for q in self.pending.values() if q]
        return min(heads) if heads else None

    def _friends(self, a: str, b: str, step: int) -> bool:
        for x, y, s in self.scenario.friendships:
            if {x, y} == {a, b} and step >= s:
                return True
        return False

    def _intends_follow(self, follower: str, creator: str, step: int) -> bool:
        if follower == creator:
            return False
        if self._friends(follower, creator, step):
            return True
        for x, y, s in self.scenario.follows:
            if x == follower and y == creator and step >= s:
                return True
        return False

    def follow_ok(self, agent: AgentId, creator: AgentId, step: int) -> bool:
        return self._intends_follow(self.names[agent], self.names[creator], step)

    def offer_ok(self, agent: AgentId, dest: AgentId, creator: AgentId, step: int) -> bool:
        a, d, c = self.names[agent], self.names[dest], self.names[creator]
        if a == c:
            return self._friends(a, d, step) or self._intends_follow(d, c, step)
        return self._friends(a, d, step) and self._intends_follow(d, c, step)


# -- liveness bookkeeping --------------------------------------------------------


def class_key_str(key: tuple) -> str:
    parts = []
    for x in key:
        if isinstance(x, AgentId):
            parts.append(x.data[:6].hex())
        elif isinstance(x, bytes):
            parts.append(x[:6].hex())
        elif isinstance(x, SimpleBlock):
            payload = "" if x.payload is None else x.payload.hex()
            parts.append(f"{x.creator.data[:6].hex()}#{x.index}:{payload}")
        else:
            parts.append(str(x))
    return "/".join(parts)


@dataclass
class ClassRecord:
    enabled_since: int | None = None
    fired: int = 0
    last_fired: int | None = None


class LivenessLedger:
    """Per liveness class: when it became enabled, how often it fired."""

    def __init__(self) -> None:
        self.records: dict[tuple, ClassRecord] = {}
        self.max_fire_gap = 0

    def observe(self, step: int, actor: AgentId, enabled_keys: set[tuple]) -> None:
        for key in enabled_keys:
            rec = self.records.setdefault(key, ClassRecord())
            if rec.enabled_since is None:
                rec.enabled_since = step
        for key, rec in self.records.items():
            if key[0] == actor and rec.enabled_since is not None and key not in enabled_keys:
                rec.enabled_since = None

    def enabled_age(self, key: tuple, step: int) -> int:
        rec = self.records.get(key)
        if rec is None or rec.enabled_since is None:
            return -1
        return step - rec.enabled_since

    def fire(self, step: int, key: tuple | None) -> None:
        if key is None:
            return
        rec = self.records.setdefault(key, ClassRecord())
        if rec.enabled_since is not None:
            self.max_fire_gap = max(self.max_fire_gap, step - rec.enabled_since)
        rec.fired += 1
        rec.last_fired = step
        rec.enabled_since = None

    def pending(self) -> list[tuple]:
        return sorted(
            (k for k, r in self.records.items() if r.enabled_since is not None),
            key=class_key_str,
        )


# -- protocol adapters -------------------------------------------------------------


class GDAdapter:
    """The friend-gated simple-block model behind the harness interface."""

    name = "gd"
    enabled_fn = staticmethod(gd_mod.gd_enabled)
    validate_fn = staticmethod(gd_mod.gd_transition_enabled)
    apply_fn = staticmethod(gd_mod.gd_apply)

    def initial(self, scenario: Scenario, identities: dict[str, AgentIdentity]) -> GDConfig:
        return GDConfig.initial(i.agent_id for i in identities.values())

    def enabled(
        self, c: GDConfig, p: AgentId, volition: Volition, step: int
    ) -> list[GDTransition]:
        out = []
        for t in self.enabled_fn(c, p, volition.due_payloads(p, step)):
            if t.kind == "create":
                if t.block.index > 1 and not volition.has_pending(p, step):
                    continue
                out.append(t)
            elif t.kind == "follow":
                if volition.follow_ok(p, t.block.creator, step):
                    out.append(t)
            else:
                out.append(t)
        return out

    def validate(self, c: GDConfig, t: GDTransition) -> str | None:
        return self.validate_fn(c, t)

    def apply(self, c: GDConfig, t: GDTransition) -> GDConfig:
        return self.apply_fn(c, t)

    def on_fired(self, t: GDTransition, volition: Volition, step: int) -> None:
        if t.kind == "create":
            volition.consume(t.actor, t.block.payload, step)

    def class_key(self, t: GDTransition) -> tuple | None:
        return t.class_key()

    def agent_digest(self, c: GDConfig, p: AgentId) -> bytes:
        blocks = sorted(
            (b.creator.data, b.index, b.payload or b"", b.payload is None)
            for b in c.states[p]
        )
        return hash_bytes(repr(blocks).encode())

    def check_step(self, c: GDConfig, t: GDTransition) -> list[str]:
        problems = []
        b = t.block
        if not b.is_initial() and b not in c.states[b.creator]:
            problems.append("consistency: block not at its creator")
        held = c.states[t.actor]
        for i in range(1, b.index):
            if not any(x.creator == b.creator and x.index == i for x in held):
                problems.append(f"completeness: missing {i}-indexed predecessor")
        return problems

    def to_json(self, t: GDTransition) -> dict:
        return {
            "kind": t.kind,
            "actor": t.actor.data.hex(),
            "creator": t.block.creator.data.hex(),
            "index": t.block.index,
            "payload": None if t.block.payload is None else t.block.payload.hex(),
            "source": t.source.data.hex() if t.source else None,
        }

    def from_json(self, data: dict) -> GDTransition:
        block = SimpleBlock(
            AgentId(bytes.fromhex(data["creator"])),
            int(data["index"]),
            None if data["payload"] is None else bytes.fromhex(data["payload"]),
        )
        source = AgentId(bytes.fromhex(data["source"])) if data.get("source") else None
        return GDTransition(data["kind"], AgentId(bytes.fromhex(data["actor"])), block, source)


class ADAdapter(GDAdapter):
    """The all-to-all strawman: same state space, no follow, no friend gate."""

    name = "ad"
    enabled_fn = staticmethod(gd_mod.ad_enabled)
    validate_fn = staticmethod(gd_mod.ad_transition_enabled)
    apply_fn = staticmethod(gd_mod.ad_apply)

    def enabled(self, c, p, volition, step):
        out = []
        for t in self.enabled_fn(c, p, volition.due_payloads(p, step)):
            if t.kind == "create":
                if not volition.has_pending(p, step):
                    continue
                out.append(t)
            else:
                out.append(t)
        return out


class CGDAdapter:
    name = "cgd"

    def initial(self, scenario: Scenario, identities: dict[str, AgentIdentity]) -> CGDConfig:
        return initial_config(identities.values())

    def enabled(
        self, c: CGDConfig, p: AgentId, volition: Volition, step: int
    ) -> list[CGDTransition]:
        out = []
        for t in cgd_mod.cgd_enabled(c, p, volition.due_payloads(p, step)):
            if t.kind == "offer":
                creator = cgd_mod.ref_creator(t.ref)
                if volition.offer_ok(p, t.peer, creator, step):
                    out.append(t)
            elif t.kind == "follow":
                creator = cgd_mod.ref_creator(t.ref)
                if volition.follow_ok(p, creator, step):
                    out.append(t)
            else:
                out.append(t)
        return out

    def validate(self, c: CGDConfig, t: CGDTransition) -> str | None:
        return cgd_mod.cgd_transition_enabled(c, t)

    def apply(self, c: CGDConfig, t: CGDTransition) -> CGDConfig:
        return cgd_mod.apply_inplace(c, t)

    def on_fired(self, t: CGDTransition, volition: Volition, step: int) -> None:
        if t.kind == "create":
            volition.consume(t.actor, t.payload, step)

    def class_key(self, t: CGDTransition) -> tuple | None:
        return t.class_key()

    def agent_digest(self, c: CGDConfig, p: AgentId) -> bytes:
        return c.state_digest(p)

    def check_step(self, c: CGDConfig, t: CGDTransition) -> list[str]:
        if not c.store(t.actor).is_closed(t.actor):
            return ["owner-closedness broken"]
        return []

    def to_json(self, t: CGDTransition) -> dict:
        return {
            "kind": t.kind,
            "actor": t.actor.data.hex(),
            "ref": t.ref.hex() if t.ref else None,
            "peer": t.peer.data.hex() if t.peer else None,
            "payload": None if t.payload is None else t.payload.hex(),
        }

    def from_json(self, data: dict) -> CGDTransition:
        return CGDTransition(
            kind=data["kind"],
            actor=AgentId(bytes.fromhex(data["actor"])),
            ref=bytes.fromhex(data["ref"]) if data.get("ref") else None,
            peer=AgentId(bytes.fromhex(data["peer"])) if data.get("peer") else None,
            payload=None if data.get("payload") is None else bytes.fromhex(data["payload"]),
        )


_ADAPTERS = {"gd": GDAdapter(), "ad": ADAdapter(), "cgd": CGDAdapter()}


def adapter_for(protocol: str):
    try:
        return _ADAPTERS[protocol]
    except KeyError:
        raise SimError(f"unknown protocol {protocol!r}") from None


# -- scheduling --------------------------------------------------------------------


@dataclass
class SchedulerPolicy:
    kind: str = "round-robin-fair"  # | "seeded-random" | "adversarial-reorder"
    seed: int = 0
    fairness_window: int = 0  # 0 = derive from the agent count

    def window(self, n_agents: int) -> int:
        return self.fairness_window or 16 * n_agents


def _candidate_key(adapter, t) -> tuple:
    if isinstance(t, CGDTransition):
        return (
            t.kind,
            t.actor.data,
            t.ref or b"",
            t.peer.data if t.peer else b"",
            t.payload or b"",
        )
    return (
        t.kind,
        t.actor.data,
        t.block.creator.data,
        t.block.index,
        t.block.payload or b"",
        t.source.data if t.source else b"",
    )


# -- runs -------------------------------------------------------------------------


@dataclass
class RunStep:
    transition: dict
    digest: str


@dataclass
class Run:
    protocol: str
    scenario: Scenario
    policy: SchedulerPolicy
    initial_digest: str
    steps: list[RunStep]
    quiescent: bool = False

    def transitions(self, adapter=None):
        adapter = adapter or adapter_for(self.protocol)
        return [adapter.from_json(s.transition) for s in self.steps]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "format": "gdiss-run-v1",
                "protocol": self.protocol,
                "policy": {"kind": self.policy.kind, "seed": self.policy.seed,
                           "fairness_window": self.policy.fairness_window},
                "scenario": self.scenario.to_json(),
                "scenario_digest": self.scenario.digest(),
                "initial_digest": self.initial_digest,
                "quiescent": self.quiescent,
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for s in self.steps:
                fh.write(json.dumps({"t": s.transition, "d": s.digest}, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str) -> "Run":
        with open(path, "r", encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != "gdiss-run-v1":
                raise SimError("unrecognized run log format")
            steps = [
                RunStep(transition=rec["t"], digest=rec["d"])
                for rec in (json.loads(line) for line in fh if line.strip())
            ]
        policy = SchedulerPolicy(**header["policy"])
        return cls(
            protocol=header["protocol"],
            scenario=Scenario.from_json(header["scenario"]),
            policy=policy,
            initial_digest=header["initial_digest"],
            steps=steps,
            quiescent=header.get("quiescent", False),
        )


def config_digest(adapter, config, agents: Iterable[AgentId]) -> str:
    return hash_bytes(b"".join(adapter.agent_digest(config, a) for a in sorted(agents))).hex()


@dataclass
class SimResult:
    run: Run
    final_config: Any
    ledger: LivenessLedger
    violations: list[dict]
    pending_report: list[dict]
    quiescent: bool

    @property
    def ok(self) -> bool:
        return not self.violations


# -- the simulator ------------------------------------------------------------------


def simulate(
    scenario: Scenario,
    policy: SchedulerPolicy,
    max_steps: int,
    protocol: str = "cgd",
    scheme=MOCK_SCHEME,
) -> SimResult:
    adapter = adapter_for(protocol)
    identities = scenario.identities(scheme)
    names = {i.agent_id: n for n, i in identities.items()}
    ids = {n: i.agent_id for n, i in identities.items()}
    agents = sorted(names)
    volition = Volition(scenario, names)
    config = adapter.initial(scenario, identities)
    ledger = LivenessLedger()
    rng = random.Random(policy.seed)
    steps: list[RunStep] = []
    violations: list[dict] = []
    initial_digest = config_digest(adapter, config, agents)

    crashed_at = {ids[n]: s for n, s in scenario.crashes.items()}
    step = 0
    rr_index = 0
    quiescent = False
    while step < max_steps:
        active = [a for a in agents if crashed_at.get(a, max_steps + 1) > step]
        if not active:
            quiescent = True
            break
        if policy.kind == "round-robin-fair":
            order = [active[(rr_index + i) % len(active)] for i in range(len(active))]
        else:
            order = rng.sample(active, len(active))
        actor = None
        candidates: list = []
        for probe in order:
            cands = adapter.enabled(config, probe, volition, step)
            if cands:
                actor = probe
                candidates = sorted(cands, key=lambda t: _candidate_key(adapter, t))
                break
        if actor is None:
            upcoming = volition.next_due_step()
            if upcoming is not None and upcoming > step:
                step = upcoming  # idle until scheduled work comes due
                continue
            quiescent = True
            break
        if policy.kind == "round-robin-fair":
            rr_index = (active.index(actor) + 1) % len(active)

        keys = {adapter.class_key(t) for t in candidates} - {None}
        ledger.observe(step, actor, keys)
        if policy.kind == "round-robin-fair":
            def age(t):
                key = adapter.class_key(t)
                return (
                    -ledger.enabled_age(key, step) if key else 0,
                    _candidate_key(adapter, t),
                )
            chosen = min(candidates, key=age)
        elif policy.kind == "adversarial-reorder":
            deliveries = [t for t in candidates if t.kind in ("sent", "receive", "follow")]
            if deliveries:
                chosen = rng.choice(deliveries)
            else:
                chosen = rng.choice(candidates)
        else:
            chosen = rng.choice(candidates)

        clause = adapter.validate(config, chosen)
        if clause is not None:
            violations.append({"actor": names[actor], "step": step, "clause": clause})
            break
        config = adapter.apply(config, chosen)
        problems = adapter.check_step(config, chosen)
        if problems:
            violations.append({"actor": names[actor], "step": step, "clause": "; ".join(problems)})
            break
        adapter.on_fired(chosen, volition, step)
        ledger.fire(step, adapter.class_key(chosen))
        steps.append(
            RunStep(
                transition=adapter.to_json(chosen),
                digest=config_digest(adapter, config, agents),
            )
        )
        step += 1

    # final sweep: every agent's enabled classes feed the pending verdicts;
    # a crashed agent's classes stay pending forever, never violated
    pending_report: list[dict] = []
    horizon = max(step, len(steps))
    window = policy.window(len(agents))
    for a in agents:
        crashed = crashed_at.get(a, max_steps + 1) <= horizon
        keys = {
            adapter.class_key(t)
            for t in adapter.enabled(config, a, volition, horizon)
        } - {None}
        ledger.observe(horizon, a, keys)
        for key in sorted(keys, key=class_key_str):
            age = ledger.enabled_age(key, horizon)
            verdict = "pending"
            if (
                not crashed
                and scenario.expect_quiescent
                and not quiescent
                and age >= window
            ):
                verdict = "violated"
            pending_report.append(
                {
                    "class": class_key_str(key),
                    "age": age,
                    "verdict": verdict,
                    "crashed": crashed,
                }
            )

    run = Run(
        protocol=protocol,
        scenario=scenario,
        policy=policy,
        initial_digest=initial_digest,
        steps=steps,
        quiescent=quiescent,
    )
    return SimResult(
        run=run,
        final_config=config,
        ledger=ledger,
        violations=violations,
        pending_report=pending_report,
        quiescent=quiescent,
    )


def replay(run: Run, scheme=MOCK_SCHEME) -> Any:
    """Re-execute a recorded run, verifying every configuration digest."""
    adapter = adapter_for(run.protocol)
    identities = run.scenario.identities(scheme)
    agents = sorted(i.agent_id for i in identities.values())
    config = adapter.initial(run.scenario, identities)
    if config_digest(adapter, config, agents) != run.initial_digest:
        raise SimError("replay: initial configuration digest mismatch")
    for i, s in enumerate(run.steps):
        t = adapter.from_json(s.transition)
        clause = adapter.validate(config, t)
        if clause is not None:
            raise SafetyViolation(s.transition.get("actor", "?"), i, clause)
        config = adapter.apply(config, t)
        if config_digest(adapter, config, agents) != s.digest:
            raise SimError(f"replay: digest mismatch at step {i}")
    return config


# -- projection and interleaving ------------------------------------------------------


@dataclass
class ProjectedRun:
    agents: list[str]
    initial_digest: str
    steps: list[RunStep]


def project_run(run: Run, subset: list[str], scheme=MOCK_SCHEME) -> ProjectedRun:
    """Restrict a run to a subset of agents, dropping stutter steps.

    Local states keep whatever foreign blocks they contain; only the
    coordinates outside the subset disappear.
    """
    if not subset or set(subset) - set(run.scenario.agents):
        raise SimError("projection subset must be a nonempty set of run agents")
    adapter = adapter_for(run.protocol)
    identities = run.scenario.identities(scheme)
    keep = {identities[n].agent_id for n in subset}
    all_agents = sorted(i.agent_id for i in identities.values())
    config = adapter.initial(run.scenario, identities)
    out: list[RunStep] = []
    initial_digest = config_digest(adapter, config, keep)
    for s in run.steps:
        t = adapter.from_json(s.transition)
        config = adapter.apply(config, t)
        if t.actor in keep:
            out.append(
                RunStep(transition=s.transition, digest=config_digest(adapter, config, keep))
            )
    return ProjectedRun(agents=sorted(subset), initial_digest=initial_digest, steps=out)


def merge_scenarios(s1: Scenario, s2: Scenario, name: str | None = None) -> Scenario:
    if set(s1.agents) & set(s2.agents):
        raise SimError("interleaving needs disjoint agent sets")
    return Scenario(
        name=name or f"{s1.name}+{s2.name}",
        agents=list(s1.agents) + list(s2.agents),
        friendships=s1.friendships + s2.friendships,
        follows=s1.follows + s2.follows,
        payloads=s1.payloads + s2.payloads,
        crashes={**s1.crashes, **s2.crashes},
        expect_quiescent=s1.expect_quiescent and s2.expect_quiescent,
        seeds={**s1.seeds, **s2.seeds},
    )


@dataclass
class InterleaveResult:
    run: Run
    final_config: Any
    violations: list[dict]

    @property
    def ok(self) -> bool:
        return not self.violations


def interleave(run1: Run, run2: Run, schedule: list[int], scheme=MOCK_SCHEME) -> InterleaveResult:
    """Merge two disjoint-population runs along a 0/1 schedule.

    Every merged step is revalidated against the union transition system,
    which is exactly the safety half of the composition argument.
    """
    if run1.protocol != run2.protocol:
        raise SimError("cannot interleave runs of different protocols")
    if len(schedule) != len(run1.steps) + len(run2.steps):
        raise SimError("schedule length must cover both runs")
    if schedule.count(0) != len(run1.steps) or schedule.count(1) != len(run2.steps):
        raise SimError("schedule does not match the run lengths")
    adapter = adapter_for(run1.protocol)
    merged_scenario = merge_scenarios(run1.scenario, run2.scenario)
    identities = merged_scenario.identities(scheme)
    agents = sorted(i.agent_id for i in identities.values())
    config = adapter.initial(merged_scenario, identities)
    initial_digest = config_digest(adapter, config, agents)
    iters = [iter(run1.steps), iter(run2.steps)]
    steps: list[RunStep] = []
    violations: list[dict] = []
    for i, which in enumerate(schedule):
        s = next(iters[which])
        t = adapter.from_json(s.transition)
        clause = adapter.validate(config, t)
        if clause is not None:
            violations.append({"step": i, "actor": s.transition.get("actor"), "clause": clause})
            break
        config = adapter.apply(config, t)
        steps.append(RunStep(transition=s.transition, digest=config_digest(adapter, config, agents)))
    run = Run(
        protocol=run1.protocol,
        scenario=merged_scenario,
        policy=run1.policy,
        initial_digest=initial_digest,
        steps=steps,
    )
    return InterleaveResult(run=run, final_config=config, violations=violations)


def pending_classes_at(
    result_config: Any, scenario: Scenario, protocol: str, actors: set[str], scheme=MOCK_SCHEME
) -> set[str]:
    """Rule-driven liveness classes enabled at a configuration, by actor name."""
    adapter = adapter_for(protocol)
    identities = scenario.identities(scheme)
    names = {i.agent_id: n for n, i in identities.items()}
    volition = Volition(scenario, names)
    out: set[str] = set()
    horizon = 10 ** 9  # schedules exhausted
    for aid, name in names.items():
        if name not in actors:
            continue
        for t in adapter.enabled(result_config, aid, volition, horizon):
            key = adapter.class_key(t)
            if key is not None and t.kind != "create":
                out.add(class_key_str(key))
    return out


# -- the grassroots evidence suite ------------------------------------------------------


def _suite_scenarios() -> tuple[Scenario, Scenario]:
    s1 = Scenario(
        name="suite-inner",
        agents=["a", "b"],
        friendships=[("a", "b", 0)],
        payloads=[("a", 0, b"a-news"), ("b", 2, b"b-news")],
    )
    s2 = Scenario(
        name="suite-outer",
        agents=["c", "d"],
        friendships=[("c", "d", 0)],
        payloads=[("c", 0, b"c-news")],
    )
    return s1, s2


def grassroots_suite(protocol: str, seed: int = 7, schedules: int = 20) -> dict:
    """Executable evidence for or against the grassroots property.

    (a) interleavings of disjoint correct runs stay safe, projections
    round-trip, and the embedded group keeps exactly its own pending
    obligations; (b) a cross-group handshake yields behavior the small
    group alone cannot reach (checked exhaustively on the small model);
    (c) the all-to-all strawman accumulates undischargeable delivery
    obligations toward the other group, flagging interference.
    """
    adapter = adapter_for(protocol)
    s1, s2 = _suite_scenarios()
    policy = SchedulerPolicy(kind="round-robin-fair", seed=seed)
    r1 = simulate(s1, policy, 400, protocol)
    r2 = simulate(s2, policy, 400, protocol)
    report: dict[str, Any] = {"protocol": protocol}
    rng = random.Random(seed)

    safety_failures = 0
    round_trip_failures = 0
    for _ in range(schedules):
        bits = [0] * len(r1.run.steps) + [1] * len(r2.run.steps)
        rng.shuffle(bits)
        merged = interleave(r1.run, r2.run, bits)
        if not merged.ok:
            safety_failures += 1
            continue
        back1 = project_run(merged.run, list(s1.agents))
        back2 = project_run(merged.run, list(s2.agents))
        if [s.transition for s in back1.steps] != [s.transition for s in r1.run.steps]:
            round_trip_failures += 1
        elif [s.digest for s in back1.steps] != [s.digest for s in r1.run.steps]:
            round_trip_failures += 1
        elif [s.transition for s in back2.steps] != [s.transition for s in r2.run.steps]:
            round_trip_failures += 1

    bits = [0] * len(r1.run.steps) + [1] * len(r2.run.steps)
    rng.shuffle(bits)
    merged = interleave(r1.run, r2.run, bits)
    report["interleaving"] = {
        "schedules": schedules,
        "safety_failures": safety_failures,
        "round_trip_failures": round_trip_failures,
    }

    # liveness preservation: the embedded group's obligations are unchanged
    alone = pending_classes_at(r1.final_config, s1, protocol, set(s1.agents))
    merged_scenario = merge_scenarios(s1, s2)
    embedded = pending_classes_at(
        merged.final_config, merged_scenario, protocol, set(s1.agents)
    )
    new_obligations = sorted(embedded - alone)
    report["liveness"] = {
        "pending_alone": sorted(alone),
        "pending_embedded": sorted(embedded),
        "new_obligations": new_obligations,
    }
    report["non_interfering"] = (
        safety_failures == 0 and round_trip_failures == 0 and not new_obligations
    )

    # interactivity: a cross-group follow produces a state unreachable alone
    report["interactivity"] = _interactivity_witness(protocol, seed)
    report["grassroots_evidence"] = bool(
        report["non_interfering"] and report["interactivity"]["witnessed"]
    )
    return report


def _interactivity_witness(protocol: str, seed: int) -> dict:
    if protocol == "ad":
        return {
            "witnessed": False,
            "reason": "the model has no cross-group choice to exercise",
        }
    cross = Scenario(
        name="suite-cross",
        agents=["a", "b", "c"],
        friendships=[("a", "b", 0), ("a", "c", 0)],
        payloads=[("c", 0, b"outside-news")],
    )
    res = simulate(cross, SchedulerPolicy(kind="round-robin-fair", seed=seed), 400, protocol)
    identities = cross.identities()
    c_id = identities["c"].agent_id
    a_id = identities["a"].agent_id
    if protocol == "cgd":
        crossed = any(
            b.creator == c_id for b in res.final_config.store(a_id)
        )
    else:
        crossed = any(b.creator == c_id for b in res.final_config.states[a_id])
    # exhaustive small-model check: without c, no reachable state of {a, b}
    # contains any c-created block, because every rule only adds blocks
    # created inside the universe or follow-copies of member initials
    inner_only = _reachable_blocks_creators(protocol, ["a", "b"], cross, depth=6)
    impossible_alone = c_id not in inner_only
    return {
        "witnessed": bool(crossed and impossible_alone),
        "cross_behavior": crossed,
        "impossible_in_isolation": impossible_alone,
    }


def _reachable_blocks_creators(protocol, names, base: Scenario, depth: int) -> set[AgentId]:
    """Creators seen anywhere in configurations reachable by the small group."""
    scenario = Scenario(
        name=base.name + "-inner",
        agents=list(names),
        friendships=[(a, b, s) for a, b, s in base.friendships if a in names and b in names],
        follows=[(a, b, s) for a, b, s in base.follows if a in names and b in names],
        payloads=[(a, s, x) for a, s, x in base.payloads if a in names],
        seeds={k: v for k, v in base.seeds.items() if k in names},
    )
    adapter = adapter_for(protocol)
    identities = scenario.identities()
    names_map = {i.agent_id: n for n, i in identities.items()}
    volition = Volition(scenario, names_map)
    start = adapter.initial(scenario, identities)
    agents = sorted(names_map)
    seen_digests = {config_digest(adapter, start, agents)}
    creators: set[AgentId] = set()
    frontier = [start]
    for _ in range(depth):
        nxt = []
        for cfg in frontier:
            for p in agents:
                for t in adapter.enabled(cfg, p, volition, 10 ** 9):
                    if protocol == "cgd":
                        new = cgd_mod.cgd_apply(cfg, t)
                        for a in agents:
                            for blk in new.store(a):
                                creators.add(blk.creator)
                    else:
                        new = adapter.apply(cfg, t)
                        for a in agents:
                            for blk in new.states[a]:
                                creators.add(blk.creator)
                    d = config_digest(adapter, new, agents)
                    if d not in seen_digests:
                        seen_digests.add(d)
                        nxt.append(new)
        frontier = nxt
        if not frontier:
            break
    return creators


def ad_obstruction_report(seed: int = 11, max_steps: int = 400) -> dict:
    """The all-to-all strawman versus the friend-gated protocols, same script."""
    s1, s2 = _suite_scenarios()
    out: dict[str, Any] = {}
    for protocol in PROTOCOLS:
        policy = SchedulerPolicy(kind="round-robin-fair", seed=seed)
        r1 = simulate(s1, policy, max_steps, protocol)
        r2 = simulate(s2, policy, max_steps, protocol)
        rng = random.Random(seed)
        bits = [0] * len(r1.run.steps) + [1] * len(r2.run.steps)
        rng.shuffle(bits)
        merged = interleave(r1.run, r2.run, bits)
        merged_scenario = merge_scenarios(s1, s2)
        pending = pending_classes_at(
            merged.final_config, merged_scenario, protocol, set(s1.agents)
        )
        alone = pending_classes_at(r1.final_config, s1, protocol, set(s1.agents))
        out[protocol] = {
            "interleaving_safe": merged.ok,
            "undischargeable": sorted(pending - alone),
            "obstructed": bool(pending - alone),
        }
    return out
