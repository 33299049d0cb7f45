"""Deterministic network simulator with adversarial scheduling.

Time is an integer tick counter.  Every send is an event; a delivery policy
decides which pending event lands next and at what time, under one hard
rule: delivery time is at least send time + 1, and nothing sent between
correct parties is ever lost (crash drops are the modelled exception).
Broadcasts loop back to the sender through the same queue, so a party's own
messages race with everyone else's.

Policies:

* ``lockstep``     every message takes exactly one tick, ties broken by
                   (time, recipient, sequence),
* ``uniform_random`` the adversary picks uniformly among pending events,
* ``targeted_delay`` messages to target parties take extra ticks,
* ``isolate``      messages to or from targets take extra ticks,
* ``worst_case_order`` starves the proposals of the first f candidates in
                   the decided order until every party has moved past them,
                   forcing the maximum number of iterations.

Crashes are a simulation-level parameter (party -> crash time) so they
compose with any policy; a silent party is a crash at time 0.

The simulator also audits two run invariants: honest parties must never
decide different proposers, and no honest party may enter the agreement
phase before 2f + 1 parties finished the recommendation exchange.  A trip
ends the run with outcome ``protocol-violation`` and a transcript prefix.
"""

from __future__ import annotations

import heapq
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .committee import cs_coin_name, derive_committee, derive_order, order_coin_name
from .engine import (
    HONEST,
    ActionBroadcast,
    ActionDecided,
    ActionTimer,
    ActionUnicast,
    PartyEngine,
    ProtocolConfig,
    ProtocolViolation,
    scheme_catalogue,
)
from .messages import (
    AbstainEvidence,
    CertifiedProposal,
    Decide,
    MainVote,
    Message,
    PreProcess,
    PreVote,
    Propose,
    Recommendation,
    RecoverAnswer,
    VcbcSend,
    Vote,
)
from .tcrypto import KeyMaterial, PartyKeys, key_setup

EVENT_BUDGET = 10**6
TRANSCRIPT_LIMIT = 200


@dataclass
class Event:
    seq: int
    send_time: int
    frm: int
    to: int
    msg: Message
    size: int
    time: int = 0


def payload_portion(msg: Message) -> int:
    """Raw transaction bytes inside a message; the rest of size_bytes is
    signature share / proof overhead."""
    if isinstance(msg, (VcbcSend, Propose, Recommendation, RecoverAnswer)):
        return len(msg.payload)
    if isinstance(msg, Vote):
        return len(msg.payload) if msg.payload is not None else 0
    if isinstance(msg, (PreProcess, Decide)):
        just = msg.justification
        return len(just.payload) if isinstance(just, CertifiedProposal) else 0
    if isinstance(msg, PreVote):
        just = msg.justification
        return len(just.payload) if isinstance(just, CertifiedProposal) else 0
    if isinstance(msg, MainVote):
        just = msg.justification
        if isinstance(just, AbstainEvidence):
            return payload_portion(just.zero_vote) + payload_portion(just.one_vote)
        return 0
    return 0


class Policy:
    """Delivery order chooser.  ``enqueue`` takes ownership of an event,
    ``pick`` commits to the next delivery (returning the event with its
    ``time`` set, monotone and >= send_time + 1)."""

    name = "policy"

    def bind(self, material: KeyMaterial, config: ProtocolConfig) -> None:
        pass

    def enqueue(self, ev: Event) -> None:
        raise NotImplementedError

    def pick(self, now: int) -> Optional[Event]:
        raise NotImplementedError


class LockstepPolicy(Policy):
    name = "lockstep"

    def __init__(self):
        self.heap: List[Tuple[int, int, int, Event]] = []

    def enqueue(self, ev: Event) -> None:
        ev.time = ev.send_time + 1
        heapq.heappush(self.heap, (ev.time, ev.to, ev.seq, ev))

    def pick(self, now: int) -> Optional[Event]:
        if not self.heap:
            return None
        return heapq.heappop(self.heap)[3]


class UniformRandomPolicy(Policy):
    """Adversary with no plan: each step delivers a uniformly random
    pending message, as early as the one-tick rule allows."""

    name = "uniform_random"

    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self.pending: List[Event] = []

    def enqueue(self, ev: Event) -> None:
        self.pending.append(ev)

    def pick(self, now: int) -> Optional[Event]:
        if not self.pending:
            return None
        ev = self.pending.pop(self.rng.randrange(len(self.pending)))
        ev.time = max(now, ev.send_time + 1)
        return ev


class TargetedDelayPolicy(Policy):
    """Messages to the target parties take 1 + delay ticks, the rest 1."""

    name = "targeted_delay"

    def __init__(self, targets: Set[int], delay: int):
        self.targets = set(targets)
        self.delay = delay
        self.heap: List[Tuple[int, int, int, Event]] = []

    def slowed(self, ev: Event) -> bool:
        return ev.to in self.targets

    def enqueue(self, ev: Event) -> None:
        ev.time = ev.send_time + 1 + (self.delay if self.slowed(ev) else 0)
        heapq.heappush(self.heap, (ev.time, ev.to, ev.seq, ev))

    def pick(self, now: int) -> Optional[Event]:
        if not self.heap:
            return None
        return heapq.heappop(self.heap)[3]


class IsolatePolicy(TargetedDelayPolicy):
    """Messages to or from the targets take 1 + delay ticks."""

    name = "isolate"

    def slowed(self, ev: Event) -> bool:
        return ev.to in self.targets or ev.frm in self.targets


class WorstCaseOrderPolicy(Policy):
    """Forces the iteration maximum: for each instance, the proposals (and
    any relays) of the first f candidates in the decided order are held
    back, self-delivery included, until every party has voted on the next
    position.  Held messages are then released and delivered normally, so
    the eventual-delivery rule is kept."""

    name = "worst_case_order"

    def __init__(self):
        self.heap: List[Tuple[int, int, int, Event]] = []
        self.starved: Dict[int, Dict[int, int]] = {}  # instance -> proposer -> pos
        self.release_vote: Dict[Tuple[int, int], int] = {}  # (inst, pos) -> candidate
        self.passed: Dict[Tuple[int, int], Set[int]] = {}
        self.held: Dict[Tuple[int, int], List[Event]] = {}
        self.released: Set[Tuple[int, int]] = set()
        self.n = 0

    def bind(self, material: KeyMaterial, config: ProtocolConfig) -> None:
        self.n = config.n
        for instance in range(1, config.instances + 1):
            committee = derive_committee(
                material.coin_value(cs_coin_name(instance)),
                config.n,
                config.committee_size,
            )
            order = derive_order(
                material.coin_value(order_coin_name(instance)), config.n, committee
            )
            starve = min(config.f, len(order) - 1)
            self.starved[instance] = {order[pos]: pos for pos in range(starve)}
            for pos in range(starve):
                self.release_vote[(instance, pos)] = order[pos + 1]

    def _starved_pos(self, ev: Event) -> Optional[int]:
        msg = ev.msg
        if isinstance(msg, (Propose, Recommendation)):
            pos = self.starved.get(msg.instance, {}).get(msg.proposer)
            if pos is not None and (msg.instance, pos) not in self.released:
                return pos
        return None

    def _push(self, ev: Event) -> None:
        heapq.heappush(self.heap, (ev.time, ev.to, ev.seq, ev))

    def enqueue(self, ev: Event) -> None:
        pos = self._starved_pos(ev)
        if pos is not None:
            self.held.setdefault((ev.msg.instance, pos), []).append(ev)
            return
        if isinstance(ev.msg, Vote):
            for (instance, pos), candidate in self.release_vote.items():
                if (
                    ev.msg.instance == instance
                    and ev.msg.candidate == candidate
                    and (instance, pos) not in self.released
                ):
                    passed = self.passed.setdefault((instance, pos), set())
                    passed.add(ev.frm)
                    if len(passed) >= self.n:
                        self._release(instance, pos, ev.send_time)
        ev.time = ev.send_time + 1
        self._push(ev)

    def _release(self, instance: int, pos: int, send_time: int) -> None:
        self.released.add((instance, pos))
        for held in self.held.pop((instance, pos), []):
            held.send_time = send_time
            held.time = send_time + 1
            self._push(held)

    def pick(self, now: int) -> Optional[Event]:
        if not self.heap:
            return None
        return heapq.heappop(self.heap)[3]


@dataclass
class InstanceResult:
    instance: int
    committee: List[int]
    order: List[int]
    decided_proposer: Optional[int] = None
    decided_payload: Optional[bytes] = None
    decide_time: Dict[int, int] = field(default_factory=dict)
    iterations: Dict[int, int] = field(default_factory=dict)
    decide_round: Dict[int, int] = field(default_factory=dict)
    entry_time: Optional[int] = None
    entered_by: Optional[int] = None
    scr_at_entry: Dict[int, bool] = field(default_factory=dict)
    reach_at_entry: Dict[int, Set[int]] = field(default_factory=dict)
    scr_final: Dict[int, bool] = field(default_factory=dict)
    reach_final: Dict[int, Set[int]] = field(default_factory=dict)


@dataclass
class RunMetrics:
    outcome: str
    events: int
    time: int
    msgs_by_type: Dict[str, int]
    msgs_total: int
    bytes_total: int
    bytes_payload: int
    bytes_overhead: int
    instances: Dict[int, InstanceResult]
    diagnostics: Counter
    dropped: int
    violation: Optional[str]
    transcript: List[str]


class Simulation:
    """One protocol run under one policy."""

    def __init__(
        self,
        config: ProtocolConfig,
        master_seed: bytes,
        policy: Policy,
        behaviors: Optional[Dict[int, str]] = None,
        crashes: Optional[Dict[int, int]] = None,
        budget: int = EVENT_BUDGET,
        payload_fn=None,
    ):
        self.config = config
        self.material = key_setup(
            config.n, scheme_catalogue(config.n, config.f), master_seed
        )
        self.policy = policy
        policy.bind(self.material, config)
        self.behaviors = dict(behaviors or {})
        self.crashes = dict(crashes or {})
        self.budget = budget
        self.engines: Dict[int, PartyEngine] = {}
        for p in range(1, config.n + 1):
            fn = None if payload_fn is None else (lambda i, p=p: payload_fn(p, i))
            self.engines[p] = PartyEngine(
                config,
                p,
                PartyKeys(self.material, p),
                self.material,
                behavior=self.behaviors.get(p, HONEST),
                payload_fn=fn,
            )
        self.honest = [
            p
            for p in range(1, config.n + 1)
            if self.behaviors.get(p, HONEST) == HONEST
        ]
        self.live_honest = [p for p in self.honest if p not in self.crashes]

        self.now = 0
        self.seq = 0
        self.tseq = 0
        self.events = 0
        self.dropped = 0
        self.timers: List[Tuple[int, int, int, Tuple]] = []
        self.msgs_by_type: Counter = Counter()
        self.bytes_payload = 0
        self.bytes_overhead = 0
        self.transcript: List[str] = []
        self.violation: Optional[str] = None
        self.results: Dict[int, InstanceResult] = {}
        for instance in range(1, config.instances + 1):
            committee = derive_committee(
                self.material.coin_value(cs_coin_name(instance)),
                config.n,
                config.committee_size,
            )
            order = derive_order(
                self.material.coin_value(order_coin_name(instance)),
                config.n,
                committee,
            )
            self.results[instance] = InstanceResult(instance, committee, order)

    # -- plumbing ---------------------------------------------------------

    def _crashed(self, party: int, time: int) -> bool:
        return party in self.crashes and time >= self.crashes[party]

    def _enqueue(self, frm: int, to: int, msg: Message) -> None:
        size = msg.size_bytes()
        self.seq += 1
        ev = Event(self.seq, self.now, frm, to, msg, size)
        self.msgs_by_type[msg.wire_type] += 1
        payload = payload_portion(msg)
        self.bytes_payload += payload
        self.bytes_overhead += size - payload
        self.policy.enqueue(ev)

    def _process(self, party: int, actions: List) -> None:
        for action in actions:
            if isinstance(action, ActionBroadcast):
                if isinstance(action.msg, Vote) and party in self.honest:
                    self._note_entry(party, action.msg.instance)
                for to in range(1, self.config.n + 1):
                    self._enqueue(party, to, action.msg)
            elif isinstance(action, ActionUnicast):
                self._enqueue(party, action.to, action.msg)
            elif isinstance(action, ActionTimer):
                self.tseq += 1
                heapq.heappush(
                    self.timers, (self.now + action.delay, self.tseq, party, action.tag)
                )
            elif isinstance(action, ActionDecided):
                self._note_decided(party, action)

    def _note_entry(self, party: int, instance: int) -> None:
        result = self.results[instance]
        if result.entry_time is not None or self._crashed(party, self.now):
            return
        result.entry_time = self.now
        result.entered_by = party
        reach: Counter = Counter()
        for q, engine in self.engines.items():
            result.scr_at_entry[q] = engine.reco_complete(instance)
            held = engine.held_proposers(instance)
            result.reach_at_entry[q] = held
            for proposer in held:
                reach[proposer] += 1
        need = 2 * self.config.f + 1
        best = max(reach.values(), default=0)
        if best < need:
            raise ProtocolViolation(
                f"instance {instance}: agreement entered with best proposal reach "
                f"{best} (need {need})"
            )

    def _note_decided(self, party: int, action: ActionDecided) -> None:
        result = self.results[action.instance]
        result.decide_time.setdefault(party, self.now)
        result.iterations.setdefault(party, action.iterations)
        result.decide_round.setdefault(party, action.round)
        if party not in self.honest:
            return
        if result.decided_proposer is None:
            result.decided_proposer = action.proposer
            result.decided_payload = action.payload
            return
        if (
            result.decided_proposer != action.proposer
            or result.decided_payload != action.payload
        ):
            raise ProtocolViolation(
                f"instance {action.instance}: party {party} decided proposer "
                f"{action.proposer}, others decided {result.decided_proposer}"
            )

    def _fire_timer(self) -> None:
        time, _, party, tag = heapq.heappop(self.timers)
        self.now = max(self.now, time)
        self.events += 1
        if self._crashed(party, time):
            return
        self._process(party, self.engines[party].on_timer(tag))

    def _deliver(self, ev: Event) -> None:
        self.now = ev.time
        self.events += 1
        if len(self.transcript) < TRANSCRIPT_LIMIT:
            self.transcript.append(
                f"{ev.time},{ev.frm},{ev.to},{ev.msg.wire_type},{ev.size}"
            )
        if self._crashed(ev.to, ev.time):
            self.dropped += 1
            return
        self._process(ev.to, self.engines[ev.to].deliver(ev.frm, ev.msg))

    def _all_done(self) -> bool:
        return all(self.engines[p].all_done() for p in self.live_honest)

    # -- runner -----------------------------------------------------------

    def run(self) -> RunMetrics:
        outcome = "decided"
        try:
            for p in range(1, self.config.n + 1):
                if not self._crashed(p, 0):
                    self._process(p, self.engines[p].start())
            while True:
                if self._all_done():
                    break
                if self.events >= self.budget:
                    outcome = "liveness-failure"
                    break
                ev = self.policy.pick(self.now)
                if ev is None:
                    if self.timers:
                        self._fire_timer()
                        continue
                    outcome = "liveness-failure"
                    break
                while self.timers and self.timers[0][0] < ev.time:
                    self._fire_timer()
                self._deliver(ev)
        except ProtocolViolation as exc:
            outcome = "protocol-violation"
            self.violation = str(exc)
        for instance, result in self.results.items():
            for q, engine in self.engines.items():
                result.scr_final[q] = engine.reco_complete(instance)
                result.reach_final[q] = engine.held_proposers(instance)
        diagnostics: Counter = Counter()
        for engine in self.engines.values():
            diagnostics.update(engine.diagnostics_snapshot())
        return RunMetrics(
            outcome=outcome,
            events=self.events,
            time=self.now,
            msgs_by_type=dict(self.msgs_by_type),
            msgs_total=sum(self.msgs_by_type.values()),
            bytes_total=self.bytes_payload + self.bytes_overhead,
            bytes_payload=self.bytes_payload,
            bytes_overhead=self.bytes_overhead,
            instances=self.results,
            diagnostics=diagnostics,
            dropped=self.dropped,
            violation=self.violation,
            transcript=self.transcript,
        )
