"""Exhaustive battery for the binary agreement machine.

Runs bare :class:`~pmvba.abba.AbbaInstance` machines (no outer protocol)
over every input bit assignment at a given size, against a corpus of
adversarial delivery schedules, and checks the agreement, biased
external validity, unanimity-0, and termination properties on each run.

Parties with input 1 hold a valid certified pair for the candidate;
parties with input 0 hold nothing, mirroring how the vote gate feeds the
agreement step.  All parties follow the protocol; the adversary is the
scheduler.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .abba import AbbaInstance, AbbaOutput
from .broadcast import SIG_SCHEME, vcbc_digest
from .engine import ProtocolConfig, scheme_catalogue
from .messages import CertifiedProposal
from .simnet import (
    Event,
    IsolatePolicy,
    Policy,
    TargetedDelayPolicy,
    UniformRandomPolicy,
)
from .tcrypto import KeyMaterial, PartyKeys, key_setup

BATTERY_INSTANCE = 1
BATTERY_BUDGET = 100_000

# Round cut-offs from the geometric termination tail.
ROUND_SOFT_LIMIT = 5
ROUND_HARD_LIMIT = 40


def make_pair(
    material: KeyMaterial, instance: int, candidate: int, payload: bytes
) -> CertifiedProposal:
    """Build a verifying (payload, proof) pair the way the broadcast
    layer would, signing with the first n-f parties."""
    digest = vcbc_digest(instance, candidate, payload)
    t = material.threshold(SIG_SCHEME)
    shares = [material.sig_share(p, SIG_SCHEME, digest) for p in range(1, t + 1)]
    return CertifiedProposal(payload, material.combine(SIG_SCHEME, digest, shares))


def schedule(index: int) -> Policy:
    """Schedule corpus member ``index``.

    The corpus mixes memoryless random delivery with targeted slowdowns
    and isolation so single parties get starved of specific messages.
    """
    kind = index % 10
    if kind < 7:
        return UniformRandomPolicy(9000 + index)
    if kind < 9:
        target = (index // 10) % 4 + 1
        return TargetedDelayPolicy({target}, 3 + index % 5)
    return IsolatePolicy({(index // 10) % 4 + 1}, 4 + index % 4)


@dataclass
class BatteryRun:
    assignment: Tuple[int, ...]
    schedule_index: int
    outputs: Dict[int, AbbaOutput]
    events: int
    failure: Optional[str] = None

    @property
    def decided_bit(self) -> Optional[int]:
        bits = {out.bit for out in self.outputs.values()}
        return bits.pop() if len(bits) == 1 else None

    @property
    def rounds(self) -> int:
        return max((out.round for out in self.outputs.values()), default=0)


@dataclass
class BatterySummary:
    n: int
    f: int
    runs: int = 0
    failures: List[str] = field(default_factory=list)
    round_histogram: Dict[int, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def within(self, limit: int) -> float:
        if not self.runs:
            return 0.0
        good = sum(c for r, c in self.round_histogram.items() if r <= limit)
        return good / self.runs


def battery_run(
    n: int,
    f: int,
    assignment: Tuple[int, ...],
    policy: Policy,
    master_seed: bytes,
    candidate: int = 1,
    budget: int = BATTERY_BUDGET,
) -> BatteryRun:
    """One agreement execution: n machines, given inputs, given schedule."""
    config = ProtocolConfig(n=n, f=f)
    material = key_setup(n, scheme_catalogue(n, f), master_seed)
    policy.bind(material, config)
    payload = bytes(
        (candidate * 131 + k) % 255 + 1 for k in range(config.tx_size)
    )
    pair = make_pair(material, BATTERY_INSTANCE, candidate, payload)

    machines = {
        p: AbbaInstance(material, PartyKeys(material, p), BATTERY_INSTANCE, candidate)
        for p in range(1, n + 1)
    }
    seq = 0
    now = 0
    events = 0

    def broadcast(frm: int, msgs) -> None:
        nonlocal seq
        for msg in msgs:
            for to in range(1, n + 1):
                seq += 1
                policy.enqueue(Event(seq, now, frm, to, msg, msg.size_bytes()))

    for p, machine in machines.items():
        bit = assignment[p - 1]
        broadcast(p, machine.start(bit, pair if bit == 1 else None))

    failure = None
    while any(machine.output is None for machine in machines.values()):
        if events >= budget:
            failure = "event budget exhausted before all parties decided"
            break
        ev = policy.pick(now)
        if ev is None:
            failure = "no pending events but some party undecided"
            break
        now = ev.time
        events += 1
        broadcast(ev.to, machines[ev.to].deliver(ev.frm, ev.msg))

    outputs = {p: m.output for p, m in machines.items() if m.output is not None}
    return BatteryRun(assignment, -1, outputs, events, failure)


def check_run(run: BatteryRun, f: int) -> List[str]:
    """Property violations in one run, empty when clean."""
    problems = []
    if run.failure:
        problems.append(run.failure)
        return problems
    bit = run.decided_bit
    if bit is None:
        problems.append(f"outputs disagree: { {p: o.bit for p, o in run.outputs.items()} }")
        return problems
    ones = sum(run.assignment)
    if ones >= f + 1 and bit != 1:
        problems.append(f"{ones} parties input 1 but decided {bit}")
    if ones == 0 and bit != 0:
        problems.append(f"all inputs 0 but decided {bit}")
    if run.rounds > ROUND_HARD_LIMIT:
        problems.append(f"took {run.rounds} rounds")
    return problems


def run_battery(n: int = 4, f: int = 1, schedules: int = 100) -> BatterySummary:
    """All 2^n input assignments against the schedule corpus."""
    summary = BatterySummary(n, f)
    for assignment in itertools.product((0, 1), repeat=n):
        for k in range(schedules):
            seed = (0xBA77E0 + k).to_bytes(8, "big")
            run = battery_run(n, f, assignment, schedule(k), seed)
            run.schedule_index = k
            summary.runs += 1
            rounds = run.rounds
            summary.round_histogram[rounds] = summary.round_histogram.get(rounds, 0) + 1
            for problem in check_run(run, f):
                summary.failures.append(
                    f"assignment={assignment} schedule={k}: {problem}"
                )
    return summary
