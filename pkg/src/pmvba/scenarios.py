"""Named case-study scenarios with machine-checked expectations.

Each scenario fixes size, schedule policy, and fault pattern, resolves
its concrete targets (which parties to crash or slow) from the committee
the seed will produce, runs one simulation, and evaluates a list of
checks against the metrics.  Nothing here reads engine internals; every
check is a function of :class:`~pmvba.simnet.RunMetrics`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

from .battery import ROUND_HARD_LIMIT, ROUND_SOFT_LIMIT, run_battery
from .committee import cs_coin_name, derive_committee, derive_order, order_coin_name
from .engine import ProtocolConfig, scheme_catalogue
from .simnet import (
    IsolatePolicy,
    LockstepPolicy,
    Policy,
    RunMetrics,
    Simulation,
    TargetedDelayPolicy,
    WorstCaseOrderPolicy,
)
from .tcrypto import key_setup

DEFAULT_SEED = 11


@dataclass(frozen=True)
class CheckResult:
    label: str
    ok: bool
    detail: str


@dataclass
class ScenarioReport:
    name: str
    ok: bool
    checks: List[CheckResult]
    summary: Dict[str, object]


def _material(n: int, f: int, master_seed: bytes):
    return key_setup(n, scheme_catalogue(n, f), master_seed)


def committee_and_order(
    n: int, f: int, master_seed: bytes, instance: int = 1
) -> Tuple[List[int], List[int]]:
    """The committee and candidate order the oracle will produce for a
    seed, available to scenario resolution before any run starts."""
    material = _material(n, f, master_seed)
    committee = derive_committee(
        material.coin_value(cs_coin_name(instance)), n, f + 1
    )
    order = derive_order(
        material.coin_value(order_coin_name(instance)), n, committee
    )
    return committee, order


def reach_counts(metrics: RunMetrics, instance: int = 1) -> Dict[int, int]:
    """Per-proposer holder counts at the agreement-entry snapshot."""
    result = metrics.instances[instance]
    counts: Dict[int, int] = {}
    for held in result.reach_at_entry.values():
        for proposer in held:
            counts[proposer] = counts.get(proposer, 0) + 1
    return counts


def _basic_checks(
    metrics: RunMetrics, n: int, f: int, live: List[int]
) -> List[CheckResult]:
    checks = [
        CheckResult(
            "decided",
            metrics.outcome == "decided",
            f"outcome={metrics.outcome} violation={metrics.violation}",
        )
    ]
    for result in metrics.instances.values():
        deciders = [p for p in live if p in result.decide_time]
        checks.append(
            CheckResult(
                f"instance {result.instance}: all live parties decide",
                len(deciders) == len(live),
                f"{len(deciders)}/{len(live)} decided",
            )
        )
        checks.append(
            CheckResult(
                f"instance {result.instance}: proposer in committee",
                result.decided_proposer in result.committee,
                f"proposer={result.decided_proposer} committee={result.committee}",
            )
        )
        worst = max((result.iterations.get(p, 0) for p in live), default=0)
        checks.append(
            CheckResult(
                f"instance {result.instance}: iterations within f+1",
                worst <= f + 1,
                f"max iterations {worst}",
            )
        )
    return checks


class Scenario:
    """Base: a named, seeded, self-checking configuration."""

    name = "scenario"
    description = ""
    n = 4
    f = 1

    def resolve(self, master_seed: bytes) -> Dict[str, object]:
        """Concrete targets for this seed (committee, crashes, ...)."""
        committee, order = committee_and_order(self.n, self.f, master_seed)
        return {"committee": committee, "order": order}

    def policy(self, resolved: Dict[str, object], seed: int) -> Policy:
        return LockstepPolicy()

    def behaviors(self, resolved: Dict[str, object]) -> Dict[int, str]:
        return {}

    def crashes(self, resolved: Dict[str, object]) -> Dict[int, int]:
        return {}

    def extra_checks(
        self, metrics: RunMetrics, resolved: Dict[str, object]
    ) -> List[CheckResult]:
        return []

    def run(self, seed: int = DEFAULT_SEED) -> ScenarioReport:
        master_seed = seed.to_bytes(8, "big")
        resolved = self.resolve(master_seed)
        crashes = self.crashes(resolved)
        behaviors = self.behaviors(resolved)
        sim = Simulation(
            ProtocolConfig(n=self.n, f=self.f),
            master_seed,
            self.policy(resolved, seed),
            behaviors=behaviors,
            crashes=crashes,
        )
        metrics = sim.run()
        live = [
            p
            for p in range(1, self.n + 1)
            if p not in crashes and behaviors.get(p) is None
        ]
        checks = _basic_checks(metrics, self.n, self.f, live)
        checks.extend(self.extra_checks(metrics, resolved))
        summary: Dict[str, object] = {
            "n": self.n,
            "f": self.f,
            "seed": seed,
            "committee": resolved.get("committee"),
            "order": resolved.get("order"),
            "time": metrics.time,
            "events": metrics.events,
            "msgs_total": metrics.msgs_total,
            "reach_at_entry": reach_counts(metrics),
            "reach_final": {
                proposer: sum(
                    proposer in held
                    for held in metrics.instances[1].reach_final.values()
                )
                for proposer in resolved.get("committee", [])
            },
        }
        return ScenarioReport(self.name, all(c.ok for c in checks), checks, summary)


class AllResponsiveN4(Scenario):
    name = "all_responsive_n4"
    description = "n=4 lockstep, no faults; decides in one iteration"

    def extra_checks(self, metrics, resolved):
        result = metrics.instances[1]
        worst = max(result.iterations.values(), default=0)
        return [
            CheckResult("single iteration", worst == 1, f"iterations {worst}"),
            CheckResult(
                "every committee proposal reaches all parties",
                all(
                    count == self.n
                    for count in reach_counts(metrics).values()
                ),
                f"reach {reach_counts(metrics)}",
            ),
        ]


class StarvedMemberN4(Scenario):
    name = "starved_member_n4"
    description = "n=4, one committee member's broadcasts delayed behind the rest"

    def policy(self, resolved, seed):
        starved = resolved["order"][0]
        resolved["starved"] = starved
        return IsolatePolicy({starved}, 8)

    def extra_checks(self, metrics, resolved):
        result = metrics.instances[1]
        worst = max(result.iterations.values(), default=0)
        return [
            CheckResult(
                "still decides within f+1 iterations",
                metrics.outcome == "decided" and worst <= self.f + 1,
                f"iterations {worst}",
            )
        ]


class IsolatedMemberN4(Scenario):
    name = "isolated_member_n4"
    description = "n=4, a committee member fully slowed both ways, catches up later"

    def policy(self, resolved, seed):
        return IsolatePolicy({resolved["committee"][0]}, 6)


class CrashedNonmemberN4(Scenario):
    name = "crashed_nonmember_n4"
    description = "n=4, one non-selected party crashed from the start"

    def crashes(self, resolved):
        outside = [
            p for p in range(1, self.n + 1) if p not in resolved["committee"]
        ]
        resolved["crashed"] = outside[:1]
        return {outside[0]: 0}

    def extra_checks(self, metrics, resolved):
        counts = reach_counts(metrics)
        need = self.n - self.f
        return [
            CheckResult(
                f"some proposal reaches >= {need}",
                max(counts.values(), default=0) >= need,
                f"reach {counts}",
            )
        ]


class _CaseStudy(Scenario):
    n = 10
    f = 3


class Case3AllResponsive(_CaseStudy):
    name = "case3_all_responsive"
    description = "n=10 f=3, everyone responsive: all 4 proposals reach >= 7 parties"

    def extra_checks(self, metrics, resolved):
        counts = reach_counts(metrics)
        need = 2 * self.f + 1
        checks = [
            CheckResult(
                f"proposal of member {m} reaches >= {need}",
                counts.get(m, 0) >= need,
                f"reach {counts.get(m, 0)}",
            )
            for m in resolved["committee"]
        ]
        result = metrics.instances[1]
        worst = max(result.iterations.values(), default=0)
        checks.append(
            CheckResult("single iteration", worst == 1, f"iterations {worst}")
        )
        return checks


class Case1SelectedSilent(_CaseStudy):
    name = "case1_f_selected_silent"
    description = "n=10 f=3, f selected members silent; the lone live member carries"

    def crashes(self, resolved):
        silent = resolved["committee"][: self.f]
        resolved["silent"] = silent
        resolved["live_member"] = [
            m for m in resolved["committee"] if m not in silent
        ][0]
        return {p: 0 for p in silent}

    def extra_checks(self, metrics, resolved):
        counts = reach_counts(metrics)
        live_member = resolved["live_member"]
        need = 2 * self.f + 1
        return [
            CheckResult(
                f"live member {live_member} reaches >= {need}",
                counts.get(live_member, 0) >= need,
                f"reach {counts.get(live_member, 0)}",
            ),
            CheckResult(
                "silent members reach nobody",
                all(counts.get(m, 0) == 0 for m in resolved["silent"]),
                f"reach {counts}",
            ),
            CheckResult(
                "decision lands on the live member",
                metrics.instances[1].decided_proposer == live_member,
                f"proposer {metrics.instances[1].decided_proposer}",
            ),
        ]


class Case2NonselectedSilent(_CaseStudy):
    name = "case2_f_nonselected_silent"
    description = "n=10 f=3, f non-selected parties silent; every proposal still spreads"

    def crashes(self, resolved):
        outside = [
            p for p in range(1, self.n + 1) if p not in resolved["committee"]
        ]
        resolved["silent"] = outside[: self.f]
        return {p: 0 for p in resolved["silent"]}

    def extra_checks(self, metrics, resolved):
        counts = reach_counts(metrics)
        need = 2 * self.f + 1
        return [
            CheckResult(
                f"proposal of member {m} reaches >= {need}",
                counts.get(m, 0) >= need,
                f"reach {counts.get(m, 0)}",
            )
            for m in resolved["committee"]
        ]


class TwoSelectedSilent(_CaseStudy):
    name = "two_selected_silent"
    description = "n=10 f=3, two committee members silent, two carry the instance"

    def crashes(self, resolved):
        silent = resolved["committee"][:2]
        resolved["silent"] = silent
        return {p: 0 for p in silent}

    def extra_checks(self, metrics, resolved):
        counts = reach_counts(metrics)
        live = [m for m in resolved["committee"] if m not in resolved["silent"]]
        need = 2 * self.f + 1
        return [
            CheckResult(
                f"live member {m} reaches >= {need}",
                counts.get(m, 0) >= need,
                f"reach {counts.get(m, 0)}",
            )
            for m in live
        ] + [
            CheckResult(
                "decision lands on a live member",
                metrics.instances[1].decided_proposer in live,
                f"proposer {metrics.instances[1].decided_proposer}",
            )
        ]


class OneSelectedSilent(_CaseStudy):
    name = "one_selected_silent"
    description = "n=10 f=3, one committee member silent"

    def crashes(self, resolved):
        resolved["silent"] = resolved["committee"][:1]
        return {resolved["committee"][0]: 0}

    def extra_checks(self, metrics, resolved):
        counts = reach_counts(metrics)
        live = [m for m in resolved["committee"] if m not in resolved["silent"]]
        need = 2 * self.f + 1
        return [
            CheckResult(
                "every live member reaches the quorum",
                all(counts.get(m, 0) >= need for m in live),
                f"reach {counts}",
            )
        ]


class SkewedDelivery(_CaseStudy):
    name = "skewed_delivery"
    description = "n=10 f=3, three parties on slow links, everyone still decides"

    def policy(self, resolved, seed):
        slow = {self.n - 2, self.n - 1, self.n}
        resolved["slow"] = sorted(slow)
        return TargetedDelayPolicy(slow, 4)


class Lemma2WorstOrder(Scenario):
    name = "lemma2_worst_order"
    description = "n=4, order-aware adversary starves early candidates: exactly f+1 iterations"

    def policy(self, resolved, seed):
        return WorstCaseOrderPolicy()

    def extra_checks(self, metrics, resolved):
        result = metrics.instances[1]
        iterations = set(result.iterations.values())
        return [
            CheckResult(
                f"every party takes exactly {self.f + 1} iterations",
                iterations == {self.f + 1},
                f"iterations {sorted(iterations)}",
            ),
            CheckResult(
                "decision lands on the last ordered candidate",
                result.decided_proposer == result.order[-1],
                f"proposer {result.decided_proposer} order {result.order}",
            ),
        ]


class AbbaBias(Scenario):
    name = "abba_bias"
    description = "bare binary agreement battery: all input assignments x schedules"
    schedules = 20

    def run(self, seed: int = DEFAULT_SEED) -> ScenarioReport:
        summary = run_battery(n=self.n, f=self.f, schedules=self.schedules)
        checks = [
            CheckResult(
                "agreement, biased validity, unanimity-0 in every run",
                summary.ok,
                summary.failures[0] if summary.failures else
                f"{summary.runs} runs clean",
            ),
            CheckResult(
                "99% of runs within 5 rounds",
                summary.within(ROUND_SOFT_LIMIT) >= 0.99,
                f"{summary.within(ROUND_SOFT_LIMIT):.4f}",
            ),
            CheckResult(
                "all runs within 40 rounds",
                summary.within(ROUND_HARD_LIMIT) == 1.0,
                f"{summary.within(ROUND_HARD_LIMIT):.4f}",
            ),
        ]
        report_summary: Dict[str, object] = {
            "n": self.n,
            "f": self.f,
            "runs": summary.runs,
            "round_histogram": dict(sorted(summary.round_histogram.items())),
        }
        return ScenarioReport(
            self.name, all(c.ok for c in checks), checks, report_summary
        )


SCENARIOS: Dict[str, Scenario] = {
    scenario.name: scenario
    for scenario in [
        AllResponsiveN4(),
        StarvedMemberN4(),
        IsolatedMemberN4(),
        CrashedNonmemberN4(),
        Case3AllResponsive(),
        Case1SelectedSilent(),
        Case2NonselectedSilent(),
        TwoSelectedSilent(),
        OneSelectedSilent(),
        SkewedDelivery(),
        Lemma2WorstOrder(),
        AbbaBias(),
    ]
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        known = ", ".join(sorted(SCENARIOS))
        raise KeyError(f"unknown scenario {name!r}; known: {known}") from None
