"""Run configuration, CSV emission, seed sweeps, and chart rendering.

The harness owns everything outside the protocol: turning a config into
a simulation, flattening metrics into the frozen CSV schema, fitting
message and byte scaling exponents across sizes, and drawing the two
shipped chart panels (simulated decide time vs n, messages vs n).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .engine import EQUIVOCATE_VCBC, HONEST, ProtocolConfig, VOTE_ZERO
from .simnet import (
    EVENT_BUDGET,
    IsolatePolicy,
    LockstepPolicy,
    Policy,
    RunMetrics,
    Simulation,
    TargetedDelayPolicy,
    UniformRandomPolicy,
    WorstCaseOrderPolicy,
)

CSV_HEADER = [
    "instance",
    "party",
    "decided_proposer",
    "decide_round",
    "iterations",
    "msgs_total",
    "bytes_total",
]

SILENCE = "silence"
BEHAVIOR_NAMES = (SILENCE, VOTE_ZERO, EQUIVOCATE_VCBC)

POLICY_KINDS = (
    "lockstep",
    "uniform_random",
    "targeted_delay",
    "isolate",
    "crash",
    "worst_case_order",
)


@dataclass
class RunConfig:
    """One simulation run as the CLI and config files describe it."""

    n: int = 4
    f: int = 1
    seed: str = "01"
    instances: int = 1
    batch_size: int = 256
    tx_size: int = 4
    adversary: str = "lockstep"
    delay: int = 4
    corrupted: Dict[int, str] = field(default_factory=dict)
    scenario: Optional[str] = None
    output: Optional[str] = None
    budget_per_instance: int = EVENT_BUDGET

    def validate(self) -> None:
        if self.n <= 3 * self.f:
            raise ValueError(f"need n > 3f, got n={self.n} f={self.f}")
        kind = self.adversary.split(":", 1)[0]
        if kind not in POLICY_KINDS:
            raise ValueError(
                f"unknown adversary {kind!r}; known: {', '.join(POLICY_KINDS)}"
            )
        for party, behavior in self.corrupted.items():
            if not 1 <= party <= self.n:
                raise ValueError(f"corrupted party {party} out of range")
            if behavior not in BEHAVIOR_NAMES:
                raise ValueError(
                    f"unknown behavior {behavior!r}; known: {', '.join(BEHAVIOR_NAMES)}"
                )
        faulty = set(self.corrupted) | set(_parse_crashes(self.adversary))
        if len(faulty) > self.f:
            raise ValueError(
                f"{len(faulty)} corrupted/crashed parties exceeds f={self.f}"
            )

    @property
    def master_seed(self) -> bytes:
        text = self.seed.removeprefix("0x")
        if len(text) % 2:
            text = "0" + text
        return bytes.fromhex(text)

    @property
    def rng_seed(self) -> int:
        return int.from_bytes(self.master_seed, "big") & 0xFFFFFFFF


def _parse_crashes(adversary: str) -> Dict[int, int]:
    kind, _, params = adversary.partition(":")
    if kind != "crash":
        return {}
    crashes: Dict[int, int] = {}
    for entry in filter(None, params.split(",")):
        party, _, at = entry.partition("@")
        crashes[int(party)] = int(at) if at else 0
    return crashes


def _parse_targets(adversary: str) -> frozenset:
    _, _, params = adversary.partition(":")
    return frozenset(int(p) for p in filter(None, params.split(",")))


def build_policy(cfg: RunConfig) -> Policy:
    kind = cfg.adversary.split(":", 1)[0]
    if kind == "uniform_random":
        return UniformRandomPolicy(cfg.rng_seed)
    if kind == "targeted_delay":
        return TargetedDelayPolicy(set(_parse_targets(cfg.adversary)), cfg.delay)
    if kind == "isolate":
        return IsolatePolicy(set(_parse_targets(cfg.adversary)), cfg.delay)
    if kind == "worst_case_order":
        return WorstCaseOrderPolicy()
    # plain crash keeps lockstep delivery for the survivors
    return LockstepPolicy()


def build_simulation(cfg: RunConfig) -> Simulation:
    cfg.validate()
    crashes = _parse_crashes(cfg.adversary)
    behaviors = {}
    for party, behavior in cfg.corrupted.items():
        if behavior == SILENCE:
            crashes.setdefault(party, 0)
        else:
            behaviors[party] = behavior
    return Simulation(
        ProtocolConfig(
            n=cfg.n,
            f=cfg.f,
            instances=cfg.instances,
            batch_size=cfg.batch_size,
            tx_size=cfg.tx_size,
        ),
        cfg.master_seed,
        build_policy(cfg),
        behaviors=behaviors,
        crashes=crashes,
        budget=cfg.budget_per_instance * cfg.instances,
    )


def run_config(cfg: RunConfig) -> RunMetrics:
    return build_simulation(cfg).run()


def load_config(path: str) -> RunConfig:
    """Read a JSON config file whose keys mirror RunConfig fields."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if "corrupted" in raw:
        raw["corrupted"] = {int(k): v for k, v in raw["corrupted"].items()}
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**raw)


def csv_rows(metrics: RunMetrics, n: int) -> List[List[object]]:
    rows: List[List[object]] = []
    for instance in sorted(metrics.instances):
        result = metrics.instances[instance]
        for party in range(1, n + 1):
            rows.append(
                [
                    instance,
                    party,
                    result.decided_proposer if party in result.decide_time else "",
                    result.decide_round.get(party, ""),
                    result.iterations.get(party, ""),
                    metrics.msgs_total,
                    metrics.bytes_total,
                ]
            )
    return rows


def write_csv(path: Path, metrics: RunMetrics, n: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        writer.writerows(csv_rows(metrics, n))


def output_dir() -> Path:
    """Default output directory, overridable via PMVBA_OUTPUT_DIR."""
    path = Path(os.environ.get("PMVBA_OUTPUT_DIR", "."))
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- sweeps ---------------------------------------------------------------


def default_f(n: int) -> int:
    return (n - 1) // 3


@dataclass
class SweepPoint:
    n: int
    f: int
    runs: int
    mean_msgs: float
    mean_bytes: float
    mean_payload_bytes: float
    mean_time: float
    mean_iterations: float
    mean_decide_round: float

    @property
    def msgs_per_n2(self) -> float:
        return self.mean_msgs / (self.n * self.n)


@dataclass
class SweepResult:
    policy: str
    points: List[SweepPoint]

    def _exponent(self, get: Callable[[SweepPoint], float]) -> float:
        xs = np.log([p.n for p in self.points])
        ys = np.log([get(p) for p in self.points])
        slope, _ = np.polyfit(xs, ys, 1)
        return float(slope)

    @property
    def msg_exponent(self) -> float:
        return self._exponent(lambda p: p.mean_msgs)

    @property
    def byte_exponent(self) -> float:
        return self._exponent(lambda p: p.mean_bytes)

    @property
    def msgs_per_n2_spread(self) -> float:
        ratios = [p.msgs_per_n2 for p in self.points]
        return max(ratios) / min(ratios)


def _sweep_policy(policy: str, seed: int) -> Policy:
    if policy == "uniform_random":
        return UniformRandomPolicy(seed)
    if policy == "worst_case_order":
        return WorstCaseOrderPolicy()
    return LockstepPolicy()


def sweep(
    ns: Iterable[int],
    seeds: int = 20,
    policy: str = "lockstep",
    batch_size: int = 256,
    tx_size: int = 4,
    instances: int = 1,
) -> SweepResult:
    """Run a (n x seed) grid and aggregate scaling metrics."""
    points = []
    for n in ns:
        f = default_f(n)
        msgs, bytes_, payload, times, iters, rounds = [], [], [], [], [], []
        for s in range(seeds):
            sim = Simulation(
                ProtocolConfig(
                    n=n,
                    f=f,
                    instances=instances,
                    batch_size=batch_size,
                    tx_size=tx_size,
                ),
                (0x5EED0000 + s).to_bytes(8, "big"),
                _sweep_policy(policy, s),
            )
            metrics = sim.run()
            if metrics.outcome != "decided":
                raise RuntimeError(
                    f"sweep run n={n} seed={s} ended {metrics.outcome}: "
                    f"{metrics.violation}"
                )
            msgs.append(metrics.msgs_total)
            bytes_.append(metrics.bytes_total)
            payload.append(metrics.bytes_payload)
            times.append(metrics.time)
            for result in metrics.instances.values():
                iters.extend(result.iterations.values())
                rounds.extend(result.decide_round.values())
        points.append(
            SweepPoint(
                n=n,
                f=f,
                runs=seeds,
                mean_msgs=float(np.mean(msgs)),
                mean_bytes=float(np.mean(bytes_)),
                mean_payload_bytes=float(np.mean(payload)),
                mean_time=float(np.mean(times)),
                mean_iterations=float(np.mean(iters)),
                mean_decide_round=float(np.mean(rounds)),
            )
        )
    return SweepResult(policy, points)


def write_sweep_csv(path: Path, result: SweepResult) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "n",
                "f",
                "runs",
                "mean_msgs",
                "mean_bytes",
                "mean_payload_bytes",
                "mean_time",
                "mean_iterations",
                "mean_decide_round",
            ]
        )
        for p in result.points:
            writer.writerow(
                [
                    p.n,
                    p.f,
                    p.runs,
                    f"{p.mean_msgs:.2f}",
                    f"{p.mean_bytes:.2f}",
                    f"{p.mean_payload_bytes:.2f}",
                    f"{p.mean_time:.2f}",
                    f"{p.mean_iterations:.4f}",
                    f"{p.mean_decide_round:.4f}",
                ]
            )


def render_chart(result: SweepResult, path: Path) -> None:
    """Two-panel vector chart: simulated decide time vs n, messages vs n."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ns = [p.n for p in result.points]
    fig, (ax_time, ax_msgs) = plt.subplots(1, 2, figsize=(9, 3.6))

    ax_time.plot(ns, [p.mean_time for p in result.points], "o-")
    ax_time.set_xlabel("parties n")
    ax_time.set_ylabel("simulated time to decide")
    ax_time.set_title(f"decide time ({result.policy})")
    ax_time.grid(True, alpha=0.3)

    msgs = [p.mean_msgs for p in result.points]
    ax_msgs.loglog(ns, msgs, "o-", label="measured")
    slope = result.msg_exponent
    anchor = msgs[0] / ns[0] ** slope
    ax_msgs.loglog(
        ns, [anchor * n**slope for n in ns], "--", label=f"fit n^{slope:.2f}"
    )
    ax_msgs.set_xlabel("parties n")
    ax_msgs.set_ylabel("messages per run")
    ax_msgs.set_title("message scaling")
    ax_msgs.legend()
    ax_msgs.grid(True, which="both", alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg")
    plt.close(fig)


def payload_doubling_ratio(
    n: int = 7, f: int = 2, tx_size: int = 4, seeds: int = 5
) -> float:
    """Ratio of payload bytes after doubling the transaction size."""

    def total(size: int) -> float:
        totals = []
        for s in range(seeds):
            sim = Simulation(
                ProtocolConfig(n=n, f=f, tx_size=size),
                (0xD0B1E000 + s).to_bytes(8, "big"),
                LockstepPolicy(),
            )
            totals.append(sim.run().bytes_payload)
        return float(np.mean(totals))

    return total(2 * tx_size) / total(tx_size)
