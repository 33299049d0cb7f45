"""Per-party protocol engine.

Glues the sub-protocols into the full loop one party runs per instance:
committee selection, prioritized broadcast, the recommendation exchange,
candidate ordering, then sequential binary agreement down the ordered
committee until some candidate decides 1.  The engine is transport free; it
consumes delivered messages and returns the actions (broadcasts, unicasts,
timers, decisions) the caller must carry out.  Own broadcasts loop back
through the network like any other message.

Byzantine behaviors that require signing one's own lies live here
(``vote_zero``, ``equivocate_vcbc``); behaviors that only drop or delay
traffic are the scheduler's business, not the engine's.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Set, Tuple, Union

from .abba import AbbaInstance, AbbaOutput, ProtocolViolation
from .broadcast import (
    PvcbcReceiver,
    PvcbcSender,
    RecommendationExchange,
    batch_predicate,
    verify_certified,
)
from .committee import (
    CoinGather,
    cs_coin_name,
    derive_committee,
    derive_order,
    order_coin_name,
)
from .messages import (
    CertifiedProposal,
    CoinMsg,
    Decide,
    MainVote,
    Message,
    PreProcess,
    PreVote,
    Propose,
    Recommendation,
    Recover,
    RecoverAnswer,
    Share,
    VcbcReply,
    VcbcSend,
    Vote,
)
from .tcrypto import KeyMaterial, PartyKeys

__all__ = [
    "ProtocolViolation",
    "ProtocolConfig",
    "PartyEngine",
    "ActionBroadcast",
    "ActionUnicast",
    "ActionTimer",
    "ActionDecided",
    "DecideRecord",
    "scheme_catalogue",
    "default_payload",
    "HONEST",
    "VOTE_ZERO",
    "EQUIVOCATE_VCBC",
]

HONEST = "honest"
VOTE_ZERO = "vote_zero"
EQUIVOCATE_VCBC = "equivocate_vcbc"
BEHAVIORS = (HONEST, VOTE_ZERO, EQUIVOCATE_VCBC)

RECOVER_RESEND = 4


def scheme_catalogue(n: int, f: int) -> Dict[str, int]:
    """Threshold per scheme tag: broadcast certificates need n - f shares,
    agreement certificates 2f + 1, the selection coin f + 1, and the
    ordering / per-round coins 2f + 1."""
    return {
        "sig": n - f,
        "vote": 2 * f + 1,
        "coin_lo": f + 1,
        "coin_hi": 2 * f + 1,
    }


@dataclass(frozen=True)
class ProtocolConfig:
    n: int
    f: int
    instances: int = 1
    kappa: int = 0  # committee size; 0 means f + 1
    batch_size: int = 256
    tx_size: int = 4

    def __post_init__(self):
        if self.n < 4:
            raise ValueError("need n >= 4")
        if self.f < 0 or self.n <= 3 * self.f:
            raise ValueError(f"need n > 3f, got n={self.n} f={self.f}")
        if self.instances < 1:
            raise ValueError("need at least one instance")
        kappa = self.committee_size
        if not 1 <= kappa <= self.n:
            raise ValueError(f"committee size {kappa} out of range")
        if self.batch_size < 1 or self.tx_size < 1:
            raise ValueError("batch_size and tx_size must be positive")

    @property
    def committee_size(self) -> int:
        return self.kappa if self.kappa else self.f + 1


def default_payload(config: ProtocolConfig, party: int, instance: int) -> bytes:
    """Deterministic batch for one proposer: batch_size transactions of
    tx_size bytes each, every byte nonzero."""
    out = bytearray()
    for tx in range(config.batch_size):
        for k in range(config.tx_size):
            out.append((party * 131 + instance * 31 + tx * 7 + k) % 255 + 1)
    return bytes(out)


@dataclass(frozen=True)
class ActionBroadcast:
    msg: Message


@dataclass(frozen=True)
class ActionUnicast:
    to: int
    msg: Message


@dataclass(frozen=True)
class ActionTimer:
    delay: int
    tag: Tuple


@dataclass(frozen=True)
class ActionDecided:
    instance: int
    proposer: int
    payload: bytes
    iterations: int
    round: int


Action = Union[ActionBroadcast, ActionUnicast, ActionTimer, ActionDecided]


@dataclass(frozen=True)
class DecideRecord:
    instance: int
    proposer: int
    payload: bytes
    iterations: int
    round: int


class InstanceState:
    def __init__(self, engine: "PartyEngine", instance: int):
        material = engine.material
        self.instance = instance
        self.cs = CoinGather(
            material, cs_coin_name(instance), material.threshold("coin_lo")
        )
        self.order_gather = CoinGather(
            material, order_coin_name(instance), material.threshold("coin_hi")
        )
        self.vcbc_recv = PvcbcReceiver(
            material,
            instance,
            engine.party,
            lambda payload: batch_predicate(payload, engine.config.tx_size),
        )
        self.vcbc_send: Optional[PvcbcSender] = None
        self.equiv_senders: List[PvcbcSender] = []
        self.committee: Optional[List[int]] = None
        self.committee_set: Set[int] = set()
        self.reco: Optional[RecommendationExchange] = None
        self.order: Optional[List[int]] = None
        self.order_announced = False
        self.pairs: Dict[int, CertifiedProposal] = {}
        self.answer_pairs: Dict[int, CertifiedProposal] = {}
        self.pending: List[Tuple[int, Message]] = []
        self.vote_sent: Set[int] = set()
        self.vote_senders: Dict[int, Set[int]] = {}
        self.abba_buffer: Dict[int, List[Tuple[int, Message]]] = {}
        self.abba: Dict[int, AbbaInstance] = {}
        self.handled: Set[int] = set()
        self.idx = 0
        self.started_agreeing = False
        self.decide_candidate: Optional[int] = None
        self.decide_round = 0
        self.awaiting_recovery: Optional[int] = None
        self.record: Optional[DecideRecord] = None
        self.done = False


class PartyEngine:
    """Message-in, actions-out protocol driver for one party."""

    def __init__(
        self,
        config: ProtocolConfig,
        party: int,
        keys: PartyKeys,
        material: KeyMaterial,
        behavior: str = HONEST,
        payload_fn: Optional[Callable[[int], bytes]] = None,
    ):
        if behavior not in BEHAVIORS:
            raise ValueError(f"unknown behavior {behavior!r}")
        self.config = config
        self.party = party
        self.keys = keys
        self.material = material
        self.behavior = behavior
        self.payload_fn = payload_fn or (
            lambda instance: default_payload(config, party, instance)
        )
        self.states: Dict[int, InstanceState] = {}
        self.current = 0
        self.future: Dict[int, List[Tuple[int, Message]]] = {}
        self.diagnostics: Counter = Counter()

    # -- public surface ---------------------------------------------------

    def start(self) -> List[Action]:
        actions: List[Action] = []
        self._start_instance(1, actions)
        return actions

    def deliver(self, frm: int, msg: Message) -> List[Action]:
        actions: List[Action] = []
        instance = msg.instance
        if instance > self.current:
            self.future.setdefault(instance, []).append((frm, msg))
            return actions
        self._dispatch(self.states[instance], frm, msg, actions)
        return actions

    def on_timer(self, tag: Tuple) -> List[Action]:
        actions: List[Action] = []
        if tag[0] == "recover":
            _, instance, candidate = tag
            st = self.states.get(instance)
            if st is not None and not st.done and st.awaiting_recovery == candidate:
                actions.append(ActionBroadcast(Recover(instance, candidate)))
                actions.append(ActionTimer(RECOVER_RESEND, tag))
        return actions

    def record(self, instance: int) -> Optional[DecideRecord]:
        st = self.states.get(instance)
        return st.record if st else None

    def held_proposers(self, instance: int) -> Set[int]:
        st = self.states.get(instance)
        return set(st.pairs) if st else set()

    def reco_complete(self, instance: int) -> bool:
        st = self.states.get(instance)
        return bool(st and st.reco and st.reco.complete)

    def entered_agreement(self, instance: int) -> bool:
        st = self.states.get(instance)
        return bool(st and st.started_agreeing)

    def all_done(self) -> bool:
        st = self.states.get(self.current)
        return bool(st and st.done and self.current >= self.config.instances)

    def diagnostics_snapshot(self) -> Counter:
        total = Counter(self.diagnostics)
        for st in self.states.values():
            total["invalid-coin-shares"] += st.cs.invalid_shares
            total["invalid-coin-shares"] += st.order_gather.invalid_shares
            total["vcbc-rejected"] += st.vcbc_recv.rejected
            if st.vcbc_send is not None:
                total["invalid-vcbc-replies"] += st.vcbc_send.invalid_replies
            for sender in st.equiv_senders:
                total["invalid-vcbc-replies"] += sender.invalid_replies
            if st.reco is not None:
                total["invalid-recommendations"] += st.reco.invalid
            for inst in st.abba.values():
                total.update(inst.diagnostics)
        return total

    # -- instance lifecycle -----------------------------------------------

    def _start_instance(self, instance: int, actions: List[Action]) -> None:
        st = InstanceState(self, instance)
        self.states[instance] = st
        self.current = instance
        own = self.keys.coin_share(cs_coin_name(instance))
        value = st.cs.start(own)
        actions.append(ActionBroadcast(Share(instance, "CS", own)))
        if value is not None:
            self._committee_known(st, value, actions)
        for frm, msg in self.future.pop(instance, []):
            self._dispatch(st, frm, msg, actions)

    def _dispatch(
        self, st: InstanceState, frm: int, msg: Message, actions: List[Action]
    ) -> None:
        if isinstance(msg, Share):
            self._on_share(st, frm, msg, actions)
        elif isinstance(msg, Recover):
            self._on_recover(st, frm, msg, actions)
        elif isinstance(msg, RecoverAnswer):
            self._on_recover_answer(st, frm, msg, actions)
        elif isinstance(msg, VcbcReply):
            self._on_vcbc_reply(st, frm, msg, actions)
        elif st.committee is None:
            # everything below needs the committee to validate against
            st.pending.append((frm, msg))
        elif isinstance(msg, VcbcSend):
            self._on_vcbc_send(st, frm, msg, actions)
        elif isinstance(msg, Propose):
            self._on_propose(st, frm, msg, actions)
        elif isinstance(msg, Recommendation):
            self._on_recommendation(st, frm, msg, actions)
        elif isinstance(msg, Vote):
            self._on_vote(st, frm, msg, actions)
        elif isinstance(msg, (PreProcess, PreVote, MainVote, CoinMsg, Decide)):
            self._on_abba_msg(st, frm, msg, actions)
        else:
            self.diagnostics["unexpected-type"] += 1

    # -- coins ------------------------------------------------------------

    def _on_share(
        self, st: InstanceState, frm: int, msg: Share, actions: List[Action]
    ) -> None:
        if msg.kind == "CS":
            value = st.cs.deliver(msg.share)
            if value is not None:
                self._committee_known(st, value, actions)
        elif msg.kind == "ORDER":
            value = st.order_gather.deliver(msg.share)
            if value is not None:
                self._order_known(st, value, actions)
        else:
            self.diagnostics["unexpected-type"] += 1

    def _committee_known(
        self, st: InstanceState, coin: int, actions: List[Action]
    ) -> None:
        cfg = self.config
        st.committee = derive_committee(coin, cfg.n, cfg.committee_size)
        st.committee_set = set(st.committee)
        st.reco = RecommendationExchange(
            self.material, st.instance, st.committee_set
        )
        if self.party in st.committee_set:
            self._broadcast_own_batch(st, actions)
        pending, st.pending = st.pending, []
        for frm, msg in pending:
            self._dispatch(st, frm, msg, actions)

    def _broadcast_own_batch(self, st: InstanceState, actions: List[Action]) -> None:
        payload = self.payload_fn(st.instance)
        if self.behavior == EQUIVOCATE_VCBC:
            # two valid batches, split across recipients; neither side can
            # gather n - f matching shares, so no proof ever certifies
            alt = bytearray(payload)
            alt[0] = 1 if alt[0] != 1 else 2
            variants = [payload, bytes(alt)]
            for variant in variants:
                st.equiv_senders.append(
                    PvcbcSender(self.material, st.instance, self.party, variant)
                )
            for to in range(1, self.config.n + 1):
                variant = variants[0] if to <= self.config.n // 2 else variants[1]
                actions.append(
                    ActionUnicast(to, VcbcSend(st.instance, self.party, variant))
                )
            return
        st.vcbc_send = PvcbcSender(self.material, st.instance, self.party, payload)
        actions.append(ActionBroadcast(VcbcSend(st.instance, self.party, payload)))

    def _order_known(self, st: InstanceState, coin: int, actions: List[Action]) -> None:
        st.order = derive_order(coin, self.config.n, st.committee)
        self._begin_iteration(st, actions)

    # -- broadcast and recommendation -------------------------------------

    def _on_vcbc_send(
        self, st: InstanceState, frm: int, msg: VcbcSend, actions: List[Action]
    ) -> None:
        if msg.proposer != frm:
            self.diagnostics["forged-sender"] += 1
            return
        share = st.vcbc_recv.deliver_send(frm, msg.payload, st.committee_set)
        if share is not None:
            actions.append(ActionUnicast(frm, VcbcReply(st.instance, frm, share)))

    def _on_vcbc_reply(
        self, st: InstanceState, frm: int, msg: VcbcReply, actions: List[Action]
    ) -> None:
        if msg.proposer != self.party:
            self.diagnostics["misrouted"] += 1
            return
        for sender in st.equiv_senders:
            sender.deliver_reply(msg.share)
        if st.vcbc_send is None:
            return
        had_proof = st.vcbc_send.proof is not None
        proof = st.vcbc_send.deliver_reply(msg.share)
        if proof is not None and not had_proof:
            pair = CertifiedProposal(st.vcbc_send.payload, proof)
            st.answer_pairs.setdefault(self.party, pair)
            actions.append(
                ActionBroadcast(
                    Propose(st.instance, self.party, st.vcbc_send.payload, proof)
                )
            )

    def _on_propose(
        self, st: InstanceState, frm: int, msg: Propose, actions: List[Action]
    ) -> None:
        if msg.proposer != frm:
            self.diagnostics["forged-sender"] += 1
            return
        cert = CertifiedProposal(msg.payload, msg.proof)
        if st.reco.insert(msg.proposer, cert):
            self._adopt_pair(st, msg.proposer, cert, actions)

    def _on_recommendation(
        self, st: InstanceState, frm: int, msg: Recommendation, actions: List[Action]
    ) -> None:
        cert = CertifiedProposal(msg.payload, msg.proof)
        if not st.reco.add(frm, msg.proposer, cert):
            return
        self._adopt_pair(st, msg.proposer, cert, actions)
        if st.reco.complete and not st.order_announced:
            st.order_announced = True
            own = self.keys.coin_share(order_coin_name(st.instance))
            value = st.order_gather.start(own)
            actions.append(ActionBroadcast(Share(st.instance, "ORDER", own)))
            if value is not None:
                # enough shares were already buffered before we caught up
                self._order_known(st, value, actions)

    def _adopt_pair(
        self,
        st: InstanceState,
        proposer: int,
        cert: CertifiedProposal,
        actions: List[Action],
    ) -> None:
        st.pairs.setdefault(proposer, cert)
        st.answer_pairs.setdefault(proposer, cert)
        if st.reco is not None:
            st.reco.entries.setdefault(proposer, cert)
            if not st.reco.recommended:
                st.reco.recommended = True
                actions.append(
                    ActionBroadcast(
                        Recommendation(st.instance, proposer, cert.payload, cert.proof)
                    )
                )

    # -- sequential agreement ---------------------------------------------

    def _begin_iteration(self, st: InstanceState, actions: List[Action]) -> None:
        if st.idx >= len(st.order):
            raise ProtocolViolation(
                f"all {len(st.order)} candidates decided 0 in instance {st.instance}"
            )
        candidate = st.order[st.idx]
        st.started_agreeing = True
        pair = st.pairs.get(candidate)
        if self.behavior == VOTE_ZERO or pair is None:
            vote = Vote(st.instance, candidate, 0)
        else:
            vote = Vote(st.instance, candidate, 1, pair.payload, pair.proof)
        st.vote_sent.add(candidate)
        actions.append(ActionBroadcast(vote))
        self._maybe_start_abba(st, candidate, actions)

    def _on_vote(
        self, st: InstanceState, frm: int, msg: Vote, actions: List[Action]
    ) -> None:
        candidate = msg.candidate
        if candidate not in st.committee_set or msg.vote not in (0, 1):
            self.diagnostics["bad-vote"] += 1
            return
        senders = st.vote_senders.setdefault(candidate, set())
        if frm in senders:
            self.diagnostics["duplicate"] += 1
            return
        if msg.vote == 1:
            if msg.payload is None or msg.proof is None:
                self.diagnostics["bad-vote"] += 1
                return
            cert = CertifiedProposal(msg.payload, msg.proof)
            if not verify_certified(self.material, st.instance, candidate, cert):
                self.diagnostics["bad-vote"] += 1
                return
            self._adopt_pair(st, candidate, cert, actions)
        senders.add(frm)
        if (
            st.order is not None
            and not st.done
            and st.idx < len(st.order)
            and st.order[st.idx] == candidate
        ):
            self._maybe_start_abba(st, candidate, actions)

    def _maybe_start_abba(
        self, st: InstanceState, candidate: int, actions: List[Action]
    ) -> None:
        if candidate in st.abba or candidate not in st.vote_sent:
            return
        n, f = self.config.n, self.config.f
        if len(st.vote_senders.get(candidate, ())) < n - f:
            return
        inst = AbbaInstance(
            self.material,
            self.keys,
            st.instance,
            candidate,
            vote_zero=self.behavior == VOTE_ZERO,
        )
        st.abba[candidate] = inst
        pair = st.pairs.get(candidate)
        outs = inst.start(1 if pair is not None else 0, pair)
        for frm, msg in st.abba_buffer.pop(candidate, []):
            outs.extend(inst.deliver(frm, msg))
        self._absorb_abba(st, candidate, inst, outs, actions)

    def _on_abba_msg(
        self, st: InstanceState, frm: int, msg, actions: List[Action]
    ) -> None:
        candidate = msg.candidate
        if candidate not in st.committee_set:
            self.diagnostics["bad-candidate"] += 1
            return
        inst = st.abba.get(candidate)
        if inst is None:
            if st.done:
                self.diagnostics["late"] += 1
                return
            st.abba_buffer.setdefault(candidate, []).append((frm, msg))
            return
        outs = inst.deliver(frm, msg)
        self._absorb_abba(st, candidate, inst, outs, actions)

    def _absorb_abba(
        self,
        st: InstanceState,
        candidate: int,
        inst: AbbaInstance,
        outs: List[Message],
        actions: List[Action],
    ) -> None:
        for msg in outs:
            actions.append(ActionBroadcast(msg))
        if inst.pair is not None and candidate not in st.pairs:
            self._adopt_pair(st, candidate, inst.pair, actions)
        if inst.output is not None and candidate not in st.handled:
            self._handle_output(st, candidate, inst.output, actions)

    def _handle_output(
        self, st: InstanceState, candidate: int, out: AbbaOutput, actions: List[Action]
    ) -> None:
        st.handled.add(candidate)
        if st.done:
            return
        if out.bit == 0:
            st.idx += 1
            self._begin_iteration(st, actions)
            return
        st.decide_candidate = candidate
        st.decide_round = out.round
        pair = st.pairs.get(candidate)
        if pair is not None:
            self._finalize(st, candidate, pair, actions)
            return
        st.awaiting_recovery = candidate
        actions.append(ActionBroadcast(Recover(st.instance, candidate)))
        actions.append(
            ActionTimer(RECOVER_RESEND, ("recover", st.instance, candidate))
        )

    def _finalize(
        self,
        st: InstanceState,
        candidate: int,
        pair: CertifiedProposal,
        actions: List[Action],
    ) -> None:
        st.record = DecideRecord(
            st.instance, candidate, pair.payload, st.idx + 1, st.decide_round
        )
        st.done = True
        st.awaiting_recovery = None
        actions.append(
            ActionDecided(
                st.instance, candidate, pair.payload, st.idx + 1, st.decide_round
            )
        )
        if st.instance < self.config.instances:
            self._start_instance(st.instance + 1, actions)

    # -- recovery ---------------------------------------------------------

    def _on_recover(
        self, st: InstanceState, frm: int, msg: Recover, actions: List[Action]
    ) -> None:
        pair = st.answer_pairs.get(msg.candidate)
        if pair is not None:
            actions.append(
                ActionUnicast(
                    frm,
                    RecoverAnswer(
                        st.instance, msg.candidate, pair.payload, pair.proof
                    ),
                )
            )

    def _on_recover_answer(
        self, st: InstanceState, frm: int, msg: RecoverAnswer, actions: List[Action]
    ) -> None:
        if st.done or st.awaiting_recovery != msg.candidate:
            return
        cert = CertifiedProposal(msg.payload, msg.proof)
        if not verify_certified(self.material, st.instance, msg.candidate, cert):
            self.diagnostics["bad-recover-answer"] += 1
            return
        self._adopt_pair(st, msg.candidate, cert, actions)
        self._finalize(st, msg.candidate, cert, actions)
