"""Asynchronous binary agreement, biased toward 1.

One instance runs per candidate, in order.  The machine is message driven:
:meth:`AbbaInstance.start` and :meth:`AbbaInstance.deliver` return the
broadcasts the party owes the network, and the caller (the party engine)
ships them.  Own broadcasts are not tallied locally; they come back through
the network like everyone else's, which keeps round counting uniform.

Phase structure per instance: a pre-processing exchange fixes the round-1
bit (biased: one justified 1 anywhere flips the pre-vote to 1), then rounds
of pre-vote / main-vote / shared coin until some round's main-votes agree.
Every vote is justified, so a receiver can check any claim locally:

* round-1 pre-vote for 1 embeds the candidate's certified proposal,
* round r > 1 pre-votes embed a combined proof over round r-1 pre-votes for
  the same bit, or over round r-1 abstain main-votes (then the bit must
  match the round r-1 coin),
* main-votes for a bit embed the pre-vote certificate, abstain main-votes
  embed one full justified pre-vote per bit,
* a decide embeds the combined main-vote certificate.

Two contradictory pre-vote certificates for the same round would need an
honest double-vote, so holding both trips :class:`ProtocolViolation`.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Set, Tuple

from .broadcast import verify_certified
from .messages import (
    ABSTAIN,
    AbstainEvidence,
    CertifiedProposal,
    CoinMsg,
    Decide,
    MainVote,
    Message,
    PreProcess,
    PreVote,
)
from .tcrypto import CoinShare, KeyMaterial, PartyKeys, SignShare, ThresholdProof, digest

VOTE_SCHEME = "vote"
COIN_SCHEME = "coin_hi"

MAX_ROUND_LEAD = 2


class ProtocolViolation(Exception):
    """A safety invariant that only breaks past the corruption bound."""


def abba_coin_name(instance: int, candidate: int, rnd: int) -> str:
    return f"ABBA/{instance}/{candidate}/{rnd}"


def preprocess_digest(instance: int, candidate: int, bit: int) -> bytes:
    return digest("ABBA-PP", instance, candidate, bit)


def prevote_digest(instance: int, candidate: int, rnd: int, bit: int) -> bytes:
    return digest("ABBA-PV", instance, candidate, rnd, bit)


def mainvote_digest(instance: int, candidate: int, rnd: int, value: int) -> bytes:
    return digest("ABBA-MV", instance, candidate, rnd, value)


class Phase(Enum):
    IDLE = "idle"
    PREPROCESS = "preprocess"
    PREVOTE = "prevote"
    MAINVOTE = "mainvote"
    COIN = "coin"
    DONE = "done"


@dataclass(frozen=True)
class AbbaOutput:
    bit: int
    round: int
    certificate: ThresholdProof
    pair: Optional[CertifiedProposal]

    @property
    def payload_absent(self) -> bool:
        return self.bit == 1 and self.pair is None


class AbbaInstance:
    """One party's view of binary agreement on one candidate."""

    def __init__(
        self,
        material: KeyMaterial,
        keys: PartyKeys,
        instance: int,
        candidate: int,
        vote_zero: bool = False,
    ):
        self.material = material
        self.keys = keys
        self.instance = instance
        self.candidate = candidate
        self.vote_zero = vote_zero
        self.n = material.n
        self.f = material.f
        self.tvote = material.threshold(VOTE_SCHEME)
        self.tcoin = material.threshold(COIN_SCHEME)

        self.phase = Phase.IDLE
        self.round = 0
        self.input_bit = 0
        self.pair: Optional[CertifiedProposal] = None
        self.output: Optional[AbbaOutput] = None

        self.preprocess_bits: Dict[int, int] = {}
        self.justified_one = False
        # per-round tallies; sender sets dedup, share maps feed combination
        self.prevote_senders: Dict[int, Set[int]] = {}
        self.prevote_shares: Dict[Tuple[int, int], Dict[int, SignShare]] = {}
        self.prevote_records: Dict[Tuple[int, int], Tuple[int, PreVote]] = {}
        self.mainvote_senders: Dict[int, Set[int]] = {}
        self.mainvote_values: Dict[int, Dict[int, int]] = {}
        self.mainvote_shares: Dict[Tuple[int, int], Dict[int, SignShare]] = {}
        self.coin_shares: Dict[int, Dict[int, CoinShare]] = {}
        self.coins: Dict[int, int] = {}
        self.prevote_certs: Dict[Tuple[int, int], ThresholdProof] = {}
        self.abstain_certs: Dict[int, ThresholdProof] = {}
        self.pending: Dict[int, List[Tuple[int, Message]]] = {}

        self.mainvote_fired: Set[int] = set()
        self.decide_sent = False
        self.diagnostics: Counter = Counter()

    # -- driving ----------------------------------------------------------

    def start(self, bit: int, pair: Optional[CertifiedProposal]) -> List[Message]:
        """Enter pre-processing with our input; returns broadcasts owed."""
        if self.phase is not Phase.IDLE:
            return []
        if pair is not None:
            self.pair = pair
        self.input_bit = 0 if self.vote_zero else bit
        self.phase = Phase.PREPROCESS
        just = self.pair if self.input_bit == 1 else None
        share = self.keys.sig_share(
            VOTE_SCHEME, preprocess_digest(self.instance, self.candidate, self.input_bit)
        )
        out: List[Message] = [
            PreProcess(self.instance, self.candidate, self.input_bit, just, share)
        ]
        self._advance(out)
        return out

    def deliver(self, sender: int, msg: Message) -> List[Message]:
        out: List[Message] = []
        if isinstance(msg, Decide):
            self._on_decide(sender, msg, out)
            return out
        if isinstance(msg, PreProcess):
            self._on_preprocess(sender, msg)
        elif isinstance(msg, PreVote):
            self._on_prevote(sender, msg)
        elif isinstance(msg, MainVote):
            self._on_mainvote(sender, msg)
        elif isinstance(msg, CoinMsg):
            self._on_coin(sender, msg)
        else:
            self.diagnostics["unexpected-type"] += 1
        if self.output is None and self.phase not in (Phase.IDLE, Phase.DONE):
            self._advance(out)
        return out

    # -- message intake ---------------------------------------------------

    def _check_share(self, sender: int, share: SignShare, expect: bytes) -> bool:
        return (
            share.signer == sender
            and share.scheme == VOTE_SCHEME
            and share.msg_digest == expect
            and self.material.verify_share(share)
        )

    def _on_preprocess(self, sender: int, msg: PreProcess) -> None:
        if msg.instance != self.instance or msg.candidate != self.candidate:
            self.diagnostics["misrouted"] += 1
            return
        if msg.bit not in (0, 1) or not self._check_share(
            sender, msg.share, preprocess_digest(self.instance, self.candidate, msg.bit)
        ):
            self.diagnostics["bad-preprocess"] += 1
            return
        if msg.bit == 1:
            if msg.justification is None or not verify_certified(
                self.material, self.instance, self.candidate, msg.justification
            ):
                self.diagnostics["bad-preprocess"] += 1
                return
        if sender in self.preprocess_bits:
            self.diagnostics["duplicate"] += 1
            return
        self.preprocess_bits[sender] = msg.bit
        if msg.bit == 1:
            self.justified_one = True
            if self.pair is None:
                self.pair = msg.justification

    def _too_far_ahead(self, rnd: int) -> bool:
        current = max(self.round, 1)
        if rnd > current + MAX_ROUND_LEAD:
            self.diagnostics["dropped-far-future"] += 1
            return True
        return False

    def _validate_prevote(self, sender: int, pv: PreVote) -> str:
        """Returns "ok", "defer" (needs a coin we lack), or "bad"."""
        if pv.instance != self.instance or pv.candidate != self.candidate:
            return "bad"
        if pv.bit not in (0, 1) or pv.round < 1:
            return "bad"
        if not self._check_share(
            sender,
            pv.share,
            prevote_digest(self.instance, self.candidate, pv.round, pv.bit),
        ):
            return "bad"
        if pv.round == 1:
            if pv.bit == 1:
                if not isinstance(pv.justification, CertifiedProposal):
                    return "bad"
                if not verify_certified(
                    self.material, self.instance, self.candidate, pv.justification
                ):
                    return "bad"
                return "ok"
            return "ok" if pv.justification is None else "bad"
        just = pv.justification
        if not isinstance(just, ThresholdProof) or just.scheme != VOTE_SCHEME:
            return "bad"
        prev = pv.round - 1
        if just.msg_digest == prevote_digest(
            self.instance, self.candidate, prev, pv.bit
        ):
            if not self.material.verify_proof(just):
                return "bad"
            self._record_prevote_cert(prev, pv.bit, just)
            return "ok"
        if just.msg_digest == mainvote_digest(
            self.instance, self.candidate, prev, ABSTAIN
        ):
            if not self.material.verify_proof(just):
                return "bad"
            self.abstain_certs.setdefault(prev, just)
            if prev not in self.coins:
                return "defer"
            return "ok" if pv.bit == (self.coins[prev] & 1) else "bad"
        return "bad"

    def _on_prevote(self, sender: int, msg: PreVote) -> None:
        if self._too_far_ahead(msg.round):
            return
        verdict = self._validate_prevote(sender, msg)
        if verdict == "defer":
            self.pending.setdefault(msg.round, []).append((sender, msg))
            return
        if verdict == "bad":
            self.diagnostics["bad-prevote"] += 1
            return
        self._accept_prevote(sender, msg)

    def _accept_prevote(self, sender: int, msg: PreVote) -> None:
        rnd, bit = msg.round, msg.bit
        seen = self.prevote_senders.setdefault(rnd, set())
        if sender in seen:
            self.diagnostics["duplicate"] += 1
            return
        seen.add(sender)
        self.prevote_shares.setdefault((rnd, bit), {})[sender] = msg.share
        self.prevote_records.setdefault((rnd, bit), (sender, msg))
        if rnd == 1 and bit == 1 and self.pair is None:
            self.pair = msg.justification  # validated CertifiedProposal
        self._maybe_form_prevote_cert(rnd, bit)

    def _maybe_form_prevote_cert(self, rnd: int, bit: int) -> None:
        if (rnd, bit) in self.prevote_certs:
            return
        shares = self.prevote_shares.get((rnd, bit), {})
        if len(shares) >= self.tvote:
            proof = self.material.combine(
                VOTE_SCHEME,
                prevote_digest(self.instance, self.candidate, rnd, bit),
                shares.values(),
            )
            self._record_prevote_cert(rnd, bit, proof)

    def _record_prevote_cert(self, rnd: int, bit: int, proof: ThresholdProof) -> None:
        if (rnd, 1 - bit) in self.prevote_certs:
            raise ProtocolViolation(
                f"pre-vote certificates for both bits in round {rnd} "
                f"(instance {self.instance}, candidate {self.candidate})"
            )
        self.prevote_certs.setdefault((rnd, bit), proof)

    def _on_mainvote(self, sender: int, msg: MainVote) -> None:
        if msg.instance != self.instance or msg.candidate != self.candidate:
            self.diagnostics["misrouted"] += 1
            return
        if self._too_far_ahead(msg.round):
            return
        if msg.value not in (0, 1, ABSTAIN) or msg.round < 1:
            self.diagnostics["bad-mainvote"] += 1
            return
        if not self._check_share(
            sender,
            msg.share,
            mainvote_digest(self.instance, self.candidate, msg.round, msg.value),
        ):
            self.diagnostics["bad-mainvote"] += 1
            return
        if msg.value in (0, 1):
            just = msg.justification
            if (
                not isinstance(just, ThresholdProof)
                or just.scheme != VOTE_SCHEME
                or just.msg_digest
                != prevote_digest(self.instance, self.candidate, msg.round, msg.value)
                or not self.material.verify_proof(just)
            ):
                self.diagnostics["bad-mainvote"] += 1
                return
            self._record_prevote_cert(msg.round, msg.value, just)
        else:
            ev = msg.justification
            if not isinstance(ev, AbstainEvidence):
                self.diagnostics["bad-mainvote"] += 1
                return
            verdicts = []
            for esender, epv, ebit in (
                (ev.zero_sender, ev.zero_vote, 0),
                (ev.one_sender, ev.one_vote, 1),
            ):
                if epv.round != msg.round or epv.bit != ebit:
                    verdicts.append("bad")
                else:
                    verdicts.append(self._validate_prevote(esender, epv))
            if "bad" in verdicts:
                self.diagnostics["bad-mainvote"] += 1
                return
            if "defer" in verdicts:
                self.pending.setdefault(msg.round, []).append((sender, msg))
                return
        self._accept_mainvote(sender, msg)

    def _accept_mainvote(self, sender: int, msg: MainVote) -> None:
        rnd = msg.round
        seen = self.mainvote_senders.setdefault(rnd, set())
        if sender in seen:
            self.diagnostics["duplicate"] += 1
            return
        seen.add(sender)
        self.mainvote_values.setdefault(rnd, {})[sender] = msg.value
        self.mainvote_shares.setdefault((rnd, msg.value), {})[sender] = msg.share

    def _on_coin(self, sender: int, msg: CoinMsg) -> None:
        if msg.instance != self.instance or msg.candidate != self.candidate:
            self.diagnostics["misrouted"] += 1
            return
        if self._too_far_ahead(msg.round):
            return
        name = abba_coin_name(self.instance, self.candidate, msg.round)
        if (
            msg.share.signer != sender
            or msg.share.name != name
            or not self.material.verify_coin_share(msg.share)
        ):
            self.diagnostics["bad-coin-share"] += 1
            return
        self.coin_shares.setdefault(msg.round, {}).setdefault(sender, msg.share)

    def _on_decide(self, sender: int, msg: Decide, out: List[Message]) -> None:
        if msg.instance != self.instance or msg.candidate != self.candidate:
            self.diagnostics["misrouted"] += 1
            return
        cert = msg.certificate
        if (
            msg.bit not in (0, 1)
            or not isinstance(cert, ThresholdProof)
            or cert.scheme != VOTE_SCHEME
            or cert.msg_digest
            != mainvote_digest(self.instance, self.candidate, msg.round, msg.bit)
            or not self.material.verify_proof(cert)
        ):
            self.diagnostics["bad-decide"] += 1
            return
        if msg.justification is not None and verify_certified(
            self.material, self.instance, self.candidate, msg.justification
        ):
            if self.pair is None:
                self.pair = msg.justification
        if self.output is not None:
            if self.output.bit != msg.bit:
                raise ProtocolViolation(
                    f"conflicting decides ({self.output.bit} vs {msg.bit}) for "
                    f"instance {self.instance} candidate {self.candidate}"
                )
            return
        self._decide(msg.bit, msg.round, cert, out)

    # -- phase machine ----------------------------------------------------

    def _advance(self, out: List[Message]) -> None:
        while self.output is None:
            if self.phase is Phase.PREPROCESS:
                if len(self.preprocess_bits) < self.n - self.f:
                    return
                bit = 0 if self.vote_zero else int(self.input_bit == 1 or self.justified_one)
                self._enter_round(1, bit, out)
            elif self.phase is Phase.PREVOTE:
                if len(self.prevote_senders.get(self.round, ())) < self.tvote:
                    return
                self._send_mainvote(out)
            elif self.phase is Phase.MAINVOTE:
                if (
                    self.round in self.mainvote_fired
                    or len(self.mainvote_senders.get(self.round, ())) < self.tvote
                ):
                    return
                self._check_decide_or_coin(out)
            elif self.phase is Phase.COIN:
                if len(self.coin_shares.get(self.round, ())) < self.tcoin:
                    return
                self._finish_coin(out)
            else:
                return

    def _enter_round(self, rnd: int, bit: int, out: List[Message]) -> None:
        self.round = rnd
        self.phase = Phase.PREVOTE
        if rnd == 1:
            just = self.pair if bit == 1 else None
        elif (rnd - 1, bit) in self.prevote_certs:
            just = self.prevote_certs[(rnd - 1, bit)]
        else:
            just = self.abstain_certs[rnd - 1]
        share = self.keys.sig_share(
            VOTE_SCHEME, prevote_digest(self.instance, self.candidate, rnd, bit)
        )
        out.append(PreVote(self.instance, self.candidate, rnd, bit, just, share))

    def _send_mainvote(self, out: List[Message]) -> None:
        rnd = self.round
        self.phase = Phase.MAINVOTE
        tallied = self.prevote_bits_present(rnd)
        if len(tallied) == 1:
            bit = tallied.pop()
            self._maybe_form_prevote_cert(rnd, bit)
            value: int = bit
            just = self.prevote_certs[(rnd, bit)]
        else:
            value = ABSTAIN
            zs, zpv = self.prevote_records[(rnd, 0)]
            os_, opv = self.prevote_records[(rnd, 1)]
            just = AbstainEvidence(zs, zpv, os_, opv)
        share = self.keys.sig_share(
            VOTE_SCHEME, mainvote_digest(self.instance, self.candidate, rnd, value)
        )
        out.append(MainVote(self.instance, self.candidate, rnd, value, just, share))

    def prevote_bits_present(self, rnd: int) -> Set[int]:
        """Bits present in our round ``rnd`` pre-vote tally."""
        present = set()
        for bit in (0, 1):
            if self.prevote_shares.get((rnd, bit)):
                present.add(bit)
        return present

    def _check_decide_or_coin(self, out: List[Message]) -> None:
        rnd = self.round
        self.mainvote_fired.add(rnd)
        values = set(self.mainvote_values[rnd].values())
        if len(values) == 1:
            val = values.pop()
            if val != ABSTAIN:
                cert = self.material.combine(
                    VOTE_SCHEME,
                    mainvote_digest(self.instance, self.candidate, rnd, val),
                    self.mainvote_shares[(rnd, val)].values(),
                )
                self._decide(val, rnd, cert, out)
                return
        self.phase = Phase.COIN
        out.append(
            CoinMsg(
                self.instance,
                self.candidate,
                rnd,
                self.keys.coin_share(abba_coin_name(self.instance, self.candidate, rnd)),
            )
        )

    def _finish_coin(self, out: List[Message]) -> None:
        rnd = self.round
        name = abba_coin_name(self.instance, self.candidate, rnd)
        value = self.material.coin_toss(
            name, self.coin_shares[rnd].values(), self.tcoin
        )
        self.coins[rnd] = value
        for sender, msg in self.pending.pop(rnd + 1, []):
            if isinstance(msg, PreVote):
                self._on_prevote(sender, msg)
            else:
                self._on_mainvote(sender, msg)
        if (rnd, 1) in self.prevote_certs:
            bit = 1
        elif (rnd, 0) in self.prevote_certs:
            bit = 0
        else:
            if rnd not in self.abstain_certs:
                self.abstain_certs[rnd] = self.material.combine(
                    VOTE_SCHEME,
                    mainvote_digest(self.instance, self.candidate, rnd, ABSTAIN),
                    self.mainvote_shares[(rnd, ABSTAIN)].values(),
                )
            bit = value & 1
        self._enter_round(rnd + 1, bit, out)

    def _decide(self, bit: int, rnd: int, cert: ThresholdProof, out: List[Message]) -> None:
        self.output = AbbaOutput(bit, rnd, cert, self.pair if bit == 1 else None)
        self.phase = Phase.DONE
        if not self.decide_sent:
            self.decide_sent = True
            just = self.pair if bit == 1 else None
            out.append(Decide(self.instance, self.candidate, rnd, bit, cert, just))
