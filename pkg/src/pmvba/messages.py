"""Wire message types for the agreement protocol.

Every message is a frozen dataclass; ``wire_type`` gives the tag that metric
counters key on, and ``size_bytes`` a stable size accounting: payload bytes
plus 32 per embedded signature share / combined proof.  Headers (instance
ids, round numbers, party ids) are not charged, so the byte totals isolate
cryptographic and payload cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .tcrypto import DIGEST_SIZE, CoinShare, SignShare, ThresholdProof

ABSTAIN = 2


@dataclass(frozen=True)
class Share:
    """A common-coin share for committee selection or candidate ordering."""

    instance: int
    kind: str  # "CS" or "ORDER"
    share: CoinShare

    @property
    def wire_type(self) -> str:
        return f"SHARE-{self.kind}"

    def size_bytes(self) -> int:
        return DIGEST_SIZE


@dataclass(frozen=True)
class VcbcSend:
    instance: int
    proposer: int
    payload: bytes

    wire_type = "VCBC-SEND"

    def size_bytes(self) -> int:
        return len(self.payload)


@dataclass(frozen=True)
class VcbcReply:
    instance: int
    proposer: int
    share: SignShare

    wire_type = "VCBC-REPLY"

    def size_bytes(self) -> int:
        return DIGEST_SIZE


@dataclass(frozen=True)
class Propose:
    instance: int
    proposer: int
    payload: bytes
    proof: ThresholdProof

    wire_type = "PROPOSE"

    def size_bytes(self) -> int:
        return len(self.payload) + DIGEST_SIZE


@dataclass(frozen=True)
class Recommendation:
    """Relays one certified proposal during the recommendation exchange."""

    instance: int
    proposer: int
    payload: bytes
    proof: ThresholdProof

    wire_type = "RECOMMENDATION"

    def size_bytes(self) -> int:
        return len(self.payload) + DIGEST_SIZE


@dataclass(frozen=True)
class CertifiedProposal:
    """A payload together with its combined broadcast proof."""

    payload: bytes
    proof: ThresholdProof

    def size_bytes(self) -> int:
        return len(self.payload) + DIGEST_SIZE


@dataclass(frozen=True)
class Vote:
    """Per-candidate yes/no vote opening a sequential agreement step.

    A 1-vote carries the certified proposal it claims to hold so that
    receivers lacking it can adopt the pair; a 0-vote carries nothing.
    """

    instance: int
    candidate: int
    vote: int
    payload: Optional[bytes] = None
    proof: Optional[ThresholdProof] = None

    wire_type = "VOTE"

    def size_bytes(self) -> int:
        size = 0
        if self.payload is not None:
            size += len(self.payload)
        if self.proof is not None:
            size += DIGEST_SIZE
        return size


@dataclass(frozen=True)
class AbstainEvidence:
    """Why a party abstained: one justified pre-vote for each bit.

    Embeds the full records (not just shares) so any receiver can check the
    conflict locally without having seen those pre-votes itself.
    """

    zero_sender: int
    zero_vote: "PreVote"
    one_sender: int
    one_vote: "PreVote"

    def size_bytes(self) -> int:
        return self.zero_vote.size_bytes() + self.one_vote.size_bytes()


Justification = Union[None, CertifiedProposal, ThresholdProof]


@dataclass(frozen=True)
class PreProcess:
    """Binary-agreement pre-processing vote (one per candidate per party)."""

    instance: int
    candidate: int
    bit: int
    justification: Optional[CertifiedProposal]
    share: SignShare

    wire_type = "PRE-PROCESS"

    def size_bytes(self) -> int:
        size = DIGEST_SIZE
        if self.justification is not None:
            size += self.justification.size_bytes()
        return size


@dataclass(frozen=True)
class PreVote:
    """Round pre-vote.

    Round 1: a 1-pre-vote justifies with the certified proposal, a
    0-pre-vote needs none.  Round r > 1: justification is a combined proof,
    either over round r-1 pre-votes for the same bit or over round r-1
    abstain main-votes (in which case the bit must equal the r-1 coin).
    """

    instance: int
    candidate: int
    round: int
    bit: int
    justification: Justification
    share: SignShare

    wire_type = "PRE-VOTE"

    def size_bytes(self) -> int:
        size = DIGEST_SIZE
        if isinstance(self.justification, CertifiedProposal):
            size += self.justification.size_bytes()
        elif isinstance(self.justification, ThresholdProof):
            size += DIGEST_SIZE
        return size


@dataclass(frozen=True)
class MainVote:
    """Round main-vote: 0, 1, or abstain.

    A 0/1 main-vote justifies with the pre-vote certificate for that bit;
    an abstain justifies with :class:`AbstainEvidence`.
    """

    instance: int
    candidate: int
    round: int
    value: int  # 0, 1, or ABSTAIN
    justification: Union[ThresholdProof, AbstainEvidence]
    share: SignShare

    wire_type = "MAIN-VOTE"

    def size_bytes(self) -> int:
        size = DIGEST_SIZE
        if isinstance(self.justification, AbstainEvidence):
            size += self.justification.size_bytes()
        else:
            size += DIGEST_SIZE
        return size


@dataclass(frozen=True)
class CoinMsg:
    instance: int
    candidate: int
    round: int
    share: CoinShare

    wire_type = "COIN"

    def size_bytes(self) -> int:
        return DIGEST_SIZE


@dataclass(frozen=True)
class Decide:
    """Terminal broadcast for one candidate's binary agreement.

    ``certificate`` combines the main-vote shares of the deciding round.
    A 1-decide carries the certified proposal when the sender holds it, so
    laggards receive payload and decision together.
    """

    instance: int
    candidate: int
    round: int
    bit: int
    certificate: ThresholdProof
    justification: Optional[CertifiedProposal] = None

    wire_type = "DECIDE"

    def size_bytes(self) -> int:
        size = DIGEST_SIZE
        if self.justification is not None:
            size += self.justification.size_bytes()
        return size


@dataclass(frozen=True)
class Recover:
    """Request for a decided-1 candidate's payload."""

    instance: int
    candidate: int

    wire_type = "RECOVER"

    def size_bytes(self) -> int:
        return 0


@dataclass(frozen=True)
class RecoverAnswer:
    instance: int
    candidate: int
    payload: bytes
    proof: ThresholdProof

    wire_type = "RECOVER-ANSWER"

    def size_bytes(self) -> int:
        return len(self.payload) + DIGEST_SIZE


Message = Union[
    Share,
    VcbcSend,
    VcbcReply,
    Propose,
    Recommendation,
    Vote,
    PreProcess,
    PreVote,
    MainVote,
    CoinMsg,
    Decide,
    Recover,
    RecoverAnswer,
]
