"""Prioritized consistent broadcast and the recommendation exchange.

A committee member broadcasts its batch, every party answers the first batch
it sees from that member with a signature share, and the member combines
n - f shares into a transferable proof.  Receivers sign at most one payload
per (instance, proposer), which is what makes two conflicting proofs for the
same slot impossible with at most f corruptions.

The recommendation step then has every party relay the first certified
proposal that reaches it, and completes once certified proposals from n - f
distinct relayers are in, at which point the candidate set is fixed enough
to start ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Set

from .messages import CertifiedProposal
from .tcrypto import KeyMaterial, SignShare, ThresholdProof, digest

SIG_SCHEME = "sig"


def vcbc_digest(instance: int, proposer: int, payload: bytes) -> bytes:
    return digest("VCBC", instance, proposer, payload)


def batch_predicate(payload: bytes, tx_size: int) -> bool:
    """External validity for a batch: non-empty, whole transactions, and no
    all-zero transaction slots."""
    if len(payload) == 0 or len(payload) % tx_size != 0:
        return False
    for off in range(0, len(payload), tx_size):
        if not any(payload[off : off + tx_size]):
            return False
    return True


@dataclass
class PvcbcSender:
    """Sender side: accumulate reply shares until a proof combines."""

    material: KeyMaterial
    instance: int
    proposer: int
    payload: bytes
    shares: Dict[int, SignShare] = field(default_factory=dict)
    proof: Optional[ThresholdProof] = None
    invalid_replies: int = 0

    def deliver_reply(self, share: SignShare) -> Optional[ThresholdProof]:
        """Feed one reply share; returns the proof the first time it forms."""
        if self.proof is not None:
            return None
        expect = vcbc_digest(self.instance, self.proposer, self.payload)
        if (
            share.scheme != SIG_SCHEME
            or share.msg_digest != expect
            or not self.material.verify_share(share)
        ):
            self.invalid_replies += 1
            return None
        self.shares.setdefault(share.signer, share)
        if len(self.shares) >= self.material.n - self.material.f:
            self.proof = self.material.combine(
                SIG_SCHEME, expect, self.shares.values()
            )
        return self.proof


@dataclass
class PvcbcReceiver:
    """Receiver side: sign at most one payload per committee proposer."""

    material: KeyMaterial
    instance: int
    party: int
    validate: Callable[[bytes], bool]
    signed: Dict[int, bytes] = field(default_factory=dict)  # proposer -> payload
    rejected: int = 0

    def deliver_send(
        self, proposer: int, payload: bytes, committee: Set[int]
    ) -> Optional[SignShare]:
        if proposer not in committee or not self.validate(payload):
            self.rejected += 1
            return None
        if proposer in self.signed:
            # only the first payload per proposer ever gets our share
            if self.signed[proposer] != payload:
                self.rejected += 1
            return None
        self.signed[proposer] = payload
        return self.material.sig_share(
            self.party, SIG_SCHEME, vcbc_digest(self.instance, proposer, payload)
        )


def verify_certified(
    material: KeyMaterial, instance: int, proposer: int, cert: CertifiedProposal
) -> bool:
    proof = cert.proof
    return (
        proof.scheme == SIG_SCHEME
        and proof.msg_digest == vcbc_digest(instance, proposer, cert.payload)
        and material.verify_proof(proof)
    )


@dataclass
class RecommendationExchange:
    """Collects certified proposals relayed by distinct parties.

    ``recommended`` flips exactly once, on the first certified proposal we
    can relay ourselves.  ``complete`` flips once n - f distinct relayers
    have contributed; entries keep accumulating afterwards because votes in
    the agreement phase still benefit from late pairs.
    """

    material: KeyMaterial
    instance: int
    committee: Set[int]
    entries: Dict[int, CertifiedProposal] = field(default_factory=dict)
    relayers: Set[int] = field(default_factory=set)
    recommended: bool = False
    complete: bool = False
    invalid: int = 0

    def insert(self, proposer: int, cert: CertifiedProposal) -> bool:
        """Record a certified pair without crediting a relayer (direct
        proposals and adopted pairs); returns True if it was accepted."""
        if proposer not in self.committee or not verify_certified(
            self.material, self.instance, proposer, cert
        ):
            self.invalid += 1
            return False
        self.entries.setdefault(proposer, cert)
        return True

    def add(self, relayer: int, proposer: int, cert: CertifiedProposal) -> bool:
        """Record one relayed pair; returns True if it was accepted."""
        if not self.insert(proposer, cert):
            return False
        self.relayers.add(relayer)
        if len(self.relayers) >= self.material.n - self.material.f:
            self.complete = True
        return True

    def pair(self, proposer: int) -> Optional[CertifiedProposal]:
        return self.entries.get(proposer)
