"""Deterministic threshold-crypto oracle.

Ideal-functionality stand-in for a pairing-based (t, n) threshold signature
and a threshold common coin.  Everything is derived from a master seed with
keyed hashing, so shares verify, combination is robust, and a combined proof
depends only on the signed message -- never on which quorum supplied the
shares -- exactly like a unique threshold signature would.

WARNING: this provides no actual security.  It exists so protocol runs are
reproducible byte-for-byte and so the message-driven state machines can be
tested against an oracle whose outputs are known in advance.  The module
boundary (share / verify / combine / coin ops) is the swap point for a real
scheme.

:data DIGEST_SIZE: width in bytes of digests, shares, and combined proofs.
:data COIN_BITS: width of a combined coin value.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple

DIGEST_SIZE = 32
COIN_BITS = 64


class CryptoError(Exception):
    """Base class for oracle failures."""


class InvalidShareError(CryptoError):
    """A supplied share does not verify."""


class InsufficientSharesError(CryptoError):
    """Fewer than t distinct valid shares were supplied."""


def digest(*parts) -> bytes:
    """Canonical digest of a tuple of ints / strings / bytes.

    Fields are length-prefixed so distinct tuples can never collide by
    concatenation.
    """
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, int):
            raw = part.to_bytes(8, "big", signed=False)
        elif isinstance(part, str):
            raw = part.encode("utf-8")
        elif isinstance(part, (bytes, bytearray)):
            raw = bytes(part)
        else:
            raise TypeError(f"unhashable digest part: {type(part)!r}")
        h.update(len(raw).to_bytes(4, "big"))
        h.update(raw)
    return h.digest()


@dataclass(frozen=True)
class SignShare:
    """One party's signature share on a message digest."""

    signer: int
    scheme: str
    msg_digest: bytes
    value: bytes


@dataclass(frozen=True)
class ThresholdProof:
    """Combined threshold signature.

    ``value`` depends only on (master seed, scheme, msg_digest); ``signers``
    records which quorum produced it, for auditing only -- it does not enter
    verification.
    """

    scheme: str
    msg_digest: bytes
    value: bytes
    signers: Tuple[int, ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class CoinShare:
    """One party's share of a named common coin."""

    signer: int
    name: str
    value: bytes


class KeyMaterial:
    """Master secret plus a catalogue of per-scheme thresholds.

    :param n: number of parties (ids 1..n), must be >= 4.
    :param schemes: mapping scheme_tag -> threshold t with f < t <= n - f
        where f = (n - 1) // 3.
    :param master_seed: bytes; hex strings accepted for convenience.
    """

    def __init__(self, n: int, schemes: Dict[str, int], master_seed: bytes):
        if n < 4:
            raise ValueError(f"need at least 4 parties, got n={n}")
        if isinstance(master_seed, str):
            master_seed = bytes.fromhex(master_seed)
        f = (n - 1) // 3
        for tag, t in schemes.items():
            if not (f < t <= n - f):
                raise ValueError(
                    f"scheme {tag!r}: threshold {t} outside ({f}, {n - f}]"
                )
        self.n = n
        self.f = f
        self.schemes = dict(schemes)
        self._seed = bytes(master_seed)

    def threshold(self, scheme: str) -> int:
        return self.schemes[scheme]

    def _prf(self, *parts) -> bytes:
        return hmac.new(self._seed, digest(*parts), hashlib.sha256).digest()

    # -- signing ----------------------------------------------------------

    def sig_share(self, signer: int, scheme: str, msg_digest: bytes) -> SignShare:
        if scheme not in self.schemes:
            raise ValueError(f"unknown scheme {scheme!r}")
        if not 1 <= signer <= self.n:
            raise ValueError(f"signer {signer} out of range 1..{self.n}")
        value = self._prf("share", scheme, signer, msg_digest)
        return SignShare(signer, scheme, msg_digest, value)

    def verify_share(self, share: SignShare) -> bool:
        if share.scheme not in self.schemes or not 1 <= share.signer <= self.n:
            return False
        expect = self._prf("share", share.scheme, share.signer, share.msg_digest)
        return hmac.compare_digest(expect, share.value)

    def combine(
        self, scheme: str, msg_digest: bytes, shares: Iterable[SignShare]
    ) -> ThresholdProof:
        """Combine >= t distinct valid shares into a proof.

        Raises :class:`InvalidShareError` if any share fails verification
        (robustness before counting), :class:`InsufficientSharesError` if
        fewer than t distinct signers remain after de-duplication.
        """
        t = self.threshold(scheme)
        signers = set()
        for share in shares:
            if share.scheme != scheme or share.msg_digest != msg_digest:
                raise InvalidShareError(
                    f"share from {share.signer} is for a different message/scheme"
                )
            if not self.verify_share(share):
                raise InvalidShareError(f"share from signer {share.signer} invalid")
            signers.add(share.signer)
        if len(signers) < t:
            raise InsufficientSharesError(
                f"{len(signers)} distinct valid shares, need {t}"
            )
        value = self._prf("proof", scheme, msg_digest)
        return ThresholdProof(scheme, msg_digest, value, tuple(sorted(signers)))

    def verify_proof(self, proof: ThresholdProof) -> bool:
        if proof.scheme not in self.schemes:
            return False
        expect = self._prf("proof", proof.scheme, proof.msg_digest)
        return hmac.compare_digest(expect, proof.value)

    # -- common coin ------------------------------------------------------

    def coin_share(self, signer: int, name: str) -> CoinShare:
        if not 1 <= signer <= self.n:
            raise ValueError(f"signer {signer} out of range 1..{self.n}")
        return CoinShare(signer, name, self._prf("coinshare", name, signer))

    def verify_coin_share(self, share: CoinShare) -> bool:
        if not 1 <= share.signer <= self.n:
            return False
        expect = self._prf("coinshare", share.name, share.signer)
        return hmac.compare_digest(expect, share.value)

    def coin_toss(self, name: str, shares: Iterable[CoinShare], t: int) -> int:
        """Combine coin shares for ``name`` into the coin value.

        Invalid shares are excluded rather than fatal (callers verify on
        receipt; this keeps the toss robust against stray garbage).  Raises
        :class:`InsufficientSharesError` below t distinct valid shares.
        """
        signers = set()
        for share in shares:
            if share.name == name and self.verify_coin_share(share):
                signers.add(share.signer)
        if len(signers) < t:
            raise InsufficientSharesError(
                f"coin {name!r}: {len(signers)} distinct valid shares, need {t}"
            )
        return self.coin_value(name)

    def coin_value(self, name: str) -> int:
        """Ground-truth value of a named coin, COIN_BITS wide.

        Honest protocol paths reach this only through :meth:`coin_toss`;
        adversary policies and tests may query it directly.
        """
        raw = self._prf("coinval", name)
        return int.from_bytes(raw[: COIN_BITS // 8], "big")


def key_setup(n: int, schemes: Dict[str, int], master_seed: bytes) -> KeyMaterial:
    """Dealer-style setup: one call, all parties' capabilities derived."""
    return KeyMaterial(n, schemes, master_seed)


class PartyKeys:
    """Per-party capability handle: sign and coin-share as one party only."""

    def __init__(self, material: KeyMaterial, party: int):
        if not 1 <= party <= material.n:
            raise ValueError(f"party {party} out of range 1..{material.n}")
        self.material = material
        self.party = party

    def sig_share(self, scheme: str, msg_digest: bytes) -> SignShare:
        return self.material.sig_share(self.party, scheme, msg_digest)

    def coin_share(self, name: str) -> CoinShare:
        return self.material.coin_share(self.party, name)


def prg_permutation(seed: int, n: int) -> List[int]:
    """Seeded uniform permutation of 1..n.

    Fisher-Yates driven by a counter-mode hash stream keyed on ``seed``;
    64-bit draws with rejection sampling keep every index choice exactly
    uniform, and nothing here depends on interpreter hash state, so the
    permutation is stable across runs and platforms.
    """
    if n < 1:
        raise ValueError("n must be positive")
    key = seed.to_bytes(8, "big", signed=False)
    items = list(range(1, n + 1))
    words: List[int] = []
    counter = 0

    def next_word() -> int:
        nonlocal counter
        if not words:
            block = hashlib.sha256(b"perm" + key + counter.to_bytes(8, "big")).digest()
            counter += 1
            for off in range(0, 32, 8):
                words.append(int.from_bytes(block[off : off + 8], "big"))
        return words.pop()

    def randbelow(bound: int) -> int:
        # rejection sampling over the 64-bit stream
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            w = next_word()
            if w < limit:
                return w % bound

    for i in range(n - 1, 0, -1):
        j = randbelow(i + 1)
        items[i], items[j] = items[j], items[i]
    return items
