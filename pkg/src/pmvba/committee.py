"""Committee selection and candidate ordering from shared coins.

Both steps follow the same pattern: parties exchange coin shares for a named
coin, and once enough distinct valid shares arrive the coin seeds a pseudo
random permutation of all parties.  Committee selection keeps the first
kappa entries; ordering filters the permutation down to committee members.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .tcrypto import CoinShare, InsufficientSharesError, KeyMaterial, prg_permutation


def cs_coin_name(instance: int) -> str:
    return f"CS/{instance}"


def order_coin_name(instance: int) -> str:
    return f"ORDER/{instance}"


def derive_committee(coin: int, n: int, kappa: int) -> List[int]:
    """First kappa parties of the coin-seeded permutation of 1..n."""
    if not 1 <= kappa <= n:
        raise ValueError(f"kappa {kappa} out of range 1..{n}")
    return prg_permutation(coin, n)[:kappa]


def derive_order(coin: int, n: int, members: List[int]) -> List[int]:
    """Coin-seeded permutation of 1..n filtered to committee members."""
    member_set = set(members)
    return [p for p in prg_permutation(coin, n) if p in member_set]


@dataclass
class CoinGather:
    """Collects shares of one named coin until the threshold is met.

    Shares arriving before :meth:`start` are buffered; ``start`` registers
    our own share immediately and drains the buffer.  The value is computed
    exactly once.
    """

    material: KeyMaterial
    name: str
    threshold: int
    shares: Dict[int, CoinShare] = field(default_factory=dict)
    buffered: List[CoinShare] = field(default_factory=list)
    started: bool = False
    value: Optional[int] = None
    invalid_shares: int = 0

    def start(self, own: CoinShare) -> Optional[int]:
        if self.started:
            return None
        self.started = True
        self._add(own)
        for share in self.buffered:
            self._add(share)
        self.buffered.clear()
        return self._try_finish()

    def deliver(self, share: CoinShare) -> Optional[int]:
        """Feed one share; returns the coin value the first time it fixes."""
        if self.value is not None:
            return None
        if not self.started:
            self.buffered.append(share)
            return None
        self._add(share)
        return self._try_finish()

    def _add(self, share: CoinShare) -> None:
        if share.name != self.name or not self.material.verify_coin_share(share):
            self.invalid_shares += 1
            return
        self.shares.setdefault(share.signer, share)

    def _try_finish(self) -> Optional[int]:
        if self.value is not None or len(self.shares) < self.threshold:
            return None
        try:
            self.value = self.material.coin_toss(
                self.name, self.shares.values(), self.threshold
            )
        except InsufficientSharesError:  # pragma: no cover - guarded above
            return None
        return self.value
