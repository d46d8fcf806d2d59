"""Trust-weighted verdict aggregation and per-round trust updates."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import EmptyVerdictsError, UnknownNodeError

DEFAULT_ALPHA = 0.1
DEFAULT_FLOOR = 0.01
INITIAL_TRUST = 1.0


class Decision(str, enum.Enum):
    ALLOW = "ALLOW"
    BLOCK = "BLOCK"


@dataclass(frozen=True)
class TrustLedger:
    """Trust per node, kept in [t_min, 1]. Treat as immutable between rounds."""

    trust: Mapping[str, float] = field(default_factory=dict)
    alpha: float = DEFAULT_ALPHA
    t_min: float = DEFAULT_FLOOR

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0.0 < self.t_min <= 1.0:
            raise ValueError("t_min must lie in (0, 1]")
        clean = {}
        for node_id, t in self.trust.items():
            if not self.t_min <= t <= 1.0:
                raise ValueError(f"trust of {node_id} is {t}, outside [{self.t_min}, 1]")
            clean[node_id] = float(t)
        object.__setattr__(self, "trust", dict(sorted(clean.items())))

    @classmethod
    def fresh(cls, node_ids: Iterable[str], alpha: float = DEFAULT_ALPHA, t_min: float = DEFAULT_FLOOR) -> "TrustLedger":
        return cls({n: INITIAL_TRUST for n in node_ids}, alpha, t_min)

    def __getitem__(self, node_id: str) -> float:
        try:
            return self.trust[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None


def _pairs(verdicts) -> list[tuple[str, float]]:
    if isinstance(verdicts, Mapping):
        verdicts = verdicts.items()
    return [(str(n), float(p)) for n, p in verdicts]


def weighted_verdict(ledger: TrustLedger, verdicts) -> float:
    """sum(trust * p) / sum(trust) over the round's (node_id, probability) pairs."""
    pairs = _pairs(verdicts)
    if not pairs:
        raise EmptyVerdictsError("no verdicts to aggregate")
    weights = [ledger[n] for n, _ in pairs]
    mean = sum(w * p for w, (_, p) in zip(weights, pairs)) / sum(weights)
    # Rounding can push the ratio a hair outside the input range.
    lo = min(p for _, p in pairs)
    hi = max(p for _, p in pairs)
    return min(max(mean, lo), hi)


def update_trust(ledger: TrustLedger, verdicts, mean: float) -> TrustLedger:
    """Blend each participant's trust toward 1 - |p - mean|, clamped to [t_min, 1].

    ``mean`` is the round's reference probability; the network passes the
    trust-weighted consensus so a distrusted outlier stops dragging honest
    nodes' deviations up. Nodes without a verdict this round keep their trust.
    """
    if not 0.0 <= mean <= 1.0:
        raise ValueError("mean must lie in [0, 1]")
    a = ledger.alpha
    new = dict(ledger.trust)
    for node_id, p in _pairs(verdicts):
        t = ledger[node_id]
        blended = (1.0 - a) * t + a * (1.0 - abs(p - mean))
        new[node_id] = min(max(blended, ledger.t_min), 1.0)
    return TrustLedger(new, ledger.alpha, ledger.t_min)


def decide(mean: float, threshold: float = 0.5) -> Decision:
    return Decision.BLOCK if mean >= threshold else Decision.ALLOW
