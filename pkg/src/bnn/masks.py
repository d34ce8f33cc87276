"""Multiplicative weight masks for the five noise families.

A weight sample is ``W = V * M`` with ``M`` drawn from one of:

* ``BernoulliDropConnect`` - every entry independently 0 w.p. ``p``;
* ``BernoulliDropout``     - every *row* (output unit) 0 w.p. ``p``;
* ``GaussianDropConnect``  - every entry ~ N(1, p/(1-p));
* ``GaussianDropout``      - one N(1, p/(1-p)) draw per row;
* ``SpikeSlabDropout``     - Bernoulli row gate (``p`` plays p_do) times
  per-entry N(1, p_dc/(1-p_dc)).

Bernoulli survivors are scaled by ``1/(1-p)`` at sampling time (inverted
scaling) so every mask has mean one and deterministic inference uses ``V``
unchanged. Draw order is row-major with all row gates drawn before any
per-entry Gaussian draws.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .tensor import Rng, Tensor


class MaskKind(str, enum.Enum):
    MAP = "MAP"
    BERNOULLI_DROPCONNECT = "BernoulliDropConnect"
    BERNOULLI_DROPOUT = "BernoulliDropout"
    GAUSSIAN_DROPCONNECT = "GaussianDropConnect"
    GAUSSIAN_DROPOUT = "GaussianDropout"
    SPIKE_SLAB_DROPOUT = "SpikeSlabDropout"

    @property
    def row_structured(self) -> bool:
        return self in (MaskKind.BERNOULLI_DROPOUT, MaskKind.GAUSSIAN_DROPOUT)

    @property
    def short(self) -> str:
        return _SHORT_NAMES[self]


_SHORT_NAMES = {
    MaskKind.MAP: "MAP",
    MaskKind.BERNOULLI_DROPCONNECT: "BDC",
    MaskKind.BERNOULLI_DROPOUT: "BDO",
    MaskKind.GAUSSIAN_DROPCONNECT: "GDC",
    MaskKind.GAUSSIAN_DROPOUT: "GDO",
    MaskKind.SPIKE_SLAB_DROPOUT: "SSD",
}
_BY_NAME = {k.value.lower(): k for k in MaskKind} | {v.lower(): k for k, v in _SHORT_NAMES.items()}

SAMPLED_KINDS = tuple(k for k in MaskKind if k is not MaskKind.MAP)


def parse_kind(name: str | MaskKind) -> MaskKind:
    if isinstance(name, MaskKind):
        return name
    try:
        return _BY_NAME[str(name).lower()]
    except KeyError:
        raise ParameterError(f"unknown mask kind {name!r}") from None


@dataclass(frozen=True)
class MaskSpec:
    """Variational distribution selector.

    ``p`` is the drop probability (p_do for spike-and-slab); ``p_dc`` is the
    dropconnect probability of the spike-and-slab slab and must be 0 for
    every other kind.
    """

    kind: MaskKind = MaskKind.MAP
    p: float = 0.0
    p_dc: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", parse_kind(self.kind))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "p_dc", float(self.p_dc))
        for name in ("p", "p_dc"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ParameterError(f"{name} must lie in [0, 1), got {v}")
        if self.kind is MaskKind.MAP and (self.p or self.p_dc):
            raise ParameterError("MAP carries no probability parameters")
        if self.kind is not MaskKind.SPIKE_SLAB_DROPOUT and self.p_dc:
            raise ParameterError(f"p_dc is only meaningful for SpikeSlabDropout, not {self.kind.value}")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "p": self.p, "p_dc": self.p_dc}

    @classmethod
    def from_dict(cls, d: dict) -> MaskSpec:
        unknown = set(d) - {"kind", "p", "p_dc"}
        if unknown:
            raise ParameterError(f"unknown MaskSpec fields: {sorted(unknown)}")
        return cls(kind=d.get("kind", "MAP"), p=d.get("p", 0.0), p_dc=d.get("p_dc", 0.0))

    @property
    def label(self) -> str:
        if self.kind is MaskKind.SPIKE_SLAB_DROPOUT:
            return f"SSD(p_do={self.p:g},p_dc={self.p_dc:g})"
        if self.kind is MaskKind.MAP:
            return "MAP"
        return f"{self.kind.short}(p={self.p:g})"

    def with_p(self, p: float) -> MaskSpec:
        if self.kind is MaskKind.MAP:
            return self
        return MaskSpec(self.kind, p, self.p_dc)

    def without_row_gates(self) -> MaskSpec:
        """The distribution to use on a layer that takes no unit-level noise.

        Dropout kinds leave such layers untouched; spike-and-slab keeps only
        its Gaussian dropconnect slab.
        """
        if self.kind.row_structured:
            return MaskSpec()
        if self.kind is MaskKind.SPIKE_SLAB_DROPOUT:
            return MaskSpec(MaskKind.GAUSSIAN_DROPCONNECT, self.p_dc)
        return self


def sigma_dc_squared(p: float) -> float:
    """Variance p/(1-p) of the Gaussian mask matched to Bernoulli(1-p) scaling."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"p must lie in [0, 1), got {p}")
    return p / (1.0 - p)


def _bernoulli_gate(u: Tensor, p: float) -> Tensor:
    return np.where(u < p, 0.0, 1.0 / (1.0 - p))


def sample_mask(spec: MaskSpec, rows: int, cols: int, rng: Rng) -> Tensor:
    """Draw one ``rows x cols`` mask. MAP consumes no random draws."""
    if rows < 1 or cols < 1:
        raise ParameterError(f"mask dimensions must be positive, got {rows}x{cols}")
    kind = spec.kind
    if kind is MaskKind.MAP:
        return np.ones((rows, cols))
    if kind is MaskKind.BERNOULLI_DROPCONNECT:
        return _bernoulli_gate(rng.uniform(rows * cols), spec.p).reshape(rows, cols)
    if kind is MaskKind.BERNOULLI_DROPOUT:
        gate = _bernoulli_gate(rng.uniform(rows), spec.p)
        return np.repeat(gate[:, None], cols, axis=1)
    if kind is MaskKind.GAUSSIAN_DROPCONNECT:
        sigma = np.sqrt(sigma_dc_squared(spec.p))
        return (1.0 + sigma * rng.normal(rows * cols)).reshape(rows, cols)
    if kind is MaskKind.GAUSSIAN_DROPOUT:
        sigma = np.sqrt(sigma_dc_squared(spec.p))
        row = 1.0 + sigma * rng.normal(rows)
        return np.repeat(row[:, None], cols, axis=1)
    if kind is MaskKind.SPIKE_SLAB_DROPOUT:
        gate = _bernoulli_gate(rng.uniform(rows), spec.p)
        sigma = np.sqrt(sigma_dc_squared(spec.p_dc))
        slab = 1.0 + sigma * rng.normal(rows * cols)
        return gate[:, None] * slab.reshape(rows, cols)
    raise ParameterError(f"unsupported mask kind {kind}")


def mask_moments(spec: MaskSpec) -> tuple[float, float]:
    """Analytic per-entry (mean, variance) of the mask distribution."""
    kind = spec.kind
    if kind is MaskKind.MAP:
        return 1.0, 0.0
    if kind is MaskKind.SPIKE_SLAB_DROPOUT:
        # E[g^2] = 1/(1-p_do), E[s^2] = 1 + sigma_dc^2, gate and slab independent
        return 1.0, (1.0 + sigma_dc_squared(spec.p_dc)) / (1.0 - spec.p) - 1.0
    return 1.0, sigma_dc_squared(spec.p)


def mean_mask(spec: MaskSpec, rows: int, cols: int) -> Tensor:
    """Expectation of :func:`sample_mask`; all-ones under inverted scaling."""
    if rows < 1 or cols < 1:
        raise ParameterError(f"mask dimensions must be positive, got {rows}x{cols}")
    mean, _ = mask_moments(spec)
    return np.full((rows, cols), mean)
