"""Encoder configuration: flat ``key = value`` files, flag overrides, stage seeds."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .clustering import (DEFAULT_EPS_COLOR, DEFAULT_EPS_DIRECTION, DEFAULT_MIN_SAMPLES,
                         ClusterParams)
from .container import LayerPlan
from .errors import InputError
from .patch_codec import PruneSpec
from .refine import RefineParams

# Stage seeds are derived from the global seed by fixed offsets.
PRUNE_SEED_OFFSET = 1
SPLIT_SEED_OFFSET = 2
CODEBOOK_SEED_OFFSET = 3


def _parse_fractions(v):
    if isinstance(v, str):
        v = [x for x in v.replace(",", " ").split() if x]
    return tuple(float(x) for x in v)


@dataclass(frozen=True)
class Config:
    seed: int = 0
    eps_spatial: float | None = None  # None: 0.5% of the scene diagonal
    eps_direction: float = DEFAULT_EPS_DIRECTION
    eps_color: float = DEFAULT_EPS_COLOR
    min_samples: int = DEFAULT_MIN_SAMPLES
    tau_max: float = 0.01
    beta: float = 0.5
    s_min: int = 50
    t_max: int = 5
    downsample: int = 1
    fractions: tuple = (0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        # Build every parameter object once so bad values fail early.
        LayerPlan(self.fractions)
        PruneSpec(self.downsample, 0)
        RefineParams(self.tau_max, self.beta, self.s_min, self.t_max, 0)
        if self.seed < 0:
            raise InputError("seed must be non-negative")
        if self.eps_spatial is not None:
            ClusterParams(self.eps_spatial, self.eps_direction, self.eps_color, self.min_samples)
        else:
            ClusterParams(1.0, self.eps_direction, self.eps_color, self.min_samples)

    # -- derived parameter objects -------------------------------------------------

    def cluster_params(self, diagonal):
        return ClusterParams.for_diagonal(diagonal, eps_spatial=self.eps_spatial,
                                          eps_direction=self.eps_direction,
                                          eps_color=self.eps_color, min_samples=self.min_samples)

    def refine_params(self):
        return RefineParams(self.tau_max, self.beta, self.s_min, self.t_max,
                            self.seed + SPLIT_SEED_OFFSET)

    def prune_spec(self):
        return PruneSpec(self.downsample, self.seed + PRUNE_SEED_OFFSET)

    @property
    def codebook_seed(self):
        return self.seed + CODEBOOK_SEED_OFFSET

    def layer_plan(self):
        return LayerPlan(self.fractions)

    # -- text form -----------------------------------------------------------------

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "fractions":
                v = ", ".join(repr(x) for x in v)
            elif v is None:
                v = "auto"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, base=None):
        return (base or cls()).replace(**parse_config_text(text))

    def replace(self, **changes):
        return dataclasses.replace(self, **{k: _coerce(k, v) for k, v in changes.items()})


_TYPES = {
    "seed": int, "min_samples": int, "s_min": int, "t_max": int, "downsample": int,
    "eps_direction": float, "eps_color": float, "tau_max": float, "beta": float,
}


def _coerce(key, value):
    if key not in {f.name for f in dataclasses.fields(Config)}:
        raise InputError(f"unknown configuration key {key!r}")
    try:
        if key == "fractions":
            return _parse_fractions(value)
        if key == "eps_spatial":
            return None if value is None or str(value).strip().lower() == "auto" else float(value)
        return _TYPES[key](value)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad value for {key}: {value!r}") from exc


def parse_config_text(text):
    """``key = value`` lines; ``#`` starts a comment, dashes in keys act as underscores."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        _coerce(key, value)
        out[key] = value
    return out
