"""Run configuration and feature schema."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

MEASURE_MODES = ("flow", "gaussian", "empirical")


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = "continuous"
    levels: tuple = ()

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical"):
            raise ConfigError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "levels", tuple(self.levels))
        if self.kind == "categorical" and len(self.levels) < 1:
            raise ConfigError(f"categorical feature {self.name!r} needs at least one level")

    def to_dict(self):
        return {"name": self.name, "kind": self.kind, "levels": list(self.levels)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d.get("kind", "continuous"), tuple(d.get("levels", ())))


def default_schema(n_features):
    return tuple(FeatureSpec(f"x{i}") for i in range(n_features))


@dataclass(frozen=True)
class RunConfig:
    """Knobs for the fit -> Sobol -> decompose pipeline.

    ``max_order`` of None means min(D, 3).  ``measures`` maps a feature name
    to one of ``"flow"`` (default), ``"gaussian"`` or ``"empirical"``.
    """

    max_order: int | None = None
    flow_layers: int = 2
    restarts: int = 5
    prior_shape: float = 1.0
    prior_rate: float = 0.2
    sobol_threshold: float = 0.01
    seed: int = 0
    max_n: int = 4000
    max_subsets: int = 100_000
    measures: dict = field(default_factory=dict)
    categorical_rank: int = 1
    maxiter: int = 1000
    gtol: float = 1e-6
    jitter: float = 1e-6

    def __post_init__(self):
        checks = [
            (self.max_order is None or (isinstance(self.max_order, int) and self.max_order >= 1),
             "max_order must be a positive integer"),
            (isinstance(self.flow_layers, int) and 1 <= self.flow_layers <= 10,
             "flow_layers must be an integer in [1, 10]"),
            (isinstance(self.restarts, int) and 1 <= self.restarts <= 100,
             "restarts must be an integer in [1, 100]"),
            (self.prior_shape > 0 and self.prior_rate >= 0,
             "prior_shape must be > 0 and prior_rate >= 0"),
            (0 <= self.sobol_threshold < 1, "sobol_threshold must lie in [0, 1)"),
            (isinstance(self.seed, int) and self.seed >= 0, "seed must be a nonnegative integer"),
            (isinstance(self.max_n, int) and self.max_n >= 4, "max_n must be an integer >= 4"),
            (isinstance(self.max_subsets, int) and self.max_subsets >= 1,
             "max_subsets must be a positive integer"),
            (isinstance(self.categorical_rank, int) and self.categorical_rank >= 1,
             "categorical_rank must be a positive integer"),
            (isinstance(self.maxiter, int) and self.maxiter >= 1, "maxiter must be positive"),
            (self.gtol > 0 and 0 <= self.jitter < 1, "gtol must be > 0 and jitter in [0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(f"invalid config: {msg}")
        for name, mode in self.measures.items():
            if mode not in MEASURE_MODES:
                raise ConfigError(f"invalid config: measure for {name!r} must be one of "
                                  f"{MEASURE_MODES}, got {mode!r}")

    def resolve_order(self, n_features):
        if self.max_order is None:
            return min(n_features, 3)
        if self.max_order > n_features:
            raise ConfigError(f"invalid config: max_order {self.max_order} exceeds the "
                              f"number of features {n_features}")
        return self.max_order

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"invalid config: unknown keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from None

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: not valid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"config {path}: top level must be an object")
        return cls.from_dict(d)
