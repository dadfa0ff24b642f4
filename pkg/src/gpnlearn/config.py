"""Plain-text ``key = value`` experiment configuration and bundled presets."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path

from .bge import BgeParams
from .bridge import BridgeConfig
from .gp import OptConfig, PriorSpec
from .scores import GPSettings
from .synth import SynthConfig
from .tables import GraphPrior

PRESETS = ("fixture-n3", "fixture-n4", "desk-n6", "paper-n10")
SECTION = "experiment"


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    """Every tunable of generation, scoring, sampling and the batch studies.

    ``score`` selects the phase-1 score: ``laplace`` (then bridge rescoring
    when ``rescore`` is on), ``bridge`` (sample directly on bridge scores) or
    ``bge`` (baseline, never rescored).
    """

    seed: int = 0
    n_nodes: int = 10
    edge_prob: float = 0.2
    lam: float = 1.0
    n_obs: int = 100
    beta_low: float = 0.5
    beta_high: float = 2.0
    score: str = "laplace"
    rescore: bool = True
    kernel: str = "additive"
    sampler: str = "partition"
    n_samples: int = 1000
    max_parents: int = 3
    gamma: float = 0.0
    bridge_n1: int = 300
    bridge_n2: int = 300
    bridge_draws: int = 1000
    bridge_thin: int = 3
    bge_t_scale: float = 0.0  # 0 selects the default scale
    replicates: int = 1
    out_dir: str = "out"
    lambdas: tuple[float, ...] = (0.0, 0.5, 1.0)
    sample_sizes: tuple[int, ...] = (100, 1000, 10000)
    gammas: tuple[float, ...] = (0.0, 1.0, 2.0, 4.0)
    t_scales: tuple[float, ...] = (0.1, 1.0, 10.0)
    methods: tuple[str, ...] = ("gp", "bge")
    equivalence_score: str = "bridge"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.seed >= 0, "seed must be a non-negative integer")
        need(1 <= self.n_nodes <= 15, "n_nodes must lie in [1, 15]")
        need(0.0 <= self.edge_prob <= 1.0, "edge_prob must lie in [0, 1]")
        need(self.lam >= 0, "lambda must be >= 0")
        need(self.n_obs >= 2, "n_obs must be >= 2")
        need(0 < self.beta_low < self.beta_high, "need 0 < beta_low < beta_high")
        need(self.score in ("laplace", "bridge", "bge"), f"score must be laplace, bridge or bge, got {self.score!r}")
        need(self.kernel in ("additive", "interactions"), f"kernel must be additive or interactions, got {self.kernel!r}")
        need(self.sampler in ("structure", "order", "partition"), f"sampler must be structure, order or partition, got {self.sampler!r}")
        need(self.n_samples >= 1, "M (n_samples) must be >= 1")
        need(0 <= self.max_parents <= self.n_nodes - 1, f"max_parents must lie in [0, n_nodes - 1 = {self.n_nodes - 1}]")
        need(self.gamma >= 0, "gamma must be >= 0")
        need(self.bridge_n1 >= 2 and self.bridge_n2 >= 2, "bridge_n1 and bridge_n2 must be >= 2")
        need(self.bridge_draws >= 2 * self.bridge_n2, "bridge_draws must be at least 2 * bridge_n2")
        need(self.bridge_draws >= 100, "bridge_draws must be >= 100")
        need(self.bridge_thin >= 1, "bridge_thin must be >= 1")
        need(self.bge_t_scale >= 0, "bge_t_scale must be >= 0")
        need(self.replicates >= 1, "replicates must be >= 1")
        need(bool(self.out_dir), "out_dir must be non-empty")
        need(len(self.lambdas) > 0 and all(x >= 0 for x in self.lambdas), "lambdas must be a non-empty list of values >= 0")
        need(len(self.sample_sizes) > 0 and all(m >= 1 for m in self.sample_sizes), "sample_sizes must be positive integers")
        need(all(g >= 0 for g in self.gammas), "gammas must be >= 0")
        need(all(t > 0 for t in self.t_scales), "t_scales must be > 0")
        need(len(self.methods) > 0 and set(self.methods) <= {"gp", "laplace", "bge"}, "methods must be drawn from gp, laplace, bge")
        need(self.equivalence_score in ("laplace", "bridge", "bge"), "equivalence_score must be laplace, bridge or bge")

    # -- derived settings --------------------------------------------------

    def synth(self, seed: int | None = None, lam: float | None = None) -> SynthConfig:
        return SynthConfig(self.n_nodes, self.edge_prob, self.n_obs, self.lam if lam is None else lam,
                           (self.beta_low, self.beta_high), False, self.seed if seed is None else seed)

    def bridge(self) -> BridgeConfig:
        return BridgeConfig(self.bridge_n1, self.bridge_n2, n_draws=self.bridge_draws, thin=self.bridge_thin)

    def gp_settings(self) -> GPSettings:
        return GPSettings(self.kernel, PriorSpec(), OptConfig(), self.bridge(), self.seed)

    def graph_prior(self) -> GraphPrior:
        return GraphPrior("edge_penalty", self.gamma) if self.gamma > 0 else GraphPrior()

    def bge_params(self) -> BgeParams:
        return BgeParams(t_scale=self.bge_t_scale or None)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            key = _KEY_ALIASES_OUT.get(f.name, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return parse_items(d.items())

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


# user-facing names that differ from attribute names
_KEY_ALIASES = {"lambda": "lam", "m": "n_samples"}
_KEY_ALIASES_OUT = {"lam": "lambda", "n_samples": "M"}


def _convert(name: str, raw):
    f = _FIELDS[name]
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(raw, list) else raw
    raw = raw.strip()
    t = f.type
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    if t == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if t == "tuple[float, ...]":
        return _floats(raw)
    if t == "tuple[int, ...]":
        return _ints(raw)
    if t == "tuple[str, ...]":
        return tuple(x for x in raw.replace(",", " ").split())
    return raw


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def parse_items(items) -> ExperimentConfig:
    kw = {}
    for key, raw in items:
        key = key.strip()
        name = _KEY_ALIASES.get(key.lower(), key)
        if name not in _FIELDS:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            kw[name] = _convert(name, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    return ExperimentConfig(**kw)


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` comments allowed, no section headers)."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    return parse_items(cp.items(SECTION))


def load_preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("gpnlearn").joinpath("presets").joinpath(f"{name}.cfg").read_text()
    return parse_config(text)


def load_config(source: str | None) -> ExperimentConfig:
    """A preset name, a path to a config file, or None for defaults."""
    if source is None:
        return ExperimentConfig()
    if source in PRESETS:
        return load_preset(source)
    p = Path(source)
    if not p.is_file():
        raise ConfigError(f"config {source!r} is neither a preset nor a readable file")
    return parse_config(p.read_text())
