"""Experiment configuration: an INI file with typed sections.

Every key has a default, so a config file only needs to name what differs.
Unknown sections or keys are rejected, and values are range-checked before
any computation starts.
"""

import configparser
import dataclasses
import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import ParameterError
from .functionals import KINDS, FunctionalSpec

COMMANDS = (
    "sample",
    "value-law",
    "lln",
    "variance",
    "radius-tails",
    "cumulant-scan",
    "rate-eval",
    "specinfo-verify",
)

FloatList = tuple  # comma-separated reals
NameList = list  # comma-separated names (test functions contain ':' but never ',')


@dataclass
class RunSection:
    command: str = ""


@dataclass
class ModelSection:
    kind: str = "nn_threshold"
    ball_volume: float = 1.0
    initial_radius_bound: float = 0.25
    speed: float = 1.0
    radius_cutoff: float = 0.5
    grain_radius_bound: float = 1.0
    quadrature_resolution: float = 0.05
    threshold: float = 1.0
    k: int = 1
    target_degree: int = 2
    directed: bool = False
    value: float = 0.0


@dataclass
class ProcessSection:
    tau: float = 1.0
    dimension: int = 1
    lam: float = 1024.0
    lambda_grid: FloatList = ()


@dataclass
class EstimationSection:
    replicates: int = 1000
    seed: int = 0
    workers: int = 1
    test_function: str = "poly:1:1"
    target_replicates: int = 1000
    bins: int = 0


@dataclass
class PairSection:
    enabled: bool = True
    method: str = "insertion"
    r_max: float = 2.0
    n_shells: int = 8
    aux_volume: float = 256.0
    replicates_per_shell: int = 2000
    diagonal_replicates: int = 10000
    configurations: int = 200
    pair_term_factor: float = 1.0


@dataclass
class CumulantSection:
    beta: float = 0.25
    local_functional: str = ""
    quadrature_points: int = 0
    half_variance: Optional[float] = None


@dataclass
class RateSection:
    functions: NameList = field(default_factory=lambda: ["one", "poly:1:1"])
    coefficients: FloatList = (0.1, 0.1)
    method: str = "direct"


@dataclass
class SpecinfoSection:
    cells: int = 4
    max_occupancy: int = 2
    cell_volume: float = 1.0
    intensity: float = 1.0
    instances: int = 1
    perturbations: int = 200


@dataclass
class RadiusSection:
    n_points: int = 1000
    resamples: int = 64
    grid_size: int = 24
    min_count: int = 50
    grid: FloatList = ()


SECTIONS = {
    "run": RunSection,
    "model": ModelSection,
    "process": ProcessSection,
    "estimation": EstimationSection,
    "pair": PairSection,
    "cumulant": CumulantSection,
    "rate": RateSection,
    "specinfo": SpecinfoSection,
    "radius": RadiusSection,
}

# INI spelling of attribute names that clash with Python keywords
_ALIASES = {("process", "lambda"): "lam"}
_REVERSE = {(s, v): k for (s, k), v in _ALIASES.items()}

# worker count changes wall time only, so it is not part of the echo or hash
_NOT_ECHOED = {("estimation", "workers")}


def _attr(section: str, key: str) -> str:
    return _ALIASES.get((section, key), key)


def _key(section: str, attr: str) -> str:
    return _REVERSE.get((section, attr), attr)


def _parse_value(kind, text: str, where: str):
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is str:
            return text
        if kind == Optional[float]:
            return None if text.lower() in ("", "none") else float(text)
        if kind is FloatList:
            return tuple(float(v) for v in text.split(",") if v.strip())
        if kind is NameList:
            return [v.strip() for v in text.split(",") if v.strip()]
    except ValueError:
        raise ParameterError(f"cannot parse {where} = {text!r}") from None
    raise AssertionError(f"unhandled config type {kind}")


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, (tuple, list)):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    process: ProcessSection = field(default_factory=ProcessSection)
    estimation: EstimationSection = field(default_factory=EstimationSection)
    pair: PairSection = field(default_factory=PairSection)
    cumulant: CumulantSection = field(default_factory=CumulantSection)
    rate: RateSection = field(default_factory=RateSection)
    specinfo: SpecinfoSection = field(default_factory=SpecinfoSection)
    radius: RadiusSection = field(default_factory=RadiusSection)

    @property
    def command(self) -> str:
        return self.run.command

    def set(self, dotted: str, text: str) -> None:
        """Apply one ``section.key=value`` override."""
        if "." not in dotted:
            raise ParameterError(f"override key {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        if section not in SECTIONS:
            raise ParameterError(f"unknown config section [{section}]")
        obj = getattr(self, section)
        attr = _attr(section, key)
        types = {f.name: f.type for f in dataclasses.fields(obj)}
        if attr not in types:
            raise ParameterError(f"unknown key {key!r} in section [{section}]")
        setattr(obj, attr, _parse_value(types[attr], text, f"{section}.{key}"))

    def functional_spec(self) -> FunctionalSpec:
        return FunctionalSpec(**dataclasses.asdict(self.model))

    def lambda_grid(self) -> tuple:
        return tuple(self.process.lambda_grid) or (self.process.lam,)

    def to_dict(self, echo: bool = True) -> dict:
        out = {}
        for name in SECTIONS:
            sec = {}
            for f in dataclasses.fields(getattr(self, name)):
                if echo and (name, f.name) in _NOT_ECHOED:
                    continue
                v = getattr(getattr(self, name), f.name)
                sec[_key(name, f.name)] = list(v) if isinstance(v, tuple) else v
            out[name] = sec
        return out

    def echo(self) -> str:
        """Every effective parameter in INI form, sections and keys sorted."""
        buf = io.StringIO()
        for name in sorted(SECTIONS):
            buf.write(f"[{name}]\n")
            for key, v in sorted(self.to_dict()[name].items()):
                buf.write(f"{key} = {_format_value(v)}\n")
            buf.write("\n")
        return buf.getvalue()

    def input_hash(self) -> str:
        """Git blob hash of the echo text."""
        data = self.echo().encode()
        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()

    def validate(self) -> None:
        """Range checks for every section; raises ParameterError."""
        errors = []

        def need(ok, msg):
            if not ok:
                errors.append(msg)

        need(self.run.command in COMMANDS, f"run.command must be one of {COMMANDS}, got {self.run.command!r}")
        need(self.model.kind in KINDS, f"model.kind must be one of {KINDS}")
        p = self.process
        need(p.tau > 0 and math.isfinite(p.tau), "process.tau must be positive")
        need(p.dimension in (1, 2, 3), "process.dimension must be 1, 2 or 3")
        grid = self.lambda_grid()
        need(all(v > 0 for v in grid) and all(b > a for a, b in zip(grid, grid[1:])),
             "process.lambda / lambda_grid must be positive and increasing")
        e = self.estimation
        need(e.replicates >= 1, "estimation.replicates must be >= 1")
        need(0 <= e.seed < 2**64, "estimation.seed must be an unsigned 64-bit integer")
        need(e.target_replicates >= 0 and e.bins >= 0, "estimation.target_replicates and bins must be >= 0")
        pr = self.pair
        need(pr.method in ("insertion", "mecke"), "pair.method must be insertion or mecke")
        need(pr.pair_term_factor in (0.5, 1.0), "pair.pair_term_factor must be 0.5 or 1")
        need(pr.r_max > 0 and pr.aux_volume > 0 and pr.n_shells >= 1, "pair.r_max, aux_volume and n_shells must be positive")
        c = self.cumulant
        need(0 < c.beta < 0.5, "cumulant.beta must lie in (0, 1/2)")
        need(c.quadrature_points >= 0, "cumulant.quadrature_points must be >= 0")
        r = self.rate
        need(len(r.functions) >= 1 and len(r.functions) == len(r.coefficients),
             "rate.functions and rate.coefficients must be non-empty and of equal length")
        need(r.method in ("direct", "pair"), "rate.method must be direct or pair")
        s = self.specinfo
        need(s.cells >= 1 and s.max_occupancy >= 1 and s.instances >= 1 and s.perturbations >= 0,
             "specinfo sizes must be positive")
        need(s.cell_volume > 0 and s.intensity > 0, "specinfo.cell_volume and intensity must be positive")
        need((s.max_occupancy + 1) ** s.cells <= 10**7, "specinfo state space exceeds 10^7 states")
        rd = self.radius
        need(rd.n_points >= 1 and rd.resamples >= 0 and rd.grid_size >= 2 and rd.min_count >= 1,
             "radius sizes must be positive")
        if errors:
            raise ParameterError("; ".join(errors))
        self.functional_spec()


def load_config(path=None, overrides=(), command: str | None = None) -> ExperimentConfig:
    """Read an INI file (optional), apply ``section.key=value`` overrides and validate."""
    cfg = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ParameterError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ParameterError(f"malformed config {path}: {exc}") from None
        for section in parser.sections():
            for key, text in parser.items(section):
                cfg.set(f"{section}.{key}", text)
    for item in overrides:
        if "=" not in item:
            raise ParameterError(f"override {item!r} must look like section.key=value")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    if command is not None:
        cfg.run.command = command
    cfg.validate()
    return cfg
