"""Strict TOML experiment configuration.

Every section is a frozen dataclass. Unknown keys, missing required keys and
a ``schema_version`` other than :data:`SCHEMA_VERSION` raise
:class:`~specflow.errors.ConfigurationError`.
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import ConfigurationError, SpecflowError
from .filters import parse_filter
from .sampling import DESIGN_KINDS, STEP_KINDS, DesignLawSpec, StepLawSpec
from .vlmm import parse_scheme

__all__ = [
    "SCHEMA_VERSION",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "shipped_configs",
    "resolve_config_path",
]

SCHEMA_VERSION = 1
SWEEP_KINDS = ("lte_sweep", "h_sweep", "ell_sweep", "filter_comparison", "cobs_sweep")
LAMBDA_MODES = ("fixed", "gp", "oracle")
LAMBDA_SCALINGS = ("none", "h2")
FIT_TARGETS = ("flow", "field")


def _float(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigurationError(f"{where} must be a number, got {v!r}")
    if not math.isfinite(v):
        raise ConfigurationError(f"{where} must be finite")
    return float(v)


def _int(v, where):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigurationError(f"{where} must be an integer, got {v!r}")
    return v


def _choice(v, options, where):
    if v not in options:
        raise ConfigurationError(f"{where} must be one of {options}, got {v!r}")
    return v


def _floats(v, where):
    if not isinstance(v, (list, tuple)):
        raise ConfigurationError(f"{where} must be a list of numbers")
    return tuple(_float(x, f"{where}[{i}]") for i, x in enumerate(v))


def _box(v, where):
    if v is None:
        return None
    if not isinstance(v, (list, tuple)) or not all(isinstance(r, (list, tuple)) and len(r) == 2 for r in v):
        raise ConfigurationError(f"{where} must be a list of [low, high] pairs")
    return tuple(_floats(r, where) for r in v)


@dataclass(frozen=True)
class SystemSection:
    name: str
    params: dict = field(default_factory=dict)
    design_box: tuple | None = None
    domain_box: tuple | None = None
    tolerance: float = 1e-12

    def __post_init__(self):
        if not isinstance(self.name, str):
            raise ConfigurationError("system.name must be a string")
        if not isinstance(self.params, dict):
            raise ConfigurationError("system.params must be a table")
        object.__setattr__(self, "design_box", _box(self.design_box, "system.design_box"))
        object.__setattr__(self, "domain_box", _box(self.domain_box, "system.domain_box"))
        tol = _float(self.tolerance, "system.tolerance")
        if not tol > 0:
            raise ConfigurationError("system.tolerance must be positive")
        object.__setattr__(self, "tolerance", tol)


@dataclass(frozen=True)
class SamplingSection:
    h_max: float
    h_min: float | None = None
    step_law: str = "uniform_deterministic"
    ratio_bounds: tuple = (0.5, 2.0)
    ramp_ratio: float | None = None
    design: str = "iid_uniform_box"
    n_trajectories: int | None = None
    trajectory_length: int | None = None
    horizon: float = 0.0
    n_windows: int = 500
    noise_sigma: float = 0.0

    def __post_init__(self):
        _choice(self.step_law, STEP_KINDS, "sampling.step_law")
        _choice(self.design, DESIGN_KINDS, "sampling.design")
        h_max = _float(self.h_max, "sampling.h_max")
        h_min = h_max if self.h_min is None else _float(self.h_min, "sampling.h_min")
        object.__setattr__(self, "h_max", h_max)
        object.__setattr__(self, "h_min", h_min)
        object.__setattr__(self, "ratio_bounds", _floats(self.ratio_bounds, "sampling.ratio_bounds"))
        if self.ramp_ratio is not None:
            object.__setattr__(self, "ramp_ratio", _float(self.ramp_ratio, "sampling.ramp_ratio"))
        for name in ("n_trajectories", "trajectory_length"):
            if getattr(self, name) is not None:
                _int(getattr(self, name), f"sampling.{name}")
        if _int(self.n_windows, "sampling.n_windows") < 1:
            raise ConfigurationError("sampling.n_windows must be >= 1")
        if _float(self.noise_sigma, "sampling.noise_sigma") < 0:
            raise ConfigurationError("sampling.noise_sigma must be >= 0")
        object.__setattr__(self, "horizon", _float(self.horizon, "sampling.horizon"))
        try:
            self.step_law_spec().validate()
            self.design_spec().validate()
        except SpecflowError as exc:
            raise ConfigurationError(f"sampling: {exc}") from None

    def step_law_spec(self, h: float | None = None) -> StepLawSpec:
        """Step law, optionally rescaled so that its largest step is ``h``."""
        scale = 1.0 if h is None else h / self.h_max
        return StepLawSpec(
            self.step_law,
            self.h_min * scale,
            self.h_max * scale,
            ratio_bounds=tuple(self.ratio_bounds),
            ramp_ratio=self.ramp_ratio,
        )

    def design_spec(self, box=None) -> DesignLawSpec:
        return DesignLawSpec(
            kind=self.design,
            box=box,
            n_trajectories=self.n_trajectories,
            horizon=self.horizon,
            trajectory_length=self.trajectory_length,
        )


@dataclass(frozen=True)
class SchemeSection:
    name: str = "bdf2"

    def __post_init__(self):
        try:
            parse_scheme(self.name)
        except SpecflowError as exc:
            raise ConfigurationError(f"scheme.name: {exc}") from None

    @property
    def scheme(self):
        return parse_scheme(self.name)


@dataclass(frozen=True)
class KernelSection:
    lengthscales: object = "median"
    include_zeta: bool = True

    def __post_init__(self):
        if self.lengthscales != "median":
            ls = _floats(self.lengthscales, "kernel.lengthscales")
            if not ls or min(ls) <= 0:
                raise ConfigurationError("kernel.lengthscales must be positive")
            object.__setattr__(self, "lengthscales", ls)
        if not isinstance(self.include_zeta, bool):
            raise ConfigurationError("kernel.include_zeta must be true or false")


@dataclass(frozen=True)
class FilterSection:
    """Filter family and lambda selection.

    ``spec`` is a filter string such as ``"tikhonov:1e-8"``. ``lambdas`` is the
    grid searched in ``oracle`` mode and the source of the smallest lambda in
    the h-sweep. ``lambda_scaling = "h2"`` multiplies lambda by the empirical
    ``E[H^2]`` of each dataset, which keeps the regularization comparable
    across step sizes for the h-weighted forcing matrix.
    """

    spec: str = "tikhonov:1e-8"
    lambdas: tuple = ()
    lambda_mode: str = "fixed"
    lambda_floor: float = 1e-12
    lambda_scaling: str = "none"
    families: tuple = ("tikhonov:1", "itik:3:1", "landweber:1")

    def __post_init__(self):
        try:
            parse_filter(self.spec)
            for f in self.families:
                parse_filter(f)
        except SpecflowError as exc:
            raise ConfigurationError(f"filter: {exc}") from None
        lams = _floats(self.lambdas, "filter.lambdas")
        if any(v <= 0 for v in lams):
            raise ConfigurationError("filter.lambdas must be positive")
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "families", tuple(self.families))
        _choice(self.lambda_mode, LAMBDA_MODES, "filter.lambda_mode")
        _choice(self.lambda_scaling, LAMBDA_SCALINGS, "filter.lambda_scaling")
        if self.lambda_mode == "oracle" and not lams:
            raise ConfigurationError("filter.lambda_mode = 'oracle' needs a nonempty filter.lambdas grid")
        if not _float(self.lambda_floor, "filter.lambda_floor") > 0:
            raise ConfigurationError("filter.lambda_floor must be positive")

    @property
    def filter_spec(self):
        return parse_filter(self.spec)


@dataclass(frozen=True)
class FitSection:
    target: str = "flow"
    max_centers: int = 400
    n_heldout: int = 2000

    def __post_init__(self):
        _choice(self.target, FIT_TARGETS, "fit.target")
        if _int(self.max_centers, "fit.max_centers") < 1:
            raise ConfigurationError("fit.max_centers must be >= 1")
        if _int(self.n_heldout, "fit.n_heldout") < 1:
            raise ConfigurationError("fit.n_heldout must be >= 1")


@dataclass(frozen=True)
class SweepSection:
    """Grid sweep; ``values`` are step sizes or sample sizes depending on ``kind``."""

    kind: str
    values: tuple
    metric: str = "flow"
    n_probes: int = 50
    zeta_samples: int = 0
    nominal_r: float = 0.5
    cobs_anchors: int = 200
    cobs_centers: int = 16

    def __post_init__(self):
        _choice(self.kind, SWEEP_KINDS, "sweep.kind")
        vals = _floats(self.values, "sweep.values")
        if not vals or min(vals) <= 0:
            raise ConfigurationError("sweep.values must be a nonempty list of positive numbers")
        if self.kind in ("ell_sweep", "filter_comparison"):
            if any(v != int(v) for v in vals):
                raise ConfigurationError("sweep.values must be integers for sample-size sweeps")
        object.__setattr__(self, "values", vals)
        _choice(self.metric, FIT_TARGETS, "sweep.metric")
        for name in ("n_probes", "cobs_anchors", "cobs_centers"):
            if _int(getattr(self, name), f"sweep.{name}") < 1:
                raise ConfigurationError(f"sweep.{name} must be >= 1")
        if _int(self.zeta_samples, "sweep.zeta_samples") < 0:
            raise ConfigurationError("sweep.zeta_samples must be >= 0")
        if not _float(self.nominal_r, "sweep.nominal_r") > 0:
            raise ConfigurationError("sweep.nominal_r must be positive")


@dataclass(frozen=True)
class OutputSection:
    dir: str = "specflow_out"

    def __post_init__(self):
        if not isinstance(self.dir, str) or not self.dir:
            raise ConfigurationError("output.dir must be a nonempty string")


@dataclass(frozen=True)
class SeedsSection:
    dataset: int = 0
    heldout: int = 999
    sweep: tuple = (0, 1, 2)

    def __post_init__(self):
        _int(self.dataset, "seeds.dataset")
        _int(self.heldout, "seeds.heldout")
        if not isinstance(self.sweep, (list, tuple)) or not self.sweep:
            raise ConfigurationError("seeds.sweep must be a nonempty list of integers")
        object.__setattr__(self, "sweep", tuple(_int(s, "seeds.sweep") for s in self.sweep))
        if any(s < 0 for s in (self.dataset, self.heldout, *self.sweep)):
            raise ConfigurationError("seeds must be nonnegative")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    system: SystemSection
    sampling: SamplingSection
    scheme: SchemeSection = SchemeSection()
    kernel: KernelSection = KernelSection()
    filter: FilterSection = FilterSection()
    fit: FitSection = FitSection()
    sweep: SweepSection | None = None
    output: OutputSection = OutputSection()
    seeds: SeedsSection = SeedsSection()
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **sections) -> "ExperimentConfig":
        return dataclasses.replace(self, **sections)


_SECTIONS = {
    "system": SystemSection,
    "sampling": SamplingSection,
    "scheme": SchemeSection,
    "kernel": KernelSection,
    "filter": FilterSection,
    "fit": FitSection,
    "sweep": SweepSection,
    "output": OutputSection,
    "seeds": SeedsSection,
}
_REQUIRED = ("system", "sampling")


def _build_section(cls, table, name):
    if not isinstance(table, dict):
        raise ConfigurationError(f"[{name}] must be a table")
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    required = [
        f.name for f in dataclasses.fields(cls)
        if f.init and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
    ]
    missing = [k for k in required if k not in table]
    if missing:
        raise ConfigurationError(f"missing key(s) in [{name}]: {', '.join(missing)}")
    try:
        return cls(**table)
    except TypeError as exc:
        raise ConfigurationError(f"[{name}]: {exc}") from None


def validate_grid(cfg: ExperimentConfig) -> None:
    """File-level sweep rules: at least 4 grid points spanning a decade, 3 seeds."""
    sw = cfg.sweep
    if sw is None:
        raise ConfigurationError("config has no [sweep] section")
    vals = sorted(set(sw.values))
    if len(vals) < 4:
        raise ConfigurationError(f"sweep.values needs at least 4 distinct points, got {len(vals)}")
    if vals[-1] / vals[0] < 10 * (1 - 1e-9):
        raise ConfigurationError("sweep.values must span at least one decade")
    if len(cfg.seeds.sweep) < 3:
        raise ConfigurationError("seeds.sweep needs at least 3 seeds")


def parse_config(data: dict, source: str = "<config>") -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source}: top level must be a table")
    version = data.get("schema_version")
    if version is None:
        raise ConfigurationError(f"{source}: missing schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"{source}: schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    unknown = sorted(set(data) - set(_SECTIONS) - {"schema_version", "name"})
    if unknown:
        raise ConfigurationError(f"{source}: unknown top-level key(s): {', '.join(unknown)}")
    for req in _REQUIRED:
        if req not in data:
            raise ConfigurationError(f"{source}: missing [{req}] section")
    name = data.get("name", Path(source).stem)
    if not isinstance(name, str) or not name:
        raise ConfigurationError(f"{source}: name must be a nonempty string")
    sections = {k: _build_section(cls, data[k], k) for k, cls in _SECTIONS.items() if k in data}
    return ExperimentConfig(name=name, schema_version=version, **sections)


def shipped_configs() -> dict[str, Path]:
    root = resources.files("specflow") / "configs"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".toml")}


def resolve_config_path(ref) -> Path:
    """A filesystem path, or the name of a shipped config such as ``lte_ab2_vdp``."""
    path = Path(ref)
    if path.exists():
        return path
    shipped = shipped_configs()
    if str(ref) in shipped:
        return shipped[str(ref)]
    raise ConfigurationError(f"config {ref!s} not found (shipped configs: {', '.join(sorted(shipped))})")


def load_config(ref) -> ExperimentConfig:
    path = resolve_config_path(ref)
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid TOML: {exc}") from None
    return parse_config(data, str(path))
