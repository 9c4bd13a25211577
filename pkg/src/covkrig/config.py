"""Declarative TOML configuration for the experiment CLI.

One file describes one experiment: the problem, sampling distribution,
schedules, kernels and seeds, with optional sections for the adaptive,
target-precision and allocation commands.  Named presets mirroring the
standard benchmark setups ship inside the package.
"""

from __future__ import annotations

import hashlib
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError
from .kernels import KERNEL_FAMILIES, KernelSpec
from .problems import PROBLEM_KINDS, ProblemSpec, default_space, dejong, griewank, mm1
from .procedures import DEFAULT_SUBSAMPLE_SCHEDULE, ExperimentConfig
from .sampling import DISTRIBUTION_KINDS, NORMAL, UNIFORM, CovariateSpace, SamplingDistribution

_EXPERIMENT_KEYS = {
    "problem": str,
    "dim": int,
    "kernels": list,
    "dist": str,
    "m_schedule": list,
    "n": (int, list),
    "delta0": (int, float),
    "macro_reps": int,
    "master_seed": int,
    "regressors": str,
    "m_prime": int,
    "noise_degree": int,
    "noise_log": bool,
    "search_budget": int,
    "n_designs": int,
    "mm1_customers": int,
    "mm1_warmup": int,
}


def _line_of(key: str, text: str):
    """Best-effort line number of a key in the raw TOML text."""
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith(f"{key}") and "=" in stripped:
            return ln
    return None


def _fail(key, message, text):
    ln = _line_of(key, text)
    where = f"line {ln}: " if ln else ""
    raise ConfigurationError(f"{where}{key}: {message}")


@dataclass
class RunConfig:
    """Resolved configuration: an ExperimentConfig per n, plus command extras."""

    experiment_by_n: dict
    raw: dict
    adaptive: dict = field(default_factory=dict)
    predict_m: dict = field(default_factory=dict)
    allocate: dict = field(default_factory=dict)
    path: str = ""

    @property
    def first(self) -> ExperimentConfig:
        return next(iter(self.experiment_by_n.values()))

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode()).hexdigest()


def _build_problem(exp, text) -> ProblemSpec:
    kind = exp.get("problem")
    if kind not in PROBLEM_KINDS:
        _fail("problem", f"must be one of {PROBLEM_KINDS}, got {kind!r}", text)
    dim = int(exp.get("dim", 1))
    n_designs = int(exp.get("n_designs", 10))
    if kind == "dejong":
        return dejong(dim, n_designs)
    if kind == "griewank":
        return griewank(dim, n_designs)
    if dim != 1:
        _fail("dim", "the mm1 problem is one dimensional", text)
    prob = mm1(n_designs)
    customers = exp.get("mm1_customers")
    warmup = exp.get("mm1_warmup")
    if customers or warmup:
        from dataclasses import replace as _dc_replace

        prob = _dc_replace(
            prob,
            customers=int(customers or prob.customers),
            warmup=int(warmup or prob.warmup),
        )
    return prob


def _build_distribution(exp, raw, problem, text) -> SamplingDistribution:
    kind = exp.get("dist", UNIFORM)
    if kind not in DISTRIBUTION_KINDS:
        _fail("dist", f"must be one of {DISTRIBUTION_KINDS}, got {kind!r}", text)
    space_cfg = raw.get("space", {})
    if kind == NORMAL:
        space = CovariateSpace.unbounded(problem.dim)
    elif space_cfg:
        space = CovariateSpace.box(
            _broadcast(space_cfg.get("lo"), problem.dim, "space.lo", text),
            _broadcast(space_cfg.get("hi"), problem.dim, "space.hi", text),
            dim=problem.dim,
        )
    else:
        space = default_space(problem)
    dist_cfg = raw.get("distribution", {})
    mean = dist_cfg.get("mean")
    stdev = dist_cfg.get("stdev")
    try:
        if kind == UNIFORM:
            return SamplingDistribution(kind=kind, space=space)
        return SamplingDistribution(
            kind=kind,
            space=space,
            mean=_broadcast(mean, problem.dim, "distribution.mean", text),
            stdev=_broadcast(stdev, problem.dim, "distribution.stdev", text),
        )
    except ConfigurationError as exc:
        _fail("dist", str(exc), text)


def _broadcast(value, dim, key, text):
    if value is None:
        _fail(key, "is required for this distribution", text)
    if isinstance(value, (int, float)):
        return [float(value)] * dim
    if isinstance(value, list) and len(value) in (1, dim):
        vals = [float(v) for v in value]
        return vals * dim if len(vals) == 1 else vals
    _fail(key, f"must be a scalar or a list of {dim} numbers", text)


def load_config(path) -> RunConfig:
    """Parse and validate a TOML config; messages carry the offending line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: TOML syntax error: {exc}") from exc

    exp = raw.get("experiment")
    if not isinstance(exp, dict):
        raise ConfigurationError(f"{path}: missing [experiment] section")
    for key, val in exp.items():
        if key not in _EXPERIMENT_KEYS:
            _fail(key, "is not a recognized experiment key", text)
        expected = _EXPERIMENT_KEYS[key]
        if not isinstance(val, expected if isinstance(expected, tuple) else (expected,)):
            _fail(key, f"has the wrong type (expected {expected})", text)

    problem = _build_problem(exp, text)
    dist = _build_distribution(exp, raw, problem, text)

    kernels = exp.get("kernels", ["sqexp"])
    for fam in kernels:
        if fam not in KERNEL_FAMILIES:
            _fail("kernels", f"unknown family {fam!r}", text)

    schedule = exp.get("m_schedule")
    if not schedule:
        _fail("m_schedule", "is required", text)

    n_values = exp.get("n", 10)
    if isinstance(n_values, int):
        n_values = [n_values]

    kernel_spec = None
    kspec_cfg = raw.get("kernel_spec")
    if kspec_cfg:
        kernel_spec = KernelSpec(**kspec_cfg)

    experiment_by_n = {}
    for n in n_values:
        try:
            experiment_by_n[int(n)] = ExperimentConfig(
                problem=problem,
                dist=dist,
                m_schedule=tuple(schedule),
                n=int(n),
                delta0=float(exp.get("delta0", 0.05)),
                kernel_families=tuple(kernels),
                regressors=exp.get("regressors", "constant"),
                macro_reps=int(exp.get("macro_reps", 1)),
                master_seed=int(exp.get("master_seed", 0)),
                m_prime=int(exp.get("m_prime", 0)),
                noise_degree=exp.get("noise_degree"),
                noise_log=bool(exp.get("noise_log", False)),
                search_budget=int(exp.get("search_budget", 320)),
                kernel_spec=kernel_spec,
            )
        except ConfigurationError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc

    predict_cfg = dict(raw.get("predict_m", {}))
    predict_cfg.setdefault("subsample_schedule", list(DEFAULT_SUBSAMPLE_SCHEDULE))
    predict_cfg.setdefault("resamples", 10)
    predict_cfg.setdefault("verify_macro_reps", 0)

    return RunConfig(
        experiment_by_n=experiment_by_n,
        raw=raw,
        adaptive=dict(raw.get("adaptive", {})),
        predict_m=predict_cfg,
        allocate=dict(raw.get("allocate", {})),
        path=str(path),
    )


def preset_path(name: str) -> Path:
    """Path of a named preset shipped with the package."""
    base = resources.files("covkrig").joinpath("presets")
    candidate = base.joinpath(f"{name}.toml")
    if not candidate.is_file():
        available = sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".toml"))
        raise ConfigurationError(f"unknown preset {name!r}; available: {available}")
    return Path(str(candidate))


def resolve_config_arg(arg: str) -> Path:
    """A config argument is a file path or, failing that, a preset name."""
    p = Path(arg)
    if p.is_file():
        return p
    if not arg.endswith(".toml"):
        return preset_path(arg)
    raise ConfigurationError(f"config file {arg!r} does not exist")
