# backend/lib/avgctl_core/config.py
"""
Experiment configuration: a sectioned key = value file, one typed schema.

    [experiment]  name (str), seed (int)
    [problem]     state_dim, control_dim (int); s, T (float);
                  control_lo, control_hi (float list); periodic (bool list);
                  running_cost in {control_energy, state_energy, zero}, running_weight (float);
                  terminal_cost in {sum, squared_norm, zero}, terminal_weight (float);
                  lipschitz_l, lipschitz_h (float, optional);
                  intervals, substeps (int); blowup_guard (float)
    [dynamics]    kind in {builtin_test1, builtin_test2, scalar_lambda_sin, affine};
                  lambdas (float list, scalar_lambda_sin);
                  matrices (float list: the n x n matrices of all atoms, row-major, concatenated);
                  control_map in {linear, polar}; input_matrix (float list, n x m row-major);
                  true_index (int, 0-based)
    [schedule]    rule in {geometric, constant}; split (float list, geometric);
                  weights (float list, constant); n_min, n_max (int)
    [grid]        lo, hi (float list); counts (int list, one entry = same count everywhere)
    [solver]      restarts, max_iters (int); grad_tol, initial_step, shrink, armijo_c (float);
                  spectral (bool)
    [box]         state_lo, state_hi, control_lo, control_hi (float list);
                  samples_per_dim (int, 0 = size-based default)
    [output]      directory (str); check_bound (bool);
                  trajectory_x0 (float list); trajectory_weights (float list, empty = pi^{n_min})

Lists are comma separated. Booleans are true/false. Comments go on their own
line, starting with # or ;. Keys left out take the defaults below; unknown
sections and keys are errors. Every error names the file and line.
"""
import math
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Iterable, Optional, Tuple

from iniconfig import IniConfig, ParseError

from .errors import ConfigError

RUNNING_COSTS = ("control_energy", "state_energy", "zero")
TERMINAL_COSTS = ("sum", "squared_norm", "zero")
DYNAMICS_KINDS = ("builtin_test1", "builtin_test2", "scalar_lambda_sin", "affine")
CONTROL_MAPS = ("linear", "polar")
SCHEDULE_RULES = ("geometric", "constant")
WEIGHT_SUM_TOL = 1e-6


def _opt(kind: str, default):
    return field(default=default, metadata={"kind": kind})


@dataclass(frozen=True)
class ExperimentSection:
    name: str = _opt("str", "experiment")
    seed: int = _opt("int", 0)


@dataclass(frozen=True)
class ProblemSection:
    state_dim: int = _opt("int", 1)
    control_dim: int = _opt("int", 1)
    s: float = _opt("float", 0.0)
    T: float = _opt("float", 1.0)
    control_lo: Tuple[float, ...] = _opt("floats", (-1.0,))
    control_hi: Tuple[float, ...] = _opt("floats", (1.0,))
    periodic: Tuple[bool, ...] = _opt("bools", ())
    running_cost: str = _opt("str", "control_energy")
    running_weight: float = _opt("float", 1.0)
    terminal_cost: str = _opt("str", "zero")
    terminal_weight: float = _opt("float", 1.0)
    lipschitz_l: Optional[float] = _opt("float", None)
    lipschitz_h: Optional[float] = _opt("float", None)
    intervals: int = _opt("int", 100)
    substeps: int = _opt("int", 1)
    blowup_guard: float = _opt("float", 1e8)


@dataclass(frozen=True)
class DynamicsSection:
    kind: str = _opt("str", "builtin_test1")
    lambdas: Tuple[float, ...] = _opt("floats", ())
    matrices: Tuple[float, ...] = _opt("floats", ())
    control_map: str = _opt("str", "linear")
    input_matrix: Tuple[float, ...] = _opt("floats", ())
    true_index: int = _opt("int", 0)


@dataclass(frozen=True)
class ScheduleSection:
    rule: str = _opt("str", "geometric")
    split: Tuple[float, ...] = _opt("floats", ())
    weights: Tuple[float, ...] = _opt("floats", ())
    n_min: int = _opt("int", 1)
    n_max: int = _opt("int", 8)


@dataclass(frozen=True)
class GridSection:
    lo: Tuple[float, ...] = _opt("floats", (-1.0,))
    hi: Tuple[float, ...] = _opt("floats", (1.0,))
    counts: Tuple[int, ...] = _opt("ints", (21,))


@dataclass(frozen=True)
class SolverSection:
    restarts: int = _opt("int", 5)
    max_iters: int = _opt("int", 5000)
    grad_tol: float = _opt("float", 1e-8)
    initial_step: float = _opt("float", 1.0)
    shrink: float = _opt("float", 0.5)
    armijo_c: float = _opt("float", 1e-4)
    spectral: bool = _opt("bool", True)


@dataclass(frozen=True)
class BoxSection:
    state_lo: Tuple[float, ...] = _opt("floats", (-3.0,))
    state_hi: Tuple[float, ...] = _opt("floats", (3.0,))
    control_lo: Tuple[float, ...] = _opt("floats", (-1.0,))
    control_hi: Tuple[float, ...] = _opt("floats", (1.0,))
    samples_per_dim: int = _opt("int", 0)


@dataclass(frozen=True)
class OutputSection:
    directory: str = _opt("str", "results")
    check_bound: bool = _opt("bool", True)
    trajectory_x0: Tuple[float, ...] = _opt("floats", (1.0,))
    trajectory_weights: Tuple[float, ...] = _opt("floats", ())


SECTIONS = {
    "experiment": ExperimentSection,
    "problem": ProblemSection,
    "dynamics": DynamicsSection,
    "schedule": ScheduleSection,
    "grid": GridSection,
    "solver": SolverSection,
    "box": BoxSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    problem: ProblemSection = field(default_factory=ProblemSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    grid: GridSection = field(default_factory=GridSection)
    solver: SolverSection = field(default_factory=SolverSection)
    box: BoxSection = field(default_factory=BoxSection)
    output: OutputSection = field(default_factory=OutputSection)
    path: str = field(default="<config>", compare=False)
    lines: Dict[Tuple[str, str], Optional[int]] = field(default_factory=dict, compare=False, repr=False)

    def line(self, section: str, key: Optional[str] = None) -> Optional[int]:
        return self.lines.get((section, key)) or self.lines.get((section, None))

    def error(self, section: str, key: Optional[str], message: str) -> ConfigError:
        return ConfigError(f"[{section}] {key}: {message}" if key else f"[{section}] {message}",
                           self.path, self.line(section, key))


# -----------------------------------------------------------------------------
# Raw layer: {section: {key: (text, lineno)}}
# -----------------------------------------------------------------------------

Raw = Dict[str, Dict[str, Tuple[str, Optional[int]]]]


def read_raw(text: str, path: str = "<config>") -> Raw:
    try:
        ini = IniConfig(path, data=text)
    except ParseError as exc:
        raise ConfigError(exc.msg, path, exc.lineno + 1) from exc
    raw: Raw = {}
    for section in ini:
        if section.name not in SECTIONS:
            raise ConfigError(f"unknown section [{section.name}]", path, ini.lineof(section.name))
        raw[section.name] = {key: (value, section.lineof(key)) for key, value in section.items()}
        raw[section.name][""] = ("", ini.lineof(section.name))
    return raw


def apply_overrides(raw: Raw, overrides: Iterable[str]) -> Raw:
    """Apply `section.key=value` strings on top of the raw config."""
    for item in overrides:
        target, sep, value = item.partition("=")
        section, dot, key = target.strip().partition(".")
        if not sep or not dot or not key:
            raise ConfigError(f"override {item!r} must look like section.key=value", "<override>")
        raw.setdefault(section, {})[key] = (value.strip(), None)
    return raw


def _convert(kind: str, text: str):
    text = text.strip()
    if kind == "str":
        return text
    if kind in ("floats", "ints", "bools"):
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(_convert(kind[:-1], t) for t in items)
    if kind == "int":
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"expected an integer, got {text!r}") from None
    if kind == "float":
        try:
            value = float(text)
        except ValueError:
            raise ValueError(f"expected a number, got {text!r}") from None
        if not math.isfinite(value):
            raise ValueError(f"expected a finite number, got {text!r}")
        return value
    if kind == "bool":
        lowered = text.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ValueError(f"expected true or false, got {text!r}")
    raise AssertionError(kind)


def build_config(raw: Raw, path: str = "<config>") -> ExperimentConfig:
    lines: Dict[Tuple[str, Optional[str]], Optional[int]] = {}
    sections = {}
    for name, cls in SECTIONS.items():
        entries = raw.get(name, {})
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, (text, lineno) in entries.items():
            if key == "":
                lines[(name, None)] = lineno
                continue
            lines[(name, key)] = lineno
            if key not in known:
                raise ConfigError(f"[{name}] unknown key {key!r}", path, lineno)
            try:
                values[key] = _convert(known[key].metadata["kind"], text)
            except ValueError as exc:
                raise ConfigError(f"[{name}] {key}: {exc}", path, lineno) from None
        sections[name] = cls(**values)
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section [{sorted(unknown)[0]}]", path)
    config = ExperimentConfig(**sections, path=path, lines=lines)
    validate_config(config)
    return config


def parse_config(text: str, path: str = "<config>", overrides: Iterable[str] = ()) -> ExperimentConfig:
    return build_config(apply_overrides(read_raw(text, path), overrides), path)


def _format(kind: str, value) -> str:
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "ints":
        return ", ".join(str(int(v)) for v in value)
    if kind == "bools":
        return ", ".join("true" if v else "false" for v in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    return str(value)


def dump_config(config: ExperimentConfig) -> str:
    """Text that parse_config turns back into an equal config."""
    out = []
    for name in SECTIONS:
        section = getattr(config, name)
        out.append(f"[{name}]")
        for f in fields(section):
            value = getattr(section, f.name)
            if value is None or value == ():
                continue
            out.append(f"{f.name} = {_format(f.metadata['kind'], value)}")
        out.append("")
    return "\n".join(out)


def with_overrides(config: ExperimentConfig, overrides: Iterable[str]) -> ExperimentConfig:
    overrides = list(overrides)
    if not overrides:
        return config
    return parse_config(dump_config(config), config.path, overrides)


# -----------------------------------------------------------------------------
# Validation
# -----------------------------------------------------------------------------

def atom_count(config: ExperimentConfig) -> int:
    d = config.dynamics
    n = config.problem.state_dim
    if d.kind == "builtin_test1":
        return 5
    if d.kind == "builtin_test2":
        return 3
    if d.kind == "scalar_lambda_sin":
        return len(d.lambdas)
    return len(d.matrices) // (n * n)


def _check_weights(config: ExperimentConfig, section: str, key: str, weights, size: int):
    if len(weights) != size:
        raise config.error(section, key, f"needs {size} entries (one per atom), got {len(weights)}")
    if any(w < 0 for w in weights):
        raise config.error(section, key, "weights must be nonnegative")
    total = sum(weights)
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise config.error(section, key, f"weights must sum to 1 (within {WEIGHT_SUM_TOL:g}), got {total:.12g}")


def validate_config(config: ExperimentConfig):
    """Cross-section consistency; raises ConfigError naming the offending line."""
    p, d, sch, g, sol, box, out = (config.problem, config.dynamics, config.schedule, config.grid,
                                   config.solver, config.box, config.output)
    n, m = p.state_dim, p.control_dim
    if n < 1 or m < 1:
        raise config.error("problem", "state_dim", "state_dim and control_dim must be positive")
    if not p.s < p.T:
        raise config.error("problem", "T", f"horizon requires s < T, got s={p.s}, T={p.T}")
    for key in ("control_lo", "control_hi"):
        if len(getattr(p, key)) != m:
            raise config.error("problem", key, f"needs {m} entries (control_dim)")
    if any(a >= b for a, b in zip(p.control_lo, p.control_hi)):
        raise config.error("problem", "control_hi", "control_lo must be < control_hi in every coordinate")
    if p.periodic and len(p.periodic) != m:
        raise config.error("problem", "periodic", f"needs {m} entries (control_dim)")
    if p.running_cost not in RUNNING_COSTS:
        raise config.error("problem", "running_cost", f"must be one of {', '.join(RUNNING_COSTS)}")
    if p.terminal_cost not in TERMINAL_COSTS:
        raise config.error("problem", "terminal_cost", f"must be one of {', '.join(TERMINAL_COSTS)}")
    for key in ("lipschitz_l", "lipschitz_h"):
        value = getattr(p, key)
        if value is not None and value < 0:
            raise config.error("problem", key, "must be nonnegative")
    if p.intervals < 1 or p.substeps < 1:
        raise config.error("problem", "intervals", "intervals and substeps must be positive")
    if not p.blowup_guard > 0:
        raise config.error("problem", "blowup_guard", "must be positive")

    if d.kind not in DYNAMICS_KINDS:
        raise config.error("dynamics", "kind", f"must be one of {', '.join(DYNAMICS_KINDS)}")
    if d.kind in ("builtin_test1", "scalar_lambda_sin") and (n, m) != (1, 1):
        raise config.error("dynamics", "kind", f"{d.kind} needs state_dim = control_dim = 1")
    if d.kind == "builtin_test2" and (n, m) != (2, 1):
        raise config.error("dynamics", "kind", "builtin_test2 needs state_dim = 2, control_dim = 1")
    if d.kind == "scalar_lambda_sin" and not d.lambdas:
        raise config.error("dynamics", "lambdas", "scalar_lambda_sin needs at least one lambda")
    if d.kind == "affine":
        if not d.matrices or len(d.matrices) % (n * n):
            raise config.error("dynamics", "matrices", f"needs a positive multiple of {n * n} entries")
        if d.control_map not in CONTROL_MAPS:
            raise config.error("dynamics", "control_map", f"must be one of {', '.join(CONTROL_MAPS)}")
        if d.control_map == "polar" and (n, m) != (2, 1):
            raise config.error("dynamics", "control_map", "polar needs state_dim = 2, control_dim = 1")
        if d.control_map == "linear" and len(d.input_matrix) != n * m:
            raise config.error("dynamics", "input_matrix", f"needs {n * m} entries (n x m)")
    atoms = atom_count(config)
    if not 0 <= d.true_index < atoms:
        raise config.error("dynamics", "true_index", f"must index one of the {atoms} atoms")

    if sch.rule not in SCHEDULE_RULES:
        raise config.error("schedule", "rule", f"must be one of {', '.join(SCHEDULE_RULES)}")
    if sch.rule == "constant":
        _check_weights(config, "schedule", "weights", sch.weights, atoms)
    elif sch.split:
        _check_weights(config, "schedule", "split", sch.split, atoms - 1)
    if not 0 <= sch.n_min <= sch.n_max:
        raise config.error("schedule", "n_max", "needs 0 <= n_min <= n_max")

    for key in ("lo", "hi"):
        if len(getattr(g, key)) != n:
            raise config.error("grid", key, f"needs {n} entries (state_dim)")
    if any(a >= b for a, b in zip(g.lo, g.hi)):
        raise config.error("grid", "hi", "lo must be < hi in every coordinate")
    if len(g.counts) not in (1, n) or any(c < 2 for c in g.counts):
        raise config.error("grid", "counts", f"needs 1 or {n} counts, each at least 2")

    if sol.restarts < 1 or sol.max_iters < 1:
        raise config.error("solver", "restarts", "restarts and max_iters must be positive")
    if not sol.grad_tol > 0 or not sol.initial_step > 0:
        raise config.error("solver", "grad_tol", "grad_tol and initial_step must be positive")
    if not 0 < sol.shrink < 1:
        raise config.error("solver", "shrink", "shrink factor must lie in (0, 1)")
    if not 0 < sol.armijo_c < 1:
        raise config.error("solver", "armijo_c", "sufficient-decrease constant must lie in (0, 1)")

    for key, size in (("state_lo", n), ("state_hi", n), ("control_lo", m), ("control_hi", m)):
        if len(getattr(box, key)) != size:
            raise config.error("box", key, f"needs {size} entries")
    if any(a >= b for a, b in zip(box.state_lo + box.control_lo, box.state_hi + box.control_hi)):
        raise config.error("box", "state_hi", "box lower bounds must be < upper bounds")
    if box.samples_per_dim == 1 or box.samples_per_dim < 0:
        raise config.error("box", "samples_per_dim", "must be 0 (default) or at least 2")

    if len(out.trajectory_x0) != n:
        raise config.error("output", "trajectory_x0", f"needs {n} entries (state_dim)")
    if out.trajectory_weights:
        _check_weights(config, "output", "trajectory_weights", out.trajectory_weights, atoms)
    if not out.directory:
        raise config.error("output", "directory", "must not be empty")
    if out.check_bound and (p.lipschitz_l is None or p.lipschitz_h is None):
        where = ("output", "check_bound")
        if not config.line("output") and config.line("problem"):
            where = ("problem", None)
        raise config.error(*where, "the bound check needs [problem] lipschitz_l and lipschitz_h;"
                                   " set both or turn off [output] check_bound")
    if sch.rule == "geometric" and atoms < 2:
        raise config.error("schedule", "rule", "geometric schedules need at least 2 atoms")


# -----------------------------------------------------------------------------
# Built-in experiments
# -----------------------------------------------------------------------------

TEST1_CONFIG = ExperimentConfig(
    experiment=ExperimentSection(name="test1", seed=0),
    problem=ProblemSection(
        state_dim=1, control_dim=1, s=0.0, T=1.0, control_lo=(-1.0,), control_hi=(1.0,), periodic=(False,),
        running_cost="control_energy", running_weight=1.0, terminal_cost="sum", terminal_weight=-1.0,
        lipschitz_l=0.0, lipschitz_h=1.0,
    ),
    dynamics=DynamicsSection(kind="builtin_test1", true_index=0),
    schedule=ScheduleSection(rule="geometric", split=(0.25, 0.25, 0.25, 0.25), n_min=1, n_max=8),
    grid=GridSection(lo=(-1.0,), hi=(1.0,), counts=(21,)),
    solver=SolverSection(restarts=5),
    box=BoxSection(state_lo=(-3.0,), state_hi=(3.0,), control_lo=(-1.0,), control_hi=(1.0,)),
    output=OutputSection(directory="results", check_bound=True, trajectory_x0=(1.0,)),
    path="<builtin test1>",
)

TEST2_CONFIG = ExperimentConfig(
    experiment=ExperimentSection(name="test2", seed=0),
    problem=ProblemSection(
        state_dim=2, control_dim=1, s=0.0, T=1.0, control_lo=(0.0,), control_hi=(2 * math.pi,),
        periodic=(True,), running_cost="state_energy", running_weight=0.5,
        terminal_cost="squared_norm", terminal_weight=0.5,
    ),
    dynamics=DynamicsSection(kind="builtin_test2", true_index=0),
    schedule=ScheduleSection(rule="geometric", split=(0.5, 0.5), n_min=1, n_max=6),
    grid=GridSection(lo=(-1.0, -1.0), hi=(1.0, 1.0), counts=(11, 11)),
    solver=SolverSection(restarts=9),
    box=BoxSection(state_lo=(-3.0, -3.0), state_hi=(3.0, 3.0), control_lo=(0.0,), control_hi=(2 * math.pi,)),
    output=OutputSection(directory="results", check_bound=False, trajectory_x0=(-0.4, 0.3),
                         trajectory_weights=(1 / 3, 1 / 3, 1 / 3)),
    path="<builtin test2>",
)

BUILTIN_CONFIGS = {"test1": TEST1_CONFIG, "test2": TEST2_CONFIG}


def builtin_config(name: str, overrides: Iterable[str] = ()) -> ExperimentConfig:
    return with_overrides(replace(BUILTIN_CONFIGS[name]), overrides)
