"""INI run configurations.

A run file has the sections ``mesh``, ``morphology``, ``params``,
``solver``, ``sweep`` and ``output``. Every parameter has a default, so an
empty section is valid. Unknown sections and keys are rejected and every
problem found is reported at once.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, PreconditionerError
from .linsolve import LinearSolverConfig, PreconditionerSpec
from .physics import ModelParams
from .solvers import METHODS, NonlinearConfig, SweepConfig

__all__ = ["RunConfig", "parse_config", "parse_config_string", "OUTPUT_ROOT_ENV"]

OUTPUT_ROOT_ENV = "OPVSIM_OUTPUT_ROOT"

SECTIONS = ("mesh", "morphology", "params", "solver", "sweep", "output")
MORPHOLOGY_KINDS = ("file", "uniform", "bilayer", "checkerboard", "smoothed_noise")

_MESH_KEYS = {"dim": int, "counts": "ints", "extent": "floats"}
_MORPH_KEYS = {"source": str, "path": str, "c": float, "h_split": float, "period": float,
               "seed": int, "blend_ratio": float, "smoothing_passes": int}
_SOLVER_KEYS = {
    "method": str, "alpha": float, "newton_rtol": float, "newton_atol": float,
    "newton_max_iters": int, "steady_tol": float, "tau": float, "max_time_steps": int,
    "tau_growth": float, "tau_max": float, "max_step_cuts": int, "acceleration": str,
    "anderson_depth": int, "update_limit": float, "gummel_poisson": str,
    "preconditioner": str, "gmres_rtol": float, "gmres_atol": float,
    "gmres_max_iters": int, "gmres_restart": int, "quadrature": str,
    "artificial_diffusion": float,
}
_SWEEP_KEYS = {"v_bot": float, "v_top_start": float, "v_top_stop": float, "v_top_step": float}
_OUTPUT_KEYS = {"directory": str, "snapshots": "floats", "formats": "words",
                "conservation_threshold": float}
# keys are read case-insensitively; map them back to the field names (G, N_intr)
_PARAM_NAMES = {f.name.lower(): f.name for f in dataclasses.fields(ModelParams)}
_PARAM_KEYS = dict.fromkeys(_PARAM_NAMES, float)
_OUTPUT_FORMATS = ("csv", "vtk", "json")


@dataclass
class RunConfig:
    dim: int = 2
    counts: tuple = (32, 32)
    extent: tuple = (10.0, 10.0)
    morphology: dict = field(default_factory=lambda: {"source": "checkerboard", "period": 2.5})
    params: ModelParams = field(default_factory=ModelParams)
    solver: NonlinearConfig = field(default_factory=NonlinearConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output_dir: Path = Path("output")
    snapshots: tuple = ()
    formats: tuple = _OUTPUT_FORMATS
    conservation_threshold: float = 1e-3
    source_path: Path = None


def _convert(kind, raw):
    if kind == "ints":
        return tuple(int(v) for v in raw.replace(",", " ").split())
    if kind == "floats":
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if kind == "words":
        return tuple(v.lower() for v in raw.replace(",", " ").split())
    if kind is str:
        return raw.strip()
    if kind is int:
        value = float(raw)
        if value != int(value):
            raise ValueError(f"{raw!r} is not an integer")
        return int(value)
    return kind(raw)


def _read_section(cp, name, schema, problems):
    values = {}
    if not cp.has_section(name):
        return values
    for key, raw in cp.items(name):
        if key not in schema:
            problems.append(f"[{name}] unknown key {key!r}")
            continue
        try:
            values[key] = _convert(schema[key], raw)
        except ValueError as exc:
            problems.append(f"[{name}] {key} = {raw!r}: {exc}")
    return values


def parse_config_string(text, base_dir=None, source=None):
    """Parse configuration text; relative paths resolve against ``base_dir``."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   default_section="__no_defaults__")
    cp.optionxform = str.lower
    where = source or "<string>"
    try:
        cp.read_string(text, source=where)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{where}: line {exc.lineno}: key outside of any section") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{where}: line {exc.lineno}: duplicate key {exc.option!r} "
                          f"in [{exc.section}]") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{where}: line {exc.lineno}: duplicate section [{exc.section}]") \
            from None
    except configparser.ParsingError as exc:
        lines = ", ".join(f"line {ln}: {body!r}" for ln, body in exc.errors)
        raise ConfigError(f"{where}: syntax error at {lines}") from None

    problems = []
    for name in cp.sections():
        if name not in SECTIONS:
            problems.append(f"unknown section [{name}]")
    mesh = _read_section(cp, "mesh", _MESH_KEYS, problems)
    morph = _read_section(cp, "morphology", _MORPH_KEYS, problems)
    par = {_PARAM_NAMES[k]: v
           for k, v in _read_section(cp, "params", _PARAM_KEYS, problems).items()}
    solv = _read_section(cp, "solver", _SOLVER_KEYS, problems)
    sweep = _read_section(cp, "sweep", _SWEEP_KEYS, problems)
    out = _read_section(cp, "output", _OUTPUT_KEYS, problems)
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    cfg = RunConfig(source_path=Path(source) if source else None)

    # mesh
    dim = mesh.get("dim", len(mesh["counts"]) if "counts" in mesh else 2)
    if dim not in (2, 3):
        problems.append(f"[mesh] dim must be 2 or 3, got {dim}")
        dim = 2
    counts = mesh.get("counts", (32,) * dim)
    extent = mesh.get("extent", (10.0,) * dim)
    if len(counts) != dim:
        problems.append(f"[mesh] counts needs {dim} entries, got {len(counts)}")
    elif any(c < 2 for c in counts):
        problems.append("[mesh] counts must all be >= 2")
    if len(extent) != dim:
        problems.append(f"[mesh] extent needs {dim} entries, got {len(extent)}")
    elif any(not (e > 0 and np.isfinite(e)) for e in extent):
        problems.append("[mesh] extent entries must be positive")
    cfg.dim, cfg.counts, cfg.extent = dim, tuple(counts), tuple(extent)

    # morphology
    source_kind = morph.get("source", "checkerboard")
    if source_kind not in MORPHOLOGY_KINDS:
        problems.append(f"[morphology] source must be one of {MORPHOLOGY_KINDS}, "
                        f"got {source_kind!r}")
    if source_kind == "file":
        if "path" not in morph:
            problems.append("[morphology] source = file needs a path")
        else:
            p = Path(morph["path"])
            p = p if p.is_absolute() else base_dir / p
            if not p.is_file():
                problems.append(f"[morphology] file {str(p)!r} does not exist")
            morph["path"] = str(p)
    if source_kind == "bilayer" and "h_split" not in morph:
        morph["h_split"] = 0.5 * extent[-1] if extent else 5.0
    if source_kind == "checkerboard":
        morph.setdefault("period", 2.5)
    if "blend_ratio" in morph and not 0 < morph["blend_ratio"] < 1:
        problems.append("[morphology] blend_ratio must lie in (0, 1)")
    morph["source"] = source_kind
    cfg.morphology = morph

    # params
    try:
        cfg.params = ModelParams(**par)
    except DomainError:
        # rebuild without the constructor check to list every violation
        probe = object.__new__(ModelParams)
        values = {f.name: f.default for f in dataclasses.fields(ModelParams)}
        values.update(par)
        for k, v in values.items():
            object.__setattr__(probe, k, v)
        problems.extend(f"[params] {p}" for p in ModelParams.validate(probe))

    # solver
    linear_kw = {}
    for src, dst in (("gmres_rtol", "rtol"), ("gmres_atol", "atol"),
                     ("gmres_max_iters", "max_iters"), ("gmres_restart", "restart")):
        if src in solv:
            linear_kw[dst] = solv.pop(src)
    try:
        linear = LinearSolverConfig(**linear_kw)
    except ValueError as exc:
        problems.append(f"[solver] {exc}")
        linear = LinearSolverConfig()
    try:
        precond = PreconditionerSpec(solv.pop("preconditioner", "ilu0"))
    except PreconditionerError as exc:
        problems.append(f"[solver] {exc}")
        precond = PreconditionerSpec()
    solv.setdefault("tau", cfg.params.tau if not problems else ModelParams.tau)
    solv.setdefault("steady_tol", cfg.params.tol if not problems else ModelParams.tol)
    if "tau_max" not in solv:
        solv["tau_max"] = solv["tau"] if solv.get("tau_growth", 1.0) == 1.0 else float("inf")
    if "alpha" in solv and not 0 < solv["alpha"] < 1:
        problems.append(f"[solver] alpha must lie in (0, 1), got {solv['alpha']}")
        solv.pop("alpha")
    method = solv.get("method", "newton")
    if method not in METHODS:
        problems.append(f"[solver] method must be one of {METHODS}, got {method!r}")
        solv["method"] = "newton"
    probe = object.__new__(NonlinearConfig)
    for f in dataclasses.fields(NonlinearConfig):
        value = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        object.__setattr__(probe, f.name, solv.get(f.name, value))
    solver_problems = NonlinearConfig.validate(probe)
    problems.extend(f"[solver] {p}" for p in solver_problems)
    if not solver_problems:
        cfg.solver = NonlinearConfig(linear=linear, precond=precond, **solv)

    # sweep
    try:
        cfg.sweep = SweepConfig(**sweep)
    except DomainError as exc:
        problems.append(f"[sweep] {exc}")

    # output
    root = os.environ.get(OUTPUT_ROOT_ENV)
    directory = Path(out.get("directory", "output"))
    if not directory.is_absolute():
        directory = Path(root) / directory if root else base_dir / directory
    cfg.output_dir = directory
    formats = out.get("formats", _OUTPUT_FORMATS)
    for f in formats:
        if f not in _OUTPUT_FORMATS:
            problems.append(f"[output] unknown format {f!r}; choose from {_OUTPUT_FORMATS}")
    cfg.formats = tuple(formats)
    cfg.snapshots = out.get("snapshots", ())
    swept = cfg.sweep.voltages()
    for v in cfg.snapshots:
        if not any(abs(v - s) <= 1e-9 * max(1.0, abs(s)) for s in swept):
            problems.append(f"[output] snapshot voltage {v} is not a sweep point")
    threshold = out.get("conservation_threshold", 1e-3)
    if not threshold > 0:
        problems.append("[output] conservation_threshold must be > 0")
    cfg.conservation_threshold = threshold

    if problems:
        raise ConfigError([f"{where}: {p}" for p in problems])
    return cfg


def parse_config(path):
    """Read and validate a run file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"configuration file {str(path)!r} not found")
    return parse_config_string(path.read_text(), base_dir=path.parent, source=str(path))
