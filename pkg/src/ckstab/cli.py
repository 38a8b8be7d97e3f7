"""Command-line interface.

Every command resolves a flat ``RunConfig`` (built-in defaults, then an
optional ``key = value`` file, then flags), runs one analysis and writes
a table as CSV or JSON. CSV tables start with a ``#`` block echoing the
resolved configuration so that every output can be regenerated.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .branches import (
    AnalyticAssumptionWarning,
    comparison_report,
    critical_couplings,
    critical_report,
    trace_diagram,
)
from .dynamics import STABLE_FACTOR, UNSTABLE_FACTOR, LATE_FRACTION, _directions, fixed_point, simulate
from .linstab import LinearizationMode, StabilityMismatchError, classify
from .model import (
    DriveSpec,
    SteadyStateError,
    SteadyStateWarning,
    SystemParams,
    state_from_occupation,
    steady_states,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2

COMMANDS = ("steady", "classify", "sweep", "branches", "critical", "simulate", "figure")
FIGURES = ("fig2", "fig3", "fig3b", "fig4", "fig5", "fig6", "fig7")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved inputs of one run; all values in scaled units unless ``raw``."""

    command: str = "steady"
    kappa: float = 0.6
    gamma: float = 0.12
    delta0: float = -1.0
    g0: float = 1e-5
    gck: float = 0.0
    omega_m: float = 1.0
    convention: str = "eq14"
    susceptibility: str = "quintic"
    linearization: str = "exact"
    raw: bool = False
    alpha_in: float | None = None
    n: float | None = None
    root: int = -1
    sweep: str = "occupation"
    gck_list: tuple[float, ...] = ()
    n_min: float = 0.0
    n_max: float = 3.0
    n_points: int = 3000
    alpha_in_list: tuple[float, ...] = ()
    delta0_min: float = -3.0
    delta0_max: float = 1.0
    delta0_points: int = 401
    t_end: float | None = None
    dt: float | None = None
    stride: int = 10
    perturbation: float = 1e-3
    s_max: float = 20.0
    s_step: float = 0.05
    workers: int = 1
    figure: str | None = None
    format: str = "csv"
    out: str | None = None

    def params(self, **override) -> SystemParams:
        kw = dict(
            kappa=self.kappa,
            gamma=self.gamma,
            delta0=self.delta0,
            g0=self.g0,
            omega_m=self.omega_m,
            convention=self.convention,
            susceptibility=self.susceptibility,
        )
        gck = override.pop("gck", self.gck)
        kw.update(override)
        if self.raw:
            return SystemParams(gck=gck, **kw)
        w = kw.pop("omega_m")
        return SystemParams.from_scaled(
            kw.pop("kappa") / w, kw.pop("gamma") / w, kw.pop("delta0") / w, gck_scaled=gck, omega_m=w, **kw
        )

    def drive(self, value: float | None = None) -> DriveSpec:
        v = self.alpha_in if value is None else value
        return DriveSpec(0.0 if v is None else v, scaled=not self.raw)

    def mode(self) -> LinearizationMode:
        return LinearizationMode(self.linearization)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt_value(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls(**parse_config_text(text))

    def metadata(self) -> list[tuple[str, str]]:
        return [(f.name, _fmt_value(getattr(self, f.name))) for f in fields(self)]


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _fmt_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_fmt_value(x) for x in v)
    return str(v)


def _coerce(key: str, text: str):
    kind = _FIELD_TYPES[key]
    t = text.strip()
    if "None" in kind and t.lower() in ("none", ""):
        return None
    try:
        if kind.startswith("tuple"):
            return tuple(float(x) for x in t.split(",") if x.strip())
        if kind.startswith("float"):
            return float(t)
        if kind.startswith("int"):
            return int(t)
        if kind == "bool":
            if t.lower() in ("true", "1", "yes"):
                return True
            if t.lower() in ("false", "0", "no"):
                return False
            raise ValueError(t)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    return t


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


# -- presets -----------------------------------------------------------------

_PRESETS: dict[str, dict] = {
    "fig2": dict(sweep="occupation", gck_list=(0.0,), n_min=0.0, n_max=3.0, n_points=3000),
    "fig3": dict(sweep="occupation", gck_list=(0.0, 0.2, 0.4), n_min=0.0, n_max=8.0, n_points=4000),
    "fig3b": dict(sweep="occupation", gck_list=(0.0, 0.95, 1.0), n_min=0.0, n_max=30.0, n_points=6000),
    "fig4": dict(sweep="occupation", gck_list=(0.0, 0.2), n_min=0.0, n_max=20.0, n_points=4000),
    "fig5": dict(sweep="detuning", gck_list=(0.0, 0.2), alpha_in_list=(0.2, 0.28, 0.35)),
    "fig6": dict(sweep="detuning", gck_list=(0.0,), alpha_in_list=(2.0, 4.0, 10.0)),
    "fig7": dict(sweep="detuning", gck_list=(0.2,), alpha_in_list=(2.0, 4.0, 10.0)),
}


def figure_config(base: RunConfig, fig: str) -> RunConfig:
    """Preset parameters for one figure id, layered over the default preset."""
    if fig not in _PRESETS:
        raise ConfigError(f"unknown figure {fig!r}")
    return replace(base, linearization="paper", figure=fig, **_PRESETS[fig])


# -- output ------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, complex):
        return "%.17g%+.17gj" % (v.real, v.imag)
    if v is None:
        return ""
    return str(getattr(v, "value", v))


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, complex):
        return [v.real, v.imag]
    return getattr(v, "value", v)


@dataclass
class Table:
    name: str
    columns: list[str]
    rows: list[list]
    meta: list[tuple[str, str]] = field(default_factory=list)
    footer: list[tuple[str, str]] = field(default_factory=list)

    def render(self, fmt: str) -> str:
        if fmt == "json":
            doc = {
                "table": self.name,
                "metadata": dict(self.meta),
                "columns": self.columns,
                "rows": [[_json_value(v) for v in r] for r in self.rows],
                "footer": dict(self.footer),
            }
            return json.dumps(doc, indent=1) + "\n"
        buf = io.StringIO()
        buf.write(f"# table = {self.name}\n")
        for k, v in self.meta:
            buf.write(f"# {k} = {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_cell(v) for v in r])
        for k, v in self.footer:
            buf.write(f"# {k} = {v}\n")
        return buf.getvalue()


def _suffixed(path: Path, tag: str, fmt: str) -> Path:
    ext = path.suffix or f".{fmt}"
    return path.with_name(f"{path.stem}_{tag}{ext}")


def emit(tables: list[Table], cfg: RunConfig, stdout) -> list[Path]:
    """Write tables to ``cfg.out`` (file or, for figures, directory) or stdout."""
    written: list[Path] = []
    if cfg.out is None:
        stdout.write("\n".join(t.render(cfg.format) for t in tables))
        return written
    target = Path(cfg.out)
    if cfg.command == "figure":
        target.mkdir(parents=True, exist_ok=True)
        paths = [target / f"{t.name}.{cfg.format}" for t in tables]
    elif len(tables) == 1:
        paths = [target]
    else:
        paths = [_suffixed(target, t.name, cfg.format) for t in tables]
    for t, p in zip(tables, paths):
        p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", newline="") as fh:
            fh.write(t.render(cfg.format))
        written.append(p)
    return written


def _tag(x: float) -> str:
    return ("%g" % x).replace("-", "m").replace(".", "p")


# -- commands ----------------------------------------------------------------


def _states(cfg: RunConfig, params: SystemParams):
    """(state, drive) pairs selected by --n or --alpha-in."""
    if cfg.n is not None:
        n = cfg.n * params.g0**2 / params.omega_m**2 if cfg.raw else cfg.n
        ss, amp = state_from_occupation(params, n)
        return [(ss, DriveSpec(amp))]
    drive = cfg.drive()
    return [(ss, drive) for ss in steady_states(params, drive)]


def cmd_steady(cfg: RunConfig) -> list[Table]:
    params = cfg.params()
    rows = []
    for i, (ss, drive) in enumerate(_states(cfg, params)):
        a, b = (ss.alpha, ss.beta) if cfg.raw else (ss.alpha_scaled, ss.beta_scaled)
        rows.append([i, ss.n, ss.n_a, drive.amplitude(params), a.real, a.imag, b.real, b.imag, ss.residual, ss.degenerate])
    cols = ["root", "n", "n_a", "alpha_in_scaled", "re_alpha", "im_alpha", "re_beta", "im_beta", "residual", "degenerate"]
    return [Table("steady", cols, rows, cfg.metadata())]


def cmd_classify(cfg: RunConfig) -> list[Table]:
    params = cfg.params()
    mode = cfg.mode()
    rows = []
    for i, (ss, drive) in enumerate(_states(cfg, params)):
        v = classify(params, ss, mode)
        rows.append([i, ss.n, drive.amplitude(params), v.klass.value, v.a0_margin, v.rh_margin, v.max_re_lambda, v.degenerate])
    cols = ["root", "n", "alpha_in_scaled", "klass", "a0_margin", "rh_margin", "max_re_lambda", "degenerate"]
    return [Table("classify", cols, rows, cfg.metadata())]


def _gck_values(cfg: RunConfig) -> tuple[float, ...]:
    return cfg.gck_list or (cfg.gck,)


def occupation_sweep(cfg: RunConfig, gck: float) -> Table:
    params = cfg.params(gck=gck)
    grid = np.linspace(cfg.n_min, cfg.n_max, cfg.n_points)
    diag = trace_diagram(params, grid, cfg.mode(), workers=cfg.workers)
    rows = [[s.n, s.drive, s.verdict.value, s.a0_margin, s.rh_margin, s.max_re_lambda] for s in diag.samples]
    cols = ["n", "alpha_in_scaled", "verdict", "a0_margin", "rh_margin", "max_re_lambda"]
    name = f"{cfg.figure or 'sweep'}_gck{_tag(gck)}"
    return Table(name, cols, rows, cfg.metadata() + [("sweep_gck", _fmt_value(float(gck)))])


def detuning_sweep(cfg: RunConfig, gck: float, alpha_in: float) -> Table:
    """Every steady state over a detuning grid; ``selected`` marks the largest root."""
    mode = cfg.mode()
    rows = []
    for d0 in np.linspace(cfg.delta0_min, cfg.delta0_max, cfg.delta0_points):
        params = cfg.params(gck=gck, delta0=float(d0))
        drive = cfg.drive(alpha_in)
        states = steady_states(params, drive)
        for i, ss in enumerate(states):
            v = classify(params, ss, mode)
            rows.append([float(d0), drive.amplitude(params), i, ss.n, i == len(states) - 1, v.klass.value,
                         v.a0_margin, v.rh_margin, v.max_re_lambda])
    cols = ["delta0", "alpha_in_scaled", "root", "n", "selected", "verdict", "a0_margin", "rh_margin", "max_re_lambda"]
    name = f"{cfg.figure or 'sweep'}_gck{_tag(gck)}_alpha{_tag(alpha_in)}"
    meta = cfg.metadata() + [("sweep_gck", _fmt_value(float(gck))), ("sweep_alpha_in", _fmt_value(float(alpha_in)))]
    return Table(name, cols, rows, meta)


def cmd_sweep(cfg: RunConfig) -> list[Table]:
    if cfg.sweep == "occupation":
        return [occupation_sweep(cfg, g) for g in _gck_values(cfg)]
    if cfg.sweep == "detuning":
        drives = cfg.alpha_in_list or ((cfg.alpha_in,) if cfg.alpha_in is not None else ())
        if not drives:
            raise ConfigError("detuning sweep needs alpha_in or alpha_in_list")
        return [detuning_sweep(cfg, g, a) for g in _gck_values(cfg) for a in drives]
    raise ConfigError(f"unknown sweep kind {cfg.sweep!r}")


def cmd_branches(cfg: RunConfig) -> list[Table]:
    params = cfg.params()
    rows = [[r["quantity"], r["source"], r["value"], r["numeric"], r["deviation"], r["note"]]
            for r in comparison_report(params, cfg.mode())]
    cols = ["quantity", "source", "value", "numeric", "deviation", "note"]
    return [Table("branches", cols, rows, cfg.metadata())]


def cmd_critical(cfg: RunConfig) -> list[Table]:
    params = cfg.params()
    modes = list(LinearizationMode) if cfg.linearization == "both" else [cfg.mode()]
    rows = []
    for mode in modes:
        cc = critical_couplings(params, mode, s_max=cfg.s_max, s_step=cfg.s_step)
        for r in critical_report(cc):
            if mode is not modes[0] and r["kind"] != "numeric":
                continue
            label = "comparison only" if r["kind"] != "numeric" else ""
            rows.append([mode.value, r["quantity"], r["kind"], r["value"], r["deviation"], label, r["note"]])
    cols = ["linearization", "quantity", "kind", "value_scaled", "deviation", "label", "note"]
    return [Table("critical", cols, rows, cfg.metadata())]


def trajectory_verdict(times, ratio, t_end) -> str:
    """Same thresholds as the dynamic oracle, applied to a recorded trajectory."""
    if np.any(ratio > UNSTABLE_FACTOR):
        return "Unstable"
    late = ratio[times >= (1 - LATE_FRACTION) * t_end]
    if len(late) and np.max(late) < STABLE_FACTOR:
        return "Stable"
    return "Inconclusive"


def cmd_simulate(cfg: RunConfig) -> list[Table]:
    params = cfg.params()
    states = _states(cfg, params)
    ss, drive = states[cfg.root]
    sp = params.scaled()
    a, b = fixed_point(params, ss, drive)
    eps = cfg.perturbation * max(math.hypot(abs(a), abs(b)), 1.0)
    _, d = _directions(sp, a, b)[0]
    start = np.array([a, b]) + eps * d
    scale = params.omega_m / params.g0
    t_end = cfg.t_end if cfg.t_end is not None else 50.0 / params.gamma
    traj = simulate(params, start[0] * scale, start[1] * scale, drive, t_end, cfg.dt,
                    reference=(a * scale, b * scale), stride=cfg.stride)
    unit = scale if cfg.raw else 1.0
    st = traj.states / scale * unit
    ratio = traj.perturbation / eps if eps > 0 else traj.perturbation
    rows = [[t, s[0].real, s[0].imag, s[1].real, s[1].imag, p]
            for t, s, p in zip(traj.times, st, traj.perturbation)]
    verdict = trajectory_verdict(traj.times, ratio, t_end) if eps > 0 else "Inconclusive"
    footer = [("verdict", verdict), ("diverged", _fmt_value(traj.diverged)),
              ("growth_ratio", _fmt_value(float(ratio[-1]) if eps > 0 else math.nan))]
    cols = ["t", "re_a", "im_a", "re_b", "im_b", "perturbation_norm"]
    return [Table("simulate", cols, rows, cfg.metadata(), footer)]


def cmd_figure(cfg: RunConfig) -> list[Table]:
    return cmd_sweep(cfg)


_HANDLERS = {
    "steady": cmd_steady,
    "classify": cmd_classify,
    "sweep": cmd_sweep,
    "branches": cmd_branches,
    "critical": cmd_critical,
    "simulate": cmd_simulate,
    "figure": cmd_figure,
}


# -- argument handling ---------------------------------------------------------


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("parameters (scaled units: omega_m = 1, gck in g0^2)")
    g.add_argument("--config", metavar="PATH", help="key = value file; flags override it")
    g.add_argument("--delta0", type=float)
    g.add_argument("--kappa", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--g0", type=float)
    g.add_argument("--gck", type=float, help="cross-Kerr strength (in units of g0^2/omega_m unless --raw)")
    g.add_argument("--omega-m", dest="omega_m", type=float)
    g.add_argument("--convention", choices=["eq14", "printed"])
    g.add_argument("--susceptibility", choices=["quintic", "full"])
    g.add_argument("--linearization", choices=["exact", "paper", "both"])
    g.add_argument("--raw", action="store_const", const=True, help="physical units; requires --g0")
    g.add_argument("--workers", type=int)
    o = common.add_argument_group("output")
    o.add_argument("--out", metavar="PATH")
    o.add_argument("--format", choices=["csv", "json"])

    state = argparse.ArgumentParser(add_help=False)
    state.add_argument("--alpha-in", dest="alpha_in", type=float, help="drive amplitude (units of omega_m/g0)")
    state.add_argument("--n", type=float, help="select the state at this occupation instead")

    sweep = argparse.ArgumentParser(add_help=False)
    sweep.add_argument("--sweep", choices=["occupation", "detuning"])
    sweep.add_argument("--gck-list", dest="gck_list", type=_float_list)
    sweep.add_argument("--n-min", dest="n_min", type=float)
    sweep.add_argument("--n-max", dest="n_max", type=float)
    sweep.add_argument("--n-points", dest="n_points", type=int)
    sweep.add_argument("--alpha-in-list", dest="alpha_in_list", type=_float_list)
    sweep.add_argument("--delta0-min", dest="delta0_min", type=float)
    sweep.add_argument("--delta0-max", dest="delta0_max", type=float)
    sweep.add_argument("--delta0-points", dest="delta0_points", type=int)

    parser = argparse.ArgumentParser(prog="ckstab", description="Stability of cross-Kerr optomechanical steady states.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("steady", parents=[common, state], help="steady states for a drive")
    sub.add_parser("classify", parents=[common, state], help="linear stability of each steady state")
    s = sub.add_parser("sweep", parents=[common, sweep], help="stability diagram or detuning sweep")
    s.add_argument("--alpha-in", dest="alpha_in", type=float)
    sub.add_parser("branches", parents=[common], help="numeric vs closed-form branch endpoints")
    c = sub.add_parser("critical", parents=[common], help="critical cross-Kerr strengths")
    c.add_argument("--s-max", dest="s_max", type=float)
    c.add_argument("--s-step", dest="s_step", type=float)
    m = sub.add_parser("simulate", parents=[common, state], help="integrate the mean-field equations")
    m.add_argument("--root", type=int, help="index of the steady state (default: largest)")
    m.add_argument("--t-end", dest="t_end", type=float)
    m.add_argument("--dt", type=float)
    m.add_argument("--stride", type=int)
    m.add_argument("--perturbation", type=float)
    f = sub.add_parser("figure", parents=[common, sweep], help="figure data preset")
    f.add_argument("--id", dest="figure", choices=FIGURES, required=True)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(parse_config_text(Path(args.config).read_text()))
    flags = {k: v for k, v in vars(args).items() if k in _FIELD_TYPES and v is not None}
    g0_given = "g0" in flags or "g0" in values
    values["command"] = args.command
    linearization_given = "linearization" in flags or "linearization" in values
    cfg = RunConfig(**values)
    if args.command == "figure":
        cfg = figure_config(cfg, flags.get("figure", cfg.figure))
    cfg = replace(cfg, **flags)
    if args.command == "critical" and not linearization_given:
        cfg = replace(cfg, linearization="both")
    if cfg.linearization == "both" and args.command != "critical":
        raise ConfigError("--linearization both is only meaningful for 'critical'")
    if cfg.raw and not g0_given:
        raise ConfigError("--raw requires an explicit g0")
    return cfg


def main(argv: Iterable[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(None if argv is None else list(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AnalyticAssumptionWarning)
            warnings.simplefilter("ignore", SteadyStateWarning)
            tables = _HANDLERS[cfg.command](cfg)
        for p in emit(tables, cfg, stdout):
            stderr.write(f"wrote {p}\n")
    except (ConfigError, FileNotFoundError) as exc:
        stderr.write(f"ckstab: error: {exc}\n")
        return EXIT_USAGE
    except (SteadyStateError, StabilityMismatchError, ValueError, RuntimeError, IndexError) as exc:
        stderr.write(f"ckstab: error: {type(exc).__name__}: {exc}\n")
        return EXIT_ERROR
    return EXIT_OK


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
