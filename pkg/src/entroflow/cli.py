"""Command-line front end.

    entroflow <entropy|flow|surgery|cap|appendix|validate> --config FILE [--only TAG] [--out DIR]

The config is a YAML document with a strict schema: any key the command does
not know is a validation error.  Exit codes: 0 success, 2 invalid input,
3 numerical failure (or, for ``validate``, a failed criterion).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import axigeom as ag
from . import flow as fl
from . import surgery as su
from .axigeom import CurveError
from .entropy import QuadratureError, SearchConfig, entropy

log = logging.getLogger("entroflow")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------
# config handling
# ----------------------------------------------------------------------
SHAPES = {
    "sphere": {"n", "radius", "h", "center"},
    "cylinder": {"n", "radius", "half_length", "h"},
    "capsule": {"n", "radius", "cyl_half_length", "h"},
    "capped_cylinder": {"n", "radius", "length", "h"},
    "eta_k_dumbbell": {"n", "m", "k", "W", "R0", "h", "margin", "closed"},
}
RESAMPLE_KEYS = {"h_max", "resolution", "ratio"}

TOP_KEYS = {
    "entropy": {"curve", "search", "heatmap"},
    "flow": {"curve", "control", "stop", "entropy", "snapshots"},
    "surgery": {"curve", "params", "control", "audit", "cap", "max_surgeries", "t_max", "check_entropy"},
    "cap": {"n", "epsilon", "R_tilde", "config"},
    "appendix": {"a", "r", "step"},
    "validate": {"only"},
}


def _reject_unknown(d: dict, allowed: set, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)} (allowed: {sorted(allowed)})")


def load_config(path: str | None, command: str) -> dict:
    if path is None:
        cfg = {}
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            cfg = yaml.safe_load(p.read_text())
        except yaml.YAMLError as err:
            raise ConfigError(f"{path}: not valid YAML ({err})") from None
        cfg = {} if cfg is None else cfg
    _reject_unknown(cfg, TOP_KEYS[command], "config")
    return cfg


def _num(d: dict, key: str, default=None, kind=float, positive=False):
    v = d.get(key, default)
    if v is None:
        raise ConfigError(f"curve: missing required key {key!r}")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"curve: {key} must be a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"curve: {key} must be an integer")
    v = kind(v)
    if not math.isfinite(v) or (positive and not v > 0):
        raise ConfigError(f"curve: {key} must be {'positive' if positive else 'finite'}, got {v}")
    return v


def build_curve(desc: dict | None) -> ag.GeneratingCurve:
    """Builtin shape or CSV file (with optional adaptive resampling)."""
    if desc is None:
        raise ConfigError("config needs a 'curve' section")
    if not isinstance(desc, dict):
        raise ConfigError("curve: expected a mapping")
    desc = dict(desc)
    res = desc.pop("resample", None)
    if "file" in desc:
        _reject_unknown(desc, {"file", "n"}, "curve")
        n = desc.get("n")
        curve = ag.read_curve(desc["file"], None if n is None else _num(desc, "n", kind=int))
    else:
        shape = desc.pop("shape", None)
        if shape not in SHAPES:
            raise ConfigError(f"curve: shape must be one of {sorted(SHAPES)} or 'file' must be given")
        _reject_unknown(desc, SHAPES[shape], f"curve ({shape})")
        n = _num(desc, "n", 3, int)
        h = _num(desc, "h", 0.05, positive=True)
        if shape == "sphere":
            curve = ag.sphere(n, _num(desc, "radius", 1.0, positive=True), h, _num(desc, "center", 0.0))
        elif shape == "cylinder":
            curve = ag.cylinder(n, _num(desc, "radius", 1.0, positive=True),
                                _num(desc, "half_length", 10.0, positive=True), h)
        elif shape == "capsule":
            curve = ag.capsule(n, _num(desc, "radius", 1.0, positive=True),
                               _num(desc, "cyl_half_length", 5.0), h)
        elif shape == "capped_cylinder":
            curve = ag.capped_cylinder(n, _num(desc, "radius", 1.0, positive=True),
                                       _num(desc, "length", 10.0, positive=True), h)
        else:
            margin = desc.get("margin")
            prof = ag.build_profile_eta_k(_num(desc, "m", 8, int), _num(desc, "k", 3, int),
                                          _num(desc, "W", 0.25, positive=True),
                                          _num(desc, "R0", 0.25, positive=True), h=h,
                                          margin=None if margin is None else _num(desc, "margin"), n=n)
            closed = desc.get("closed", True)
            if not isinstance(closed, bool):
                raise ConfigError("curve: closed must be true or false")
            curve = ag.close_with_caps(prof) if closed else prof
    if res is not None:
        _reject_unknown(res, RESAMPLE_KEYS, "curve.resample")
        curve = ag.resample_adaptive(curve, h_max=_num(res, "h_max", positive=True),
                                     resolution=_num(res, "resolution", 0.25, positive=True),
                                     ratio=_num(res, "ratio", 10.0, positive=True))
    return curve


def _section(cfg: dict, key: str, cls, where: str | None = None):
    d = cfg.get(key) or {}
    if not isinstance(d, dict):
        raise ConfigError(f"{where or key}: expected a mapping")
    try:
        return cls.from_dict(d)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where or key}: {err}") from None


def _stop(cfg: dict) -> fl.Stop:
    d = cfg.get("stop")
    if d is None:
        return fl.Stop(extinction=True)
    _reject_unknown(d, {f.name for f in fields(fl.Stop)} - {"exempt"}, "stop")
    try:
        return fl.Stop(**d)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"stop: {err}") from None


# ----------------------------------------------------------------------
# output helpers
# ----------------------------------------------------------------------
def _g(v) -> str:
    """Numbers at 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_g(v) for v in row])
    return path


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(su._plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def _svg_title(text: str) -> str:
    return f"{text} (entroflow {__version__})"


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------
def cmd_entropy(cfg: dict, out: Path, only=None) -> int:
    curve = build_curve(cfg.get("curve"))
    search = _section(cfg, "search", SearchConfig)
    heat = cfg.get("heatmap", False)
    if not isinstance(heat, bool):
        raise ConfigError("heatmap must be true or false")
    if heat:
        search = SearchConfig.from_dict({**asdict(search), "keep_grid": True})
    res = entropy(curve, search)
    rec = res.as_record()
    rec["nodes"] = curve.size
    rec["ambient_dim"] = curve.n
    write_json(out / "entropy_report.json", rec)
    write_csv(out / "entropy.csv", ["value", "b", "rho0", "r", "error_bar", "evaluations"],
              [[res.value, res.argmax.b, res.argmax.rho0, res.argmax.r, res.error_bar, res.evaluations]])
    if heat and res.grid is not None:
        rows = [[b, rho, math.log(r), F] for b, rho, r, F in res.grid.tolist()]
        write_csv(out / "heatmap.csv", ["b", "rho0", "log_r", "F"], rows)
    print(f"entropy {res.value:.12f} at b={res.argmax.b:.6g} rho0={res.argmax.rho0:.6g} r={res.argmax.r:.6g}")
    return EXIT_OK


def _write_snapshots(run: fl.FlowRun, out: Path, svg: bool):
    snap = out / "snapshots"
    snap.mkdir(parents=True, exist_ok=True)
    for i, st in enumerate(run.states):
        for c in st.components:
            ag.write_curve(c, snap / f"snap_{i:04d}_c{c.component_id}.csv")
        if svg and st.components:
            fl.write_svg(st.components, snap / f"snap_{i:04d}.svg", title=_svg_title(f"t = {st.t:.6g}"))


def cmd_flow(cfg: dict, out: Path, only=None) -> int:
    curve = build_curve(cfg.get("curve"))
    ctrl = _section(cfg, "control", fl.StepControl)
    stop = _stop(cfg)
    want_ent = cfg.get("entropy", False)
    snaps = cfg.get("snapshots", {}) or {}
    _reject_unknown(snaps, {"csv", "svg"}, "snapshots")
    if not isinstance(want_ent, bool):
        raise ConfigError("entropy must be true or false")
    try:
        run = fl.run_until(curve, stop, ctrl)
    except fl.FlowError as err:
        if err.state is not None:
            fl.write_svg(err.state.components, out / "last_good.svg", title=_svg_title("last good state"))
        raise
    ents = fl.entropy_series(run) if want_ent else None
    fl.write_run_log(run, out / "run_log.csv", ents)
    if snaps.get("csv", True) or snaps.get("svg", True):
        _write_snapshots(run, out, bool(snaps.get("svg", True)))
    summary = {"final_t": run.final.t, "states": len(run.states), "extinction_time": fl.extinction_time(run),
               "events": [{"t": e.t, "kinds": e.kinds(), "info": e.info} for e in run.events if e.kind != "regrid"],
               "trigger": run.trigger}
    write_json(out / "summary.json", summary)
    ext = summary["extinction_time"]
    print(f"flow finished at t = {run.final.t:.10g}; "
          + (f"extinction at {ext:.10g}" if ext is not None else f"{len(run.final.components)} component(s) left"))
    return EXIT_OK


def cmd_surgery(cfg: dict, out: Path, only=None) -> int:
    curve = build_curve(cfg.get("curve"))
    params = _section(cfg, "params", su.SurgeryParams)
    ctrl = _section(cfg, "control", fl.StepControl)
    audit = _section(cfg, "audit", su.AuditConfig)
    capd = cfg.get("cap") or {}
    _reject_unknown(capd, {"epsilon", "R_tilde", "config"}, "cap")
    capcfg = _section(capd, "config", su.CapConfig, "cap.config")
    max_s = cfg.get("max_surgeries", 100)
    if isinstance(max_s, bool) or not isinstance(max_s, int) or max_s < 1:
        raise ConfigError("max_surgeries must be a positive integer")
    t_max = cfg.get("t_max")
    check = cfg.get("check_entropy", True)
    cap = su.build_cap(curve.n, capd.get("epsilon", 0.05), capd.get("R_tilde", 10.0), capcfg)
    try:
        run = su.surgery_flow(curve, params, ctrl, cap=cap, audit_cfg=audit, max_surgeries=max_s,
                              t_max=t_max, check_entropy=check)
    except su.SurgeryError as err:
        if err.run is not None:
            fl.write_run_log(err.run, out / "run_log.csv")
            su.write_event_log(err.run, out / "events")
        if err.event is not None:
            write_json(out / "failed_event.json", err.event.as_record())
        if err.diagnostics:
            write_json(out / "diagnostics.json", {"diagnostics": err.diagnostics})
        raise
    fl.write_run_log(run, out / "run_log.csv")
    su.write_event_log(run, out / "events")
    fl.write_svg(run.states[0].components, out / "initial.svg", title=_svg_title("initial"))
    for i, ev in enumerate(run.surgeries):
        fl.write_svg(ev.post_curves, out / "events" / f"event_{i:03d}.svg",
                     title=_svg_title(f"surgery {i} at t = {ev.time:.6g}"))
    write_csv(out / "surgeries.csv",
              ["index", "t", "center_axial", "radius", "delta_score", "valid", "small_scale_max_F",
               "large_scale_max_increase", "volume_ratio_eta", "audit_pass"],
              [[i, ev.time, ev.neck.center_axial, ev.neck.radius, ev.neck.delta_score, ev.valid,
                ev.audit.small_scale_max_F, ev.audit.large_scale_max_increase, ev.audit.volume_ratio_eta,
                ev.audit.verdict] for i, ev in enumerate(run.surgeries)])
    print(f"{len(run.surgeries)} surgeries; all audits pass: {all(ev.audit.verdict for ev in run.surgeries)}")
    return EXIT_OK


def cmd_cap(cfg: dict, out: Path, only=None) -> int:
    n = cfg.get("n", 3)
    if isinstance(n, bool) or not isinstance(n, int) or n < 3:
        raise ConfigError("n must be an integer >= 3")
    capcfg = _section(cfg, "config", su.CapConfig)
    try:
        cap = su.build_cap(n, cfg.get("epsilon", 0.05), cfg.get("R_tilde", 10.0), capcfg)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    ag.write_curve(cap.profile, out / "cap_profile.csv")
    cert = cap.entropy_certificate
    write_json(out / "cap_report.json", {
        "entropy": cert.as_record(), "min_H": cap.min_H, "alpha_bar": cap.alpha_bar,
        "epsilon": cap.epsilon, "R_tilde": cap.R_tilde, "match_annulus": list(cap.match_annulus),
        "derivative_bounds": list(cap.derivative_bounds), "info": cap.info})
    fl.write_svg([cap.profile], out / "cap.svg", title=_svg_title("cap"))
    print(f"cap entropy {cert.value:.12f}, min H {cap.min_H:.6g}, alpha_bar {cap.alpha_bar:.6g}")
    return EXIT_OK


def _values(desc, default, name):
    if desc is None:
        return list(default)
    if isinstance(desc, list):
        vals = desc
    elif isinstance(desc, dict):
        _reject_unknown(desc, {"start", "stop", "num"}, name)
        try:
            vals = np.linspace(desc["start"], desc["stop"], int(desc["num"])).tolist()
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"{name}: needs numeric start, stop, num ({err})") from None
    else:
        raise ConfigError(f"{name}: expected a list or {{start, stop, num}}")
    if not vals or any(isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0 for v in vals):
        raise ConfigError(f"{name}: values must be positive numbers")
    return [float(v) for v in vals]


def cmd_appendix(cfg: dict, out: Path, only=None) -> int:
    from .appendix_oracle import (CappedCylinderParams, cylinder_value, dfda_analytic, dfda_numeric,
                                  f_capped, sign_change)
    from .acceptance import APPENDIX_A, APPENDIX_R

    avals = _values(cfg.get("a"), APPENDIX_A, "a")
    rvals = _values(cfg.get("r"), APPENDIX_R, "r")
    step = cfg.get("step", 1e-5)
    if isinstance(step, bool) or not isinstance(step, (int, float)) or not step > 0:
        raise ConfigError("step must be a positive number")
    rows = []
    for r in rvals:
        for a in avals:
            if not a > step:
                raise ConfigError("every a must exceed the difference step")
            p = CappedCylinderParams(a, r)
            rows.append([a, r, f_capped(p), dfda_analytic(p), dfda_numeric(p, step), cylinder_value(r)])
    write_csv(out / "appendix_grid.csv",
              ["a", "r", "f_capped", "dfda_analytic", "dfda_numeric", "cylinder_value"], rows)
    write_csv(out / "appendix_sign_change.csv", ["r", "a_star"], [[r, sign_change(r)] for r in rvals])
    worst = max(abs(row[3] - row[4]) for row in rows)
    print(f"{len(rows)} grid points; max |analytic - numeric| derivative gap {worst:.3e}")
    return EXIT_OK


def cmd_validate(cfg: dict, out: Path, only=None) -> int:
    from .acceptance import run_suite, select

    only = only if only is not None else cfg.get("only")
    try:
        select(only)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    results = run_suite(only, emit=lambda line: print(line, flush=True))
    write_csv(out / "acceptance.csv", ["criterion", "tag", "passed", "summary"],
              [[r.number, r.tag, r.passed, r.summary] for r in results])
    bad = [r for r in results if not r.passed]
    print(f"{len(results) - len(bad)}/{len(results)} criteria passed")
    return EXIT_OK if not bad else EXIT_NUMERIC


COMMANDS = {"entropy": cmd_entropy, "flow": cmd_flow, "surgery": cmd_surgery, "cap": cmd_cap,
            "appendix": cmd_appendix, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="entroflow", description="Entropy, flow and surgery for hypersurfaces "
                                                               "of revolution.")
    ap.add_argument("--version", action="version", version=f"entroflow {__version__}")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML config file (optional for appendix/validate/cap)")
    ap.add_argument("--only", help="acceptance tag(s) to run, comma separated (validate only)")
    ap.add_argument("--out", help="output directory (default ./entroflow_out/<command>)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.only is not None and args.command != "validate":
            raise ConfigError("--only applies to the validate command")
        cfg = load_config(args.config, args.command)
        out = Path(args.out) if args.out else Path("entroflow_out") / args.command
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args.only)
    except (ConfigError, CurveError) as err:
        print(f"entroflow: invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID
    except su.SurgeryError as err:
        print(f"entroflow: surgery failed: {err}", file=sys.stderr)
        for d in (err.diagnostics or [])[:10]:
            print(f"  {d}", file=sys.stderr)
        return EXIT_NUMERIC
    except (fl.FlowError, su.CapError, QuadratureError, ArithmeticError, FloatingPointError) as err:
        print(f"entroflow: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        # remaining precondition checks in the library raise ValueError
        print(f"entroflow: invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
