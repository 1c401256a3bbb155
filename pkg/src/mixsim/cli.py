"""Command-line driver: presets, INI configs and CSV output.

Config files are INI style with an ``[experiment]`` section and an optional
``[mixture]`` section for the grouping parameters::

    [experiment]
    name = fig3b-4
    kind = outage
    N = 4
    K = 4
    schemes = mixture, zf
    snr = 0:2:30
    trials = 1000000

    [mixture]
    method = algorithm1
    theta_th = 0.9
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import CsiModel, InvalidConfigError
from .grouping import GroupingConfig
from .montecarlo import SCHEMES, ExperimentConfig, simulate, wilson_interval
from .transceiver import saturation_caps

KINDS = ("outage", "histogram", "sum_rate", "csi_floor")

EXPERIMENT_KEYS = {
    "name", "kind", "n", "k", "schemes", "snr", "trials", "seed", "r_th", "c",
    "delta_mode", "fixed_deltas_2", "fixed_deltas_3", "csi_mode", "sigma_e2",
    "beam_restarts", "beam_iters", "block_size",
}
MIXTURE_KEYS = {"method", "theta_th", "theta_tau1", "theta_tau2"}

OUTAGE_COLUMNS = ["snr_db", "user_rank", "outage", "ci_lo", "ci_hi", "events", "trials"]
HISTOGRAM_COLUMNS = ["bin_lo", "bin_hi", "count", "scheme"]
SUM_RATE_COLUMNS = ["snr_db", "mean", "stderr", "trials"]


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration, naming the key."""


@dataclass(frozen=True)
class RunSpec:
    """An experiment config plus the kind of output to produce."""
    config: ExperimentConfig
    kind: str = "outage"


def _preset_table() -> dict[str, dict]:
    base = {"R_th": 1.5, "grouping": GroupingConfig("algorithm1", 0.9)}
    fixed = dict(base, delta_mode="fixed")
    sol = dict(base, delta_mode="solution", C=2.0)
    return {
        "fig2a": ("outage", dict(fixed, N=3, K=2, schemes=("mixture",),
                                 snr_db=_grid(0, 2, 20), trials=1_000_000)),
        "fig2b": ("outage", dict(fixed, N=3, K=3, schemes=("mixture",),
                                 snr_db=_grid(0, 2, 20), trials=1_000_000)),
        "fig3a": ("outage", dict(fixed, N=4, K=3, schemes=("mixture", "zf"),
                                 snr_db=_grid(0, 2, 24), trials=1_000_000)),
        "fig3b-4": ("outage", dict(sol, N=4, K=4, schemes=("mixture", "zf"),
                                   snr_db=_grid(0, 2, 30), trials=1_000_000)),
        "fig3b-8": ("outage", dict(sol, N=8, K=8, schemes=("mixture", "zf"),
                                   snr_db=_grid(0, 2, 30), trials=200_000)),
        "fig4": ("histogram", dict(sol, N=4, K=4, schemes=("mixture", "zf"),
                                   snr_db=(10.0, 15.0, 20.0, 40.0, 60.0),
                                   trials=100_000)),
        "fig5": ("sum_rate", dict(sol, N=4, K=4,
                                  schemes=("mixture", "zf", "single_group"),
                                  snr_db=_grid(0, 5, 60), trials=20_000,
                                  beam_restarts=20, beam_iters=200)),
        "fig9": ("csi_floor", dict(sol, N=4, K=4, schemes=("mixture",),
                                   snr_db=_grid(0, 5, 40), trials=200_000,
                                   csi=CsiModel("fixed", 0.1))),
        "fig10": ("outage", dict(sol, N=4, K=4, schemes=("mixture", "zf"),
                                 grouping=GroupingConfig("sus", theta_tau1=0.25,
                                                         theta_tau2=0.55),
                                 snr_db=_grid(0, 2, 30), trials=200_000)),
    }


def _grid(lo: float, step: float, hi: float) -> tuple[float, ...]:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(float(round(lo + i * step, 12)) for i in range(n))


PRESETS = tuple(_preset_table())


def preset(name: str) -> RunSpec:
    table = _preset_table()
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(table)}")
    kind, kw = table[name]
    return RunSpec(ExperimentConfig(name=name, **kw), kind)


def parse_grid(text: str) -> tuple[float, ...]:
    """``lo:step:hi`` in dB, inclusive, or a comma-separated list."""
    try:
        if ":" in text:
            lo, step, hi = (float(x) for x in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            return _grid(lo, step, hi)
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"snr: malformed grid {text!r}, expected lo:step:hi") from None


def _fmt_grid(g) -> str:
    return ", ".join(repr(float(x)) for x in g)


def _tuple(text: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None


def _apply(values: dict[str, str], spec: RunSpec) -> RunSpec:
    """Overlay string values (INI keys, lowercase) onto ``spec``."""
    cfg = spec.config
    kind = spec.kind
    kw = {}
    g = cfg.grouping
    gkw = {}
    csi_mode, sigma = cfg.csi.mode, cfg.csi.sigma_e2
    conv = {
        "name": ("name", str), "n": ("N", int), "k": ("K", int),
        "trials": ("trials", int), "seed": ("seed", int), "r_th": ("R_th", float),
        "c": ("C", float), "delta_mode": ("delta_mode", str),
        "beam_restarts": ("beam_restarts", int), "beam_iters": ("beam_iters", int),
        "block_size": ("block_size", int),
    }
    for key, raw in values.items():
        raw = raw.strip()
        try:
            if key in conv:
                field_name, fn = conv[key]
                kw[field_name] = fn(raw)
            elif key == "kind":
                if raw not in KINDS:
                    raise ConfigError(f"kind: must be one of {KINDS}, got {raw!r}")
                kind = raw
            elif key == "schemes":
                kw["schemes"] = tuple(s.strip() for s in raw.split(",") if s.strip())
            elif key == "snr":
                kw["snr_db"] = parse_grid(raw)
            elif key in ("fixed_deltas_2", "fixed_deltas_3"):
                kw[key] = _tuple(raw, key)
            elif key == "csi_mode":
                csi_mode = raw
            elif key == "sigma_e2":
                sigma = float(raw)
            elif key == "method":
                gkw["method"] = raw
            elif key in ("theta_th", "theta_tau1", "theta_tau2"):
                gkw[key] = float(raw)
            else:
                raise ConfigError(f"{key}: unknown configuration key")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{key}: cannot parse value {raw!r}") from None
    try:
        if csi_mode == "perfect":
            sigma = 0.0
        kw["csi"] = CsiModel(csi_mode, sigma)
        kw["grouping"] = GroupingConfig(**{
            "method": g.method, "theta_th": g.theta_th,
            "theta_tau1": g.theta_tau1, "theta_tau2": g.theta_tau2, **gkw})
        cfg = replace(cfg, **kw)
    except InvalidConfigError as exc:
        raise ConfigError(str(exc)) from None
    return RunSpec(cfg, kind)


def read_config_text(text: str, base: RunSpec | None = None) -> RunSpec:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {}
    for section in cp.sections():
        allowed = {"experiment": EXPERIMENT_KEYS, "mixture": MIXTURE_KEYS}.get(section)
        if allowed is None:
            raise ConfigError(f"[{section}]: unknown section")
        for key, val in cp.items(section):
            if key not in allowed:
                raise ConfigError(f"{key}: unknown key in [{section}]")
            values[key] = val
    return _apply(values, base or RunSpec(ExperimentConfig()))


def serialize_config(spec: RunSpec) -> str:
    """INI text that parses back to an equal ``RunSpec``."""
    c = spec.config
    g = c.grouping
    lines = [
        "[experiment]",
        f"name = {c.name}",
        f"kind = {spec.kind}",
        f"N = {c.N}",
        f"K = {c.K}",
        f"schemes = {', '.join(c.schemes)}",
        f"snr = {_fmt_grid(c.snr_db)}",
        f"trials = {c.trials}",
        f"seed = {c.seed}",
        f"R_th = {c.R_th!r}",
        f"C = {c.C!r}",
        f"delta_mode = {c.delta_mode}",
        f"fixed_deltas_2 = {_fmt_grid(c.fixed_deltas_2)}",
        f"fixed_deltas_3 = {_fmt_grid(c.fixed_deltas_3)}",
        f"csi_mode = {c.csi.mode}",
        f"sigma_e2 = {c.csi.sigma_e2!r}",
        f"beam_restarts = {c.beam_restarts}",
        f"beam_iters = {c.beam_iters}",
        f"block_size = {c.block_size}",
        "",
        "[mixture]",
        f"method = {g.method}",
        f"theta_th = {g.theta_th!r}",
        f"theta_tau1 = {g.theta_tau1!r}",
        f"theta_tau2 = {g.theta_tau2!r}",
        "",
    ]
    return "\n".join(lines)


def fmt_value(v) -> str:
    if isinstance(v, (float, np.floating)):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(float(v), ".17g")
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def emit_csv(records, columns, path) -> None:
    """Write records (mappings keyed by column) as CSV with LF endings."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        missing = [c for c in columns if c not in rec]
        if missing:
            raise ValueError(f"record lacks column(s) {missing}")
        w.writerow([fmt_value(rec[c]) for c in columns])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def outage_records(curve):
    """Rows per (snr, rank); rank 0 is the any-user outage."""
    K = curve.events.shape[1]
    for s, snr in enumerate(curve.snr_db):
        for k in range(K + 1):
            ev = curve.overall_events[s] if k == 0 else curve.events[s, k - 1]
            lo, hi = wilson_interval(ev, curve.trials)
            yield {"snr_db": float(snr), "user_rank": k,
                   "outage": ev / curve.trials, "ci_lo": float(lo), "ci_hi": float(hi),
                   "events": int(ev), "trials": curve.trials}


def paired(records_by_scheme: dict[str, list[dict]], keys, columns):
    """Join per-scheme rows on ``keys`` into ``column_scheme`` columns."""
    schemes = list(records_by_scheme)
    cols = list(keys) + [f"{c}_{s}" for s in schemes for c in columns]
    rows = []
    for recs in zip(*records_by_scheme.values()):
        row = {k: recs[0][k] for k in keys}
        for s, r in zip(schemes, recs):
            for c in columns:
                row[f"{c}_{s}"] = r[c]
        rows.append(row)
    return rows, cols


def _outputs(spec: RunSpec, out_dir: Path, workers: int | None) -> list[Path]:
    cfg = spec.config
    stem = cfg.name
    paths = []
    if spec.kind == "csi_floor":
        modes = {"fixed": cfg.csi if cfg.csi.mode == "fixed" else CsiModel("fixed", 0.1),
                 "power_scaled": CsiModel("power_scaled")}
        recs = {}
        for mode, csi in modes.items():
            res = simulate(replace(cfg, csi=csi), workers)
            recs[mode] = list(outage_records(res.outage[cfg.schemes[0]]))
        rows, cols = paired(recs, ["snr_db", "user_rank"], OUTAGE_COLUMNS[2:])
        paths.append(out_dir / f"{stem}_outage.csv")
        emit_csv(rows, cols, paths[-1])
        return paths
    res = simulate(replace(cfg, histogram=spec.kind == "histogram"), workers)
    if spec.kind == "outage":
        recs = {s: list(outage_records(res.outage[s])) for s in cfg.schemes}
        if len(recs) == 1:
            rows, cols = next(iter(recs.values())), OUTAGE_COLUMNS
        else:
            rows, cols = paired(recs, ["snr_db", "user_rank"], OUTAGE_COLUMNS[2:])
        paths.append(out_dir / f"{stem}_outage.csv")
        emit_csv(rows, cols, paths[-1])
    elif spec.kind == "sum_rate":
        recs = {s: [{"snr_db": float(x), "mean": float(m), "stderr": float(e),
                     "trials": cfg.trials}
                    for x, m, e in zip(c.snr_db, c.mean, c.stderr)]
                for s, c in res.sum_rate.items()}
        rows, cols = paired(recs, ["snr_db"], SUM_RATE_COLUMNS[1:])
        paths.append(out_dir / f"{stem}_sum_rate.csv")
        emit_csv(rows, cols, paths[-1])
    else:
        edges = res.hist_edges
        cap = saturation_caps(cfg.delta_table()[cfg.K, :cfg.K])[-1] if cfg.K > 1 else math.inf
        summary = []
        for s_i, snr in enumerate(cfg.snr_db):
            rows = []
            for s in cfg.schemes:
                counts = res.histograms[s][s_i]
                rows += [{"bin_lo": float(edges[i]), "bin_hi": float(edges[i + 1]),
                          "count": int(counts[i]), "scheme": s}
                         for i in range(counts.size)]
                n = cfg.trials * cfg.K
                summary.append({"snr_db": float(snr), "scheme": s,
                                "below_rth": res.outage[s].events[s_i].sum() / n,
                                "near_cap": res.near_cap[s][s_i] / n, "cap": cap})
            paths.append(out_dir / f"{stem}_hist_{fmt_value(float(snr))}dB.csv")
            emit_csv(rows, HISTOGRAM_COLUMNS, paths[-1])
        paths.append(out_dir / f"{stem}_hist_summary.csv")
        emit_csv(summary, ["snr_db", "scheme", "below_rth", "near_cap", "cap"], paths[-1])
    return paths


def run_experiment(spec: RunSpec, out_dir, workers: int | None = None) -> dict:
    """Run, write CSVs and a manifest; remove partial output on failure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    written: list[Path] = []
    manifest_path = out_dir / f"{spec.config.name}_manifest.txt"
    try:
        written = _outputs(spec, out_dir, workers)
        manifest = {
            "version": __version__,
            "seed": spec.config.seed,
            "started": started,
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "outputs": ",".join(str(p) for p in written),
            "config": serialize_config(spec).replace("\n", "\\n"),
        }
        with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
            for k, v in manifest.items():
                fh.write(f"{k} = {v}\n")
    except BaseException:
        for p in list(out_dir.glob(f"{spec.config.name}_*.csv")) + [manifest_path]:
            if p.exists():
                p.unlink()
        raise
    manifest["manifest"] = str(manifest_path)
    return manifest


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        k, _, v = line.partition(" = ")
        out[k] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mixsim",
        description="Monte Carlo simulator for the mixture broadcast transceiver.")
    p.add_argument("--preset", choices=PRESETS, help="built-in experiment")
    p.add_argument("--config", help="INI config file (applied after the preset)")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--snr", help="SNR grid lo:step:hi in dB")
    p.add_argument("--scheme", help=f"comma list from {', '.join(SCHEMES)}")
    p.add_argument("--theta-th", type=float, dest="theta_th")
    p.add_argument("--rth", type=float)
    p.add_argument("--cmargin", type=float, help="margin C of the power split")
    p.add_argument("--N", type=int, dest="n")
    p.add_argument("--K", type=int, dest="k")
    p.add_argument("--out-dir", default="results")
    p.add_argument("--workers", type=int,
                   help="worker processes (default: MIXSIM_WORKERS or 1)")
    return p


def parse_config(argv) -> RunSpec:
    """Resolve preset, config file and flags (flags win) into a RunSpec."""
    args = build_parser().parse_args(argv)
    return _spec_from_args(args)


def _spec_from_args(args) -> RunSpec:
    if not args.preset and not args.config:
        raise ConfigError("give --preset or --config")
    spec = preset(args.preset) if args.preset else RunSpec(ExperimentConfig())
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}") from None
        spec = read_config_text(text, spec)
    flags = {"seed": args.seed, "trials": args.trials, "snr": args.snr,
             "schemes": args.scheme, "theta_th": args.theta_th, "r_th": args.rth,
             "c": args.cmargin, "n": args.n, "k": args.k}
    values = {k: str(v) for k, v in flags.items() if v is not None}
    return _apply(values, spec)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = _spec_from_args(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"mixsim: error: {exc}", file=sys.stderr)
        return 2
    try:
        manifest = run_experiment(spec, args.out_dir, args.workers)
    except OSError as exc:
        print(f"mixsim: I/O error: {exc}", file=sys.stderr)
        return 1
    for p in manifest["outputs"].split(","):
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
