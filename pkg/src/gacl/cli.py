"""Command-line entry point.

    gacl simulate [--difficulty easy] [--generations 50]
    gacl train [--task linear]
    gacl experiment NAME
    gacl bench
    gacl plot CSV [--x step --y a,b] [--band]
    gacl all

Parameters come from an optional JSON file of flat dotted keys
(``{"colony.rho_gen": 0.2, "replicates": 5}``) and repeated ``--set key=value``
flags, which win over the file. Unknown keys are a usage error (exit 2).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence
from xml.sax.saxutils import escape

import numpy as np

from . import harness
from .colony import ColonyConfig, run_gacl
from .envtask import SyntheticTask, make_site_task, make_synthetic
from .errors import GaclError
from .harness import EXPERIMENTS, ExperimentSpec, atomic_write
from .neural import TrainConfig, mlp_init, train

COMMANDS = ("simulate", "train", "experiment", "bench", "plot", "all")

SIMULATE_KEYS = {"difficulty": "easy", "generations": 50, "obs_sigma": 0.05}
TRAIN_KEYS = {"task": "linear", "hidden": 16, "n_points": 200, "noise": 0.0}


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    command: str
    experiment_name: str | None = None
    seed: int = 42
    out_dir: Path = Path("out")
    config_file: Path | None = None
    overrides: dict[str, Any] = field(default_factory=dict)
    # plot only
    csv_path: Path | None = None
    x_col: str = "step"
    y_cols: tuple[str, ...] = ()
    band: bool = False


EPILOG = "experiments:\n" + "\n".join(f"  {name}" for name in EXPERIMENTS)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42, help="master seed (default 42)")
    common.add_argument("--out", default=None, help="output directory (default ./out, or $GACL_OUT)")
    common.add_argument("--config", default=None, help="JSON file of flat dotted keys")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override one key"
    )
    p = argparse.ArgumentParser(
        prog="gacl",
        description="Generational ant colony learning and its neural-network counterpart.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("simulate", parents=[common], help="run one colony and write its trajectory")
    sub.add_parser("train", parents=[common], help="train one network and write its learning curve")
    e = sub.add_parser(
        "experiment",
        parents=[common],
        help="run one experiment",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    e.add_argument("name", choices=EXPERIMENTS, metavar="NAME", help="experiment to run (listed below)")
    sub.add_parser("bench", parents=[common], help="classification benchmark on all five datasets")
    pl = sub.add_parser("plot", parents=[common], help="render a CSV as an SVG line chart")
    pl.add_argument("csv", help="experiment CSV or a wide CSV")
    pl.add_argument("--x", default="step", help="x column (default step)")
    pl.add_argument("--y", default="", help="comma-separated y columns (default: all but x)")
    pl.add_argument("--band", action="store_true", help="shade +/- SE using <col>_se columns")
    sub.add_parser("all", parents=[common], help="run every experiment in turn")
    return p


def _split_override(item: str) -> tuple[str, str]:
    key, sep, value = item.partition("=")
    if not sep or not key:
        raise UsageError(f"override must look like key=value, got {item!r}")
    return key.strip(), value.strip()


def _allowed_keys(command: str, name: str | None) -> set[str]:
    keys = {"replicates"}
    if command == "simulate":
        return set(SIMULATE_KEYS) | {k for k in harness.known_keys("iso-curve") if k.startswith("colony.")}
    if command == "train":
        return set(TRAIN_KEYS) | {k for k in harness.known_keys("iso-curve") if k.startswith("train.")}
    if command == "experiment":
        return keys | set(harness.known_keys(name))
    if command == "bench":
        return keys | set(harness.known_keys("benchmark"))
    if command == "all":
        for n in EXPERIMENTS:
            keys |= set(harness.known_keys(n))
        return keys
    return set()


def parse_args(argv: Sequence[str] | None = None) -> CliConfig:
    """Strict parse. Raises SystemExit(2) with a message on any usage error."""
    parser = _parser()
    ns = parser.parse_args(argv)
    try:
        overrides: dict[str, Any] = {}
        if ns.config:
            try:
                loaded = json.loads(Path(ns.config).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {ns.config}: {exc}") from None
            if not isinstance(loaded, dict):
                raise UsageError(f"config {ns.config} must hold a JSON object")
            overrides.update(loaded)
        for item in ns.overrides:
            k, v = _split_override(item)
            overrides[k] = v
        name = getattr(ns, "name", None)
        allowed = _allowed_keys(ns.command, name)
        for key in overrides:
            if key not in allowed:
                raise UsageError(f"unknown key {key!r} for command {ns.command}")
        if ns.seed < 0:
            raise UsageError("--seed must be >= 0")
    except UsageError as exc:
        parser.error(str(exc))
    out = ns.out or os.environ.get("GACL_OUT") or "out"
    cfg = CliConfig(
        command=ns.command,
        experiment_name=name,
        seed=ns.seed,
        out_dir=Path(out),
        config_file=Path(ns.config) if ns.config else None,
        overrides=overrides,
    )
    if ns.command == "plot":
        cfg.csv_path = Path(ns.csv)
        cfg.x_col = ns.x
        cfg.y_cols = tuple(c for c in ns.y.split(",") if c)
        cfg.band = ns.band
    return cfg


# ---------------------------------------------------------------------------
# commands


def _spec(name: str, cfg: CliConfig) -> ExperimentSpec:
    known = set(harness.known_keys(name))
    over = {k: v for k, v in cfg.overrides.items() if k in known}
    reps = cfg.overrides.get("replicates")
    return ExperimentSpec(name, int(reps) if reps is not None else None, cfg.seed, over)


def _run_experiment(name: str, cfg: CliConfig) -> harness.ExperimentResult:
    res = harness.run_experiment(_spec(name, cfg))
    path = harness.write_result(res, cfg.out_dir)
    verdict = "pass" if res.passed else "FAIL"
    print(f"{name}: {verdict} ({res.metadata['wall_time_s']:.1f}s) -> {path}")
    return res


def _pick(overrides: dict[str, Any], defaults: dict[str, Any]) -> dict[str, Any]:
    return {k: harness.coerce_value(k, overrides.get(k, v), v) for k, v in defaults.items()}


def _prefixed(overrides: dict[str, Any], prefix: str, base) -> dict[str, Any]:
    out = {}
    for k, v in overrides.items():
        if k.startswith(prefix):
            f = k[len(prefix) :]
            out[f] = harness.coerce_value(k, v, getattr(base, f))
    return out


def cmd_simulate(cfg: CliConfig) -> int:
    p = _pick(cfg.overrides, SIMULATE_KEYS)
    base = ColonyConfig()
    colony = base.replace(**_prefixed(cfg.overrides, "colony.", base))
    task = make_site_task(p["difficulty"])
    traj = run_gacl(task.environment(p["obs_sigma"]), colony, p["generations"], np.random.default_rng(cfg.seed))
    k = len(task.qualities)
    rows = [["generation", "fitness", "true_fitness", *(f"tau_{j}" for j in range(k))]]
    for g, (_, out) in enumerate(traj, start=1):
        rows.append([g, out.fitness, out.true_fitness, *out.tau_end])
    path = atomic_write(cfg.out_dir / "simulate.csv", _csv(rows))
    print(f"simulate: {p['generations']} generations -> {path}")
    return 0


def cmd_train(cfg: CliConfig) -> int:
    p = _pick(cfg.overrides, TRAIN_KEYS)
    base = TrainConfig(seed=cfg.seed)
    tc = base.replace(**_prefixed(cfg.overrides, "train.", base))
    rng = np.random.default_rng(tc.seed)
    task = SyntheticTask(p["task"], p["n_points"], p["noise"])
    x, y = make_synthetic(task, rng)
    xv, yv = make_synthetic(task, rng)
    net = mlp_init((2, p["hidden"], 2), None, rng)
    _, recs = train(net, (x, y), tc, rng, val=(xv, yv))
    rows = [["epoch", "loss", "accuracy", "grad_norm", "val_accuracy"]]
    rows += [[r.epoch, r.loss, r.accuracy, r.grad_norm, r.val_accuracy] for r in recs]
    path = atomic_write(cfg.out_dir / "train.csv", _csv(rows))
    print(f"train: {tc.epochs} epochs, final val accuracy {recs[-1].val_accuracy:.3f} -> {path}")
    return 0


def cmd_bench(cfg: CliConfig) -> int:
    res = _run_experiment("benchmark", cfg)
    table = res.metrics["table"]
    print(f"{'dataset':<11} {'MLP':>15} {'GACL':>15} {'Colony-Net':>15}")
    for name, row in table.items():
        cells = [f"{row[s][0]:.3f} ± {row[s][1]:.3f}" for s in ("mlp", "gacl", "colony-net")]
        print(f"{name:<11} " + " ".join(f"{c:>15}" for c in cells))
    avg = res.metrics["column_means"]
    print(f"{'average':<11} " + " ".join(f"{avg[s]:>15.3f}" for s in ("mlp", "gacl", "colony-net")))
    return 0


def cmd_plot(cfg: CliConfig) -> int:
    src = cfg.csv_path
    with open(src, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    if tuple(header) == harness.CSV_HEADER:
        wide = cfg.out_dir / f"{src.stem}-wide.csv"
        cols = long_to_wide(src, wide)
        src = wide
        y = list(cfg.y_cols) or cols
    else:
        y = list(cfg.y_cols) or [c for c in header if c != cfg.x_col and not c.endswith("_se")]
    out = emit_svg(src, cfg.x_col, y, cfg.out_dir / f"{cfg.csv_path.stem}.svg", band=cfg.band)
    print(f"plot: {out}")
    return 0


def run(cfg: CliConfig) -> int:
    """Dispatch; 0 on success, 1 on any experiment or I/O error."""
    try:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {cfg.out_dir}: {exc}", file=sys.stderr)
        return 1
    try:
        if cfg.command == "simulate":
            return cmd_simulate(cfg)
        if cfg.command == "train":
            return cmd_train(cfg)
        if cfg.command == "experiment":
            _run_experiment(cfg.experiment_name, cfg)
            return 0
        if cfg.command == "bench":
            return cmd_bench(cfg)
        if cfg.command == "plot":
            return cmd_plot(cfg)
        if cfg.command == "all":
            status = 0
            for name in EXPERIMENTS:
                try:
                    _run_experiment(name, cfg)
                except (GaclError, ArithmeticError, ValueError) as exc:
                    print(f"{name}: error: {exc}", file=sys.stderr)
                    status = 1
            return status
    except OSError as exc:
        where = f" {exc.filename}" if exc.filename else ""
        print(f"error:{where} {exc.strerror or exc}", file=sys.stderr)
        return 1
    except (GaclError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError(f"unhandled command {cfg.command}")


def main(argv: Sequence[str] | None = None) -> int:
    return run(parse_args(argv))


# ---------------------------------------------------------------------------
# CSV helpers


def _csv(rows) -> str:
    def fmt(v):
        if isinstance(v, str):
            return v
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return format(float(v), ".9g")

    return "".join(",".join(fmt(v) for v in row) + "\n" for row in rows)


def long_to_wide(long_csv: str | os.PathLike, out_path: str | os.PathLike) -> list[str]:
    """Pivot the mean/SE rows of an experiment CSV into one row per step.

    Columns are named ``condition/system/metric`` with a matching ``_se``
    column. Scalar (step-less) metrics are dropped. Returns the value
    column names.
    """
    means: dict[str, dict[int, float]] = {}
    ses: dict[str, dict[int, float]] = {}
    with open(long_csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["step"] == "" or row["replicate"] not in ("mean", "se"):
                continue
            name = f"{row['condition']}/{row['system']}/{row['metric']}"
            target = means if row["replicate"] == "mean" else ses
            target.setdefault(name, {})[int(row["step"])] = float(row["value"])
    cols = list(means)
    steps = sorted({s for m in means.values() for s in m})
    out = [["step", *(c for name in cols for c in (name, f"{name}_se"))]]
    for s in steps:
        line: list[Any] = [s]
        for name in cols:
            line.append(means[name].get(s, math.nan))
            line.append(ses.get(name, {}).get(s, 0.0))
        out.append(line)
    atomic_write(out_path, _csv(out))
    return cols


# ---------------------------------------------------------------------------
# SVG


PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 64, "right": 16, "top": 24, "bottom": 48}


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi == lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def emit_svg(
    csv_path: str | os.PathLike,
    x_col: str,
    y_cols: Sequence[str],
    out_path: str | os.PathLike,
    band: bool = False,
    title: str | None = None,
) -> Path:
    """Render columns of a wide CSV as a standalone SVG line chart.

    One polyline per y column. With ``band=True`` each column ``c`` needs a
    ``c_se`` column, drawn as a translucent +/- SE polygon. Non-finite
    values are skipped.
    """
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    needed = [x_col, *y_cols] + ([f"{c}_se" for c in y_cols] if band else [])
    for col in needed:
        if col not in header:
            raise KeyError(f"column {col!r} not in {csv_path}")
    if not y_cols:
        raise ValueError("no y columns to plot")

    def num(v: str) -> float:
        try:
            return float(v)
        except ValueError:
            return math.nan

    xs = np.array([num(r[x_col]) for r in rows])
    ys = {c: np.array([num(r[c]) for r in rows]) for c in y_cols}
    se = {c: np.array([num(r[f"{c}_se"]) for r in rows]) for c in y_cols} if band else {}

    lo_hi = []
    for c in y_cols:
        lo_hi.append(ys[c] - se[c] if band else ys[c])
        lo_hi.append(ys[c] + se[c] if band else ys[c])
    allv = np.concatenate(lo_hi) if lo_hi else np.array([])
    allv = allv[np.isfinite(allv)]
    xf = xs[np.isfinite(xs)]
    x0, x1 = (float(xf.min()), float(xf.max())) if xf.size else (0.0, 1.0)
    y0, y1 = (float(allv.min()), float(allv.max())) if allv.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v: float) -> float:
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v: float) -> float:
        return MARGIN["top"] + (1.0 - (v - y0) / (y1 - y0)) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    if title:
        parts.append(f'<text x="{WIDTH / 2:.1f}" y="16" text-anchor="middle">{escape(title)}</text>')
    bottom, left = MARGIN["top"] + ph, MARGIN["left"]
    parts.append(
        f'<g stroke="black" fill="none"><line x1="{left}" y1="{bottom}" x2="{left + pw}" y2="{bottom}"/>'
        f'<line x1="{left}" y1="{MARGIN["top"]}" x2="{left}" y2="{bottom}"/></g>'
    )
    for t in _nice_ticks(x0, x1):
        x = sx(t)
        parts.append(f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" y2="{bottom + 4}" stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="{bottom + 16}" text-anchor="middle">{t:g}</text>')
    for t in _nice_ticks(y0, y1):
        y = sy(t)
        parts.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        parts.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{t:g}</text>')
    parts.append(
        f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle">{escape(x_col)}</text>'
    )

    for i, c in enumerate(y_cols):
        color = PALETTE[i % len(PALETTE)]
        ok = np.isfinite(xs) & np.isfinite(ys[c])
        if band:
            ok &= np.isfinite(se[c])
            upper = [f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs[ok], ys[c][ok] + se[c][ok])]
            lower = [f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs[ok], ys[c][ok] - se[c][ok])]
            if upper:
                parts.append(
                    f'<polygon points="{" ".join(upper + lower[::-1])}" fill="{color}" '
                    f'fill-opacity="0.2" stroke="none"/>'
                )
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs[ok], ys[c][ok]))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN["top"] + 8 + 14 * i
        lx = left + pw - 150
        parts.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 22}" y="{ly + 4}">{escape(c)}</text>')
    parts.append("</svg>")
    return atomic_write(out_path, "\n".join(parts) + "\n")


if __name__ == "__main__":
    sys.exit(main())
