"""``w1bench`` command line: gen, solve, eval, plot, report, run."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import benchmark as bm
from . import metrics
from . import solvers as S
from .errors import ConfigError, ConstructionError, DivergenceError, W1BenchError

logger = logging.getLogger("w1bench")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _meta(seed, config) -> dict:
    return {"tool_version": __version__, "seed": int(seed), "config_hash": _hash(config)}


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _threads() -> int:
    raw = os.environ.get("W1BENCH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"W1BENCH_THREADS must be an integer, got {raw!r}") from None


# ----------------------------------------------------------------------- gen


def generate(dim, funnels, box, power, seed, orientation, n_mc, out):
    params = {"dim": dim, "funnels": funnels, "box": box, "power": power, "orientation": orientation}
    pair = bm.generate_pair(dim, funnels, box, power, seed, orientation)
    truth = bm.ground_truth(pair, n_mc)
    d = bm.pair_to_dict(pair)
    d["meta"] = _meta(seed, params)
    d["ground_truth"] = {"w1": truth.w1, "w1_se": truth.w1_se, "n_mc": truth.n_mc}
    _write_json(out, d)
    return pair, truth


def cmd_gen(args):
    _, truth = generate(args.dim, args.funnels, args.box, args.power, args.seed, args.orientation, args.n_mc, args.out)
    print(f"W1 = {truth.w1:.6f} +- {truth.w1_se:.6f}  ({args.out})")


def _load_pair(path):
    return bm.load_pair(path)


def _truth_for(pair, pair_path, n_mc=None):
    """Ground truth stored next to the pair, recomputed if absent or a different size is asked for."""
    stored = json.loads(Path(pair_path).read_text()).get("ground_truth")
    if stored and (n_mc is None or n_mc == stored["n_mc"]):
        return bm.GroundTruth(pair, stored["w1"], stored["w1_se"], stored["n_mc"])
    return bm.ground_truth(pair, n_mc or bm.DEFAULT_N_MC)


# --------------------------------------------------------------------- solve


def _load_config(kind, config_path, overrides):
    base = {}
    if config_path:
        base = json.loads(Path(config_path).read_text())
        if isinstance(base, dict) and kind in base:
            base = base[kind]
    base = {**base, **{k: v for k, v in overrides.items() if v is not None}, "kind": kind}
    return S.SolverConfig.from_dict(base)


def run_name(pair_path, kind, seed) -> str:
    return f"{Path(pair_path).stem}_{kind}_s{seed}"


def solve_one(pair_path, kind, cfg, seed, out_dir, deterministic=False):
    """Train one solver; write ``<name>.run.json`` and ``<name>.log.jsonl``."""
    pair = _load_pair(pair_path)
    sampler = bm.PairSampler(pair)
    name = run_name(pair_path, kind, seed)
    out_dir = Path(out_dir)
    if kind == "truth":
        output = S.oracle_output(_truth_for(pair, pair_path))
        cfg_dict = {"kind": "truth"}
    else:
        rng = np.random.default_rng([int(seed), S.KINDS.index(cfg.kind)])
        output = S.fit(sampler, cfg, rng)
        cfg_dict = cfg.resolved(pair.dim).to_dict()
    if deterministic:
        output.wall_time_s = 0.0
        for entry in output.log:
            entry["wall_ms"] = 0.0
    record = {
        "meta": _meta(seed, cfg_dict),
        "pair": str(Path(pair_path).resolve()),
        "config": cfg_dict,
        "summary": output.summary(),
        "output": S.output_to_dict(output),
    }
    _write_json(out_dir / f"{name}.run.json", record)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{name}.log.jsonl", "w") as fh:
        for entry in output.log:
            fh.write(json.dumps(entry) + "\n")
    return out_dir / f"{name}.run.json", output


def _solver_list(text):
    kinds = []
    for raw in text.split(","):
        raw = raw.strip()
        if raw.lower() == "truth":
            kinds.append("truth")
            continue
        try:
            kinds.append(S.canonical_kind(raw))
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
    return kinds


def cmd_solve(args):
    kinds = _solver_list(args.solver)
    overrides = {"iterations": args.iterations, "batch_size": args.batch_size, "full_scale": args.full_scale or None}
    jobs = []
    for kind in kinds:
        cfg = None if kind == "truth" else _load_config(kind, args.config, overrides)
        jobs.append((args.pair, kind, cfg, args.seed, args.out, args.deterministic))
    with ThreadPoolExecutor(max_workers=min(_threads(), len(jobs))) as pool:
        results = list(pool.map(lambda job: solve_one(*job), jobs))
    for path, output in results:
        print(f"{output.kind}: w1_estimate = {output.w1_estimate:.6f}  ({path})")


# ---------------------------------------------------------------------- eval


def evaluate_run(pair_path, run_path, samples, eval_seed=0, n_mc=None, deterministic=False):
    pair = _load_pair(pair_path)
    record = json.loads(Path(run_path).read_text())
    truth = _truth_for(pair, pair_path, n_mc)
    output = S.output_from_dict(record["output"], truth)
    seed = record["meta"]["seed"]
    rng = np.random.default_rng([int(seed), int(eval_seed), 7])
    report = S.evaluate(output, truth, samples, rng, seed=seed)
    report.solver = S.DISPLAY_NAMES.get(output.kind, output.kind)
    if deterministic:
        report.wall_time_s = 0.0
    return report


def append_report(report, csv_path):
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    new = not csv_path.exists() or csv_path.stat().st_size == 0
    with open(csv_path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(metrics.CSV_COLUMNS)
        w.writerow([_fmt(v) for v in report.row().values()])
    with open(csv_path.with_suffix(".jsonl"), "a") as fh:
        fh.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def cmd_eval(args):
    report = evaluate_run(args.pair, args.run, args.samples, args.seed, args.n_mc, args.deterministic)
    append_report(report, args.out)
    print(f"{report.solver}: cos {report.cos:.4f}  l2 {report.l2:.4f}  dev {report.dev_pct:.1f}%")


# ---------------------------------------------------------------------- plot


def cmd_plot(args):
    from . import plotting

    pair = _load_pair(args.pair)
    if args.kind == "surface":
        if args.run:
            truth = _truth_for(pair, args.pair)
            output = S.output_from_dict(json.loads(Path(args.run).read_text())["output"], truth)
            if output.potential is None:
                raise ConfigError(f"run of kind {output.kind!r} has no potential to plot")
            potential, title = output.potential, S.DISPLAY_NAMES.get(output.kind, output.kind)
        else:
            potential, title = (lambda X: pair.sign * pair.funnel(X)), "ground truth"
        plotting.plot_surface(pair, potential, args.out, title)
    elif args.kind == "rays":
        plotting.plot_rays(pair, args.out)
    else:
        plotting.plot_pca(pair, args.out)
    print(args.out)


# -------------------------------------------------------------------- report


def read_reports(directory):
    """Rows from every CSV under ``directory``; a repeated key keeps the latest row."""
    rows = {}
    for path in sorted(Path(directory).glob("*.csv")):
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if set(metrics.CSV_COLUMNS) - set(row):
                    continue
                key = (row["solver"], row["D"], row["N"], row["p"], row["seed"])
                if key in rows:
                    warnings.warn(f"duplicate report for {key}; keeping the latest", stacklevel=2)
                rows[key] = row
    return list(rows.values())


def report_matrix(rows):
    """``{(solver, D, N): (cos, l2, dev_pct)}`` averaged over seeds."""
    cells = {}
    for r in rows:
        key = (r["solver"], int(r["D"]), int(r["N"]))
        cells.setdefault(key, []).append((float(r["cos"]), float(r["l2"]), float(r["dev_pct"])))
    return {k: tuple(float(np.mean(col)) for col in zip(*v)) for k, v in cells.items()}


def render_report(matrix):
    solvers = sorted({k[0] for k in matrix})
    columns = sorted({(k[1], k[2]) for k in matrix})
    head = "| solver | " + " | ".join(f"D={d} N={n}" for d, n in columns) + " |"
    lines = [head, "|" + "---|" * (len(columns) + 1)]
    flat = [["solver", "D", "N", "cos", "cos_band", "l2", "l2_band", "dev_pct", "dev_band"]]
    for s in solvers:
        cells = []
        for d, n in columns:
            if (s, d, n) not in matrix:
                cells.append("")
                continue
            cos, l2, dev = matrix[(s, d, n)]
            bands = metrics.cos_band(cos), metrics.l2_band(l2), metrics.dev_band(dev)
            cells.append(f"cos {cos:.2f} ({bands[0]}) / L2 {l2:.2f} ({bands[1]}) / dev {dev:.0f}% ({bands[2]})")
            flat.append([s, d, n, cos, bands[0], l2, bands[1], dev, bands[2]])
        lines.append(f"| {s} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n", flat


def write_report(directory, out):
    md, flat = render_report(report_matrix(read_reports(directory)))
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(md)
    with open(out.with_suffix(".csv"), "w", newline="") as fh:
        csv.writer(fh).writerows(flat)
    return md


def cmd_report(args):
    print(write_report(args.dir, args.out), end="")


# ----------------------------------------------------------------------- run


def run_manifest(manifest_path, deterministic=False):
    """Generate/solve/evaluate everything a manifest lists; returns the results CSV path.

    Manifest keys: ``out``; ``seed``; ``pairs`` (paths, or generator specs
    ``{dim, funnels[, box, power, seed, orientation]}``); ``solvers`` (kind
    names or config dicts); ``seeds`` (solver seeds, default ``[seed]``);
    ``eval_samples``; ``n_mc``.
    """
    manifest_path = Path(manifest_path)
    m = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    try:
        out = root / m["out"]
        pairs, solver_specs = m["pairs"], m["solvers"]
    except KeyError as exc:
        raise ConfigError(f"manifest is missing {exc}") from None
    seed = int(m.get("seed", 0))
    seeds = [int(s) for s in m.get("seeds", [seed])]
    n_eval = int(m.get("eval_samples", 2**13))
    n_mc = int(m.get("n_mc", bm.DEFAULT_N_MC))
    out.mkdir(parents=True, exist_ok=True)

    pair_paths = []
    for i, item in enumerate(pairs):
        if isinstance(item, str):
            path = root / item
            if not path.exists():
                raise FileNotFoundError(f"pair file {path} does not exist")
        else:
            path = out / f"pair{i}_D{item['dim']}_N{item['funnels']}.json"
            generate(
                int(item["dim"]), int(item["funnels"]), float(item.get("box", bm.DEFAULT_BOX)),
                float(item.get("power", bm.DEFAULT_POWER)), int(item.get("seed", seed)),
                item.get("orientation", "reversed"), n_mc, path,
            )
        pair_paths.append(path)

    configs = []
    for item in solver_specs:
        item = {"kind": item} if isinstance(item, str) else dict(item)
        kind = _solver_list(item["kind"])[0]
        configs.append((kind, None if kind == "truth" else S.SolverConfig.from_dict({**item, "kind": kind})))

    jobs = [(p, k, c, s, out / "runs", deterministic) for p in pair_paths for k, c in configs for s in seeds]
    with ThreadPoolExecutor(max_workers=min(_threads(), max(len(jobs), 1))) as pool:
        runs = [path for path, _ in pool.map(lambda job: solve_one(*job), jobs)]

    csv_path = out / "results.csv"
    for stale in (csv_path, csv_path.with_suffix(".jsonl")):
        stale.unlink(missing_ok=True)
    for job, run in zip(jobs, runs):
        report = evaluate_run(job[0], run, n_eval, seed, None, deterministic)
        append_report(report, csv_path)
    write_report(out, out / "report.md")
    return csv_path


def cmd_run(args):
    path = run_manifest(args.manifest, args.deterministic)
    print(path)


# ---------------------------------------------------------------------- main


def build_parser():
    p = argparse.ArgumentParser(prog="w1bench", description="W1 solver benchmark on MinFunnel pairs")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a benchmark pair")
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--funnels", type=int, required=True)
    g.add_argument("--box", type=float, default=bm.DEFAULT_BOX)
    g.add_argument("--power", type=float, default=bm.DEFAULT_POWER)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--orientation", choices=("reversed", "forward"), default="reversed")
    g.add_argument("--n-mc", type=int, default=bm.DEFAULT_N_MC)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="train solvers on a pair")
    s.add_argument("--pair", required=True)
    s.add_argument("--solver", required=True, help="comma-separated: " + ",".join((*S.KINDS, "truth")))
    s.add_argument("--config", help="JSON SolverConfig, or a dict keyed by solver kind")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iterations", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--full-scale", action="store_true")
    s.add_argument("--deterministic", action="store_true", help="zero wall-clock fields")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="score a run against the ground truth")
    e.add_argument("--pair", required=True)
    e.add_argument("--run", required=True)
    e.add_argument("--samples", type=int, default=2**13)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--n-mc", type=int)
    e.add_argument("--deterministic", action="store_true")
    e.add_argument("--out", required=True, help="CSV to append to; a .jsonl twin is written alongside")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="static SVG figure")
    pl.add_argument("--pair", required=True)
    pl.add_argument("--run")
    pl.add_argument("--kind", choices=("surface", "rays", "pca"), required=True)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)

    r = sub.add_parser("report", help="aggregate evaluation CSVs into a solver x (D, N) table")
    r.add_argument("--dir", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    m = sub.add_parser("run", help="execute a manifest end to end")
    m.add_argument("--manifest", required=True)
    m.add_argument("--deterministic", action="store_true")
    m.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConstructionError, ConfigError, W1BenchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
