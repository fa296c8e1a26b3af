"""Command-line experiment runner.

    stalesgd run     --config exp.yaml [--out DIR] [--seed S] [--replicates R] [--concurrent]
    stalesgd compare --config exp.yaml [--out DIR]
    stalesgd sweep   --config exp.yaml [--out DIR] [--jobs J]
    stalesgd theory  --trace DIR/staleness_rep0.csv [--config exp.yaml] [--alpha0 A] [--out DIR]

Exit status: 0 on success (runs that diverge are recorded as NC and still
count as success), 1 for configuration errors, 2 for anything else.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .core import StalenessSample, StalenessTrace, summarize_staleness
from .sim import RunTrace, run_concurrent, run_simulation
from .theory import TheoryConstants, bound_report, decompose_trace, weighted_gradient_average

log = logging.getLogger("stalesgd")

LOSS_COLUMNS = ["update_index", "sim_time", "loss", "grad_norm_sq", "epoch"]
SWEEP_COLUMNS = ["mu", "lam", "n", "policy", "status", "final_loss", "time_per_epoch", "mean_staleness", "epochs"]


def _write_csv(path: Path, digest: str, columns: list[str], rows, extra_header: str = "") -> Path:
    buf = io.StringIO()
    buf.write(f"# config_digest: {digest}{extra_header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    path.write_text(buf.getvalue())
    return path


def _write_json(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def loss_rows(trace: RunTrace):
    return [(p.update_index, p.sim_time, p.loss, p.grad_norm_sq, p.epoch) for p in trace.loss_curve]


def read_loss_csv(path: str | Path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(lines)]


def write_staleness_csv(path: Path, trace: RunTrace, digest: str) -> Path:
    p = trace.protocol
    header = f"; lam={p.lam} n={p.staleness_n} c={p.c} mu={p.mu} mode={p.describe()}"
    rows = ((s.update_index, s.learner_id, s.staleness) for s in trace.staleness.samples)
    return _write_csv(path, digest, ["update_index", "learner_id", "staleness"], rows, header)


def read_staleness_csv(path: str | Path) -> tuple[StalenessTrace, dict[str, int]]:
    text = Path(path).read_text().splitlines()
    meta: dict[str, int] = {}
    if text and text[0].startswith("#") and ";" in text[0]:
        for tok in text[0].split(";", 1)[1].split():
            key, _, val = tok.partition("=")
            if val.lstrip("-").isdigit():
                meta[key] = int(val)
    rows = csv.DictReader(ln for ln in text if not ln.startswith("#"))
    samples = [StalenessSample(int(r["update_index"]), int(r["learner_id"]), int(r["staleness"])) for r in rows]
    return StalenessTrace(samples, meta.get("n", 1), meta.get("lam", 1)), meta


def lhs_estimate(trace: RunTrace, p: np.ndarray) -> float | None:
    """(1/p)-weighted mean of sampled squared gradient norms along the run."""
    c = trace.protocol.c
    norms, ps = [], []
    for pt in trace.loss_curve:
        u = pt.update_index
        if u == 0 or u * c > p.size or not np.isfinite(pt.grad_norm_sq):
            continue
        norms.append(pt.grad_norm_sq)
        ps.append(1.0 / np.mean(1.0 / p[(u - 1) * c:u * c]))
    if not norms:
        return None
    return weighted_gradient_average(norms, ps)


def _theory_payload(trace: RunTrace, k: TheoryConstants) -> dict:
    p = decompose_trace(trace.staleness, trace.protocol.c, trace.protocol.staleness_n)
    rep = bound_report(k, p)
    out = rep.to_dict()
    out["lhs_estimate"] = lhs_estimate(trace, p.p)
    return out


def _execute(cfg: ExperimentConfig, seed: int, concurrent: bool, mode: str | None = None) -> RunTrace:
    sim_cfg = cfg.sim_config(seed=seed, mode=mode)
    return run_concurrent(sim_cfg) if concurrent else run_simulation(sim_cfg)


def run_single(cfg: ExperimentConfig, out: str | Path | None = None, concurrent: bool = False) -> dict:
    """Run every replicate and write loss CSVs, staleness CSVs and JSON reports."""
    outdir = Path(out or cfg.output.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    (outdir / "config.yaml").write_text(f"# config_digest: {digest}\n" + cfg.to_yaml())
    k = cfg.theory_constants()
    paths: dict[str, list[str] | str] = {"loss": [], "staleness": []}
    reps, theory_reps, traces = [], [], []
    for r in range(cfg.seeds.replicates):
        seed = cfg.seeds.master + r
        trace = _execute(cfg, seed, concurrent)
        traces.append(trace)
        log.info("replicate %d: %s after %d updates, final loss %.6g",
                 r, trace.status, trace.updates_applied, trace.final_loss)
        paths["loss"].append(str(_write_csv(outdir / f"loss_rep{r}.csv", digest, LOSS_COLUMNS, loss_rows(trace))))
        paths["staleness"].append(str(write_staleness_csv(outdir / f"staleness_rep{r}.csv", trace, digest)))
        summary = summarize_staleness(trace.staleness)
        reps.append({
            "replicate": r,
            "seed": seed,
            "status": trace.status,
            "final_loss": trace.final_loss,
            "updates_applied": trace.updates_applied,
            "samples_processed": trace.samples_processed,
            "sim_wallclock": trace.sim_wallclock,
            "time_per_epoch": trace.time_per_epoch,
            "executor": "concurrent" if concurrent else "simulation",
            "staleness": summary.to_dict(),
        })
        theory_reps.append({"replicate": r, **_theory_payload(trace, k)})

    if len(traces) > 1:
        paths["loss_mean"] = str(_write_csv(outdir / "loss_mean.csv", digest, LOSS_COLUMNS, _mean_curve(traces)))
    p = cfg.protocol.build()
    summary_doc = {
        "config_digest": digest,
        "protocol": {"mode": p.describe(), "lam": p.lam, "n": p.staleness_n, "c": p.c, "mu": p.mu},
        "status": "NC" if any(r["status"] == "NC" for r in reps) else "ok",
        "replicates": reps,
    }
    lhs = [t["lhs_estimate"] for t in theory_reps if t["lhs_estimate"] is not None]
    theory_doc = {
        "config_digest": digest,
        "replicates": theory_reps,
        "lhs_estimate_mean": float(np.mean(lhs)) if lhs else None,
    }
    paths["summary"] = str(_write_json(outdir / "summary.json", summary_doc))
    paths["theory"] = str(_write_json(outdir / "theory.json", theory_doc))
    return paths


def _mean_curve(traces: list[RunTrace]):
    common = set.intersection(*(set(p.update_index for p in t.loss_curve) for t in traces))
    rows = []
    for u in sorted(common):
        pts = [next(p for p in t.loss_curve if p.update_index == u) for t in traces]
        rows.append((u, *(float(np.mean([getattr(p, f) for p in pts])) for f in LOSS_COLUMNS[1:])))
    return rows


def compare_policies(cfg: ExperimentConfig, out: str | Path | None = None, concurrent: bool = False) -> dict:
    """Same seeds under the constant and the staleness-inverse rate."""
    outdir = Path(out or cfg.output.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    result = {"config_digest": digest, "runs": {}}
    status = {}
    for mode in ("constant", "staleness_inverse"):
        trace = _execute(cfg, cfg.seeds.master, concurrent, mode)
        _write_csv(outdir / f"compare_{mode}.csv", digest, LOSS_COLUMNS, loss_rows(trace))
        status[mode] = trace.status
        result["runs"][mode] = {
            "status": trace.status,
            "final_loss": trace.final_loss,
            "updates_applied": trace.updates_applied,
            "samples_processed": trace.samples_processed,
            "mean_staleness": summarize_staleness(trace.staleness).mean,
        }
    ok_c, ok_s = status["constant"] != "NC", status["staleness_inverse"] != "NC"
    if ok_c and ok_s:
        verdict = "both-converged"
    elif ok_s:
        verdict = "only-staleness-converged"
    elif ok_c:
        verdict = "only-constant-converged"
    else:
        verdict = "both-NC"
    result["verdict"] = verdict
    _write_json(outdir / "compare.json", result)
    return result


def _sweep_cell(args) -> list:
    cfg, mu, lam, n, mode = args
    cell = cfg.cell(mu, lam, n, mode)
    trace = run_simulation(cell.sim_config())
    p = cell.protocol.build()
    final = "NC" if trace.diverged else trace.final_loss
    return [mu, lam, p.n, mode, trace.status, final, trace.time_per_epoch,
            summarize_staleness(trace.staleness).mean, trace.epochs]


def run_sweep(cfg: ExperimentConfig, out: str | Path | None = None, jobs: int = 1) -> list[dict]:
    """One row per (mu, lam, policy). Cells run independently; divergence is recorded as NC."""
    if cfg.sweep is None:
        raise ConfigError("sweep: section is required for the sweep command")
    outdir = Path(out or cfg.output.dir)
    outdir.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, c.mu, c.lam, c.n, mode) for c in cfg.sweep.cells for mode in cfg.sweep.policies]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_sweep_cell, tasks))
    else:
        rows = [_sweep_cell(t) for t in tasks]
    _write_csv(outdir / "sweep.csv", cfg.digest(), SWEEP_COLUMNS, rows)
    return [dict(zip(SWEEP_COLUMNS, r)) for r in rows]


def theory_from_trace(trace_path: str | Path, cfg: ExperimentConfig | None = None,
                      alpha0: float | None = None, out: str | Path | None = None) -> dict:
    trace, meta = read_staleness_csv(trace_path)
    c = meta.get("c", 1)
    if cfg is not None:
        k = cfg.theory_constants()
    else:
        k = TheoryConstants(mu=meta.get("mu", 1), c=c, n=meta.get("n", 1))
    p = decompose_trace(trace, k.c, k.n)
    doc = bound_report(k, p, alpha0).to_dict()
    if out is not None:
        outdir = Path(out)
        outdir.mkdir(parents=True, exist_ok=True)
        doc["config_digest"] = cfg.digest() if cfg is not None else None
        _write_json(outdir / "bound_report.json", doc)
    return doc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stalesgd", description="staleness-aware ASGD experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "compare", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replicates", type=int)
        if name == "sweep":
            sp.add_argument("--jobs", type=int, default=1)
        else:
            sp.add_argument("--concurrent", action="store_true", help="use the threaded executor")
    th = sub.add_parser("theory")
    th.add_argument("--trace", required=True)
    th.add_argument("--config")
    th.add_argument("--alpha0", type=float)
    th.add_argument("--out")
    return ap


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    d = cfg.to_dict()
    if args.seed is not None:
        d["seeds"]["master"] = args.seed
    if args.replicates is not None:
        d["seeds"]["replicates"] = args.replicates
    return parse_config(d)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "theory":
            cfg = load_config(args.config) if args.config else None
            doc = theory_from_trace(args.trace, cfg, args.alpha0, args.out)
            print(json.dumps(doc, indent=2))
            return 0
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "run":
            paths = run_single(cfg, args.out, args.concurrent)
            print(json.dumps(paths, indent=2))
        elif args.command == "compare":
            res = compare_policies(cfg, args.out, args.concurrent)
            print(res["verdict"])
        else:
            for row in run_sweep(cfg, args.out, args.jobs):
                print(",".join(str(row[c]) for c in SWEEP_COLUMNS))
        return 0
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
