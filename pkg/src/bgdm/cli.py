"""Batch command line: ``run``, ``verify`` and ``sweep-report``."""
import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import logging
import math
import os
import re
import shutil
import statistics
import sys
import time
import traceback

import numpy as np

from .config import load_config
from .errors import BGDMError, ConfigError, ReportFormatError
from .evaluation import (CSV_FIELDS, MetricRecord, load_pgm, phantom_gmm_prior, psnr, save_pgm,
                         shepp_logan, ssim, write_metrics_csv)
from .linops import (CTOperator, MaskSpec, MRIOperator, SROperator, generate_mask,
                     simulate_measurement)
from .prior import (DirectoryDenoiser, ExternalScoreModel, GMMScoreModel, SubprocessDenoiser,
                    load_gmm_spec, standard_normal_prior)
from .sampler import run_sampler, write_trace_csv
from .schedule import make_linear_schedule
from .tensor import load_tensor, save_tensor
from .verify import format_table, run_all

log = logging.getLogger("bgdm")

EXIT_OK, EXIT_CELL_FAILURE, EXIT_CONFIG = 0, 1, 2

# ground truths drawn from the prior and measurement noise use seeds offset
# from the sampler seed so the three streams never coincide
TRUTH_SEED_OFFSET = 10_000
NOISE_SEED_OFFSET = 20_000

_worker_state = {}


def build_prior(cfg):
    """Return ``(score model, prior or None)`` for the configured source."""
    shape = (cfg.image_size, cfg.image_size)
    schedule = make_linear_schedule(cfg.schedule_steps, cfg.beta_min, cfg.beta_max)
    source = cfg.prior_source
    if source == "external_command":
        den = SubprocessDenoiser(cfg.prior_command, timeout=cfg.prior_timeout,
                                 is_complex=cfg.prior_complex)
        return ExternalScoreModel(den), None
    if source == "external_dir":
        return ExternalScoreModel(DirectoryDenoiser(cfg.prior_path, cfg.prior_complex)), None
    if source == "phantom_gmm":
        prior = phantom_gmm_prior(cfg.image_size, cfg.prior_components, cfg.prior_seed)
    elif source == "gmm":
        prior = load_gmm_spec(cfg.prior_path)
        if tuple(prior.shape) != shape:
            raise ConfigError(f"GMM spec {cfg.prior_path} has shape {prior.shape}, "
                              f"expected {shape}")
    else:
        prior = standard_normal_prior(shape)
    return GMMScoreModel(prior, schedule), prior


def build_operator(cfg, accel):
    shape = (cfg.image_size, cfg.image_size)
    if cfg.task == "mri":
        spec = MaskSpec(cfg.mask_pattern, float(accel), cfg.center_fraction, cfg.mask_seed)
        return MRIOperator(generate_mask(spec, shape))
    if cfg.task == "ct":
        return CTOperator(shape, int(accel), cfg.detector_count)
    return SROperator(shape, int(accel))


def load_input(cfg, item, prior, seed):
    shape = (cfg.image_size, cfg.image_size)
    if item == "phantom":
        return shepp_logan(cfg.image_size)
    if item == "prior_sample":
        if prior is None:
            raise ConfigError("inputs = prior_sample needs an analytic prior")
        return prior.sample(np.random.default_rng(TRUTH_SEED_OFFSET + seed))
    img = load_pgm(item) if item.lower().endswith(".pgm") else load_tensor(item)
    if img.shape != shape:
        raise ConfigError(f"input {item} has shape {img.shape}, expected {shape}")
    return img


def input_name(item):
    if item in ("phantom", "prior_sample"):
        return item
    return os.path.splitext(os.path.basename(item))[0]


def enumerate_cells(cfg):
    """Every grid cell in a fixed order: scheme, nfe, acceleration, seed, input."""
    cells = []
    for si in range(len(cfg.schemes)):
        for nfe in cfg.nfe:
            for accel in cfg.accelerations:
                for seed in cfg.seeds:
                    for ii in range(len(cfg.inputs)):
                        cells.append((si, nfe, accel, seed, ii))
    return cells


def cell_name(cfg, cell):
    si, nfe, accel, seed, ii = cell
    label = cfg.schemes[si].label.replace("(", "_").replace(")", "")
    stem = f"{label}_{cfg.task}_a{accel:g}_nfe{nfe}_s{seed}_{input_name(cfg.inputs[ii])}"
    return re.sub(r"[^A-Za-z0-9._=-]+", "_", stem).strip("_")


def describe_cell(cfg, cell):
    si, nfe, accel, seed, ii = cell
    return (f"scheme={cfg.schemes[si].label} nfe={nfe} accel={accel:g} seed={seed} "
            f"input={input_name(cfg.inputs[ii])}")


def _state(cfg):
    key = cfg.path
    if key not in _worker_state:
        _worker_state.clear()
        schedule = make_linear_schedule(cfg.schedule_steps, cfg.beta_min, cfg.beta_max)
        model, prior = build_prior(cfg)
        _worker_state[key] = (schedule, model, prior, {})
    return _worker_state[key]


def run_cell(cfg, cell):
    """Simulate, reconstruct and score one cell; never raises."""
    si, nfe, accel, seed, ii = cell
    try:
        schedule, model, prior, ops = _state(cfg)
        if accel not in ops:
            ops[accel] = build_operator(cfg, accel)
        op = ops[accel]
        truth = load_input(cfg, cfg.inputs[ii], prior, seed)
        y = simulate_measurement(op, truth, cfg.sigma_y, NOISE_SEED_OFFSET + seed)
        guidance = cfg.schemes[si].guidance.with_(sigma_y=cfg.sigma_y)
        start = time.perf_counter()
        x, trace = run_sampler(model, op, y, schedule, guidance, nfe, seed, trace=cfg.trace,
                               reference=truth, shape=truth.shape)
        runtime = time.perf_counter() - start
        record = MetricRecord(scheme=cfg.schemes[si].label, task=cfg.task, accel=float(accel),
                              nfe=int(nfe), psnr_db=psnr(x, truth), ssim=ssim(x, truth),
                              runtime_s=runtime, seed=int(seed))
        return {"cell": cell, "record": record, "image": x, "trace": trace, "error": None}
    except Exception as exc:  # crash isolation: report, keep the sweep going
        detail = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        return {"cell": cell, "record": None, "image": None, "trace": None,
                "error": detail, "traceback": traceback.format_exc()}


def _run_cells(cfg, cells, workers):
    if workers <= 1:
        return [run_cell(cfg, c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_cell, cfg, c) for c in cells]
        results = []
        for c, fut in zip(cells, futures):
            try:
                results.append(fut.result())
            except Exception as exc:  # worker process died
                results.append({"cell": c, "record": None, "image": None, "trace": None,
                                "error": f"worker failure: {exc!r}", "traceback": ""})
        return results


def run_experiment(config_path, output=None, workers=None):
    """Run every grid cell of a config; returns the exit status."""
    cfg = load_config(config_path)
    out = output or cfg.output
    if not os.path.isabs(out) and output is None:
        out = os.path.join(os.path.dirname(cfg.path), out)
    subdirs = ["recon", "preview"] + (["trace"] if cfg.trace else [])
    for sub in subdirs:
        os.makedirs(os.path.join(out, sub), exist_ok=True)
    shutil.copyfile(cfg.path, os.path.join(out, "config.ini"))

    # fail fast on prior problems before spawning workers
    try:
        _state(cfg)
    except (OSError, BGDMError) as exc:
        raise ConfigError(f"cannot build prior from {cfg.path}: {exc}") from None

    cells = enumerate_cells(cfg)
    workers = workers or cfg.workers or os.cpu_count() or 1
    workers = max(1, min(workers, len(cells)))
    log.info("running %d cells on %d worker(s)", len(cells), workers)
    results = _run_cells(cfg, cells, workers)

    records, failures = [], 0
    for res in results:
        cell = res["cell"]
        if res["error"] is not None:
            failures += 1
            log.error("cell failed [%s]: %s", describe_cell(cfg, cell), res["error"])
            if res.get("traceback"):
                log.debug(res["traceback"])
            continue
        name = cell_name(cfg, cell)
        save_tensor(res["image"], os.path.join(out, "recon", name + ".ntsr"))
        save_pgm(res["image"], os.path.join(out, "preview", name + ".pgm"))
        if cfg.trace:
            write_trace_csv(res["trace"], os.path.join(out, "trace", name + ".csv"))
        records.append(res["record"])
    write_metrics_csv(records, os.path.join(out, "metrics.csv"))
    log.info("%d of %d cells succeeded; results in %s", len(records), len(cells), out)
    return EXIT_CELL_FAILURE if failures else EXIT_OK


def read_metrics(paths):
    rows = []
    for path in paths:
        try:
            fh = open(path, newline="")
        except OSError as exc:
            raise ReportFormatError(f"cannot read {path}: {exc}") from None
        with fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_FIELDS:
                raise ReportFormatError(
                    f"{path}: header {reader.fieldnames} does not match {list(CSV_FIELDS)}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    rows.append({"scheme": row["scheme"], "accel": float(row["accel"]),
                                 "nfe": int(row["nfe"]), "psnr_db": float(row["psnr_db"]),
                                 "ssim": float(row["ssim"])})
                except (TypeError, ValueError):
                    raise ReportFormatError(f"{path}:{lineno}: malformed row {row}") from None
    return rows


def _mean_std(values):
    mean = statistics.fmean(values)
    if len(values) < 2 or not all(math.isfinite(v) for v in values):
        return mean, 0.0
    return mean, statistics.stdev(values)


def summarize(rows):
    """Mean and sample std of PSNR and SSIM per (scheme, accel, nfe)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["scheme"], r["accel"], r["nfe"]), []).append(r)
    out = []
    for key in sorted(groups):
        g = groups[key]
        pm, ps = _mean_std([r["psnr_db"] for r in g])
        sm, ss = _mean_std([r["ssim"] for r in g])
        out.append({"scheme": key[0], "accel": key[1], "nfe": key[2], "n": len(g),
                    "psnr_mean": pm, "psnr_std": ps, "ssim_mean": sm, "ssim_std": ss})
    return out


SUMMARY_FIELDS = ("scheme", "accel", "nfe", "n", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std")


def format_summary(summary):
    header = ("scheme", "accel", "nfe", "n", "psnr_db", "ssim")
    body = [(s["scheme"], f"{s['accel']:g}", str(s["nfe"]), str(s["n"]),
             f"{s['psnr_mean']:.3f} ± {s['psnr_std']:.3f}",
             f"{s['ssim_mean']:.4f} ± {s['ssim_std']:.4f}") for s in summary]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
             for row in [header] + body]
    return "\n".join(lines) + "\n"


def sweep_report(paths, output="."):
    summary = summarize(read_metrics(paths))
    os.makedirs(output, exist_ok=True)
    text = format_summary(summary)
    with open(os.path.join(output, "summary.txt"), "w") as fh:
        fh.write(text)
    with open(os.path.join(output, "summary.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        for s in summary:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in s.items()})
    return summary, text


def build_parser():
    parser = argparse.ArgumentParser(prog="bgdm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every cell of an experiment config")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: cores)")
    p.add_argument("--output", default=None, help="output directory (overrides the config)")

    p = sub.add_parser("verify", help="run the oracle self-check suites")
    p.add_argument("--mutation-test", action="store_true",
                   help="perturb lambda in the closed-form proximal solve")
    p.add_argument("--fast", action="store_true", help="fewer random problems")

    p = sub.add_parser("sweep-report", help="summarise metrics CSV files")
    p.add_argument("csv", nargs="+")
    p.add_argument("--output", default=".", help="directory for summary.txt and summary.csv")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "run":
        if args.workers is not None and args.workers < 1:
            log.error("--workers must be at least 1")
            return EXIT_CONFIG
        try:
            return run_experiment(args.config, args.output, args.workers)
        except ConfigError as exc:
            log.error("config error: %s", exc)
            return EXIT_CONFIG
    if args.command == "verify":
        results = run_all(mutation=args.mutation_test, fast=args.fast)
        print(format_table(results))
        return EXIT_OK if all(r.passed for r in results) else EXIT_CELL_FAILURE
    try:
        _, text = sweep_report(args.csv, args.output)
    except ReportFormatError as exc:
        log.error("format error: %s", exc)
        return EXIT_CONFIG
    sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
