"""Command-line entry point: ``oxsim run | plot | validate``.

Failures print a single line ``E_<CODE>: message`` on stderr and exit
nonzero (E_CONFIG 2, E_PARSE 3, E_FORMING 4, E_DATA 5).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import __version__
from . import analysis as A
from . import svgplot
from .bench import (STATES, ConfigError, ExperimentConfig, ReadoutMatrix, parse_config, run_experiment)
from .hourglass_cell import FormingFailed
from .pulse_engine import PulseError, load_pulse_library, parse_sequence
from .relax_model import RwdParams, simulate_rwd

METRICS = ("cdf", "median", "subpop", "corr", "failed", "fit", "residuals")
EXIT = {"E_CONFIG": 2, "E_PARSE": 3, "E_FORMING": 4, "E_DATA": 5}


class CliError(Exception):
    def __init__(self, code: str, msg: str):
        super().__init__(msg)
        self.code = code


def _one_line(msg) -> str:
    return " ".join(str(msg).split())


# ---------------------------------------------------------------- metrics


def _csv(header: Sequence[str], rows) -> str:
    out = [",".join(header)]
    for r in rows:
        out.append(",".join(_num(v) for v in r))
    return "\n".join(out) + "\n"


def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.10g" % v
    return str(v)


def metric_outputs(m: ReadoutMatrix, metric: str, state: str, law: str = "Logarithmic",
                   bins: int = 10) -> Dict[str, str]:
    """File name -> content for one metric of one state."""
    st = state.lower()
    law = A.law_name(law)
    times = m.times()
    sub = m.for_state(state)
    files: Dict[str, str] = {}
    if metric == "cdf":
        rows, series = [], []
        for k in sub.readout_indices():
            cdf = A.empirical_cdf(sub.resistance_ohm[sub.readout_index == k])
            rows += [(int(k), times[int(k)], v, p) for v, p in zip(cdf.values, cdf.probs)]
            series.append((f"RD{int(k)}", list(cdf.values), list(cdf.probs)))
        files[f"cdf_{st}.csv"] = _csv(("readout_index", "t_after_program_s", "log10_r", "cdf"), rows)
        files[f"cdf_{st}.svg"] = svgplot.line_plot(series, f"{state} CDF per readout", "log10 R (ohm)", "CDF",
                                                   step=True)
    elif metric == "median":
        ms = A.median_std_evolution(m, state)
        files[f"median_{st}.csv"] = _csv(("readout_index", "t_after_program_s", "median", "std", "dmedian", "n"),
                                         zip(ms.indices, ms.times, ms.median, ms.std, ms.dmedian, ms.n))
        files[f"median_{st}.svg"] = svgplot.line_plot(
            [("median - ref", list(ms.times), list(ms.dmedian)), ("std", list(ms.times), list(ms.std))],
            f"{state} median shift and spread", "time after program (s)", "log10 R (ohm)", logx=True,
            markers=True)
    elif metric == "subpop":
        tr = A.subpopulation_track(m, state)
        pairs = list(tr.ks)
        t = [times[int(k)] for k in tr.indices]
        files[f"subpop_{st}.csv"] = _csv(("readout_index", "t_after_program_s") + tuple(f"ks_{a}_{b}" for a, b in pairs),
                                         [(int(k), t[j]) + tuple(tr.ks[pr][j] for pr in pairs)
                                          for j, k in enumerate(tr.indices)])
        files[f"subpop_{st}.svg"] = svgplot.line_plot([(f"KS {a}/{b}", t, list(tr.ks[(a, b)])) for a, b in pairs],
                                                      f"{state} subpopulation KS distance", "time after program (s)",
                                                      "KS distance", logx=True, markers=True)
    elif metric == "corr":
        idx, r = A.correlation_decay(m, state)
        t = [times[int(k)] for k in idx]
        files[f"corr_{st}.csv"] = _csv(("readout_index", "t_after_program_s", "pearson_ref"), zip(idx, t, r))
        files[f"corr_{st}.svg"] = svgplot.line_plot([("r(RD1, RDk)", t, list(r))], f"{state} correlation decay",
                                                    "time after program (s)", "Pearson r", logx=True, markers=True)
        _, _, X = m.trajectories(state, [int(idx[0]), int(idx[-1])])
        rr = A.pearson_xy(X[:, 0], X[:, 1])
        files[f"scatter_{st}.svg"] = svgplot.scatter_plot(
            list(X[:, 0]), list(X[:, 1]), f"{state} RD{int(idx[0])} vs RD{int(idx[-1])}",
            f"log10 R at RD{int(idx[0])}", f"log10 R at RD{int(idx[-1])}", annotation="r = %.4f" % rr)
    elif metric == "failed":
        ff = A.failed_fraction(m, state)
        ks = sorted(ff)
        files[f"failed_{st}.csv"] = _csv(("readout_index", "t_after_program_s", "failed_fraction"),
                                         [(k, times[k], ff[k]) for k in ks])
        tpos = [k for k in ks if times[k] > 0]
        files[f"failed_{st}.svg"] = svgplot.line_plot([("failed", [times[k] for k in tpos], [ff[k] for k in tpos])],
                                                      f"{state} failed fraction", "time after program (s)",
                                                      "fraction", logx=True, markers=True)
    elif metric == "fit":
        ms = A.median_std_evolution(m, state)
        ranked = A.select_best_fit(ms.times, ms.median)
        rows = [("global", 0, f.law, f.r0, f.mu, f.t0, f.r_square, f.rms_error) for f in ranked]
        if bins > 1:
            try:
                bf = A.binned_fit(m, state, n_bins=bins, law=law)
                rows += [("bin", b, f.law, f.r0, f.mu, f.t0, f.r_square, f.rms_error) for b, f in enumerate(bf.fits)]
            except A.InsufficientData:
                pass
        files[f"fit_{st}.csv"] = _csv(("scope", "bin", "law", "r0", "mu", "t0", "r_square", "rms_error"), rows)
        tt = list(ms.times)
        series = [("median", tt, list(ms.median))] + [(f.law, tt, list(f.predict(ms.times))) for f in ranked]
        files[f"fit_{st}.svg"] = svgplot.line_plot(series, f"{state} median drift fits", "time after program (s)",
                                                   "log10 R (ohm)", logx=True, markers=False)
    elif metric == "residuals":
        fit = A.median_fit(m, state, law)
        res = A.extract_residuals(m, state, fit)
        zm = A.zero_mean_test(res)
        files[f"residuals_{st}.csv"] = _csv(("readout_index", "t_after_program_s", "mean", "std", "n", "passed"),
                                            [(int(k), res.times[j], zm.mean[j], zm.std[j], zm.n, zm.passed[j])
                                             for j, k in enumerate(zm.indices)])
        files[f"residuals_{st}.svg"] = svgplot.line_plot(
            [("mean e", list(res.times), list(zm.mean)), ("std e", list(res.times), list(zm.std))],
            f"{state} residuals about the {law} fit", "time after program (s)", "log10 R (ohm)", logx=True,
            markers=True)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return files


def all_outputs(m: ReadoutMatrix, metrics: Sequence[str], states: Sequence[str], law: str, bins: int):
    files: Dict[str, str] = {}
    skipped: List[str] = []
    for state in states:
        if len(m.for_state(state)) == 0:
            continue
        for metric in metrics:
            try:
                files.update(metric_outputs(m, metric, state, law, bins))
            except (A.InsufficientData, A.ZeroVariance, A.DegenerateFit, A.EmptySample) as exc:
                skipped.append(f"{metric}/{state}: {_one_line(exc)}")
    return files, skipped


def _parse_metrics(text: str) -> List[str]:
    ms = [s.strip().lower() for s in text.split(",") if s.strip()]
    bad = [s for s in ms if s not in METRICS]
    if bad:
        raise CliError("E_CONFIG", f"unknown metric(s) {', '.join(bad)}")
    return ms


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------- commands


def cmd_run(config_path: str) -> dict:
    if not os.path.isfile(config_path):
        raise CliError("E_CONFIG", f"missing config file {config_path}")
    with open(config_path, encoding="utf-8") as fh:
        text = fh.read()
    base = os.path.dirname(os.path.abspath(config_path))
    try:
        cfg, extras = parse_config(text, base)
    except PulseError as exc:
        raise CliError("E_PARSE", exc)
    except ConfigError as exc:
        raise CliError("E_CONFIG", exc)
    env_seed = os.environ.get("OXSIM_SEED")
    if env_seed is not None and env_seed.strip():
        try:
            cfg.master_seed = int(env_seed)
        except ValueError:
            raise CliError("E_CONFIG", f"OXSIM_SEED={env_seed!r} is not an integer")
    metrics = _parse_metrics(extras.get("metrics", ",".join(METRICS)))
    out_dir = os.path.join(base, extras.get("output", os.path.splitext(os.path.basename(config_path))[0] + "_out"))
    source = extras.get("source", "bench").lower()
    t_start = time.perf_counter()
    try:
        if source == "bench":
            m = run_experiment(cfg)
        elif source == "rwd":
            p = RwdParams(float(extras.get("rwd_mu", 0.05)), float(extras.get("rwd_sigma_step", 0.02)),
                          float(extras.get("rwd_r0_median", 4.4)), float(extras.get("rwd_r0_sigma", 0.1)))
            m = simulate_rwd(p, cfg.schedule, int(extras.get("rwd_n_traj", cfg.n_cells * cfg.n_cycles)),
                             cfg.master_seed)
        else:
            raise CliError("E_CONFIG", f"unknown source {source!r}")
    except FormingFailed as exc:
        raise CliError("E_FORMING", exc)
    except PulseError as exc:
        raise CliError("E_PARSE", exc)
    except ConfigError as exc:
        raise CliError("E_CONFIG", exc)
    except ValueError as exc:
        if isinstance(exc, CliError):
            raise
        raise CliError("E_CONFIG", exc)
    files = {"readout_matrix.csv": m.to_csv()}
    extra, skipped = all_outputs(m, metrics, STATES, "Logarithmic", 10)
    files.update(extra)
    os.makedirs(out_dir, exist_ok=True)
    for name in sorted(files):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(files[name])
    outputs = [{"file": n, "sha256": _sha(files[n].encode())} for n in sorted(files)]
    manifest = {
        "tool": "oxsim",
        "version": __version__,
        "config": os.path.basename(config_path),
        "config_hash": _sha((text + f"\nseed={cfg.master_seed}\n").encode()),
        "preset": cfg.preset if source == "bench" else "rwd",
        "seed": cfg.master_seed,
        "algorithm": cfg.algorithm,
        "outputs": outputs,
        "skipped": skipped,
    }
    manifest["content_hash"] = _sha(json.dumps(manifest, sort_keys=True).encode())
    manifest["wall_clock_s"] = round(time.perf_counter() - t_start, 3)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def cmd_plot(matrix_path: str, metrics: Sequence[str], state: str, law: str, bins: int, out_dir: str) -> dict:
    try:
        m = ReadoutMatrix.read(matrix_path)
    except FileNotFoundError:
        raise CliError("E_DATA", f"missing matrix file {matrix_path}")
    except (ValueError, KeyError) as exc:
        raise CliError("E_DATA", exc)
    states = STATES if state == "both" else (state.upper(),)
    try:
        files, skipped = all_outputs(m, list(metrics), states, law, bins)
    except ValueError as exc:
        raise CliError("E_DATA", exc)
    if files:
        os.makedirs(out_dir, exist_ok=True)
    for name in sorted(files):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(files[name])
    return {"outputs": sorted(files), "skipped": skipped}


def cmd_validate(library_path: str, sequence_path: str = None) -> str:
    try:
        lib = load_pulse_library(library_path)
        msg = f"ok: {len(lib)} pulses"
        if sequence_path:
            with open(sequence_path, encoding="utf-8") as fh:
                seq = parse_sequence(fh.read())
            seq.validate(lib)
            msg += f", sequence of {len(seq.set_phase) + len(seq.reset_phase)} pulses"
    except FileNotFoundError as exc:
        raise CliError("E_CONFIG", f"missing file {exc.filename}")
    except PulseError as exc:
        raise CliError("E_PARSE", exc)
    return msg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oxsim", description="Virtual OxRAM characterization bench")
    ap.add_argument("--version", action="version", version=f"oxsim {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    p = sub.add_parser("plot", help="metrics and SVG plots from a ReadoutMatrix CSV")
    p.add_argument("matrix")
    p.add_argument("--metric", action="append", choices=METRICS, default=[])
    p.add_argument("--state", choices=("set", "reset", "both"), default="set")
    p.add_argument("--law", default="Logarithmic")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", default=".")
    v = sub.add_parser("validate", help="validate a pulse library (and optionally a sequence)")
    v.add_argument("library")
    v.add_argument("--sequence")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "run":
            man = cmd_run(args.config)
            print(f"wrote {len(man['outputs'])} files")
        elif args.cmd == "plot":
            try:
                A.law_name(args.law)
            except ValueError as exc:
                raise CliError("E_CONFIG", exc)
            print(json.dumps(cmd_plot(args.matrix, args.metric, args.state, args.law, args.bins, args.out),
                             sort_keys=True))
        else:
            print(cmd_validate(args.library, args.sequence))
    except CliError as exc:
        print(f"{exc.code}: {_one_line(exc)}", file=sys.stderr)
        return EXIT[exc.code]
    return 0


if __name__ == "__main__":
    sys.exit(main())
