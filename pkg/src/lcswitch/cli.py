"""Command-line interface.

Exit codes: 0 success, 2 invalid configuration, 3 stage failure, 4 integrity
error.  The worker count comes from --workers or the LCSWITCH_WORKERS
environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, escape, hmm, ratefit, survival, trajio
from .errors import ConfigError, IntegrityError, LcswitchError, StageFailureError
from .meanfield import (
    IntegrationControls,
    classify_point,
    initial_condition_disk,
)
from .params import FockCutoffs, ScalingPlan, Scheme, SystemParams, WORKING_POINT
from .pipeline import RunConfig, run_pipeline, report, stream_seed, _write_csv
from .qjump import EnsembleSpec, InitialStatePolicy, simulate_ensemble

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_INTEGRITY = 4


def _workers(args) -> int:
    if args.workers is not None:
        return args.workers
    return int(os.environ.get("LCSWITCH_WORKERS", "1"))


def _base_params(args) -> SystemParams:
    kw = dict(WORKING_POINT)
    for name in kw:
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return SystemParams(**kw)


def _add_param_flags(p: argparse.ArgumentParser) -> None:
    for name, default in WORKING_POINT.items():
        p.add_argument(f"--{name.replace('_', '-')}", type=float, default=None,
                       help=f"base {name} (default {default})")


def _cmd_simulate(args) -> int:
    base = _base_params(args)
    plan = ScalingPlan(aleph=args.aleph, scheme=Scheme(args.scheme), base=base)
    n_a, n_b = (int(v) for v in args.cutoffs.split(","))
    spec = EnsembleSpec(
        n_traj=args.n_traj,
        t_transient=args.t_transient,
        t_total_post=args.t_total,
        dt_sample=args.sample_dt,
        policy=InitialStatePolicy(kind="disk", radius=args.init_radius),
    )
    records = simulate_ensemble(
        spec, plan, FockCutoffs(n_a, n_b),
        master_seed=args.seed, workers=_workers(args),
    )
    manifest = trajio.write_ensemble(Path(args.out), records, plan, args.seed)
    print(f"wrote {len(records)} trajectories; manifest {manifest}")
    return EXIT_OK


def _cmd_meanfield_scan(args) -> int:
    base = _base_params(args)
    lo, hi, n = args.delta_a_range
    deltas = np.linspace(lo, hi, int(n))
    lo, hi, n = args.f_range
    drives = np.linspace(lo, hi, int(n))
    grid = initial_condition_disk(n_init=args.n_init)
    controls = IntegrationControls(t_final=args.t_final)
    rows = []
    for f in drives:
        for d in deltas:
            cell = classify_point(float(d), float(f), base, grid=grid, controls=controls)
            row = [cell.delta_a, cell.f_tilde, cell.label.value, len(cell.attractors)]
            for a in cell.attractors:
                row.extend([a.d_alpha_r, a.d_beta_r, a.mean_n_a, a.mean_n_b])
            rows.append(row)
            print(f"({d:+.3f}, {f:.3f}) -> {cell.label.value}")
    n_att_max = max((len(r) - 4) // 4 for r in rows)
    header = ["delta_a", "f_tilde", "label", "n_attractors"]
    for k in range(n_att_max):
        header += [f"att{k}_d_alpha_r", f"att{k}_d_beta_r",
                   f"att{k}_mean_n_a", f"att{k}_mean_n_b"]
    for r in rows:
        r.extend([""] * (len(header) - len(r)))
    _write_csv(Path(args.out), header, rows)
    print(f"wrote {args.out}")
    return EXIT_OK


def _load_segmented(ensemble_manifest: str):
    manifest, records = trajio.load_ensemble(ensemble_manifest)
    return manifest, records


def _cmd_segment(args) -> int:
    manifest, records = _load_segmented(args.ensemble)
    controls = hmm.TrainingControls(max_iter=args.max_iter, covariance=args.covariance)
    obs = hmm.build_observations(records)
    params0 = hmm.kmeans_init(obs, seed=args.seed)
    result = hmm.baum_welch(params0, obs, controls)
    sequences = hmm.decode(result.params, obs, records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for ti, seq in enumerate(sequences):
        _write_csv(out / f"labels-{ti:05d}.csv",
                   ["start_index", "length", "state"],
                   hmm.run_length_encode(seq.labels))
    model = {
        "pi": result.params.pi.tolist(),
        "a": result.params.a.tolist(),
        "means": result.params.means.tolist(),
        "covs": result.params.covs.tolist(),
        "log_likelihood": result.log_likelihood,
        "trace": list(result.trace),
        "converged": result.converged,
        "separation_reliable": result.separation_reliable,
        "start_indices": [s.start_index for s in sequences],
        "sequence_log_likelihoods": [s.log_likelihood for s in sequences],
    }
    (out / "model.json").write_text(json.dumps(model, indent=2, sort_keys=True) + "\n")
    if not result.separation_reliable:
        print("WARNING: emission components overlap; segmentation unreliable")
    print(f"wrote {len(sequences)} label files and model.json to {out}")
    return EXIT_OK


def _read_labels(label_dir: Path, model: dict, n: int):
    sequences = []
    for ti in range(n):
        rows = np.loadtxt(label_dir / f"labels-{ti:05d}.csv", delimiter=",",
                          skiprows=1, dtype=int, ndmin=2)
        sequences.append(
            hmm.StateSequence(
                labels=hmm.run_length_decode([tuple(r) for r in rows]),
                log_likelihood=model["sequence_log_likelihoods"][ti],
                start_index=model["start_indices"][ti],
            )
        )
    return sequences


def _cmd_survival(args) -> int:
    manifest, records = trajio.load_ensemble(args.ensemble)
    label_dir = Path(args.labels)
    model = json.loads((label_dir / "model.json").read_text())
    sequences = _read_labels(label_dir, model, len(records))
    dwells = survival.extract_dwells(sequences, records[0].dt_sample)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kappa_a = manifest.plan().base.kappa_a
    result = {}
    for state, tag in ((hmm.LC1, "lc1"), (hmm.LC2, "lc2")):
        rng = np.random.default_rng(stream_seed(args.seed, f"bootstrap/{tag}"))
        try:
            fit, curve, sel = survival.fit_direction_rate(
                dwells, state, threshold=args.t0_threshold,
                min_records=args.min_records, n_boot=args.n_boot, rng=rng,
            )
            result[tag] = {
                "k": fit.k, "k_over_kappa_a": fit.k / kappa_a, "t0": fit.t0,
                "ci_low": fit.ci_low, "ci_high": fit.ci_high,
                "n_events": fit.n_events, "n_censored": fit.n_censored,
            }
        except LcswitchError as exc:
            curve = survival.kaplan_meier(survival.incident(dwells, state))
            result[tag] = {"flagged": str(exc)}
        _write_csv(out / f"km-{tag}.csv",
                   ["time", "survival", "at_risk", "events"],
                   zip(curve.times, curve.survival, curve.at_risk, curve.events))
    (out / "rates.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_fit_rates(args) -> int:
    table = np.loadtxt(args.table, delimiter=",", skiprows=1, ndmin=2)
    # columns: aleph, k12, k21[, sigma12, sigma21]
    have_sigma = table.shape[1] >= 5
    out = {}
    for col, tag in ((1, "12"), (2, "21")):
        pts = []
        for row in table:
            sigma = row[2 + col] if have_sigma else 1.0
            pts.append((row[0], row[col], sigma))
        form = args.form if tag == "21" else ratefit.SINGLE
        fit = ratefit.fit_scaling(pts, form, direction=tag)
        out[tag] = {
            "form": fit.form, "params": fit.params, "stderr": fit.stderr,
            "warnings": list(fit.warnings),
        }
    alephs = table[:, 0]
    xs = np.linspace(alephs.min(), alephs.max(), args.n_eff_points)
    fits = {tag: out[tag] for tag in out}
    out_path = Path(args.out)
    out_path.mkdir(parents=True, exist_ok=True)
    (out_path / "scaling-fits.json").write_text(
        json.dumps(fits, indent=2, sort_keys=True) + "\n"
    )
    rows = []
    from .ratefit import ScalingFit

    for x in xs:
        row = [float(x)]
        for tag in ("12", "21"):
            fit = ScalingFit(direction=tag, form=out[tag]["form"],
                             params=out[tag]["params"], stderr=out[tag]["stderr"],
                             gradient_norm=0.0, residual_norm=0.0)
            row.append(float(fit.log_slope(x)))
        rows.append(row)
    _write_csv(out_path / "effective-action.csv",
               ["aleph", "s_eff_12", "s_eff_21"], rows)
    print(json.dumps(fits, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_escape_geometry(args) -> int:
    manifest, records = trajio.load_ensemble(args.ensemble)
    label_dir = Path(args.labels)
    model = json.loads((label_dir / "model.json").read_text())
    sequences = _read_labels(label_dir, model, len(records))
    kappa_a = manifest.plan().base.kappa_a
    direction = escape.DIRECTION_12 if args.direction == "12" else escape.DIRECTION_21
    dt = records[0].dt_sample
    pre_min = args.pre_min if args.pre_min is not None else escape.PRE_MIN_OVER_KAPPA / kappa_a
    post_min = args.post_min if args.post_min is not None else \
        escape.POST_MIN_PHASE_OVER_KAPPA / kappa_a
    events = escape.find_events(sequences, dt, pre_min, post_min, direction=direction)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / f"events-{args.direction}.csv",
               ["trajectory", "t_switch", "pre_dwell", "post_dwell"],
               [(e.trajectory, e.t_switch, e.pre_dwell, e.post_dwell) for e in events])
    if not events:
        print("no events pass the filters; wrote empty event table")
        return EXIT_OK
    hist = escape.phase_histogram(events, records, sequences, direction,
                                  phase_bins=args.phase_bins, kappa_a=kappa_a)
    centers = 0.5 * (hist.phase_edges[:-1] + hist.phase_edges[1:])
    _write_csv(out / f"phase-hist-{args.direction}.csv",
               ["tau"] + [format(c, ".17g") for c in centers],
               [(t, *row) for t, row in zip(hist.tau, hist.values)])
    stationary = {
        s: escape.stationary_phase_distribution(records, sequences, s,
                                                phase_bins=args.phase_bins)
        for s in (hmm.LC1, hmm.LC2)
    }
    hz = escape.hazard(hist, stationary)
    _write_csv(out / f"hazard-{args.direction}.csv",
               ["phase_lo", "phase_hi", "hazard"],
               zip(hz.phase_edges[:-1], hz.phase_edges[1:], hz.values))
    if args.tau_snapshots:
        taus = [float(v) for v in args.tau_snapshots.split(",")]
        snaps = escape.conditioned_density(events, records, sequences, taus,
                                           projection="optical")
        for sn in snaps:
            _write_csv(out / f"cond-density-{args.direction}-tau{sn.tau:+g}.csv",
                       ["x_edges"] + [format(v, ".17g") for v in sn.x_edges],
                       [["y_edges", *sn.y_edges]]
                       + [[i, *row] for i, row in enumerate(sn.values)])
    print(f"wrote escape geometry for {len(events)} events to {out}")
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    config = RunConfig.from_json_file(args.config)
    overrides = {}
    if args.out is not None:
        overrides["out_root"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        doc = json.loads(config.to_json())
        doc.update(overrides)
        config = RunConfig.from_dict(doc)
    manifest = run_pipeline(config)
    print(f"pipeline complete; manifest hash {manifest.manifest_hash()}")
    return EXIT_OK


def _cmd_report(args) -> int:
    fp = report(args.run)
    print(f"wrote {fp}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lcswitch",
        description="Switching statistics between coexisting limit cycles "
                    "from stochastic wave-function trajectories",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a trajectory ensemble")
    _add_param_flags(p)
    p.add_argument("--aleph", type=float, required=True)
    p.add_argument("--scheme", choices=["a", "b"], default="a")
    p.add_argument("--n-traj", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-transient", type=float, default=None)
    p.add_argument("--t-total", type=float, default=None)
    p.add_argument("--cutoffs", required=True, metavar="NA,NB")
    p.add_argument("--sample-dt", type=float, default=None)
    p.add_argument("--init-radius", type=float, default=5.0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("meanfield-scan", help="classify attractors on a parameter grid")
    _add_param_flags(p)
    p.add_argument("--delta-a-range", nargs=3, type=float, required=True,
                   metavar=("LO", "HI", "N"))
    p.add_argument("--f-range", nargs=3, type=float, required=True,
                   metavar=("LO", "HI", "N"))
    p.add_argument("--grid-resolution", type=int, default=None,
                   help="deprecated alias; ranges carry the resolution")
    p.add_argument("--n-init", type=int, default=157)
    p.add_argument("--t-final", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_meanfield_scan)

    p = sub.add_parser("segment", help="train the two-state model and decode labels")
    p.add_argument("--ensemble", required=True, help="ensemble manifest path")
    p.add_argument("--covariance", choices=["full", "diag"], default="full")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_segment)

    p = sub.add_parser("survival", help="dwell statistics and switching rates")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--labels", required=True, help="segmentation output directory")
    p.add_argument("--t0-threshold", type=float, default=0.04)
    p.add_argument("--min-records", type=int, default=20)
    p.add_argument("--n-boot", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_survival)

    p = sub.add_parser("fit-rates", help="fit rate-vs-fluctuation scaling laws")
    p.add_argument("--table", required=True,
                   help="CSV of aleph,k12,k21[,sigma12,sigma21]")
    p.add_argument("--form", choices=[ratefit.SINGLE, ratefit.BIEXP],
                   default=ratefit.BIEXP, help="form for the 2->1 direction")
    p.add_argument("--n-eff-points", type=int, default=50)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_fit_rates)

    p = sub.add_parser("escape-geometry", help="event-conditioned phase analysis")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--direction", choices=["12", "21"], required=True)
    p.add_argument("--pre-min", type=float, default=None)
    p.add_argument("--post-min", type=float, default=None)
    p.add_argument("--tau-snapshots", default=None,
                   help="comma-separated lags (trajectory time units)")
    p.add_argument("--phase-bins", type=int, default=72)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_escape_geometry)

    p = sub.add_parser("pipeline", help="run every stage from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override out_root")
    p.add_argument("--seed", type=int, default=None, help="override master seed")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=_cmd_pipeline)

    p = sub.add_parser("report", help="summarize a pipeline run")
    p.add_argument("--run", required=True, help="pipeline output root")
    p.set_defaults(fn=_cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except StageFailureError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except LcswitchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
