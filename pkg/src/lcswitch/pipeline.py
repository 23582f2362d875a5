"""End-to-end batch pipeline: simulate -> segment -> survival -> fit-rates ->
escape-geometry, with content-addressed stage skipping and a run manifest.

Every stochastic stage draws from a named sub-stream of the master seed, so a
rerun with the same configuration reproduces every numeric artifact byte for
byte.  A stage is skipped when its recorded inputs hash is unchanged and its
outputs verify against their checksums; an output that exists but no longer
matches its checksum is treated as tampering and aborts the run.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, escape, hmm, ratefit, survival, trajio
from .errors import (
    ConfigError,
    FitRefusedError,
    IntegrityError,
    NoLinearTailError,
    StageFailureError,
)
from .params import FockCutoffs, ScalingPlan, Scheme, SystemParams, WORKING_POINT
from .qjump import EnsembleSpec, InitialStatePolicy, simulate_ensemble
from .trajio import sha256_file

#: Fluctuation strengths below this wash out the metastable structure; rate
#: pipelines refuse them unless explicitly overridden.
MELTED_ALEPH = 2.0


@dataclass(frozen=True)
class AnalysisOptions:
    covariance: str = "full"
    hmm_max_iter: int = 500
    n_boot: int = 1000
    t0_threshold: float = 0.04
    min_rate_records: int = 20
    phase_bins: int = 72
    density_bins: int = 96
    tau_snapshots_over_kappa: tuple[float, ...] = (-5.0, -0.01, 0.5, 10.0)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration of one pipeline run."""

    params: SystemParams
    alephs: tuple[float, ...]
    cutoffs: tuple[tuple[int, int], ...]
    scheme: str = "a"
    n_traj: int = 8
    t_transient: float | None = None
    t_total_post: float | None = None
    dt_sample: float | None = None
    init_radius: float = 5.0
    analysis: AnalysisOptions = AnalysisOptions()
    seed: int = 0
    out_root: str = "run"
    workers: int = 1
    allow_melted: bool = False

    def __post_init__(self):
        if not self.alephs:
            raise ConfigError("need at least one aleph value")
        if len(self.cutoffs) not in (1, len(self.alephs)):
            raise ConfigError("cutoffs must be one pair or one pair per aleph")
        if min(self.alephs) < MELTED_ALEPH and not self.allow_melted:
            raise ConfigError(
                f"aleph {min(self.alephs)} is inside the melted regime "
                f"(< {MELTED_ALEPH}); set allow_melted to proceed"
            )
        if self.scheme not in ("a", "b"):
            raise ConfigError(f"scheme must be 'a' or 'b', got {self.scheme!r}")

    def cutoffs_for(self, i: int) -> FockCutoffs:
        pair = self.cutoffs[i] if len(self.cutoffs) > 1 else self.cutoffs[0]
        return FockCutoffs(*pair)

    def plan_for(self, aleph: float) -> ScalingPlan:
        return ScalingPlan(aleph=aleph, scheme=Scheme(self.scheme), base=self.params)

    def spec(self) -> EnsembleSpec:
        return EnsembleSpec(
            n_traj=self.n_traj,
            t_transient=self.t_transient,
            t_total_post=self.t_total_post,
            dt_sample=self.dt_sample,
            policy=InitialStatePolicy(kind="disk", radius=self.init_radius),
        )

    def to_json(self) -> str:
        doc = {
            "params": asdict(self.params),
            "alephs": list(self.alephs),
            "cutoffs": [list(c) for c in self.cutoffs],
            "scheme": self.scheme,
            "n_traj": self.n_traj,
            "t_transient": self.t_transient,
            "t_total_post": self.t_total_post,
            "dt_sample": self.dt_sample,
            "init_radius": self.init_radius,
            "analysis": asdict(self.analysis),
            "seed": self.seed,
            "out_root": self.out_root,
            "workers": self.workers,
            "allow_melted": self.allow_melted,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        try:
            params = SystemParams(**{**WORKING_POINT, **doc.get("params", {})})
            analysis_doc = dict(doc.get("analysis", {}))
            if "tau_snapshots_over_kappa" in analysis_doc:
                analysis_doc["tau_snapshots_over_kappa"] = tuple(
                    analysis_doc["tau_snapshots_over_kappa"]
                )
            analysis = AnalysisOptions(**analysis_doc)
            return cls(
                params=params,
                alephs=tuple(float(a) for a in doc["alephs"]),
                cutoffs=tuple(tuple(int(v) for v in c) for c in doc["cutoffs"]),
                scheme=doc.get("scheme", "a"),
                n_traj=int(doc.get("n_traj", 8)),
                t_transient=doc.get("t_transient"),
                t_total_post=doc.get("t_total_post"),
                dt_sample=doc.get("dt_sample"),
                init_radius=float(doc.get("init_radius", 5.0)),
                analysis=analysis,
                seed=int(doc.get("seed", 0)),
                out_root=doc.get("out_root", "run"),
                workers=int(doc.get("workers", 1)),
                allow_melted=bool(doc.get("allow_melted", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    @classmethod
    def from_json_file(cls, path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)


def stream_seed(master: int, name: str) -> int:
    """64-bit seed for a named random sub-stream of the master seed."""
    ss = np.random.SeedSequence(entropy=(int(master), zlib.crc32(name.encode())))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _sha256_text(text: str) -> str:
    import hashlib

    return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class StageRecord:
    name: str
    status: str  # done | skipped | failed
    inputs_hash: str
    outputs: list[dict] = field(default_factory=list)
    seconds: float = 0.0
    note: str = ""


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str
    stages: list[StageRecord] = field(default_factory=list)

    def stage(self, name: str) -> StageRecord | None:
        for s in self.stages:
            if s.name == name:
                return s
        return None

    def manifest_hash(self) -> str:
        """Hash of the run content: config plus every output checksum.

        Timing and skip status are excluded so reruns hash identically.
        """
        parts = [self.config_hash]
        for s in sorted(self.stages, key=lambda s: s.name):
            parts.append(s.name)
            parts.append(s.inputs_hash)
            for out in sorted(s.outputs, key=lambda o: o["path"]):
                parts.append(out["path"])
                parts.append(out["sha256"])
        return _sha256_text("\n".join(parts))

    def to_json(self) -> str:
        doc = {
            "format": "lcswitch-run-manifest",
            "version": 1,
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "manifest_hash": self.manifest_hash(),
            "stages": [asdict(s) for s in self.stages],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        doc = json.loads(text)
        if doc.get("format") != "lcswitch-run-manifest":
            raise IntegrityError("not a run manifest")
        m = cls(config_hash=doc["config_hash"], tool_version=doc["tool_version"])
        for s in doc["stages"]:
            m.stages.append(
                StageRecord(
                    name=s["name"],
                    status=s["status"],
                    inputs_hash=s["inputs_hash"],
                    outputs=s["outputs"],
                    seconds=s["seconds"],
                    note=s.get("note", ""),
                )
            )
        return m


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, float):
                cells.append(format(v, ".17g"))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def _checksum_outputs(root: Path, paths: list[Path]) -> list[dict]:
    return [
        {"path": str(p.relative_to(root)), "sha256": sha256_file(p)}
        for p in sorted(paths)
    ]


class Pipeline:
    """Stage runner with content-addressed skipping."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.root = Path(config.out_root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.config_json = config.to_json()
        self.config_hash = _sha256_text(self.config_json)
        (self.root / "config.json").write_text(self.config_json)
        self.manifest_path = self.root / "manifest.json"
        self.old_manifest = None
        if self.manifest_path.exists():
            self.old_manifest = RunManifest.from_json(self.manifest_path.read_text())
            if self.old_manifest.config_hash != self.config_hash:
                self.old_manifest = None  # config changed: nothing reusable
        self.manifest = RunManifest(config_hash=self.config_hash, tool_version=__version__)

    def _flush(self) -> None:
        self.manifest_path.write_text(self.manifest.to_json())

    def _try_skip(self, name: str, inputs_hash: str) -> StageRecord | None:
        if self.old_manifest is None:
            return None
        old = self.old_manifest.stage(name)
        if old is None or old.status == "failed" or old.inputs_hash != inputs_hash:
            return None
        for out in old.outputs:
            fp = self.root / out["path"]
            if not fp.exists():
                return None  # deleted output: recompute
            if sha256_file(fp) != out["sha256"]:
                raise IntegrityError(
                    f"stage {name}: checksum mismatch for {out['path']}"
                )
        return StageRecord(
            name=name,
            status="skipped",
            inputs_hash=inputs_hash,
            outputs=old.outputs,
            seconds=0.0,
            note="outputs verified; inputs unchanged",
        )

    def run_stage(self, name: str, inputs_hash: str, fn) -> StageRecord:
        skipped = self._try_skip(name, inputs_hash)
        if skipped is not None:
            self.manifest.stages.append(skipped)
            self._flush()
            return skipped
        t0 = time.monotonic()
        try:
            outputs, note = fn()
        except IntegrityError:
            raise
        except Exception as exc:
            rec = StageRecord(
                name=name, status="failed", inputs_hash=inputs_hash,
                seconds=time.monotonic() - t0, note=f"{type(exc).__name__}: {exc}",
            )
            self.manifest.stages.append(rec)
            self._flush()
            raise StageFailureError(f"stage {name} failed: {exc}") from exc
        rec = StageRecord(
            name=name,
            status="done",
            inputs_hash=inputs_hash,
            outputs=_checksum_outputs(self.root, outputs),
            seconds=time.monotonic() - t0,
            note=note,
        )
        self.manifest.stages.append(rec)
        self._flush()
        return rec

    def outputs_hash(self, stage_name: str) -> str:
        rec = self.manifest.stage(stage_name)
        if rec is None:
            raise StageFailureError(f"stage {stage_name} has not run")
        return _sha256_text(
            "\n".join(f"{o['path']}:{o['sha256']}" for o in rec.outputs)
        )


def _simulate_stage(pipe: Pipeline, i: int, aleph: float):
    cfg = pipe.config
    out_dir = pipe.root / f"aleph-{aleph:g}" / "ensemble"

    def body():
        plan = cfg.plan_for(aleph)
        records = simulate_ensemble(
            cfg.spec(), plan, cfg.cutoffs_for(i),
            master_seed=stream_seed(cfg.seed, f"simulate/{aleph:g}"),
            workers=cfg.workers,
        )
        trajio.write_ensemble(out_dir, records, plan, cfg.seed)
        outputs = sorted(out_dir.glob("traj-*.lcst")) + [out_dir / "manifest.json"]
        n_warn = sum(r.truncation_warning for r in records)
        return outputs, f"{len(records)} trajectories, {n_warn} truncation warnings"

    inputs = _sha256_text(
        json.dumps(
            {
                "aleph": aleph,
                "cutoffs": [cfg.cutoffs_for(i).n_a_max, cfg.cutoffs_for(i).n_b_max],
                "seed": cfg.seed,
                "spec": [cfg.n_traj, cfg.t_transient, cfg.t_total_post,
                         cfg.dt_sample, cfg.init_radius],
                "params": asdict(cfg.params),
                "scheme": cfg.scheme,
            },
            sort_keys=True,
        )
    )
    return pipe.run_stage(f"simulate/{aleph:g}", inputs, body)


def _segment_stage(pipe: Pipeline, aleph: float):
    cfg = pipe.config
    ens_dir = pipe.root / f"aleph-{aleph:g}" / "ensemble"
    out_dir = pipe.root / f"aleph-{aleph:g}" / "segmentation"

    def body():
        _, records = trajio.load_ensemble(ens_dir / "manifest.json")
        controls = hmm.TrainingControls(
            max_iter=cfg.analysis.hmm_max_iter, covariance=cfg.analysis.covariance
        )
        obs = hmm.build_observations(records)
        params0 = hmm.kmeans_init(obs, seed=stream_seed(cfg.seed, f"kmeans/{aleph:g}"))
        result = hmm.baum_welch(params0, obs, controls)
        sequences = hmm.decode(result.params, obs, records)
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs = []
        for ti, seq in enumerate(sequences):
            fp = out_dir / f"labels-{ti:05d}.csv"
            _write_csv(
                fp,
                ["start_index", "length", "state"],
                hmm.run_length_encode(seq.labels),
            )
            outputs.append(fp)
        model = {
            "pi": result.params.pi.tolist(),
            "a": result.params.a.tolist(),
            "means": result.params.means.tolist(),
            "covs": result.params.covs.tolist(),
            "feature_mean": obs.mean.tolist(),
            "feature_std": obs.std.tolist(),
            "log_likelihood": result.log_likelihood,
            "trace": list(result.trace),
            "n_iter": result.n_iter,
            "converged": result.converged,
            "separation_reliable": result.separation_reliable,
            "start_indices": [s.start_index for s in sequences],
            "sequence_log_likelihoods": [s.log_likelihood for s in sequences],
        }
        fp = out_dir / "model.json"
        fp.write_text(json.dumps(model, indent=2, sort_keys=True) + "\n")
        outputs.append(fp)
        note = "separation reliable" if result.separation_reliable else \
            "WARNING: emission overlap, segmentation unreliable"
        return outputs, note

    inputs = _sha256_text(
        pipe.outputs_hash(f"simulate/{aleph:g}")
        + json.dumps([cfg.analysis.covariance, cfg.analysis.hmm_max_iter, cfg.seed])
    )
    return pipe.run_stage(f"segment/{aleph:g}", inputs, body)


def _load_segmentation(pipe: Pipeline, aleph: float):
    ens_dir = pipe.root / f"aleph-{aleph:g}" / "ensemble"
    seg_dir = pipe.root / f"aleph-{aleph:g}" / "segmentation"
    _, records = trajio.load_ensemble(ens_dir / "manifest.json")
    model = json.loads((seg_dir / "model.json").read_text())
    sequences = []
    for ti in range(len(records)):
        rows = np.loadtxt(seg_dir / f"labels-{ti:05d}.csv", delimiter=",", skiprows=1,
                          dtype=int, ndmin=2)
        labels = hmm.run_length_decode([tuple(r) for r in rows])
        sequences.append(
            hmm.StateSequence(
                labels=labels,
                log_likelihood=model["sequence_log_likelihoods"][ti],
                start_index=model["start_indices"][ti],
            )
        )
    return records, sequences, model


def _survival_stage(pipe: Pipeline, aleph: float):
    cfg = pipe.config
    out_dir = pipe.root / f"aleph-{aleph:g}" / "survival"

    def body():
        records, sequences, _model = _load_segmentation(pipe, aleph)
        dt = records[0].dt_sample
        dwells = survival.extract_dwells(sequences, dt)
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs = []
        rates = {}
        kappa_a = cfg.params.kappa_a
        for state, tag in ((hmm.LC1, "lc1"), (hmm.LC2, "lc2")):
            rng = np.random.default_rng(
                stream_seed(cfg.seed, f"bootstrap/{aleph:g}/{tag}")
            )
            try:
                fit, curve, sel = survival.fit_direction_rate(
                    dwells, state,
                    threshold=cfg.analysis.t0_threshold,
                    min_records=cfg.analysis.min_rate_records,
                    n_boot=cfg.analysis.n_boot,
                    rng=rng,
                )
                rates[tag] = {
                    "k": fit.k,
                    "k_over_kappa_a": fit.k / kappa_a,
                    "t0": fit.t0,
                    "ci_low": fit.ci_low,
                    "ci_high": fit.ci_high,
                    "n_events": fit.n_events,
                    "n_censored": fit.n_censored,
                    "t0_metric": sel.metric,
                    "t0_quantile": sel.quantile,
                }
            except (FitRefusedError, NoLinearTailError) as exc:
                curve = survival.kaplan_meier(survival.incident(dwells, state))
                rates[tag] = {"flagged": f"{type(exc).__name__}: {exc}"}
            fp = out_dir / f"km-{tag}.csv"
            _write_csv(
                fp,
                ["time", "survival", "at_risk", "events"],
                zip(curve.times, curve.survival, curve.at_risk, curve.events),
            )
            outputs.append(fp)
        fp = out_dir / "rates.json"
        fp.write_text(json.dumps(rates, indent=2, sort_keys=True) + "\n")
        outputs.append(fp)
        note = ", ".join(
            f"{tag}: " + (f"k={v['k']:.4g}" if "k" in v else "flagged")
            for tag, v in rates.items()
        )
        return outputs, note

    inputs = _sha256_text(
        pipe.outputs_hash(f"segment/{aleph:g}")
        + json.dumps([cfg.analysis.t0_threshold, cfg.analysis.min_rate_records,
                      cfg.analysis.n_boot, cfg.seed])
    )
    return pipe.run_stage(f"survival/{aleph:g}", inputs, body)


def _escape_stage(pipe: Pipeline, aleph: float):
    cfg = pipe.config
    out_dir = pipe.root / f"aleph-{aleph:g}" / "escape"
    kappa_a = cfg.params.kappa_a

    def body():
        records, sequences, _model = _load_segmentation(pipe, aleph)
        dt = records[0].dt_sample
        out_dir.mkdir(parents=True, exist_ok=True)
        outputs = []
        pre_min = escape.PRE_MIN_OVER_KAPPA / kappa_a
        post_density = escape.POST_MIN_DENSITY_OVER_KAPPA / kappa_a
        post_phase = escape.POST_MIN_PHASE_OVER_KAPPA / kappa_a
        stationary = {}
        for state in (hmm.LC1, hmm.LC2):
            stationary[state] = escape.stationary_phase_distribution(
                records, sequences, state, phase_bins=cfg.analysis.phase_bins
            )
        fp = out_dir / "stationary-phase.csv"
        edges = stationary[hmm.LC1].phase_edges
        _write_csv(
            fp,
            ["phase_lo", "phase_hi", "density_lc1", "density_lc2"],
            zip(edges[:-1], edges[1:], stationary[hmm.LC1].values,
                stationary[hmm.LC2].values),
        )
        outputs.append(fp)
        summary = {}
        for direction, tag in ((escape.DIRECTION_12, "12"), (escape.DIRECTION_21, "21")):
            events_phase = escape.find_events(
                sequences, dt, pre_min, post_phase, direction=direction
            )
            events_density = escape.find_events(
                sequences, dt, pre_min, post_density, direction=direction
            )
            fp = out_dir / f"events-{tag}.csv"
            _write_csv(
                fp,
                ["trajectory", "t_switch", "pre_dwell", "post_dwell"],
                [(e.trajectory, e.t_switch, e.pre_dwell, e.post_dwell)
                 for e in events_density],
            )
            outputs.append(fp)
            summary[tag] = {
                "n_events_phase": len(events_phase),
                "n_events_density": len(events_density),
            }
            if not events_phase:
                summary[tag]["flagged"] = "no events pass the phase filters"
                continue
            hist = escape.phase_histogram(
                events_phase, records, sequences, direction,
                phase_bins=cfg.analysis.phase_bins, kappa_a=kappa_a,
            )
            fp = out_dir / f"phase-hist-{tag}.csv"
            header = ["tau"] + [format(c, ".17g") for c in
                                0.5 * (hist.phase_edges[:-1] + hist.phase_edges[1:])]
            _write_csv(fp, header, [(t, *row) for t, row in zip(hist.tau, hist.values)])
            outputs.append(fp)
            try:
                hz = escape.hazard(hist, stationary)
                fp = out_dir / f"hazard-{tag}.csv"
                _write_csv(
                    fp,
                    ["phase_lo", "phase_hi", "hazard"],
                    zip(hz.phase_edges[:-1], hz.phase_edges[1:], hz.values),
                )
                outputs.append(fp)
            except escape.DegenerateHazardError as exc:
                summary[tag]["hazard_flagged"] = str(exc)
            if events_density:
                snaps = escape.conditioned_density(
                    events_density, records, sequences,
                    [t / kappa_a for t in cfg.analysis.tau_snapshots_over_kappa],
                    projection="optical", bins=cfg.analysis.density_bins,
                )
                for sn in snaps:
                    fp = out_dir / f"cond-density-{tag}-tau{sn.tau:+g}.csv"
                    _write_csv(
                        fp,
                        ["x_edges"] + [format(v, ".17g") for v in sn.x_edges],
                        [["y_edges", *sn.y_edges]]
                        + [[i, *row] for i, row in enumerate(sn.values)],
                    )
                    outputs.append(fp)
        fp = out_dir / "summary.json"
        fp.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        outputs.append(fp)
        note = "; ".join(
            f"{tag}: {v['n_events_phase']} phase events" for tag, v in summary.items()
        )
        return outputs, note

    inputs = _sha256_text(
        pipe.outputs_hash(f"segment/{aleph:g}")
        + json.dumps([cfg.analysis.phase_bins, cfg.analysis.density_bins,
                      list(cfg.analysis.tau_snapshots_over_kappa)])
    )
    return pipe.run_stage(f"escape/{aleph:g}", inputs, body)


def _rates_table_stage(pipe: Pipeline):
    cfg = pipe.config

    def body():
        rows = []
        for aleph in cfg.alephs:
            doc = json.loads(
                (pipe.root / f"aleph-{aleph:g}" / "survival" / "rates.json").read_text()
            )
            lc1, lc2 = doc["lc1"], doc["lc2"]
            if "k" in lc1 and "k" in lc2:
                lam = lc1["k_over_kappa_a"] + lc2["k_over_kappa_a"]
                rows.append(
                    (aleph, lc1["k_over_kappa_a"], lc2["k_over_kappa_a"],
                     (lc1["ci_high"] - lc1["ci_low"]) / (2 * 1.96) / cfg.params.kappa_a,
                     (lc2["ci_high"] - lc2["ci_low"]) / (2 * 1.96) / cfg.params.kappa_a,
                     lam)
                )
        fp = pipe.root / "rates-table.csv"
        _write_csv(
            fp,
            ["aleph", "k12_over_kappa", "k21_over_kappa",
             "sigma12_over_kappa", "sigma21_over_kappa", "lambda_eff_over_kappa"],
            rows,
        )
        outputs = [fp]
        note = f"{len(rows)} aleph points"
        if len(rows) >= 3:
            pts12 = [(r[0], r[1], max(r[3], 1e-12)) for r in rows]
            pts21 = [(r[0], r[2], max(r[4], 1e-12)) for r in rows]
            fits = {}
            fits["12"] = asdict_fit(ratefit.fit_scaling(pts12, ratefit.SINGLE, "12"))
            form21 = ratefit.BIEXP if len(rows) >= 5 else ratefit.SINGLE
            fits["21"] = asdict_fit(ratefit.fit_scaling(pts21, form21, "21"))
            fp2 = pipe.root / "scaling-fits.json"
            fp2.write_text(json.dumps(fits, indent=2, sort_keys=True) + "\n")
            outputs.append(fp2)
            note += "; scaling fitted"
        return outputs, note

    inputs = _sha256_text(
        "\n".join(pipe.outputs_hash(f"survival/{a:g}") for a in cfg.alephs)
    )
    return pipe.run_stage("fit-rates", inputs, body)


def asdict_fit(fit: ratefit.ScalingFit) -> dict:
    return {
        "direction": fit.direction,
        "form": fit.form,
        "params": fit.params,
        "stderr": fit.stderr,
        "gradient_norm": fit.gradient_norm,
        "residual_norm": fit.residual_norm,
        "warnings": list(fit.warnings),
    }


def run_pipeline(config: RunConfig) -> RunManifest:
    """Execute all stages in order; see the module docstring for skipping."""
    pipe = Pipeline(config)
    for i, aleph in enumerate(config.alephs):
        _simulate_stage(pipe, i, aleph)
        _segment_stage(pipe, aleph)
        _survival_stage(pipe, aleph)
        _escape_stage(pipe, aleph)
    _rates_table_stage(pipe)
    return pipe.manifest


def report(out_root: str | Path) -> Path:
    """Machine-readable summary of a completed (or partial) run.

    Regeneration from the same artifacts is byte-identical; gaps are flagged
    rather than fatal.
    """
    root = Path(out_root)
    manifest = RunManifest.from_json((root / "manifest.json").read_text())
    config = RunConfig.from_json_file(root / "config.json")
    rep_dir = root / "report"
    rep_dir.mkdir(exist_ok=True)
    summary: dict = {
        "tool_version": manifest.tool_version,
        "config_hash": manifest.config_hash,
        "manifest_hash": manifest.manifest_hash(),
        "alephs": list(config.alephs),
        "stages": {s.name: s.status for s in manifest.stages},
        "gaps": [],
        "rates": [],
    }
    for aleph in config.alephs:
        rates_fp = root / f"aleph-{aleph:g}" / "survival" / "rates.json"
        if not rates_fp.exists():
            summary["gaps"].append(f"missing rates for aleph {aleph:g}")
            continue
        doc = json.loads(rates_fp.read_text())
        entry = {"aleph": aleph}
        for tag, key in (("lc1", "k12"), ("lc2", "k21")):
            if "k" in doc[tag]:
                entry[key + "_over_kappa"] = doc[tag]["k_over_kappa_a"]
            else:
                entry[key + "_flagged"] = doc[tag]["flagged"]
                summary["gaps"].append(f"aleph {aleph:g}: {key} flagged")
        if "k12_over_kappa" in entry and "k21_over_kappa" in entry:
            entry["lambda_eff_over_kappa"] = (
                entry["k12_over_kappa"] + entry["k21_over_kappa"]
            )
        esc_fp = root / f"aleph-{aleph:g}" / "escape" / "summary.json"
        if esc_fp.exists():
            entry["events"] = json.loads(esc_fp.read_text())
        summary["rates"].append(entry)
    fits_fp = root / "scaling-fits.json"
    if fits_fp.exists():
        summary["scaling_fits"] = json.loads(fits_fp.read_text())
    fp = rep_dir / "summary.json"
    fp.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return fp
