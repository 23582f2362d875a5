"""Bit-exact trajectory storage and the ensemble manifest.

One file per trajectory: a fixed-layout little-endian header, seven float64
sample columns (t, n_a, n_b, Re alpha, Im alpha, Re beta, Im beta), then the
jump table (float64 times followed by one channel byte per jump).  The
manifest is a JSON document listing the files with checksums, the generating
parameters, and any truncation warnings.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import IntegrityError, InvalidParameterError
from .params import FockCutoffs, ScalingPlan, Scheme, SystemParams
from .qjump import TrajectoryRecord

_MAGIC = b"LCSWTRAJ"
_VERSION = 1
# magic, version, seed, aleph, scheme byte, n_a_max, n_b_max,
# dt_sample, transient_cut, truncation byte, n_samples, n_jumps
_HEADER = struct.Struct("<8sIQdBIIddBQQ")

_COLUMNS = ("t", "n_a", "n_b", "re_alpha", "im_alpha", "re_beta", "im_beta")


def write_trajectory(path: str | Path, rec: TrajectoryRecord) -> None:
    path = Path(path)
    scheme_byte = 0 if rec.scheme == "a" else 1
    cols = np.empty((7, rec.n_samples), dtype="<f8")
    cols[0] = rec.t
    cols[1] = rec.n_a
    cols[2] = rec.n_b
    cols[3] = rec.alpha.real
    cols[4] = rec.alpha.imag
    cols[5] = rec.beta.real
    cols[6] = rec.beta.imag
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        rec.seed,
        rec.aleph,
        scheme_byte,
        rec.cutoffs[0],
        rec.cutoffs[1],
        rec.dt_sample,
        rec.transient_cut,
        1 if rec.truncation_warning else 0,
        rec.n_samples,
        len(rec.jump_times),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(cols.tobytes())
        fh.write(np.asarray(rec.jump_times, dtype="<f8").tobytes())
        fh.write(np.asarray(rec.jump_channels, dtype=np.uint8).tobytes())


def read_trajectory(path: str | Path) -> TrajectoryRecord:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size or raw[:8] != _MAGIC:
        raise IntegrityError(f"{path} is not a trajectory file")
    (
        _magic, version, seed, aleph, scheme_byte, n_a_max, n_b_max,
        dt_sample, transient_cut, trunc, n_samples, n_jumps,
    ) = _HEADER.unpack_from(raw)
    if version != _VERSION:
        raise IntegrityError(f"{path}: unsupported format version {version}")
    need = _HEADER.size + 7 * 8 * n_samples + 9 * n_jumps
    if len(raw) != need:
        raise IntegrityError(f"{path}: size {len(raw)} != expected {need}")
    off = _HEADER.size
    cols = np.frombuffer(raw, dtype="<f8", count=7 * n_samples, offset=off)
    cols = cols.reshape(7, n_samples)
    off += 7 * 8 * n_samples
    jt = np.frombuffer(raw, dtype="<f8", count=n_jumps, offset=off).copy()
    off += 8 * n_jumps
    jc = np.frombuffer(raw, dtype=np.uint8, count=n_jumps, offset=off).copy()
    return TrajectoryRecord(
        seed=seed,
        aleph=aleph,
        scheme="a" if scheme_byte == 0 else "b",
        cutoffs=(n_a_max, n_b_max),
        dt_sample=dt_sample,
        transient_cut=transient_cut,
        t=cols[0].copy(),
        n_a=cols[1].copy(),
        n_b=cols[2].copy(),
        alpha=cols[3] + 1j * cols[4],
        beta=cols[5] + 1j * cols[6],
        jump_times=jt,
        jump_channels=jc,
        truncation_warning=bool(trunc),
    )


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    seed: int
    sha256: str
    n_samples: int
    n_jumps: int
    truncation_warning: bool


@dataclass(frozen=True)
class EnsembleManifest:
    """Index of one simulated ensemble: files, parameters, warnings."""

    aleph: float
    scheme: str
    base_params: dict
    cutoffs: tuple[int, int]
    dt_sample: float
    transient_cut: float
    master_seed: int
    n_traj: int
    files: tuple[ManifestEntry, ...]
    warnings: tuple[str, ...] = ()

    def to_json(self) -> str:
        doc = asdict(self)
        doc["format"] = "lcswitch-ensemble-manifest"
        doc["version"] = 1
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EnsembleManifest":
        doc = json.loads(text)
        if doc.get("format") != "lcswitch-ensemble-manifest":
            raise IntegrityError("not an ensemble manifest")
        files = tuple(ManifestEntry(**e) for e in doc["files"])
        return cls(
            aleph=doc["aleph"],
            scheme=doc["scheme"],
            base_params=doc["base_params"],
            cutoffs=tuple(doc["cutoffs"]),
            dt_sample=doc["dt_sample"],
            transient_cut=doc["transient_cut"],
            master_seed=doc["master_seed"],
            n_traj=doc["n_traj"],
            files=files,
            warnings=tuple(doc.get("warnings", ())),
        )

    def plan(self) -> ScalingPlan:
        return ScalingPlan(
            aleph=self.aleph,
            scheme=Scheme(self.scheme),
            base=SystemParams(**self.base_params),
        )

    def fock_cutoffs(self) -> FockCutoffs:
        return FockCutoffs(*self.cutoffs)


def write_ensemble(
    out_dir: str | Path,
    records: list[TrajectoryRecord],
    plan: ScalingPlan,
    master_seed: int,
) -> Path:
    """Store an ensemble as one file per trajectory plus ``manifest.json``.

    Returns the manifest path.
    """
    if not records:
        raise InvalidParameterError("no records to write")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    warnings = []
    for i, rec in enumerate(records):
        name = f"traj-{i:05d}.lcst"
        write_trajectory(out_dir / name, rec)
        entries.append(
            ManifestEntry(
                path=name,
                seed=rec.seed,
                sha256=sha256_file(out_dir / name),
                n_samples=rec.n_samples,
                n_jumps=len(rec.jump_times),
                truncation_warning=rec.truncation_warning,
            )
        )
        if rec.truncation_warning:
            warnings.append(f"{name}: population approached the Fock cutoff")
    r0 = records[0]
    manifest = EnsembleManifest(
        aleph=r0.aleph,
        scheme=r0.scheme,
        base_params=asdict(plan.base),
        cutoffs=r0.cutoffs,
        dt_sample=r0.dt_sample,
        transient_cut=r0.transient_cut,
        master_seed=master_seed,
        n_traj=len(records),
        files=tuple(entries),
        warnings=tuple(warnings),
    )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(manifest.to_json())
    return manifest_path


def load_ensemble(
    manifest_path: str | Path, verify: bool = True
) -> tuple[EnsembleManifest, list[TrajectoryRecord]]:
    """Load every trajectory listed in a manifest, verifying checksums."""
    manifest_path = Path(manifest_path)
    manifest = EnsembleManifest.from_json(manifest_path.read_text())
    root = manifest_path.parent
    records = []
    for entry in manifest.files:
        fp = root / entry.path
        if not fp.exists():
            raise IntegrityError(f"missing trajectory file {entry.path}")
        if verify and sha256_file(fp) != entry.sha256:
            raise IntegrityError(f"checksum mismatch for {entry.path}")
        records.append(read_trajectory(fp))
    return manifest, records
