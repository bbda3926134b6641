"""Parameter-space sampling, database generation, persistence, splitting, and scaling.

File formats
------------
Dataset: UTF-8 line-delimited JSON, one sequence per line:
    {"id": 0, "params": {"D": ..., "dx": ...}, "dt": ..., "qoi_dim": 1,
     "qoi": [[...], ...]}
with qoi row 0 the initial state. Reals carry 17 significant digits so a
write/read/write cycle is byte-identical.

Manifest: a single JSON document:
    {"format_version": 1, "space": [...], "seed": ..., "sampler": ...,
     "n": ..., "dt": ..., "n_steps": ..., "split": {"train": [...],
     "test": [...]}, "scaler": {"min": [...], "max": [...]}}
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .diffusion import DiffusionConfig, SimulationSequence, simulate
from .errors import MalformedFileError, FormatVersionError, ValidationError
from .numerics import RngStream, as_generator

FORMAT_VERSION = 1

# Child-stream ids, fixed so regeneration is reproducible.
STREAM_SAMPLE = 11
STREAM_SPLIT = 12


def fmt_real(x: float) -> str:
    """Serialize a float with 17 significant digits (lossless for float64)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class ParamDim:
    """One sampled dimension: bounds plus linear or log spacing."""

    name: str
    lo: float
    hi: float
    scale: str = "linear"

    def __post_init__(self):
        if self.scale not in ("linear", "log"):
            raise ValidationError(f"dimension '{self.name}': unknown scale '{self.scale}'")
        if not (self.lo < self.hi):
            raise ValidationError(f"dimension '{self.name}': lo must be < hi")
        if self.scale == "log" and self.lo <= 0:
            raise ValidationError(f"dimension '{self.name}': log scale requires lo > 0")


@dataclass(frozen=True)
class ParamSpace:
    dims: tuple[ParamDim, ...]

    def __post_init__(self):
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate dimension names: {names}")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def to_json_obj(self):
        return [
            {"name": d.name, "lo": d.lo, "hi": d.hi, "scale": d.scale} for d in self.dims
        ]

    @classmethod
    def from_json_obj(cls, obj) -> "ParamSpace":
        return cls(
            tuple(
                ParamDim(d["name"], float(d["lo"]), float(d["hi"]), d["scale"]) for d in obj
            )
        )


def sample_uniform(space: ParamSpace, n: int, rng) -> np.ndarray:
    """Draw n points, each dimension independent; log dims uniform in log space."""
    if n < 1:
        raise ValidationError(f"sample_uniform: n must be >= 1, got {n}")
    g = as_generator(rng)
    cols = []
    for dim in space.dims:
        if dim.scale == "linear":
            cols.append(g.uniform(dim.lo, dim.hi, n))
        else:
            cols.append(np.exp(g.uniform(math.log(dim.lo), math.log(dim.hi), n)))
    return np.column_stack(cols)


def sample_lhs(space: ParamSpace, n: int, rng) -> np.ndarray:
    """Latin hypercube draw: per dimension, one jittered point per stratum."""
    if n < 1:
        raise ValidationError(f"sample_lhs: n must be >= 1, got {n}")
    g = as_generator(rng)
    cols = []
    for dim in space.dims:
        perm = g.permutation(n)
        jitter = g.uniform(0.0, 1.0, n)
        u = (perm + jitter) / n
        if dim.scale == "linear":
            cols.append(dim.lo + u * (dim.hi - dim.lo))
        else:
            lo, hi = math.log(dim.lo), math.log(dim.hi)
            cols.append(np.exp(lo + u * (hi - lo)))
    return np.column_stack(cols)


_SAMPLERS = {"uniform": sample_uniform, "lhs": sample_lhs}


@dataclass
class Scaler:
    """Per-feature min-max map onto [0, 1], fitted on the training split.

    Features are the static parameters (in their declared order) followed by
    the qoi dimensions. Degenerate features (min == max) map to 0 and invert
    back to the constant. Values outside the fitted range are NOT clipped,
    so test or extrapolation data may leave [0, 1].
    """

    lo: np.ndarray
    hi: np.ndarray
    n_static: int

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValidationError("scaler min/max must be 1-D arrays of equal length")
        if np.any(self.hi < self.lo):
            raise ValidationError("scaler requires min <= max per feature")

    @property
    def n_features(self) -> int:
        return self.lo.shape[0]

    @property
    def qoi_dim(self) -> int:
        return self.n_features - self.n_static

    def _span(self) -> np.ndarray:
        span = self.hi - self.lo
        return np.where(span == 0.0, 1.0, span)

    def scale_features(self, values: np.ndarray, offset: int) -> np.ndarray:
        """Scale values whose columns are features [offset, offset + width)."""
        values = np.asarray(values, dtype=float)
        width = values.shape[-1]
        lo = self.lo[offset : offset + width]
        span = self._span()[offset : offset + width]
        out = (values - lo) / span
        degenerate = (self.hi - self.lo)[offset : offset + width] == 0.0
        if np.any(degenerate):
            out = np.where(degenerate, 0.0, out)
        return out

    def unscale_features(self, values: np.ndarray, offset: int) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        width = values.shape[-1]
        lo = self.lo[offset : offset + width]
        span = self._span()[offset : offset + width]
        return values * span + lo

    def scale_params(self, params_vec: np.ndarray) -> np.ndarray:
        return self.scale_features(params_vec, 0)

    def scale_qoi(self, qoi: np.ndarray) -> np.ndarray:
        return self.scale_features(qoi, self.n_static)

    def unscale_qoi(self, qoi: np.ndarray) -> np.ndarray:
        return self.unscale_features(qoi, self.n_static)

    def to_json_obj(self):
        return {"min": list(self.lo), "max": list(self.hi)}


def fit_scaler(sequences: Sequence[SimulationSequence]) -> Scaler:
    """Fit per-feature min/max over the given (training) sequences."""
    if not sequences:
        raise ValidationError("fit_scaler: empty training set")
    names = list(sequences[0].params.keys())
    qoi_dim = sequences[0].qoi_dim
    p = np.array([[s.params[k] for k in names] for s in sequences])
    lo = list(p.min(axis=0))
    hi = list(p.max(axis=0))
    q = np.concatenate([s.qoi for s in sequences], axis=0)
    lo += list(q.min(axis=0))
    hi += list(q.max(axis=0))
    return Scaler(np.array(lo), np.array(hi), n_static=len(names))


def apply_scaler(scaler: Scaler, seq: SimulationSequence) -> SimulationSequence:
    """Return a copy of the sequence with params and qoi mapped to scaled space."""
    names = list(seq.params.keys())
    scaled_p = scaler.scale_params(np.array([seq.params[k] for k in names]))
    return SimulationSequence(
        seq_id=seq.seq_id,
        params=dict(zip(names, (float(v) for v in scaled_p))),
        dt=seq.dt,
        qoi=scaler.scale_qoi(seq.qoi),
    )


def invert_scaler(scaler: Scaler, seq: SimulationSequence) -> SimulationSequence:
    names = list(seq.params.keys())
    raw_p = scaler.unscale_features(np.array([seq.params[k] for k in names]), 0)
    return SimulationSequence(
        seq_id=seq.seq_id,
        params=dict(zip(names, (float(v) for v in raw_p))),
        dt=seq.dt,
        qoi=scaler.unscale_qoi(seq.qoi),
    )


@dataclass
class Manifest:
    """Generation config, split membership, and the fitted scaler for a dataset."""

    space: ParamSpace
    seed: int
    sampler: str
    n: int
    dt: float
    n_steps: int
    split: dict[str, list[int]] = field(default_factory=lambda: {"train": [], "test": []})
    scaler: Scaler | None = None
    format_version: int = FORMAT_VERSION

    def save(self, path) -> None:
        Path(path).write_text(self.to_json_text(), encoding="utf-8")

    def to_json_text(self) -> str:
        space = json.dumps(
            [
                {"name": d.name, "lo": float(d.lo), "hi": float(d.hi), "scale": d.scale}
                for d in self.space.dims
            ],
            separators=(", ", ": "),
        )
        train = ", ".join(str(i) for i in self.split.get("train", []))
        test = ", ".join(str(i) for i in self.split.get("test", []))
        if self.scaler is None:
            lo_txt = hi_txt = ""
        else:
            lo_txt = ", ".join(fmt_real(v) for v in self.scaler.lo)
            hi_txt = ", ".join(fmt_real(v) for v in self.scaler.hi)
        return (
            "{"
            f'"format_version": {self.format_version}, '
            f'"space": {space}, '
            f'"seed": {self.seed}, '
            f'"sampler": "{self.sampler}", '
            f'"n": {self.n}, '
            f'"dt": {fmt_real(self.dt)}, '
            f'"n_steps": {self.n_steps}, '
            f'"split": {{"train": [{train}], "test": [{test}]}}, '
            f'"scaler": {{"min": [{lo_txt}], "max": [{hi_txt}]}}'
            "}\n"
        )

    @classmethod
    def load(cls, path) -> "Manifest":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (json.JSONDecodeError, OSError) as exc:
            raise MalformedFileError(f"manifest {path}: {exc}") from exc
        try:
            version = obj["format_version"]
            if version != FORMAT_VERSION:
                raise FormatVersionError(
                    f"manifest {path}: format_version {version}, expected {FORMAT_VERSION}"
                )
            space = ParamSpace.from_json_obj(obj["space"])
            scaler_obj = obj["scaler"]
            scaler = None
            if scaler_obj and scaler_obj.get("min"):
                scaler = Scaler(
                    np.array(scaler_obj["min"], dtype=float),
                    np.array(scaler_obj["max"], dtype=float),
                    n_static=len(space.dims),
                )
            return cls(
                space=space,
                seed=int(obj["seed"]),
                sampler=obj["sampler"],
                n=int(obj["n"]),
                dt=float(obj["dt"]),
                n_steps=int(obj["n_steps"]),
                split={
                    "train": [int(i) for i in obj["split"]["train"]],
                    "test": [int(i) for i in obj["split"]["test"]],
                },
                scaler=scaler,
                format_version=version,
            )
        except (KeyError, TypeError) as exc:
            raise MalformedFileError(f"manifest {path}: missing field {exc}") from exc


def _dataset_line(seq: SimulationSequence) -> str:
    params = ", ".join(f'"{k}": {fmt_real(v)}' for k, v in seq.params.items())
    qoi = ", ".join(
        "[" + ", ".join(fmt_real(v) for v in row) + "]" for row in seq.qoi
    )
    return (
        f'{{"id": {seq.seq_id}, "params": {{{params}}}, "dt": {fmt_real(seq.dt)}, '
        f'"qoi_dim": {seq.qoi_dim}, "qoi": [{qoi}]}}'
    )


def save_dataset(sequences: Iterable[SimulationSequence], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(_dataset_line(seq))
            fh.write("\n")


def load_dataset(path) -> list[SimulationSequence]:
    sequences = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                seq = SimulationSequence(
                    seq_id=int(obj["id"]),
                    params={k: float(v) for k, v in obj["params"].items()},
                    dt=float(obj["dt"]),
                    qoi=np.array(obj["qoi"], dtype=float),
                )
                if seq.qoi_dim != int(obj["qoi_dim"]):
                    raise MalformedFileError(
                        f"dataset {path}:{lineno}: qoi_dim {obj['qoi_dim']} "
                        f"does not match qoi rows of width {seq.qoi_dim}"
                    )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedFileError(f"dataset {path}:{lineno}: {exc}") from exc
            sequences.append(seq)
    return sequences


def _simulate_record(args) -> SimulationSequence:
    seq_id, config = args
    return simulate(config, seq_id=seq_id)


def generate_dataset(
    space: ParamSpace,
    n: int,
    dt: float,
    n_steps: int,
    sampler: str,
    seed: int,
    out_path,
    manifest_path=None,
    jobs: int = 1,
    record_profile: bool = False,
    profile_points: int = 100,
) -> Manifest:
    """Sample the space, run one simulation per point, and persist everything.

    Regeneration with the same seed is byte-identical; records are written in
    id order regardless of how many worker processes ran the simulations.
    """
    if sampler not in _SAMPLERS:
        raise ValidationError(f"unknown sampler '{sampler}' (choose from {sorted(_SAMPLERS)})")
    if set(space.names) != {"D", "dx"}:
        raise ValidationError(
            f"diffusion dataset generation needs dimensions named D and dx, got {space.names}"
        )
    points = _SAMPLERS[sampler](space, n, RngStream(seed).child(STREAM_SAMPLE))
    name_to_col = {name: i for i, name in enumerate(space.names)}
    tasks = []
    for seq_id in range(n):
        config = DiffusionConfig(
            d=float(points[seq_id, name_to_col["D"]]),
            dx=float(points[seq_id, name_to_col["dx"]]),
            dt=dt,
            n_steps=n_steps,
            record_profile=record_profile,
            profile_points=profile_points,
        )
        tasks.append((seq_id, config))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            sequences = list(pool.map(_simulate_record, tasks, chunksize=8))
    else:
        sequences = [_simulate_record(t) for t in tasks]
    sequences.sort(key=lambda s: s.seq_id)
    save_dataset(sequences, out_path)
    manifest = Manifest(
        space=space, seed=seed, sampler=sampler, n=n, dt=dt, n_steps=n_steps
    )
    if manifest_path is not None:
        manifest.save(manifest_path)
    return manifest


def split_dataset(
    sequences: Sequence[SimulationSequence], train_fraction: float, rng
) -> tuple[list[int], list[int]]:
    """Randomly partition sequence ids into train/test; train gets floor(n * f)."""
    if not sequences:
        raise ValidationError("split_dataset: empty dataset")
    if not (0.0 < train_fraction < 1.0):
        raise ValidationError(f"train fraction must lie in (0, 1), got {train_fraction}")
    ids = np.array([s.seq_id for s in sequences])
    g = as_generator(rng)
    perm = g.permutation(len(ids))
    n_train = int(math.floor(len(ids) * train_fraction))
    if n_train == 0:
        raise ValidationError(
            f"split_dataset: training set would be empty (n={len(ids)}, fraction={train_fraction})"
        )
    train = sorted(int(i) for i in ids[perm[:n_train]])
    test = sorted(int(i) for i in ids[perm[n_train:]])
    return train, test


def slice_variable_length(
    seq: SimulationSequence, min_len: int, max_len: int, rng
) -> tuple[np.ndarray, np.ndarray]:
    """Split the trajectory at a random step k in [min_len, max_len].

    Returns (qoi[:k], qoi[k:]); concatenating the halves reconstructs the
    original trajectory.
    """
    total = seq.qoi.shape[0]
    if min_len < 1 or min_len > max_len:
        raise ValidationError(f"invalid slice bounds [{min_len}, {max_len}]")
    if max_len > total - 1:
        raise ValidationError(
            f"slice bounds [{min_len}, {max_len}] exceed sequence of {total} steps "
            "(output half would be empty)"
        )
    g = as_generator(rng)
    k = int(g.integers(min_len, max_len + 1))
    return seq.qoi[:k].copy(), seq.qoi[k:].copy()


def downsample(seq: SimulationSequence, stride: int) -> SimulationSequence:
    """Keep steps 0, stride, 2*stride, ...; dt scales by the stride."""
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    if stride == 1:
        return seq
    return SimulationSequence(
        seq_id=seq.seq_id,
        params=dict(seq.params),
        dt=seq.dt * stride,
        qoi=seq.qoi[::stride].copy(),
    )
