"""Trajectory-error metric, test-set reports, study sweeps, and the
in-flight early-termination monitor.

All errors are computed in scaled [0, 1] space using the scaler attached to
the model under evaluation, so values are comparable across datasets with
different physical units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .data import fmt_real
from .diffusion import SimulationSequence, analytic_trajectory, simulate, DiffusionConfig
from .errors import ShapeMismatchError, ValidationError
from .models import model_digest

DEFAULT_SOLVER_DX = (1e-3, 5e-4, 2e-4, 1e-4)


def iae(pred: np.ndarray, true: np.ndarray) -> float:
    """Mean absolute trajectory error, normalized by the sequence length.

    Multi-dimensional qoi entries are averaged over dimensions per step
    before the time average, giving one scalar per trajectory.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    true = np.atleast_2d(np.asarray(true, dtype=float))
    if pred.shape != true.shape:
        raise ShapeMismatchError(f"iae: pred{pred.shape} vs true{true.shape}")
    if pred.shape[0] < 1:
        raise ValidationError("iae: empty sequences")
    return float(np.mean(np.abs(true - pred)))


@dataclass
class EvaluationReport:
    """Per-sequence errors with summary statistics."""

    entries: list[tuple[int, float]]
    family: str
    config_digest: str

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.entries])

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def median(self) -> float:
        return float(np.median(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("sequence_id,iae\n")
            for sid, v in self.entries:
                fh.write(f"{sid},{fmt_real(v)}\n")


@dataclass
class StudyRow:
    x: float
    median_iae: float
    mean_iae: float
    n: int


@dataclass
class StudyTable:
    kind: str
    rows: list[StudyRow] = field(default_factory=list)

    def sorted(self) -> "StudyTable":
        return StudyTable(self.kind, sorted(self.rows, key=lambda r: r.x))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,median_iae,mean_iae,n\n")
            for r in self.rows:
                fh.write(f"{fmt_real(r.x)},{fmt_real(r.median_iae)},{fmt_real(r.mean_iae)},{r.n}\n")


def _scaled_tail_error(model, seq: SimulationSequence, input_len: int) -> float:
    """Error of the predicted remainder after `input_len` observed steps."""
    total = seq.qoi.shape[0]
    if not (1 <= input_len < total):
        raise ValidationError(
            f"input length {input_len} out of range for {total}-entry sequence {seq.seq_id}"
        )
    horizon = total - input_len
    pred_raw = model.predict_tail(seq.params, seq.qoi[:input_len], horizon)
    true_raw = seq.qoi[input_len:]
    scaler = getattr(model, "scaler", None)
    if scaler is not None:
        return iae(scaler.scale_qoi(pred_raw), scaler.scale_qoi(true_raw))
    return iae(pred_raw, true_raw)


def _eval_worker(task):
    model, seq, input_len = task
    return seq.seq_id, _scaled_tail_error(model, seq, input_len)


def evaluate_test(
    model, test_sequences: Sequence[SimulationSequence], input_len: int = 1, jobs: int = 1
) -> EvaluationReport:
    """Score a model on held-out sequences.

    Each sequence contributes the error of the autoregressively predicted
    remainder after the first `input_len` observed steps (default: the
    initial condition only, which is also all the one-step baseline uses).
    Per-sequence scores are independent, so the result is identical for any
    `jobs` count.
    """
    if not test_sequences:
        raise ValidationError("evaluate_test: empty test set")
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(
                pool.map(
                    _eval_worker,
                    [(model, seq, input_len) for seq in test_sequences],
                    chunksize=8,
                )
            )
    else:
        entries = [
            (seq.seq_id, _scaled_tail_error(model, seq, input_len)) for seq in test_sequences
        ]
    try:
        digest = model_digest(model)
    except Exception:
        digest = getattr(model, "family", "unknown")
    return EvaluationReport(entries=entries, family=getattr(model, "family", "unknown"), config_digest=digest)


def input_length_study(
    model, test_sequences: Sequence[SimulationSequence], lengths: Iterable[int]
) -> StudyTable:
    """Median remainder error as a function of the observed prefix length."""
    lengths = sorted(set(int(v) for v in lengths))
    if not lengths:
        raise ValidationError("input_length_study: no lengths given")
    table = StudyTable(kind="input_length")
    for length in lengths:
        report = evaluate_test(model, test_sequences, input_len=length)
        table.rows.append(
            StudyRow(
                x=float(length),
                median_iae=report.median,
                mean_iae=report.mean,
                n=len(report.entries),
            )
        )
    return table.sorted()


def extrapolation_study(
    model,
    d: float,
    dx_list: Iterable[float],
    dt: float,
    n_steps: int,
    solver_dx_list: Iterable[float] = DEFAULT_SOLVER_DX,
    solver_anchor_dt: float = 1e-6,
) -> tuple[StudyTable, StudyTable]:
    """Model error versus the closed form at resolutions outside the training
    range, next to the numerical solver's own error inside it.

    Model rows: the model predicts the whole trajectory from the initial
    condition with the given dx as a static input; the error is computed
    against the closed-form trajectory on the model's time grid (scaled
    space). Solver rows: trajectory error of the numerical solution against
    the closed form on its own grid, with the time step refined
    proportionally to dx^2 from `solver_anchor_dt` at the coarsest dx so the
    spatial rate is visible; also scaled, so the two series are directly
    comparable.
    """
    scaler = getattr(model, "scaler", None)
    if scaler is None:
        raise ValidationError("extrapolation_study requires a model with a scaler")
    reference = analytic_trajectory(d, dt, n_steps)
    ref_scaled = scaler.scale_qoi(reference[1:])
    model_table = StudyTable(kind="extrapolation_model")
    for dx in dx_list:
        pred_raw = model.predict_tail({"D": d, "dx": float(dx)}, reference[:1], n_steps)
        err = iae(scaler.scale_qoi(pred_raw), ref_scaled)
        model_table.rows.append(StudyRow(x=float(dx), median_iae=err, mean_iae=err, n=1))
    solver_table = StudyTable(kind="extrapolation_solver")
    solver_dx = sorted(float(v) for v in solver_dx_list)
    dx_max = max(solver_dx) if solver_dx else 0.0
    t_final = dt * n_steps
    for dx in solver_dx:
        target_dt = solver_anchor_dt * (dx / dx_max) ** 2
        steps = max(1, round(t_final / target_dt))
        run_dt = t_final / steps
        seq = simulate(DiffusionConfig(d=d, dx=dx, dt=run_dt, n_steps=steps))
        truth = analytic_trajectory(d, run_dt, steps)
        err = iae(scaler.scale_qoi(seq.qoi[1:]), scaler.scale_qoi(truth[1:]))
        solver_table.rows.append(StudyRow(x=dx, median_iae=err, mean_iae=err, n=1))
    return model_table.sorted(), solver_table.sorted()


@dataclass
class CheckpointRecord:
    checkpoint: int
    n_obs: int
    iae: float
    decision: str


@dataclass
class EarlyStopTrace:
    """Checkpoint-by-checkpoint record of the in-flight termination monitor."""

    records: list[CheckpointRecord]
    terminated: bool
    consumed: int
    remainder_pred: np.ndarray | None  # raw space, None when never terminated

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("checkpoint,n_obs,iae,decision\n")
            for r in self.records:
                fh.write(f"{r.checkpoint},{r.n_obs},{fmt_real(r.iae)},{r.decision}\n")


def early_stop_monitor(
    source,
    model,
    n_obs: int,
    check_horizon: int,
    threshold: float,
    params=None,
    total_steps: int | None = None,
) -> EarlyStopTrace:
    """Watch a running trajectory and decide when the surrogate can take over.

    Consumes `n_obs` steps, predicts the next `check_horizon`, then consumes
    the true values of that window and scores the prediction. If the window
    error is below `threshold` the monitor TERMINATEs and returns the
    model's prediction for everything after the consumed prefix; otherwise
    it CONTINUEs and repeats one window later. `source` may be a
    SimulationSequence or any iterable of per-step qoi vectors (then
    `params` and `total_steps` are required).
    """
    if n_obs < 1 or check_horizon < 1:
        raise ValidationError("n_obs and check_horizon must be >= 1")
    if threshold < 0:
        raise ValidationError("threshold must be >= 0")
    if isinstance(source, SimulationSequence):
        params = source.params
        total_steps = source.qoi.shape[0]
        stream: Iterator[np.ndarray] = iter(source.qoi)
    else:
        if params is None or total_steps is None:
            raise ValidationError("iterable sources need explicit params and total_steps")
        stream = iter(source)
    scaler = getattr(model, "scaler", None)

    observed: list[np.ndarray] = []

    def consume(count: int) -> np.ndarray:
        taken = []
        for _ in range(count):
            try:
                taken.append(np.asarray(next(stream), dtype=float))
            except StopIteration:
                raise ValidationError(
                    f"source exhausted after {len(observed) + len(taken)} steps; "
                    f"needed {len(observed) + count}"
                ) from None
        observed.extend(taken)
        return np.array(taken)

    consume(n_obs)
    records: list[CheckpointRecord] = []
    checkpoint = 0
    while len(observed) + check_horizon <= total_steps:
        checkpoint += 1
        obs_arr = np.array(observed)
        pred_raw = model.predict_tail(params, obs_arr, check_horizon)
        truth_raw = consume(check_horizon)
        if scaler is not None:
            window_err = iae(scaler.scale_qoi(pred_raw), scaler.scale_qoi(truth_raw))
        else:
            window_err = iae(pred_raw, truth_raw)
        if window_err < threshold:
            records.append(CheckpointRecord(checkpoint, len(observed) - check_horizon, window_err, "TERMINATE"))
            remaining = total_steps - len(observed)
            remainder = None
            if remaining > 0:
                remainder = model.predict_tail(params, np.array(observed), remaining)
            return EarlyStopTrace(
                records=records,
                terminated=True,
                consumed=len(observed),
                remainder_pred=remainder,
            )
        records.append(CheckpointRecord(checkpoint, len(observed) - check_horizon, window_err, "CONTINUE"))
    return EarlyStopTrace(records=records, terminated=False, consumed=len(observed), remainder_pred=None)
