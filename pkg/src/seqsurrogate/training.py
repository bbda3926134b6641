"""Mini-batch training loops: truncation-free BPTT for the encoder-decoder,
one-step regression for the state-transition baseline.

The teacher-forced path runs layer-major: each GRU layer's input sequence is
known up front, so the input projections of a whole layer collapse into one
matmul per gate and only the recurrent terms stay inside the time loop.
Without teacher forcing the decoder input depends on the previous
prediction, so that path runs step-major instead.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .data import Scaler, fit_scaler, fmt_real
from .diffusion import SimulationSequence
from .errors import MalformedFileError, NonFiniteError, ValidationError
from .models import GruCellParams, Seq2SeqModel, StateTransitionModel
from .numerics import AdamState, RngStream, adam_step

logger = logging.getLogger(__name__)

# Child-stream ids for the independent randomness sources of a training run.
STREAM_INIT = 21
STREAM_SHUFFLE = 22
STREAM_SLICE = 23

DEFAULT_SEQ2SEQ = {"learn_rate": 1e-3, "batch_size": 20, "n_epochs": 3000}
DEFAULT_STATE_TRANSITION = {"learn_rate": 6e-3, "batch_size": 4000, "n_epochs": 400}


@dataclass
class TrainConfig:
    """Optimization hyperparameters; batch size counts sequences for the
    encoder-decoder and transitions for the state-transition model."""

    learn_rate: float
    batch_size: int
    n_epochs: int
    seed: int = 0
    teacher_forcing: bool = True
    report_every: int = 100

    def __post_init__(self):
        if self.learn_rate <= 0 or self.batch_size < 1 or self.n_epochs < 1:
            raise ValidationError("learn_rate, batch_size, and n_epochs must be positive")
        if self.report_every < 1:
            raise ValidationError("report_every must be >= 1")

    @classmethod
    def from_json_file(cls, path, **overrides) -> "TrainConfig":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except (json.JSONDecodeError, OSError) as exc:
            raise MalformedFileError(f"train config {path}: {exc}") from exc
        known = {"learn_rate", "batch_size", "n_epochs", "seed", "teacher_forcing", "report_every"}
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"train config {path}: unknown keys {sorted(unknown)}")
        obj.update(overrides)
        return cls(**obj)


@dataclass
class TrainHistory:
    """Per-epoch mean training loss and wall-clock seconds."""

    losses: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    @property
    def n_epochs(self) -> int:
        return len(self.losses)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,loss,seconds\n")
            for i, (loss, sec) in enumerate(zip(self.losses, self.seconds), start=1):
                fh.write(f"{i},{fmt_real(loss)},{fmt_real(sec)}\n")


def make_training_pairs(seq: SimulationSequence, mode: str, rng, min_len: int = 10, max_len: int = 90):
    """Split one trajectory into (encoder input, decoder target) arrays."""
    from .data import slice_variable_length

    if mode == "initial_only":
        return seq.qoi[:1].copy(), seq.qoi[1:].copy()
    if mode == "variable":
        return slice_variable_length(seq, min_len, max_len, rng)
    raise ValidationError(f"unknown training-pair mode '{mode}'")


# ---------------------------------------------------------------------------
# GRU layer passes over a known input sequence (layer-major)


def _gru_layer_forward(cell: GruCellParams, x_flat: np.ndarray, h0: np.ndarray, n_steps: int, batch: int):
    """Run one layer over all steps; x_flat is (in_dim, n_steps * batch)."""
    wz = cell.w["z"].value @ x_flat + cell.b["z"].value
    wr = cell.w["r"].value @ x_flat + cell.b["r"].value
    wh = cell.w["h"].value @ x_flat + cell.b["h"].value
    uz, ur, uh = cell.u["z"].value, cell.u["r"].value, cell.u["h"].value
    hidden = cell.hidden
    z_all = np.empty((hidden, n_steps * batch))
    r_all = np.empty_like(z_all)
    c_all = np.empty_like(z_all)
    p_all = np.empty_like(z_all)
    hprev_all = np.empty_like(z_all)
    h_out = np.empty_like(z_all)
    h = h0
    for t in range(n_steps):
        sl = slice(t * batch, (t + 1) * batch)
        z = expit(wz[:, sl] + uz @ h)
        r = expit(wr[:, sl] + ur @ h)
        p = r * h
        c = np.tanh(wh[:, sl] + uh @ p)
        hprev_all[:, sl] = h
        h = z * h + (1.0 - z) * c
        z_all[:, sl] = z
        r_all[:, sl] = r
        c_all[:, sl] = c
        p_all[:, sl] = p
        h_out[:, sl] = h
    cache = (x_flat, z_all, r_all, c_all, p_all, hprev_all, n_steps, batch)
    return h_out, h, cache


def _gru_layer_backward(cell: GruCellParams, cache, d_out: np.ndarray, dh_final: np.ndarray):
    """Backprop one layer; d_out holds per-step upstream gradients and
    dh_final the extra gradient on the layer's final hidden state."""
    x_flat, z_all, r_all, c_all, p_all, hprev_all, n_steps, batch = cache
    uz, ur, uh = cell.u["z"].value, cell.u["r"].value, cell.u["h"].value
    daz_all = np.empty_like(z_all)
    dar_all = np.empty_like(z_all)
    dah_all = np.empty_like(z_all)
    dh_rec = dh_final
    for t in reversed(range(n_steps)):
        sl = slice(t * batch, (t + 1) * batch)
        dh = d_out[:, sl] + dh_rec
        z = z_all[:, sl]
        r = r_all[:, sl]
        c = c_all[:, sl]
        hp = hprev_all[:, sl]
        dc = dh * (1.0 - z)
        dah = dc * (1.0 - c * c)
        dp = uh.T @ dah
        dar = (dp * hp) * (r * (1.0 - r))
        daz = (dh * (hp - c)) * (z * (1.0 - z))
        dh_rec = dh * z + dp * r + uz.T @ daz + ur.T @ dar
        daz_all[:, sl] = daz
        dar_all[:, sl] = dar
        dah_all[:, sl] = dah
    cell.w["z"].grad += daz_all @ x_flat.T
    cell.w["r"].grad += dar_all @ x_flat.T
    cell.w["h"].grad += dah_all @ x_flat.T
    cell.u["z"].grad += daz_all @ hprev_all.T
    cell.u["r"].grad += dar_all @ hprev_all.T
    cell.u["h"].grad += dah_all @ p_all.T
    cell.b["z"].grad += daz_all.sum(axis=1, keepdims=True)
    cell.b["r"].grad += dar_all.sum(axis=1, keepdims=True)
    cell.b["h"].grad += dah_all.sum(axis=1, keepdims=True)
    dx_flat = (
        cell.w["z"].value.T @ daz_all
        + cell.w["r"].value.T @ dar_all
        + cell.w["h"].value.T @ dah_all
    )
    return dx_flat, dh_rec


def _cell_step_backward(cell: GruCellParams, x, z, r, c, p, hp, dh):
    """Single-step cell backward used by the autoregressive decoder path."""
    dc = dh * (1.0 - z)
    dah = dc * (1.0 - c * c)
    dp = cell.u["h"].value.T @ dah
    dar = (dp * hp) * (r * (1.0 - r))
    daz = (dh * (hp - c)) * (z * (1.0 - z))
    dh_prev = dh * z + dp * r + cell.u["z"].value.T @ daz + cell.u["r"].value.T @ dar
    cell.w["z"].grad += daz @ x.T
    cell.w["r"].grad += dar @ x.T
    cell.w["h"].grad += dah @ x.T
    cell.u["z"].grad += daz @ hp.T
    cell.u["r"].grad += dar @ hp.T
    cell.u["h"].grad += dah @ p.T
    cell.b["z"].grad += daz.sum(axis=1, keepdims=True)
    cell.b["r"].grad += dar.sum(axis=1, keepdims=True)
    cell.b["h"].grad += dah.sum(axis=1, keepdims=True)
    dx = (
        cell.w["z"].value.T @ daz
        + cell.w["r"].value.T @ dar
        + cell.w["h"].value.T @ dah
    )
    return dx, dh_prev


# ---------------------------------------------------------------------------
# Whole-graph passes for one batch


def seq2seq_batch_loss(
    model: Seq2SeqModel,
    enc_x_flat: np.ndarray,
    dec_x_flat: np.ndarray,
    targets_flat: np.ndarray,
    enc_steps: int,
    dec_steps: int,
    batch: int,
    compute_grads: bool = True,
) -> tuple[float, int]:
    """Teacher-forced loss (and gradients) for one batch.

    enc_x_flat is (in_dim, enc_steps * batch), dec_x_flat the known decoder
    inputs (statics || previous true qoi), targets_flat (qoi_dim,
    dec_steps * batch). Returns (sse, element count); the batch loss is
    sse / count. Gradients accumulate into the model's parameter groups.
    """
    hidden = model.hidden
    zeros0 = np.zeros((hidden, batch))
    enc_caches = []
    latent = []
    layer_in = enc_x_flat
    for cell in model.encoder:
        layer_in, h_final, cache = _gru_layer_forward(cell, layer_in, zeros0, enc_steps, batch)
        enc_caches.append(cache)
        latent.append(h_final)
    dec_caches = []
    layer_in = dec_x_flat
    for l, cell in enumerate(model.decoder):
        layer_in, _, cache = _gru_layer_forward(cell, layer_in, latent[l], dec_steps, batch)
        dec_caches.append(cache)
    y = model.head_w.value @ layer_in + model.head_b.value
    diff = y - targets_flat
    sse = float(np.sum(diff * diff))
    count = diff.size
    if not compute_grads:
        return sse, count
    dy = (2.0 / count) * diff
    model.head_w.grad += dy @ layer_in.T
    model.head_b.grad += dy.sum(axis=1, keepdims=True)
    d_layer = model.head_w.value.T @ dy
    dh_zero = np.zeros((hidden, batch))
    dlatent = [None] * model.n_layers
    for l in reversed(range(model.n_layers)):
        d_layer, dh0 = _gru_layer_backward(model.decoder[l], dec_caches[l], d_layer, dh_zero)
        dlatent[l] = dh0
    d_up = np.zeros((hidden, enc_steps * batch))
    for l in reversed(range(model.n_layers)):
        d_up, _ = _gru_layer_backward(model.encoder[l], enc_caches[l], d_up, dlatent[l])
    return sse, count


def seq2seq_batch_loss_autoregressive(
    model: Seq2SeqModel,
    enc_x_flat: np.ndarray,
    statics: np.ndarray,
    y0: np.ndarray,
    targets: np.ndarray,
    enc_steps: int,
    batch: int,
    compute_grads: bool = True,
) -> tuple[float, int]:
    """Loss (and gradients) with the decoder fed its own predictions.

    targets is (dec_steps, qoi_dim, batch). Gradients flow through the
    prediction-to-next-input connection, so this path runs step-major.
    """
    hidden = model.hidden
    n_layers = model.n_layers
    dec_steps = targets.shape[0]
    zeros0 = np.zeros((hidden, batch))
    enc_caches = []
    latent = []
    layer_in = enc_x_flat
    for cell in model.encoder:
        layer_in, h_final, cache = _gru_layer_forward(cell, layer_in, zeros0, enc_steps, batch)
        enc_caches.append(cache)
        latent.append(h_final)
    states = [s.copy() for s in latent]
    step_caches = []
    preds = np.empty_like(targets)
    y_prev = y0
    for t in range(dec_steps):
        x = np.concatenate([statics, y_prev], axis=0)
        per_layer = []
        inp = x
        for cell in model.decoder:
            h_prev = states[len(per_layer)]
            z = expit(cell.w["z"].value @ inp + cell.u["z"].value @ h_prev + cell.b["z"].value)
            r = expit(cell.w["r"].value @ inp + cell.u["r"].value @ h_prev + cell.b["r"].value)
            p = r * h_prev
            c = np.tanh(cell.w["h"].value @ inp + cell.u["h"].value @ p + cell.b["h"].value)
            h = z * h_prev + (1.0 - z) * c
            per_layer.append((inp, z, r, c, p, h_prev))
            states[len(per_layer) - 1] = h
            inp = h
        y = model.head_w.value @ inp + model.head_b.value
        preds[t] = y
        step_caches.append((per_layer, inp))
        y_prev = y
    diff = preds - targets
    sse = float(np.sum(diff * diff))
    count = diff.size
    if not compute_grads:
        return sse, count
    scale = 2.0 / count
    dh_rec = [np.zeros((hidden, batch)) for _ in range(n_layers)]
    carry_dy = np.zeros((model.qoi_dim, batch))
    for t in reversed(range(dec_steps)):
        per_layer, h_top = step_caches[t]
        dy = scale * diff[t] + carry_dy
        model.head_w.grad += dy @ h_top.T
        model.head_b.grad += dy.sum(axis=1, keepdims=True)
        dh = model.head_w.value.T @ dy
        dx = None
        for l in reversed(range(n_layers)):
            x, z, r, c, p, hp = per_layer[l]
            dh_total = dh + dh_rec[l]
            dx, dh_prev = _cell_step_backward(model.decoder[l], x, z, r, c, p, hp, dh_total)
            dh_rec[l] = dh_prev
            dh = dx  # upstream for the layer below is this layer's input grad
        carry_dy = dx[model.n_static :, :]  # grad wrt the fed-back prediction
    d_up = np.zeros((hidden, enc_steps * batch))
    for l in reversed(range(n_layers)):
        d_up, _ = _gru_layer_backward(model.encoder[l], enc_caches[l], d_up, dh_rec[l])
    return sse, count


# ---------------------------------------------------------------------------
# Batch assembly


def _stack_batch(statics, qois, ids, start, stop):
    """Build a flattened (dim, steps * batch) input block for steps [start, stop)."""
    steps = stop - start
    batch = len(ids)
    n_static = statics[ids[0]].shape[0]
    qoi_dim = qois[ids[0]].shape[1]
    block = np.empty((steps, n_static + qoi_dim, batch))
    for j, sid in enumerate(ids):
        block[:, :n_static, j] = statics[sid]
        block[:, n_static:, j] = qois[sid][start:stop]
    return block.transpose(1, 0, 2).reshape(n_static + qoi_dim, steps * batch)


def _stack_targets(qois, ids, start, stop):
    steps = stop - start
    qoi_dim = qois[ids[0]].shape[1]
    block = np.empty((steps, qoi_dim, len(ids)))
    for j, sid in enumerate(ids):
        block[:, :, j] = qois[sid][start:stop]
    return block


def _prepare_scaled(train_sequences, scaler):
    statics = {}
    qois = {}
    for seq in train_sequences:
        vec = np.array([seq.params[k] for k in scaler_param_names(seq)])
        statics[seq.seq_id] = scaler.scale_params(vec)
        qois[seq.seq_id] = scaler.scale_qoi(seq.qoi)
    return statics, qois


def scaler_param_names(seq: SimulationSequence) -> list[str]:
    return list(seq.params.keys())


def _validate_training_set(train_sequences):
    if not train_sequences:
        raise ValidationError("training set is empty")
    qoi_dim = train_sequences[0].qoi_dim
    length = train_sequences[0].qoi.shape[0]
    for seq in train_sequences:
        if seq.qoi_dim != qoi_dim:
            raise ValidationError(
                f"sequence {seq.seq_id}: qoi_dim {seq.qoi_dim} differs from {qoi_dim}"
            )
        if seq.qoi.shape[0] != length:
            raise ValidationError(
                f"sequence {seq.seq_id}: length {seq.qoi.shape[0]} differs from {length}; "
                "batched training needs uniform-length trajectories"
            )
    return qoi_dim, length


def train_seq2seq(
    train_sequences: Sequence[SimulationSequence],
    config: TrainConfig,
    hidden: int = 14,
    n_layers: int = 2,
    scaler: Scaler | None = None,
    mode: str = "initial_only",
    slice_min: int = 10,
    slice_max: int = 90,
) -> tuple[Seq2SeqModel, TrainHistory]:
    """Train the encoder-decoder on whole trajectories.

    mode="initial_only" feeds the encoder just step 0 and decodes the rest;
    mode="variable" draws a split point k in [slice_min, slice_max] per batch
    so the model learns from prefixes of many lengths. Fully deterministic
    for a fixed (seed, data, config).
    """
    if mode not in ("initial_only", "variable"):
        raise ValidationError(f"unknown training mode '{mode}'")
    qoi_dim, length = _validate_training_set(train_sequences)
    if mode == "variable" and slice_max > length - 2:
        raise ValidationError(
            f"variable mode needs slice_max <= {length - 2} for {length}-entry sequences"
        )
    if scaler is None:
        scaler = fit_scaler(train_sequences)
    root = RngStream(config.seed)
    init_g = root.child(STREAM_INIT).generator()
    shuffle_g = root.child(STREAM_SHUFFLE).generator()
    slice_g = root.child(STREAM_SLICE).generator()
    param_names = scaler_param_names(train_sequences[0])
    model = Seq2SeqModel(param_names, qoi_dim, hidden, n_layers, rng=init_g, scaler=scaler)
    groups = model.param_groups()
    adam = AdamState.for_params(groups)
    statics, qois = _prepare_scaled(train_sequences, scaler)
    ids = [s.seq_id for s in train_sequences]
    n_static = model.n_static
    history = TrainHistory()
    for epoch in range(1, config.n_epochs + 1):
        tick = time.perf_counter()
        order = shuffle_g.permutation(len(ids))
        sse_total = 0.0
        count_total = 0
        for lo in range(0, len(ids), config.batch_size):
            chunk = [ids[i] for i in order[lo : lo + config.batch_size]]
            batch = len(chunk)
            k = 1 if mode == "initial_only" else int(slice_g.integers(slice_min, slice_max + 1))
            enc_x = _stack_batch(statics, qois, chunk, 0, k)
            targets = _stack_targets(qois, chunk, k, length)
            dec_steps = length - k
            for g in groups:
                g.zero_grad()
            if config.teacher_forcing:
                dec_x = _stack_batch(statics, qois, chunk, k - 1, length - 1)
                sse, count = seq2seq_batch_loss(
                    model,
                    enc_x,
                    dec_x,
                    targets.transpose(1, 0, 2).reshape(qoi_dim, dec_steps * batch),
                    k,
                    dec_steps,
                    batch,
                )
            else:
                stat_cols = np.column_stack([statics[sid] for sid in chunk])
                y0 = np.column_stack([qois[sid][k - 1] for sid in chunk])
                sse, count = seq2seq_batch_loss_autoregressive(
                    model, enc_x, stat_cols, y0, targets, k, batch
                )
            if not np.isfinite(sse):
                raise NonFiniteError(f"training diverged at epoch {epoch}, batch {lo // config.batch_size}")
            adam_step(groups, adam, config.learn_rate)
            sse_total += sse
            count_total += count
        history.losses.append(sse_total / count_total)
        history.seconds.append(time.perf_counter() - tick)
        if epoch % config.report_every == 0 or epoch == config.n_epochs:
            logger.info("seq2seq epoch %d/%d loss %.3e", epoch, config.n_epochs, history.losses[-1])
    return model, history


def build_transition_matrix(
    sequences: Sequence[SimulationSequence], scaler: Scaler
) -> tuple[np.ndarray, np.ndarray]:
    """Explode trajectories into one-step pairs: X holds (statics || qoi_t)
    columns, Y the matching qoi_{t+1}; a T+1-entry trajectory yields T pairs."""
    xs = []
    ys = []
    for seq in sequences:
        param_names = scaler_param_names(seq)
        svec = scaler.scale_params(np.array([seq.params[k] for k in param_names]))
        q = scaler.scale_qoi(seq.qoi)
        steps = q.shape[0] - 1
        xs.append(np.hstack([np.tile(svec, (steps, 1)), q[:-1]]).T)
        ys.append(q[1:].T)
    return np.concatenate(xs, axis=1), np.concatenate(ys, axis=1)


def train_state_transition(
    train_sequences: Sequence[SimulationSequence],
    config: TrainConfig,
    hidden_widths: Sequence[int] = (4, 8, 13),
    scaler: Scaler | None = None,
) -> tuple[StateTransitionModel, TrainHistory]:
    """Train the one-step map on all (state_t -> state_{t+1}) transitions.

    Every trajectory of T+1 entries contributes T transition pairs; pairs
    are shuffled globally each epoch.
    """
    qoi_dim, _ = _validate_training_set(train_sequences)
    if scaler is None:
        scaler = fit_scaler(train_sequences)
    root = RngStream(config.seed)
    init_g = root.child(STREAM_INIT).generator()
    shuffle_g = root.child(STREAM_SHUFFLE).generator()
    param_names = scaler_param_names(train_sequences[0])
    model = StateTransitionModel(param_names, qoi_dim, hidden_widths, rng=init_g, scaler=scaler)
    groups = model.param_groups()
    adam = AdamState.for_params(groups)
    x_all, y_all = build_transition_matrix(train_sequences, scaler)
    n_trans = x_all.shape[1]
    last = len(model.layers) - 1
    history = TrainHistory()
    for epoch in range(1, config.n_epochs + 1):
        tick = time.perf_counter()
        order = shuffle_g.permutation(n_trans)
        sse_total = 0.0
        count_total = 0
        for lo in range(0, n_trans, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            xb = x_all[:, idx]
            yb = y_all[:, idx]
            for g in groups:
                g.zero_grad()
            out, caches = model.forward(xb, want_cache=True)
            diff = out - yb
            sse = float(np.sum(diff * diff))
            count = diff.size
            if not np.isfinite(sse):
                raise NonFiniteError(f"training diverged at epoch {epoch}, batch {lo // config.batch_size}")
            da = (2.0 / count) * diff
            dh = None
            for i in reversed(range(len(model.layers))):
                h_in, a = caches[i]
                if i < last:
                    da = dh * (a > 0.0)
                w, b = model.layers[i]
                w.grad += da @ h_in.T
                b.grad += da.sum(axis=1, keepdims=True)
                dh = w.value.T @ da
            adam_step(groups, adam, config.learn_rate)
            sse_total += sse
            count_total += count
        history.losses.append(sse_total / count_total)
        history.seconds.append(time.perf_counter() - tick)
        if epoch % config.report_every == 0 or epoch == config.n_epochs:
            logger.info(
                "state-transition epoch %d/%d loss %.3e", epoch, config.n_epochs, history.losses[-1]
            )
    return model, history


# ---------------------------------------------------------------------------
# Gradient verification harness


def _toy_sequences(seed: int = 11, n_seq: int = 2, n_steps: int = 10) -> list[SimulationSequence]:
    """Small irregular trajectories for gradient verification.

    Bounded random walks rather than smooth solver output: every gate and
    layer then carries O(1) signal, keeping all gradient entries well above
    the finite-difference noise floor.
    """
    g = RngStream(seed).child(1).generator()
    seqs = []
    for i in range(n_seq):
        walk = np.cumsum(g.uniform(-0.8, 0.9, size=(n_steps + 1, 1)), axis=0)
        seqs.append(
            SimulationSequence(i, {"D": 1.0 + i, "dx": 0.1 + 0.3 * i}, dt=1.0, qoi=walk)
        )
    return seqs


def gradient_check_report(seed: int = 0, probe_eps: float = 1e-6) -> dict[str, float]:
    """Max relative gradient deviation per family on a 2-sequence toy problem.

    Checked at a generic parameter point (random nudge on every group, biases
    included): fresh zero biases would leave relu pre-activations exactly at
    the kink for all-zero inputs, where central differences straddle the
    non-differentiability.
    """
    from .numerics import grad_check

    seqs = _toy_sequences()
    scaler = fit_scaler(seqs)
    qoi_dim = seqs[0].qoi_dim
    length = seqs[0].qoi.shape[0]
    param_names = scaler_param_names(seqs[0])
    statics, qois = _prepare_scaled(seqs, scaler)
    ids = [s.seq_id for s in seqs]
    k = 4
    enc_x = _stack_batch(statics, qois, ids, 0, k)
    dec_x = _stack_batch(statics, qois, ids, k - 1, length - 1)
    dec_steps = length - k
    targets = _stack_targets(qois, ids, k, length).transpose(1, 0, 2).reshape(
        qoi_dim, dec_steps * len(ids)
    )

    root = RngStream(seed)
    init_g = root.child(STREAM_INIT).generator()
    nudge_g = root.child(99).generator()
    s2s = Seq2SeqModel(param_names, qoi_dim, hidden=4, n_layers=2, rng=init_g, scaler=scaler)
    s2s_groups = s2s.param_groups()
    for g in s2s_groups:
        g.value += nudge_g.uniform(-0.6, 0.6, g.value.shape)

    def s2s_loss(_params):
        sse, count = seq2seq_batch_loss(
            s2s, enc_x, dec_x, targets, k, dec_steps, len(ids), compute_grads=False
        )
        return sse / count

    for g in s2s_groups:
        g.zero_grad()
    seq2seq_batch_loss(s2s, enc_x, dec_x, targets, k, dec_steps, len(ids))
    dev_s2s = grad_check(s2s_loss, s2s_groups, probe_eps)

    st = StateTransitionModel(param_names, qoi_dim, (4, 8, 13), rng=init_g, scaler=scaler)
    st_groups = st.param_groups()
    for g in st_groups:
        g.value += nudge_g.uniform(-0.6, 0.6, g.value.shape)
    x_cols = []
    y_cols = []
    for sid in ids:
        svec = statics[sid]
        q = qois[sid]
        steps = q.shape[0] - 1
        x_cols.append(np.hstack([np.tile(svec, (steps, 1)), q[:-1]]).T)
        y_cols.append(q[1:].T)
    x_all = np.concatenate(x_cols, axis=1)
    y_all = np.concatenate(y_cols, axis=1)

    def st_loss(_params):
        out = st.forward(x_all)
        d = out - y_all
        return float(np.sum(d * d)) / d.size

    for g in st_groups:
        g.zero_grad()
    out, caches = st.forward(x_all, want_cache=True)
    diff = out - y_all
    da = (2.0 / diff.size) * diff
    dh = None
    lastl = len(st.layers) - 1
    for i in reversed(range(len(st.layers))):
        h_in, a = caches[i]
        if i < lastl:
            da = dh * (a > 0.0)
        w, b = st.layers[i]
        w.grad += da @ h_in.T
        b.grad += da.sum(axis=1, keepdims=True)
        dh = w.value.T @ da
    dev_st = grad_check(st_loss, st_groups, probe_eps)
    return {"seq2seq": dev_s2s, "state_transition": dev_st}
