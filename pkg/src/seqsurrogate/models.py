"""Surrogate model families: stacked-GRU encoder-decoder and dense state-transition.

Both families operate on scaled features internally and carry the scaler
they were trained with. Vectors are column matrices; batched calls use
(dim, B) arrays with one column per trajectory.

Gate convention for the GRU cell:
    z = sigmoid(W_z x + U_z h_prev + b_z)        update gate
    r = sigmoid(W_r x + U_r h_prev + b_r)        reset gate
    c = tanh(W_h x + U_h (r * h_prev) + b_h)     candidate state
    h = z * h_prev + (1 - z) * c
so z controls how much of the previous state is carried forward.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .data import Scaler, fmt_real
from .diffusion import SimulationSequence
from .errors import (
    FormatVersionError,
    MalformedFileError,
    NonFiniteError,
    ShapeMismatchError,
    ValidationError,
)
from .numerics import ParamGroup

MODEL_FORMAT_VERSION = 1

GATES = ("z", "r", "h")


def _fan_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


class GruCellParams:
    """Parameters of one GRU cell: per-gate input, recurrent, and bias arrays."""

    def __init__(self, in_dim: int, hidden: int, prefix: str, rng=None):
        self.in_dim = in_dim
        self.hidden = hidden
        self.prefix = prefix
        self.w: dict[str, ParamGroup] = {}
        self.u: dict[str, ParamGroup] = {}
        self.b: dict[str, ParamGroup] = {}
        for gate in GATES:
            if rng is None:
                w = np.zeros((hidden, in_dim))
                u = np.zeros((hidden, hidden))
            else:
                w = rng.uniform(-_fan_limit(in_dim, hidden), _fan_limit(in_dim, hidden), (hidden, in_dim))
                u = rng.uniform(-_fan_limit(hidden, hidden), _fan_limit(hidden, hidden), (hidden, hidden))
            self.w[gate] = ParamGroup(f"{prefix}.W_{gate}", w)
            self.u[gate] = ParamGroup(f"{prefix}.U_{gate}", u)
            self.b[gate] = ParamGroup(f"{prefix}.b_{gate}", np.zeros((hidden, 1)))

    def param_groups(self) -> list[ParamGroup]:
        groups = []
        for gate in GATES:
            groups.extend((self.w[gate], self.u[gate], self.b[gate]))
        return groups


def gru_cell_forward(cell: GruCellParams, x: np.ndarray, h_prev: np.ndarray) -> np.ndarray:
    """One cell step; x is (in_dim, B) and h_prev is (hidden, B)."""
    x = np.asarray(x, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    if x.ndim != 2 or h_prev.ndim != 2 or x.shape[0] != cell.in_dim or h_prev.shape[0] != cell.hidden:
        raise ShapeMismatchError(
            f"gru_cell_forward: x{x.shape} h_prev{h_prev.shape} for cell "
            f"(in={cell.in_dim}, hidden={cell.hidden})"
        )
    z = expit(cell.w["z"].value @ x + cell.u["z"].value @ h_prev + cell.b["z"].value)
    r = expit(cell.w["r"].value @ x + cell.u["r"].value @ h_prev + cell.b["r"].value)
    c = np.tanh(cell.w["h"].value @ x + cell.u["h"].value @ (r * h_prev) + cell.b["h"].value)
    return z * h_prev + (1.0 - z) * c


def stacked_forward(
    cells: Sequence[GruCellParams], x: np.ndarray, states: Sequence[np.ndarray]
) -> tuple[np.ndarray, list[np.ndarray]]:
    """One step through a stack; layer k consumes layer k-1's new output."""
    if len(states) != len(cells):
        raise ShapeMismatchError(
            f"stacked_forward: {len(states)} states for {len(cells)} layers"
        )
    new_states = []
    inp = x
    for cell, h_prev in zip(cells, states):
        h = gru_cell_forward(cell, inp, h_prev)
        new_states.append(h)
        inp = h
    return inp, new_states


class Seq2SeqModel:
    """Encoder-decoder GRU stack with an affine output head.

    The encoder compresses an observed prefix of (static params || qoi)
    vectors into one hidden state per layer; the decoder starts from those
    states and emits the remaining trajectory one step at a time, feeding
    back its own prediction (or a teacher value during training).
    """

    family = "seq2seq"

    def __init__(
        self,
        param_names: Sequence[str],
        qoi_dim: int,
        hidden: int,
        n_layers: int = 2,
        rng=None,
        scaler: Scaler | None = None,
    ):
        if hidden < 1 or n_layers < 1 or qoi_dim < 1:
            raise ValidationError("hidden, n_layers, and qoi_dim must all be >= 1")
        self.param_names = list(param_names)
        self.n_static = len(self.param_names)
        self.qoi_dim = qoi_dim
        self.hidden = hidden
        self.n_layers = n_layers
        self.scaler = scaler
        in_dim = self.n_static + qoi_dim
        # Encoder and decoder are built from the same architecture spec, so
        # the symmetry requirement holds by construction.
        self.encoder = [
            GruCellParams(in_dim if l == 0 else hidden, hidden, f"encoder.{l}", rng)
            for l in range(n_layers)
        ]
        self.decoder = [
            GruCellParams(in_dim if l == 0 else hidden, hidden, f"decoder.{l}", rng)
            for l in range(n_layers)
        ]
        if rng is None:
            head_w = np.zeros((qoi_dim, hidden))
        else:
            lim = _fan_limit(hidden, qoi_dim)
            head_w = rng.uniform(-lim, lim, (qoi_dim, hidden))
        self.head_w = ParamGroup("head.W", head_w)
        self.head_b = ParamGroup("head.b", np.zeros((qoi_dim, 1)))

    @property
    def in_dim(self) -> int:
        return self.n_static + self.qoi_dim

    def param_groups(self) -> list[ParamGroup]:
        groups: list[ParamGroup] = []
        for cell in (*self.encoder, *self.decoder):
            groups.extend(cell.param_groups())
        groups.extend((self.head_w, self.head_b))
        return groups

    def zero_states(self, batch: int) -> list[np.ndarray]:
        return [np.zeros((self.hidden, batch)) for _ in range(self.n_layers)]

    def encode(self, inputs: np.ndarray) -> list[np.ndarray]:
        """Run the encoder over inputs of shape (L, in_dim, B); returns the
        final hidden state of each layer (the latent representation)."""
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim != 3 or inputs.shape[1] != self.in_dim:
            raise ShapeMismatchError(
                f"encode: expected (L, {self.in_dim}, B) inputs, got {inputs.shape}"
            )
        if inputs.shape[0] < 1:
            raise ValidationError("encode: empty input sequence")
        states = self.zero_states(inputs.shape[2])
        for t in range(inputs.shape[0]):
            _, states = stacked_forward(self.encoder, inputs[t], states)
        return states

    def decode(
        self,
        latent: Sequence[np.ndarray],
        statics: np.ndarray,
        y0: np.ndarray,
        horizon: int,
        teacher: np.ndarray | None = None,
    ) -> np.ndarray:
        """Emit `horizon` scaled qoi steps starting from the latent states.

        Step inputs are (statics || previous qoi): y0 first, then the
        previous prediction, or the teacher value when provided.
        """
        if horizon < 1:
            raise ValidationError(f"decode: horizon must be >= 1, got {horizon}")
        statics = np.asarray(statics, dtype=float)
        y_prev = np.asarray(y0, dtype=float)
        if teacher is not None:
            teacher = np.asarray(teacher, dtype=float)
            if teacher.shape[0] < horizon:
                raise ValidationError(
                    f"decode: teacher sequence has {teacher.shape[0]} steps for horizon {horizon}"
                )
        states = [np.array(s, dtype=float) for s in latent]
        batch = y_prev.shape[1]
        preds = np.empty((horizon, self.qoi_dim, batch))
        for t in range(horizon):
            x = np.concatenate([statics, y_prev], axis=0)
            top, states = stacked_forward(self.decoder, x, states)
            y = self.head_w.value @ top + self.head_b.value
            preds[t] = y
            y_prev = teacher[t] if teacher is not None else y
        return preds

    def predict_tail(
        self, params: Mapping[str, float], observed: np.ndarray, horizon: int
    ) -> np.ndarray:
        """Predict the raw-space continuation after `observed` raw qoi steps."""
        scaler = self._require_scaler()
        observed = np.atleast_2d(np.asarray(observed, dtype=float))
        statics = scaler.scale_params(
            np.array([params[name] for name in self.param_names])
        ).reshape(-1, 1)
        q_scaled = scaler.scale_qoi(observed)
        enc_in = np.concatenate(
            [np.broadcast_to(statics[:, 0], (q_scaled.shape[0], self.n_static)), q_scaled],
            axis=1,
        )[:, :, None]
        latent = self.encode(enc_in)
        y0 = q_scaled[-1].reshape(-1, 1)
        preds = self.decode(latent, statics, y0, horizon)
        return scaler.unscale_qoi(preds[:, :, 0])

    def _require_scaler(self) -> Scaler:
        if self.scaler is None:
            raise ValidationError("model has no scaler attached")
        return self.scaler


class StateTransitionModel:
    """Dense network mapping (static params || qoi_t) to qoi_{t+1}.

    Hidden layers use relu, the output layer is linear. Trajectories are
    produced by iterating the one-step map on its own output.
    """

    family = "state_transition"

    def __init__(
        self,
        param_names: Sequence[str],
        qoi_dim: int,
        hidden_widths: Sequence[int],
        rng=None,
        scaler: Scaler | None = None,
    ):
        if qoi_dim < 1 or any(w < 1 for w in hidden_widths):
            raise ValidationError("qoi_dim and all hidden widths must be >= 1")
        self.param_names = list(param_names)
        self.n_static = len(self.param_names)
        self.qoi_dim = qoi_dim
        self.hidden_widths = [int(w) for w in hidden_widths]
        self.scaler = scaler
        widths = [self.n_static + qoi_dim, *self.hidden_widths, qoi_dim]
        self.layers: list[tuple[ParamGroup, ParamGroup]] = []
        for i in range(len(widths) - 1):
            fan_in, fan_out = widths[i], widths[i + 1]
            if rng is None:
                w = np.zeros((fan_out, fan_in))
            else:
                lim = _fan_limit(fan_in, fan_out)
                w = rng.uniform(-lim, lim, (fan_out, fan_in))
            self.layers.append(
                (
                    ParamGroup(f"layers.{i}.W", w),
                    ParamGroup(f"layers.{i}.b", np.zeros((fan_out, 1))),
                )
            )

    @property
    def in_dim(self) -> int:
        return self.n_static + self.qoi_dim

    def param_groups(self) -> list[ParamGroup]:
        groups: list[ParamGroup] = []
        for w, b in self.layers:
            groups.extend((w, b))
        return groups

    def forward(self, x: np.ndarray, want_cache: bool = False):
        """Feed-forward pass on (in_dim, B) columns; relu hiddens, linear output."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] != self.in_dim:
            raise ShapeMismatchError(f"forward: expected ({self.in_dim}, B) input, got {x.shape}")
        caches = []
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            a = w.value @ h + b.value
            caches.append((h, a))
            h = a if i == last else np.maximum(a, 0.0)
        return (h, caches) if want_cache else h

    def predict_tail(
        self, params: Mapping[str, float], observed: np.ndarray, horizon: int
    ) -> np.ndarray:
        """Roll the one-step map forward from the last observed raw step."""
        scaler = self._require_scaler()
        observed = np.atleast_2d(np.asarray(observed, dtype=float))
        statics = scaler.scale_params(
            np.array([params[name] for name in self.param_names])
        ).reshape(-1, 1)
        y0 = scaler.scale_qoi(observed[-1:]).reshape(-1, 1)
        preds = rollout_state_transition(self, statics, y0, horizon)
        return scaler.unscale_qoi(preds[:, :, 0])

    def _require_scaler(self) -> Scaler:
        if self.scaler is None:
            raise ValidationError("model has no scaler attached")
        return self.scaler


def dense_forward(model: StateTransitionModel, x: np.ndarray) -> np.ndarray:
    return model.forward(x)


def rollout_state_transition(
    model: StateTransitionModel, statics: np.ndarray, y0: np.ndarray, horizon: int
) -> np.ndarray:
    """Iterate the one-step map, feeding each prediction back; scaled space."""
    if horizon < 1:
        raise ValidationError(f"rollout: horizon must be >= 1, got {horizon}")
    statics = np.asarray(statics, dtype=float)
    y = np.asarray(y0, dtype=float)
    preds = np.empty((horizon, model.qoi_dim, y.shape[1]))
    for t in range(horizon):
        y = model.forward(np.concatenate([statics, y], axis=0))
        if not np.all(np.isfinite(y)):
            raise NonFiniteError(f"rollout: non-finite prediction at step {t + 1}")
        preds[t] = y
    return preds


class OracleModel:
    """Test stub that replays the true continuation of known sequences."""

    family = "oracle"

    def __init__(self, sequences: Sequence[SimulationSequence], scaler: Scaler | None = None):
        self._by_params = {tuple(sorted(s.params.items())): s for s in sequences}
        self.scaler = scaler

    def predict_tail(self, params, observed, horizon):
        key = tuple(sorted((k, float(v)) for k, v in params.items()))
        seq = self._by_params.get(key)
        if seq is None:
            raise ValidationError(f"oracle: no sequence with params {dict(params)}")
        observed = np.atleast_2d(np.asarray(observed, dtype=float))
        start = observed.shape[0]
        if start + horizon > seq.qoi.shape[0]:
            raise ValidationError(
                f"oracle: horizon {horizon} past the end of sequence {seq.seq_id}"
            )
        return seq.qoi[start : start + horizon].copy()


class ConstantModel:
    """Test stub predicting one constant value in scaled space."""

    family = "constant"

    def __init__(self, value: float = 0.5, qoi_dim: int = 1, scaler: Scaler | None = None):
        self.value = value
        self.qoi_dim = qoi_dim
        self.scaler = scaler

    def predict_tail(self, params, observed, horizon):
        scaled = np.full((horizon, self.qoi_dim), self.value)
        if self.scaler is None:
            return scaled
        return self.scaler.unscale_qoi(scaled)


def serialize_model(model) -> str:
    """Render a trained model as a JSON document with 17-digit reals."""
    if isinstance(model, Seq2SeqModel):
        arch = {
            "param_names": model.param_names,
            "qoi_dim": model.qoi_dim,
            "hidden": model.hidden,
            "n_layers": model.n_layers,
        }
    elif isinstance(model, StateTransitionModel):
        arch = {
            "param_names": model.param_names,
            "qoi_dim": model.qoi_dim,
            "hidden_widths": model.hidden_widths,
        }
    else:
        raise ValidationError(f"cannot serialize model family '{getattr(model, 'family', '?')}'")
    if model.scaler is None:
        scaler_txt = "null"
    else:
        lo = ", ".join(fmt_real(v) for v in model.scaler.lo)
        hi = ", ".join(fmt_real(v) for v in model.scaler.hi)
        scaler_txt = f'{{"min": [{lo}], "max": [{hi}]}}'
    params_txt = ", ".join(
        f'"{p.name}": [' + ", ".join(fmt_real(v) for v in p.value.reshape(-1)) + "]"
        for p in model.param_groups()
    )
    return (
        "{"
        f'"format_version": {MODEL_FORMAT_VERSION}, '
        f'"family": "{model.family}", '
        f'"arch": {json.dumps(arch, separators=(", ", ": "))}, '
        f'"scaler": {scaler_txt}, '
        f'"params": {{{params_txt}}}'
        "}\n"
    )


def save_model(model, path) -> None:
    Path(path).write_text(serialize_model(model), encoding="utf-8")


def model_digest(model) -> str:
    return hashlib.sha256(serialize_model(model).encode("utf-8")).hexdigest()[:16]


def load_model(path):
    """Reload a saved model; the reconstruction is bitwise-exact."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, OSError) as exc:
        raise MalformedFileError(f"model file {path}: {exc}") from exc
    try:
        version = obj["format_version"]
        if version != MODEL_FORMAT_VERSION:
            raise FormatVersionError(
                f"model file {path}: format_version {version}, expected {MODEL_FORMAT_VERSION}"
            )
        family = obj["family"]
        arch = obj["arch"]
        scaler = None
        if obj["scaler"] is not None:
            scaler = Scaler(
                np.array(obj["scaler"]["min"], dtype=float),
                np.array(obj["scaler"]["max"], dtype=float),
                n_static=len(arch["param_names"]),
            )
        if family == "seq2seq":
            model = Seq2SeqModel(
                param_names=arch["param_names"],
                qoi_dim=int(arch["qoi_dim"]),
                hidden=int(arch["hidden"]),
                n_layers=int(arch["n_layers"]),
                scaler=scaler,
            )
        elif family == "state_transition":
            model = StateTransitionModel(
                param_names=arch["param_names"],
                qoi_dim=int(arch["qoi_dim"]),
                hidden_widths=[int(w) for w in arch["hidden_widths"]],
                scaler=scaler,
            )
        else:
            raise MalformedFileError(f"model file {path}: unknown family '{family}'")
        params = obj["params"]
        for group in model.param_groups():
            if group.name not in params:
                raise MalformedFileError(f"model file {path}: missing parameter '{group.name}'")
            flat = np.array(params[group.name], dtype=float)
            if flat.size != group.value.size:
                raise ShapeMismatchError(
                    f"model file {path}: parameter '{group.name}' has {flat.size} "
                    f"entries, expected {group.value.size}"
                )
            group.value[...] = flat.reshape(group.value.shape)
        return model
    except (KeyError, TypeError) as exc:
        raise MalformedFileError(f"model file {path}: missing field {exc}") from exc
