"""Command-line entry point wiring generation, training, evaluation, and studies.

Every run logs its resolved configuration and seed to stderr. Reports are
written as CSV with a rendered PNG figure next to them. Exit codes: 0 on
success, 1 on validation errors (bad flags, missing or malformed inputs),
2 on runtime or numerical aborts.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import evaluation, figures, training
from .diffusion import convergence_study
from .errors import (
    FormatVersionError,
    MalformedFileError,
    SeqSurrogateError,
    ValidationError,
)
from .models import OracleModel, load_model, save_model
from .numerics import RngStream

logger = logging.getLogger("seqsurrogate")

DESK_STRIDE = 10
DESK_SEQ2SEQ_EPOCHS = 500

_MODEL_CHOICES = ("seq2seq", "state-transition", "oracle")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); route to exit code 1
        raise ValidationError(message)


def _require_file(path, kind: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"{kind} file not found: {p}")
    return p


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"{flag}: expected comma-separated reals, got '{text}'") from exc
    if not values:
        raise ValidationError(f"{flag}: empty list")
    return values


def _parse_lengths(text: str) -> list[int]:
    parts = text.split(":")
    try:
        nums = [int(p) for p in parts]
    except ValueError as exc:
        raise ValidationError(f"--lengths: expected a:b:step, got '{text}'") from exc
    if len(nums) == 1:
        return nums
    if len(nums) == 2:
        a, b = nums
        step = 1
    elif len(nums) == 3:
        a, b, step = nums
    else:
        raise ValidationError(f"--lengths: expected a:b:step, got '{text}'")
    if step < 1 or b < a:
        raise ValidationError(f"--lengths: bad range '{text}'")
    return list(range(a, b + 1, step))


def _figure_path(out: Path) -> Path:
    return out.with_suffix(".png")


def _log_config(command: str, args: dict) -> None:
    logger.info("config %s: %s", command, json.dumps(args, sort_keys=True, default=str))


def _load_split_sequences(args, which: str):
    """Load the dataset plus manifest and return the requested split."""
    data_path = _require_file(args.data, "dataset")
    manifest_path = _require_file(args.manifest, "manifest")
    sequences = data_mod.load_dataset(data_path)
    manifest = data_mod.Manifest.load(manifest_path)
    ids = manifest.split.get(which, [])
    if not ids:
        raise ValidationError(f"manifest {manifest_path} has an empty '{which}' split; run split first")
    by_id = {s.seq_id: s for s in sequences}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ValidationError(f"manifest lists ids missing from the dataset: {missing[:5]}...")
    chosen = [by_id[i] for i in ids]
    if getattr(args, "desk_scale", False):
        chosen = [data_mod.downsample(s, DESK_STRIDE) for s in chosen]
    return chosen, manifest


def _resolve_model(args, test_sequences=None, manifest=None):
    model_file = getattr(args, "model_file", None)
    family = getattr(args, "model", None)
    if family == "oracle":
        if test_sequences is None:
            raise ValidationError("oracle model needs a dataset to replay")
        scaler = manifest.scaler if manifest is not None else None
        return OracleModel(test_sequences, scaler=scaler)
    if model_file is None:
        raise ValidationError("a trained model is required: pass --model-file (or --model oracle)")
    model = load_model(_require_file(model_file, "model"))
    if family is not None and family.replace("-", "_") != model.family:
        raise ValidationError(
            f"--model {family} does not match family '{model.family}' in {model_file}"
        )
    return model


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_generate(args) -> int:
    out = Path(args.out)
    manifest_path = Path(args.manifest) if args.manifest else out.with_suffix(".manifest.json")
    space = data_mod.ParamSpace(
        (
            data_mod.ParamDim("D", args.d_min, args.d_max, "linear"),
            data_mod.ParamDim("dx", args.dx_min, args.dx_max, args.dx_scale),
        )
    )
    _log_config("generate", {**vars(args), "manifest": str(manifest_path)})
    data_mod.generate_dataset(
        space,
        n=args.n,
        dt=args.dt,
        n_steps=args.steps,
        sampler=args.sampler,
        seed=args.seed,
        out_path=out,
        manifest_path=manifest_path,
        jobs=args.jobs,
        record_profile=args.record_profile,
        profile_points=args.profile_points,
    )
    print(f"wrote {args.n} sequences to {out} (manifest: {manifest_path})")
    return 0


def _cmd_split(args) -> int:
    data_path = _require_file(args.data, "dataset")
    manifest_path = _require_file(args.manifest, "manifest")
    _log_config("split", vars(args))
    sequences = data_mod.load_dataset(data_path)
    manifest = data_mod.Manifest.load(manifest_path)
    rng = RngStream(args.seed).child(data_mod.STREAM_SPLIT)
    train_ids, test_ids = data_mod.split_dataset(sequences, args.train_frac, rng)
    manifest.split = {"train": train_ids, "test": test_ids}
    by_id = {s.seq_id: s for s in sequences}
    manifest.scaler = data_mod.fit_scaler([by_id[i] for i in train_ids])
    out = Path(args.out) if args.out else manifest_path
    manifest.save(out)
    print(f"split {len(train_ids)}/{len(test_ids)} train/test; manifest: {out}")
    return 0


def _cmd_train(args) -> int:
    train_seqs, manifest = _load_split_sequences(args, "train")
    if args.model == "oracle":
        raise ValidationError("the oracle stub is not trainable")
    family = args.model.replace("-", "_")
    defaults = dict(training.DEFAULT_SEQ2SEQ if family == "seq2seq" else training.DEFAULT_STATE_TRANSITION)
    if args.desk_scale and family == "seq2seq":
        defaults["n_epochs"] = DESK_SEQ2SEQ_EPOCHS
    overrides = {"seed": args.seed}
    if args.config:
        config = training.TrainConfig.from_json_file(_require_file(args.config, "train config"), **overrides)
    else:
        config = training.TrainConfig(**defaults, **overrides)
    scaler = manifest.scaler
    if scaler is None:
        scaler = data_mod.fit_scaler(train_seqs)
    _log_config("train", {**vars(args), "resolved_config": vars(config)})
    if family == "seq2seq":
        model, history = training.train_seq2seq(
            train_seqs,
            config,
            hidden=args.hidden,
            n_layers=2,
            scaler=scaler,
            mode="variable" if args.mode == "variable" else "initial_only",
            slice_min=args.min_len,
            slice_max=args.max_len,
        )
    else:
        model, history = training.train_state_transition(
            train_seqs, config, hidden_widths=tuple(int(w) for w in args.widths.split(",")), scaler=scaler
        )
    out = Path(args.out)
    save_model(model, out)
    history_csv = out.with_name(out.stem + "_history.csv")
    history.to_csv(history_csv)
    figures.render_history(history, _figure_path(history_csv), title=f"{family} training loss")
    print(f"trained {family}: final loss {history.losses[-1]:.4e}; model: {out}")
    return 0


def _cmd_eval(args) -> int:
    test_seqs, manifest = _load_split_sequences(args, "test")
    model = _resolve_model(args, test_sequences=test_seqs, manifest=manifest)
    _log_config("eval", vars(args))
    report = evaluation.evaluate_test(model, test_seqs, input_len=args.input_len, jobs=args.jobs)
    out = Path(args.out)
    report.to_csv(out)
    figures.render_report(report, _figure_path(out))
    print(
        f"evaluated {len(report.entries)} sequences: mean={report.mean:.6f} "
        f"median={report.median:.6f} sd={report.std:.6f}"
    )
    return 0


def _cmd_study_length(args) -> int:
    test_seqs, manifest = _load_split_sequences(args, "test")
    model = _resolve_model(args, test_sequences=test_seqs, manifest=manifest)
    lengths = _parse_lengths(args.lengths)
    max_len = min(len(s.qoi) for s in test_seqs) - 1
    bad = [l for l in lengths if not (1 <= l <= max_len)]
    if bad:
        raise ValidationError(f"--lengths values {bad} out of range [1, {max_len}]")
    _log_config("study-length", vars(args))
    table = evaluation.input_length_study(model, test_seqs, lengths)
    out = Path(args.out)
    table.to_csv(out)
    figures.render_length_study(table, _figure_path(out))
    for row in table.rows:
        print(f"L={int(row.x)} median={row.median_iae:.6f} mean={row.mean_iae:.6f} n={row.n}")
    return 0


def _cmd_study_dx(args) -> int:
    test_seqs, manifest = _load_split_sequences(args, "test")
    model = _resolve_model(args, test_sequences=test_seqs, manifest=manifest)
    grid = test_seqs[0]
    dx_list = _parse_float_list(args.dx_list, "--dx-list")
    solver_dx = _parse_float_list(args.solver_dx_list, "--solver-dx-list")
    _log_config("study-dx", vars(args))
    model_table, solver_table = evaluation.extrapolation_study(
        model,
        d=args.d,
        dx_list=dx_list,
        dt=grid.dt,
        n_steps=grid.qoi.shape[0] - 1,
        solver_dx_list=solver_dx,
        solver_anchor_dt=args.dt,
    )
    out = Path(args.out)
    model_table.to_csv(out)
    solver_csv = out.with_name(out.stem + "_solver.csv")
    solver_table.to_csv(solver_csv)
    figures.render_extrapolation(model_table, solver_table, _figure_path(out))
    for row in model_table.rows:
        print(f"model dx={row.x:g} error={row.median_iae:.6f}")
    for row in solver_table.rows:
        print(f"solver dx={row.x:g} error={row.median_iae:.6f}")
    return 0


def _cmd_early_stop(args) -> int:
    test_seqs, manifest = _load_split_sequences(args, "test")
    model = _resolve_model(args, test_sequences=test_seqs, manifest=manifest)
    _log_config("early-stop", vars(args))
    scaler = getattr(model, "scaler", None)
    out = Path(args.out)
    trace_csv = out.with_name(out.stem + "_trace.csv")
    n_terminated = 0
    remainder_errors = []
    consumed_steps = []
    with open(out, "w", encoding="utf-8") as summary, open(trace_csv, "w", encoding="utf-8") as tracefh:
        summary.write("sequence_id,terminated,consumed,n_checkpoints,remainder_iae\n")
        tracefh.write("sequence_id,checkpoint,n_obs,iae,decision\n")
        for seq in test_seqs:
            trace = evaluation.early_stop_monitor(
                seq, model, n_obs=args.n_obs, check_horizon=args.check_horizon, threshold=args.threshold
            )
            for rec in trace.records:
                tracefh.write(
                    f"{seq.seq_id},{rec.checkpoint},{rec.n_obs},{data_mod.fmt_real(rec.iae)},{rec.decision}\n"
                )
            remainder_iae = ""
            if trace.terminated:
                n_terminated += 1
                consumed_steps.append(trace.consumed)
                if trace.remainder_pred is not None:
                    truth = seq.qoi[trace.consumed :]
                    if scaler is not None:
                        err = evaluation.iae(
                            scaler.scale_qoi(trace.remainder_pred), scaler.scale_qoi(truth)
                        )
                    else:
                        err = evaluation.iae(trace.remainder_pred, truth)
                    remainder_errors.append(err)
                    remainder_iae = data_mod.fmt_real(err)
            summary.write(
                f"{seq.seq_id},{int(trace.terminated)},{trace.consumed},"
                f"{len(trace.records)},{remainder_iae}\n"
            )
    figures.render_early_stop_summary(consumed_steps, remainder_errors, len(test_seqs), _figure_path(out))
    frac = n_terminated / len(test_seqs)
    mean_rem = float(np.mean(remainder_errors)) if remainder_errors else float("nan")
    print(
        f"terminated {n_terminated}/{len(test_seqs)} ({100 * frac:.1f}%); "
        f"mean remainder error {mean_rem:.6f}"
    )
    return 0


def _cmd_grad_check(args) -> int:
    _log_config("grad-check", vars(args))
    report = training.gradient_check_report(seed=args.seed)
    ok = True
    for family, dev in report.items():
        passed = dev <= 1e-5
        ok = ok and passed
        print(f"{family}: max relative gradient deviation {dev:.3e} "
              f"({'OK' if passed else 'FAIL'} at 1e-5)")
    return 0 if ok else 2


def _cmd_converge(args) -> int:
    dx_list = _parse_float_list(args.dx_list, "--dx-list")
    _log_config("converge", vars(args))
    result = convergence_study(args.d, dx_list, args.dt, args.t, dt_mode=args.dt_mode)
    if args.out:
        out = Path(args.out)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("dx,dt,n_steps,error\n")
            for dx, dt_used, n_steps, err in result.rows:
                fh.write(
                    f"{data_mod.fmt_real(dx)},{data_mod.fmt_real(dt_used)},{n_steps},{data_mod.fmt_real(err)}\n"
                )
        figures.render_convergence(result, _figure_path(out))
    for dx, dt_used, n_steps, err in result.rows:
        print(f"dx={dx:g} dt={dt_used:g} steps={n_steps} error={err:.6e}")
    if result.order is None:
        print("fitted order: undefined")
    else:
        print(f"fitted order: {result.order:.4f}")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser() -> _Parser:
    parser = _Parser(prog="seqsurrogate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample the parameter space and simulate a database")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d-min", type=float, default=1.0)
    p.add_argument("--d-max", type=float, default=3.0)
    p.add_argument("--dx-min", type=float, default=1e-5)
    p.add_argument("--dx-max", type=float, default=1e-3)
    p.add_argument("--dx-scale", choices=("linear", "log"), default="log")
    p.add_argument("--dt", type=float, default=1e-6)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--sampler", choices=("uniform", "lhs"), default="uniform")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--record-profile", action="store_true")
    p.add_argument("--profile-points", type=int, default=100)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("split", help="assign train/test membership and fit the scaler")
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output manifest (default: rewrite --manifest)")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train a surrogate on the training split")
    p.add_argument("--model", choices=_MODEL_CHOICES, required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="TrainConfig JSON overriding the defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--desk-scale", action="store_true")
    p.add_argument("--mode", choices=("initial", "variable"), default="initial")
    p.add_argument("--min-len", type=int, default=10)
    p.add_argument("--max-len", type=int, default=90)
    p.add_argument("--hidden", type=int, default=14)
    p.add_argument("--widths", default="4,8,13")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a model on the test split")
    p.add_argument("--model", choices=_MODEL_CHOICES, default=None)
    p.add_argument("--model-file", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--input-len", type=int, default=1)
    p.add_argument("--desk-scale", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("study-length", help="error vs observed-prefix length")
    p.add_argument("--model", choices=_MODEL_CHOICES, default=None)
    p.add_argument("--model-file", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--lengths", default="10:90:10", help="a:b:step, inclusive")
    p.add_argument("--out", required=True)
    p.add_argument("--desk-scale", action="store_true")
    p.set_defaults(func=_cmd_study_length)

    p = sub.add_parser("study-dx", help="resolution extrapolation vs the closed form")
    p.add_argument("--model", choices=_MODEL_CHOICES, default=None)
    p.add_argument("--model-file", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--d", type=float, default=1.34)
    p.add_argument("--dx-list", default="1e-5,3e-6,1e-6")
    p.add_argument("--solver-dx-list", default="1e-3,5e-4,2e-4,1e-4")
    p.add_argument("--dt", type=float, default=1e-6, help="solver anchor time step at the coarsest dx")
    p.add_argument("--out", required=True)
    p.add_argument("--desk-scale", action="store_true")
    p.set_defaults(func=_cmd_study_dx)

    p = sub.add_parser("early-stop", help="in-flight termination monitor over the test split")
    p.add_argument("--model", choices=_MODEL_CHOICES, default=None)
    p.add_argument("--model-file", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--n-obs", type=int, default=50)
    p.add_argument("--check-horizon", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.02)
    p.add_argument("--out", required=True)
    p.add_argument("--desk-scale", action="store_true")
    p.set_defaults(func=_cmd_early_stop)

    p = sub.add_parser("grad-check", help="verify analytic gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("converge", help="solver error vs spatial resolution")
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--dx-list", required=True)
    p.add_argument("--dt", type=float, default=1e-6)
    p.add_argument("--t", type=float, default=1e-3)
    p.add_argument("--dt-mode", choices=("scaled", "fixed"), default="scaled")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_converge)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ValidationError, MalformedFileError, FormatVersionError) as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return 1
    except SeqSurrogateError as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"error: internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
