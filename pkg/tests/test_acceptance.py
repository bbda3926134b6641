"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -rA` (or -s) to see the
per-criterion lines. The heavy fixtures (database generation and the three
seeded training runs) are session-scoped and shared across criteria; the
whole module targets a desk-scale budget of well under an hour.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import erfc
from scipy.stats import spearmanr

from seqsurrogate.cli import main as cli_main
from seqsurrogate.data import (
    ParamDim,
    ParamSpace,
    Scaler,
    downsample,
    fit_scaler,
    generate_dataset,
    load_dataset,
    sample_lhs,
    split_dataset,
)
from seqsurrogate.diffusion import (
    DiffusionConfig,
    analytic_concentration,
    convergence_study,
    simulate,
    solve_tridiagonal,
)
from seqsurrogate.evaluation import (
    early_stop_monitor,
    evaluate_test,
    extrapolation_study,
    iae,
    input_length_study,
)
from seqsurrogate.models import (
    ConstantModel,
    GruCellParams,
    OracleModel,
    load_model,
    save_model,
    serialize_model,
    stacked_forward,
)
from seqsurrogate.numerics import RngStream
from seqsurrogate.training import (
    TrainConfig,
    train_seq2seq,
    train_state_transition,
    gradient_check_report,
)

DATASET_SEED = 7
SPLIT_SEED = 3
TRAIN_SEEDS = (101, 202, 303)
DESK_STRIDE = 10


def report(cid, name, ok, detail=""):
    line = f"ACCEPTANCE {cid} {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    return ok


@pytest.fixture(scope="session")
def desk_dataset(tmp_path_factory):
    """Full-scale database (n=1000, 1000 steps, dt=1e-6), downsampled by 10
    and split 80/20; returns train/test sequences plus the fitted scaler."""
    root = tmp_path_factory.mktemp("acceptance")
    data_path = root / "diffusion.jsonl"
    space = ParamSpace(
        (ParamDim("D", 1.0, 3.0, "linear"), ParamDim("dx", 1e-5, 1e-3, "log"))
    )
    generate_dataset(space, 1000, 1e-6, 1000, "uniform", seed=DATASET_SEED,
                     out_path=data_path, jobs=2)
    full = load_dataset(data_path)
    assert len(full) == 1000
    finals = np.array([s.qoi[-1, 0] for s in full])
    assert finals.min() > 0.0 and finals.max() < 0.12  # analytic bound + margin
    sequences = [downsample(s, DESK_STRIDE) for s in full]
    train_ids, test_ids = split_dataset(sequences, 0.8, RngStream(SPLIT_SEED).child(12))
    by_id = {s.seq_id: s for s in sequences}
    train = [by_id[i] for i in train_ids]
    test = [by_id[i] for i in test_ids]
    scaler = fit_scaler(train)
    return {"train": train, "test": test, "scaler": scaler, "root": root}


@pytest.fixture(scope="session")
def comparison_models(desk_dataset):
    """Both families trained per seed at the published hyperparameters
    (seq2seq: 2x14 GRU, lr 1e-3, batch 20 sequences; one-step baseline:
    widths 4/8/13, lr 6e-3, batch 4000 transitions, 400 epochs)."""
    results = []
    for seed in TRAIN_SEEDS:
        cfg_s2s = TrainConfig(learn_rate=1e-3, batch_size=20, n_epochs=500,
                              seed=seed, report_every=250)
        s2s, _ = train_seq2seq(desk_dataset["train"], cfg_s2s, hidden=14,
                               scaler=desk_dataset["scaler"])
        cfg_st = TrainConfig(learn_rate=6e-3, batch_size=4000, n_epochs=400,
                             seed=seed, report_every=200)
        st, _ = train_state_transition(desk_dataset["train"], cfg_st,
                                       hidden_widths=(4, 8, 13),
                                       scaler=desk_dataset["scaler"])
        s2s_report = evaluate_test(s2s, desk_dataset["test"])
        st_report = evaluate_test(st, desk_dataset["test"])
        results.append({"seed": seed, "s2s": s2s, "st": st,
                        "s2s_median": s2s_report.median, "st_median": st_report.median})
    return results


@pytest.fixture(scope="session")
def variable_length_model(desk_dataset):
    cfg = TrainConfig(learn_rate=1e-3, batch_size=20, n_epochs=500,
                      seed=TRAIN_SEEDS[0], report_every=250)
    model, _ = train_seq2seq(desk_dataset["train"], cfg, hidden=14,
                             scaler=desk_dataset["scaler"], mode="variable",
                             slice_min=10, slice_max=90)
    return model


def test_criterion_1_solver_convergence(capsys):
    tick = time.perf_counter()
    result = convergence_study(1.34, [1e-3, 5e-4, 2e-4, 1e-4], 1e-6, 1e-3)
    elapsed = time.perf_counter() - tick
    code = cli_main(["converge", "--d", "1.34", "--dx-list", "1e-3,5e-4,2e-4,1e-4",
                     "--dt", "1e-6", "--t", "1e-3"])
    capsys.readouterr()
    ok = (result.order is not None and 1.7 <= result.order <= 2.3
          and elapsed < 60.0 and code == 0)
    with capsys.disabled():
        report(1, "solver convergence order", ok,
               f"order={result.order:.3f}, {elapsed:.1f}s")
    assert ok, f"fitted order {result.order} outside [1.7, 2.3] or runtime {elapsed:.1f}s >= 60s"


def test_criterion_2_analytic_oracle(capsys):
    worst = 0.0
    for d in (1.0, 1.5, 2.0, 2.5, 3.0):
        for t in (1e-6, 1e-5, 1e-4, 1e-3):
            s = math.sqrt(d * t)
            pts = sorted({min(1.0, k * s) for k in (2, 5, 10, 20)})
            ref, _ = quad(lambda x: erfc(x / (2.0 * s)), 0.0, 1.0,
                          epsabs=1e-14, limit=200, points=pts)
            worst = max(worst, abs(analytic_concentration(d, t) - ref))
    ok = worst <= 1e-9
    with capsys.disabled():
        report(2, "closed form vs quadrature", ok, f"worst |diff|={worst:.2e}")
    assert ok, f"closed form deviates from quadrature by {worst:.2e} > 1e-9"


def test_criterion_3_model_comparison(comparison_models, capsys):
    good = 0
    details = []
    for row in comparison_models:
        hit = row["s2s_median"] <= 0.05 and row["s2s_median"] < row["st_median"]
        good += hit
        details.append(
            f"seed {row['seed']}: seq2seq {row['s2s_median']:.4f} "
            f"vs one-step {row['st_median']:.4f} {'ok' if hit else 'MISS'}"
        )
    ok = good >= 2
    with capsys.disabled():
        report(3, "test-set accuracy comparison", ok, "; ".join(details))
    assert ok, "; ".join(details)


def test_criterion_4_input_length_study(variable_length_model, desk_dataset, capsys):
    lengths = list(range(10, 91, 10))
    table = input_length_study(variable_length_model, desk_dataset["test"], lengths)
    med = [r.median_iae for r in table.rows]
    rho = float(spearmanr(lengths, med).statistic)
    halved = med[-1] < 0.5 * med[0]
    # knee: first length after which the per-step relative improvement drops
    # below 25% (reported, not gated)
    knee = lengths[-1]
    for i in range(len(med) - 1):
        if med[i + 1] > 0.75 * med[i]:
            knee = lengths[i]
            break
    ok = rho <= -0.8 and halved
    detail = (f"spearman={rho:.3f}, median@10={med[0]:.4f}, median@90={med[-1]:.4f}, "
              f"knee~{knee}")
    with capsys.disabled():
        report(4, "input-length study", ok, detail)
    assert ok, detail


def test_criterion_5_resolution_extrapolation(comparison_models, desk_dataset, capsys):
    best = min(comparison_models, key=lambda r: r["s2s_median"])
    model_table, solver_table = extrapolation_study(
        best["s2s"], d=1.34, dx_list=[1e-5, 3e-6, 1e-6], dt=1e-5, n_steps=100,
        solver_dx_list=(1e-3, 5e-4, 2e-4, 1e-4),
    )
    model_err = next(r.median_iae for r in model_table.rows if r.x == 1e-6)
    solver_err = next(r.median_iae for r in solver_table.rows if r.x == 1e-3)
    ok = model_err < solver_err
    detail = (f"surrogate@dx=1e-6 {model_err:.2e} vs solver@dx=1e-3 {solver_err:.2e}")
    with capsys.disabled():
        report(5, "resolution extrapolation", ok, detail)
    assert ok, (
        f"surrogate error at dx=1e-6 ({model_err:.3e}) is not below the reference "
        f"solver error at dx=1e-3 ({solver_err:.3e}). The implicit solver built "
        f"here is accurate to ~1e-4 (scaled) at its coarsest sampled resolution, "
        f"so its trajectories carry no exploitable resolution error for a learned "
        f"surrogate (typical error ~1e-3) to undercut; the gate is unattainable "
        f"with this solver. See the decisions ledger for the full analysis."
    )


def test_criterion_6_gradient_integrity(capsys):
    tick = time.perf_counter()
    devs = gradient_check_report()
    elapsed = time.perf_counter() - tick
    ok = all(v <= 1e-5 for v in devs.values())
    with capsys.disabled():
        report(6, "gradient integrity", ok,
               f"seq2seq {devs['seq2seq']:.2e}, one-step {devs['state_transition']:.2e}, "
               f"{elapsed:.1f}s")
    assert ok, devs


def test_criterion_7_property_suites(tmp_path, capsys):
    checks = {}

    # GRU state bound in (-1, 1) from zero states
    g = RngStream(5).child(3).generator()
    layers = [GruCellParams(3, 6, "a", rng=g), GruCellParams(6, 6, "b", rng=g)]
    states = [np.zeros((6, 2)) for _ in layers]
    bound_ok = True
    for _ in range(60):
        _, states = stacked_forward(layers, g.uniform(-4, 4, (3, 2)), states)
        bound_ok &= all(np.all(np.abs(s) < 1.0) for s in states)
    checks["gru state bound"] = bound_ok

    # discrete maximum principle 0 <= c <= 1 (profile sampled on every node)
    seq = simulate(DiffusionConfig(d=2.0, dx=0.01, dt=1e-4, n_steps=150,
                                   record_profile=True, profile_points=101))
    prof = seq.qoi[:, 1:]
    checks["maximum principle"] = bool(prof.min() >= 0.0 and prof.max() <= 1.0 + 1e-12)

    # scaler roundtrip to 1e-12
    lo = g.uniform(-5, 5, 3)
    scaler = Scaler(lo, lo + g.uniform(0.1, 3.0, 3), n_static=2)
    vals = g.uniform(-10, 10, (50, 1))
    checks["scaler roundtrip"] = bool(
        np.allclose(scaler.unscale_qoi(scaler.scale_qoi(vals)), vals, rtol=1e-12, atol=1e-12)
    )

    # LHS stratification
    space = ParamSpace((ParamDim("a", 0, 1), ParamDim("b", 1e-5, 1e-3, "log")))
    lhs_ok = True
    for n in (1, 7, 64):
        pts = sample_lhs(space, n, RngStream(n))
        u = np.minimum(np.floor(pts[:, 0] * n).astype(int), n - 1)
        lhs_ok &= sorted(u) == list(range(n))
    checks["lhs stratification"] = lhs_ok

    # tridiagonal residual bound
    n = 5000
    lower = g.uniform(-1, 1, n - 1)
    upper = g.uniform(-1, 1, n - 1)
    mags = np.zeros(n)
    mags[:-1] += np.abs(upper)
    mags[1:] += np.abs(lower)
    diag = mags + g.uniform(0.1, 2.0, n)
    rhs = g.uniform(-5, 5, n)
    x = solve_tridiagonal(lower, diag, upper, rhs)
    resid = diag * x
    resid[:-1] += upper * x[1:]
    resid[1:] += lower * x[:-1]
    resid -= rhs
    checks["tridiagonal residual"] = bool(np.abs(resid).max() <= 1e-10 * np.abs(rhs).max())

    # serialization bitwise roundtrip
    from seqsurrogate.models import Seq2SeqModel

    model = Seq2SeqModel(["D", "dx"], 1, 4, 2, rng=g,
                         scaler=Scaler(np.zeros(3), np.ones(3), n_static=2))
    p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
    save_model(model, p1)
    save_model(load_model(p1), p2)
    checks["serialization roundtrip"] = p1.read_bytes() == p2.read_bytes()

    # seed determinism across generate / train / eval
    space = ParamSpace((ParamDim("D", 1, 3), ParamDim("dx", 0.02, 0.1, "log")))
    d1, d2 = tmp_path / "g1.jsonl", tmp_path / "g2.jsonl"
    generate_dataset(space, 4, 5e-4, 20, "uniform", seed=9, out_path=d1)
    generate_dataset(space, 4, 5e-4, 20, "uniform", seed=9, out_path=d2)
    gen_ok = d1.read_bytes() == d2.read_bytes()
    seqs = load_dataset(d1)
    cfg = TrainConfig(learn_rate=3e-3, batch_size=2, n_epochs=10, seed=4, report_every=100)
    ma, _ = train_seq2seq(seqs, cfg, hidden=3)
    mb, _ = train_seq2seq(seqs, cfg, hidden=3)
    train_ok = serialize_model(ma) == serialize_model(mb)
    ra = evaluate_test(ma, seqs)
    rb = evaluate_test(mb, seqs)
    eval_ok = ra.entries == rb.entries
    checks["seed determinism"] = gen_ok and train_ok and eval_ok

    ok = all(checks.values())
    detail = ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items())
    with capsys.disabled():
        report(7, "property suites", ok, detail)
    assert ok, detail


def test_criterion_8_early_termination(variable_length_model, desk_dataset, capsys):
    test_seqs = desk_dataset["test"]
    scaler = desk_dataset["scaler"]

    # oracle stub: terminate at the first checkpoint
    oracle = OracleModel(test_seqs, scaler=scaler)
    tr = early_stop_monitor(test_seqs[0], oracle, n_obs=50, check_horizon=10,
                            threshold=1e-12)
    oracle_ok = tr.terminated and tr.records[0].checkpoint == 1

    # constant stub on non-constant data: continue to exhaustion
    const = ConstantModel(0.5, scaler=scaler)
    tr2 = early_stop_monitor(test_seqs[0], const, n_obs=50, check_horizon=10,
                             threshold=1e-4)
    const_ok = (not tr2.terminated) and all(r.decision == "CONTINUE" for r in tr2.records)

    # the variable-length-trained model is the one that can encode prefixes of
    # any length, which is what the monitor feeds it: at least half the test
    # runs must hand over to the surrogate
    n_term = 0
    remainder_errors = []
    for seq in test_seqs:
        trace = early_stop_monitor(seq, variable_length_model, n_obs=50,
                                   check_horizon=10, threshold=0.02)
        if trace.terminated:
            n_term += 1
            truth = seq.qoi[trace.consumed:]
            remainder_errors.append(
                iae(scaler.scale_qoi(trace.remainder_pred), scaler.scale_qoi(truth))
            )
    frac = n_term / len(test_seqs)
    mean_rem = float(np.mean(remainder_errors)) if remainder_errors else float("nan")
    ok = oracle_ok and const_ok and frac >= 0.5
    detail = (f"oracle={'ok' if oracle_ok else 'FAIL'}, constant={'ok' if const_ok else 'FAIL'}, "
              f"terminated {100 * frac:.0f}%, mean remainder error {mean_rem:.4f} (reported)")
    with capsys.disabled():
        report(8, "early termination harness", ok, detail)
    assert ok, detail
