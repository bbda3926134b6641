import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqsurrogate.data import Scaler, fit_scaler
from seqsurrogate.diffusion import DiffusionConfig, SimulationSequence, simulate
from seqsurrogate.errors import ShapeMismatchError, ValidationError
from seqsurrogate.evaluation import (
    early_stop_monitor,
    evaluate_test,
    extrapolation_study,
    iae,
    input_length_study,
)
from seqsurrogate.models import ConstantModel, OracleModel
from seqsurrogate.numerics import RngStream
from seqsurrogate.diffusion import fit_order


def make_set(n=5, length=31):
    g = RngStream(41).child(1).generator()
    seqs = []
    for i in range(n):
        qoi = np.cumsum(g.uniform(0.0, 0.05, (length, 1)), axis=0)
        seqs.append(SimulationSequence(i, {"D": float(g.uniform(1, 3)),
                                           "dx": float(g.uniform(1e-4, 1e-3))}, 1e-5, qoi))
    return seqs


class TestIae:
    def test_identical(self):
        a = np.linspace(0, 1, 8).reshape(-1, 1)
        assert iae(a, a) == 0.0

    def test_constant_offset(self):
        a = np.zeros((13, 1))
        assert iae(a + 0.1, a) == pytest.approx(0.1)

    def test_multidim_averages_dimensions(self):
        pred = np.array([[0.0, 0.2], [0.0, 0.2]])
        true = np.zeros((2, 2))
        assert iae(pred, true) == pytest.approx(0.1)

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            iae(np.zeros((3, 1)), np.zeros((4, 1)))

    @given(seed=st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_metric_properties(self, seed):
        g = np.random.Generator(np.random.Philox(key=np.array([seed, 1], dtype=np.uint64)))
        a = g.uniform(-1, 1, (9, 2))
        b = g.uniform(-1, 1, (9, 2))
        c = g.uniform(-1, 1, (9, 2))
        assert iae(a, b) >= 0.0
        assert iae(a, c) <= iae(a, b) + iae(b, c) + 1e-15
        assert iae(a[::-1], b[::-1]) == pytest.approx(iae(a, b))
        if not np.array_equal(a, b):
            assert iae(a, b) > 0.0


class TestEvaluateTest:
    def test_oracle_gives_zero(self):
        seqs = make_set()
        report = evaluate_test(OracleModel(seqs), seqs)
        assert all(v == 0.0 for _, v in report.entries)

    def test_constant_stub_hand_summation(self):
        seqs = make_set()
        scaler = fit_scaler(seqs)
        stub = ConstantModel(0.5, scaler=scaler)
        report = evaluate_test(stub, seqs, input_len=1)
        for seq, (sid, value) in zip(seqs, report.entries):
            scaled_truth = scaler.scale_qoi(seq.qoi[1:])
            by_hand = float(np.mean(np.abs(scaled_truth - 0.5)))
            assert value == pytest.approx(by_hand, abs=1e-12)

    def test_summary_recomputable(self):
        seqs = make_set()
        report = evaluate_test(ConstantModel(0.3, scaler=fit_scaler(seqs)), seqs)
        vals = np.array([v for _, v in report.entries])
        assert report.mean == pytest.approx(float(np.mean(vals)), abs=1e-12)
        assert report.median == pytest.approx(float(np.median(vals)), abs=1e-12)
        assert report.std == pytest.approx(float(np.std(vals)), abs=1e-12)

    def test_parallel_equals_serial(self):
        seqs = make_set(8)
        model = ConstantModel(0.4, scaler=fit_scaler(seqs))
        serial = evaluate_test(model, seqs, jobs=1)
        parallel = evaluate_test(model, seqs, jobs=2)
        assert serial.entries == parallel.entries

    def test_empty_test_set(self):
        with pytest.raises(ValidationError):
            evaluate_test(ConstantModel(0.5), [])

    def test_csv_output(self, tmp_path):
        seqs = make_set(3)
        report = evaluate_test(OracleModel(seqs), seqs)
        path = tmp_path / "r.csv"
        report.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "sequence_id,iae"
        assert len(lines) == 4


class TestInputLengthStudy:
    def test_oracle_all_zero(self):
        seqs = make_set(4, length=41)
        table = input_length_study(OracleModel(seqs), seqs, [10, 20, 30])
        assert [r.median_iae for r in table.rows] == [0.0, 0.0, 0.0]

    def test_rows_sorted_and_complete(self):
        seqs = make_set(4, length=41)
        table = input_length_study(ConstantModel(0.5, scaler=fit_scaler(seqs)), seqs,
                                   [30, 10, 20])
        assert [r.x for r in table.rows] == [10.0, 20.0, 30.0]
        assert all(r.n == 4 for r in table.rows)

    def test_length_out_of_range(self):
        seqs = make_set(3, length=11)
        with pytest.raises(ValidationError):
            input_length_study(OracleModel(seqs), seqs, [11])

    def test_csv(self, tmp_path):
        seqs = make_set(3, length=21)
        table = input_length_study(OracleModel(seqs), seqs, [5, 10])
        table.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "x,median_iae,mean_iae,n"


class TestExtrapolationStudy:
    def _scaler(self):
        # features: D, dx, qoi; qoi range matching the sampled regime
        return Scaler(np.array([1.0, 1e-5, 0.0]), np.array([3.0, 1e-3, 0.0616]), n_static=2)

    def test_solver_column_second_order(self):
        stub = ConstantModel(0.5, scaler=self._scaler())
        model_table, solver_table = extrapolation_study(
            stub, d=1.34, dx_list=[1e-6], dt=1e-5, n_steps=100,
            solver_dx_list=(1e-3, 5e-4, 2e-4),
        )
        order = fit_order([r.x for r in solver_table.rows],
                          [r.median_iae for r in solver_table.rows])
        assert order is not None and 1.7 <= order <= 2.3

    def test_model_rows_mechanics(self):
        from seqsurrogate.diffusion import analytic_trajectory

        scaler = self._scaler()
        stub = ConstantModel(0.5, scaler=scaler)
        model_table, _ = extrapolation_study(
            stub, d=1.34, dx_list=[1e-6, 1e-5, 3e-6], dt=1e-5, n_steps=50,
            solver_dx_list=(1e-3,),
        )
        assert [r.x for r in model_table.rows] == [1e-6, 3e-6, 1e-5]
        # direct summation oracle: mean |0.5 - scaled closed form| over steps 1..50
        truth_scaled = scaler.scale_qoi(analytic_trajectory(1.34, 1e-5, 50)[1:])
        expected = float(np.mean(np.abs(truth_scaled - 0.5)))
        for r in model_table.rows:
            assert r.median_iae == pytest.approx(expected, abs=1e-12)
            assert r.n == 1

    def test_requires_scaler(self):
        with pytest.raises(ValidationError):
            extrapolation_study(ConstantModel(0.5), d=1.34, dx_list=[1e-6], dt=1e-5,
                                n_steps=10)


class TestEarlyStopMonitor:
    def _seq(self, length=101):
        return simulate(DiffusionConfig(d=1.5, dx=0.05, dt=5e-4, n_steps=length - 1))

    def test_infinite_threshold_terminates_immediately(self):
        seq = self._seq()
        stub = ConstantModel(0.9, scaler=None)
        trace = early_stop_monitor(seq, stub, n_obs=10, check_horizon=5,
                                   threshold=float("inf"))
        assert trace.terminated
        assert trace.records[0].decision == "TERMINATE"
        assert len(trace.records) == 1
        assert trace.consumed == 15

    def test_zero_threshold_never_terminates(self):
        seq = self._seq(41)
        stub = ConstantModel(0.9, scaler=None)
        trace = early_stop_monitor(seq, stub, n_obs=10, check_horizon=5, threshold=0.0)
        assert not trace.terminated
        assert all(r.decision == "CONTINUE" for r in trace.records)
        assert trace.remainder_pred is None
        # consumed everything that fits whole windows
        assert trace.consumed == 40

    def test_oracle_terminates_at_first_checkpoint(self):
        seq = self._seq(61)
        oracle = OracleModel([seq])
        trace = early_stop_monitor(seq, oracle, n_obs=10, check_horizon=10,
                                   threshold=1e-12)
        assert trace.terminated
        assert trace.records[0].checkpoint == 1
        assert trace.records[0].iae == 0.0
        np.testing.assert_array_equal(trace.remainder_pred, seq.qoi[20:])

    def test_decision_rule_is_strict_inequality(self):
        seq = self._seq(41)
        scaler = fit_scaler([seq])
        stub = ConstantModel(0.5, scaler=scaler)
        trace = early_stop_monitor(seq, stub, n_obs=10, check_horizon=5, threshold=1e-4)
        for rec in trace.records:
            assert (rec.decision == "TERMINATE") == (rec.iae < 1e-4)

    def test_exhaustion_error(self):
        seq = self._seq(11)
        with pytest.raises(ValidationError):
            early_stop_monitor(seq, ConstantModel(0.5), n_obs=20, check_horizon=5,
                               threshold=0.5)

    def test_iterable_source_needs_metadata(self):
        with pytest.raises(ValidationError):
            early_stop_monitor(iter([np.zeros(1)]), ConstantModel(0.5), 1, 1, 0.5)

    def test_iterable_source_works(self):
        seq = self._seq(31)
        trace = early_stop_monitor(iter(seq.qoi), OracleModel([seq]), n_obs=5,
                                   check_horizon=5, threshold=1e-12,
                                   params=seq.params, total_steps=seq.qoi.shape[0])
        assert trace.terminated

    def test_trace_csv(self, tmp_path):
        seq = self._seq(41)
        trace = early_stop_monitor(seq, ConstantModel(0.9), n_obs=10, check_horizon=5,
                                   threshold=0.0)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "checkpoint,n_obs,iae,decision"
        assert len(lines) == len(trace.records) + 1

    def test_validation(self):
        seq = self._seq(31)
        with pytest.raises(ValidationError):
            early_stop_monitor(seq, ConstantModel(0.5), n_obs=0, check_horizon=1, threshold=0.1)
        with pytest.raises(ValidationError):
            early_stop_monitor(seq, ConstantModel(0.5), n_obs=1, check_horizon=1, threshold=-0.1)
