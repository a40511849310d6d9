"""Optimizers, direct-fit driver, run logs and jump diagnostics."""

import io

import numpy as np
import pytest

from eigfree.errors import AbortNonFinite, InvalidInput
from eigfree.losses import LossParams
from eigfree.optim import (
    JumpInfo,
    RunLog,
    RunRecord,
    adam_init,
    adam_step,
    detect_gradient_jump,
    gd_step,
    make_problem,
    run_direct_fit,
)
from eigfree.synth import GenConfig, gen_ellipse, gen_plane, stream


class OracleAdam:
    """Independent scripted Adam for the lockstep comparison."""

    def __init__(self, n, lr):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.lr = lr

    def step(self, params, grad):
        self.t += 1
        self.m = 0.9 * self.m + 0.1 * grad
        self.v = 0.999 * self.v + 0.001 * grad * grad
        mh = self.m / (1.0 - 0.9**self.t)
        vh = self.v / (1.0 - 0.999**self.t)
        return params - self.lr * mh / (np.sqrt(vh) + 1e-8)


class TestAdam:
    def test_zero_gradient_no_change(self):
        state = adam_init(4, lr=0.1)
        params = np.array([1.0, -2.0, 3.0, 0.5])
        state, out = adam_step(state, params, np.zeros(4))
        assert np.all(out == params)

    def test_first_step_hand_computed(self):
        state = adam_init(1, lr=0.5)
        g = np.array([0.3])
        # bias-corrected first step: m_hat = g, v_hat = g^2
        expected = 0.0 - 0.5 * 0.3 / (0.3 + 1e-8)
        _, out = adam_step(state, np.zeros(1), g)
        assert abs(out[0] - expected) <= 1e-15

    def test_lockstep_with_oracle(self):
        rng = stream(1, 1)
        n = 6
        oracle = OracleAdam(n, lr=0.05)
        state = adam_init(n, lr=0.05)
        p_lib = np.zeros(n)
        p_orc = np.zeros(n)
        for k in range(100):
            g = rng.standard_normal(n)
            state, p_lib = adam_step(state, p_lib, g)
            p_orc = oracle.step(p_orc, g)
            assert np.abs(p_lib - p_orc).max() <= 1e-12

    def test_nonfinite_gradient_aborts(self):
        state = adam_init(2, lr=0.1)
        with pytest.raises(AbortNonFinite):
            adam_step(state, np.zeros(2), np.array([1.0, np.nan]))


class TestGd:
    def test_zero_lr(self):
        p = np.array([1.0, 2.0])
        assert np.all(gd_step(p, np.ones(2), 0.0) == p)

    def test_basis_direction(self):
        out = gd_step(np.zeros(3), np.array([1.0, 0.0, 0.0]), 0.1)
        assert np.allclose(out, [-0.1, 0.0, 0.0])

    def test_closed_form(self):
        rng = stream(2, 1)
        p = rng.standard_normal(5)
        g = rng.standard_normal(5)
        assert np.abs(gd_step(p, g, 0.37) - (p - 0.37 * g)).max() == 0.0

    def test_nonfinite(self):
        with pytest.raises(AbortNonFinite):
            gd_step(np.zeros(2), np.array([np.inf, 0.0]), 0.1)


class TestRunDirectFit:
    def test_zero_iters_returns_initial(self):
        inst = gen_plane(GenConfig(seed=3, variant="plane", n_points=20, n_outliers=2))
        state, log = run_direct_fit(inst, "edfree", "weights",
                                    LossParams(1.0, 1e-4), iters=0)
        assert len(log.records) == 0
        assert np.all(state.logits == 4.0)

    def test_bitwise_reproducible(self):
        inst = gen_plane(GenConfig(seed=4, variant="plane", n_points=30, n_outliers=3))
        params = LossParams(1000.0, 1e-4)
        s1, l1 = run_direct_fit(inst, "edfree", "weights", params, lr=0.05, iters=50)
        s2, l2 = run_direct_fit(inst, "edfree", "weights", params, lr=0.05, iters=50)
        assert s1.logits.tobytes() == s2.logits.tobytes()
        assert all(a.loss_total == b.loss_total for a, b in zip(l1.records, l2.records))

    def test_first_order_descent(self):
        # one tiny GD step changes the loss by -lr * ||g||^2 + O(lr^2)
        inst = gen_ellipse(GenConfig(seed=5, variant="ellipse", n_points=25,
                                     n_outliers=5))
        params = LossParams(1.0, 5e-3)
        problem = make_problem(inst, "edfree", "weights", params)
        state = problem.initial_state()
        loss0, grad, _ = problem.loss_and_grad(state)
        lr = 1e-7
        flat = problem.pack(state) - lr * grad
        state2 = problem.unpack(state, flat)
        loss1, _, _ = problem.loss_and_grad(state2)
        predicted = -lr * float(grad @ grad)
        actual = loss1.total - loss0.total
        assert abs(actual - predicted) <= 1e-3 * abs(predicted) + 1e-18

    def test_displacement_mode_requires_2d_task(self):
        inst = gen_plane(GenConfig(seed=6, variant="plane", n_points=20, n_outliers=2))
        with pytest.raises(InvalidInput):
            run_direct_fit(inst, "edfree", "displacements", LossParams(0.0, 0.0))

    def test_edgrad_rejects_displacements(self):
        inst = gen_ellipse(GenConfig(seed=7, variant="ellipse", n_points=20,
                                     n_outliers=2))
        with pytest.raises(InvalidInput):
            run_direct_fit(inst, "edgrad", "joint", LossParams(0.0, 0.0))

    def test_final_state_returned_on_abort(self):
        # equal eigenvalue spectrum with guard 0 aborts at iteration 0
        from eigfree.geometry import PlaneModel, TaskInstance

        pts = np.concatenate([np.eye(3), -np.eye(3)]) * 0.5 + np.array([0, 0, 1.0])
        inst = TaskInstance(
            "plane", pts, PlaneModel([0.0, 0.0, 1.0], [0.0, 0.0, 1.0]),
            np.ones(6, bool),
        )
        state, log = run_direct_fit(inst, "edgrad", "weights",
                                    LossParams(0.0, 0.0), iters=10)
        assert log.aborted
        assert "DegenerateEigengap" in log.abort_reason
        assert state is not None


class TestRunLog:
    def _sample_log(self):
        log = RunLog()
        for t, (lt, gn) in enumerate([(3.0, 1.0), (2.0, 1.0), (1.5, 100.0), (1.2, 1.0)]):
            log.append(RunRecord(iter=t, loss_total=lt, eig_term=lt, aux_term=0.0,
                                 disp_term=0.0, grad_norm=gn,
                                 weights=np.array([0.5, 0.25]) if t == 0 else None))
        return log

    def test_detect_jump_hand_enumeration(self):
        info = detect_gradient_jump(self._sample_log())
        assert info == JumpInfo(max_ratio=100.0, iter=2)

    def test_constant_norms_ratio_one(self):
        log = RunLog()
        for t in range(5):
            log.append(RunRecord(iter=t, loss_total=1.0, eig_term=1.0, aux_term=0.0,
                                 disp_term=0.0, grad_norm=2.5))
        assert detect_gradient_jump(log).max_ratio == 1.0

    def test_too_short(self):
        log = RunLog()
        log.append(RunRecord(iter=0, loss_total=1.0, eig_term=1.0, aux_term=0.0,
                             disp_term=0.0, grad_norm=1.0))
        with pytest.raises(InvalidInput):
            detect_gradient_jump(log)

    def test_strictly_increasing_iterations(self):
        log = self._sample_log()
        with pytest.raises(InvalidInput):
            log.append(RunRecord(iter=1, loss_total=0.0, eig_term=0.0, aux_term=0.0,
                                 disp_term=0.0, grad_norm=0.0))

    def test_csv_schema(self):
        buf = io.StringIO()
        self._sample_log().to_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "iter,loss_total,eig,aux,disp,grad_norm"
        assert len(lines) == 5

    def test_text_round_trip_lossless(self):
        log = self._sample_log()
        log.aborted = True
        log.abort_reason = "iter 3: AbortNonFinite: test"
        back = RunLog.from_text(log.to_text())
        assert back.aborted == log.aborted
        assert back.abort_reason == log.abort_reason
        assert len(back.records) == len(log.records)
        for a, b in zip(log.records, back.records):
            assert a.iter == b.iter
            assert a.loss_total == b.loss_total
            assert a.grad_norm == b.grad_norm
            if a.weights is None:
                assert b.weights is None
            else:
                assert np.array_equal(a.weights, b.weights)
