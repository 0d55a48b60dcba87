import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brownian_batch, constant_solution, toy_problem
from jumpswitch.errors import ValidationError
from jumpswitch.models import preset
from jumpswitch.net import TrainConfig
from jumpswitch.osj import train_backward
from jumpswitch.problem import coarse_switch_steps
from jumpswitch.strategy import (decide, heatmap, read_heatmap_csv, realized_payoff, rollout,
                                 value_stderr, write_heatmap_csv, write_outcomes_csv)

COSTS = [[0.0, 0.5], [0.5, 0.0]]


class TestDecide:
    def test_switches_when_gain_exceeds_cost(self):
        sol = constant_solution(toy_problem(COSTS), [1.0, 2.0])
        x = np.zeros((3, 1))
        np.testing.assert_array_equal(decide(sol, 0, 0, x), [1, 1, 1])
        np.testing.assert_array_equal(decide(sol, 0, 1, x), [1, 1, 1])

    def test_stays_when_cost_too_high(self):
        sol = constant_solution(toy_problem([[0, 1.5], [1.5, 0]]), [1.0, 2.0])
        np.testing.assert_array_equal(decide(sol, 0, [0, 1], np.zeros((2, 1))), [0, 1])

    def test_tie_keeps_incumbent(self):
        sol = constant_solution(toy_problem([[0, 1.0], [1.0, 0]]), [1.0, 2.0])
        assert decide(sol, 0, 0, np.zeros((1, 1)))[0] == 0

    def test_off_switch_date_keeps_mode(self):
        p = toy_problem(COSTS, steps=8, switch_steps=coarse_switch_steps(8))
        sol = constant_solution(p, [1.0, 2.0])
        # sqrt(8) rounds to a stride of 3
        assert p.switch_steps == {0, 3, 6}
        assert decide(sol, 3, 0, np.zeros((1, 1)))[0] == 1
        assert decide(sol, 4, 0, np.zeros((1, 1)))[0] == 0

    def test_range_errors(self):
        sol = constant_solution(toy_problem(COSTS), [1.0, 2.0])
        for n, i in [(4, 0), (-1, 0), (0, 2)]:
            with pytest.raises(ValidationError):
                decide(sol, n, i, np.zeros((1, 1)))


class TestRollout:
    def test_single_mode_payoff_is_profit(self):
        p = toy_problem([[0.0]], running=[0.3], terminal=[1.0], steps=4)
        sol = constant_solution(p, 0.0)
        out = rollout(sol, brownian_batch(50, 4, seed=1), 0)
        np.testing.assert_allclose(out.payoff, 1.0 + 0.3, rtol=1e-14)
        assert out.mean_switches == 0 and out.stderr == 0

    def test_switch_cost_paid_once(self):
        p = toy_problem(COSTS, running=[0.0, 1.0], steps=4)
        sol = constant_solution(p, [1.0, 2.0])
        out = rollout(sol, brownian_batch(10, 4, seed=1), 0)
        np.testing.assert_allclose(out.payoff, 1.0 - 0.5, rtol=1e-14)
        assert np.all(out.switches == 1) and np.all(out.modes == 1)
        np.testing.assert_allclose(out.costs, 0.5)

    def test_training_seed_guard(self):
        p = toy_problem(COSTS)
        sol = constant_solution(p, 0.0, batch_seed=3)
        batch = brownian_batch(5, 4, seed=3)
        with pytest.raises(ValidationError, match="training seed"):
            rollout(sol, batch, 0)
        rollout(sol, batch, 0, in_sample=True)

    def test_mismatches(self):
        sol = constant_solution(toy_problem(COSTS), 0.0, batch_seed=9)
        with pytest.raises(ValidationError):
            rollout(sol, brownian_batch(5, 3), 0)
        with pytest.raises(ValidationError):
            rollout(sol, brownian_batch(5, 4), 2)

    def test_trained_policy_matches_independent_payoff(self):
        inst = preset("cl2d_lambda8", steps=8)
        sol = train_backward(inst.problem, inst.simulate(2048, 0),
                             TrainConfig(epochs=2, batch_size=256))
        test = inst.simulate(1000, 1)
        for i in range(3):
            out = rollout(sol, test, i)
            np.testing.assert_allclose(out.payoff, realized_payoff(inst.problem, test, out.modes, i),
                                       rtol=1e-12, atol=1e-12)
            prev = np.column_stack([np.full(1000, i), out.modes])
            steps = np.flatnonzero(np.any(prev[:, 1:] != prev[:, :-1], axis=0))
            assert all(inst.problem.is_switch_step(n) for n in steps)
            assert value_stderr(sol, test, i) > 0

    def test_only_switch_dates_used(self):
        inst = preset("cl2d_lambda8", steps=8, switch_grid="coarse")
        sol = train_backward(inst.problem, inst.simulate(1024, 0),
                             TrainConfig(epochs=1, batch_size=256))
        out = rollout(sol, inst.simulate(500, 2), 1)
        prev = np.column_stack([np.full(500, 1), out.modes])
        changed = np.flatnonzero(np.any(prev[:, 1:] != prev[:, :-1], axis=0))
        assert set(changed) <= {0, 3, 6}

    def test_outcomes_csv(self, tmp_path):
        p = toy_problem(COSTS, running=[0.0, 1.0], steps=4)
        sol = constant_solution(p, [1.0, 2.0])
        b = brownian_batch(10, 4, seed=1)
        write_outcomes_csv(tmp_path / "o.csv", [rollout(sol, b, 0), rollout(sol, b, 1)])
        lines = (tmp_path / "o.csv").read_text().splitlines()
        assert lines[0] == "mode_start,mean,stderr,mean_switches"
        assert lines[1].startswith("1,0.5,") and lines[2].startswith("2,1.0,")


@settings(max_examples=30, deadline=None)
@given(gain=st.floats(-2, 2), cost=st.floats(0.01, 2), start=st.integers(0, 1))
def test_rollout_payoff_matches_recomputation(gain, cost, start):
    p = toy_problem([[0, cost], [cost, 0]], running=[0.0, gain], steps=3)
    sol = constant_solution(p, [[0.0, gain]] * 3)
    b = brownian_batch(4, 3, seed=1)
    out = rollout(sol, b, start)
    np.testing.assert_allclose(out.payoff, realized_payoff(p, b, out.modes, start), atol=1e-14)
    assert np.all(out.switches <= 1)


class TestHeatmap:
    def setup_method(self):
        self.inst = preset("cl2d_lambda8", steps=4)
        self.sol = train_backward(self.inst.problem, self.inst.simulate(1024, 0),
                                  TrainConfig(epochs=1, batch_size=256))

    def test_csv_round_trip(self, tmp_path):
        hm = heatmap(self.sol, 0, 1, (0, 1), [(40, 60), (4, 8)], resolution=(6, 5))
        assert hm.modes.shape == (6, 5)
        write_heatmap_csv(tmp_path / "h.csv", hm)
        back = read_heatmap_csv(tmp_path / "h.csv")
        assert np.array_equal(back.modes, hm.modes)
        assert np.array_equal(back.axis1, hm.axis1) and np.array_equal(back.axis2, hm.axis2)
        assert (back.step, back.mode, back.coords) == (0, 1, (0, 1))
        assert sum(hm.fraction(k) for k in range(3)) == pytest.approx(1.0)
        text = (tmp_path / "h.csv").read_text().splitlines()
        assert text[1] == "coord1,coord2,mode" and len(text) == 32
        assert {int(r.split(",")[2]) for r in text[2:]} <= {1, 2, 3}

    def test_single_mode_problem(self):
        p = toy_problem([[0.0]], dim=2)
        sol = constant_solution(p, 0.0)
        hm = heatmap(sol, 0, 0, (0, 1), [(0, 1), (0, 1)], resolution=4)
        assert np.all(hm.modes == 0) and hm.fraction(0) == 1.0

    def test_coordinate_errors(self):
        for coords in [(0, 0), (0, 2), (-1, 1)]:
            with pytest.raises(ValidationError):
                heatmap(self.sol, 0, 0, coords, [(0, 1), (0, 1)])
        with pytest.raises(ValidationError):
            heatmap(self.sol, 0, 0, (0, 1), [(1, 0), (0, 1)])
        with pytest.raises(ValidationError):
            heatmap(self.sol, 0, 0, (0, 1), [(0, 1), (0, 1)], base=[1.0])
        p = toy_problem(COSTS, dim=3)
        with pytest.raises(ValidationError, match="base"):
            heatmap(constant_solution(p, 0.0), 0, 0, (0, 1), [(0, 1), (0, 1)])
