"""Forward-process core: flows, rates, event-time inversion, simulation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as scipy_stats

from oracles import thinning_zzp
from pdgm import pdmp
from pdgm.errors import DegenerateGradient
from pdgm.streams import stream


def vec(*xs):
    return np.array(xs, dtype=float)


class TestFlows:
    def test_linear_flow(self):
        x, v = pdmp.flow_linear(vec(0, 0), vec(1, -1), 2.0)
        assert np.allclose(x, [2, -2]) and np.allclose(v, [1, -1])

    def test_linear_flow_identity_at_zero(self):
        x, v = pdmp.flow_linear(vec(3), vec(1), 0.0)
        assert np.allclose(x, [3]) and np.allclose(v, [1])

    def test_linear_flow_reversible(self):
        x, v = pdmp.flow_linear(vec(1, 2), vec(-1, -1), 1.0)
        x, v = pdmp.flow_linear(x, v, -1.0)
        assert np.allclose(x, [1, 2]) and np.allclose(v, [-1, -1])

    def test_rotation_quarter_period(self):
        x, v = pdmp.flow_hamiltonian(vec(1), vec(0), np.pi / 2)
        assert np.allclose(x, [0], atol=1e-15) and np.allclose(v, [-1])

    def test_rotation_full_period(self):
        x, v = pdmp.flow_hamiltonian(vec(1, 2), vec(3, 4), 2 * np.pi)
        assert np.allclose(x, [1, 2]) and np.allclose(v, [3, 4])

    @given(st.integers(0, 2**32 - 1), st.floats(-10, 10))
    @settings(max_examples=30, deadline=None)
    def test_group_property(self, seed, s):
        r = stream(seed)
        x, v = r.standard_normal(3), r.standard_normal(3)
        for flow in (pdmp.flow_linear, pdmp.flow_hamiltonian):
            x2, v2 = flow(*flow(x, v, s), -s)
            assert np.max(np.abs(x2 - x)) <= 1e-12 * max(1, np.max(np.abs(x)))
            assert np.max(np.abs(v2 - v)) <= 1e-12 * max(1, np.max(np.abs(v)))

    def test_rotation_composition(self):
        x, v = stream(3).standard_normal(2), stream(4).standard_normal(2)
        a = pdmp.flow_hamiltonian(*pdmp.flow_hamiltonian(x, v, 0.7), 0.5)
        b = pdmp.flow_hamiltonian(x, v, 1.2)
        assert np.allclose(a[0], b[0], atol=1e-12)
        assert np.allclose(a[1], b[1], atol=1e-12)


class TestRates:
    def test_zzp_rates_gaussian(self):
        spec = pdmp.ProcessSpec("zzp", 2, lambda_r=0.0)
        x, v = vec(2, -1), vec(1, 1)
        assert pdmp.zzp_rate(x, v, 0, spec) == 2.0
        assert pdmp.zzp_rate(x, v, 1, spec) == 0.0

    def test_zzp_rate_zero_potential(self):
        spec = pdmp.ProcessSpec("zzp", 1, lambda_r=0.0, potential="zero")
        assert pdmp.zzp_rate(vec(5), vec(1), 0, spec) == 0.0

    def test_zzp_rate_with_refresh(self):
        spec = pdmp.ProcessSpec("zzp", 1, lambda_r=0.5)
        assert pdmp.zzp_rate(vec(-3), vec(-1), 0, spec) == 3.5

    def test_bps_rate(self):
        assert pdmp.bps_reflection_rate(vec(1, 0), vec(2, 5)) == 2.0
        assert pdmp.bps_reflection_rate(vec(1, 1), vec(-1, -1)) == 0.0
        assert pdmp.bps_reflection_rate(vec(0, 0), vec(3, -4)) == 0.0


class TestJumps:
    def test_flip(self):
        assert np.allclose(pdmp.zzp_flip(vec(1, 1), 1), [1, -1])
        assert np.allclose(pdmp.zzp_flip(vec(-1), 0), [1])

    @given(st.integers(0, 2**32 - 1), st.integers(0, 3))
    @settings(max_examples=20, deadline=None)
    def test_flip_involution(self, seed, i):
        v = np.sign(stream(seed).standard_normal(4)) * 1.0
        assert np.allclose(pdmp.zzp_flip(pdmp.zzp_flip(v, i), i), v)

    def test_reflect(self):
        assert np.allclose(pdmp.bps_reflect(vec(1, 0), vec(1, 1)), [-1, 1])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_reflect_norm_and_involution(self, seed):
        r = stream(seed)
        x = r.standard_normal(3) + 0.1
        v = r.standard_normal(3)
        w = pdmp.bps_reflect(x, v)
        assert abs(np.linalg.norm(w) - np.linalg.norm(v)) <= 1e-12
        assert np.max(np.abs(pdmp.bps_reflect(x, w) - v)) <= 1e-12

    def test_reflect_degenerate(self):
        with pytest.raises(DegenerateGradient):
            pdmp.bps_reflect(vec(0, 0), vec(1, 1))


class TestInversion:
    # closed-form cases: solve int_0^t (a + b u)_+ + c du = E
    cases = [
        (0.0, 1.0, 0.0, 0.5, 1.0),
        (1.0, 1.0, 0.0, 1.5, 1.0),
        (-2.0, 1.0, 0.0, 2.0, 4.0),
        (0.0, 1.0, 1.0, 1.5, 1.0),
    ]

    @pytest.mark.parametrize("a,b,c,e,expected", cases)
    def test_closed_form(self, a, b, c, e, expected):
        t = pdmp.invert_piecewise_linear_rate(np.array([a]), b, c, np.array([e]))
        assert abs(float(t[0]) - expected) <= 1e-12

    def test_constant_rate(self):
        t = pdmp.invert_piecewise_linear_rate(np.array([0.0]), 0.0, 2.0, np.array([3.0]))
        assert abs(float(t[0]) - 1.5) <= 1e-12

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_roundtrip_against_integral(self, seed):
        r = stream(seed)
        a = r.normal(0, 2, size=8)
        b = float(r.uniform(0.1, 2.0))
        c = float(r.uniform(0.0, 2.0))
        e = r.exponential(size=8) + 1e-3
        t = pdmp.invert_piecewise_linear_rate(a, b, c, e)
        back = pdmp.integrated_rate(a, b, c, t)
        assert np.max(np.abs(back - e) / e) <= 1e-10


class TestSimulation:
    def test_pure_rotation_no_events(self):
        spec = pdmp.ProcessSpec("rhmc", 1, lambda_r=0.0, strict=False)
        traj = pdmp.simulate_forward(spec, pdmp.State(vec(1), vec(0)),
                                     np.pi / 2, stream(0))
        assert len(traj.events) == 0
        assert np.allclose(traj.final.x, [0], atol=1e-12)
        assert np.allclose(traj.final.v, [-1])

    def test_zero_potential_no_events(self):
        spec = pdmp.ProcessSpec("zzp", 1, lambda_r=0.0, potential="zero")
        state = pdmp.sample_state_at(spec, vec(0), vec(1), 3.0, stream(0))
        assert np.allclose(state.x, [3]) and np.allclose(state.v, [1])

    def test_first_event_time_mean(self):
        # from the origin with unit velocity the first flip time is sqrt(2E),
        # E ~ Exp(1), with mean sqrt(pi/2)
        spec = pdmp.ProcessSpec("zzp", 1, lambda_r=0.0)
        rng = stream(11)
        e = rng.exponential(size=100_000)
        t = pdmp.invert_piecewise_linear_rate(np.zeros(100_000), 1.0, 0.0, e)
        assert abs(t.mean() - np.sqrt(np.pi / 2)) <= 0.01

    def test_first_event_against_thinning_oracle(self):
        spec = pdmp.ProcessSpec("zzp", 1, t_f=6.0, lambda_r=0.0)
        n = 4000
        events = []
        for seed in range(n):
            traj = pdmp.simulate_forward(spec, pdmp.State(vec(0), vec(1)),
                                         6.0, stream(100, seed))
            events.append(traj.events[0].time if traj.events else np.inf)
        lib_mean = np.mean([t for t in events if np.isfinite(t)])
        _, _, first = thinning_zzp(np.zeros((n, 1)), np.ones((n, 1)), 6.0, 0.0,
                                   stream(101))
        orc_mean = first[np.isfinite(first)].mean()
        assert abs(lib_mean - orc_mean) <= 0.05

    def test_zzp_converges_to_gaussian(self):
        spec = pdmp.ProcessSpec("zzp", 1, t_f=10.0, lambda_r=1.0)
        x, _ = pdmp.sample_states_at(spec, np.zeros((10_000, 1)), 10.0, stream(5))
        assert scipy_stats.kstest(x[:, 0], "norm").pvalue > 0.01

    def test_bps_stationary_variance(self):
        spec = pdmp.ProcessSpec("bps", 2, lambda_r=1.0)
        rng = stream(6)
        x0 = rng.standard_normal((10_000, 2))
        v0 = rng.standard_normal((10_000, 2))
        x, _ = pdmp.sample_states_at(spec, x0, 5.0, rng, v0=v0)
        assert np.all(x.var(axis=0) > 0.9) and np.all(x.var(axis=0) < 1.1)

    def test_rhmc_stationary_matches_thinning_oracle(self):
        from oracles import thinning_rhmc

        spec = pdmp.ProcessSpec("rhmc", 2, lambda_r=1.0)
        rng = stream(7)
        x0 = rng.standard_normal((4000, 2))
        v0 = rng.standard_normal((4000, 2))
        x, _ = pdmp.sample_states_at(spec, x0, 3.0, rng, v0=v0)
        xo, _ = thinning_rhmc(x0, v0, 3.0, 1.0, stream(8))
        assert scipy_stats.kstest(x[:, 0], xo[:, 0]).pvalue > 0.01

    def test_sample_at_t_zero(self):
        spec = pdmp.ProcessSpec("zzp", 2, lambda_r=1.0)
        state = pdmp.sample_state_at(spec, vec(0.3, -0.7), vec(1, 1), 0.0, stream(0))
        assert np.allclose(state.x, [0.3, -0.7]) and np.allclose(state.v, [1, 1])

    def test_determinism(self):
        spec = pdmp.ProcessSpec("bps", 2, lambda_r=1.0)
        a = pdmp.sample_states_at(spec, np.zeros((50, 2)), 4.0, stream(9))
        b = pdmp.sample_states_at(spec, np.zeros((50, 2)), 4.0, stream(9))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestSchedule:
    def test_unit_schedule_warp_is_identity(self):
        s = pdmp.Schedule(((0.0, 1.0),))
        t = np.linspace(0, 5, 7)
        assert np.allclose(s.warp(t), t) and np.allclose(s.unwarp(t), t)

    def test_piecewise_warp_roundtrip(self):
        s = pdmp.Schedule(((0.0, 0.5), (2.0, 2.0), (3.5, 1.0)))
        t = np.linspace(0, 6, 25)
        assert np.max(np.abs(s.unwarp(s.warp(t)) - t)) <= 1e-12

    def test_warped_simulation_matches_time_change(self):
        # a constant beta=2 schedule over horizon T behaves like the unit
        # schedule over horizon 2T
        fast = pdmp.ProcessSpec("zzp", 1, t_f=5.0, lambda_r=1.0,
                                beta=((0.0, 2.0),))
        slow = pdmp.ProcessSpec("zzp", 1, t_f=10.0, lambda_r=1.0)
        xf, _ = pdmp.sample_states_at(fast, np.zeros((8000, 1)), 5.0, stream(12))
        xs, _ = pdmp.sample_states_at(slow, np.zeros((8000, 1)), 10.0, stream(12))
        assert scipy_stats.kstest(xf[:, 0], xs[:, 0]).pvalue > 0.01


class TestTrajectoryArtifacts:
    def test_event_log_replay(self):
        spec = pdmp.ProcessSpec("zzp", 2, lambda_r=1.0)
        traj = pdmp.simulate_forward(spec, pdmp.State(vec(0, 0), vec(1, -1)),
                                     5.0, stream(13))
        st_mid = pdmp.replay_state_at(traj, 2.5)
        st_end = pdmp.replay_state_at(traj, 5.0)
        assert np.allclose(st_end.x, traj.final.x, atol=1e-12)
        assert st_mid.x.shape == (2,)

    def test_csv_roundtrip_structure(self, tmp_path):
        spec = pdmp.ProcessSpec("zzp", 2, lambda_r=1.0)
        traj = pdmp.simulate_forward(spec, pdmp.State(vec(0, 0), vec(1, 1)),
                                     3.0, stream(14))
        path = tmp_path / "traj.csv"
        pdmp.save_trajectory_csv(path, traj)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,kind,x0,x1,v0,v1"
        assert lines[1].split(",")[1] == "INIT"
        assert len(lines) == 2 + len(traj.events)
