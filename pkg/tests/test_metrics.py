import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import aae_loop, ade_loop, fae_loop, fde_loop, heading_loop, random_batch
from trajforecast.data import DT
from trajforecast.metrics import (ForecastRecord, MetricReport, aae, ade, displacement_curve, evaluate, fae, fde,
                                  heading_errors, integrate_velocities, reports_to_csv, signed_angle)


def _rotate(x, angle):
    c, s = np.cos(angle), np.sin(angle)
    return x @ np.array([[c, s], [-s, c]])


def _quarter_turn(x):
    return np.stack([-x[..., 1], x[..., 0]], axis=-1)


class TestIntegrate:
    def test_zero_velocity(self):
        np.testing.assert_array_equal(integrate_velocities([1.0, 2.0], np.zeros((3, 2))), [[1, 2]] * 3)

    def test_arithmetic(self):
        out = integrate_velocities([0.0, 0.0], [[1.0, 2.0], [1.0, 2.0]], 0.04)
        np.testing.assert_allclose(out, [[0.04, 0.08], [0.08, 0.16]], rtol=0, atol=1e-15)

    def test_inverts_derive(self, small_scene):
        pos, vel = small_scene.positions, small_scene.feature("v_x", "v_y")
        # objects lead, time second: [N, T, 2]
        rebuilt = integrate_velocities(pos[0], vel[1:].transpose(1, 0, 2), DT).transpose(1, 0, 2)
        np.testing.assert_allclose(rebuilt, pos[1:], rtol=0, atol=1e-9)


class TestDisplacement:
    def test_identity(self, rng):
        x = rng.normal(size=(3, 5, 2))
        assert ade(x, x) == 0.0 and fde(x, x) == 0.0

    def test_three_four_five(self, rng):
        truth = rng.normal(size=(2, 4, 2))
        assert ade(truth + [3.0, 4.0], truth) == pytest.approx(5.0, abs=1e-12)

    def test_final_offset_only(self, rng):
        truth = rng.normal(size=(2, 4, 2))
        pred = truth.copy()
        pred[:, -1] += [0.0, 2.0]
        assert fde(pred, truth) == pytest.approx(2.0, abs=1e-12)

    def test_empty(self):
        with pytest.raises(ValueError):
            ade(np.zeros((0, 3, 2)), np.zeros((0, 3, 2)))
        with pytest.raises(ValueError):
            fde([])

    def test_records_interface(self, rng):
        pred, truth, last = random_batch(rng)
        recs = [ForecastRecord(p, t, l) for p, t, l in zip(pred, truth, last)]
        assert ade(recs) == ade(pred, truth)
        assert aae(recs) == aae(pred, truth, last)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2 ** 31))
    def test_ade_bounded_by_worst_step(self, seed):
        pred, truth, _ = random_batch(np.random.default_rng(seed))
        assert ade(pred, truth) <= displacement_curve(pred, truth).max()


class TestSignedAngle:
    def test_left_turn(self):
        assert signed_angle([1, 0], [0, 1]) == 90.0

    def test_right_turn(self):
        assert signed_angle([1, 0], [0, -1]) == -90.0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
    def test_identical(self, a, b):
        assert signed_angle([a, b], [a, b]) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-3, 1e3), st.floats(-np.pi, np.pi), st.floats(1e-6, 1e-3))
    def test_small_angles_resolved(self, r, heading, delta):
        v = [r * np.cos(heading), r * np.sin(heading)]
        w = [r * np.cos(heading + delta), r * np.sin(heading + delta)]
        assert abs(signed_angle(v, w) - np.degrees(delta)) < 1e-9

    @pytest.mark.parametrize("v", [[1.0, 0.0], [-2.0, 3.0], [0.0, -1.0]])
    def test_antiparallel_is_plus_180(self, v):
        assert signed_angle(v, np.negative(v)) == 180.0

    def test_degenerate_steps_flagged(self):
        angles, valid = heading_errors(np.array([[[0.0, 0.0], [1.0, 0.0]]]), np.array([[[1.0, 0.0], [2.0, 0.0]]]),
                                       np.zeros((1, 2)))
        np.testing.assert_array_equal(valid, [[False, True]])
        assert angles[0, 0] == 0.0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
    def test_range_and_oracle(self, a, b, c, d):
        got = signed_angle([a, b], [c, d])
        want = heading_loop((a, b), (c, d))
        assert -180.0 < got <= 180.0
        if want is not None:
            # near 180 the two routes may land on opposite sides of the cut
            assert min(abs(got - want), 360.0 - abs(got - want)) < 1e-9


class TestHeadingMetrics:
    def test_identity(self, rng):
        _, truth, last = random_batch(rng)
        assert aae(truth, truth, last) == 0.0

    def test_quarter_turn_everywhere(self):
        truth = np.cumsum(np.tile([[1.0, 0.0]], (5, 1)), axis=0)[None] * DT
        pred = np.cumsum(np.tile([[0.0, 1.0]], (5, 1)), axis=0)[None] * DT
        last = np.zeros((1, 2))
        assert aae(pred, truth, last) == 90.0
        assert fae(pred, truth, last) == 90.0

    def test_needs_last_positions(self, rng):
        pred, truth, _ = random_batch(rng)
        with pytest.raises(ValueError, match="last"):
            aae(pred, truth)


class TestOracles:
    def test_thousand_batches(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            pred, truth, last = random_batch(rng)
            p, t, l = pred.tolist(), truth.tolist(), last.tolist()
            assert abs(ade(pred, truth) - ade_loop(p, t)) <= 1e-12
            assert abs(fde(pred, truth) - fde_loop(p, t)) <= 1e-12
            np.testing.assert_allclose(aae(pred, truth, last), aae_loop(p, t, l), rtol=0, atol=1e-9)
            np.testing.assert_allclose(fae(pred, truth, last), fae_loop(p, t, l), rtol=0, atol=1e-9)


class TestInvariance:
    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), sx=st.integers(-2 ** 20, 2 ** 20), sy=st.integers(-2 ** 20, 2 ** 20))
    def test_translation_exact_on_a_grid(self, seed, sx, sy):
        # on a 2^-16 grid with shifts of whole multiples of it, every sum is exact
        pred, truth, last = (np.round(a * 2 ** 16) / 2 ** 16 for a in random_batch(np.random.default_rng(seed)))
        shift = np.array([sx, sy]) / 2 ** 16
        for metric in (ade, fde):
            assert metric(pred + shift, truth + shift) == metric(pred, truth)
        for metric in (aae, fae):
            np.testing.assert_array_equal(metric(pred + shift, truth + shift, last + shift), metric(pred, truth, last))

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), sx=st.floats(-1e3, 1e3), sy=st.floats(-1e3, 1e3))
    def test_translation_general(self, seed, sx, sy):
        pred, truth, last = random_batch(np.random.default_rng(seed))
        s = np.array([sx, sy])
        assert abs(ade(pred + s, truth + s) - ade(pred, truth)) < 1e-9
        assert abs(fde(pred + s, truth + s) - fde(pred, truth)) < 1e-9
        np.testing.assert_allclose(aae(pred + s, truth + s, last + s), aae(pred, truth, last), rtol=0, atol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2 ** 31))
    def test_quarter_turn_exact(self, seed):
        pred, truth, last = random_batch(np.random.default_rng(seed))
        r = _quarter_turn
        assert ade(r(pred), r(truth)) == ade(pred, truth)
        assert fde(r(pred), r(truth)) == fde(pred, truth)
        np.testing.assert_allclose(aae(r(pred), r(truth), r(last)), aae(pred, truth, last), rtol=0, atol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), angle=st.floats(-np.pi, np.pi))
    def test_rotation(self, seed, angle):
        pred, truth, last = random_batch(np.random.default_rng(seed))
        R = lambda x: _rotate(x, angle)
        assert abs(ade(R(pred), R(truth)) - ade(pred, truth)) < 1e-9
        assert abs(fde(R(pred), R(truth)) - fde(pred, truth)) < 1e-9
        np.testing.assert_allclose(aae(R(pred), R(truth), R(last)), aae(pred, truth, last), rtol=0, atol=1e-9)
        np.testing.assert_allclose(fae(R(pred), R(truth), R(last)), fae(pred, truth, last), rtol=0, atol=1e-9)


class TestReport:
    def test_curves_match_metrics(self, rng):
        pred, truth, last = random_batch(rng)
        rep = evaluate(pred, truth, last, "m")
        P = pred.shape[1]
        assert rep.fde[-1] == fde(pred, truth)
        np.testing.assert_allclose(rep.ade[-1], ade(pred, truth), rtol=1e-14)
        np.testing.assert_allclose(rep.aae[-1], aae(pred, truth, last), rtol=1e-12)
        np.testing.assert_allclose(rep.fae[-1], fae(pred, truth, last), rtol=1e-12)
        for k in range(P):
            assert rep.fde[k] == fde(pred[:, :k + 1], truth[:, :k + 1])

    def test_step_lookup(self):
        rep = MetricReport("m", *(np.arange(50.0),) * 4, n=3)
        assert rep.at(2.0)["fde_m"] == 49.0
        assert rep.at(0.12)["ade_m"] == 2.0
        with pytest.raises(ValueError, match="horizon"):
            rep.at(0.05)

    def test_csv_layout(self):
        rep = MetricReport("cv", *(np.full(3, 0.5),) * 4, n=7)
        text = reports_to_csv([rep], [0.04, 0.12])
        assert text.splitlines() == ["model,horizon_s,ade_m,fde_m,aae_deg,fae_deg,n",
                                     "cv,0.04,0.500000,0.500000,0.500000,0.500000,7",
                                     "cv,0.12,0.500000,0.500000,0.500000,0.500000,7"]

    def test_dict_round_trip(self, rng):
        rep = evaluate(*random_batch(rng), "m")
        back = MetricReport.from_dict(rep.to_dict())
        assert reports_to_csv([back]) == reports_to_csv([rep])
