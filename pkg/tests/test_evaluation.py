import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scotlab import evaluation as ev
from scotlab.evaluation import (EvaluationError, RolloutSchedule, ScalingCurve, eg_ag, evaluate_model,
                                fit_biphasic, fit_power_law, median_rel_l1)
from scotlab.model import ScotModel
from scotlab.training import TaskData

from helpers import random_micro

M = [2**k for k in range(11)]  # 1 .. 1024


def curve(fn, xs=M, mid=""):
    return ScalingCurve(list(xs), [float(fn(x)) for x in xs], mid)


# per-sample errors


def test_median_examples():
    t = np.random.default_rng(0).standard_normal((3, 2, 4, 4))
    err, med, flagged = median_rel_l1(t, t, [[0, 1]])
    assert np.all(err == 0) and med == 0 and flagged == []
    err, _, _ = median_rel_l1(2 * t[:1], t[:1], [[0]])
    assert err[0] == pytest.approx(1.0, rel=1e-15)
    preds = t * np.array([1.1, 1.2, 1.9])[:, None, None, None]
    _, med, _ = median_rel_l1(preds, t, [[0]])
    assert med == pytest.approx(0.2, rel=1e-12)


def test_vector_functions_pool_components_and_average():
    t = np.ones((1, 3, 2, 2))
    p = t.copy()
    p[0, 0] = 2.0  # first component of the vector off by 1 everywhere
    p[0, 2] = 1.5
    err, _, _ = median_rel_l1(p, t, [[0, 1], [2]])
    assert err[0] == pytest.approx((4 / 8 + 0.5) / 2)


def test_zero_norm_targets_are_flagged_and_excluded():
    t = np.ones((3, 1, 2, 2))
    t[1] = 0
    p = 1.5 * t
    err, med, flagged = median_rel_l1(p, t, [[0]])
    assert flagged == [1] and math.isnan(err[1]) and med == pytest.approx(0.5)
    rec = ev.ErrorRecord("x", "m", 0, err.tolist(), [[0]], flagged)
    counts, _ = ev.error_histogram(rec, 4)
    assert counts.sum() == rec.n_test - len(flagged) == 2


def test_error_paths():
    with pytest.raises(EvaluationError):
        median_rel_l1(np.ones((1, 1, 2, 2)), np.ones((1, 1, 2, 3)), [[0]])
    with pytest.raises(EvaluationError):
        median_rel_l1(np.ones((1, 1, 2, 2)), np.ones((1, 1, 2, 2)), [])
    with pytest.raises(EvaluationError):
        ev.error_histogram(ev.ErrorRecord("x", "m", 0, [math.nan], [[0]], [0]))


def test_histogram_cases():
    rec = ev.ErrorRecord("x", "m", 0, [0.3] * 5, [[0]])
    counts, _ = ev.error_histogram(rec, 5)
    assert sorted(counts.tolist()) == [0, 0, 0, 0, 5]
    rec = ev.ErrorRecord("x", "m", 0, list(np.random.default_rng(1).random(50)), [[0]])
    a, ea = ev.error_histogram(rec, 7)
    b, eb = ev.error_histogram(rec, 7)
    assert np.array_equal(a, b) and np.array_equal(ea, eb) and a.sum() == 50


# schedules


def test_schedule_parsing():
    assert RolloutSchedule.parse("direct").absolute(0.8) == [0.8]
    assert RolloutSchedule.parse("homogeneous:4").absolute(1.0) == [0.25, 0.5, 0.75, 1.0]
    assert RolloutSchedule.parse("explicit:0.5,1.0").absolute(1.0) == [0.5, 1.0]
    assert str(RolloutSchedule.parse("homogeneous:7")) == "homogeneous:7"
    with pytest.raises(ValueError):
        RolloutSchedule.parse("adaptive")
    with pytest.raises(EvaluationError):
        RolloutSchedule.parse("explicit:0.2,0.5").absolute(1.0)


# model evaluation


class Identity:
    config = SimpleNamespace(J=32)
    dtype = np.dtype(np.float64)

    def __call__(self, a, t):
        return np.array(a, copy=True)


class Decay:
    """Exact solution operator of u_t = -u, in normalised lead time."""

    config = SimpleNamespace(J=16)
    dtype = np.dtype(np.float64)

    def __call__(self, a, t):
        return a * np.exp(-np.asarray(t)).reshape(-1, 1, 1, 1)


def decay_task(n=4, N=16, times=np.linspace(0, 1, 6)):
    rng = np.random.default_rng(3)
    u0 = rng.standard_normal((n, 1, N, N))
    data = np.stack([u0 * np.exp(-t) for t in times], axis=1)
    return TaskData("decay", data, times, np.ones(1), False)


def band_limited(n, N, seed):
    rng = np.random.default_rng(seed)
    x = np.arange(N) / N
    X, Y = np.meshgrid(x, x)
    out = np.zeros((n, 1, N, N))
    for kx in range(3):
        for ky in range(3):
            out += rng.standard_normal((n, 1, 1, 1)) * np.cos(2 * np.pi * (kx * X + ky * Y) + rng.random())
    return out


def test_perfect_model_has_zero_error_over_time():
    task = decay_task()
    tl = ev.error_over_time(Decay(), task, pde="allen-cahn")
    assert [t for t, _ in tl] == pytest.approx(task.times[1:].tolist())
    assert max(e for _, e in tl) < 1e-14
    rec = evaluate_model(Decay(), task, "homogeneous:5", pde="allen-cahn")
    assert rec.median < 1e-14


def test_final_time_error_matches_evaluate_model():
    cfg, P = random_micro(0, n_in=1, n_out=1)
    m = ScotModel(cfg, P)
    task = decay_task()
    sched = "homogeneous:5"
    tl = ev.error_over_time(m, task, sched, pde="allen-cahn")
    rec = evaluate_model(m, task, sched, pde="allen-cahn")
    assert tl[-1][1] == rec.median


def test_direct_equals_homogeneous_one_bitwise():
    cfg, P = random_micro(1, n_in=1, n_out=1)
    m = ScotModel(cfg, P)
    task = decay_task()
    a = evaluate_model(m, task, "direct", pde="allen-cahn")
    b = evaluate_model(m, task, "homogeneous:1", pde="allen-cahn")
    assert a.errors == b.errors


def test_zero_noise_matches_clean_and_noise_is_annotated():
    cfg, P = random_micro(2, n_in=1, n_out=1)
    m = ScotModel(cfg, P)
    task = decay_task()
    clean = evaluate_model(m, task, pde="allen-cahn")
    zero = evaluate_model(m, task, pde="allen-cahn", noise_nsr=0.0, seed=5)
    noisy = evaluate_model(m, task, pde="allen-cahn", noise_nsr=0.1, seed=5)
    assert zero.errors == clean.errors and noisy.errors != clean.errors and noisy.noise_nsr == 0.1


def test_noise_level_tracks_nsr():
    x = np.random.default_rng(0).standard_normal((8, 2, 64, 64)) * np.array([1.0, 5.0])[:, None, None]
    y = ev.add_noise(x, 0.05, seed=1)
    rms = np.sqrt((x**2).mean(axis=(-2, -1)))
    std = (y - x).std(axis=(-2, -1))
    np.testing.assert_allclose(std / rms, 0.05, rtol=0.05)
    assert np.array_equal(y, ev.add_noise(x, 0.05, seed=1))


def test_resample_round_trip_identity_model():
    N = 16
    data = np.stack([band_limited(3, N, 0), band_limited(3, N, 1)], axis=1)
    task = TaskData("syn", data, np.array([0.0, 1.0]), np.ones(1), False)
    rec = evaluate_model(Identity(), task, pde="allen-cahn")
    direct, _, _ = median_rel_l1(data[:, 0], data[:, 1], [[0]])
    assert rec.resample_to == 32
    np.testing.assert_allclose(rec.errors, direct, atol=1e-6)


def test_resample_properties():
    f = band_limited(2, 16, 4)
    np.testing.assert_array_equal(ev.resample(ev.resample(f, 32), 16), f)
    up = ev.resample(f, 32)
    np.testing.assert_array_equal(up[..., ::2, ::2], f)
    g = np.linspace(0, 1, 9)[None, :] + np.linspace(0, 2, 9)[:, None]  # bilinear data, bounded grid
    fine = ev.resample(g, 17, periodic=False)
    x = np.linspace(0, 1, 17)
    np.testing.assert_allclose(fine, x[None, :] + 2 * x[:, None], atol=1e-14)


def test_missing_target_time_raises():
    with pytest.raises(EvaluationError, match="not a dataset snapshot"):
        evaluate_model(Decay(), decay_task(), t_target=0.55, pde="allen-cahn")
    with pytest.raises(EvaluationError):
        ev.error_over_time(Decay(), decay_task(), "explicit:0.3,1.0", pde="allen-cahn")


def test_time_extrapolation_uses_fixed_scale():
    task = decay_task(times=np.linspace(0, 2, 11))
    tl = ev.error_over_time(Decay(), task, pde="allen-cahn", time_scale=1.0)
    assert tl[-1][0] == 2.0 and tl[-1][1] < 1e-14


def test_workers_do_not_change_results():
    cfg, P = random_micro(3, n_in=1, n_out=1)
    m = ScotModel(cfg, P)
    task = decay_task(n=6)
    a = evaluate_model(m, task, pde="allen-cahn", batch_size=2)
    b = evaluate_model(m, task, pde="allen-cahn", batch_size=2, workers=3)
    assert a.errors == b.errors


# gains


def test_eg_ag_closed_form():
    ref = curve(lambda x: x**-0.5)
    model = curve(lambda x: 0.1 * x**-0.5)
    g = eg_ag(model, ref, 1024, 64)
    assert g.eg == pytest.approx(100.0, rel=1e-6) and g.samples_to_match == pytest.approx(10.24, rel=1e-6)
    for s in M:
        assert eg_ag(model, ref, 1024, s).ag == pytest.approx(10.0, rel=1e-12)


def test_eg_conventions():
    ref = curve(lambda x: x**-0.5)
    worse = curve(lambda x: 10 * x**-0.5)
    g = eg_ag(worse, ref, 256, 256)
    assert g.eg == 0.0 and g.eg_flag == "not-reached" and g.ag == pytest.approx(0.1)
    best = curve(lambda x: 1e-3 * x**-0.5)
    g = eg_ag(best, ref, 256, 256)
    assert g.eg == 256.0 and g.eg_flag == "lower-bound"
    with pytest.raises(KeyError):
        eg_ag(curve(lambda x: x**-0.5, [1, 2, 4]), ref, 4, 8)


decreasing = st.lists(st.floats(0.01, 0.99), min_size=3, max_size=10).map(
    lambda fs: list(np.cumprod(fs) * 10))


@settings(max_examples=50, deadline=None)
@given(decreasing, st.data())
def test_self_comparison_is_unity(errs, data):
    xs = [2**k for k in range(len(errs))]
    c = ScalingCurve(xs, errs)
    s_eg, s_ag = data.draw(st.sampled_from(xs)), data.draw(st.sampled_from(xs))
    g = eg_ag(c, c, s_eg, s_ag)
    assert (g.eg, g.ag) == (1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(decreasing, st.floats(0.1, 10), st.data())
def test_ag_is_multiplicative(errs, lam, data):
    xs = [2**k for k in range(len(errs))]
    ref = ScalingCurve(xs, errs)
    model = ScalingCurve(xs, [e * 0.7 for e in errs])
    scaled = ScalingCurve(xs, [e * 0.7 / lam for e in errs])
    s = data.draw(st.sampled_from(xs))
    assert eg_ag(scaled, ref, s, s).ag == pytest.approx(lam * eg_ag(model, ref, s, s).ag, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(decreasing, st.data())
def test_eg_depends_on_reference_only_at_s_eg(errs, data):
    xs = [2**k for k in range(len(errs))]
    model = ScalingCurve(xs, [e * 0.5 for e in errs])
    ref = ScalingCurve(xs, errs)
    i = data.draw(st.integers(0, len(xs) - 1))
    keep = sorted(set(data.draw(st.lists(st.integers(0, len(xs) - 1)))) | {i, len(xs) - 1})
    sub = ScalingCurve([xs[k] for k in keep], [errs[k] for k in keep])
    s_ag = xs[-1]
    assert eg_ag(model, sub, xs[i], s_ag).eg == eg_ag(model, ref, xs[i], s_ag).eg


def test_scaling_curve_validation():
    with pytest.raises(ValueError):
        ScalingCurve([4, 2], [0.1, 0.2])
    with pytest.raises(ValueError):
        ScalingCurve([1, 2], [0.1])


# fits


def test_power_law_recovery():
    f = fit_power_law(M, [2.0 * x**-0.5 for x in M])
    assert abs(f.C - 2.0) < 1e-6 and abs(f.alpha - 0.5) < 1e-6 and f.residual < 1e-20
    two = fit_power_law([3, 50], [0.4, 0.07])
    assert two.residual < 1e-25
    assert abs(fit_power_law(M, [0.3] * len(M)).alpha) < 1e-12
    with pytest.raises(ValueError):
        fit_power_law([1, 2], [0.1, 0.0])
    with pytest.raises(ValueError):
        fit_power_law([1], [0.1])


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 100), st.floats(-1.5, 1.5))
def test_power_law_recovers_planted(C, alpha):
    f = fit_power_law(M, [C * x**-alpha for x in M])
    assert f.C == pytest.approx(C, rel=1e-6) and abs(f.alpha - alpha) < 1e-6


def biphasic(x, brk=32, aw=0.23, al=0.99, C=0.5):
    return C * x**-aw if x <= brk else C * brk**-aw * (x / brk) ** -al


def test_biphasic_recovery():
    f = fit_biphasic(M, [biphasic(x) for x in M])
    assert f.M_pt == 32
    assert f.alpha_w == pytest.approx(0.23, rel=0.05) and f.alpha_l == pytest.approx(0.99, rel=0.05)
    pure = fit_biphasic(M, [x**-0.6 for x in M])
    assert pure.alpha_w == pytest.approx(pure.alpha_l, abs=1e-9)
    with pytest.raises(ValueError):
        fit_biphasic([1, 2, 4], [1, 0.5, 0.2])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=4, max_size=9))
def test_biphasic_never_picks_endpoints(errs):
    xs = [2**k for k in range(len(errs))]
    f = fit_biphasic(xs, errs)
    assert xs[0] < f.M_pt < xs[-1]


def test_gain_table_requires_reference():
    c = {"t": {"a": curve(lambda x: x**-0.5)}}
    with pytest.raises(EvaluationError):
        ev.gain_table(c, "ref", 16, 16)
    rows = ev.gain_table({"t": {"ref": curve(lambda x: x**-0.5)}}, "ref", 16, 16)
    assert rows == [{"task": "t", "model": "ref", "EG": 1.0, "AG": 1.0, "flag": ""}]


def test_scaling_csv_round_trip(tmp_path):
    c = curve(lambda x: 0.3 * x**-0.4, [1, 2, 8, 32], "m")
    ev.write_scaling_csv(tmp_path / "s.csv", c)
    back = ev.read_scaling_csv(tmp_path / "s.csv", "m")
    assert back == c


def test_functions_of_interest_cover_layouts():
    from scotlab.training import LAYOUTS

    assert set(ev.FUNCTIONS_OF_INTEREST) == set(LAYOUTS)
    assert ev.FUNCTIONS_OF_INTEREST["ns"] == [[1, 2]] and ev.FUNCTIONS_OF_INTEREST["euler"] == [[0], [1, 2], [3]]
