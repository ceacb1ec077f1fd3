import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pmusplit.coi import (
    AngleUnwrapper,
    CoiDetector,
    CoiFrame,
    ConfigError,
    DetectorConfig,
    coi_transform,
    critical_pair,
    evaluate_window,
    gamma_index,
    kinetic_energy,
    load_config,
)

finite = st.floats(-10, 10, allow_nan=False)
masses = st.floats(0.5, 1000, allow_nan=False)


# --- indices ------------------------------------------------------------------------


def test_equal_states_give_zero():
    d_t, w_t = coi_transform([0.3] * 4, [0.01] * 4, [1, 2, 3, 4])
    assert np.allclose(d_t, 0) and np.allclose(w_t, 0)


def test_coi_weighted_mean_by_hand():
    d_t, _ = coi_transform(np.radians([0, 30]), [0, 0], [1, 2])
    assert np.degrees(d_t) == pytest.approx([-20, 10])
    d_t, _ = coi_transform(np.radians([10, 50]), [0, 0], [3, 1])
    assert np.degrees(d_t) == pytest.approx([-10, 30])


@given(st.integers(1, 12).flatmap(lambda m: st.tuples(
    arrays(float, m, elements=st.floats(-300, 300)), arrays(float, m, elements=finite),
    arrays(float, m, elements=masses), arrays(int, m, elements=st.integers(0, 2)))))
def test_coi_sums_vanish_per_island(data):
    delta, omega, m, labels = data
    d_t, w_t = coi_transform(delta, omega, m, labels)
    for lab in np.unique(labels):
        sel = labels == lab
        scale = max(1.0, float(np.abs(m[sel] * delta[sel]).sum()))
        assert abs(m[sel] @ d_t[sel]) <= 1e-14 * scale
        assert abs(m[sel] @ w_t[sel]) <= 1e-14 * max(1.0, float(np.abs(m[sel] * omega[sel]).sum()))


@given(arrays(float, 5, elements=finite), st.floats(-50, 50), arrays(float, 5, elements=masses))
def test_coi_is_shift_invariant(delta, shift, m):
    a, _ = coi_transform(delta, np.zeros(5), m)
    b, _ = coi_transform(delta + shift, np.zeros(5), m)
    assert np.allclose(a, b, atol=1e-9)


def test_kinetic_energy_examples():
    assert kinetic_energy([0.0, 0.0], [3, 4])[1] == 0
    wk_i, _ = kinetic_energy([0.01], [10])
    assert wk_i == pytest.approx([5e-4])


def test_gamma_sign():
    g_i, g = gamma_index([0.2, -0.2], [-0.001, 0.001])
    assert np.all(g_i < 0) and g < 0
    g_i, g = gamma_index([0.5, -0.5], [0.002, -0.002])
    assert g_i == pytest.approx([0.001, 0.001]) and g == pytest.approx(0.001)


def test_critical_pair_examples():
    assert critical_pair(np.radians([0, 10, 50]))[:2] == (0, 2)
    assert math.degrees(critical_pair(np.radians([0, 10, 50]))[2]) == pytest.approx(50)
    assert critical_pair(np.radians([0, 40, 40]))[:2] == (0, 1)


def test_critical_pair_needs_two():
    with pytest.raises(ValueError):
        critical_pair([1.0])


@given(arrays(float, st.integers(2, 10), elements=st.integers(-5, 5).map(float)))
def test_critical_pair_brute_force(delta):
    best = None
    for i in range(len(delta)):
        for j in range(i + 1, len(delta)):
            v = abs(delta[i] - delta[j])
            if best is None or v > best[2]:
                best = (i, j, v)
    assert critical_pair(delta) == best


# --- config ----------------------------------------------------------------------------


@pytest.mark.parametrize("kw", [
    {"delta_arm": 80.0}, {"delta_crt": 110.0}, {"alpha_w": 1.0}, {"alpha_gamma": 0.9},
    {"omega_min": 0.0}, {"n_window": 1}, {"t_s": 0.0}])
def test_config_rejects(kw):
    with pytest.raises(ConfigError):
        DetectorConfig(**kw)


def test_config_json_round_trip(tmp_path):
    import json

    cfg = DetectorConfig(alpha_w=1.2, n_window=7)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert load_config(p) == cfg
    with pytest.raises(ConfigError, match="unknown"):
        DetectorConfig.from_dict({"bogus": 1})


# --- window rule against a scalar reference ------------------------------------------------


def reference_fires(dmax_deg, wk, gamma, w_i, w_j, cfg: DetectorConfig) -> bool:
    """The composite rule written out sample by sample, evaluated at the last index."""
    n = len(dmax_deg) - 1
    N = cfg.n_window
    if n < N + 2:
        return False
    armed = dmax_deg[n] > cfg.delta_arm
    growing = all(dmax_deg[k] - dmax_deg[k - 1] > cfg.eps_delta * cfg.t_s for k in range(n - N, n + 1))

    def accel(x, eps, alpha):
        for k in range(n - N, n + 1):
            now, before = x[k] - x[k - 1], x[k - 1] - x[k - 2]
            if not now > eps or not before > 0 or not now / before > alpha:
                return False
        return True

    wk_ok = accel(wk, cfg.eps_w, cfg.alpha_w)
    g_ok = all(gamma[k] > 0 for k in range(n - N, n + 1)) and accel(gamma, cfg.eps_gamma, cfg.alpha_gamma)
    moving = w_i > cfg.omega_min or w_j < -cfg.omega_min
    return armed and growing and moving and (wk_ok or g_ok or dmax_deg[n] > cfg.delta_crt)


def frames_from(dmax_deg, wk, gamma, w):
    out = []
    for k, (d, e, g) in enumerate(zip(dmax_deg, wk, gamma)):
        d_t = np.radians([d / 2, -d / 2])
        out.append(CoiFrame(k / 60, d_t, np.array([w, -w]), np.array([e, e]), e, np.array([g, g]), g,
                            math.radians(d), 0, 1))
    return out


def test_synthetic_two_machine_ramp_fires_at_reference_index():
    cfg = DetectorConfig()
    n = 43
    dmax = 100 + 100 * np.arange(n) / 60  # 100 deg/s
    wk = np.cumsum(1e-5 * 1.15 ** np.arange(n))
    gamma = np.full(n, -1.0)
    frames = frames_from(dmax, wk, gamma, 0.01)
    fired = [evaluate_window(frames[max(0, k - cfg.depth + 1): k + 1], cfg).fires for k in range(n)]
    ref = [reference_fires(dmax[: k + 1], wk[: k + 1], gamma[: k + 1], 0.01, -0.01, cfg) for k in range(n)]
    assert fired == ref
    first = fired.index(True)
    assert dmax[first] > 120 and dmax[first - 1] <= 120  # fires as soon as it arms


def test_wk_growth_below_alpha_does_not_count():
    cfg = DetectorConfig()
    n = 43
    dmax = 100 + 100 * np.arange(n) / 60
    wk = np.cumsum(1e-5 * 1.05 ** np.arange(n))
    frames = frames_from(dmax, wk, np.full(n, -1.0), 0.01)
    assert not any(evaluate_window(frames[max(0, k - cfg.depth + 1): k + 1], cfg).fires for k in range(n))


window_st = st.integers(12, 20).flatmap(lambda n: st.tuples(
    arrays(float, n, elements=st.floats(90, 260)),
    arrays(float, n, elements=st.floats(-1, 1)),
    arrays(float, n, elements=st.floats(-1, 1)),
    st.floats(-0.02, 0.02)))


@settings(max_examples=300)
@given(window_st, st.booleans())
def test_window_matches_reference(data, sorted_angles):
    dmax, wk, gamma, w = data
    if sorted_angles:
        dmax, wk, gamma = np.sort(dmax), np.sort(wk), np.sort(gamma)
    cfg = DetectorConfig()
    frames = frames_from(dmax, wk, gamma, w)
    got = evaluate_window(frames[-cfg.depth:], cfg).fires
    assert got == reference_fires(dmax, wk, gamma, w, -w, cfg)


def test_path_labels():
    cfg = DetectorConfig()
    n = 20
    dmax = 200 + 100 * np.arange(n) / 60  # crosses 220
    frames = frames_from(dmax, np.zeros(n), np.full(n, -1.0), 0.01)
    st_ = evaluate_window(frames[-cfg.depth:], cfg)
    assert st_.fires and st_.path == "crt-angle"
    frames = frames_from(dmax, np.zeros(n), np.cumsum(1e-3 * 1.2 ** np.arange(n)) + 0.1, 0.01)
    assert evaluate_window(frames[-cfg.depth:], cfg).path == "gamma-growth"


def test_not_moving_blocks():
    cfg = DetectorConfig()
    n = 20
    frames = frames_from(200 + 100 * np.arange(n) / 60, np.zeros(n), np.zeros(n), 0.001)
    assert not evaluate_window(frames[-cfg.depth:], cfg).fires


# --- streaming detector -------------------------------------------------------------------


def test_equilibrium_stream_never_fires():
    det = CoiDetector(DetectorConfig(), [1, 2, 3], [10, 20, 30])
    for k in range(600):
        assert det.update(k / 60, np.radians([10, -5, 3]), np.zeros(3)) is None
    assert det.event is None


def test_detector_ring_is_bounded():
    det = CoiDetector(DetectorConfig(), [1, 2], [1, 1])
    for k in range(100):
        det.update(k / 60, np.zeros(2), np.zeros(2))
    assert len(det.window) == DetectorConfig().depth


def test_two_machine_runaway_fires_with_ids():
    det = CoiDetector(DetectorConfig(), [7, 3], [1.0, 1.0])
    events = []
    for k in range(240):
        t = k / 60
        # angle pulls apart with growing speed
        w = 0.002 * math.exp(1.5 * t)
        d = 0.8 + 377 * 0.002 * (math.exp(1.5 * t) - 1) / 1.5
        ev = det.update(t, np.array([d / 2, -d / 2]), np.array([w / 2, -w / 2]))
        if ev:
            events.append(ev)
    assert events
    ev = events[0]
    assert (ev.i_max, ev.j_max) == (7, 3) and ev.delta_max_deg > 120


def test_unwrapper_removes_jumps():
    u = AngleUnwrapper()
    raw = np.angle(np.exp(1j * np.linspace(0, 20, 200)))
    out = [u(np.array([v]))[0] for v in raw]
    assert np.allclose(out, np.linspace(0, 20, 200))
