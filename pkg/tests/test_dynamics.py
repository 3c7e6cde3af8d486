import numpy as np
import pytest
from scipy.stats import kstest

from magnon_gk.lattice import (LatticeSpec, conserved_snapshot, total_current,
                               total_energy)
from magnon_gk import dynamics as dy
from magnon_gk import _kernels as kn
from magnon_gk.rng import stream
from magnon_gk.sampling import sample_canonical, sample_microcanonical


UNIFORM = LatticeSpec(d=1, dstar=2, n=8, b=1.0, gamma=1.0)
DEFORM = LatticeSpec(d=1, dstar=2, n=16, b=1.0, gamma=1.0,
                     coords="deformation")
ALT = LatticeSpec(d=1, dstar=2, n=8, b=-2.0, gamma=0.5, charge="alternate",
                  coords="deformation")


def micro_state(spec, e=2.0, key=0):
    return sample_microcanonical(spec, e, stream(key, "init"))


# ---------------------------------------------------------------------------
# backends


def test_dt_zero_is_identity_and_negative_rejected():
    s = micro_state(UNIFORM)
    for be in (dy.FourierBlock(UNIFORM), dy.DenseEigen(UNIFORM),
               dy.RK4(UNIFORM)):
        out = be.propagate(s, 0.0)
        assert np.array_equal(out.pos, s.pos)
        assert np.array_equal(out.vel, s.vel)
        with pytest.raises(Exception):
            be.propagate(s, -0.1)


def test_single_mode_harmonic_closed_form():
    spec = LatticeSpec(d=1, dstar=2, n=8, b=0.0, gamma=1.0, charge="zero")
    s = micro_state(spec, 1.0)
    t = 0.9
    out = dy.FourierBlock(spec).propagate(s, t)
    om = np.sqrt(4 * np.sin(np.pi * np.arange(8) / 8) ** 2)
    for j in range(2):
        qh, vh = np.fft.fft(s.pos[j]), np.fft.fft(s.vel[j])
        sin_over = np.divide(np.sin(om * t), om, out=np.full(8, t),
                             where=om > 0)
        want = np.cos(om * t) * qh + sin_over * vh
        assert np.abs(np.fft.fft(out.pos[j]) - want).max() < 1e-12


def test_zero_mode_velocity_rotation():
    # uncentered state: the mean velocity rotates with angular frequency B
    s = micro_state(UNIFORM)
    s.vel[0] += 0.3
    s.vel[1] -= 0.1
    t = 1.234
    out = dy.FourierBlock(UNIFORM).propagate(s, t)
    th = UNIFORM.b * t
    rot = np.array([[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]])
    vbar = out.vel.mean(axis=1)
    assert np.abs(vbar - rot @ np.array([0.3, -0.1])).max() < 1e-12
    assert np.linalg.norm(vbar) == pytest.approx(np.hypot(0.3, 0.1),
                                                 rel=1e-12)


@pytest.mark.parametrize("spec", [UNIFORM, DEFORM])
def test_backend_cross_agreement(spec):
    s = (micro_state(spec) if spec.coords == "position"
         else sample_canonical(spec, 1.0, rng=stream(1, "init")))
    fb = dy.FourierBlock(spec)
    de = dy.DenseEigen(spec)
    rk = dy.RK4(spec, step=1e-3)
    for dt in (0.1, 0.73):
        a = fb.propagate(s, dt).flatten()
        b = de.propagate(s, dt).flatten()
        c = rk.propagate(s, dt).flatten()
        assert np.abs(a - b).max() < 1e-8
        assert np.abs(a - c).max() < 1e-8


def test_energy_preserved_per_call():
    for spec, s in ((UNIFORM, micro_state(UNIFORM)),
                    (DEFORM, sample_canonical(DEFORM, 1.0,
                                              rng=stream(2, "init")))):
        e0 = total_energy(s)
        for be in (dy.FourierBlock(spec), dy.DenseEigen(spec)):
            out = be.propagate(s, 2.7)
            assert abs(total_energy(out) - e0) <= 1e-12 * e0


def test_fourier_rejects_alternate_charge():
    with pytest.raises(dy.BackendError):
        dy.FourierBlock(ALT)
    dy.DenseEigen(ALT)  # dense handles it


def test_make_backend_auto_and_unknown():
    assert dy.make_backend(UNIFORM).kind == "fourier"
    assert dy.make_backend(ALT).kind == "dense"
    with pytest.raises(dy.BackendError):
        dy.make_backend(UNIFORM, "spectral")


@pytest.mark.parametrize("spec", [UNIFORM, DEFORM, ALT])
def test_propagate_batch_matches_sequential(spec):
    s = (micro_state(spec) if spec.coords == "position"
         else sample_canonical(spec, 1.0, rng=stream(3, "init")))
    be = dy.make_backend(spec)
    dts = np.array([0.0, 0.05, 0.31, 1.2])
    pos, vel = be.propagate_batch(s, dts)
    for k, dt in enumerate(dts):
        ref = be.propagate(s, float(dt))
        assert np.abs(pos[k] - ref.pos).max() < 1e-12
        assert np.abs(vel[k] - ref.vel).max() < 1e-12


def test_d2_propagation_conserves_energy():
    spec = LatticeSpec(d=2, dstar=2, n=6, b=1.0, gamma=1.0)
    s = micro_state(spec, 1.0)
    out = dy.FourierBlock(spec).propagate(s, 3.3)
    assert abs(total_energy(out) - total_energy(s)) < 1e-11


# ---------------------------------------------------------------------------
# exchange events


def test_apply_exchange_examples():
    s = dy.PhaseState if False else None  # noqa: F841
    from magnon_gk.lattice import zero_state
    st = zero_state(UNIFORM)
    # equal velocities: no-op
    st.vel[0, :] = 1.5
    out, tr = dy.apply_exchange(st, 0, 0, 0)
    assert tr == 0.0
    assert np.array_equal(out.vel, st.vel)
    # v_x = 0, v_y = 2: site energies change by +-2, transported 2
    st2 = zero_state(UNIFORM)
    st2.vel[0, 1] = 2.0
    out2, tr2 = dy.apply_exchange(st2, 0, 0, 0)
    assert tr2 == 2.0
    assert out2.vel[0, 0] == 2.0 and out2.vel[0, 1] == 0.0
    assert total_energy(out2) == total_energy(st2)


def test_exchange_preserves_energy_random():
    s = micro_state(UNIFORM)
    out, _ = dy.apply_exchange(s, 1, 5, 0)
    assert total_energy(out) == pytest.approx(total_energy(s), rel=1e-14)
    with pytest.raises(Exception):
        dy.apply_exchange(s, 2, 0, 0)


# ---------------------------------------------------------------------------
# event statistics


def test_event_count_poisson_mean():
    rate = UNIFORM.gamma * 2 * 1 * 8
    t_end = 5.0
    counts = [len(dy.draw_events(UNIFORM, t_end, seed)[0])
              for seed in range(40)]
    mean = rate * t_end
    assert abs(np.mean(counts) - mean) <= 3 * np.sqrt(mean / len(counts))


def test_interevent_gaps_are_exponential():
    spec = LatticeSpec(d=1, dstar=2, n=16, b=1.0, gamma=1.0)
    rate = spec.gamma * 2 * 1 * 16
    times, _, r = dy.draw_events(spec, 100000.0 / rate, seed=8)
    assert r == rate
    assert len(times) > 90000
    gaps = np.diff(times)
    assert kstest(gaps, "expon", args=(0, 1.0 / rate)).pvalue > 0.01


def test_decode_triple_roundtrip():
    spec = LatticeSpec(d=2, dstar=3, n=4, b=0.0, gamma=1.0, charge="zero")
    seen = set()
    for trip in range(3 * 2 * 16):
        j, a, x = dy.decode_triple(spec, trip)
        assert 0 <= j < 3 and 0 <= a < 2 and 0 <= x < 16
        seen.add((j, a, x))
    assert len(seen) == 3 * 2 * 16


# ---------------------------------------------------------------------------
# full trajectories


def test_simulate_replay_is_bitwise():
    s0 = micro_state(UNIFORM)
    t1 = dy.simulate(s0, 5.0, 0.5, seed=5, track="bonds")
    t2 = dy.simulate(s0, 5.0, 0.5, seed=5, track="bonds")
    assert np.array_equal(t1.pos, t2.pos)
    assert np.array_equal(t1.det_current, t2.det_current)
    assert np.array_equal(t1.bond_jump, t2.bond_jump)
    t3 = dy.simulate(s0, 5.0, 0.5, seed=5, index=1)
    assert not np.array_equal(t1.vel, t3.vel)


@pytest.mark.parametrize("spec,key", [(UNIFORM, 0), (DEFORM, 1), (ALT, 2)])
def test_conservation_and_continuity(spec, key):
    s0 = (micro_state(spec) if spec.coords == "position"
          else sample_canonical(spec, 1.0, rng=stream(key, "init")))
    traj = dy.simulate(s0, 10.0, 1.0, seed=key, track="bonds")
    last = len(traj.times) - 1
    e0, e1 = total_energy(traj.state(0)), total_energy(traj.state(last))
    assert abs(e1 - e0) <= 1e-11 * e0
    c0 = conserved_snapshot(traj.state(0)).as_vector()
    c1 = conserved_snapshot(traj.state(last)).as_vector()
    assert np.abs(c1 - c0).max() < 1e-10
    assert dy.continuity_residual(traj) < 1e-9


def test_invalid_simulate_arguments():
    s0 = micro_state(UNIFORM)
    with pytest.raises(Exception):
        dy.simulate(s0, -1.0, 0.5, seed=0)
    with pytest.raises(Exception):
        dy.simulate(s0, 1.0, 2.0, seed=0)
    with pytest.raises(Exception):
        dy.simulate(s0, 1.0, 0.5, seed=0, track="everything")


def test_canonical_stationarity_moments():
    # marginal second moments are time invariant under the full dynamics
    beta = 1.0
    vals_t0, vals_t2 = [], []
    for idx in range(40):
        s0 = sample_canonical(DEFORM, beta, rng=stream(21, "init", idx))
        traj = dy.simulate(s0, 2.0, 1.0, seed=21, index=idx, track="none")
        vals_t0.append(np.mean(traj.vel[0] ** 2))
        vals_t2.append(np.mean(traj.vel[-1] ** 2))
    for vals in (vals_t0, vals_t2):
        m, se = np.mean(vals), np.std(vals, ddof=1) / np.sqrt(len(vals))
        assert abs(m - 1.0 / beta) <= 3 * se


def test_mean_current_vanishes_under_canonical_start():
    spec = LatticeSpec(d=1, dstar=2, n=64, b=0.0, gamma=1.0,
                       charge="zero", coords="deformation")
    means = []
    for idx in range(40):
        s0 = sample_canonical(spec, 1.0, rng=stream(31, "init", idx))
        _, js, _ = dy.simulate_current_series(s0, 8.0, 0.5, seed=31,
                                              index=idx, use_numba=False)
        means.append(js.mean())
    m, se = np.mean(means), np.std(means, ddof=1) / np.sqrt(len(means))
    assert abs(m) <= 3 * se


# ---------------------------------------------------------------------------
# fast kernel


@pytest.mark.parametrize("spec,key", [(UNIFORM, 3), (DEFORM, 4)])
def test_fast_path_matches_generic(spec, key):
    s0 = (micro_state(spec) if spec.coords == "position"
          else sample_canonical(spec, 1.0, rng=stream(key, "init")))
    ts, js, fin = dy.simulate_current_series(s0, 4.0, 0.5, seed=key,
                                             use_numba=False)
    traj = dy.simulate(s0, 4.0, 0.5, seed=key, track="none")
    ref = np.array([total_current(traj.state(k)) for k in range(len(ts))])
    assert np.abs(js - ref).max() < 1e-10
    last = traj.state(len(ts) - 1)
    assert np.abs(fin.flatten() - last.flatten()).max() < 1e-10


@pytest.mark.skipif(not kn.HAVE_NUMBA, reason="numba unavailable")
def test_numba_and_numpy_loops_agree():
    s0 = sample_canonical(DEFORM, 1.0, rng=stream(6, "init"))
    _, j1, f1 = dy.simulate_current_series(s0, 6.0, 0.5, seed=6,
                                           use_numba=True)
    _, j2, f2 = dy.simulate_current_series(s0, 6.0, 0.5, seed=6,
                                           use_numba=False)
    assert np.abs(j1 - j2).max() < 1e-10
    assert np.abs(f1.flatten() - f2.flatten()).max() < 1e-10


def test_fast_path_conserves_energy():
    s0 = micro_state(UNIFORM)
    _, _, fin = dy.simulate_current_series(s0, 10.0, 1.0, seed=9,
                                           use_numba=False)
    assert total_energy(fin) == pytest.approx(total_energy(s0), rel=1e-12)


def test_fast_path_rejects_alternate():
    s0 = sample_canonical(ALT, 1.0, rng=stream(7, "init"))
    with pytest.raises(Exception):
        dy.simulate_current_series(s0, 1.0, 0.5, seed=0, use_numba=False)


# ---------------------------------------------------------------------------
# files


def test_trajectory_roundtrip(tmp_path):
    s0 = micro_state(UNIFORM)
    traj = dy.simulate(s0, 3.0, 0.5, seed=12, track="bonds")
    path = str(tmp_path / "t.bin")
    dy.save_trajectory(traj, path)
    back = dy.load_trajectory(path)
    assert back.spec == traj.spec
    assert back.event_count == traj.event_count
    for name in ("times", "pos", "vel", "det_current", "jump_current",
                 "bond_det", "bond_jump"):
        assert np.array_equal(getattr(back, name), getattr(traj, name))


def test_load_rejects_garbage(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"not a trajectory")
    with pytest.raises(Exception):
        dy.load_trajectory(str(path))
