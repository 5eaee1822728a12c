import numpy as np
import pytest

from swflow._binio import FormatError
from swflow.flow import (FlowConfig, NumericalError, drift, euler_step, initial_particles, load_record,
                         replay_flow, run_flow, save_record)
from swflow.geometry import DirectionSet, sample_directions
from swflow.ot1d import build_quantile_table
from swflow.rng import CounterNormal
from swflow.sketch import build_sketch

ONE_D = DirectionSet(np.array([[1.0]]))


def one_d_sketch(target, q=None):
    target = np.asarray(target, dtype=float).reshape(-1, 1)
    return build_sketch(target, ONE_D, q or len(target))


# ---------------------------------------------------------------- drift

def test_drift_median_example():
    sk = one_d_sketch([0.0, 1.0, 2.0])
    pt = [build_quantile_table([-1.0, 0.0, 1.0], 3)]
    assert drift(np.array([0.0]), pt, sk) == pytest.approx([1.0], abs=0)


def test_drift_vanishes_when_particles_match_target(rng):
    x = rng.standard_normal((300, 2))
    dirs = sample_directions(2, 12, seed=1)
    sk = build_sketch(x, dirs, 300)
    v = drift(x, sk.values, sk)
    assert np.max(np.abs(v)) <= 1e-8


def test_drift_translation_invariant(rng):
    parts = rng.standard_normal((400, 2))
    target = rng.standard_normal((900, 2)) * 2 + 1
    dirs = sample_directions(2, 20, seed=3)
    c = np.array([3.0, -1.5])
    x = rng.standard_normal((25, 2))
    v0 = drift(x, build_sketch(parts, dirs, 50).values, build_sketch(target, dirs, 50))
    v1 = drift(x + c, build_sketch(parts + c, dirs, 50).values, build_sketch(target + c, dirs, 50))
    np.testing.assert_allclose(v1, v0, atol=1e-10)


def test_drift_is_monte_carlo_average(rng):
    parts = rng.standard_normal((200, 3))
    target = rng.standard_normal((500, 3)) + 2
    dirs = sample_directions(3, 5, seed=0)
    pt = build_sketch(parts, dirs, 40)
    sk = build_sketch(target, dirs, 40)
    x = np.array([0.3, -0.2, 1.0])
    manual = np.zeros(3)
    from swflow.ot1d import potential_derivative
    for n in range(5):
        th = dirs.directions[n]
        manual -= potential_derivative(x @ th, pt.tables[n], sk.tables[n]) * th / 5
    np.testing.assert_allclose(drift(x, pt.tables, sk), manual, atol=1e-12)


def test_drift_table_count_mismatch(rng):
    sk = build_sketch(rng.standard_normal((50, 2)), sample_directions(2, 4, seed=0), 10)
    with pytest.raises(ValueError):
        drift(np.zeros(2), sk.values[:3], sk)
    with pytest.raises(ValueError):
        drift(np.zeros(3), sk.values, sk)


# ---------------------------------------------------------------- euler step

def test_step_is_stationary_at_fixed_point(rng):
    x = rng.standard_normal((500, 2))
    sk = build_sketch(x, sample_directions(2, 10, seed=1), 500)
    cfg = FlowConfig(n_particles=500, n_theta=10, step_size=0.7, lam=0.0, quantiles=500)
    out, pv = euler_step(x, sk, cfg, CounterNormal(0))
    assert np.max(np.abs(out - x)) <= 1e-8
    np.testing.assert_array_equal(pv, sk.values)


def test_one_step_increasing_arrangement_1d(rng):
    target = rng.uniform(-5, 5, 60)
    x = rng.standard_normal((60, 1))
    sk = one_d_sketch(target)
    cfg = FlowConfig(n_particles=60, n_theta=1, step_size=1.0, lam=0.0, quantiles=60)
    out, _ = euler_step(x, sk, cfg, CounterNormal(0))
    # the particle of rank r lands on the target value of rank r
    np.testing.assert_allclose(out[np.argsort(x[:, 0]), 0], np.sort(target), atol=1e-8)


def test_pure_diffusion_variance():
    n = 100_000
    x = CounterNormal(5).normal(0, n, 2) * [1.0, 3.0]
    sk = build_sketch(x, sample_directions(2, 3, seed=1), n)
    lam, h = 0.3, 0.5
    cfg = FlowConfig(n_particles=n, n_theta=3, step_size=h, lam=lam, quantiles=n)
    out, _ = euler_step(x, sk, cfg, CounterNormal.from_seed(8))
    var = np.var(out - x, axis=0, ddof=1)
    np.testing.assert_allclose(var, 2 * lam * h, rtol=0.05)


def test_non_finite_update_names_particle():
    sk = one_d_sketch([0.0, 1.0])
    x = np.array([[0.5], [1e308]])
    cfg = FlowConfig(n_particles=2, n_theta=1, step_size=1e10, lam=0.0, quantiles=2)
    with pytest.raises(NumericalError, match="particle 1"):
        euler_step(x, sk, cfg, CounterNormal(0))


# ---------------------------------------------------------------- run / replay

@pytest.fixture(scope="module")
def small_problem():
    rng = np.random.default_rng(7)
    data = np.concatenate([rng.standard_normal((1500, 2)) * 0.5 + [3, 0], rng.standard_normal((1500, 2)) * 0.5 - [3, 0]])
    sk = build_sketch(data, sample_directions(2, 20, seed=2), 50)
    mon = build_sketch(data, sample_directions(2, 100, seed=2, name="monitor"), 50)
    return data, sk, mon


def small_cfg(**kw):
    base = dict(n_particles=800, n_theta=20, step_size=1.0, lam=1e-4, iterations=30, quantiles=50, seed=3)
    base.update(kw)
    return FlowConfig(**base)


def test_zero_iterations(small_problem):
    _, sk, mon = small_problem
    x0 = initial_particles(800, 2, 3)
    x, rec, log = run_flow(x0, sk, small_cfg(iterations=0, record_maps=True), monitor=mon)
    assert np.array_equal(x, x0)
    assert rec.n_frames == 0
    assert log.iters == [0]


def test_one_step_exact_in_1d(rng):
    target = rng.uniform(0, 10, 40)
    sk = one_d_sketch(target)
    x0 = rng.standard_normal((40, 1))
    x, _, _ = run_flow(x0, sk, FlowConfig(n_particles=40, n_theta=1, lam=0.0, iterations=1, quantiles=40))
    np.testing.assert_allclose(np.sort(x[:, 0]), np.sort(target), atol=1e-8)


def test_flow_decreases_distance(small_problem):
    _, sk, mon = small_problem
    x, _, log = run_flow(initial_particles(800, 2, 3), sk, small_cfg(), monitor=mon)
    assert log.sw2[-1] < 0.2 * log.sw2[0]
    assert log.iters == list(range(31))


def test_determinism(small_problem):
    _, sk, mon = small_problem
    x0 = initial_particles(800, 2, 3)
    a = run_flow(x0, sk, small_cfg(), monitor=mon)
    b = run_flow(x0, sk, small_cfg(), monitor=mon)
    assert np.array_equal(a[0], b[0])
    assert a[2].sw2 == b[2].sw2


def test_translation_equivariance_of_noiseless_step(small_problem):
    data, _, _ = small_problem
    dirs = sample_directions(2, 20, seed=2)
    c = np.array([1.25, -0.5])
    x0 = initial_particles(800, 2, 3)
    cfg = small_cfg(lam=0.0, iterations=1)
    a, _, _ = run_flow(x0, build_sketch(data, dirs, 50), cfg)
    b, _, _ = run_flow(x0 + c, build_sketch(data + c, dirs, 50), cfg)
    np.testing.assert_allclose(b, a + c, atol=1e-10)


def test_replay_reproduces_training(small_problem, tmp_path):
    _, sk, mon = small_problem
    x0 = initial_particles(800, 2, 3)
    cfg = small_cfg(record_maps=True)
    x, rec, log = run_flow(x0, sk, cfg, monitor=mon)
    y, rlog = replay_flow(x0, rec, sk, seed=cfg.seed, monitor=mon)
    assert np.array_equal(x, y)
    assert rlog.sw2 == log.sw2
    # streamed record file gives the same run and the same frames
    x2, rec2, _ = run_flow(x0, sk, cfg, monitor=mon, record_path=tmp_path / "r.swtm")
    assert np.array_equal(x2, x)
    assert np.array_equal(np.asarray(rec2.tables), rec.tables)


def test_replay_uses_stored_tables_on_fresh_particles(small_problem):
    _, sk, mon = small_problem
    cfg = small_cfg(record_maps=True)
    x, rec, log = run_flow(initial_particles(800, 2, 3), sk, cfg, monitor=mon)
    fresh = initial_particles(800, 2, 99)
    y, rlog = replay_flow(fresh, rec, sk, monitor=mon)
    assert rlog.sw2[-1] < 0.3 * rlog.sw2[0]
    # replaying a subset moves each particle exactly as in the full replay
    sub, _ = replay_flow(fresh[:100], rec, sk, seed=cfg.seed)
    full, _ = replay_flow(fresh, rec, sk, seed=cfg.seed)
    assert np.array_equal(sub, full[:100])


def test_resampled_directions_record_and_replay(small_problem, tmp_path):
    data, _, mon = small_problem
    pool = build_sketch(data, sample_directions(2, 200, seed=5, mode="resampled"), 50)
    cfg = small_cfg(n_theta=15, direction_mode="resampled", record_maps=True)
    x0 = initial_particles(800, 2, 3)
    x, rec, log = run_flow(x0, pool, cfg, monitor=mon, record_path=tmp_path / "r.swtm")
    assert rec.indices.shape == (30, 15)
    assert len({tuple(r) for r in np.asarray(rec.indices)}) > 1
    y, _ = replay_flow(x0, load_record(tmp_path / "r.swtm"), pool, seed=cfg.seed)
    assert np.array_equal(x, y)
    assert log.sw2[-1] < 0.2 * log.sw2[0]


def test_record_round_trip(small_problem, tmp_path):
    _, sk, _ = small_problem
    cfg = small_cfg(iterations=4, record_maps=True)
    _, rec, _ = run_flow(initial_particles(800, 2, 3), sk, cfg)
    save_record(rec, tmp_path / "a.swtm")
    back = load_record(tmp_path / "a.swtm")
    assert back.cfg == cfg
    assert back.directions == sk.directions
    assert np.array_equal(np.asarray(back.tables), rec.tables)
    size = (tmp_path / "a.swtm").stat().st_size
    assert size == 8 + 44 + 4 + 16 + 8 * 20 * 2 + 4 * 8 * 20 * 50


def test_record_errors(small_problem, tmp_path):
    _, sk, _ = small_problem
    _, rec, _ = run_flow(initial_particles(800, 2, 3), sk, small_cfg(iterations=2, record_maps=True))
    p = tmp_path / "a.swtm"
    save_record(rec, p)
    raw = p.read_bytes()
    (tmp_path / "t.swtm").write_bytes(raw[:-8])
    with pytest.raises(FormatError, match="frames"):
        load_record(tmp_path / "t.swtm")
    (tmp_path / "m.swtm").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        load_record(tmp_path / "m.swtm")
    other = build_sketch(np.random.default_rng(0).standard_normal((100, 2)), sample_directions(2, 20, seed=9), 50)
    with pytest.raises(ValueError, match="direction"):
        replay_flow(initial_particles(10, 2, 0), rec, other)


def test_early_stop(small_problem, rng):
    # in 1D with Q=N and no noise the first step is exact, so the monitor curve goes flat
    target = rng.uniform(-2, 2, 50)
    sk = one_d_sketch(target)
    cfg = FlowConfig(n_particles=50, n_theta=1, lam=0.0, iterations=400, quantiles=50, early_stop=True)
    _, _, log = run_flow(rng.standard_normal((50, 1)), sk, cfg, monitor=sk)
    assert log.stopped_early
    assert log.iters[-1] == 11
    _, sk2, _ = small_problem
    with pytest.raises(ValueError):
        run_flow(initial_particles(800, 2, 3), sk2, small_cfg(early_stop=True))


def test_config_validation(small_problem):
    _, sk, _ = small_problem
    x0 = initial_particles(800, 2, 3)
    for bad in (dict(step_size=0.0), dict(lam=-1.0), dict(quantiles=40), dict(n_theta=10),
                dict(direction_mode="sometimes"), dict(n_particles=799)):
        with pytest.raises(ValueError):
            run_flow(x0, sk, small_cfg(**bad))


def test_callback_sees_every_generation(small_problem):
    _, sk, _ = small_problem
    seen = []
    run_flow(initial_particles(800, 2, 3), sk, small_cfg(iterations=5), callback=lambda k, x: seen.append(k))
    assert seen == list(range(6))
