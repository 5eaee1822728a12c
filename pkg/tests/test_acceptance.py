"""Acceptance criteria, one test each.

Every test appends a ``criterion N: PASS|FAIL ...`` line to the acceptance
summary printed at the end of the pytest run. Thresholds are fixed here and
are not tuned to make a run pass.
"""

import itertools
import time

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from conftest import ACCEPTANCE_LINES
from swflow.data import GmmSpec, gmm_sample, save_matrix
from swflow.flow import FlowConfig, drift, initial_particles, replay_flow, run_flow
from swflow.geometry import DirectionSet, circle_directions, sample_directions
from swflow.metrics import MONITOR_N_THETA, sw2_estimate, sw2_to_sketch
from swflow.ot1d import build_quantile_table, w2_1d
from swflow.rng import CounterNormal, stream
from swflow.sketch import build_sketch, merge_shard_sketches, shard_projections

GMM_P = 50_000
GMM_DIR_SEED = 7
FLOW_SEED = 7
REPLAY_SEED = 123


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------- shared GMM run

def gmm_run(spec_path):
    """Sketch a 2D 10-component mixture and run the flow with recording."""
    t0 = time.perf_counter()
    data = gmm_sample(GmmSpec.from_json(spec_path), GMM_P)
    sketch = build_sketch(data, sample_directions(2, 30, GMM_DIR_SEED), 100)
    monitor = build_sketch(data, sample_directions(2, MONITOR_N_THETA, GMM_DIR_SEED, name="monitor"), 100)
    cfg = FlowConfig(n_particles=5000, n_theta=30, step_size=1.0, lam=1e-4, iterations=200, quantiles=100,
                     seed=FLOW_SEED, record_maps=True)
    x, record, log = run_flow(initial_particles(5000, 2, FLOW_SEED), sketch, cfg, monitor=monitor)
    return dict(data=data, sketch=sketch, monitor=monitor, x=x, record=record, log=log,
                seconds=time.perf_counter() - t0)


@pytest.fixture(scope="module")
def run2(gmm_spec_path):
    return gmm_run(gmm_spec_path)


# ---------------------------------------------------------------- criteria

def test_criterion_1_one_step_exactness_1d():
    rng = stream(1, "acceptance-1")
    target = rng.uniform(-50, 50, 100)
    assert np.unique(target).size == 100
    t0 = time.perf_counter()
    sk = build_sketch(target[:, None], DirectionSet(np.array([[1.0]])), 100)
    cfg = FlowConfig(n_particles=100, n_theta=1, step_size=1.0, lam=0.0, iterations=1, quantiles=100)
    x, _, _ = run_flow(rng.standard_normal((100, 1)), sk, cfg)
    seconds = time.perf_counter() - t0
    err = float(np.max(np.abs(np.sort(x[:, 0]) - build_quantile_table(target, 100).values)))
    ok = err <= 1e-6 and seconds < 1.0
    assert report(1, ok, f"max |sorted particles - table| = {err:.3g} (<= 1e-6), {seconds:.3f} s (< 1 s)")


def test_criterion_2_gmm_flow(run2):
    sw = np.asarray(run2["log"].sw2)
    ratio = sw[-1] / sw[0]
    # trailing median over 10 generations
    med = np.median(sliding_window_view(sw, 10), axis=1)
    rise = float(np.max(np.diff(med)))
    ok = ratio <= 0.2 and rise <= 0 and run2["seconds"] < 120
    assert report(2, ok, f"SW2 {sw[0]:.4g} -> {sw[-1]:.4g} (ratio {ratio:.4f} <= 0.2), "
                         f"max median-filter rise {rise:.3g} (<= 0), {run2['seconds']:.1f} s (< 120 s)")


def test_criterion_3_replay_fresh_particles(run2):
    fresh = CounterNormal.from_seed(REPLAY_SEED, "init").normal(0, 5000, 2)
    _, rlog = replay_flow(fresh, run2["record"], run2["sketch"], monitor=run2["monitor"])
    train, se = sw2_to_sketch(run2["x"], run2["monitor"], with_stderr=True)
    replay = rlog.sw2[-1]
    rel = (replay - train) / train
    ok = abs(rel) <= 0.25 and replay >= train - se
    assert report(3, ok, f"replay SW2 {replay:.4g} vs training {train:.4g}: relative gap {rel:+.3f} "
                         f"(|.| <= 0.25), replay >= training - SE ({train - se:.4g}) "
                         f"is {replay >= train - se}")


def test_criterion_4_w2_matches_exhaustive_assignment():
    rng = stream(4, "acceptance-4")
    perms = {n: np.array(list(itertools.permutations(range(n)))) for n in range(2, 9)}
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        a = rng.standard_normal(n) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)
        b = rng.standard_normal(n) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)
        brute = float(np.min(np.mean((a[None, :] - b[perms[n]]) ** 2, axis=1)))
        got = w2_1d(build_quantile_table(a, n), build_quantile_table(b, n)) ** 2
        worst = max(worst, abs(got - brute))
    assert report(4, worst <= 1e-10, f"1000 pairs, worst |W2^2 - exhaustive cost| = {worst:.3g} (<= 1e-10)")


def test_criterion_5_drift_monte_carlo_rate():
    rng = stream(3, "c5")
    parts = rng.standard_normal((500, 2))
    target = rng.standard_normal((1000, 2)) * [0.5, 1.5] + [2.0, 1.0]
    x = np.array([0.5, -0.3])

    def v_hat(dirs):
        return drift(x, build_sketch(parts, dirs, 100).values, build_sketch(target, dirs, 100))

    oracle = v_hat(circle_directions(10_000))
    sizes = [10, 30, 100, 300, 1000]
    mse = [np.mean([np.sum((v_hat(sample_directions(2, nt, seed=1000 * nt + i)) - oracle) ** 2)
                    for i in range(200)]) for nt in sizes]
    slope = float(np.polyfit(np.log(sizes), np.log(mse), 1)[0])
    ok = -1.25 <= slope <= -0.75
    assert report(5, ok, f"mean squared drift error slope {slope:.3f} in [-1.25, -0.75]; "
                         f"errors {', '.join(f'{m:.2e}' for m in mse)}")


def test_criterion_6_spread_grows_with_lambda():
    target = stream(4, "c6").standard_normal((50_000, 1))
    sk = build_sketch(target, DirectionSet(np.array([[1.0]])), 100)
    n = 5000
    stds, ses = [], []
    for lam in (0.1, 0.2, 0.5, 1.0):
        cfg = FlowConfig(n_particles=n, n_theta=1, step_size=0.1, lam=lam, iterations=500, seed=5)
        x, _, _ = run_flow(initial_particles(n, 1, 5), sk, cfg)
        s = float(np.std(x, ddof=1))
        stds.append(s)
        ses.append(s / np.sqrt(2 * (n - 1)))
    ok = all(stds[i + 1] >= stds[i] - 3 * np.hypot(ses[i], ses[i + 1]) for i in range(3))
    assert report(6, ok, "stationary std over lambda 0.1/0.2/0.5/1: "
                         + ", ".join(f"{s:.3f}" for s in stds) + f" (SE ~{ses[0]:.3f})")


def test_criterion_7_metric_axioms():
    rng = stream(7, "acceptance-7")
    dirs = sample_directions(3, 50, seed=7)
    sym, self_d, tri = 0.0, 0.0, -np.inf
    for i in range(100):
        if i < 20:
            # translates along one line: the triangle inequality is tight
            a = rng.standard_normal((int(rng.integers(20, 400)), 3))
            step = rng.uniform(-2, 2, 3)
            b, c = a + step, a + 2 * step
        else:
            a, b, c = (rng.standard_normal((int(rng.integers(20, 400)), 3)) * rng.uniform(0.2, 3)
                       + rng.uniform(-2, 2, 3) for _ in range(3))
        ab, ba = sw2_estimate(a, b, dirs), sw2_estimate(b, a, dirs)
        sym = max(sym, abs(ab - ba))
        self_d = max(self_d, sw2_estimate(a, a, dirs))
        tri = max(tri, sw2_estimate(a, c, dirs) - ab - sw2_estimate(b, c, dirs))
    ok = sym == 0.0 and self_d < 1e-12 and tri <= 1e-10
    assert report(7, ok, f"100 triples (20 collinear): max asymmetry {sym:.3g} (= 0), "
                         f"max self-distance {self_d:.3g} (< 1e-12), max triangle excess {tri:.3g} (<= 1e-10)")


def test_criterion_8_determinism(run2, gmm_spec_path, tmp_path):
    again = gmm_run(gmm_spec_path)
    save_matrix(run2["x"], tmp_path / "a.swmx")
    save_matrix(again["x"], tmp_path / "b.swmx")
    same_run = (tmp_path / "a.swmx").read_bytes() == (tmp_path / "b.swmx").read_bytes()

    data, sketch = run2["data"], run2["sketch"]
    cuts = np.sort(stream(8, "acceptance-8").choice(np.arange(1, len(data)), 3, replace=False))
    shards = [shard_projections(part, sketch.directions) for part in np.split(data, cuts)]
    merged = merge_shard_sketches(shards, sketch.q)
    same_sketch = (np.asarray(merged.values).tobytes() == np.asarray(sketch.values).tobytes()
                   and merged.fingerprint == sketch.fingerprint)
    ok = same_run and same_sketch
    assert report(8, ok, f"repeated run particle file identical: {same_run}; "
                         f"4-way shard merge identical to monolithic sketch: {same_sketch}")
