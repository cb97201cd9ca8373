import csv

import numpy as np
import pytest

from conftest import DEMO_W_SQRT, REFERENCE_W_SQRT, chain_plan
from robust_lattice.primitives import LatticeNode
from robust_lattice.sim import (
    PROFILE_KINDS,
    DisturbanceProfile,
    aggregate_report,
    certify,
    make_disturbance,
    make_disturbance_batch,
    run_batch,
    run_closed_loop,
)
from robust_lattice.tube import Box, DisturbanceEllipsoid, compute_tube

REF = DisturbanceEllipsoid(REFERENCE_W_SQRT)
DEMO = DisturbanceEllipsoid(DEMO_W_SQRT)
ACTIVE = PROFILE_KINDS[:3]


def run(demo, profiles, duration=None, ellipsoid=DEMO, **kw):
    return run_batch(demo["plan"].trajectory, demo["model"], demo["scenario"].gains, demo["tube"],
                     make_disturbance_batch(profiles, ellipsoid), duration=duration, ellipsoid=ellipsoid, **kw)


def check(demo, log):
    scen = demo["scenario"]
    return certify(log, demo["tube"], scen.obstacles, scen.torque_limits, scen.footprint_radius, scen.workspace)


@pytest.mark.parametrize("kind", ACTIVE)
@pytest.mark.parametrize("ell", [REF, DEMO], ids=["reference", "demo"])
def test_disturbance_inside_ellipsoid(kind, ell):
    t = np.linspace(0.0, 5000.0, 100_000)
    for seed in range(3):
        d = make_disturbance(DisturbanceProfile(kind, seed), ell)(t)
        assert d.shape == (100_000, 3)
        assert ell.w_norm(d).max() <= 1 + 1e-12


@pytest.mark.parametrize("kind", ["constant-worst-case", "rotating-extreme"])
def test_extreme_profiles_sit_on_the_boundary(kind):
    d = make_disturbance(DisturbanceProfile(kind, 4), REF)(np.linspace(0, 300, 1000))
    assert np.allclose(REF.w_norm(d), 1.0, atol=1e-12)


def test_constant_worst_case_reference_axis():
    d = make_disturbance(DisturbanceProfile("constant-worst-case"), REF)
    assert np.allclose(d(0.0), [0.0, 0.0, 1.6e7])
    assert np.array_equal(d(np.array([0.0, 17.3, 900.0])), np.tile(d(0.0), (3, 1)))
    d1 = make_disturbance(DisturbanceProfile("constant-worst-case", direction=(1, 0, 0)), REF)
    assert np.allclose(d1(3.0), [2e5, 0.0, 0.0])


@pytest.mark.parametrize("kind", ACTIVE)
def test_seeded_determinism(kind):
    t = np.linspace(0, 200, 500)
    a = make_disturbance(DisturbanceProfile(kind, 11), DEMO)(t)
    b = make_disturbance(DisturbanceProfile(kind, 11), DEMO)(t)
    assert np.array_equal(a, b)
    if kind != "constant-worst-case":
        assert not np.array_equal(a, make_disturbance(DisturbanceProfile(kind, 12), DEMO)(t))


def test_batch_matches_single_profiles():
    profiles = [DisturbanceProfile(k, s, n_components=4 + s) for s in range(3) for k in PROFILE_KINDS]
    t = np.linspace(0, 100, 77)
    batch = make_disturbance_batch(profiles, DEMO)(t)
    for b, p in enumerate(profiles):
        assert np.array_equal(batch[:, b], make_disturbance(p, DEMO)(t))


def test_profile_validation():
    with pytest.raises(ValueError, match="unknown disturbance kind"):
        DisturbanceProfile("gust")
    with pytest.raises(ValueError):
        DisturbanceProfile("rotating-extreme", period=0)


def test_zero_disturbance_tracks_exactly(demo):
    log = run(demo, [DisturbanceProfile("zero")])[0]
    assert np.abs(log.x_err).max() <= 1e-6
    assert np.abs(log.v_err).max() <= 1e-6
    rep = check(demo, log)
    assert rep.passed, rep.failures()
    assert rep.attribution == ""


def test_record_count(demo):
    log = run(demo, [DisturbanceProfile("zero")], duration=30.0)[0]
    assert log.n_records == round(30.0 / demo["plan"].trajectory.dt) + 1
    full = run(demo, [DisturbanceProfile("zero")])[0]
    traj = demo["plan"].trajectory
    assert full.n_records == round(traj.duration / traj.dt) + 1
    with pytest.raises(ValueError, match="multiple of dt"):
        run(demo, [DisturbanceProfile("zero")], duration=30.05)


def test_half_step_convergence(demo):
    profiles = [DisturbanceProfile(k, 1) for k in ACTIVE]
    coarse = run(demo, profiles, duration=120.0)
    fine = run(demo, profiles, duration=120.0, dt=0.05)
    for c, f in zip(coarse, fine):
        scale = np.abs(c.x_err).max()
        assert np.abs(c.x_err - f.x_err[::2]).max() <= 1e-6 * scale


def test_single_run_wrapper_matches_batch(demo):
    p = DisturbanceProfile("filtered-noise", 5)
    single = run_closed_loop(demo["plan"].trajectory, demo["model"], demo["scenario"].gains, demo["tube"],
                             make_disturbance(p, DEMO), ellipsoid=DEMO, duration=40.0)
    batch = run(demo, [DisturbanceProfile("zero"), p], duration=40.0)[1]
    assert np.array_equal(single.pose, batch.pose)


def test_error_model_agrees_with_plant(demo):
    logs = run(demo, [DisturbanceProfile(k, 2) for k in ACTIVE], duration=60.0, error_model=True)
    for log in logs:
        assert np.abs(log.model_err - log.x_err).max() <= 1e-6
        assert np.abs(log.model_verr - log.v_err).max() <= 1e-6


def test_containment_under_admissible_disturbance(demo):
    logs = run(demo, [DisturbanceProfile(k, s) for k in ACTIVE for s in range(2)])
    for log in logs:
        rep = check(demo, log)
        assert rep.passed, (log.seed, rep.failures())
        assert log.summary()["max_x_err"] <= demo["tube"].C1 * demo["tube"].D


def test_out_of_set_disturbance_is_attributed(demo):
    p = DisturbanceProfile("constant-worst-case", scale=2.0)
    log = run(demo, [p], duration=150.0)[0]
    rep = check(demo, log)
    assert "containment" in rep.failures()
    assert rep.attribution.startswith("disturbance outside the admissible set")
    agg = aggregate_report([rep], demo["tube"], p)
    assert agg["passed"] is False and agg["failed_seeds"] == [0]


def test_admissible_failure_is_not_blamed_on_disturbance(demo):
    log = run(demo, [DisturbanceProfile("zero")], duration=60.0)[0]
    rep = certify(log, demo["tube"], [], Box.symmetric([1.0, 1.0, 1.0]))
    assert rep.failures() == ["torque"]
    assert rep.attribution.startswith("admissible disturbance")


def test_clearance_failure_on_path_obstacle(demo):
    log = run(demo, [DisturbanceProfile("zero")], duration=60.0)[0]
    x, y = log.pose[300, :2]
    wall = np.array([[x - 1, y - 1], [x + 1, y - 1], [x + 1, y + 1], [x - 1, y + 1]])
    rep = certify(log, demo["tube"], [wall], demo["scenario"].torque_limits)
    assert rep.failures() == ["clearance"]
    assert rep.checks["clearance"]["min_clearance"] == 0.0


def test_halved_ellipsoid_halves_certificate(demo):
    scen = demo["scenario"]
    half = DEMO.scaled(0.5)
    tube = compute_tube(scen.gains, demo["model"], half, scen.velocity_limits, scen.workspace)
    full = demo["tube"]
    assert tube.D == pytest.approx(0.5 * full.D, rel=1e-12)
    assert tube.C1 * tube.D == pytest.approx(0.5 * full.C1 * full.D, rel=1e-12)
    logs = run(demo, [DisturbanceProfile(k, 3) for k in ACTIVE], duration=150.0, ellipsoid=half)
    for log in logs:
        assert np.linalg.norm(log.x_err, axis=1).max() <= tube.C1 * tube.D
        assert np.linalg.norm(log.v_err, axis=1).max() <= tube.C3 * tube.D


def test_initial_error_exercises_lyapunov_check(demo):
    e0 = np.array([[12.0, -10.0, 1.0], [-9.0, 11.0, -2.0]])
    logs = run(demo, [DisturbanceProfile("rotating-extreme", 1), DisturbanceProfile("filtered-noise", 1)],
               duration=100.0, initial_error=(e0, np.zeros((2, 3))))
    for log in logs:
        rep = check(demo, log)
        assert rep.summary["lyapunov_steps_checked"] > 0
        assert rep.checks["lyapunov"]["passed"]


def test_csv_layout(demo, tmp_path):
    log = run(demo, [DisturbanceProfile("filtered-noise")], duration=10.0)[0]
    log.to_csv(tmp_path / "run.csv")
    with open(tmp_path / "run.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["t", "xbar1", "xbar2", "xbar3"] and rows[0][-1] == "decrease_predicate"
    assert len(rows) == log.n_records + 1
    assert all(len(r) == 27 for r in rows)


def test_chain_plan_zero_disturbance(demo):
    traj = chain_plan(demo["library"], LatticeNode(10, 10, 0, 1), 10).trajectory
    log = run_batch(traj, demo["model"], demo["scenario"].gains, demo["tube"],
                    make_disturbance_batch([DisturbanceProfile("zero")], DEMO))[0]
    assert np.linalg.norm(log.x_err, axis=1).max() <= 1e-6
