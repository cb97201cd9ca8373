import heapq
import math

import numpy as np
import pytest

from conftest import chain_plan, dijkstra_cost, random_search_case
from robust_lattice.errors import ConfigurationError, CorruptedPlanError, NoPathError, PlannerTimeoutError, SnapError
from robust_lattice.geometry import as_convex_polygon, segment_distance_to_polygon
from robust_lattice.planner import (
    CollisionWorld,
    Plan,
    PlanStep,
    astar,
    collision_check,
    dumps_plan,
    heuristic_speed,
    inflate_obstacles,
    load_plan,
    plan,
    save_plan,
    stitch,
    successors,
)
from robust_lattice.primitives import LatticeNode
from robust_lattice.scenario import BoundaryState, snap_state
from robust_lattice.tube import Box

WS = Box([0.0, 0.0, -50.0], [1000.0, 1000.0, 50.0])


def test_zero_radius_inflation_is_identity():
    polys = [as_convex_polygon([[0, 0], [10, 0], [10, 5]])]
    assert np.array_equal(inflate_obstacles(polys, 0.0)[0], polys[0])


def test_inflation_uses_tube_plus_footprint(demo):
    poly = as_convex_polygon([[100, 100], [200, 100], [200, 200], [100, 200]])
    out = inflate_obstacles([poly], demo["tube"], footprint_radius=2.0)[0]
    assert out[:, 0].max() == pytest.approx(200 + demo["tube"].r_x + 2.0, rel=1e-3)


def straight(lib, s=2, di=3):
    return next(p for p in lib.get(0, s) if (p.di, p.dj, p.h_to, p.s_to) == (di, 0, 0, s))


def test_collision_check_examples(demo):
    lib = demo["library"]
    prim = straight(lib)
    assert collision_check(prim, (100.0, 100.0), [], WS)
    # thin wall strictly between two samples
    x_mid = 100.0 + 0.5 * (prim.pose[10, 0] + prim.pose[11, 0])
    wall = as_convex_polygon([[x_mid - 0.01, 50], [x_mid + 0.01, 50], [x_mid + 0.01, 150], [x_mid - 0.01, 150]])
    pts = prim.pose[:, :2] + [100.0, 100.0]
    assert not any(abs(p[0] - x_mid) <= 0.01 for p in pts)
    assert not collision_check(prim, (100.0, 100.0), [wall], WS)
    # touching the boundary at exactly zero distance is a collision
    graze = as_convex_polygon([[120, 100], [140, 100], [140, 130], [120, 130]])
    assert np.all(prim.pose[:, 1] == 0.0)
    assert not collision_check(prim, (100.0, 100.0), [graze], WS)
    # leaving the tightened workspace
    assert not collision_check(prim, (960.0, 100.0), [], WS)


def test_collision_world_agrees_with_reference_check(demo):
    scen, lib = demo["scenario"], demo["library"]
    inflated = inflate_obstacles(scen.obstacles, demo["tube"])
    world = CollisionWorld(inflated, demo["tightened"].pose_w, lib.spec.h)
    rng = np.random.default_rng(7)
    prims = lib.primitives()
    for _ in range(3000):
        node = LatticeNode(int(rng.integers(0, 41)), int(rng.integers(0, 41)), 0, 0)
        p = prims[int(rng.integers(len(prims)))]
        node = LatticeNode(node.i, node.j, p.h_from, p.s_from)
        ref = collision_check(p, (node.i * lib.spec.h, node.j * lib.spec.h), inflated, demo["tightened"].pose_w)
        assert world.edge_free(node, p) == ref


def test_goal_equals_start(demo):
    scen = demo["scenario"].with_overrides(goal=demo["scenario"].start.to_dict())
    p = plan(scen, demo["library"], demo["tube"], demo["tightened"])
    assert p.M == 0 and p.cost == 0.0
    assert p.trajectory.pose.shape == (1, 3)


def test_demo_plan_properties(demo):
    p, lib, scen, tube = demo["plan"], demo["library"], demo["scenario"], demo["tube"]
    assert demo["plan_time"] < 10.0
    assert p.M > 0
    assert p.cost == pytest.approx(sum(lib.find(s.primitive_id).cost for s in p.steps))
    for a, b in zip(p.steps, p.steps[1:]):
        assert a.end == b.start
    traj = p.trajectory
    goal_pose, goal_vel = lib.spec.node_state(*p.goal)
    assert np.allclose(traj.pose[-1, :2], goal_pose[:2])
    assert math.remainder(traj.pose[-1, 2] - goal_pose[2], 2 * math.pi) == pytest.approx(0.0, abs=1e-9)
    assert len(traj.t) == round(traj.duration / traj.dt) + 1
    # safety soundness against the original obstacles
    pts = traj.pose[:, :2]
    for poly in scen.obstacles:
        d = segment_distance_to_polygon(pts[:-1], pts[1:], poly).min()
        assert d >= tube.r_x + scen.footprint_radius - 1e-9


def test_plan_is_deterministic(demo):
    again = plan(demo["scenario"], demo["library"], demo["tube"], demo["tightened"])
    assert dumps_plan(again) == dumps_plan(demo["plan"])


def test_plan_round_trip(demo, tmp_path):
    save_plan(demo["plan"], tmp_path / "plan.json")
    p = load_plan(tmp_path / "plan.json", demo["library"])
    assert np.array_equal(p.trajectory.pose, demo["plan"].trajectory.pose)
    assert dumps_plan(p) == dumps_plan(demo["plan"])


def test_reference_matches_samples(demo):
    traj = demo["plan"].trajectory
    pos, vel, acc = traj.reference(traj.t)
    assert np.allclose(pos, traj.pose, atol=1e-9)
    assert np.allclose(vel, traj.vel, atol=1e-9)
    assert np.allclose(acc, traj.acc, atol=1e-9)
    assert np.allclose(traj.nominal_input(traj.t, demo["model"]), traj.v, atol=1e-9)


def test_stitch_single_primitive(demo):
    lib = demo["library"]
    prim = straight(lib)
    p = Plan((4, 4, 0, 2), (7, 4, 0, 2), [PlanStep(prim.id, (4, 4, 0, 2), (7, 4, 0, 2), (100.0, 100.0, 0.0))],
             prim.cost)
    traj = stitch(p, lib)
    assert np.allclose(traj.pose - [100.0, 100.0, 0.0], prim.pose)
    assert np.array_equal(traj.tau, prim.tau)


def test_stitch_two_straights(demo):
    lib = demo["library"]
    prim = straight(lib)
    steps = [PlanStep(prim.id, (4, 4, 0, 2), (7, 4, 0, 2), (100.0, 100.0, 0.0)),
             PlanStep(prim.id, (7, 4, 0, 2), (10, 4, 0, 2), (175.0, 100.0, 0.0))]
    traj = stitch(Plan((4, 4, 0, 2), (10, 4, 0, 2), steps, 2 * prim.cost), lib)
    assert traj.pose[-1, 0] - traj.pose[0, 0] == pytest.approx(2 * 3 * lib.spec.h)
    assert len(traj.t) == 2 * prim.n_steps + 1
    k = prim.n_steps
    assert np.max(np.abs(traj.vel[k] - traj.vel[k - 1] - (traj.vel[k + 1] - traj.vel[k]))) < 1e-3
    assert np.allclose(traj.vel[k], prim.vel[-1], atol=1e-9)


def test_stitch_rejects_broken_chain(demo):
    lib = demo["library"]
    prim = straight(lib)
    steps = [PlanStep(prim.id, (4, 4, 0, 2), (7, 4, 0, 2), (100.0, 100.0, 0.0)),
             PlanStep(prim.id, (8, 4, 0, 2), (11, 4, 0, 2), (200.0, 100.0, 0.0))]
    with pytest.raises(CorruptedPlanError):
        stitch(Plan((4, 4, 0, 2), (11, 4, 0, 2), steps, 2 * prim.cost), lib)


def test_stitched_torque_reproduces_trajectory(demo, model):
    traj = chain_plan(demo["library"], LatticeNode(10, 10, 0, 1), 10).trajectory
    assert traj.resimulate(model)["pos"] < 1e-3
    assert demo["plan"].trajectory.resimulate(model)["pos"] < 1e-3


def test_heading_unwraps_across_turns(demo):
    # four left quarter turns from heading 0 end at +2*pi, not back at 0
    lib = demo["library"]
    pick = lambda k, prims: next(p for p in prims if p.h_to == (p.h_from + 2) % 8 and p.s_to == p.s_from)
    p = chain_plan(lib, LatticeNode(10, 10, 0, 1), 4, pick)
    assert p.trajectory.pose[-1, 2] == pytest.approx(2 * math.pi)
    assert np.all(np.diff(p.trajectory.pose[:, 2]) > -1e-12)


def test_corridor_no_path_with_tube_but_path_without(corridor):
    scen = corridor["scenario"]
    blocked = scen.with_overrides(obstacles=[
        [[290.0, 0.0], [310.0, 0.0], [310.0, 196.0], [290.0, 196.0]],
        [[290.0, 204.0], [310.0, 204.0], [310.0, 400.0], [290.0, 400.0]],
    ])
    args = corridor["library"], corridor["tube"], corridor["tightened"]
    with pytest.raises(NoPathError, match="clearance"):
        plan(blocked, *args)
    p = plan(blocked, *args, inflate=False)
    assert p.M > 0


def test_expansion_budget(demo):
    with pytest.raises(PlannerTimeoutError):
        plan(demo["scenario"], demo["library"], demo["tube"], demo["tightened"], max_expansions=5)


def test_start_off_lattice(demo):
    scen = demo["scenario"]
    start = BoundaryState(scen.start.pose + [3.0, 0.0, 0.0], scen.start.q)
    with pytest.raises(SnapError, match="Snap hint: nearest node: x1=50"):
        plan(scen.with_overrides(start=start.to_dict()), demo["library"], demo["tube"], demo["tightened"])
    with pytest.raises(SnapError, match="surge"):
        snap_state(BoundaryState(scen.start.pose, np.array([3.0864, 0.1, 0.0])), demo["library"].spec)


def test_start_inside_obstacle(demo):
    scen = demo["scenario"].with_overrides(start={"x1": 425.0, "x2": 400.0, "x3": 0.0, "q": [0, 0, 0]})
    with pytest.raises(ConfigurationError):
        plan(scen, demo["library"], demo["tube"], demo["tightened"])


@pytest.mark.parametrize("seed", range(8))
def test_astar_matches_dijkstra(small, seed):
    rng = np.random.default_rng(100 + seed)
    lib = small["library"]
    start, goal, world = random_search_case(rng, lib, small["tube"], small["tightened"], 14)
    want = dijkstra_cost(start, goal, lib, world)
    if want is None:
        with pytest.raises(NoPathError):
            astar(start, goal, lib, world)
    else:
        assert astar(start, goal, lib, world)[0] == want


def test_heuristic_admissible_and_consistent(small):
    lib = small["library"]
    rng = np.random.default_rng(3)
    start, goal, world = random_search_case(rng, lib, small["tube"], small["tightened"], 12)
    # explicit graph reachable from start, then reverse Dijkstra from the goal
    edges, stack, seen = [], [start], {start}
    while stack:
        n = stack.pop()
        for prim, m in successors(n, lib, world):
            edges.append((n, m, prim.cost))
            if m not in seen:
                seen.add(m)
                stack.append(m)
    rev = {}
    for a, b, c in edges:
        rev.setdefault(b, []).append((a, c))
    dist = {goal: 0.0}
    heap = [(0.0, goal.as_tuple(), goal)]
    while heap:
        g, _, n = heapq.heappop(heap)
        if g > dist[n]:
            continue
        for a, c in rev.get(n, []):
            if g + c < dist.get(a, math.inf):
                dist[a] = g + c
                heapq.heappush(heap, (g + c, a.as_tuple(), a))
    h, v = lib.spec.h, heuristic_speed(lib)

    def hval(n):
        return math.hypot((n.i - goal.i) * h, (n.j - goal.j) * h) / v

    assert len(dist) > 50
    for n, d in dist.items():
        assert hval(n) <= d + 1e-9
    for a, b, c in edges:
        assert hval(a) <= c + hval(b) + 1e-9
