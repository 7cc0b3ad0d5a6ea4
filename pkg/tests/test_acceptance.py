"""Acceptance criteria, one test each, at their stated tolerances and time budgets.

A PASS/FAIL line per criterion is printed in the "acceptance criteria"
section of the pytest summary.
"""

import json
import math
import time

import numpy as np
import pytest

from uwbpose.cli import main
from uwbpose.errors import RankDeficient
from uwbpose.fim import (assemble_jacobian, crlb, fim_report, orientation_bound,
                         orientation_information, solve_tag_height, translation_floor)
from uwbpose.geometry import (Pose, Simplex, check_simplex_optimality, exp_so3, random_rotation,
                              regular_layout)
from uwbpose.ranging import SensorLayout, mirror_pose, range_vector, tag_positions
from uwbpose.simlab import TrialConfig, max_error_over_poses, run_pose_trials, sweep

pytestmark = pytest.mark.usefixtures("criterion")


def _far_field_layout():
    # z_a = 4/3 * 0.375 = 0.5 m
    return SensorLayout(regular_layout("tetrahedron", 0.375).vertices,
                        regular_layout("triangle", 1.0).vertices)


def _random_valid(gen):
    """Well-conditioned random layout (4 anchors, 3 tags) and pose 5-15 m away."""
    while True:
        anchors = gen.uniform(-2, 2, size=(4, 3))
        tags = gen.uniform(-1.5, 1.5, size=(3, 3))
        s_a = np.linalg.svd(anchors - anchors.mean(0), compute_uv=False)
        s_t = np.linalg.svd(tags - tags.mean(0), compute_uv=False)
        if s_a[2] > 0.3 * s_a[0] and s_t[1] > 0.4 * s_t[0]:
            break
    direction = gen.normal(size=3)
    direction[2] *= 0.3
    direction /= np.linalg.norm(direction)
    pose = Pose(random_rotation(gen), gen.uniform(5, 15) * direction)
    return SensorLayout(anchors, tags), pose


@pytest.mark.criterion("1 tag-height and translation-floor closed forms")
def test_c1_height_closed_forms(criterion):
    start = time.perf_counter()
    z_a, d = 0.5, 50.0
    rho = np.full((3, 4), d)
    z_opt = solve_tag_height(z_a, rho[0]).z_opt
    floor = translation_floor(z_a, rho)
    elapsed = time.perf_counter() - start
    criterion.update(z_opt=z_opt, floor=floor, seconds=elapsed)
    assert abs(z_opt / (z_a / 4) - 1) < 0.01
    assert abs(floor / (3 * z_a / (2 * d)) - 1) < 0.02
    assert elapsed < 1.0


@pytest.mark.criterion("2 vertical-column energy of the shortest-altitude tag")
def test_c2_j3_closed_form(criterion):
    start = time.perf_counter()
    layout = _far_field_layout()
    # tag 0 sits at (0, 1, 0) in the body frame, so this puts it 50 m out
    pose = Pose(np.eye(3), [50.0, -1.0, 0.0])
    bound = orientation_bound(assemble_jacobian(pose, layout), layout, pose)
    expected = 3 * 0.5 ** 2 / (4 * 50.0 ** 2)
    elapsed = time.perf_counter() - start
    criterion.update(j3_sq=bound.j3_tag1_sq, expected=expected, seconds=elapsed)
    assert abs(bound.j3_tag1_sq / expected - 1) < 0.02
    assert elapsed < 1.0


@pytest.mark.criterion("3 Jacobian vs central finite differences")
def test_c3_jacobian(criterion):
    start = time.perf_counter()
    gen = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        layout, pose = _random_valid(gen)
        j = assemble_jacobian(pose, layout).full
        fd = np.empty_like(j)
        for k in range(6):
            step = np.zeros(6)
            step[k] = 1e-6
            fd[:, k] = (range_vector(pose.retract(step), layout).values
                        - range_vector(pose.retract(-step), layout).values) / 2e-6
        worst = max(worst, np.max(np.abs(fd - j)) / np.max(np.abs(j)))
    elapsed = time.perf_counter() - start
    criterion.update(max_rel_error=worst, seconds=elapsed)
    assert worst < 1e-5
    assert elapsed < 10.0


@pytest.mark.criterion("4 degeneracy suite")
def test_c4_degeneracy(criterion):
    start = time.perf_counter()
    gen = np.random.default_rng(4)
    worst_mirror = 0.0
    for _ in range(20):
        anchors = np.c_[gen.uniform(-3, 3, size=(4, 2)), np.zeros(4)]
        layout = SensorLayout(anchors, regular_layout("triangle", 1.0).vertices)
        pose = Pose(random_rotation(gen), gen.normal(size=3) + [0, 0, 4])
        m = mirror_pose(pose, layout)
        worst_mirror = max(worst_mirror, np.max(np.abs(
            range_vector(m, layout).values - range_vector(pose, layout).values)))
    # ground robots: anchors and tags share a plane
    planar = SensorLayout(np.c_[gen.uniform(-3, 3, size=(4, 2)), np.zeros(4)],
                          regular_layout("triangle", 1.0).vertices)
    with pytest.raises(RankDeficient):
        crlb(assemble_jacobian(Pose(exp_so3([0, 0, 0.6]), [8, 3, 0]), planar), 0.05)
    worst_axis = 0.0
    for _ in range(20):
        layout = SensorLayout(gen.uniform(-2, 2, size=(4, 3)), gen.uniform(-1, 1, size=(2, 3)))
        pose = Pose(random_rotation(gen), gen.normal(size=3) * 6)
        p = tag_positions(pose, layout)
        axis = (p[1] - p[0]) / np.linalg.norm(p[1] - p[0])
        spin = exp_so3(gen.uniform(-np.pi, np.pi) * axis)
        spun = Pose(spin @ pose.rotation, spin @ (pose.translation - p[0]) + p[0])
        worst_axis = max(worst_axis, np.max(np.abs(
            range_vector(spun, layout).values - range_vector(pose, layout).values)))
    elapsed = time.perf_counter() - start
    criterion.update(mirror=worst_mirror, two_tag=worst_axis, seconds=elapsed)
    assert worst_mirror < 1e-9
    assert worst_axis < 1e-9
    assert elapsed < 5.0


@pytest.mark.criterion("5 frame invariances of J_t and H_phi")
def test_c5_invariance(criterion):
    start = time.perf_counter()
    gen = np.random.default_rng(5)
    layout, pose = _random_valid(gen)
    s0 = np.linalg.svd(assemble_jacobian(pose, layout).j_t, compute_uv=False)
    dev_s = 0.0
    for _ in range(100):
        g = Pose(random_rotation(gen), gen.normal(size=3) * 10)
        moved = SensorLayout(g.apply(layout.anchors), layout.tags)
        s = np.linalg.svd(assemble_jacobian(g.compose(pose), moved).j_t, compute_uv=False)
        dev_s = max(dev_s, np.max(np.abs(s - s0)))
    lam0 = np.linalg.eigvalsh(orientation_information(assemble_jacobian(pose, layout)))[0]
    dev_l = 0.0
    for _ in range(100):
        r = random_rotation(gen)
        rotated = SensorLayout(layout.anchors, layout.tags @ r.T)
        jac = assemble_jacobian(Pose(pose.rotation @ r.T, pose.translation), rotated)
        dev_l = max(dev_l, abs(np.linalg.eigvalsh(orientation_information(jac))[0] - lam0))
    elapsed = time.perf_counter() - start
    criterion.update(sv_dev=dev_s, lambda3_dev=dev_l, seconds=elapsed)
    assert dev_s < 1e-9
    assert dev_l < 1e-9
    assert elapsed < 10.0


@pytest.mark.criterion("6 regular simplexes are optimal")
def test_c6_regular_simplex_optimality(criterion):
    start = time.perf_counter()
    regular = [check_simplex_optimality(regular_layout(k, 1.3)) for k in ("triangle", "tetrahedron")]
    gen = np.random.default_rng(6)
    worst = math.inf
    for k in range(1000):
        pts = gen.normal(size=(3 + k % 2, 3))
        s = check_simplex_optimality(Simplex(pts))
        worst = min(worst, s.sum_h_sq_slack, s.content_slack)
    elapsed = time.perf_counter() - start
    reg = max(max(abs(s.sum_h_sq_slack), abs(s.content_slack)) for s in regular)
    criterion.update(regular_slack=reg, min_random_slack=worst, seconds=elapsed)
    assert reg < 1e-9
    assert worst >= 0.0
    assert elapsed < 5.0


@pytest.mark.slow
@pytest.mark.criterion("7 translation error is linear in d/z_a")
def test_c7_linearity(criterion):
    start = time.perf_counter()
    base = TrialConfig(d=10.0, L_t=1.5, sigma_d=0.05, trials=50, orientation_samples=8)
    table = sweep("L_a", [1.0, 1.5, 2.0, 2.5, 3.0], base)
    x = table.column("d") / table.column("z_a")
    r = float(np.corrcoef(x, table.column("E_t_rmse"))[0, 1])
    elapsed = time.perf_counter() - start
    criterion.update(pearson_r=r, seconds=elapsed)
    assert r >= 0.98
    assert elapsed < 300.0


@pytest.mark.slow
@pytest.mark.criterion("8 endpoint errors at L_a=2.5, L_t=3.2, d=10")
def test_c8_endpoint(criterion):
    start = time.perf_counter()
    cfg = TrialConfig(L_a=2.5, L_t=3.2, d=10.0, sigma_d=0.05, trials=50)
    res = max_error_over_poses(cfg)
    elapsed = time.perf_counter() - start
    criterion.update(E_t=res.e_t_max, E_phi=res.e_phi_max, seconds=elapsed)
    assert 0.35 <= res.e_t_max <= 0.66
    assert 0.20 <= res.e_phi_max <= 0.38
    assert elapsed < 120.0


@pytest.mark.slow
@pytest.mark.criterion("9 Monte-Carlo RMSE respects the CRLB")
def test_c9_crlb_ordering(criterion):
    start = time.perf_counter()
    gen = np.random.default_rng(9)
    worst_t = worst_phi = math.inf
    for k in range(20):
        layout, pose = _random_valid(gen)
        rep = fim_report(pose, layout, 0.05)
        res = run_pose_trials(pose, TrialConfig(trials=500, seed=k), layout)
        worst_t = min(worst_t, res.e_t_rmse / math.sqrt(np.trace(rep.crlb[:3, :3])))
        worst_phi = min(worst_phi, res.e_phi_rmse / math.sqrt(np.trace(rep.crlb[3:, 3:])))
    elapsed = time.perf_counter() - start
    criterion.update(min_ratio_t=worst_t, min_ratio_phi=worst_phi, seconds=elapsed)
    assert worst_t >= 0.85
    assert worst_phi >= 0.85
    assert elapsed < 600.0


@pytest.mark.criterion("10 repeated sweeps are byte-identical")
def test_c10_determinism(criterion, tmp_path):
    start = time.perf_counter()
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({
        "schema_version": 1,
        "trial": {"trials": 10, "orientation_samples": 2, "seed": 2024},
        "sweep": {"axis": "d", "grid": [6.0, 10.0, 14.0]}}))
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        assert main(["sweep", "--config", str(cfg), "--out", str(out), "--quiet"]) == 0
        outs.append(out.read_bytes())
    elapsed = time.perf_counter() - start
    criterion.update(bytes=len(outs[0]), seconds=elapsed)
    assert outs[0] == outs[1]
    assert elapsed < 60.0
