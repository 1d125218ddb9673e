import json
import math

import numpy as np
import pytest

from tubecbf.stl import BoxInfNorm, parse
from tubecbf.synthesis import (
    Cover,
    CoverError,
    CoverSpec,
    SOPInstance,
    SolverSettings,
    SynthesisResult,
    axis_midpoints,
    build_cover,
    combine_constants,
    combined_lipschitz,
    recheck_constraints,
    solve_sop,
    sop_objective,
    verify_certificate,
    warm_start,
)
from tubecbf.tube import tube_lipschitz


BIG_BOX = {"B": BoxInfNorm((0.0, 0.0), 10.0)}


def _instance(formula_text, table, t_f, bounds, *, basis="monomial", cover=None,
              start=None, pin=False, min_radius=0.25, radius_max=None,
              center_count=4, radius_count=4):
    f = parse(formula_text, table)
    return SOPInstance.build(f, n=2, t_f=t_f, state_bounds=bounds,
                             min_radius=min_radius, basis_kind=basis,
                             center_count=center_count, radius_count=radius_count,
                             radius_max=radius_max, cover=cover,
                             start_center=start, pin_start=pin)


# ---------------------------------------------------------------------------
# covers
# ---------------------------------------------------------------------------

def test_axis_midpoints_one_dimensional_example():
    assert np.allclose(axis_midpoints(0.0, 1.0, 2), [0.25, 0.75])
    pts = axis_midpoints(0.0, 1.0, 2)
    probe = np.linspace(0, 1, 1001)
    dist = np.min(np.abs(probe[:, None] - pts[None, :]), axis=1)
    assert dist.max() <= 0.25 + 1e-12


def test_cover_radius_must_be_positive():
    with pytest.raises(CoverError):
        CoverSpec.for_radius(0.0, 2, 1.0)
    with pytest.raises(CoverError):
        CoverSpec.for_radius(-1.0, 2, 1.0)


def test_cover_sample_budget():
    with pytest.raises(CoverError):
        CoverSpec.for_radius(1e-4, 2, 10.0, max_samples=10_000)


def test_cover_invariant_validation():
    # 1 sample per axis cannot cover a tight radius
    with pytest.raises(CoverError):
        CoverSpec(radius=0.1, theta_counts=(1,), lambda_count=1, tau_count=1, t_f=1.0)


def test_cover_counts_and_random_point_soundness():
    spec = CoverSpec.for_radius(0.5, 2, 1.0)
    cover = build_cover(spec)
    assert spec.sample_count == len(cover.thetas) * len(cover.lams) * len(cover.taus)
    assert cover.samples().shape == (spec.sample_count, 3)

    rng = np.random.default_rng(0)
    w = np.column_stack([
        rng.uniform(0, 2 * math.pi, size=100_000),
        rng.uniform(0, 1, size=100_000),
        rng.uniform(0, 1.0, size=100_000),
    ])
    axes = [cover.thetas[:, 0], cover.lams, cover.taus]
    d2 = np.zeros(len(w))
    for j, grid in enumerate(axes):
        gaps = np.min(np.abs(w[:, j][:, None] - np.asarray(grid)[None, :]), axis=1)
        d2 += gaps**2
    assert np.sqrt(d2).max() <= spec.radius + 1e-12


def test_cover_3d_angles():
    spec = CoverSpec.for_radius(0.8, 3, 2.0)
    cover = build_cover(spec)
    assert cover.thetas.shape[1] == 2
    assert cover.directions.shape[1] == 3
    assert np.max(np.abs(np.linalg.norm(cover.directions, axis=1) - 1.0)) <= 1e-12
    # first angle spans [0, pi], second [0, 2*pi]
    assert cover.thetas[:, 0].max() < math.pi
    assert cover.thetas[:, 1].max() > math.pi


def test_cover_refined_shrinks_radius():
    spec = CoverSpec.for_radius(0.5, 2, 1.0)
    fine = spec.refined(10)
    assert fine.sample_count == spec.sample_count * 1000
    assert fine.radius <= spec.radius / 9.9


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def test_objective_radius_constraint_active_at_equality():
    inst = _instance("G[0,2] B", BIG_BOX, 2.0, [[-5, 5], [-5, 5]],
                     cover=CoverSpec.for_radius(0.4, 2, 2.0))
    q_c = np.zeros((2, 4))
    q_r = np.array([0.25, 0.0, 0.0, 0.0])  # radius identically at the floor
    eta, worst = sop_objective(inst, q_c, q_r)
    assert eta == 0.0
    assert worst.startswith("radius@")


def test_objective_detects_planted_violation():
    table = {"B": BoxInfNorm((0.0, 0.0), 10.0), "O": BoxInfNorm((2.0, 0.0), 1.0)}
    inst = _instance("G[0,2] B & G[0,2] !O", table, 2.0, [[-5, 5], [-5, 5]],
                     cover=CoverSpec.for_radius(0.4, 2, 2.0))
    q_c = np.zeros((2, 4))
    q_c[0, 0] = 2.0  # park the tube inside the obstacle
    q_r = np.array([0.5, 0.0, 0.0, 0.0])
    eta, worst = sop_objective(inst, q_c, q_r)
    assert eta >= 0.5  # at least the center's violation depth
    assert worst.startswith("robustness@")


def test_objective_affine_in_radius_floor():
    cover = CoverSpec.for_radius(0.4, 2, 2.0)
    delta = 0.3
    inst1 = _instance("G[0,2] B", BIG_BOX, 2.0, [[-5, 5], [-5, 5]], cover=cover)
    inst2 = _instance("G[0,2] B", BIG_BOX, 2.0, [[-5, 5], [-5, 5]], cover=cover,
                      min_radius=0.25 + delta)
    q_c = np.zeros((2, 4))
    q_r = np.array([0.25, 0.0, 0.0, 0.0])
    eta1, _ = sop_objective(inst1, q_c, q_r)
    eta2, _ = sop_objective(inst2, q_c, q_r)
    assert eta2 - eta1 == pytest.approx(delta, abs=1e-12)


def test_objective_worker_parallelism_is_order_independent():
    inst = _instance("G[0,2] B", BIG_BOX, 2.0, [[-5, 5], [-5, 5]],
                     cover=CoverSpec.for_radius(0.15, 2, 2.0))
    rng = np.random.default_rng(1)
    q_c = rng.uniform(-1, 1, size=(2, 4))
    q_r = rng.uniform(0.3, 1.0, size=4)
    eta1, worst1 = sop_objective(inst, q_c, q_r, workers=1)
    eta4, worst4 = sop_objective(inst, q_c, q_r, workers=4)
    assert eta1 == eta4 and worst1 == worst4


# ---------------------------------------------------------------------------
# combined lipschitz constant
# ---------------------------------------------------------------------------

def test_combine_constants_mu_formula():
    info = combine_constants(l_rho=1.0, l_center=0.5, l_radius=0.2,
                             radius_max=2.0, n=2)
    assert info.sphere == pytest.approx(math.sqrt(2.0))
    assert info.mu == pytest.approx(2.0 * math.sqrt(3.0), abs=1e-12)


def test_combine_constants_static_tube():
    info = combine_constants(l_rho=1.0, l_center=0.0, l_radius=0.0,
                             radius_max=1.0, n=2)
    assert info.combined == pytest.approx(math.sqrt(3.0), abs=1e-12)


def test_combine_constants_monotone_in_radius_max():
    prev = 0.0
    for r_max in (0.5, 1.0, 2.0, 4.0):
        info = combine_constants(1.0, 1.0, 0.5, r_max, 3)
        assert info.combined >= prev
        prev = info.combined


def test_combined_lipschitz_uses_tube_bounds():
    inst = _instance("G[0,2] B", BIG_BOX, 2.0, [[-5, 5], [-5, 5]])
    tube = inst.make_tube(np.zeros((2, 4)), np.array([2.0, 0.0, 0.0, 0.0]))
    info = combined_lipschitz(tube, inst.formula)
    tl = tube_lipschitz(tube)
    assert info.radius_max == pytest.approx(tl.radius_max)
    assert info.robustness == pytest.approx(math.sqrt(2.0))


# ---------------------------------------------------------------------------
# certificate
# ---------------------------------------------------------------------------

def _result_with(eta, combined, eps):
    info = combine_constants(1.0, 0.0, 0.0, 1.0, 2)
    object.__setattr__(info, "combined", combined) if False else None
    # build a LipschitzInfo with the requested combined constant
    from tubecbf.synthesis import LipschitzInfo
    info = LipschitzInfo(robustness=1.0, center=0.0, radius=0.0, radius_max=1.0,
                         sphere=1.0, mu=1.0, combined=combined)
    inst = _instance("G[0,1] B", BIG_BOX, 1.0, [[-5, 5], [-5, 5]])
    tube = inst.make_tube(np.zeros((2, 4)), np.array([1.0, 0, 0, 0]))
    return SynthesisResult(tube=tube, eta_star=eta, lipschitz=info, epsilon=eps,
                           certificate_ok=eta + combined * eps <= 0,
                           worst_constraint="radius@tau[0]", diagnostics={})


def test_verify_certificate_threshold():
    assert verify_certificate(_result_with(-0.5, 2.0, 0.1)) is True
    assert verify_certificate(_result_with(-0.1, 2.0, 0.1)) is False


# ---------------------------------------------------------------------------
# warm start
# ---------------------------------------------------------------------------

def test_warm_start_respects_boxes_and_pin():
    table = {
        "S": BoxInfNorm((0.15, 0.15), 0.15),
        "T1": BoxInfNorm((7.5, 7.5), 1.5),
        "T2": BoxInfNorm((13.5, 7.5), 1.5),
        "Gl": BoxInfNorm((19.5, 16.5), 1.5),
        "O": BoxInfNorm((10.5, 7.5), 1.5),
    }
    inst = _instance("S => F[6,7] (T1 | T2) & F[14,15] Gl & G[0,15] !O",
                     table, 15.0, [[-1, 22], [-1, 19]], basis="bernstein",
                     start=(0.15, 0.15), pin=True, center_count=5)
    q_c, q_r = warm_start(inst)
    assert np.all(q_c >= inst.center_box[..., 0] - 1e-12)
    assert np.all(q_c <= inst.center_box[..., 1] + 1e-12)
    assert np.all(q_r >= inst.radius_box[:, 0] - 1e-12)
    tube = inst.make_tube(q_c, q_r)
    assert np.allclose(tube.center(0.0), [0.15, 0.15], atol=1e-9)  # pinned
    # the path heads through the first reach target, then toward the goal
    assert np.linalg.norm(tube.center(6.5) - [7.5, 7.5]) <= 2.5
    assert np.linalg.norm(tube.center(15.0) - [19.5, 16.5]) <= 2.5


def test_warm_start_dwell_scheduling():
    table = {
        "R": BoxInfNorm((2.5, 2.5), 1.75),
        "Gn": BoxInfNorm((6.5, 2.5), 1.75),
    }
    inst = _instance("F[0,10] G[0,5] R & F[0,10] G[0,5] Gn", table, 15.0,
                     [[0, 9], [0, 9]], basis="bernstein", start=(2.5, 2.5),
                     center_count=7)
    from tubecbf.synthesis import _reach_items
    items = _reach_items(inst.formula)
    assert len(items) == 2
    assert items[0][3] == pytest.approx(5.0)  # dwell length from the inner window
    q_c, q_r = warm_start(inst)
    tube = inst.make_tube(q_c, q_r)
    # the two dwell segments are scheduled back to back, not on top of each other
    assert np.linalg.norm(tube.center(2.0) - [2.5, 2.5]) <= 2.0
    assert np.linalg.norm(tube.center(9.0) - [6.5, 2.5]) <= 2.0


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

STAY_TABLE = {"T": BoxInfNorm((4.5, 4.5), 3.5)}


def _stay_instance(cover_radius=0.2):
    # radius_max also caps the combined Lipschitz constant, so it is part of
    # the certification budget together with the cover radius
    return _instance("F[0,4] T & G[0,4] T", STAY_TABLE, 4.0, [[0, 9], [0, 9]],
                     basis="bernstein", cover=CoverSpec.for_radius(cover_radius, 2, 4.0),
                     start=(4.5, 4.5), pin=True, radius_max=2.0)


def test_solve_sop_feasible_stay_task_certifies():
    inst = _stay_instance()
    settings = SolverSettings(seed=0, budget=1200)
    result = solve_sop(inst, settings)
    assert result.eta_star <= 0.0
    assert result.certificate_ok
    assert verify_certificate(result)
    # dense re-check: every constraint still clears zero on a 10x finer grid
    assert recheck_constraints(inst, result.tube, factor=10) <= 0.0


def test_solve_sop_reach_task_feasible():
    table = {"T": BoxInfNorm((5.0, 5.0), 2.5)}
    inst = _instance("F[0,4] T", table, 4.0, [[0, 8], [0, 8]], basis="bernstein",
                     cover=CoverSpec.for_radius(0.35, 2, 4.0), start=(1.5, 1.5),
                     pin=True, radius_max=1.5, center_count=5)
    result = solve_sop(inst, SolverSettings(seed=1, budget=1500))
    assert result.eta_star <= 0.0
    # the sampled solution is feasible well beyond the sampled grid
    assert recheck_constraints(inst, result.tube, factor=5) <= max(0.0, result.margin)


def test_solve_sop_contradiction_stays_infeasible():
    table = {"T": BoxInfNorm((2.0, 2.0), 1.0)}
    inst = _instance("F[0,1] T & G[0,1] !T", table, 1.0, [[0, 4], [0, 4]],
                     basis="bernstein", cover=CoverSpec.for_radius(0.4, 2, 1.0))
    result = solve_sop(inst, SolverSettings(seed=2, budget=400))
    assert result.eta_star > 0.0
    assert not result.certificate_ok


def test_solve_sop_deterministic_and_serializable(tmp_path):
    inst = _stay_instance()
    settings = SolverSettings(seed=7, budget=600)
    r1 = solve_sop(inst, settings)
    r2 = solve_sop(inst, settings)
    assert r1.eta_star == r2.eta_star
    assert np.array_equal(r1.tube.center_coeffs, r2.tube.center_coeffs)
    assert np.array_equal(r1.tube.radius_coeffs, r2.tube.radius_coeffs)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    r1.save(p1)
    r2.save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = SynthesisResult.load(p1)
    assert back.eta_star == r1.eta_star
    assert np.array_equal(back.tube.center_coeffs, r1.tube.center_coeffs)
    assert back.certificate_ok == r1.certificate_ok


def test_solve_sop_box_enlargement_never_hurts_with_warm_start():
    inst_small = _stay_instance()
    settings = SolverSettings(seed=3, budget=600)
    r_small = solve_sop(inst_small, settings)

    bigger = _instance("F[0,4] T & G[0,4] T", STAY_TABLE, 4.0, [[-1, 10], [-1, 10]],
                       basis="bernstein", cover=inst_small.cover,
                       start=(4.5, 4.5), pin=True, radius_max=3.0)
    warm = (r_small.tube.center_coeffs, r_small.tube.radius_coeffs)
    r_big = solve_sop(bigger, settings, warm=warm)
    assert r_big.eta_star <= r_small.eta_star + 1e-12


def test_eta_shift_bounded_between_covers():
    inst = _stay_instance()
    rng = np.random.default_rng(5)
    q_c = np.clip(rng.uniform(3.5, 5.5, size=(2, 4)),
                  inst.center_box[..., 0], inst.center_box[..., 1])
    q_r = rng.uniform(0.5, 1.5, size=4)
    coarse_spec = inst.cover
    fine_spec = CoverSpec.from_counts([c * 2 for c in coarse_spec.theta_counts],
                                      coarse_spec.lambda_count * 2,
                                      coarse_spec.tau_count * 2, coarse_spec.t_f)
    eta_coarse, _ = sop_objective(inst, q_c, q_r, cover=build_cover(coarse_spec))
    eta_fine, _ = sop_objective(inst, q_c, q_r, cover=build_cover(fine_spec))
    lip = combined_lipschitz(inst.make_tube(q_c, q_r), inst.formula).combined
    delta = coarse_spec.radius - fine_spec.radius
    assert eta_fine >= eta_coarse - lip * delta - 1e-9
    assert eta_fine <= eta_coarse + lip * coarse_spec.radius + 1e-9


def test_instance_validation():
    with pytest.raises(ValueError):
        _instance("G[0,5] B", BIG_BOX, 2.0, [[-5, 5], [-5, 5]])  # horizon > t_f
    with pytest.raises(ValueError):
        _instance("G[0,1] B", BIG_BOX, 1.0, [[-5, 5], [-5, 5]], min_radius=0.0)
