import math

import numpy as np
import pytest

from cuspflow.diagnostics import (
    DiagnosticsRecord,
    check_growth,
    check_vr_identity,
    compute_j0_lambda0,
    record,
    residual_system_3_13,
)
from cuspflow.domain import build_domain, generate_grid
from cuspflow.errors import ParameterError, UsageError
from cuspflow.evolve import FlowState, InitialCondition, advance, build_stepper
from cuspflow.field import GridField, tree_sum


@pytest.fixture(scope="module")
def g1():
    return generate_grid(build_domain(1, 1.1), 5)


@pytest.fixture(scope="module")
def g2():
    return generate_grid(build_domain(2, 1.1), 3)


def zero_state(grid):
    return InitialCondition("zero", 0.0).build(grid)


def test_record_zero_state(g1):
    rec = record(zero_state(g1))
    assert rec.E == 0 and rec.dissipation == 0 and rec.sup_gamma == 0
    assert rec.l2_omega == 0 and rec.l2_J == 0 and rec.l6_vr_over_r == 0
    assert rec.is_sane()


def test_record_rigid_rotation(g1):
    """v_theta = r (h = 1), b = 0: E = int r^2 * r dr dz = 15/64."""
    h = GridField(g1, np.where(g1.active, 1.0, 0.0), "neumann-all")
    state = FlowState(
        t=0.0,
        h=h,
        omega=GridField.zeros(g1, "dirichlet-all"),
        v_r=GridField.zeros(g1, "mixed-vr"),
        v_3=GridField.zeros(g1, "mixed-v3"),
    )
    rec = record(state)
    assert rec.E == pytest.approx(15 / 64, rel=1e-3)
    assert rec.sup_gamma == pytest.approx(1.0, abs=1e-12)
    assert rec.l2_J == 0.0


def test_energy_matches_independent_loop(g2):
    state = InitialCondition("streamfunction-swirl", 0.8).build(g2)
    rec = record(state)
    w = g2.quad_weights(0)
    vt = state.v_theta().values
    naive = 0.0
    for i in range(g2.shape[0]):
        for k in range(g2.shape[1]):
            if g2.active[i, k]:
                naive += w[i, k] * (
                    state.v_r.values[i, k] ** 2
                    + vt[i, k] ** 2
                    + state.v_3.values[i, k] ** 2
                )
    assert rec.E == pytest.approx(naive, rel=1e-14)


def test_l2_omega_independent_reduction(g2):
    state = InitialCondition("streamfunction-swirl", 0.8).build(g2)
    rec = record(state)
    w = g2.quad_weights(0)
    flat = math.fsum(
        float(v) for v in (w * state.omega.values**2).ravel()
    )
    assert rec.l2_omega == pytest.approx(math.sqrt(flat), rel=1e-14)


def test_j0_lambda0_reference_values():
    j0, lam0 = compute_j0_lambda0(1.0, 1.1)
    assert j0 == 31
    assert lam0 == pytest.approx(4.0 * 4.0**31 + 1000.0, rel=1e-12)
    j0_b, _ = compute_j0_lambda0(1.0, 1.05)
    assert j0_b == 62


def test_j0_clamped_for_tiny_c_star():
    j0, lam0 = compute_j0_lambda0(1e-12, 1.1)
    assert j0 == 1
    assert lam0 >= 1000.0
    j0z, lam0z = compute_j0_lambda0(0.0, 1.1)
    assert j0z == 1 and lam0z == 1000.0


def test_j0_rejects_bad_parameters():
    with pytest.raises(ParameterError):
        compute_j0_lambda0(1.0, 1.0)
    with pytest.raises(ParameterError):
        compute_j0_lambda0(-1.0, 1.1)


def _rec(t, l2o, l2j, gamma=1.0):
    return DiagnosticsRecord(
        t=t, E=1.0, dissipation=0.0, sup_gamma=gamma, sup_vtheta=0.0,
        l2_omega=l2o, l2_J=l2j, l6_vr_over_r=0.0, div_res=0.0,
        line_int_max=0.0, picard_factor=float("nan"), cg_iters=0,
    )


def test_check_growth_zero_trajectory():
    recs = [_rec(0.0, 0.0, 0.0), _rec(0.5, 0.0, 0.0)]
    cert = check_growth(recs, 1.1)
    assert cert.growth_ok
    assert cert.lambda0 >= 1000.0


def test_check_growth_counterexample():
    """A series growing like e^{2000 t} must violate a lambda0 ~ 1000 bound."""
    recs = [_rec(t, math.exp(2000 * t) * 1e-6, 0.0, gamma=1e-9) for t in
            (0.0, 0.05, 0.1)]
    cert = check_growth(recs, 1.1)
    assert cert.lambda0 < 2000  # tiny C* clamps j0 to 1
    assert not cert.growth_ok


def test_check_growth_simulated_scale():
    recs = [_rec(0.0, 1.0, 0.5), _rec(0.25, 0.9, 0.4), _rec(0.5, 0.8, 0.3)]
    cert = check_growth(recs, 1.1)
    assert cert.growth_ok
    assert cert.measured_rate < 0  # decaying series
    assert cert.j0 >= 1


def test_check_growth_empty_rejected():
    with pytest.raises(UsageError):
        check_growth([], 1.1)


def test_residuals_zero_state(g2):
    s0 = zero_state(g2)
    s1 = zero_state(g2)
    s1 = FlowState(0.01, s1.h, s1.omega, s1.v_r, s1.v_3)
    res = residual_system_3_13(s0, s1, 0.01)
    assert res == (0.0, 0.0, 0.0)
    assert check_vr_identity(s0) == 0.0


def test_residual_swirl_free_J_zero(g2):
    """Swirl-free trajectories have J == 0 identically, so the J-equation
    residual vanishes to machine precision."""
    stepper = build_stepper(g2, 0.05 * g2.delta)
    state = InitialCondition("streamfunction-swirl", 0.5).build(g2)
    # wipe the swirl: h = 0
    state = FlowState(0.0, GridField.zeros(g2, "neumann-all"), state.omega,
                      state.v_r, state.v_3)
    nxt, _ = advance(stepper, state)
    res_J, _, _ = residual_system_3_13(state, nxt, stepper.dt)
    assert res_J < 1e-13


def test_vr_identity_negative_control(g2):
    """A v_r manufactured to violate the identity gives an O(1) residual."""
    state = InitialCondition("zero", 0.0).build(g2)
    rr, zz = np.meshgrid(g2.r, g2.z, indexing="ij")
    bad_vr = GridField(g2, np.where(g2.active, np.sin(3 * rr) + zz**2, 0.0),
                       "mixed-vr")
    bad = FlowState(0.0, state.h, state.omega, bad_vr, state.v_3)
    assert check_vr_identity(bad) > 0.1


def test_vr_identity_small_on_reconstructed(g2):
    from cuspflow.elliptic import biot_savart

    state = InitialCondition("streamfunction-swirl", 0.5).build(g2)
    vr, v3, _ = biot_savart(state.omega, tol=1e-10)
    st = FlowState(0.0, state.h, state.omega, vr, v3)
    assert check_vr_identity(st) < 1.0  # scale set by the refinement study


def test_csv_row_roundtrip():
    rec = _rec(0.125, 1.5e-3, 2.5e-4)
    row = rec.to_row()
    parts = row.split(",")
    assert float(parts[0]) == 0.125
    assert float(parts[5]) == 1.5e-3
    assert parts[-1] == "0"


def test_residual_grid_mismatch_rejected(g1, g2):
    with pytest.raises(UsageError):
        residual_system_3_13(zero_state(g1), zero_state(g2), 0.01)


def test_simulate_t_end_zero_initial_row_only(tmp_path):
    from cuspflow.config import RunConfig
    from cuspflow.run import simulate

    cfg = RunConfig(m=1, refinement_p=2, dt=0.001, t_end=0.0, ic_kind="swirl-only",
                    out_dir=str(tmp_path / "t0"))
    res = simulate(cfg)
    assert len(res.records) == 1
    assert res.records[0].t == 0.0
