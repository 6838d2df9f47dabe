import numpy as np
import pytest

from bracketflow.core import (
    BracketTensor,
    InvalidPointError,
    component_norms,
    jacobi_residual,
    validate_point,
)
from bracketflow.curvature import ricci_operator
from bracketflow.families import Berger3, SemisimpleFamily, berger3, unimodular3
from bracketflow.flow import (
    BRACKET_NORM,
    RICCI_NORM,
    SCALAR_CURVATURE,
    UNNORMALIZED,
    VOLUME,
    EventConfig,
    MetricState,
    NormalizationError,
    TensorFlowSystem,
    ValidityDriftError,
    _run_flow,
    bracket_rhs,
    custom_rate,
    equivalence_report,
    integrate,
    integrate_gauge,
    integrate_metric,
    integrate_reduced,
    metric_rhs,
    normalization_rate,
    normalized_rhs,
    reparametrize,
    rescale_to_ricci_norm,
)

from conftest import solvable_point


def test_bracket_rhs_examples():
    cat = berger3(1, 1, 0)
    tangent = bracket_rhs(cat.point)
    assert tangent.c[2, 3, 1] == pytest.approx(0.5)
    assert tangent.c[2, 3, 0] == pytest.approx(1.0)
    assert np.abs(tangent.iso_part()).max() == 0.0

    flat = unimodular3(1, 1, 0)
    assert np.abs(bracket_rhs(flat.point).c).max() < 1e-15

    fam = SemisimpleFamily(3, 5)
    assert np.allclose(fam.rhs([1.0, 1.0]), [0.25, 0.25])


def test_bracket_rhs_requires_valid():
    bad = validate_point(
        BracketTensor.from_entries(0, 3, [[0, 1, 2, 1.0], [0, 2, 0, 1.0]])
    )
    with pytest.raises(InvalidPointError):
        bracket_rhs(bad)


def test_normalization_rates():
    cat = berger3(1, 1, 0)
    assert normalization_rate(cat.point, VOLUME) == pytest.approx(-0.5)
    assert normalization_rate(cat.point, SCALAR_CURVATURE) == pytest.approx(-0.5)
    assert normalization_rate(cat.point, UNNORMALIZED) == 0.0
    flat = unimodular3(1, 1, 0)
    assert normalization_rate(flat.point, VOLUME) == 0.0
    assert normalization_rate(flat.point, BRACKET_NORM) == 0.0


def test_normalization_rate_errors():
    flat = unimodular3(1, 1, 0)  # R = 0
    with pytest.raises(NormalizationError):
        normalization_rate(flat.point, SCALAR_CURVATURE)
    only_k = berger3(0, 1, 0)  # mu_p = 0
    with pytest.raises(NormalizationError):
        normalization_rate(only_k.point, BRACKET_NORM)
    with pytest.raises(NormalizationError):
        normalization_rate(flat.point, RICCI_NORM)
    with pytest.raises(NormalizationError):
        integrate(unimodular3(1, 0, 0).point, RICCI_NORM, (0, 1))


def test_normalized_rhs_fixed_points():
    vol = normalized_rhs(berger3(1, 1, 0).point, VOLUME)
    assert np.abs(vol.c).max() <= 1e-12
    sc1 = normalized_rhs(berger3(1, 1, 0).point, SCALAR_CURVATURE)
    assert np.abs(sc1.c).max() <= 1e-12
    sc2 = normalized_rhs(berger3(0, 0.75, 0).point, SCALAR_CURVATURE)
    assert np.abs(sc2.c).max() <= 1e-12
    un = normalized_rhs(berger3(1, 1, 0).point, UNNORMALIZED)
    assert np.abs(un.c - bracket_rhs(berger3(1, 1, 0).point).c).max() == 0.0


def test_integrate_blowup_forward():
    traj = integrate(berger3(1, 2, 0).point, UNNORMALIZED, (0.0, 5.0), samples=80)
    assert traj.termination == "blowup-detected"
    assert traj.times[-1] < 1.0
    assert traj.stats.blowup_time_estimate is not None
    assert traj.stats.blowup_time_estimate == pytest.approx(traj.times[-1], rel=0.05)
    assert np.all(np.diff(traj.times) > 0)
    assert traj.c[0] == 1.0 and traj.tau[0] == 0.0


def test_integrate_zero_collapse_seed():
    traj = integrate(berger3(0, -1, 0).point, UNNORMALIZED, (0.0, 50.0), samples=80)
    assert traj.termination == "reached-t-end"
    rep = traj.curvature_at(traj.n_samples - 1)
    assert np.linalg.norm(rep.Ric) < 0.02
    mu_p2, _, _ = component_norms(traj.final_bracket())
    assert mu_p2 == 0.0


def test_integrate_backward_bounded():
    traj = integrate(berger3(1, 2, 0).point, UNNORMALIZED, (0.0, -50.0), samples=80)
    assert traj.termination == "reached-t-end"
    assert traj.is_backward
    assert np.all(np.diff(traj.times) < 0)
    # tau decreases like forward time.
    assert traj.tau[-1] < 0
    a, b, _ = Berger3().project(traj.final_bracket(), tol=1e-6)
    assert abs(a) < 0.1 and abs(b) < 0.1


def test_isotropy_rows_constant():
    cat = berger3(0.9, -0.4, 0.7)
    traj = integrate(cat.point, UNNORMALIZED, (0.0, 1.5), samples=60)
    iso0 = cat.point.bracket.iso_part()
    for i in range(0, traj.n_samples, 12):
        assert np.abs(traj.bracket_at(i).iso_part() - iso0).max() == 0.0


def test_validity_preserved_along_flow():
    cat = berger3(0.7, 0.5, -0.8)
    traj = integrate(cat.point, UNNORMALIZED, (0.0, 2.0), samples=60, rtol=1e-9)
    for i in range(0, traj.n_samples, 10):
        point = validate_point(traj.bracket_at(i), tol=1e-6)
        assert point.valid


def test_validity_drift_aborts():
    # Integrating from a non-Jacobi tensor trips the drift guard immediately.
    bad = validate_point(
        BracketTensor.from_entries(0, 3, [[0, 1, 2, 1.0], [0, 2, 0, 1.0]])
    )
    system = TensorFlowSystem(bad, UNNORMALIZED)
    with pytest.raises(ValidityDriftError) as info:
        _run_flow(system, (0.0, 1.0), 1e-9, 1e-12, 20, EventConfig(), None, True)
    assert info.value.trajectory is not None


def test_step_underflow_near_singularity():
    # With the blowup threshold pushed out of reach, the stepper collapses at
    # the singular time and reports underflow instead of looping forever.
    traj = integrate(
        berger3(1, 2, 0).point,
        UNNORMALIZED,
        (0.0, 5.0),
        samples=40,
        events=EventConfig(blowup_norm=1e30),
    )
    assert traj.termination == "step-underflow"
    assert traj.times[-1] < 1.0


def test_rhs_assembly_matches_pi_form():
    # The componentwise tangent equals -pi(diag(0, Ric)) mu on valid points,
    # where the isotropy rows of the pi-form vanish by the commutation of
    # Ric with the isotropy operators.
    from bracketflow.core import act_pi

    cat = berger3(0.9, -0.6, 0.4)
    mu = cat.point.bracket
    ric = ricci_operator(mu)
    full = np.zeros((4, 4))
    full[1:, 1:] = ric
    direct = -act_pi(full, mu).c
    assembled = bracket_rhs(cat.point).c
    assert np.abs(direct - assembled).max() < 1e-12


def test_convergence_event():
    traj = integrate(
        berger3(0.5, 1, 0).point,
        VOLUME,
        (0.0, 40.0),
        samples=120,
        events=EventConfig(conv_tangent=1e-10, conv_window=6),
    )
    assert traj.termination == "converged-to-fixed-point"
    a, b, _ = Berger3().project(traj.final_bracket(), tol=1e-5)
    assert a == pytest.approx(2 ** (1 / 3), abs=1e-3)
    assert b == pytest.approx(2 ** (2 / 3), abs=1e-3)


def test_scalar_curvature_run_hits_product_limit():
    traj = integrate(
        berger3(0.5, -0.1875, 0).point, SCALAR_CURVATURE, (0.0, 60.0), samples=120
    )
    a, b, _ = Berger3().project(traj.final_bracket(), tol=1e-3)
    assert abs(a) < 1e-3
    assert abs(b + 0.25) < 1e-3
    scalars = [traj.curvature_at(i).R for i in range(0, traj.n_samples, 20)]
    assert max(abs(s + 0.5) for s in scalars) < 1e-8


def test_scalar_increases_unnormalized():
    traj = integrate(unimodular3(1, 2, 3).point, UNNORMALIZED, (0.0, 0.2), samples=80)
    scalars = np.array([traj.curvature_at(i).R for i in range(traj.n_samples)])
    assert np.all(np.diff(scalars) > 0)


def test_scalar_nondecreasing_under_volume():
    traj = integrate(berger3(1.2, -0.8, 0).point, VOLUME, (0.0, 10.0), samples=120)
    scalars = np.array([traj.curvature_at(i).R for i in range(traj.n_samples)])
    assert np.all(np.diff(scalars) >= -1e-10)


def test_h_norm_nonincreasing():
    point = solvable_point(1.0, 0.6)
    traj = integrate(point, UNNORMALIZED, (0.0, 1.0), samples=60)
    h2 = [float(traj.curvature_at(i).H @ traj.curvature_at(i).H) for i in range(traj.n_samples)]
    assert np.all(np.diff(h2) <= 1e-12)


def test_metric_rhs_values():
    cat = unimodular3(1, 1, 1)
    dp = metric_rhs(MetricState(np.eye(3)), cat.point)
    assert np.abs(dp + np.eye(3)).max() < 1e-12
    cat2 = unimodular3(1, 2, 3)
    dp2 = metric_rhs(MetricState(np.eye(3)), cat2.point)
    assert np.abs(dp2 + 2 * ricci_operator(cat2.point.bracket)).max() < 1e-12
    with pytest.raises(ValueError):
        metric_rhs(MetricState(np.diag([1.0, -1.0, 1.0])), cat.point)


def test_metric_flow_einstein_is_linear():
    # Round metric shrinks linearly: P(t) = (1 - t) I for Ric = I/2.
    cat = unimodular3(1, 1, 1)
    mtraj = integrate_metric(cat.point, (0.0, 0.4), samples=41)
    assert np.abs(mtraj.P[-1] - 0.6 * np.eye(3)).max() < 1e-9


def test_gauge_einstein_closed_form():
    cat = unimodular3(1, 1, 1)
    traj = integrate(cat.point, UNNORMALIZED, (0.0, 0.3), samples=121)
    gauge = integrate_gauge(traj, "bracket")
    t = gauge.times[-1]
    assert np.abs(gauge.h[0] - np.eye(3)).max() == 0.0
    assert np.abs(gauge.h[-1] - np.sqrt(1 - t) * np.eye(3)).max() < 1e-8


def test_gauge_on_reduced_trajectory():
    # Gauge reconstruction also works over parameter-space trajectories
    # (embedded per evaluation); the volume run keeps det h at one.
    from bracketflow.families import SemisimpleSu2

    traj = integrate_reduced(
        SemisimpleSu2(), [0.9, 0.6], VOLUME, (0.0, 3.0), samples=151
    )
    gauge = integrate_gauge(traj, "bracket")
    assert max(abs(np.linalg.det(h) - 1.0) for h in gauge.h) < 1e-8


def test_normalized_gauge_reproduces_normalized_flow():
    # The rate-corrected gauge ODE must push the seed onto the normalized
    # trajectory, mirroring the unnormalized equivalence check.
    cat = berger3(0.5, 1, 0)
    traj = integrate(cat.point, VOLUME, (0.0, 3.0), samples=301)
    gauge = integrate_gauge(traj, "bracket")
    dev = max(
        float(
            np.sqrt(
                np.sum((gauge.pushforward(cat.point.bracket, i).c - traj.bracket_at(i).c) ** 2)
            )
        )
        for i in range(traj.n_samples)
    )
    assert dev <= 1e-8


def test_reduced_normalized_matches_full_tensor():
    # Validates how the rate enters each parameter (k-part twice, p-part once).
    fam = Berger3()
    cases = [
        ([0.5, 1.0, 0.0], VOLUME),
        ([0.5, 0.8125, 0.0], SCALAR_CURVATURE),
    ]
    for params0, strategy in cases:
        red = integrate_reduced(
            fam, params0, strategy, (0.0, 3.0), samples=61, rtol=1e-10, atol=1e-13
        )
        cat = berger3(*params0)
        full = integrate(
            cat.point, strategy, (0.0, 3.0), samples=61, rtol=1e-10, atol=1e-13
        )
        dev = max(
            np.abs(fam.project(full.bracket_at(i), tol=1e-4) - red.states[i]).max()
            for i in range(61)
        )
        assert dev <= 1e-10


def test_equivalence_report_seeds():
    rep = equivalence_report(unimodular3(1, 2, 3).point, (0.0, 0.3))
    assert rep.max_bracket_dev <= 1e-6
    assert rep.max_metric_dev <= 1e-6
    assert rep.iso_drift <= 1e-9
    rep = equivalence_report(berger3(1, 1, 0).point, (0.0, 0.3))
    assert rep.max_bracket_dev <= 1e-6
    assert rep.max_metric_dev <= 1e-6


def test_reparametrize_zero_rate_is_identity():
    base = integrate(unimodular3(1, 2, 3).point, UNNORMALIZED, (0.0, 0.2), samples=201)
    rep = reparametrize(base, custom_rate(lambda mu: 0.0), t_end=0.15, samples=41)
    path = base.interpolator()
    for i in range(rep.n_samples):
        assert np.abs(rep.states[i] - path(rep.times[i])).max() < 1e-12
        assert rep.c[i] == pytest.approx(1.0, abs=1e-12)
        assert rep.tau[i] == pytest.approx(rep.times[i], abs=1e-12)


def test_reparametrize_einstein_volume_constant():
    cat = unimodular3(1, 1, 1)
    base = integrate(cat.point, UNNORMALIZED, (0.0, 0.9), samples=301)
    rep = reparametrize(base, VOLUME, t_end=2.0, samples=41)
    for i in range(rep.n_samples):
        assert np.abs(rep.bracket_at(i).c - cat.point.bracket.c).max() < 1e-7


def test_reparametrize_matches_direct_normalized_run():
    cat = berger3(0.5, 1, 0)
    base = integrate(cat.point, UNNORMALIZED, (0.0, 5.0), samples=801)
    rep = reparametrize(base, VOLUME, t_end=1.0, samples=81)
    direct = integrate(cat.point, VOLUME, (0.0, 1.0), samples=81)
    dev = max(
        np.abs(rep.states[i] - direct.states[i]).max() for i in range(rep.n_samples)
    )
    assert dev < 1e-6


def test_reparametrize_range_errors():
    base = integrate(unimodular3(1, 1, 1).point, UNNORMALIZED, (0.0, 0.5), samples=101)
    with pytest.raises(ValueError):
        reparametrize(base, VOLUME, t_end=50.0)
    with pytest.raises(ValueError):
        reparametrize(integrate(unimodular3(1, 1, 1).point, VOLUME, (0, 1)), VOLUME)


def test_reparametrize_detects_zero_limit():
    base = integrate(berger3(0, -1, 0).point, UNNORMALIZED, (0.0, 1.0), samples=101)
    rep = reparametrize(base, custom_rate(lambda mu: -1.0), samples=41)
    assert rep.termination == "converged-to-fixed-point"
    assert rep.notes and "collapsed to zero" in rep.notes[0]
    mu_p2, mu_k2, _ = component_norms(rep.final_bracket())
    assert np.sqrt(mu_p2 + mu_k2) < 1e-8


def test_rescale_to_ricci_norm_contract():
    base = integrate(unimodular3(1, 0, 0).point, UNNORMALIZED, (0.0, 2.0), samples=201)
    rn = rescale_to_ricci_norm(base, samples=81)
    tr2 = np.array(
        [float(np.sum(rn.curvature_at(i).Ric ** 2)) for i in range(rn.n_samples)]
    )
    assert np.abs(tr2 - 0.75).max() < 1e-6
    # Einstein input: constant up to homothety.
    base_e = integrate(unimodular3(1, 1, 1).point, UNNORMALIZED, (0.0, 0.9), samples=301)
    rn_e = rescale_to_ricci_norm(base_e, samples=41)
    tr2_e = np.array(
        [float(np.sum(rn_e.curvature_at(i).Ric ** 2)) for i in range(rn_e.n_samples)]
    )
    assert np.abs(tr2_e - tr2_e[0]).max() < 1e-6


def test_rescale_to_ricci_norm_rejects_flat():
    base = integrate(unimodular3(1, 1, 0).point, UNNORMALIZED, (0.0, 1.0), samples=41)
    with pytest.raises(NormalizationError):
        rescale_to_ricci_norm(base)


def test_reduced_flow_matches_full_tensor_flow():
    from bracketflow.families import SemisimpleSu2, semisimple_concrete_su2

    su2 = SemisimpleSu2()
    params0 = [0.8, 0.5]
    red = integrate_reduced(su2, params0, UNNORMALIZED, (0.0, 1.0), samples=51, rtol=1e-10)
    cat = semisimple_concrete_su2(*params0)
    full = integrate(cat.point, UNNORMALIZED, (0.0, 1.0), samples=51, rtol=1e-10)
    for i in range(0, 51, 10):
        proj = su2.project(full.bracket_at(i), tol=1e-5)
        assert np.abs(proj - red.states[i]).max() < 1e-8


def test_trajectory_scaling_record():
    traj = integrate(unimodular3(1, 2, 3).point, VOLUME, (0.0, 0.5), samples=41)
    assert traj.c[0] == 1.0
    assert traj.tau[0] == 0.0
    assert np.all(np.diff(traj.tau) > 0)
    assert np.all(traj.c > 0)


def test_jacobi_stays_small_along_flow():
    traj = integrate(berger3(1.1, 0.3, -0.6).point, UNNORMALIZED, (0.0, 1.0), samples=60)
    worst = max(jacobi_residual(traj.bracket_at(i)) for i in range(0, 60, 10))
    assert worst <= 1e-6
