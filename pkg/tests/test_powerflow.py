"""Newton-Raphson solver, Y-bus assembly, droop redispatch."""

import dataclasses
import json
import math

import numpy as np
import pytest

from warmflow import (SolveOptions, VoltageState, apply_droop_redispatch,
                      build_ybus, compute_injections, flat_start, solve_nr)

from conftest import FIXTURE_DIR, build_two_bus


def _polar(sol):
    v = sol.v_real + 1j * sol.v_imag
    return np.abs(v), np.angle(v)


class TestTwoBusClosedForm:
    # Single line 1/(jx) from the slack: the PQ voltage solves a quadratic.
    # With v1 = 1, load p + jq and reactance x:
    #   v_imag = -p*x,  v_real = (1 + sqrt(1 - 4*(p*x)^2 - 4*q*x)) / 2

    def test_active_load_only(self):
        case = build_two_bus(x=0.1, p_load=0.5, q_load=0.0)
        sol, rep = solve_nr(case, flat_start(case), SolveOptions(tol=1e-12))
        assert rep.converged
        assert sol.v_real[1] == pytest.approx((1 + math.sqrt(0.99)) / 2,
                                              abs=1e-10)
        assert sol.v_imag[1] == pytest.approx(-0.05, abs=1e-10)

    def test_reactive_load(self):
        case = build_two_bus(x=0.1, p_load=0.5, q_load=0.1)
        sol, rep = solve_nr(case, flat_start(case), SolveOptions(tol=1e-12))
        assert rep.converged
        assert sol.v_real[1] == pytest.approx((1 + math.sqrt(0.95)) / 2,
                                              abs=1e-10)
        assert sol.v_imag[1] == pytest.approx(-0.05, abs=1e-10)


@pytest.fixture(scope="module")
def reference():
    with open(FIXTURE_DIR / "reference_solutions.json") as fh:
        return json.load(fh)


class TestReferenceSolutions:
    """Bundled cases against an independently computed reference."""

    @pytest.mark.parametrize("name", ["case14", "case118"])
    def test_matches_reference(self, name, reference, request):
        case = request.getfixturevalue(name)
        ref = reference[name]
        sol, rep = solve_nr(case, flat_start(case),
                            SolveOptions(tol=ref["tol"]))
        assert rep.converged
        vm, va = _polar(sol)
        np.testing.assert_allclose(vm, ref["vm"], atol=1e-8, rtol=0)
        np.testing.assert_allclose(va, ref["va_rad"], atol=1e-8, rtol=0)

    @pytest.mark.parametrize("name", ["case14", "case118"])
    def test_flat_start_iteration_budget(self, name, request):
        # the reference solver needs 4 polar iterations from flat start;
        # the rectangular formulation should be in the same ballpark
        case = request.getfixturevalue(name)
        _, rep = solve_nr(case, flat_start(case), SolveOptions())
        assert rep.converged
        assert rep.iterations <= 8


class TestSolverBehavior:
    def test_flat_start_magnitudes(self, five_bus):
        v0 = flat_start(five_bus)
        assert v0.v_real[0] == 1.02  # slack setpoint
        assert v0.v_real[1] == 1.01  # PV setpoint
        assert np.all(v0.v_real[2:] == 1.0)
        assert np.all(v0.v_imag == 0.0)

    def test_pv_magnitude_held(self, five_bus):
        sol, rep = solve_nr(five_bus, flat_start(five_bus),
                            SolveOptions(tol=1e-10))
        assert rep.converged
        vm, _ = _polar(sol)
        assert vm[1] == pytest.approx(1.01, abs=1e-9)

    def test_slack_voltage_fixed(self, five_bus):
        sol, _ = solve_nr(five_bus, flat_start(five_bus), SolveOptions())
        # identity rows keep the slack at its setpoint up to solver rounding
        assert sol.v_real[0] == pytest.approx(1.02, abs=1e-12)
        assert sol.v_imag[0] == pytest.approx(0.0, abs=1e-12)

    def test_warm_start_from_solution_is_free(self, case14):
        sol, _ = solve_nr(case14, flat_start(case14), SolveOptions())
        _, rep = solve_nr(case14, sol, SolveOptions())
        assert rep.converged
        assert rep.iterations == 0

    def test_max_iter_exhausted(self, case118):
        _, rep = solve_nr(case118, flat_start(case118),
                          SolveOptions(max_iter=1))
        assert not rep.converged
        assert rep.iterations == 1
        assert rep.max_mismatch > 1e-6

    def test_damping_slows_but_converges(self, case14):
        _, full = solve_nr(case14, flat_start(case14), SolveOptions())
        _, damped = solve_nr(case14, flat_start(case14),
                             SolveOptions(damping=0.5))
        assert damped.converged
        assert damped.iterations > full.iterations

    def test_solved_injections_balance(self, case14):
        sol, _ = solve_nr(case14, flat_start(case14), SolveOptions(tol=1e-10))
        inj = compute_injections(case14, sol)
        # at PQ buses net injection equals minus the local demand
        load = {ld.bus: ld for ld in case14.loads}
        for pos, bus in enumerate(case14.buses):
            if bus.kind != "pq":
                continue
            want_p = -load[bus.id].p if bus.id in load else 0.0
            assert inj.p[pos] == pytest.approx(want_p, abs=1e-8)

    def test_losses_positive(self, case118):
        sol, _ = solve_nr(case118, flat_start(case118), SolveOptions())
        inj = compute_injections(case118, sol)
        # total injected power equals network losses, which must be positive
        assert 0.0 < inj.p.sum() < 2.0


class TestYbus:
    def test_single_line(self):
        case = build_two_bus(r=0.0, x=0.1)
        y = build_ybus(case).matrix.toarray()
        np.testing.assert_allclose(y[0, 1], 10j, atol=1e-12)
        np.testing.assert_allclose(y[0, 0], -10j, atol=1e-12)

    def test_charging_splits_evenly(self):
        case = build_two_bus(r=0.0, x=0.1)
        case = dataclasses.replace(case, branches=(
            dataclasses.replace(case.branches[0], b_charging=0.04),))
        y = build_ybus(case).matrix.toarray()
        np.testing.assert_allclose(y[0, 0], -10j + 0.02j, atol=1e-12)
        np.testing.assert_allclose(y[0, 1], 10j, atol=1e-12)

    def test_tap_asymmetry(self):
        case = build_two_bus(r=0.0, x=0.1)
        case = dataclasses.replace(case, branches=(
            dataclasses.replace(case.branches[0], tap_ratio=2.0),))
        y = build_ybus(case).matrix.toarray()
        # from-side diagonal sees y/tap^2, both off-diagonals y/tap
        np.testing.assert_allclose(y[0, 0], -10j / 4, atol=1e-12)
        np.testing.assert_allclose(y[1, 1], -10j, atol=1e-12)
        np.testing.assert_allclose(y[0, 1], 10j / 2, atol=1e-12)

    def test_out_of_service_branch_excluded(self, ring6):
        branches = (dataclasses.replace(ring6.branches[0], in_service=False),
                    ) + ring6.branches[1:]
        case = dataclasses.replace(ring6, branches=branches)
        y = build_ybus(case).matrix.toarray()
        assert y[0, 1] == 0.0

    def test_bus_shunt_on_diagonal(self, case14):
        y = build_ybus(case14).matrix.toarray()
        case_no_shunt = dataclasses.replace(case14, buses=tuple(
            dataclasses.replace(b, shunt_b=0.0) for b in case14.buses))
        y2 = build_ybus(case_no_shunt).matrix.toarray()
        np.testing.assert_allclose(y[8, 8] - y2[8, 8], 0.19j, atol=1e-12)


class TestDroop:
    def test_distributes_by_participation(self, five_bus):
        out = apply_droop_redispatch(five_bus, 0.3)
        deltas = [g2.p_set - g1.p_set for g1, g2 in
                  zip(five_bus.generators, out.generators)]
        total_part = sum(g.participation for g in five_bus.generators)
        for g, d in zip(five_bus.generators, deltas):
            assert d == pytest.approx(0.3 * g.participation / total_part)
        assert sum(deltas) == pytest.approx(0.3)

    def test_skips_out_of_service(self, five_bus):
        gens = (five_bus.generators[0],
                dataclasses.replace(five_bus.generators[1], in_service=False))
        case = dataclasses.replace(five_bus, generators=gens)
        out = apply_droop_redispatch(case, 0.2)
        assert out.generators[1].p_set == case.generators[1].p_set
        assert out.generators[0].p_set == pytest.approx(
            case.generators[0].p_set + 0.2)

    def test_zero_delta_is_identity(self, case14):
        assert apply_droop_redispatch(case14, 0.0) == case14

    def test_report_wall_time_nonnegative(self, case14):
        _, rep = solve_nr(case14, flat_start(case14), SolveOptions())
        assert rep.wall_time >= 0.0
