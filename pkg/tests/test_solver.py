"""Solver-layer tests: scaling, inflow, assembly against a dense oracle,
linear solvers, time stepping and checkpointing."""

import numpy as np
import pytest

from hemoflow.errors import ConfigError, NumericalError, ValidationError
from hemoflow.fem import FESpace, tabulate_basis, tet_quadrature, tri_quadrature
from hemoflow.fixtures import box_channel
from hemoflow.meshing import TET_FACES, element_geometry
from hemoflow.solver import (
    Assembler,
    DirichletPatch,
    FlowState,
    PhysicalParams,
    PulseProfile,
    load_checkpoint,
    nominal_influx,
    parabolic_inlet_values,
    picard_solve,
    plug_inlet_values,
    pulsed_inflow,
    reynolds_number,
    run_transient,
    save_checkpoint,
    smootherstep,
    solve_linear,
    steady_solve,
    two_peak_waveform,
)
from hemoflow.turbulence import (
    EqualOrder,
    GradientSample,
    InfSup,
    RBVMS,
    Smagorinsky,
    eddy_viscosity,
)


class TestPhysicalParams:
    def test_kinematic_viscosity_and_reynolds(self):
        params = PhysicalParams()      # blood-like defaults
        assert params.kinematic_viscosity == pytest.approx(3.5e-3 / 1060.0)
        assert reynolds_number(params, 0.01, 0.1) == pytest.approx(
            1060.0 * 0.01 * 0.1 / 3.5e-3
        )

    def test_resistance_round_trip(self):
        params = PhysicalParams(density=1060.0, dynamic_viscosity=3.5e-3,
                                length_scale=0.02, velocity_scale=0.85)
        r = 7.25e7
        assert params.resistance_to_si(params.resistance_to_solver(r)) == (
            pytest.approx(r, rel=1e-15)
        )

    def test_pressure_conversion(self):
        params = PhysicalParams(density=2.0, dynamic_viscosity=1.0,
                                velocity_scale=3.0)
        assert params.pressure_to_pa(1.5) == pytest.approx(1.5 * 2.0 * 9.0)

    def test_positivity(self):
        with pytest.raises(ValidationError):
            PhysicalParams(density=0.0)
        with pytest.raises(ValidationError):
            PhysicalParams(velocity_scale=-1.0)


class TestPulseProfile:
    def test_smootherstep_endpoints(self):
        assert smootherstep(0.0) == 0.0 and smootherstep(1.0) == 1.0
        assert smootherstep(0.5) == 0.5
        eps = 1e-6
        assert abs(smootherstep(eps) / eps) < 1e-5          # flat start
        assert abs((1.0 - smootherstep(1.0 - eps)) / eps) < 1e-5

    def test_ramp_mode(self):
        pulse = PulseProfile(mode="ramp", ramp_time=0.2)
        assert pulse.amplitude(-1.0) == 0.0 and pulse.amplitude(0.0) == 0.0
        assert pulse.amplitude(0.1) == pytest.approx(0.5)
        assert pulse.amplitude(0.2) == 1.0 and pulse.amplitude(5.0) == 1.0

    def test_cut_time(self):
        pulse = PulseProfile(mode="ramp", ramp_time=0.01, cut_time=0.5)
        assert pulse.amplitude(0.499) == 1.0
        assert pulse.amplitude(0.5) == 0.0 and pulse.amplitude(9.0) == 0.0

    def test_periodic_hits_table_and_repeats(self):
        times, values = two_peak_waveform(period=2.0)
        assert values[0] == 0.0 and values[-1] == 0.0
        assert values.max() == pytest.approx(1.0)
        pulse = PulseProfile(mode="periodic", ramp_time=0.05, period=2.0,
                             times=times, values=values)
        for ti, vi in zip(times[1:], values[1:]):
            assert pulse.amplitude(2.0 + ti) == pytest.approx(vi, abs=1e-12)
        assert pulse.amplitude(4.0 + 0.37) == pytest.approx(
            pulse.amplitude(2.0 + 0.37), abs=1e-12
        )

    def test_validation(self):
        with pytest.raises(ConfigError):
            PulseProfile(mode="square")
        with pytest.raises(ConfigError):
            PulseProfile(mode="ramp", ramp_time=0.0)
        with pytest.raises(ConfigError):
            PulseProfile(times=[0.0, 0.4], values=[0.0, 0.0], period=1.0)
        with pytest.raises(ConfigError):
            PulseProfile(times=[0.0, 0.5, 1.0], values=[0.0, 1.0, 0.2], period=1.0)


class TestInletValues:
    def test_parabolic_profile(self, pipe_small):
        space = FESpace(pipe_small, 2, components=3)
        dofs, values = parabolic_inlet_values(space)
        coords = space.dof_coords()[dofs]
        r2 = coords[:, 0] ** 2 + coords[:, 1] ** 2
        # inward (+z) direction, unit peak on the axis, zero on the rim
        assert np.allclose(values[:, :2], 0.0, atol=1e-13)
        assert values[np.argmin(r2), 2] == pytest.approx(1.0, abs=1e-12)
        rim = r2 > r2.max() - 1e-12
        assert np.allclose(values[rim, 2], 0.0, atol=1e-13)
        assert np.all(values[:, 2] >= 0.0)

    def test_plug_profile(self, pipe_small):
        space = FESpace(pipe_small, 1, components=3)
        dofs, values = plug_inlet_values(space)
        assert np.allclose(values, [0.0, 0.0, 1.0], atol=1e-13)

    def test_pulsed_inflow_matches_base(self, pipe_small, unit_params):
        space = FESpace(pipe_small, 2, components=3)
        base = parabolic_inlet_values(space)
        pulse = PulseProfile(mode="ramp", ramp_time=0.2)
        asm = Assembler(pipe_small, "p2p1", unit_params, resistances=[0.0],
                        dirichlet=[pulsed_inflow(space, pulse, base=base, peak=2.0)])
        mask, g = asm.dirichlet_values(0.1)        # mid-ramp, amplitude 0.5
        dofs, values = base
        expected = np.zeros((space.n_scalar, 3))
        expected[dofs] = values * 2.0 * 0.5
        expected[space.boundary_scalar_dofs("wall")] = 0.0
        assert np.allclose(g[: asm.n_vel].reshape(-1, 3), expected, atol=1e-14)

    def test_nominal_influx_counts_rim_overlap(self, pipe_small, unit_params):
        space = FESpace(pipe_small, 2, components=3)
        base = parabolic_inlet_values(space)
        pulse = PulseProfile(mode="ramp", ramp_time=0.2)
        asm = Assembler(pipe_small, "p2p1", unit_params, resistances=[0.0],
                        dirichlet=[pulsed_inflow(space, pulse, base=base)])
        _, g = asm.dirichlet_values(1.0)           # amplitude one
        realized = -asm.patch_flux(g[: asm.n_vel], "inlet", 0)
        assert nominal_influx(asm, base) == pytest.approx(realized, rel=1e-13)
        # roughly half the peak times the disc area for a paraboloid
        area = np.pi * 0.5**2
        assert nominal_influx(asm, base) == pytest.approx(0.5 * area, rel=0.08)


def _dense_oracle(asm, x_hat, scheme="steady", dt=None, history=None, t=0.0):
    """Assemble the same weak form as Assembler.assemble with plain dense
    loops over cells and boundary faces (independent data path)."""
    mesh = asm.mesh
    params = asm.params
    nu = params.kinematic_viscosity
    V, Q = asm.V, asm.Q
    nsv, nsp = V.n_scalar, Q.n_scalar
    n_vel = 3 * nsv
    n = n_vel + nsp
    A = np.zeros((n, n))
    rhs = np.zeros(n)

    u_nodal = x_hat[:n_vel].reshape(nsv, 3)
    rule = tet_quadrature(4)
    phi2, gref2, _ = tabulate_basis(V.order, rule.points)
    phi1, gref1, _ = tabulate_basis(1, rule.points)

    if scheme == "euler":
        alpha, H = 1.0, history[0].reshape(nsv, 3)
    elif scheme == "bdf2":
        alpha, H = 1.5, (2.0 * history[0] - 0.5 * history[1]).reshape(nsv, 3)
    else:
        alpha, H = 0.0, None

    for c in range(mesh.n_tets):
        geo = element_geometry(mesh, c)
        dv = V.scalar_dof_map[c]
        dp = Q.scalar_dof_map[c]
        g2 = gref2 @ geo.jacobian_inv            # (nq, nbv, 3) physical grads
        g1 = gref1 @ geo.jacobian_inv
        w = rule.weights * 6.0 * geo.volume
        uq = phi2 @ u_nodal[dv]                  # (nq, 3)
        gq = np.einsum("qbj,bk->qkj", g2, u_nodal[dv])

        nut = 0.0
        if isinstance(asm.model, Smagorinsky):
            nut = eddy_viscosity(
                asm.model,
                GradientSample(gq, np.full(len(w), geo.h_shortest),
                               np.broadcast_to(geo.widths, (len(w), 3))),
            )
        visc = nu + nut

        for q in range(len(w)):
            wq = w[q]
            lap = np.einsum("id,jd->ij", g2[q], g2[q])
            conv = phi2[q][:, None] * (g2[q] @ uq[q])[None, :]
            mass = np.outer(phi2[q], phi2[q])
            vq = visc if np.ndim(visc) == 0 else visc[q]
            for a in range(3):
                ra = 3 * dv + a
                for b in range(3):
                    cb = 3 * dv + b
                    block = wq * vq * np.outer(g2[q][:, b], g2[q][:, a])
                    if a == b:
                        block = block + wq * (vq * lap + conv)
                        if alpha:
                            block = block + wq * (alpha / dt) * mass
                    A[np.ix_(ra, cb)] += block
                # pressure couplings
                A[np.ix_(3 * dv + a, n_vel + dp)] -= wq * np.outer(
                    g2[q][:, a], phi1[q]
                )
                A[np.ix_(n_vel + dp, 3 * dv + a)] += wq * np.outer(
                    phi1[q], g2[q][:, a]
                )
            if alpha:
                rhs[(3 * dv)[:, None] + np.arange(3)] += (
                    wq / dt
                ) * phi2[q][:, None] * (phi2[q] @ H[dv])[None, :]
            if asm.body_force is not None:
                xq = mesh.vertices[mesh.tets[c, 0]] + geo.jacobian @ rule.points[q]
                f = np.asarray(asm.body_force(xq[None, :], t))[0]
                rhs[(3 * dv)[:, None] + np.arange(3)] += wq * np.outer(phi2[q], f)

    # outlet terms: directional penalty and resistive load
    frule = tri_quadrature(4)
    bary_f = np.stack(
        [1.0 - frule.points[:, 0] - frule.points[:, 1],
         frule.points[:, 0], frule.points[:, 1]], axis=1
    )
    ref_verts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0],
                          [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    for k in range(1, mesh.n_outlets + 1):
        rows = mesh.faces_of("outlet", k)
        flux = 0.0
        loads = []
        for f in rows:
            cell, lf = (int(v) for v in mesh.face_parent[f])
            tri = mesh.tets[cell, TET_FACES[lf]]
            a, b, cc = mesh.vertices[tri]
            cross = np.cross(b - a, cc - a)
            area = 0.5 * np.linalg.norm(cross)
            normal = cross / np.linalg.norm(cross)
            centroid = mesh.vertices[mesh.tets[cell]].mean(axis=0)
            if normal @ ((a + b + cc) / 3.0 - centroid) < 0.0:
                normal = -normal
            dv = V.scalar_dof_map[cell]
            ref = bary_f @ ref_verts[TET_FACES[lf]]
            phi_f, _, _ = tabulate_basis(V.order, ref)
            wf = frule.weights * 2.0 * area
            un = np.einsum("qb,bk,k->q", phi_f, u_nodal[dv], normal)
            flux += float(wf @ un)
            loads.append((dv, phi_f, wf, normal, un))
        for dv, phi_f, wf, normal, un in loads:
            if asm.beta != 0.0:
                wneg = -0.5 * asm.beta * np.minimum(un, 0.0) * wf
                pen = np.einsum("q,qi,qj->ij", wneg, phi_f, phi_f)
                for comp in range(3):
                    A[np.ix_(3 * dv + comp, 3 * dv + comp)] += pen
            load = -asm.resistances[k - 1] * flux * np.einsum(
                "q,qi,a->ia", wf, phi_f, normal
            )
            rhs[(3 * dv)[:, None] + np.arange(3)] += load

    # Dirichlet elimination, replicated
    mask, g = asm.dirichlet_values(t)
    rhs = rhs - A @ g
    A[mask, :] = 0.0
    A[:, mask] = 0.0
    A[mask, mask] = 1.0
    rhs = np.where(mask, g, rhs)
    return A, rhs


@pytest.fixture(scope="module")
def oracle_mesh():
    return box_channel(1, 1, 2, size=(1.0, 1.0, 2.0))


def _quadratic_state(asm):
    """A P2-exact velocity iterate with outlet backflow, plus a pressure."""
    V = asm.V
    coords = V.dof_coords()
    u = np.zeros((V.n_scalar, 3))
    u[:, 0] = 0.1 * coords[:, 1] ** 2
    u[:, 1] = 0.2 * coords[:, 0] * coords[:, 2]
    u[:, 2] = -0.4 + 0.3 * coords[:, 0] ** 2
    p = 1.0 + 2.0 * asm.Q.dof_coords()[:, 2]
    return np.concatenate([u.ravel(), p])


class TestAssemblyOracle:
    def _compare(self, asm, x, **kw):
        system = asm.assemble(x, **kw)
        A_ref, b_ref = _dense_oracle(asm, x, **kw)
        scale = np.abs(A_ref).max()
        assert np.abs(system.matrix.toarray() - A_ref).max() <= 1e-13 * scale
        bscale = max(np.abs(b_ref).max(), 1.0)
        assert np.abs(system.rhs - b_ref).max() <= 1e-13 * bscale

    def test_steady_stokes(self, oracle_mesh, unit_params):
        asm = Assembler(oracle_mesh, "p2p1", unit_params, resistances=[0.0])
        self._compare(asm, np.zeros(asm.n_total), scheme="steady")

    def test_steady_full_physics(self, oracle_mesh, unit_params):
        def inflow(coords, t):
            vals = np.zeros((len(coords), 3))
            vals[:, 2] = (1.0 + t) * coords[:, 0]
            return vals

        asm = Assembler(
            oracle_mesh, "p2p1", unit_params, model=Smagorinsky(c=0.01),
            resistances=[2.5], beta=0.7, body_force=lambda x, t: x * 0.0 + [1.0, 2.0, 3.0],
            dirichlet=[DirichletPatch("inlet", 0, inflow)],
        )
        self._compare(asm, _quadratic_state(asm), scheme="steady", t=0.3)

    def test_euler_step(self, oracle_mesh, unit_params):
        asm = Assembler(oracle_mesh, "p2p1", unit_params, resistances=[1.5])
        x = _quadratic_state(asm)
        rng = np.random.default_rng(0)
        hist = (rng.standard_normal(asm.n_vel) * 0.1,)
        self._compare(asm, x, scheme="euler", dt=0.1, history=hist)

    def test_bdf2_step(self, oracle_mesh, unit_params):
        asm = Assembler(oracle_mesh, "p2p1", unit_params, resistances=[1.5],
                        beta=1.0)
        x = _quadratic_state(asm)
        rng = np.random.default_rng(1)
        hist = (rng.standard_normal(asm.n_vel) * 0.1,
                rng.standard_normal(asm.n_vel) * 0.1)
        self._compare(asm, x, scheme="bdf2", dt=0.05, history=hist)

    def test_galerkin_pressure_block_is_empty(self, oracle_mesh, unit_params):
        asm = Assembler(oracle_mesh, "p2p1", unit_params, resistances=[0.0])
        system = asm.assemble(np.zeros(asm.n_total))
        assert system.meta["pp_nnz"] == 0

    def test_multiscale_pressure_block_is_nonempty(self, oracle_mesh, unit_params):
        asm = Assembler(oracle_mesh, "p1p1", unit_params,
                        model=RBVMS(EqualOrder()), resistances=[0.0])
        system = asm.assemble(np.zeros(asm.n_total), scheme="euler", dt=0.1,
                              history=(np.zeros(asm.n_vel),))
        assert system.meta["pp_nnz"] > 0

    def test_rest_state_is_fixed_point(self, oracle_mesh, unit_params):
        asm = Assembler(oracle_mesh, "p2p1", unit_params, resistances=[1.0])
        res = run_transient(asm, 0.1, 1)
        assert np.all(res.state.u == 0.0) and np.all(res.state.p == 0.0)
        assert res.picard_iterations == [0]


class TestAssemblerValidation:
    def test_pair_model_rules(self, oracle_mesh, unit_params):
        with pytest.raises(ValidationError):
            Assembler(oracle_mesh, "p1p1", unit_params)
        with pytest.raises(ValidationError):
            Assembler(oracle_mesh, "p1p1", unit_params,
                      model=RBVMS(InfSup()))
        with pytest.raises(ValidationError):
            Assembler(oracle_mesh, "p2p1", unit_params,
                      model=RBVMS(EqualOrder()))
        with pytest.raises(ValidationError):
            Assembler(oracle_mesh, "p3p2", unit_params)
        with pytest.raises(ValidationError):
            Assembler(oracle_mesh, "p2p1", unit_params, resistances=[1.0, 2.0])

    def test_scheme_validation(self, oracle_mesh, unit_params):
        asm = Assembler(oracle_mesh, "p2p1", unit_params)
        with pytest.raises(ConfigError):
            asm.assemble(np.zeros(asm.n_total), scheme="rk4")
        with pytest.raises(ConfigError):
            asm.assemble(np.zeros(asm.n_total), scheme="euler", dt=None)
        with pytest.raises(ConfigError):
            asm.assemble(np.zeros(asm.n_total), scheme="bdf2", dt=0.1,
                         history=(np.zeros(asm.n_vel),))

    def test_dirichlet_provider_shape(self, oracle_mesh, unit_params):
        asm = Assembler(oracle_mesh, "p2p1", unit_params,
                        dirichlet=[DirichletPatch("inlet", 0,
                                                  lambda c, t: np.zeros(3))])
        with pytest.raises(ValidationError):
            asm.dirichlet_values(0.0)

    def test_eliminated_rows_are_identity(self, oracle_mesh, unit_params):
        asm = Assembler(oracle_mesh, "p2p1", unit_params, pin_pressure=True)
        system = asm.assemble(np.zeros(asm.n_total))
        A = system.matrix.toarray()
        mask = system.dirichlet_mask
        assert mask[asm.n_vel]                       # pinned pressure dof
        assert np.allclose(A[mask][:, mask], np.eye(mask.sum()), atol=0)
        assert np.all(A[mask][:, ~mask] == 0.0)
        assert np.all(A[~mask][:, mask] == 0.0)
        assert np.all(system.rhs[mask] == 0.0)


class TestFluxes:
    def test_constant_field_flux(self, oracle_mesh, unit_params):
        asm = Assembler(oracle_mesh, "p2p1", unit_params)
        u = np.zeros(asm.n_vel)
        u.reshape(-1, 3)[:, 2] = 0.75
        assert asm.patch_flux(u, "outlet", 1) == pytest.approx(0.75, rel=1e-13)
        assert asm.patch_flux(u, "inlet", 0) == pytest.approx(-0.75, rel=1e-13)
        assert asm.influx(u) == pytest.approx(0.75, rel=1e-13)
        assert asm.outflows(u) == pytest.approx([0.75], rel=1e-13)

    def test_missing_patch(self, oracle_mesh, unit_params):
        asm = Assembler(oracle_mesh, "p2p1", unit_params)
        with pytest.raises(ValidationError):
            asm.patch_flux(np.zeros(asm.n_vel), "outlet", 4)

    def test_steady_state_conserves_mass(self, bif2_small, build_assembler):
        # any Picard iterate solves its linearized continuity rows exactly,
        # so the discrete flux balance holds long before full convergence
        asm = build_assembler(bif2_small, resistances=[1.0, 2.0], peak=0.5)
        res = steady_solve(asm, t=1.0, picard_tol=1e-6, picard_max=60)
        u = res.x[: asm.n_vel]
        assert abs(asm.outflows(u).sum() - asm.influx(u)) < 1e-11


class TestLinearSolvers:
    def _system(self, mesh, unit_params, pair="p2p1", model=None):
        asm = Assembler(mesh, pair, unit_params, model=model,
                        resistances=[1.0], pin_pressure=True)
        rng = np.random.default_rng(4)
        x_hat = 0.05 * rng.standard_normal(asm.n_total)
        system = asm.assemble(x_hat, scheme="euler", dt=0.05,
                              history=(0.1 * rng.standard_normal(asm.n_vel),))
        return system

    def test_direct_vs_iterative(self, oracle_mesh, unit_params):
        system = self._system(oracle_mesh, unit_params, pair="p1p1",
                              model=RBVMS(EqualOrder()))
        x_dir = solve_linear(system, method="direct")
        x_it = solve_linear(system, method="iterative", tol=1e-12, maxiter=4000)
        assert np.allclose(x_dir, x_it, atol=1e-7)

    def test_direct_vs_block_amg(self, oracle_mesh, unit_params):
        system = self._system(oracle_mesh, unit_params)
        x_dir = solve_linear(system, method="direct")
        x_blk = solve_linear(system, method="block_amg", tol=1e-12, maxiter=500)
        assert np.allclose(x_dir, x_blk, atol=1e-8)

    def test_zero_rhs_short_circuit(self, oracle_mesh, unit_params):
        asm = Assembler(oracle_mesh, "p2p1", unit_params)
        system = asm.assemble(np.zeros(asm.n_total))
        assert np.all(solve_linear(system) == 0.0)

    def test_bad_inputs(self, oracle_mesh, unit_params):
        system = self._system(oracle_mesh, unit_params)
        with pytest.raises(ConfigError):
            solve_linear(system, method="multifrontal")
        system.rhs[0] = np.nan
        with pytest.raises(NumericalError):
            solve_linear(system)

    def test_picard_non_convergence(self, box_small, build_assembler):
        asm = build_assembler(box_small, resistances=[1.0])
        with pytest.raises(NumericalError, match="did not reach"):
            steady_solve(asm, t=1.0, picard_tol=1e-16, picard_max=1)


class TestTransient:
    def test_transient_approaches_steady_state(self, box_small, build_assembler):
        thick = PhysicalParams(density=1.0, dynamic_viscosity=0.5,
                               length_scale=1.0, velocity_scale=1.0)
        asm = build_assembler(box_small, params=thick, resistances=[1.0],
                              ramp_time=0.02, peak=0.4)
        steady = steady_solve(asm, t=10.0, picard_tol=1e-12, picard_max=40)
        res = run_transient(asm, 0.05, 80, picard_tol=1e-12)
        x_t = np.concatenate([res.state.u, res.state.p])
        err = np.linalg.norm(x_t - steady.x) / np.linalg.norm(steady.x)
        assert err < 1e-6

    def test_observer_cadence(self, box_small, build_assembler):
        asm = build_assembler(box_small, resistances=[1.0])
        seen = []
        run_transient(asm, 0.01, 5,
                      observers=[lambda a, s: seen.append(s.step)],
                      observe_every=2)
        assert seen == [2, 4, 5]       # every other step plus the final one

    def test_controller_feed(self, box_small, build_assembler):
        asm = build_assembler(box_small, resistances=[0.7])

        class Recorder:
            def __init__(self):
                self.calls = []

            def resistances(self):
                return np.array([0.7])

            def after_step(self, t, dt, q_out, q_in):
                self.calls.append((t, dt, q_out.copy(), q_in))

        rec = Recorder()
        run_transient(asm, 0.02, 4, controller=rec)
        assert len(rec.calls) == 4
        times = [c[0] for c in rec.calls]
        assert times == pytest.approx([0.02, 0.04, 0.06, 0.08])
        assert all(c[2].shape == (1,) for c in rec.calls)

    def test_validation(self, oracle_mesh, build_assembler):
        asm = build_assembler(oracle_mesh)
        with pytest.raises(ConfigError):
            run_transient(asm, 0.0, 5)
        with pytest.raises(ConfigError):
            run_transient(asm, 0.1, 0)


class TestBackflowPenalty:
    def test_penalty_is_positive_semidefinite(self, oracle_mesh, unit_params):
        x = None
        mats = {}
        for beta in (0.0, 1.0):
            asm = Assembler(oracle_mesh, "p2p1", unit_params, beta=beta,
                            resistances=[0.0])
            if x is None:
                x = _quadratic_state(asm)      # has u.n < 0 on the outlet
            mats[beta] = asm.assemble(x).matrix
        diff = (mats[1.0] - mats[0.0]).toarray()
        assert np.abs(diff - diff.T).max() < 1e-14
        eig = np.linalg.eigvalsh(diff)
        assert eig.min() > -1e-12 and eig.max() > 0.0

    def test_no_penalty_without_backflow(self, oracle_mesh, unit_params):
        mats = {}
        for beta in (0.0, 1.0):
            asm = Assembler(oracle_mesh, "p2p1", unit_params, beta=beta,
                            resistances=[0.0])
            u = np.zeros(asm.n_vel)
            u.reshape(-1, 3)[:, 2] = 1.0       # outflow everywhere
            x = np.concatenate([u, np.zeros(asm.n_pressure)])
            mats[beta] = asm.assemble(x).matrix
        assert np.abs((mats[1.0] - mats[0.0]).toarray()).max() == 0.0


class TestCheckpoints:
    def test_round_trip(self, box_small, build_assembler, tmp_path):
        asm = build_assembler(box_small, resistances=[1.0])
        path = tmp_path / "state.npz"
        res = run_transient(asm, 0.02, 3)
        save_checkpoint(path, asm, res.state, 0.02)
        state, resist = load_checkpoint(path, asm, 0.02)
        assert np.array_equal(state.u, res.state.u)
        assert np.array_equal(state.p, res.state.p)
        assert np.array_equal(state.u_prev, res.state.u_prev)
        assert state.t == res.state.t and state.step == 3
        assert np.array_equal(resist, [1.0])

    def test_resume_is_bitwise_identical(self, box_small, build_assembler,
                                         tmp_path):
        path = tmp_path / "mid.npz"
        asm1 = build_assembler(box_small, resistances=[1.0])
        full = run_transient(asm1, 0.02, 6, picard_tol=1e-11)
        asm2 = build_assembler(box_small, resistances=[1.0])
        mid = run_transient(asm2, 0.02, 3, picard_tol=1e-11)
        save_checkpoint(path, asm2, mid.state, 0.02)
        asm3 = build_assembler(box_small, resistances=[1.0])
        cont = run_transient(asm3, 0.02, 3, picard_tol=1e-11, resume_from=path)
        assert np.array_equal(cont.state.u, full.state.u)
        assert np.array_equal(cont.state.p, full.state.p)
        assert cont.state.t == full.state.t and cont.state.step == 6

    def test_mismatch_guards(self, box_small, build_assembler, tmp_path,
                             unit_params):
        asm = build_assembler(box_small, resistances=[1.0])
        path = tmp_path / "chk.npz"
        res = run_transient(asm, 0.02, 2)
        save_checkpoint(path, asm, res.state, 0.02)

        other_mesh = box_channel(1, 1, 2, size=(1.0, 1.0, 2.5))
        other = Assembler(other_mesh, "p2p1", unit_params, resistances=[0.0])
        with pytest.raises(ValidationError, match="different mesh"):
            load_checkpoint(path, other)
        p1 = Assembler(box_small, "p1p1", unit_params,
                       model=RBVMS(EqualOrder()), resistances=[0.0])
        with pytest.raises(ValidationError, match="pair"):
            load_checkpoint(path, p1)
        with pytest.raises(ValidationError, match="step size"):
            load_checkpoint(path, asm, dt=0.01)

    def test_version_guard(self, box_small, build_assembler, tmp_path):
        asm = build_assembler(box_small, resistances=[1.0])
        path = tmp_path / "chk.npz"
        res = run_transient(asm, 0.02, 1)
        save_checkpoint(path, asm, res.state, 0.02)
        data = dict(np.load(path, allow_pickle=False))
        data["version"] = np.int64(99)
        np.savez(path, **data)
        with pytest.raises(ValidationError, match="version"):
            load_checkpoint(path, asm)
