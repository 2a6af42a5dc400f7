"""Command line interface.

Subcommands: ``estimate`` (outlet resistance identification), ``run``
(transient simulation with QoI recording and optional snapshots), ``qoi``
(offline recomputation of the QoI CSV files from snapshots), ``mesh-stats``
and ``make-fixture``.  Exit codes: 0 success, 1 usage, 2 validation problem
(bad config/mesh/arguments), 3 numerical failure.

HEMOFLOW_THREADS caps the numeric backends' thread pools; it must be read
before the numeric stack loads, which is why the heavy imports live inside
the command handlers.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

_threads = os.environ.get("HEMOFLOW_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .errors import ConfigError, HemoflowError, NumericalError, ValidationError


def _f(x) -> str:
    """Deterministic float formatting for CSV payloads."""
    return format(float(x), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


# -- config-driven object construction -------------------------------------------------

def _physical_params(cfg):
    from .solver import PhysicalParams

    p = cfg.physical
    return PhysicalParams(
        density=p.density_kg_per_m3,
        dynamic_viscosity=p.dynamic_viscosity_pa_s,
        length_scale=p.length_scale_m,
        velocity_scale=p.velocity_scale_m_per_s,
    )


def _model_from_spec(cfg):
    from . import turbulence as turb

    m = cfg.model
    if m.kind == "none":
        return None
    if m.kind == "smagorinsky":
        return turb.Smagorinsky(c=m.c)
    if m.kind == "vreman":
        return turb.Vreman(c=m.c)
    if m.kind == "sigma":
        return turb.SigmaModel(c=m.c)
    if m.kind == "rbvms":
        if m.stabilization == "equal_order":
            mode = turb.EqualOrder(c_i=m.c_i)
        else:
            mode = turb.InfSup(delta0=m.delta0, delta1=m.delta1)
        return turb.RBVMS(pair_mode=mode)
    raise ConfigError(f"unknown model kind {m.kind!r}")


def _pulse_from_spec(cfg, override_mode=None, override_ramp=None):
    import numpy as np

    from .solver import PulseProfile

    i = cfg.inflow
    mode = override_mode or i.pulse
    ramp = override_ramp if override_ramp is not None else i.ramp_time_s
    times = values = None
    if mode == "periodic" and i.waveform_file:
        table = np.loadtxt(i.waveform_file, ndmin=2)
        if table.shape[1] != 2:
            raise ConfigError(
                f"waveform file {i.waveform_file}: expected two columns (t, a)"
            )
        times, values = table[:, 0], table[:, 1]
    return PulseProfile(
        mode=mode, ramp_time=ramp, period=i.period_s,
        times=times, values=values, cut_time=i.cut_time_s,
    )


def _inlet_base(cfg, space):
    """(scalar dofs, unit-amplitude values) of the configured inlet profile."""
    import numpy as np

    from .fem import interpolate_inlet_profile, load_inlet_profile
    from .solver import parabolic_inlet_values, plug_inlet_values

    i = cfg.inflow
    if i.profile == "parabolic":
        dofs, values = parabolic_inlet_values(space)
    elif i.profile == "plug":
        dofs, values = plug_inlet_values(space)
    else:
        profile = load_inlet_profile(i.file)
        dofs, values = interpolate_inlet_profile(profile, space)
    return dofs, np.asarray(values) * i.peak_m_per_s


def _resistances_solver(cfg, params, n_outlets):
    import numpy as np

    if cfg.resistances_mpa_s_per_m3 is None:
        return np.zeros(n_outlets)
    r = np.asarray(cfg.resistances_mpa_s_per_m3, dtype=np.float64)
    if len(r) != n_outlets:
        raise ConfigError(
            f"config lists {len(r)} resistances but the mesh has "
            f"{n_outlets} outlets"
        )
    return np.array([params.resistance_to_solver(x * 1e6) for x in r])


def _build_assembler(cfg, mesh, params, model, pulse, resistances):
    from .solver import Assembler, DirichletPatch, pulsed_inflow

    order = 2 if cfg.pair == "p2p1" else 1
    from .fem import FESpace

    V = FESpace(mesh, order, components=3)
    base = _inlet_base(cfg, V)
    inflow = pulsed_inflow(V, pulse, base=base)
    assembler = Assembler(
        mesh, pair=cfg.pair, params=params, model=model,
        resistances=resistances, beta=cfg.beta,
        dirichlet=[inflow],
    )
    return assembler, base


def _build_measurements(cfg, mesh):
    import numpy as np

    from .qoi import build_cross_section, wall_patch

    sections = {}
    for name, spec in cfg.sections.items():
        sections[name] = build_cross_section(
            mesh, spec.origin_m, spec.normal, spec.res_m
        )
    patches = {}
    for name, spec in cfg.wss_patches.items():
        predicate = None
        if spec.center_m is not None:
            if spec.radius_m is None:
                raise ConfigError(
                    f"wss_patch {name}: center_m needs radius_m as well"
                )
            center = np.asarray(spec.center_m)
            radius = spec.radius_m
            predicate = lambda c, _c=center, _r=radius: (
                np.linalg.norm(c - _c) <= _r
            )
        patches[name] = wall_patch(mesh, spec.forward, predicate=predicate)
    return sections, patches


# -- QoI collection ---------------------------------------------------------------------

class _QoICollector:
    """Samples the QoI set on a fixed cadence; shared by run and offline qoi."""

    def __init__(self, cfg, params, sections, patches, every):
        from .qoi import QoITimeSeries

        self.cfg = cfg
        self.params = params
        self.sections = sections
        self.patches = patches
        self.every = max(1, every)
        self.series = QoITimeSeries()
        self.tau = {name: [] for name in patches}
        self.tau_times = []
        names = sorted(sections)
        self.reference = names[0] if len(names) > 1 else None
        # stress scale: solver-unit gradients to Pa
        self.mu_eff = (
            params.dynamic_viscosity * params.velocity_scale / params.length_scale
        )

    def observer(self, assembler, state):
        if state.step % self.every != 0:
            return
        from .fem import FEFunction

        u = FEFunction(assembler.V, state.u)
        p = FEFunction(assembler.Q, state.p)
        self.sample(state.t, u, p)

    def sample(self, t, u_fn, p_fn):
        from . import qoi

        params = self.params
        values = {}
        means = {}
        for name, sec in self.sections.items():
            means[name] = qoi.mean_pressure(p_fn, sec)
            values[f"mean_pressure/{name}"] = float(
                params.pressure_to_pa(means[name])
            )
            values[f"max_velocity/{name}"] = (
                qoi.max_velocity(u_fn, sec) * params.velocity_scale
            )
            s = qoi.sfd(u_fn, sec, detail=True)
            values[f"sfd/{name}"] = s.value
            values[f"sfd_tangential/{name}"] = s.tangential
            values[f"sfd_normal/{name}"] = s.normal
            n = qoi.nfd(u_fn, sec, detail=True)
            values[f"nfd/{name}"] = n.value
            values[f"nfd_weight/{name}"] = n.weight
        if self.reference is not None:
            ref = means[self.reference]
            for name in self.sections:
                if name != self.reference:
                    values[f"pressure_diff/{name}-{self.reference}"] = float(
                        self.params.pressure_to_pa(means[name] - ref)
                    )
        for name, patch in self.patches.items():
            res = qoi.wall_shear_stress(u_fn, patch, self.mu_eff)
            values[f"wss_magnitude/{name}"] = res.mean_magnitude
            values[f"wss_forward/{name}"] = res.mean_forward
            values[f"wss_lateral/{name}"] = res.mean_lateral
            self.tau[name].append(res.tau)
        values["kinetic_energy/global"] = qoi.kinetic_energy(u_fn)
        values["mean_velocity/global"] = (
            qoi.mean_velocity_magnitude(u_fn) * params.velocity_scale
        )
        self.tau_times.append(t)
        self.series.append(t, values)

    # output -----------------------------------------------------------------------

    _PUBLIC = (
        "mean_pressure", "pressure_diff", "max_velocity", "sfd", "nfd",
        "wss_magnitude", "wss_forward", "wss_lateral",
        "kinetic_energy", "mean_velocity",
    )

    def write_outputs(self, outdir):
        import numpy as np

        from . import qoi

        os.makedirs(outdir, exist_ok=True)
        times = self.series.times_array()
        grouped = {}
        for name in self.series.names:
            prefix, _, target = name.partition("/")
            grouped.setdefault(prefix, []).append(target)

        written = []
        for prefix in self._PUBLIC:
            targets = sorted(grouped.get(prefix, []))
            if not targets:
                continue
            cols = [self.series.array(f"{prefix}/{t}") for t in targets]
            rows = [
                [_f(times[i])] + [_f(c[i]) for c in cols]
                for i in range(len(times))
            ]
            path = os.path.join(outdir, f"qoi_{prefix}.csv")
            _write_csv(path, ["time_s"] + targets, rows)
            written.append(path)

        # summary with the weighting conventions
        rows = []
        if len(times) >= 2:
            for name in sorted(self.sections):
                rows.append((
                    "sfd_time_avg", name,
                    qoi.sfd_time_average(
                        times,
                        self.series.array(f"sfd_tangential/{name}"),
                        self.series.array(f"sfd_normal/{name}"),
                    ),
                ))
                rows.append((
                    "nfd_time_avg", name,
                    qoi.nfd_time_average(
                        times,
                        self.series.array(f"nfd/{name}"),
                        self.series.array(f"nfd_weight/{name}"),
                    ),
                ))
                rows.append((
                    "mean_pressure_time_avg_pa", name,
                    qoi.time_average(
                        times, self.series.array(f"mean_pressure/{name}")
                    ),
                ))
            if self.reference is not None:
                for name in sorted(self.sections):
                    if name == self.reference:
                        continue
                    key = f"pressure_diff/{name}-{self.reference}"
                    rows.append((
                        "pressure_diff_time_avg_pa",
                        f"{name}-{self.reference}",
                        qoi.time_average(times, self.series.array(key)),
                    ))
            for name in sorted(self.patches):
                rows.append((
                    "wss_magnitude_time_avg_pa", name,
                    qoi.time_average(
                        times, self.series.array(f"wss_magnitude/{name}")
                    ),
                ))
            rows.append((
                "kinetic_energy_time_avg", "global",
                qoi.time_average(times, self.series.array("kinetic_energy/global")),
            ))

        osi_rows = []
        if len(self.tau_times) >= 2:
            for name in sorted(self.patches):
                osi = qoi.oscillatory_shear_index(
                    self.tau_times, np.stack(self.tau[name])
                )
                areas = self.patches[name].areas
                rows.append((
                    "osi_area_mean", name, float((osi * areas).sum() / areas.sum())
                ))
                rows.append(("osi_max", name, float(osi.max())))
                for face, val in zip(self.patches[name].faces, osi):
                    osi_rows.append([name, str(int(face)), _f(val)])

        rows.append((
            "severe_narrowing_reference_pa", "20_mmhg",
            qoi.SEVERE_NARROWING_MMHG * qoi.MMHG_TO_PA,
        ))
        _write_csv(
            os.path.join(outdir, "qoi_summary.csv"),
            ["quantity", "target", "value"],
            [[q, t, _f(v)] for q, t, v in rows],
        )
        if osi_rows:
            _write_csv(
                os.path.join(outdir, "qoi_osi.csv"),
                ["patch", "face", "osi"], osi_rows,
            )
        return written


def _write_vtk(path, mesh, u_vertex, p_vertex):
    """Legacy ASCII unstructured-grid export (vertex data only)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# vtk DataFile Version 3.0\nflow snapshot\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for v in mesh.vertices:
            fh.write(f"{_f(v[0])} {_f(v[1])} {_f(v[2])}\n")
        fh.write(f"CELLS {mesh.n_tets} {5 * mesh.n_tets}\n")
        for t in mesh.tets:
            fh.write(f"4 {t[0]} {t[1]} {t[2]} {t[3]}\n")
        fh.write(f"CELL_TYPES {mesh.n_tets}\n")
        fh.write("\n".join(["10"] * mesh.n_tets) + "\n")
        fh.write(f"POINT_DATA {mesh.n_vertices}\n")
        fh.write("VECTORS velocity double\n")
        for row in u_vertex:
            fh.write(f"{_f(row[0])} {_f(row[1])} {_f(row[2])}\n")
        fh.write("SCALARS pressure double\nLOOKUP_TABLE default\n")
        for val in p_vertex:
            fh.write(f"{_f(val)}\n")


# -- commands ---------------------------------------------------------------------------

def cmd_mesh_stats(args) -> int:
    from .meshing import load_mesh, mesh_statistics

    mesh = load_mesh(args.mesh)
    st = mesh_statistics(mesh)
    print(f"vertices: {st.n_vertices}")
    print(f"tets: {st.n_tets}")
    print(f"boundary faces: {st.n_boundary_faces}")
    print(f"outlets: {mesh.n_outlets}")
    print(f"total volume: {st.volume_total:.12g}")
    print(f"max cell volume: {st.volume_max:.12g}")
    print(f"mean cell volume: {st.volume_mean:.12g}")
    print(f"max boundary height: {st.boundary_height_max:.12g}")
    print(f"mean boundary height: {st.boundary_height_mean:.12g}")
    for label in sorted(st.patch_face_counts):
        count = st.patch_face_counts[label]
        area = st.patch_areas[label]
        print(f"patch {label}: {count} faces, area {area:.12g}")
    return 0


def cmd_make_fixture(args) -> int:
    from .fixtures import make_fixture
    from .meshing import save_mesh, uniform_refine

    params = {}
    for item in args.param or []:
        if "=" not in item:
            raise ValidationError(f"--param expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        raw = raw.strip()
        if "," in raw:
            value = tuple(float(p) for p in raw.split(","))
        else:
            try:
                value = int(raw)
            except ValueError:
                try:
                    value = float(raw)
                except ValueError:
                    value = raw
        params[key] = value

    mesh = make_fixture(args.kind, **params)
    for _ in range(args.refine):
        mesh = uniform_refine(mesh)
    save_mesh(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, {mesh.n_tets} tets, "
          f"{mesh.n_outlets} outlets")
    return 0


def _steps_from_config(cfg):
    n = int(round(cfg.end_time_s / cfg.dt_s))
    if n < 1:
        raise ConfigError("end_time_s shorter than one step")
    return n


def cmd_estimate(args) -> int:
    import numpy as np

    from .estimation import EstimationConfig, retune_svr, run_estimation
    from .config import parse_config
    from .meshing import load_mesh
    from .solver import nominal_influx

    cfg = parse_config(args.config)
    if cfg.estimation is None:
        raise ConfigError("estimate needs an [estimation] section in the config")
    est = cfg.estimation

    mesh = load_mesh(cfg.mesh_path)
    params = _physical_params(cfg)
    model = _model_from_spec(cfg)
    pulse = _pulse_from_spec(cfg, override_mode="ramp",
                             override_ramp=est.ramp_time_s)
    assembler, base = _build_assembler(
        cfg, mesh, params, model, pulse, resistances=None
    )

    targets_raw = np.asarray(est.targets_m3_per_s, dtype=np.float64)
    if len(targets_raw) != mesh.n_outlets:
        raise ConfigError(
            f"{len(targets_raw)} targets for a mesh with {mesh.n_outlets} outlets"
        )
    q_in = nominal_influx(assembler, base)
    if q_in <= 0:
        raise ValidationError("configured inlet profile produces no inflow")
    targets = targets_raw / targets_raw.sum() * q_in

    rsv_solver = params.resistance_to_solver(est.rsv_mpa_s_per_m3 * 1e6)
    econf = EstimationConfig(
        svr=rsv_solver, targets=targets, q_in=q_in, gain=est.gain,
        window=(est.window_start_s, est.window_end_s),
    )
    n_steps = _steps_from_config(cfg)
    linear = {
        "method": cfg.solver.linear, "tol": cfg.solver.linear_tol,
        "maxiter": cfg.solver.linear_maxiter,
    }
    result = run_estimation(
        assembler, econf, cfg.dt_s, n_steps,
        picard_tol=cfg.solver.picard_tol, picard_max=cfg.solver.picard_max,
        linear=linear,
    )

    outdir = args.out or cfg.output.directory
    os.makedirs(outdir, exist_ok=True)

    r_si = np.array([params.resistance_to_si(r) for r in result.resistances])
    header = [
        "outlet", "target_m3_per_s", "r_star_solver", "r_star_pa_s_per_m3",
        "r_star_mpa_s_per_m3", "flow_integral_s", "window_start_s",
        "window_end_s",
    ]
    rows = []
    for k in range(mesh.n_outlets):
        rows.append([
            str(k + 1), _f(targets[k]), _f(result.resistances[k]),
            _f(r_si[k]), _f(r_si[k] / 1e6), _f(result.flow_integrals[k]),
            _f(est.window_start_s), _f(est.window_end_s),
        ])
    _write_csv(os.path.join(outdir, "estimate_report.csv"), header, rows)

    times, flows, conds = (result.times, result.flows, result.conductances)
    hheader = (["time_s"]
               + [f"q_{k + 1}" for k in range(mesh.n_outlets)]
               + [f"g_{k + 1}" for k in range(mesh.n_outlets)])
    hrows = [
        [_f(times[i])] + [_f(x) for x in flows[i]] + [_f(x) for x in conds[i]]
        for i in range(len(times))
    ]
    _write_csv(os.path.join(outdir, "estimate_history.csv"), hheader, hrows)

    if est.retune_rsv_mpa_s_per_m3 is not None:
        rsv_new = params.resistance_to_solver(est.retune_rsv_mpa_s_per_m3 * 1e6)
        r_new, dp = retune_svr(result.resistances, targets, rsv_new)
        rows = [
            [str(k + 1), _f(r_new[k]),
             _f(params.resistance_to_si(r_new[k]) / 1e6), _f(dp)]
            for k in range(mesh.n_outlets)
        ]
        _write_csv(
            os.path.join(outdir, "estimate_retuned.csv"),
            ["outlet", "r_solver", "r_mpa_s_per_m3", "delta_p_solver"], rows,
        )

    for k in range(mesh.n_outlets):
        print(f"outlet {k + 1}: R* = {r_si[k]:.6g} Pa s/m^3 "
              f"({r_si[k] / 1e6:.6g} MPa s/m^3), "
              f"flow integral {result.flow_integrals[k]:.3e} s")
    return 0


def cmd_run(args) -> int:
    from .config import parse_config
    from .meshing import load_mesh
    from .solver import run_transient, save_checkpoint

    cfg = parse_config(args.config)
    mesh = load_mesh(cfg.mesh_path)
    params = _physical_params(cfg)
    model = _model_from_spec(cfg)
    pulse = _pulse_from_spec(cfg)
    resistances = _resistances_solver(cfg, params, mesh.n_outlets)
    assembler, _ = _build_assembler(cfg, mesh, params, model, pulse, resistances)

    sections, patches = _build_measurements(cfg, mesh)
    collector = _QoICollector(cfg, params, sections, patches, cfg.output_every)

    outdir = args.out or cfg.output.directory
    os.makedirs(outdir, exist_ok=True)
    observers = [collector.observer]

    snapdir = os.path.join(outdir, "snapshots")
    if cfg.output.snapshot_every > 0:
        os.makedirs(snapdir, exist_ok=True)

        def snapshot_observer(assembler_, state):
            if state.step % cfg.output.snapshot_every != 0:
                return
            path = os.path.join(snapdir, f"step_{state.step:06d}.npz")
            save_checkpoint(path, assembler_, state, cfg.dt_s)

        observers.append(snapshot_observer)

    n_steps = _steps_from_config(cfg)
    linear = {
        "method": cfg.solver.linear, "tol": cfg.solver.linear_tol,
        "maxiter": cfg.solver.linear_maxiter,
    }
    result = run_transient(
        assembler, cfg.dt_s, n_steps,
        picard_tol=cfg.solver.picard_tol, picard_max=cfg.solver.picard_max,
        linear=linear, observers=observers, observe_every=1,
    )

    collector.write_outputs(outdir)

    if cfg.output.vtk:
        nv = mesh.n_vertices
        u_vertex = result.state.u.reshape(-1, 3)[:nv]
        p_vertex = result.state.p[:nv]
        _write_vtk(os.path.join(outdir, "final_state.vtk"), mesh,
                   u_vertex, p_vertex)

    print(f"ran {n_steps} steps to t = {result.state.t:.6g} s; "
          f"outputs in {outdir}")
    return 0


def cmd_qoi(args) -> int:
    import glob

    import numpy as np

    from .config import parse_config
    from .fem import FEFunction, FESpace
    from .meshing import load_mesh

    cfg = parse_config(args.config)
    mesh = load_mesh(cfg.mesh_path)
    params = _physical_params(cfg)
    sections, patches = _build_measurements(cfg, mesh)
    collector = _QoICollector(cfg, params, sections, patches, every=1)

    snapdir = args.snapshots or os.path.join(cfg.output.directory, "snapshots")
    files = sorted(glob.glob(os.path.join(snapdir, "step_*.npz")))
    if not files:
        raise ValidationError(f"no snapshots found under {snapdir}")

    order = 2 if cfg.pair == "p2p1" else 1
    V = FESpace(mesh, order, components=3)
    Q = FESpace(mesh, 1, components=1)
    mesh_hash = mesh.content_hash()
    for path in files:
        with np.load(path, allow_pickle=False) as data:
            if str(data["mesh_hash"]) != mesh_hash:
                raise ValidationError(f"{path}: snapshot from a different mesh")
            if str(data["pair"]) != cfg.pair:
                raise ValidationError(f"{path}: element pair mismatch")
            u = FEFunction(V, data["u"].copy())
            p = FEFunction(Q, data["p"].copy())
            collector.sample(float(data["t"]), u, p)

    outdir = args.out or cfg.output.directory
    collector.write_outputs(outdir)
    print(f"recomputed QoIs from {len(files)} snapshots into {outdir}")
    return 0


# -- entry point ------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """argparse variant using exit code 1 for usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="hemoflow",
        description="Incompressible flow solver with resistive outlets, "
                    "turbulence closures and hemodynamic post-processing.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="identify outlet resistances")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--out", help="output directory (default: config's)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("run", help="run a transient simulation")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--out", help="output directory (default: config's)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("qoi", help="recompute QoI CSVs from snapshots")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--snapshots", help="snapshot directory")
    p.add_argument("--out", help="output directory (default: config's)")
    p.set_defaults(func=cmd_qoi)

    p = sub.add_parser("mesh-stats", help="print mesh statistics")
    p.add_argument("mesh")
    p.set_defaults(func=cmd_mesh_stats)

    p = sub.add_parser("make-fixture", help="generate a fixture mesh")
    p.add_argument("kind", help="box-channel | pipe | stenosis | bifurcation")
    p.add_argument("out")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="fixture parameter (repeatable)")
    p.add_argument("--refine", type=int, default=0,
                   help="uniform refinement passes")
    p.set_defaults(func=cmd_make_fixture)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except NumericalError as exc:
        print(f"hemoflow: numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValidationError as exc:
        print(f"hemoflow: {exc}", file=sys.stderr)
        return 2
    except HemoflowError as exc:
        print(f"hemoflow: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
