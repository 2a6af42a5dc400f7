"""Finite-element blood-flow toolkit.

Incompressible Navier-Stokes on tetrahedral meshes with eddy-viscosity and
residual-based multiscale closures, resistive outlet boundary conditions
with a sequential resistance-estimation loop, and hemodynamic post-processing
(pressure drops, flow-displacement indices, wall shear stress).

Attributes resolve lazily so that importing the package stays cheap and the
command line interface can configure threading environment variables before
the numeric stack loads.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = {
    "cli", "config", "errors", "estimation", "fem", "fixtures", "meshing",
    "qoi", "solver", "turbulence",
}

_EXPORTS = {
    # errors
    "HemoflowError": "errors",
    "ValidationError": "errors",
    "ConfigError": "errors",
    "MeshFormatError": "errors",
    "MeshTopologyError": "errors",
    "MeshLabelError": "errors",
    "DegenerateCellError": "errors",
    "NumericalError": "errors",
    # meshing
    "Mesh": "meshing",
    "MeshStats": "meshing",
    "CellLocator": "meshing",
    "load_mesh": "meshing",
    "save_mesh": "meshing",
    "mesh_statistics": "meshing",
    "uniform_refine": "meshing",
    "element_geometry": "meshing",
    # fixtures
    "make_fixture": "fixtures",
    "box_channel": "fixtures",
    "pipe": "fixtures",
    "stenosis": "fixtures",
    "bifurcation": "fixtures",
    "FIXTURE_KINDS": "fixtures",
    # fem
    "FESpace": "fem",
    "FEFunction": "fem",
    "tet_quadrature": "fem",
    "tri_quadrature": "fem",
    "load_inlet_profile": "fem",
    "interpolate_inlet_profile": "fem",
    # turbulence
    "Smagorinsky": "turbulence",
    "Vreman": "turbulence",
    "SigmaModel": "turbulence",
    "RBVMS": "turbulence",
    "EqualOrder": "turbulence",
    "InfSup": "turbulence",
    "LES_MODELS": "turbulence",
    "eddy_viscosity": "turbulence",
    "rbvms_tau": "turbulence",
    "momentum_residual": "turbulence",
    # solver
    "PhysicalParams": "solver",
    "PulseProfile": "solver",
    "DirichletPatch": "solver",
    "Assembler": "solver",
    "SparseSystem": "solver",
    "FlowState": "solver",
    "TransientResult": "solver",
    "solve_linear": "solver",
    "picard_solve": "solver",
    "steady_solve": "solver",
    "run_transient": "solver",
    "save_checkpoint": "solver",
    "load_checkpoint": "solver",
    "pulsed_inflow": "solver",
    "parabolic_inlet_values": "solver",
    "plug_inlet_values": "solver",
    "nominal_influx": "solver",
    "reynolds_number": "solver",
    "two_peak_waveform": "solver",
    "smootherstep": "solver",
    # estimation
    "EstimationConfig": "estimation",
    "EstimationController": "estimation",
    "EstimationResult": "estimation",
    "ConductanceState": "estimation",
    "conductance_step": "estimation",
    "run_estimation": "estimation",
    "summarize_estimation": "estimation",
    "surrogate_estimation": "estimation",
    "retune_svr": "estimation",
    "svr_of": "estimation",
    "murray_split": "estimation",
    "murray_parent_diameter": "estimation",
    # qoi
    "CrossSection": "qoi",
    "build_cross_section": "qoi",
    "circular_section": "qoi",
    "mean_pressure": "qoi",
    "pressure_difference": "qoi",
    "sfd": "qoi",
    "nfd": "qoi",
    "max_velocity": "qoi",
    "wedge_between": "qoi",
    "wall_patch": "qoi",
    "wall_shear_stress": "qoi",
    "oscillatory_shear_index": "qoi",
    "kinetic_energy": "qoi",
    "mean_velocity_magnitude": "qoi",
    "QoITimeSeries": "qoi",
    "time_average": "qoi",
    "sfd_time_average": "qoi",
    "nfd_time_average": "qoi",
    "MMHG_TO_PA": "qoi",
    "SEVERE_NARROWING_MMHG": "qoi",
    # config
    "RunConfig": "config",
    "parse_config": "config",
    "parse_config_text": "config",
    "serialize_config": "config",
}


def __getattr__(name):
    if name in _EXPORTS:
        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        value = getattr(module, name)
        globals()[name] = value
        return value
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | _SUBMODULES | set(_EXPORTS))
