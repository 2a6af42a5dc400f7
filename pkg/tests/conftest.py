"""Shared fixtures: small meshes and assembler builders reused across files."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hemoflow.fem import FESpace
from hemoflow.fixtures import bifurcation, box_channel, pipe
from hemoflow.solver import (Assembler, DirichletPatch, PhysicalParams,
                             PulseProfile, parabolic_inlet_values,
                             pulsed_inflow)

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def box_small():
    """2x2x4-cell unit-ish channel: 96 tets, one outlet."""
    return box_channel(nx=2, ny=2, nz=4, size=(1.0, 1.0, 2.0))


@pytest.fixture(scope="session")
def box_tiny():
    """Single-slab channel used for dense-matrix oracles."""
    return box_channel(nx=1, ny=1, nz=2, size=(1.0, 1.0, 2.0))


@pytest.fixture(scope="session")
def pipe_small():
    """Coarse unit-radius pipe (1728 tets)."""
    return pipe(radius=0.5, length=2.0, n_rings=3, n_layers=8)


@pytest.fixture(scope="session")
def bif2_small():
    """Symmetric two-outlet manifold at unit scale."""
    return bifurcation(n_outlets=2, cell=1.0, n_sub=2, trunk_len=2,
                       arm_len=1, ext_len=1)


@pytest.fixture(scope="session")
def unit_params():
    """Unit-density fluid so solver units coincide with SI."""
    return PhysicalParams(density=1.0, dynamic_viscosity=0.05,
                          length_scale=1.0, velocity_scale=1.0)


@pytest.fixture(scope="session")
def build_assembler():
    """Factory for an assembler with a ramped parabolic inflow."""

    def _build(mesh, *, pair="p2p1", params=None, model=None,
               resistances=None, beta=1.0, ramp_time=0.02,
               cut_time=None, peak=1.0, **kwargs):
        if params is None:
            params = PhysicalParams(density=1.0, dynamic_viscosity=0.05,
                                    length_scale=1.0, velocity_scale=1.0)
        order = 2 if pair == "p2p1" else 1
        V = FESpace(mesh, order, components=3)
        pulse = PulseProfile(mode="ramp", ramp_time=ramp_time,
                             cut_time=cut_time)
        inflow = pulsed_inflow(V, pulse, peak=peak)
        if resistances is None:
            resistances = np.ones(mesh.n_outlets)
        return Assembler(mesh, pair=pair, params=params, model=model,
                         resistances=resistances, beta=beta,
                         dirichlet=[inflow], **kwargs)

    return _build
