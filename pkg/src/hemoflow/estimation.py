"""Sequential estimation of outlet resistances from target flow splits.

Each resistive outlet k carries a conductance G_k(t) evolved by the explicit
update

    G_k <- G_k + dt (gain / Q_in) (Q*_k - Q_k(t)),

where Q_k is the measured outlet flux and Q*_k the target.  Under constant
inflow the measured fluxes sum to Q_in (discrete mass conservation), so the
total conductance is a conserved quantity of the update; its initial value
encodes the prescribed systemic resistance, sum(G0_k) = 1/R_SV.  Once the
flow splits settle, the estimated resistances are the reciprocals of the
window-averaged conductances.  A closed-form re-tune maps an estimated set
R_k to a different systemic resistance by shifting every outlet pressure by
a common offset dP.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import NumericalError, ValidationError


# -- algebraic helpers --------------------------------------------------------------

def svr_of(resistances) -> float:
    """Total (systemic) resistance of parallel outlets: harmonic combination."""
    r = np.asarray(resistances, dtype=np.float64)
    if r.size == 0:
        raise ValidationError("need at least one resistance")
    if np.any(r <= 0):
        raise ValidationError("resistances must be positive")
    return 1.0 / float((1.0 / r).sum())


def murray_split(q_total: float, d2: float, d3: float):
    """Split a flow between two daughter branches by the cube of diameter."""
    if d2 <= 0 or d3 <= 0:
        raise ValidationError("diameters must be positive")
    w = d2**3 / (d2**3 + d3**3)
    q2 = q_total * w
    return q2, q_total - q2


def murray_parent_diameter(d2: float, d3: float) -> float:
    """Diameter of the equivalent parent branch, (d2^3 + d3^3)^(1/3)."""
    if d2 <= 0 or d3 <= 0:
        raise ValidationError("diameters must be positive")
    return (d2**3 + d3**3) ** (1.0 / 3.0)


def retune_svr(resistances, targets, svr_new: float):
    """Re-tune resistances to a new total resistance at fixed target flows.

    Solves sum_k 1/(R_k + dP/Q*_k) = 1/svr_new for the common pressure offset
    dP (the left side is strictly decreasing in dP, so the root is unique on
    (-min_k Q*_k R_k, inf)), and returns (R_k + dP/Q*_k, dP).
    """
    r = np.asarray(resistances, dtype=np.float64)
    q = np.asarray(targets, dtype=np.float64)
    if r.shape != q.shape:
        raise ValidationError("resistances and targets must align")
    if np.any(r <= 0) or np.any(q <= 0):
        raise ValidationError("resistances and targets must be positive")
    if svr_new <= 0:
        raise ValidationError("new total resistance must be positive")

    def f(dp):
        return float((1.0 / (r + dp / q)).sum() - 1.0 / svr_new)

    if f(0.0) == 0.0:
        return r.copy(), 0.0

    m = float((q * r).min())
    lo = -m * (1.0 - 1e-12)
    hi = max(svr_new, m, 1.0)
    while f(hi) > 0.0:
        hi *= 2.0
        if hi > 1e30:
            raise NumericalError("re-tune bracket expansion failed")
    dp = float(brentq(f, lo, hi, xtol=1e-15 * max(m, 1.0),
                      rtol=4.0 * np.finfo(np.float64).eps))
    r_new = r + dp / q
    resid = abs((1.0 / r_new).sum() - 1.0 / svr_new) * svr_new
    if resid > 1e-10:
        raise NumericalError(f"re-tune residual {resid:.3e} above tolerance")
    return r_new, dp


# -- conductance dynamics -----------------------------------------------------------

@dataclass
class EstimationConfig:
    """Targets and gain of the conductance update.

    svr: prescribed total resistance (solver units); targets: per-outlet
    flows Q*_k summing to q_in; gain: update gain (per unit time after
    division by q_in); window: averaging interval for the final estimate.
    """

    svr: float
    targets: np.ndarray
    q_in: float
    gain: float = 5.0
    window: tuple = (0.25, 0.5)
    initial_conductances: np.ndarray | None = None

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.svr <= 0 or self.gain <= 0 or self.q_in <= 0:
            raise ValidationError("svr, gain and q_in must be positive")
        if np.any(self.targets <= 0):
            raise ValidationError("target flows must be positive")
        if abs(self.targets.sum() - self.q_in) > 1e-9 * self.q_in:
            raise ValidationError("target flows must sum to the inflow")
        if self.window[0] >= self.window[1] or self.window[0] < 0:
            raise ValidationError("bad averaging window")
        if self.initial_conductances is None:
            self.initial_conductances = self.targets / (self.q_in * self.svr)
        else:
            self.initial_conductances = np.asarray(
                self.initial_conductances, dtype=np.float64
            )
            total = self.initial_conductances.sum()
            if abs(total - 1.0 / self.svr) > 1e-9 / self.svr:
                raise ValidationError(
                    "initial conductances must sum to 1/svr"
                )


@dataclass
class ConductanceState:
    """Conductances plus the sampled history of the run."""

    conductances: np.ndarray
    t: float = 0.0
    times: list = field(default_factory=list)
    flows: list = field(default_factory=list)
    conductance_history: list = field(default_factory=list)


def conductance_step(state: ConductanceState, flows, config: EstimationConfig,
                     dt: float) -> ConductanceState:
    """One explicit update of all conductances from measured fluxes."""
    flows = np.asarray(flows, dtype=np.float64)
    g = state.conductances + dt * (config.gain / config.q_in) * (
        config.targets - flows
    )
    if np.any(g <= 0):
        raise NumericalError(
            "conductance became nonpositive (estimation gain too large "
            "for this step size)"
        )
    t = state.t + dt
    state.times.append(t)
    state.flows.append(flows.copy())
    state.conductance_history.append(g.copy())
    return ConductanceState(g, t, state.times, state.flows,
                            state.conductance_history)


class EstimationController:
    """Couples the conductance update to the flow solver's time loop.

    Exposes the current resistances 1/G_k before each step and consumes the
    measured outlet fluxes afterwards.
    """

    def __init__(self, config: EstimationConfig):
        self.config = config
        g0 = config.initial_conductances.copy()
        self.state = ConductanceState(g0)
        self.state.times.append(0.0)
        self.state.flows.append(np.zeros_like(g0))
        self.state.conductance_history.append(g0.copy())

    def resistances(self) -> np.ndarray:
        return 1.0 / self.state.conductances

    def after_step(self, t, dt, q_out, q_in):
        self.state = conductance_step(self.state, q_out, self.config, dt)
        self.state.t = t

    # recorded history as arrays ------------------------------------------------

    def history(self):
        s = self.state
        return (
            np.asarray(s.times),
            np.asarray(s.flows),
            np.asarray(s.conductance_history),
        )


@dataclass
class EstimationResult:
    resistances: np.ndarray          # R*_k = 1 / mean G_k over the window
    flow_integrals: np.ndarray       # int (Q_k/Q*_k - 1) dt over the window
    times: np.ndarray
    flows: np.ndarray
    conductances: np.ndarray
    window: tuple


def _window_slice(times, window):
    w0, w1 = window
    mask = (times >= w0 - 1e-12) & (times <= w1 + 1e-12)
    if mask.sum() < 2:
        raise ValidationError(
            "averaging window not reached: extend the run or shrink the window"
        )
    return mask


def summarize_estimation(controller: EstimationController) -> EstimationResult:
    """Window averages, final resistances and the flow-split criterion values."""
    config = controller.config
    times, flows, conds = controller.history()
    mask = _window_slice(times, config.window)
    tw = times[mask]
    g_mean = np.trapezoid(conds[mask], tw, axis=0) / (tw[-1] - tw[0])
    rel = flows[mask] / config.targets[None, :] - 1.0
    integrals = np.trapezoid(rel, tw, axis=0)

    # non-decay diagnostic: the split error must not grow across the window
    half = len(tw) // 2
    first = np.abs(rel[:half]).mean(axis=0)
    second = np.abs(rel[half:]).mean(axis=0)
    growing = (second > 1.05 * first) & (second > 1e-3)
    if np.any(growing):
        raise NumericalError(
            "flow-split oscillations did not decay over the averaging window "
            "(reduce the gain or extend the run)"
        )

    return EstimationResult(
        resistances=1.0 / g_mean,
        flow_integrals=integrals,
        times=times,
        flows=flows,
        conductances=conds,
        window=config.window,
    )


def run_estimation(assembler, config: EstimationConfig, dt, n_steps, *,
                   picard_tol=5e-13, picard_max=50, linear=None,
                   observers=(), observe_every=1) -> EstimationResult:
    """Drive the flow solver with the conductance controller attached.

    The caller configures the assembler with the ramped constant inflow; this
    routine marches n_steps, updating outlet resistances every step, and
    summarizes the window averages.  Raises if the run is too short for the
    window or the splits fail to settle.
    """
    from .solver import run_transient

    if dt * n_steps + 1e-12 < config.window[1]:
        raise ValidationError(
            "run too short: n_steps * dt must cover the averaging window"
        )
    controller = EstimationController(config)
    run_transient(
        assembler, dt, n_steps,
        picard_tol=picard_tol, picard_max=picard_max, linear=linear,
        controller=controller, observers=observers, observe_every=observe_every,
    )
    return summarize_estimation(controller)


def surrogate_estimation(config: EstimationConfig, dt, n_steps) -> EstimationResult:
    """Algebraic stand-in for the flow solver: Q_k = G_k P with the common
    pressure P enforcing sum(Q_k) = q_in exactly.

    The fixed point has Q_k = Q*_k and recovers R_k = q_in svr / Q*_k; useful
    as an oracle for the coupled loop and for step-size guidance.
    """
    controller = EstimationController(config)
    for _ in range(n_steps):
        g = controller.state.conductances
        p = config.q_in / g.sum()
        flows = g * p
        controller.after_step(controller.state.t + dt, dt, flows, config.q_in)
    if controller.state.t + 1e-12 < config.window[1]:
        raise ValidationError("surrogate run too short for the window")
    return summarize_estimation(controller)
