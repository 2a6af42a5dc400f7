"""Run configuration: a sectioned key = value text format.

Keys carry their unit in the name (dt_s, rsv_mpa_s_per_m3) because unit slips
are the dominant failure mode in this domain.  Unknown sections or keys are
hard errors with line numbers; '#' starts a comment; values may be scalars,
comma-separated lists, or 3-vectors.  Named blocks describe measurement
geometry: ``[section NAME]`` for planar cuts, ``[wss_patch NAME]`` for wall
patches.  parse -> serialize -> parse is the identity (the serializer emits
the canonical form with all defaults materialized).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError

_PAIR_ALIASES = {
    "p2p1": "p2p1", "p2/p1": "p2p1", "p1p1": "p1p1", "p1/p1": "p1p1",
}
_MODEL_KINDS = ("none", "smagorinsky", "vreman", "sigma", "rbvms")
_MODEL_DEFAULT_C = {"smagorinsky": 0.01, "vreman": 0.07, "sigma": 1.35}


# -- typed sub-configs ----------------------------------------------------------------

@dataclass
class ModelSpec:
    kind: str = "none"
    c: float | None = None               # eddy-viscosity constant
    stabilization: str | None = None     # rbvms: equal_order | inf_sup
    c_i: float = 1.0
    delta0: float = 1.0
    delta1: float = 0.25


@dataclass
class InflowSpec:
    profile: str = "parabolic"           # parabolic | plug | file
    peak_m_per_s: float = 1.0
    file: str | None = None
    pulse: str = "periodic"              # periodic | ramp
    ramp_time_s: float = 0.01
    period_s: float = 1.0
    waveform_file: str | None = None
    cut_time_s: float | None = None


@dataclass
class EstimationSpec:
    targets_m3_per_s: tuple
    rsv_mpa_s_per_m3: float
    gain: float = 5.0
    window_start_s: float = 0.25
    window_end_s: float = 0.5
    ramp_time_s: float = 0.05
    retune_rsv_mpa_s_per_m3: float | None = None


@dataclass
class SolverSpec:
    picard_tol: float = 1e-10
    picard_max: int = 25
    linear: str = "direct"               # direct | iterative | block_amg
    linear_tol: float = 1e-10
    linear_maxiter: int = 2000


@dataclass
class SectionSpec:
    origin_m: tuple
    normal: tuple
    res_m: float = 1e-3


@dataclass
class PatchSpec:
    forward: tuple
    center_m: tuple | None = None        # optional ball filter
    radius_m: float | None = None


@dataclass
class OutputSpec:
    directory: str = "results"
    snapshot_every: int = 0              # 0 disables snapshots
    vtk: bool = False


@dataclass
class PhysicalSpec:
    density_kg_per_m3: float = 1060.0
    dynamic_viscosity_pa_s: float = 3.5e-3
    length_scale_m: float = 1.0
    velocity_scale_m_per_s: float = 1.0


@dataclass
class RunConfig:
    mesh_path: str
    pair: str = "p2p1"
    dt_s: float = 1.25e-4
    end_time_s: float = 0.01
    output_every: int = 1
    beta: float = 1.0
    seed: int = 0
    physical: PhysicalSpec = field(default_factory=PhysicalSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    inflow: InflowSpec = field(default_factory=InflowSpec)
    resistances_mpa_s_per_m3: tuple | None = None
    solver: SolverSpec = field(default_factory=SolverSpec)
    estimation: EstimationSpec | None = None
    sections: dict = field(default_factory=dict)
    wss_patches: dict = field(default_factory=dict)
    output: OutputSpec = field(default_factory=OutputSpec)


# -- low-level reader -----------------------------------------------------------------

def _split_sections(text: str, path: str):
    """-> ordered {(kind, name): {key: (raw_value, line_no)}} plus header lines."""
    sections = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{path}:{lineno}: unterminated section header")
            inner = line[1:-1].strip()
            parts = inner.split(None, 1)
            kind = parts[0].lower()
            name = parts[1].strip() if len(parts) > 1 else ""
            key = (kind, name)
            if key in sections:
                raise ConfigError(f"{path}:{lineno}: duplicate section [{inner}]")
            sections[key] = {}
            current = key
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if current is None:
            raise ConfigError(f"{path}:{lineno}: key outside of any [section]")
        k, v = line.split("=", 1)
        k = k.strip().lower()
        v = v.strip()
        if not k:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if k in sections[current]:
            raise ConfigError(f"{path}:{lineno}: duplicate key {k!r}")
        sections[current][k] = (v, lineno)
    return sections


_MISSING = object()


class _Block:
    """One section's keys with consume-and-complain-about-leftovers access."""

    def __init__(self, path, header, data):
        self.path = path
        self.header = header
        self.data = dict(data)

    def _fail(self, lineno, msg):
        raise ConfigError(f"{self.path}:{lineno}: {msg}")

    def take(self, key, conv, default=_MISSING):
        if key in self.data:
            raw, lineno = self.data.pop(key)
            try:
                return conv(raw)
            except ConfigError:
                raise
            except (ValueError, TypeError) as exc:
                self._fail(lineno, f"bad value for {key!r}: {exc}")
        if default is _MISSING:
            raise ConfigError(
                f"{self.path}: missing required key {key!r} in [{self.header}]"
            )
        return default

    def finish(self):
        if self.data:
            key, (_, lineno) = next(iter(self.data.items()))
            self._fail(lineno, f"unknown key {key!r} in [{self.header}]")


def _as_float(raw):
    return float(raw)


def _as_pos(raw):
    v = float(raw)
    if v <= 0:
        raise ValueError("must be positive")
    return v


def _as_nonneg_int(raw):
    v = int(raw)
    if v < 0:
        raise ValueError("must be >= 0")
    return v


def _as_pos_int(raw):
    v = int(raw)
    if v <= 0:
        raise ValueError("must be positive")
    return v


def _as_bool(raw):
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError("expected a boolean")


def _as_str(raw):
    if not raw:
        raise ValueError("empty value")
    return raw


def _as_floats(raw):
    parts = [p for p in raw.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _as_vec3(raw):
    v = _as_floats(raw)
    if len(v) != 3:
        raise ValueError("expected exactly 3 numbers")
    return v


def _choice(options):
    def conv(raw):
        low = raw.strip().lower()
        if low not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return low
    return conv


def _pair(raw):
    low = raw.strip().lower()
    if low not in _PAIR_ALIASES:
        raise ValueError("expected p2p1 or p1p1")
    return _PAIR_ALIASES[low]


# -- parsing --------------------------------------------------------------------------

def parse_config_text(text: str, path: str = "<config>") -> RunConfig:
    sections = _split_sections(text, path)

    def block(kind, name=""):
        data = sections.pop((kind, name), {})
        header = f"{kind} {name}".strip()
        return _Block(path, header, data)

    b = block("mesh")
    mesh_path = b.take("path", _as_str)
    b.finish()

    b = block("discretization")
    pair = b.take("pair", _pair, "p2p1")
    dt = b.take("dt_s", _as_pos, 1.25e-4)
    end_time = b.take("end_time_s", _as_pos, 0.01)
    output_every = b.take("output_every", _as_pos_int, 1)
    b.finish()

    b = block("physical")
    physical = PhysicalSpec(
        density_kg_per_m3=b.take("density_kg_per_m3", _as_pos, 1060.0),
        dynamic_viscosity_pa_s=b.take("dynamic_viscosity_pa_s", _as_pos, 3.5e-3),
        length_scale_m=b.take("length_scale_m", _as_pos, 1.0),
        velocity_scale_m_per_s=b.take("velocity_scale_m_per_s", _as_pos, 1.0),
    )
    b.finish()

    b = block("model")
    kind = b.take("kind", _choice(_MODEL_KINDS), "none")
    model = ModelSpec(
        kind=kind,
        c=b.take("c", _as_pos, _MODEL_DEFAULT_C.get(kind)),
        stabilization=b.take(
            "stabilization", _choice(("equal_order", "inf_sup")),
            None if kind != "rbvms" else (
                "equal_order" if pair == "p1p1" else "inf_sup"
            ),
        ),
        c_i=b.take("c_i", _as_pos, 1.0),
        delta0=b.take("delta0", _as_pos, 1.0),
        delta1=b.take("delta1", _as_float, 0.25),
    )
    b.finish()

    b = block("inflow")
    inflow = InflowSpec(
        profile=b.take("profile", _choice(("parabolic", "plug", "file")), "parabolic"),
        peak_m_per_s=b.take("peak_m_per_s", _as_pos, 1.0),
        file=b.take("file", _as_str, None),
        pulse=b.take("pulse", _choice(("periodic", "ramp")), "periodic"),
        ramp_time_s=b.take("ramp_time_s", _as_pos, 0.01),
        period_s=b.take("period_s", _as_pos, 1.0),
        waveform_file=b.take("waveform_file", _as_str, None),
        cut_time_s=b.take("cut_time_s", _as_pos, None),
    )
    b.finish()

    b = block("outlets")
    resistances = b.take("resistances_mpa_s_per_m3", _as_floats, None)
    beta = b.take("beta", _as_float, 1.0)
    b.finish()

    b = block("solver")
    solver = SolverSpec(
        picard_tol=b.take("picard_tol", _as_pos, 1e-10),
        picard_max=b.take("picard_max", _as_pos_int, 25),
        linear=b.take("linear", _choice(("direct", "iterative", "block_amg")), "direct"),
        linear_tol=b.take("linear_tol", _as_pos, 1e-10),
        linear_maxiter=b.take("linear_maxiter", _as_pos_int, 2000),
    )
    seed = b.take("seed", _as_nonneg_int, 0)
    b.finish()

    estimation = None
    if ("estimation", "") in sections:
        b = block("estimation")
        estimation = EstimationSpec(
            targets_m3_per_s=b.take("targets_m3_per_s", _as_floats),
            rsv_mpa_s_per_m3=b.take("rsv_mpa_s_per_m3", _as_pos),
            gain=b.take("gain", _as_pos, 5.0),
            window_start_s=b.take("window_start_s", _as_pos, 0.25),
            window_end_s=b.take("window_end_s", _as_pos, 0.5),
            ramp_time_s=b.take("ramp_time_s", _as_pos, 0.05),
            retune_rsv_mpa_s_per_m3=b.take("retune_rsv_mpa_s_per_m3", _as_pos, None),
        )
        if estimation.window_start_s >= estimation.window_end_s:
            raise ConfigError(f"{path}: estimation window must have start < end")

    b = block("output")
    output = OutputSpec(
        directory=b.take("directory", _as_str, "results"),
        snapshot_every=b.take("snapshot_every", _as_nonneg_int, 0),
        vtk=b.take("vtk", _as_bool, False),
    )
    b.finish()

    section_specs = {}
    patch_specs = {}
    for (kind, name) in list(sections):
        if kind == "section":
            b = block(kind, name)
            if not name:
                raise ConfigError(f"{path}: [section] blocks need a name")
            section_specs[name] = SectionSpec(
                origin_m=b.take("origin_m", _as_vec3),
                normal=b.take("normal", _as_vec3),
                res_m=b.take("res_m", _as_pos, 1e-3),
            )
            b.finish()
        elif kind == "wss_patch":
            b = block(kind, name)
            if not name:
                raise ConfigError(f"{path}: [wss_patch] blocks need a name")
            patch_specs[name] = PatchSpec(
                forward=b.take("forward", _as_vec3),
                center_m=b.take("center_m", _as_vec3, None),
                radius_m=b.take("radius_m", _as_pos, None),
            )
            b.finish()

    if sections:
        (kind, name), data = next(iter(sections.items()))
        lineno = min(ln for (_, ln) in data.values()) if data else 0
        label = f"{kind} {name}".strip()
        raise ConfigError(f"{path}:{lineno}: unknown section [{label}]")

    cfg = RunConfig(
        mesh_path=mesh_path, pair=pair, dt_s=dt, end_time_s=end_time,
        output_every=output_every, beta=beta, seed=seed, physical=physical,
        model=model, inflow=inflow,
        resistances_mpa_s_per_m3=resistances, solver=solver,
        estimation=estimation, sections=section_specs,
        wss_patches=patch_specs, output=output,
    )
    _validate_cross_rules(cfg, path)
    return cfg


def _validate_cross_rules(cfg: RunConfig, path: str):
    m = cfg.model
    if cfg.pair == "p1p1":
        if m.kind != "rbvms":
            raise ConfigError(
                f"{path}: the p1p1 pair requires the rbvms model "
                f"(got {m.kind!r})"
            )
        if m.stabilization != "equal_order":
            raise ConfigError(
                f"{path}: p1p1 with rbvms requires equal_order stabilization"
            )
    elif m.kind == "rbvms" and m.stabilization != "inf_sup":
        raise ConfigError(
            f"{path}: p2p1 with rbvms requires inf_sup stabilization"
        )
    if m.kind == "rbvms" and m.delta1 < 0:
        raise ConfigError(f"{path}: delta1 must be >= 0")
    if cfg.beta < 0:
        raise ConfigError(f"{path}: beta must be >= 0")
    if cfg.inflow.profile == "file" and not cfg.inflow.file:
        raise ConfigError(f"{path}: inflow profile 'file' needs file = <path>")
    if cfg.dt_s > cfg.end_time_s:
        raise ConfigError(f"{path}: dt_s exceeds end_time_s")


def parse_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, path=str(path))


# -- serialization --------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parsing it reproduces cfg exactly."""
    out = []

    def sec(header, pairs):
        out.append(f"[{header}]")
        for k, v in pairs:
            if v is not None:
                out.append(f"{k} = {_fmt(v)}")
        out.append("")

    sec("mesh", [("path", cfg.mesh_path)])
    sec("discretization", [
        ("pair", cfg.pair), ("dt_s", cfg.dt_s),
        ("end_time_s", cfg.end_time_s), ("output_every", cfg.output_every),
    ])
    p = cfg.physical
    sec("physical", [
        ("density_kg_per_m3", p.density_kg_per_m3),
        ("dynamic_viscosity_pa_s", p.dynamic_viscosity_pa_s),
        ("length_scale_m", p.length_scale_m),
        ("velocity_scale_m_per_s", p.velocity_scale_m_per_s),
    ])
    m = cfg.model
    sec("model", [
        ("kind", m.kind), ("c", m.c), ("stabilization", m.stabilization),
        ("c_i", m.c_i), ("delta0", m.delta0), ("delta1", m.delta1),
    ])
    i = cfg.inflow
    sec("inflow", [
        ("profile", i.profile), ("peak_m_per_s", i.peak_m_per_s),
        ("file", i.file), ("pulse", i.pulse),
        ("ramp_time_s", i.ramp_time_s), ("period_s", i.period_s),
        ("waveform_file", i.waveform_file), ("cut_time_s", i.cut_time_s),
    ])
    sec("outlets", [
        ("resistances_mpa_s_per_m3", cfg.resistances_mpa_s_per_m3),
        ("beta", cfg.beta),
    ])
    s = cfg.solver
    sec("solver", [
        ("picard_tol", s.picard_tol), ("picard_max", s.picard_max),
        ("linear", s.linear), ("linear_tol", s.linear_tol),
        ("linear_maxiter", s.linear_maxiter), ("seed", cfg.seed),
    ])
    if cfg.estimation is not None:
        e = cfg.estimation
        sec("estimation", [
            ("targets_m3_per_s", e.targets_m3_per_s),
            ("rsv_mpa_s_per_m3", e.rsv_mpa_s_per_m3),
            ("gain", e.gain),
            ("window_start_s", e.window_start_s),
            ("window_end_s", e.window_end_s),
            ("ramp_time_s", e.ramp_time_s),
            ("retune_rsv_mpa_s_per_m3", e.retune_rsv_mpa_s_per_m3),
        ])
    o = cfg.output
    sec("output", [
        ("directory", o.directory), ("snapshot_every", o.snapshot_every),
        ("vtk", o.vtk),
    ])
    for name in sorted(cfg.sections):
        sp = cfg.sections[name]
        sec(f"section {name}", [
            ("origin_m", sp.origin_m), ("normal", sp.normal),
            ("res_m", sp.res_m),
        ])
    for name in sorted(cfg.wss_patches):
        ps = cfg.wss_patches[name]
        sec(f"wss_patch {name}", [
            ("forward", ps.forward), ("center_m", ps.center_m),
            ("radius_m", ps.radius_m),
        ])
    return "\n".join(out)
