"""Run configuration: strict TOML parsing, round-trip serialization, builders.

A run is described by four sections -- [geometry], [integrand], [deformation],
[run] -- each mapped onto a frozen dataclass.  Parsing is strict: every key
must be known *and* meaningful for the selected kind/preset, so a typo or a
leftover key from another geometry is reported by its full dotted name
instead of being silently ignored.  ``serialize_config`` emits exactly the
meaningful keys, which makes parse -> serialize -> parse the identity.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .integrands import ConvexPair, make_anisotropic, make_p_torsion, make_torsion
from .mesh import (
    DeformationField,
    Mesh2D,
    analytic_field,
    dilation_field,
    generate_annulus,
    generate_disk,
    generate_rectangle,
    normal_field,
    polynomial_field,
    radial_bump_field,
    read_mesh_text,
    tangential_spin_field,
    translation_field,
)

GEOMETRY_KINDS = ("disk", "annulus", "rectangle", "mesh_file")
INTEGRAND_KINDS = ("torsion", "p_torsion", "anisotropic")
DEFORMATION_PRESETS = (
    "dilation",
    "translation",
    "normal",
    "radial_bump",
    "tangential_spin",
    "polynomial",
    "zero",
)
ROUTE_NAMES = ("volume", "boundary", "special")

DEFAULT_EPS_LIST = (0.08, 0.04, 0.02, 0.01)


@dataclass(frozen=True)
class GeometryConfig:
    kind: str
    h: Optional[float] = None
    dirichlet_fraction: float = 1.0
    radius: Optional[float] = None
    center: Tuple[float, float] = (0.0, 0.0)
    r_inner: Optional[float] = None
    r_outer: Optional[float] = None
    width: Optional[float] = None
    height: Optional[float] = None
    path: Optional[str] = None


@dataclass(frozen=True)
class IntegrandConfig:
    kind: str
    lam: float = 1.0
    p: Optional[float] = None
    delta: float = 0.0
    matrix: Optional[Tuple[Tuple[float, float], Tuple[float, float]]] = None
    k: float = 0.0


@dataclass(frozen=True)
class DeformationConfig:
    preset: str
    direction: Tuple[float, float] = (1.0, 0.0)
    radius: float = 1.0
    r0: float = 0.7
    amplitude: float = 1.0
    center: Tuple[float, float] = (0.0, 0.0)
    terms_x: Tuple[Tuple[int, int, float], ...] = ()
    terms_y: Tuple[Tuple[int, int, float], ...] = ()


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryConfig
    integrand: IntegrandConfig
    deformation: DeformationConfig
    routes: Tuple[str, ...] = ROUTE_NAMES
    eps_list: Tuple[float, ...] = DEFAULT_EPS_LIST
    levels: int = 3
    output_dir: str = "out"
    rho_rel: float = 1e-6
    with_fd: bool = False


# -- strict section readers ------------------------------------------------


class _Section:
    """A mutable view of one TOML table that tracks which keys were consumed."""

    def __init__(self, name, table):
        if not isinstance(table, dict):
            raise ConfigError(f"section [{name}] must be a table")
        self.name = name
        self.table = dict(table)

    def take(self, key, kind, default=None, required=False, choices=None):
        if key not in self.table:
            if required:
                raise ConfigError(f"missing required key {self.name}.{key}")
            return default
        raw = self.table.pop(key)
        val = _coerce(f"{self.name}.{key}", raw, kind)
        if choices is not None and val not in choices:
            opts = ", ".join(str(c) for c in choices)
            raise ConfigError(f"{self.name}.{key} must be one of: {opts} (got {val!r})")
        return val

    def finish(self):
        if self.table:
            key = sorted(self.table)[0]
            raise ConfigError(f"unknown key {self.name}.{key}")


def _coerce(dotted, raw, kind):
    try:
        if kind == "str":
            if not isinstance(raw, str):
                raise ValueError
            return raw
        if kind == "bool":
            if not isinstance(raw, bool):
                raise ValueError
            return raw
        if kind == "int":
            if isinstance(raw, bool) or not isinstance(raw, int):
                raise ValueError
            return int(raw)
        if kind == "float":
            if isinstance(raw, bool) or not isinstance(raw, (int, float)):
                raise ValueError
            return float(raw)
        if kind == "vec2":
            vals = [_coerce(dotted, v, "float") for v in raw]
            if len(vals) != 2:
                raise ValueError
            return (vals[0], vals[1])
        if kind == "float_list":
            return tuple(_coerce(dotted, v, "float") for v in raw)
        if kind == "str_list":
            return tuple(_coerce(dotted, v, "str") for v in raw)
        if kind == "terms":
            out = []
            for t in raw:
                i, j, c = t
                out.append((_coerce(dotted, i, "int"), _coerce(dotted, j, "int"),
                            _coerce(dotted, c, "float")))
            return tuple(out)
        if kind == "matrix2":
            rows = [_coerce(dotted, r, "vec2") for r in raw]
            if len(rows) != 2:
                raise ValueError
            return (rows[0], rows[1])
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"{dotted} has wrong type (expected {kind})")


def _parse_geometry(table):
    sec = _Section("geometry", table)
    kind = sec.take("kind", "str", required=True, choices=GEOMETRY_KINDS)
    kwargs = {"kind": kind}
    if kind == "mesh_file":
        kwargs["path"] = sec.take("path", "str", required=True)
    else:
        h = sec.take("h", "float", required=True)
        if h <= 0:
            raise ConfigError("geometry.h must be positive")
        kwargs["h"] = h
        df = sec.take("dirichlet_fraction", "float", default=1.0)
        if not 0.0 < df <= 1.0:
            raise ConfigError("geometry.dirichlet_fraction must lie in (0, 1]")
        kwargs["dirichlet_fraction"] = df
    if kind == "disk":
        r = sec.take("radius", "float", default=1.0)
        if r <= 0:
            raise ConfigError("geometry.radius must be positive")
        kwargs["radius"] = r
        kwargs["center"] = sec.take("center", "vec2", default=(0.0, 0.0))
    elif kind == "annulus":
        ri = sec.take("r_inner", "float", required=True)
        ro = sec.take("r_outer", "float", required=True)
        if not 0.0 < ri < ro:
            raise ConfigError("geometry requires 0 < r_inner < r_outer")
        kwargs["r_inner"], kwargs["r_outer"] = ri, ro
    elif kind == "rectangle":
        w = sec.take("width", "float", default=1.0)
        hh = sec.take("height", "float", default=1.0)
        if w <= 0 or hh <= 0:
            raise ConfigError("geometry.width and geometry.height must be positive")
        kwargs["width"], kwargs["height"] = w, hh
    sec.finish()
    return GeometryConfig(**kwargs)


def _parse_integrand(table):
    sec = _Section("integrand", table)
    kind = sec.take("kind", "str", required=True, choices=INTEGRAND_KINDS)
    kwargs = {"kind": kind, "lam": sec.take("lam", "float", default=1.0)}
    if kind == "p_torsion":
        p = sec.take("p", "float", required=True)
        if p <= 1.0:
            raise ConfigError("integrand.p must exceed 1")
        delta = sec.take("delta", "float", default=0.0)
        if delta < 0.0:
            raise ConfigError("integrand.delta must be nonnegative")
        kwargs["p"], kwargs["delta"] = p, delta
    elif kind == "anisotropic":
        kwargs["matrix"] = sec.take("matrix", "matrix2", required=True)
        k = sec.take("k", "float", default=0.0)
        if k < 0.0:
            raise ConfigError("integrand.k must be nonnegative")
        kwargs["k"] = k
    sec.finish()
    return IntegrandConfig(**kwargs)


def _parse_deformation(table):
    sec = _Section("deformation", table)
    preset = sec.take("preset", "str", required=True, choices=DEFORMATION_PRESETS)
    kwargs = {"preset": preset}
    if preset == "translation":
        kwargs["direction"] = sec.take("direction", "vec2", default=(1.0, 0.0))
    elif preset == "normal":
        kwargs["radius"] = sec.take("radius", "float", default=1.0)
        kwargs["center"] = sec.take("center", "vec2", default=(0.0, 0.0))
    elif preset == "radial_bump":
        r0 = sec.take("r0", "float", default=0.7)
        if r0 <= 0:
            raise ConfigError("deformation.r0 must be positive")
        kwargs["r0"] = r0
        kwargs["amplitude"] = sec.take("amplitude", "float", default=1.0)
        kwargs["center"] = sec.take("center", "vec2", default=(0.0, 0.0))
    elif preset == "polynomial":
        kwargs["terms_x"] = sec.take("terms_x", "terms", default=())
        kwargs["terms_y"] = sec.take("terms_y", "terms", default=())
    sec.finish()
    return DeformationConfig(**kwargs)


def _parse_run(table):
    sec = _Section("run", table)
    routes = sec.take("routes", "str_list", default=ROUTE_NAMES)
    if not routes:
        raise ConfigError("run.routes must not be empty")
    for r in routes:
        if r not in ROUTE_NAMES:
            opts = ", ".join(ROUTE_NAMES)
            raise ConfigError(f"run.routes entries must be one of: {opts} (got {r!r})")
    eps = sec.take("eps_list", "float_list", default=DEFAULT_EPS_LIST)
    if not eps or any(e <= 0 for e in eps):
        raise ConfigError("run.eps_list must be nonempty with positive entries")
    levels = sec.take("levels", "int", default=3)
    if levels < 1:
        raise ConfigError("run.levels must be at least 1")
    rho_rel = sec.take("rho_rel", "float", default=1e-6)
    if rho_rel <= 0:
        raise ConfigError("run.rho_rel must be positive")
    out = {
        "routes": routes,
        "eps_list": eps,
        "levels": levels,
        "output_dir": sec.take("output_dir", "str", default="out"),
        "rho_rel": rho_rel,
        "with_fd": sec.take("with_fd", "bool", default=False),
    }
    sec.finish()
    return out


def parse_config(text: str) -> RunConfig:
    """Parse TOML text into a validated RunConfig; reject any unknown key."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    known = {"geometry", "integrand", "deformation", "run"}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown key {key}")
    for req in ("geometry", "integrand", "deformation"):
        if req not in data:
            raise ConfigError(f"missing required key {req}")
    geo = _parse_geometry(data["geometry"])
    integ = _parse_integrand(data["integrand"])
    defo = _parse_deformation(data["deformation"])
    run = _parse_run(data.get("run", {}))
    return RunConfig(geometry=geo, integrand=integ, deformation=defo, **run)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


# -- serialization ---------------------------------------------------------


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return repr(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, tuple):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize value of type {type(v).__name__}")


def _emit_section(name, items):
    lines = [f"[{name}]"]
    for key, val in items:
        lines.append(f"{key} = {_toml_value(val)}")
    return lines


def serialize_config(cfg: RunConfig) -> str:
    """Emit TOML containing exactly the keys parse_config accepts for cfg."""
    g = cfg.geometry
    geo = [("kind", g.kind)]
    if g.kind == "mesh_file":
        geo.append(("path", g.path))
    else:
        geo += [("h", g.h), ("dirichlet_fraction", g.dirichlet_fraction)]
    if g.kind == "disk":
        geo += [("radius", g.radius), ("center", g.center)]
    elif g.kind == "annulus":
        geo += [("r_inner", g.r_inner), ("r_outer", g.r_outer)]
    elif g.kind == "rectangle":
        geo += [("width", g.width), ("height", g.height)]

    i = cfg.integrand
    integ = [("kind", i.kind), ("lam", i.lam)]
    if i.kind == "p_torsion":
        integ += [("p", i.p), ("delta", i.delta)]
    elif i.kind == "anisotropic":
        integ += [("matrix", i.matrix), ("k", i.k)]

    d = cfg.deformation
    defo = [("preset", d.preset)]
    if d.preset == "translation":
        defo.append(("direction", d.direction))
    elif d.preset == "normal":
        defo += [("radius", d.radius), ("center", d.center)]
    elif d.preset == "radial_bump":
        defo += [("r0", d.r0), ("amplitude", d.amplitude), ("center", d.center)]
    elif d.preset == "polynomial":
        defo += [("terms_x", d.terms_x), ("terms_y", d.terms_y)]

    run = [
        ("routes", cfg.routes),
        ("eps_list", cfg.eps_list),
        ("levels", cfg.levels),
        ("output_dir", cfg.output_dir),
        ("rho_rel", cfg.rho_rel),
        ("with_fd", cfg.with_fd),
    ]

    lines = []
    for name, items in (("geometry", geo), ("integrand", integ),
                        ("deformation", defo), ("run", run)):
        lines += _emit_section(name, items)
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: RunConfig, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_config(cfg))


# -- builders --------------------------------------------------------------


def build_mesh(g: GeometryConfig) -> Mesh2D:
    if g.kind == "disk":
        return generate_disk(g.radius, g.h, dirichlet_fraction=g.dirichlet_fraction,
                             center=g.center)
    if g.kind == "annulus":
        return generate_annulus(g.r_inner, g.r_outer, g.h,
                                dirichlet_fraction=g.dirichlet_fraction)
    if g.kind == "rectangle":
        return generate_rectangle(g.width, g.height, g.h,
                                  dirichlet_fraction=g.dirichlet_fraction)
    if g.kind == "mesh_file":
        return read_mesh_text(g.path)
    raise ConfigError(f"unknown geometry kind {g.kind!r}")


def build_pair(i: IntegrandConfig) -> ConvexPair:
    if i.kind == "torsion":
        return make_torsion(i.lam)
    if i.kind == "p_torsion":
        return make_p_torsion(i.p, i.lam, delta=i.delta)
    if i.kind == "anisotropic":
        return make_anisotropic(np.asarray(i.matrix, dtype=float), k=i.k, lam=i.lam)
    raise ConfigError(f"unknown integrand kind {i.kind!r}")


def _zero_field() -> DeformationField:
    def val(x):
        return np.zeros_like(np.atleast_2d(np.asarray(x, dtype=float)))

    def jac(x):
        return np.zeros((len(np.atleast_2d(x)), 2, 2))

    return analytic_field(val, jac, name="zero")


def build_field(d: DeformationConfig) -> DeformationField:
    if d.preset == "dilation":
        return dilation_field()
    if d.preset == "translation":
        return translation_field(d.direction)
    if d.preset == "normal":
        return normal_field(radius=d.radius, center=d.center)
    if d.preset == "radial_bump":
        return radial_bump_field(r0=d.r0, center=d.center, amplitude=d.amplitude)
    if d.preset == "tangential_spin":
        return tangential_spin_field()
    if d.preset == "polynomial":
        return polynomial_field(d.terms_x, d.terms_y)
    if d.preset == "zero":
        return _zero_field()
    raise ConfigError(f"unknown deformation preset {d.preset!r}")
