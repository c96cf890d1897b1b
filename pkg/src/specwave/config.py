"""Simulation configuration: line-based `key = value` format with [section]
headers and repeatable [source]/[receiver] blocks.

The full grammar is documented in docs/config.md. Parsing applies defaults
(degree 2, courant 0.3, tukey_alpha 0.5, ...) and records every applied
default so the run manifest can echo them.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import material_model as mm
from .excitation import PlaneWaveArray, PointSource, Receiver, build_plane_wave_array, tone_burst
from .hexmesh import BOUNDARY_SIDES, HexMesh, VoxelVolume, read_shex, read_svox, voxels_to_hexmesh
from .material_model import ACOUSTIC, MaterialTable, domain_kind

DEFAULTS = {"degree": 2, "courant": 0.3, "tukey_alpha": 0.5, "amplitude": 1.0,
            "delay": 0.0, "snapshot_every": 0, "directory": "out", "n_cycles": 4}

BOUNDARY_CONDITIONS = ("absorbing", "free", "roller")
AXES = {"x": 0, "y": 1, "z": 2}


class ConfigError(ValueError):
    pass


@dataclass
class SourceConfig:
    kind: str  # point_pressure | point_force | plane_wave
    f0: float
    n_cycles: int
    tukey_alpha: float
    amplitude: float
    delay: float
    position: tuple | None = None
    direction: tuple | None = None
    axis: str | None = None
    plane_position: float | None = None
    spacing: float | None = None
    r_flat: float | None = None
    sigma: float | None = None


@dataclass
class ReceiverConfig:
    name: str
    position: tuple
    record: tuple


@dataclass
class SimulationConfig:
    # mesh: exactly one of shex / svox / inline voxels
    mesh_shex: str | None = None
    mesh_svox: str | None = None
    voxels: tuple | None = None
    spacing: tuple | None = None
    fill: str | None = None
    regions: list = field(default_factory=list)  # (name, i0, i1, j0, j1, k0, k1)
    materials_builtin: bool = True
    smat_path: str | None = None
    degree: int = DEFAULTS["degree"]
    courant: float = DEFAULTS["courant"]
    t_end: float = 0.0
    boundaries: dict = field(default_factory=lambda: {s: "absorbing" for s in BOUNDARY_SIDES})
    sources: list = field(default_factory=list)
    receivers: list = field(default_factory=list)
    out_dir: str = DEFAULTS["directory"]
    snapshot_every: int = DEFAULTS["snapshot_every"]
    base_dir: str = "."
    defaults_applied: list = field(default_factory=list)

    def to_text(self) -> str:
        """Canonical serialization; parse_text(to_text()) round-trips."""
        out = ["[mesh]"]
        if self.mesh_shex:
            out.append(f"shex = {self.mesh_shex}")
        if self.mesh_svox:
            out.append(f"svox = {self.mesh_svox}")
        if self.voxels:
            out.append("voxels = {} {} {}".format(*self.voxels))
            out.append("spacing = {:.17g} {:.17g} {:.17g}".format(*self.spacing))
            out.append(f"fill = {self.fill}")
            for reg in self.regions:
                out.append("region = {} {} {} {} {} {} {}".format(*reg))
        out.append("")
        out.append("[materials]")
        if self.smat_path:
            out.append(f"smat = {self.smat_path}")
        else:
            out.append("builtin = true")
        out += ["", "[discretization]", f"degree = {self.degree}"]
        out += ["", "[time]", f"courant = {self.courant:.17g}", f"t_end = {self.t_end:.17g}"]
        out += ["", "[boundaries]"]
        for side in BOUNDARY_SIDES:
            out.append(f"{side} = {self.boundaries[side]}")
        for src in self.sources:
            out += ["", "[source]", f"kind = {src.kind}"]
            if src.position is not None:
                out.append("position = {:.17g} {:.17g} {:.17g}".format(*src.position))
            for key in ("f0", "n_cycles", "tukey_alpha", "amplitude", "delay"):
                out.append(f"{key} = {getattr(src, key):.17g}")
            if src.direction is not None:
                out.append("direction = {:.17g} {:.17g} {:.17g}".format(*src.direction))
            if src.kind == "plane_wave":
                out.append(f"axis = {src.axis}")
                out.append(f"plane_position = {src.plane_position:.17g}")
                out.append(f"spacing = {src.spacing:.17g}")
                if src.r_flat is not None:
                    out.append(f"r_flat = {src.r_flat:.17g}")
                if src.sigma is not None:
                    out.append(f"sigma = {src.sigma:.17g}")
        for rec in self.receivers:
            out += ["", "[receiver]", f"name = {rec.name}"]
            out.append("position = {:.17g} {:.17g} {:.17g}".format(*rec.position))
            out.append("record = " + " ".join(rec.record))
        out += ["", "[output]", f"directory = {self.out_dir}", f"snapshot_every = {self.snapshot_every}"]
        return "\n".join(out) + "\n"


def _parse_floats(value, n, key, ln):
    parts = value.split()
    if len(parts) != n:
        raise ConfigError(f"line {ln}: {key} expects {n} values, got {len(parts)}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"line {ln}: {key} has a non-numeric value") from None


def _parse_bool(value, key, ln):
    v = value.strip().lower()
    if v in ("true", "yes", "1"):
        return True
    if v in ("false", "no", "0"):
        return False
    raise ConfigError(f"line {ln}: {key} expects true/false")


def parse_config(path) -> SimulationConfig:
    with open(path) as f:
        cfg = parse_text(f.read())
    cfg.base_dir = os.path.dirname(os.path.abspath(path))
    _check_files(cfg)
    return cfg


def _check_files(cfg: SimulationConfig):
    for p in (cfg.mesh_shex, cfg.mesh_svox, cfg.smat_path):
        if p is not None and not os.path.exists(os.path.join(cfg.base_dir, p)):
            raise ConfigError(f"referenced file does not exist: {p}")


def parse_text(text: str) -> SimulationConfig:
    cfg = SimulationConfig()
    cfg.boundaries = {s: None for s in BOUNDARY_SIDES}
    section = None
    current = None  # the SourceConfig / ReceiverConfig being filled
    seen = {"mesh": False, "materials": False}
    pending_sources: list = []
    pending_receivers: list = []
    materials_set = None

    def close_block(ln):
        nonlocal current
        if isinstance(current, dict) and current.get("_kind") == "source":
            pending_sources.append((current, ln))
        elif isinstance(current, dict) and current.get("_kind") == "receiver":
            pending_receivers.append((current, ln))
        current = None

    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {ln}: malformed section header {line!r}")
            close_block(ln)
            section = line[1:-1].strip()
            if section not in ("mesh", "materials", "discretization", "time",
                               "boundaries", "source", "receiver", "output"):
                raise ConfigError(f"line {ln}: unknown section [{section}]")
            if section == "source":
                current = {"_kind": "source", "_line": ln}
            elif section == "receiver":
                current = {"_kind": "receiver", "_line": ln}
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if section is None:
            raise ConfigError(f"line {ln}: key {key!r} outside any section")
        if section == "mesh":
            if key == "shex":
                cfg.mesh_shex = value
            elif key == "svox":
                cfg.mesh_svox = value
            elif key == "voxels":
                parts = value.split()
                if len(parts) != 3:
                    raise ConfigError(f"line {ln}: voxels expects 3 integers")
                cfg.voxels = tuple(int(p) for p in parts)
            elif key == "spacing":
                cfg.spacing = _parse_floats(value, 3, key, ln)
            elif key == "fill":
                cfg.fill = value
            elif key == "region":
                parts = value.split()
                if len(parts) != 7:
                    raise ConfigError(f"line {ln}: region expects `name i0 i1 j0 j1 k0 k1`")
                cfg.regions.append((parts[0],) + tuple(int(p) for p in parts[1:]))
            else:
                raise ConfigError(f"line {ln}: unknown key {key!r} in [mesh]")
        elif section == "materials":
            if key == "builtin":
                cfg.materials_builtin = _parse_bool(value, key, ln)
                materials_set = "builtin"
            elif key == "smat":
                cfg.smat_path = value
                cfg.materials_builtin = False
                materials_set = "smat"
            else:
                raise ConfigError(f"line {ln}: unknown key {key!r} in [materials]")
        elif section == "discretization":
            if key == "degree":
                cfg.degree = int(value)
            else:
                raise ConfigError(f"line {ln}: unknown key {key!r} in [discretization]")
        elif section == "time":
            if key == "courant":
                cfg.courant = float(value)
            elif key == "t_end":
                cfg.t_end = float(value)
            else:
                raise ConfigError(f"line {ln}: unknown key {key!r} in [time]")
        elif section == "boundaries":
            if key == "all":
                if value not in BOUNDARY_CONDITIONS:
                    raise ConfigError(f"line {ln}: unknown boundary condition {value!r}")
                for side in BOUNDARY_SIDES:
                    cfg.boundaries[side] = value
            elif key in BOUNDARY_SIDES:
                if value not in BOUNDARY_CONDITIONS:
                    raise ConfigError(f"line {ln}: unknown boundary condition {value!r}")
                cfg.boundaries[key] = value
            else:
                raise ConfigError(f"line {ln}: unknown key {key!r} in [boundaries]")
        elif section in ("source", "receiver"):
            known_src = {"kind", "position", "f0", "n_cycles", "tukey_alpha", "amplitude",
                         "delay", "direction", "axis", "plane_position", "spacing",
                         "r_flat", "sigma"}
            known_rec = {"name", "position", "record"}
            known = known_src if section == "source" else known_rec
            if key not in known:
                raise ConfigError(f"line {ln}: unknown key {key!r} in [{section}]")
            current[key] = (value, ln)
        elif section == "output":
            if key == "directory":
                cfg.out_dir = value
            elif key == "snapshot_every":
                cfg.snapshot_every = int(value)
            else:
                raise ConfigError(f"line {ln}: unknown key {key!r} in [output]")
    close_block(0)

    for block, ln0 in pending_sources:
        cfg.sources.append(_finish_source(block, cfg))
    for block, ln0 in pending_receivers:
        cfg.receivers.append(_finish_receiver(block))

    _apply_defaults(cfg, materials_set)
    _validate(cfg)
    return cfg


def _get(block, key, default=None, cast=float):
    if key in block:
        value, ln = block[key]
        try:
            return cast(value)
        except ValueError:
            raise ConfigError(f"line {ln}: invalid value for {key!r}: {value!r}") from None
    return default


def _finish_source(block, cfg) -> SourceConfig:
    ln = block["_line"]
    kind = _get(block, "kind", None, str)
    if kind not in ("point_pressure", "point_force", "plane_wave"):
        raise ConfigError(f"line {ln}: source kind must be point_pressure, "
                          f"point_force or plane_wave, got {kind!r}")
    src = SourceConfig(
        kind=kind,
        f0=_get(block, "f0", None),
        n_cycles=_get(block, "n_cycles", DEFAULTS["n_cycles"], int),
        tukey_alpha=_get(block, "tukey_alpha", DEFAULTS["tukey_alpha"]),
        amplitude=_get(block, "amplitude", DEFAULTS["amplitude"]),
        delay=_get(block, "delay", DEFAULTS["delay"]),
    )
    for key, default in (("tukey_alpha", DEFAULTS["tukey_alpha"]),
                         ("amplitude", DEFAULTS["amplitude"]),
                         ("n_cycles", DEFAULTS["n_cycles"]),
                         ("delay", DEFAULTS["delay"])):
        if key not in block:
            cfg.defaults_applied.append(f"source.{key}={default}")
    if src.f0 is None:
        raise ConfigError(f"line {ln}: source needs f0")
    if kind in ("point_pressure", "point_force"):
        if "position" not in block:
            raise ConfigError(f"line {ln}: {kind} source needs a position")
        src.position = _parse_floats(block["position"][0], 3, "position", block["position"][1])
    if kind == "point_force":
        if "direction" not in block:
            raise ConfigError(f"line {ln}: point_force source needs a direction")
        src.direction = _parse_floats(block["direction"][0], 3, "direction", block["direction"][1])
    if kind == "plane_wave":
        axis = _get(block, "axis", "z", str)
        if axis not in AXES:
            raise ConfigError(f"line {ln}: plane_wave axis must be x, y or z")
        src.axis = axis
        src.plane_position = _get(block, "plane_position", None)
        src.spacing = _get(block, "spacing", None)
        if src.plane_position is None or src.spacing is None:
            raise ConfigError(f"line {ln}: plane_wave needs plane_position and spacing")
        src.r_flat = _get(block, "r_flat", None)
        src.sigma = _get(block, "sigma", None)
    return src


def _finish_receiver(block) -> ReceiverConfig:
    ln = block["_line"]
    name = _get(block, "name", None, str)
    if not name:
        raise ConfigError(f"line {ln}: receiver needs a name")
    if "position" not in block:
        raise ConfigError(f"line {ln}: receiver {name!r} needs a position")
    position = _parse_floats(block["position"][0], 3, "position", block["position"][1])
    record = tuple((block.get("record", ("pressure", ln))[0]).split())
    for ch in record:
        if ch not in ("pressure", "vx", "vy", "vz"):
            raise ConfigError(f"line {ln}: unknown record channel {ch!r}")
    return ReceiverConfig(name=name, position=position, record=record)


def _apply_defaults(cfg: SimulationConfig, materials_set):
    if materials_set is None:
        cfg.defaults_applied.append("materials.builtin=true")
    if all(v is None for v in cfg.boundaries.values()):
        cfg.defaults_applied.append("boundaries.all=absorbing")
    for side in BOUNDARY_SIDES:
        if cfg.boundaries[side] is None:
            cfg.boundaries[side] = "absorbing"


def _validate(cfg: SimulationConfig):
    mesh_specs = sum(1 for x in (cfg.mesh_shex, cfg.mesh_svox, cfg.voxels) if x)
    if mesh_specs != 1:
        raise ConfigError("exactly one of mesh shex=, svox= or voxels= must be given")
    if cfg.voxels:
        if cfg.spacing is None or cfg.fill is None:
            raise ConfigError("inline voxel mesh needs spacing and fill")
        if any(n < 1 for n in cfg.voxels):
            raise ConfigError(f"voxel counts must be >= 1, got {cfg.voxels}")
        if any(s <= 0 for s in cfg.spacing):
            raise ConfigError(f"voxel spacing must be positive, got {cfg.spacing}")
    if not 1 <= cfg.degree <= 10:
        raise ConfigError(f"degree must be in 1..10, got {cfg.degree}")
    if not 0 < cfg.courant < 1:
        raise ConfigError(f"courant must be in (0, 1), got {cfg.courant}")
    if cfg.t_end <= 0:
        raise ConfigError(f"t_end must be positive, got {cfg.t_end}")
    if cfg.snapshot_every < 0:
        raise ConfigError("snapshot_every must be >= 0")
    for src in cfg.sources:
        if src.f0 <= 0:
            raise ConfigError(f"source f0 must be positive, got {src.f0}")
        if src.n_cycles < 1:
            raise ConfigError(f"source n_cycles must be >= 1, got {src.n_cycles}")
        if not 0 <= src.tukey_alpha <= 1:
            raise ConfigError(f"tukey_alpha must be in [0,1], got {src.tukey_alpha}")
        if src.kind == "point_force" and not any(src.direction):
            raise ConfigError("point_force direction must be nonzero")
    names = [r.name for r in cfg.receivers]
    if len(set(names)) != len(names):
        raise ConfigError("receiver names must be unique")


# ---------------------------------------------------------------------------
# builders: config -> solver inputs


def build_material_table(cfg: SimulationConfig) -> MaterialTable:
    if cfg.smat_path:
        return mm.read_smat(os.path.join(cfg.base_dir, cfg.smat_path))
    return mm.builtin_dolphin_table()


def build_mesh(cfg: SimulationConfig, table: MaterialTable) -> HexMesh:
    if cfg.mesh_shex:
        if "boundaries.all=absorbing" not in cfg.defaults_applied:
            raise ConfigError(
                "SHEX meshes carry their own face sets; remove the [boundaries] section"
            )
        return read_shex(os.path.join(cfg.base_dir, cfg.mesh_shex))
    policy = {side: (None if cond == "free" else cond) for side, cond in cfg.boundaries.items()}
    if cfg.mesh_svox:
        vol = read_svox(os.path.join(cfg.base_dir, cfg.mesh_svox))
        return voxels_to_hexmesh(vol, boundary_policy=policy)
    nx, ny, nz = cfg.voxels
    values = np.full(cfg.voxels, table.id_of(cfg.fill), dtype=np.int64)
    for name, i0, i1, j0, j1, k0, k1 in cfg.regions:
        if not (0 <= i0 <= i1 < nx and 0 <= j0 <= j1 < ny and 0 <= k0 <= k1 < nz):
            raise ConfigError(f"region {name} exceeds the voxel volume {cfg.voxels}")
        values[i0 : i1 + 1, j0 : j1 + 1, k0 : k1 + 1] = table.id_of(name)
    vol = VoxelVolume(dims=cfg.voxels, spacing=cfg.spacing, values=values)
    return voxels_to_hexmesh(vol, boundary_policy=policy)


def build_sources(cfg: SimulationConfig, mesh: HexMesh, table: MaterialTable) -> list:
    out = []
    for src in cfg.sources:
        stf = tone_burst(src.f0, src.n_cycles, src.tukey_alpha, amplitude=src.amplitude)
        if src.kind == "point_pressure":
            out.append(PointSource(position=src.position, kind="pressure", stf=stf,
                                   delay=src.delay))
        elif src.kind == "point_force":
            out.append(PointSource(position=src.position, kind="force", stf=stf,
                                   direction=src.direction, delay=src.delay))
        else:
            water_vp = _reference_fluid_vp(table)
            pw = PlaneWaveArray(axis=AXES[src.axis], plane_position=src.plane_position,
                                spacing=src.spacing, stf=stf, r_flat=src.r_flat, sigma=src.sigma,
                                delay=src.delay)
            points, amps = build_plane_wave_array(pw, mesh, table, water_vp)
            for pos, amp in zip(points, amps):
                out.append(PointSource(position=pos, kind="pressure", stf=stf,
                                       delay=src.delay, scale=float(amp)))
    return out


def _reference_fluid_vp(table: MaterialTable) -> float:
    try:
        return table.by_name("water").vp
    except mm.MaterialError:
        fluids = [t.vp for t in table.tissues if domain_kind(t) == ACOUSTIC]
        if not fluids:
            raise ConfigError("plane_wave source requires an acoustic material in the table") from None
        return min(fluids)


def build_receivers(cfg: SimulationConfig) -> list:
    return [Receiver(name=r.name, position=r.position, channels=r.record) for r in cfg.receivers]


def assemble_simulation(cfg: SimulationConfig):
    table = build_material_table(cfg)
    mesh = build_mesh(cfg, table)
    sources = build_sources(cfg, mesh, table)
    receivers = build_receivers(cfg)
    return mesh, table, sources, receivers
