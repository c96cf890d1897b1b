"""Explicit Newmark time integration of the coupled system, CFL step sizing,
and the simulation runner (traces, snapshots, run manifest).

One step (beta = 0, gamma = 1/2): predictor on both fields, then the fluid
acceleration from the predictor solid displacement, then the solid
acceleration from the just-computed fluid pressure (-phi_ddot), then the
velocity correctors. Only the diagonal mass is ever inverted.
"""

from __future__ import annotations

import hashlib
import struct
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .assembly import (
    DiagonalMass,
    DofMap,
    FieldVectors,
    WaveOperators,
    assemble_mass,
    build_dofmap,
    build_operators,
)
from .excitation import CompiledReceivers, CompiledSources, Seismogram
from .gll_basis import GllRule
from .hexmesh import HexMesh, per_element_min_gll_spacing
from .material_model import MaterialTable

DEFAULT_COURANT = 0.3
BLOWUP_THRESHOLD = 1e30
BLOWUP_CHECK_EVERY = 50


class SolverError(RuntimeError):
    pass


class BlowUpError(SolverError):
    """A field value left the finite range; reports step and DOF."""


@dataclass
class TimeGrid:
    dt: float
    n_steps: int
    t_end: float
    courant: float


def compute_dt(mesh: HexMesh, table: MaterialTable, rule: GllRule, courant: float,
               t_end: float | None = None) -> TimeGrid:
    """dt = C * min over elements of (min GLL spacing / vp of the material)."""
    if not 0.0 < courant < 1.0:
        raise SolverError(f"Courant number must be in (0, 1), got {courant}")
    spacing = per_element_min_gll_spacing(mesh, rule)
    vp = np.array([table.get(m).vp for m in mesh.materials])
    dt = courant * float(np.min(spacing / vp))
    n_steps = int(np.ceil(t_end / dt)) if t_end else 0
    return TimeGrid(dt=dt, n_steps=n_steps, t_end=t_end or 0.0, courant=courant)


def newmark_predict(x: np.ndarray, v: np.ndarray, a: np.ndarray, dt: float):
    """In-place position/velocity predictor of the explicit Newmark scheme."""
    x += dt * v + (0.5 * dt * dt) * a
    v += (0.5 * dt) * a


def newmark_correct(v: np.ndarray, a_new: np.ndarray, dt: float):
    """In-place velocity corrector once the new acceleration is known."""
    v += (0.5 * dt) * a_new


@dataclass
class SolverRun:
    """All state of one simulation: fields, operators, sources, receivers."""

    mesh: HexMesh
    table: MaterialTable
    rule: GllRule
    dofmap: DofMap
    mass: DiagonalMass
    ops: WaveOperators
    grid: TimeGrid
    state: FieldVectors
    sources: CompiledSources
    receivers: CompiledReceivers
    step: int = 0
    blowup_check_every: int = BLOWUP_CHECK_EVERY
    max_boundary_power: float = field(default=-np.inf)
    # per-step |phi_ddot|, |u_ddot| maxima of the latest step
    last_max_accel: tuple = (0.0, 0.0)

    @property
    def time(self) -> float:
        return self.step * self.grid.dt

    def energy(self) -> float:
        """Discrete energy (kinetic + strain) summed over both domains."""
        s = self.state
        e = 0.0
        if self.dofmap.n_fluid:
            e += 0.5 * (s.phi_dot @ (self.mass.m_fluid * s.phi_dot))
            e += 0.5 * (s.phi @ self.ops.apply_acoustic_stiffness(s.phi))
        if self.dofmap.n_solid:
            e += 0.5 * np.sum(s.u_dot * (self.mass.m_solid[:, None] * s.u_dot))
            e += 0.5 * np.sum(s.u * self.ops.apply_elastic_stiffness(s.u))
        return float(e)


def build_run(mesh, table, rule, sources, receivers, courant=DEFAULT_COURANT,
              t_end=0.0, backend=None, grid: TimeGrid | None = None) -> SolverRun:
    dofmap = build_dofmap(mesh, table, rule)
    mass = assemble_mass(mesh, table, rule, dofmap)
    ops = build_operators(mesh, table, rule, dofmap, backend=backend)
    if grid is None:
        grid = compute_dt(mesh, table, rule, courant, t_end)
    return SolverRun(
        mesh=mesh,
        table=table,
        rule=rule,
        dofmap=dofmap,
        mass=mass,
        ops=ops,
        grid=grid,
        state=FieldVectors.zeros(dofmap),
        sources=CompiledSources(mesh, table, rule, dofmap, sources),
        receivers=CompiledReceivers(mesh, table, rule, dofmap, receivers),
    )


def _damping_cache(run: SolverRun):
    """Effective mass inverses folding the Stacey damping into the update.

    The corrector velocity is used in the damping force, which keeps the
    boundary term unconditionally stable (several faces can meet at a node);
    the extra cost is one diagonal (fluid) or per-node 3x3 (solid) solve.
    """
    dt = run.grid.dt
    cache = getattr(run, "_damp", None)
    if cache is not None and cache[0] == dt:
        return cache[1], cache[2]
    ops = run.ops
    inv_mf = None
    if run.dofmap.n_fluid:
        inv_mf = 1.0 / (run.mass.m_fluid + 0.5 * dt * ops.ab_f_coef)
    minv_bnd = None
    if ops.has_absorbing_solid:
        m = run.mass.m_solid[ops.ab_s_idx]
        eff = m[:, None, None] * np.eye(3) + 0.5 * dt * ops.ab_s_bmat
        minv_bnd = np.linalg.inv(eff)
    run._damp = (dt, inv_mf, minv_bnd)
    return inv_mf, minv_bnd


def newmark_step(run: SolverRun) -> SolverRun:
    """Advance the coupled state by one explicit Newmark step."""
    dt = run.grid.dt
    s = run.state
    ops = run.ops
    has_fluid = run.dofmap.n_fluid > 0
    has_solid = run.dofmap.n_solid > 0
    t_new = (run.step + 1) * dt
    inv_mf_eff, minv_bnd = _damping_cache(run)

    if has_fluid:
        newmark_predict(s.phi, s.phi_dot, s.phi_ddot, dt)
    if has_solid:
        newmark_predict(s.u, s.u_dot, s.u_ddot, dt)

    if has_fluid:
        f_fluid = np.zeros(run.dofmap.n_fluid)
        run.sources.add_fluid(f_fluid, t_new)
        ops.coupling_fluid(s.u, f_fluid)
        if ops.has_absorbing_fluid:
            f_fluid -= ops.ab_f_coef * s.phi_dot
        f_fluid -= ops.apply_acoustic_stiffness(s.phi)
        s.phi_ddot = f_fluid * inv_mf_eff

    if has_solid:
        f_solid = np.zeros((run.dofmap.n_solid, 3))
        run.sources.add_solid(f_solid, t_new)
        if has_fluid:
            ops.coupling_solid(s.phi_ddot, f_solid)
        if ops.has_absorbing_solid:
            v_bnd = s.u_dot[ops.ab_s_idx]
            f_solid[ops.ab_s_idx] -= np.einsum("nij,nj->ni", ops.ab_s_bmat, v_bnd)
        f_solid -= ops.apply_elastic_stiffness(s.u)
        s.u_ddot = f_solid / run.mass.m_solid[:, None]
        if minv_bnd is not None:
            s.u_ddot[ops.ab_s_idx] = np.einsum(
                "nij,nj->ni", minv_bnd, f_solid[ops.ab_s_idx]
            )
        ops.apply_roller(s.u_ddot)

    if has_fluid:
        newmark_correct(s.phi_dot, s.phi_ddot, dt)
    if has_solid:
        newmark_correct(s.u_dot, s.u_ddot, dt)
        ops.apply_roller(s.u_dot)

    # actual damping power at the corrector velocities: -v.Bv <= 0
    boundary_power = 0.0
    if ops.has_absorbing_fluid:
        boundary_power -= float(s.phi_dot @ (ops.ab_f_coef * s.phi_dot))
    if ops.has_absorbing_solid:
        v_bnd = s.u_dot[ops.ab_s_idx]
        boundary_power -= float(
            np.sum(v_bnd * np.einsum("nij,nj->ni", ops.ab_s_bmat, v_bnd))
        )

    run.step += 1
    run.max_boundary_power = max(run.max_boundary_power, boundary_power)
    run.last_max_accel = (
        float(np.max(np.abs(s.phi_ddot))) if has_fluid else 0.0,
        float(np.max(np.abs(s.u_ddot))) if has_solid else 0.0,
    )
    if run.step % run.blowup_check_every == 0:
        _check_finite(run)
    return run


def _check_finite(run: SolverRun):
    s = run.state
    for label, arr in (("phi_ddot", s.phi_ddot), ("u_ddot", s.u_ddot)):
        if arr.size == 0:
            continue
        flat = np.abs(arr.reshape(-1))
        worst = int(np.argmax(flat))
        if not np.isfinite(flat[worst]) or flat[worst] > BLOWUP_THRESHOLD:
            raise BlowUpError(
                f"field blow-up at step {run.step}: |{label}[{worst}]| = {flat[worst]:.3e}"
            )


@dataclass
class RunResult:
    seismogram: Seismogram
    manifest: dict
    energy_samples: np.ndarray  # (n, 2) of (time, energy) when requested


def execute(run: SolverRun, energy_every: int = 0, snapshot_every: int = 0,
            out_dir=None, on_step=None) -> RunResult:
    """Run all steps, recording receivers every step (t = 0 included)."""
    import os

    n = run.grid.n_steps
    traces = np.zeros((n + 1, run.receivers.n_channels))
    run.receivers.sample(run.state, traces[0])
    energies = []
    t0 = _time.perf_counter()
    snap_paths = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    if snapshot_every and out_dir is not None:
        snap_paths.append(write_snapshot(run, out_dir))
    for i in range(n):
        newmark_step(run)
        run.receivers.sample(run.state, traces[run.step])
        if energy_every and run.step % energy_every == 0:
            energies.append((run.time, run.energy()))
        if snapshot_every and run.step % snapshot_every == 0 and out_dir is not None:
            snap_paths.append(write_snapshot(run, out_dir))
        if on_step is not None:
            on_step(run)
    wall = _time.perf_counter() - t0
    times = np.arange(n + 1) * run.grid.dt
    seis = Seismogram(times=times, data=traces, names=list(run.receivers.names))
    manifest = {
        "dt": run.grid.dt,
        "n_steps": n,
        "dofs_fluid": run.dofmap.n_fluid,
        "dofs_solid": 3 * run.dofmap.n_solid,
        "dofs_interface": run.dofmap.n_interface,
        "wall_seconds": wall,
        "backend": kernels.backend_name(run.ops.backend),
        "courant": run.grid.courant,
        "t_end": run.grid.t_end,
        "coupling_faces": run.ops.n_coupling_faces,
        "pressure_convention": "p = -phi_ddot; acoustic sources are calibrated "
        "so pressure follows amplitude*s(t-r/c)/(4*pi*r)",
    }
    if snap_paths:
        manifest["snapshots"] = len(snap_paths)
    return RunResult(
        seismogram=seis,
        manifest=manifest,
        energy_samples=np.asarray(energies) if energies else np.empty((0, 2)),
    )


def run_simulation(cfg, out_dir=None, threads=None, snapshot_every=None, backend=None) -> RunResult:
    """Assemble everything from a SimulationConfig, run, and write artifacts.

    Writes traces.csv (when receivers exist), manifest.txt and SNAP1
    snapshots into ``out_dir`` (default: the config's output directory;
    pass out_dir=False to skip writing entirely).
    """
    import os

    from .config import assemble_simulation

    backend = backend or kernels.get_backend()
    if threads:
        backend.set_num_threads(threads)
    mesh, table, sources, receivers = assemble_simulation(cfg)
    rule = gll_rule(cfg.degree)
    run = build_run(mesh, table, rule, sources, receivers,
                    courant=cfg.courant, t_end=cfg.t_end, backend=backend)
    if snapshot_every is None:
        snapshot_every = cfg.snapshot_every
    target = None if out_dir is False else (out_dir or cfg.out_dir)
    if target is not None:
        target = os.path.join(cfg.base_dir, target) if not os.path.isabs(target) else target
    res = execute(run, snapshot_every=snapshot_every, out_dir=target)
    res.manifest["threads"] = threads or backend.get_num_threads()
    res.manifest["degree"] = cfg.degree
    res.manifest["config_sha256"] = config_hash(cfg.to_text())
    if cfg.defaults_applied:
        res.manifest["defaults_applied"] = ",".join(cfg.defaults_applied)
    if target is not None:
        if receivers:
            res.seismogram.to_csv(os.path.join(target, "traces.csv"))
        write_manifest(res.manifest, os.path.join(target, "manifest.txt"))
    return res


def gll_rule_cached(degree: int) -> GllRule:
    from .gll_basis import gll_rule

    return gll_rule(degree)


def write_manifest(manifest: dict, path):
    with open(path, "w") as f:
        for key, value in manifest.items():
            if isinstance(value, float):
                f.write(f"{key}={value:.17g}\n")
            else:
                f.write(f"{key}={value}\n")


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# SNAP1 binary snapshots: little-endian, magic + step + time + counts, then
# float64 arrays phi, phi_dot, u, u_dot in DOF order.

_SNAP_MAGIC = b"SNAP1\x00\x00\x00"


def write_snapshot(run: SolverRun, out_dir) -> str:
    import os

    path = os.path.join(out_dir, f"snap_{run.step:08d}.snap1")
    s = run.state
    with open(path, "wb") as f:
        f.write(_SNAP_MAGIC)
        f.write(struct.pack("<qdqq", run.step, run.time, run.dofmap.n_fluid, run.dofmap.n_solid))
        for arr in (s.phi, s.phi_dot, s.u, s.u_dot):
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def read_snapshot(path):
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != _SNAP_MAGIC:
            raise SolverError(f"{path}: not a SNAP1 file")
        step, t, n_fluid, n_solid = struct.unpack("<qdqq", f.read(32))
        phi = np.frombuffer(f.read(8 * n_fluid), dtype="<f8").copy()
        phi_dot = np.frombuffer(f.read(8 * n_fluid), dtype="<f8").copy()
        u = np.frombuffer(f.read(8 * 3 * n_solid), dtype="<f8").reshape(n_solid, 3).copy()
        u_dot = np.frombuffer(f.read(8 * 3 * n_solid), dtype="<f8").reshape(n_solid, 3).copy()
    return {"step": step, "time": t, "phi": phi, "phi_dot": phi_dot, "u": u, "u_dot": u_dot}
