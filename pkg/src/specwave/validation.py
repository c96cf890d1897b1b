"""Built-in verification harnesses: source-receiver reciprocity, the
homogeneous-medium spherical-wave oracle, interface reflection/transmission
against analytic impedance coefficients, and spectral convergence studies.

The column tests run on narrow ducts with roller (symmetry) side walls:
below the first duct cutoff only the plane mode propagates, so normal
incidence is exact and the analytic 1D coefficients apply directly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .excitation import PointSource, Receiver, tone_burst
from .gll_basis import gll_rule
from .hexmesh import BOUNDARY_SIDES, VoxelVolume, voxels_to_hexmesh
from .material_model import builtin_dolphin_table
from .time_solver import TimeGrid, build_run, compute_dt, execute, newmark_step

WATER_ID, SOFT_ID, BONE_ID = 5, 1, 4


class ValidationConfigError(ValueError):
    pass


def _hash_params(**kw) -> str:
    text = ",".join(f"{k}={kw[k]!r}" for k in sorted(kw))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def water_box(dims, spacing, policy=None) -> VoxelVolume:
    return VoxelVolume(dims=dims, spacing=(spacing,) * 3, values=np.full(dims, WATER_ID))


# ---------------------------------------------------------------------------
# reciprocity


@dataclass
class ReciprocityResult:
    times: np.ndarray
    trace_12: np.ndarray  # source at r1, receiver at r2
    trace_21: np.ndarray  # swapped
    max_abs_diff: float
    max_abs_signal: float
    ratio_db: float  # -inf flagged by zero_signal
    zero_signal: bool
    config_hash: str

    @property
    def passed_40db(self) -> bool:
        return (not self.zero_signal) and self.ratio_db <= -40.0


def reciprocity_test(mesh, table, rule, r1, r2, stf, *, kind="pressure",
                     direction=(0, 0, 1), courant=0.3, t_end, backend=None) -> ReciprocityResult:
    """Two runs with source and receiver exchanged (force orientations
    reversed, as the reciprocal pair demands); identical dt and mesh."""
    direction = np.asarray(direction, dtype=float)

    def one(run_src, run_rec, sign):
        if kind == "pressure":
            src = PointSource(position=run_src, kind="pressure", stf=stf)
            rec = Receiver("r", run_rec, ("pressure",))
        else:
            src = PointSource(position=run_src, kind="force", stf=stf,
                              direction=sign * direction)
            rec = Receiver("r", run_rec, ("vx", "vy", "vz"))
        run = build_run(mesh, table, rule, [src], [rec], courant=courant,
                        t_end=t_end, backend=backend)
        res = execute(run)
        if kind == "pressure":
            return res.seismogram.times, res.seismogram.data[:, 0]
        return res.seismogram.times, res.seismogram.data @ (sign * direction)

    times, t12 = one(np.asarray(r1, float), np.asarray(r2, float), +1.0)
    _, t21 = one(np.asarray(r2, float), np.asarray(r1, float), -1.0)
    diff = float(np.max(np.abs(t12 - t21)))
    signal = float(max(np.max(np.abs(t12)), np.max(np.abs(t21))))
    zero = signal == 0.0
    ratio_db = -np.inf if zero or diff == 0.0 else 20.0 * np.log10(diff / signal)
    return ReciprocityResult(
        times=times,
        trace_12=t12,
        trace_21=t21,
        max_abs_diff=diff,
        max_abs_signal=signal,
        ratio_db=float(ratio_db),
        zero_signal=zero,
        config_hash=_hash_params(r1=tuple(np.asarray(r1, float)), r2=tuple(np.asarray(r2, float)),
                                 kind=kind, courant=courant, t_end=t_end, f0=stf.f0,
                                 n_cycles=stf.n_cycles, degree=rule.degree),
    )


def bone_slab_reciprocity(*, quick=False, courant=0.3, backend=None) -> ReciprocityResult:
    """The heterogeneous reference configuration: a 20x20x40 box of 2.5 mm
    cells with a flat bone slab in water, sources/receivers asymmetric off
    the slab."""
    dims = (20, 20, 40)
    spacing = 2.5e-3
    values = np.full(dims, WATER_ID)
    values[:, :, 18:22] = BONE_ID  # slab z in [45, 55] mm
    mesh = voxels_to_hexmesh(VoxelVolume(dims=dims, spacing=(spacing,) * 3, values=values))
    table = builtin_dolphin_table()
    rule = gll_rule(2)
    stf = tone_burst(100e3, 4, 0.5)
    r1 = (18e-3, 20e-3, 12e-3)
    r2 = (32e-3, 28e-3, 83e-3)
    t_end = 60e-6 if quick else 150e-6
    return reciprocity_test(mesh, table, rule, r1, r2, stf, kind="pressure",
                            courant=courant, t_end=t_end, backend=backend)


def homogeneous_reciprocity(*, backend=None) -> ReciprocityResult:
    """Symmetric placement in a homogeneous box: the two runs are mirror
    images, so the difference is pure roundoff."""
    dims = (12, 12, 16)
    spacing = 5e-3
    mesh = voxels_to_hexmesh(water_box(dims, spacing))
    table = builtin_dolphin_table()
    rule = gll_rule(2)
    stf = tone_burst(40e3, 4, 0.5)
    centre = np.array(dims) * spacing / 2
    offset = np.array([0, 0, 15e-3])
    return reciprocity_test(mesh, table, rule, centre - offset, centre + offset, stf,
                            kind="pressure", courant=0.3, t_end=80e-6, backend=backend)


# ---------------------------------------------------------------------------
# spherical-wave oracle


@dataclass
class GreensOracleReport:
    misfit: float
    arrival_lag_steps: int
    dt: float
    expected_arrival: float
    window: tuple
    points_per_wavelength: float
    config_hash: str


def greens_oracle_test(*, element_size=10e-3, degree=3, receiver_distance=0.1,
                       f0=40e3, n_cycles=4, tukey_alpha=0.5, amplitude=1.0,
                       courant=0.12, margin_periods=3.0, dims=None, backend=None) -> GreensOracleReport:
    """Point pressure source in a homogeneous water box versus the analytic
    spherical wave amplitude*s(t - r/c)/(4 pi r) over the direct-arrival
    window (closed before any boundary reflection can arrive)."""
    table = builtin_dolphin_table()
    water = table.by_name("water")
    c = water.vp
    stf = tone_burst(f0, n_cycles, tukey_alpha, amplitude=amplitude)
    r = receiver_distance
    t_arr = r / c
    window_end = t_arr + stf.window_length + margin_periods / f0
    min_path = c * window_end

    h = element_size
    if dims is None:
        # smallest box honouring the clean-window condition, source centred
        # transversely, source/receiver on the z axis
        half_w = 0.5 * np.sqrt(max(min_path**2 - r**2, 0.0)) + h
        z_back = 0.5 * (min_path - r) + h
        z_front = 0.5 * (min_path - r) + h
        nx = int(np.ceil(2 * half_w / h))
        nz = int(np.ceil((z_back + r + z_front) / h))
        dims = (nx, nx, nz)
        z_src = z_back
    else:
        z_src = (dims[2] * h - r) / 2
    mesh = voxels_to_hexmesh(water_box(dims, h))
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    centre_t = 0.5 * (lo + hi)
    src_pos = np.array([centre_t[0], centre_t[1], z_src])
    rec_pos = src_pos + np.array([0.0, 0.0, r])

    # clean-window check by image sources off each wall
    walls = [(0, lo[0]), (0, hi[0]), (1, lo[1]), (1, hi[1]), (2, lo[2]), (2, hi[2])]
    worst = np.inf
    for axis, w in walls:
        img = src_pos.copy()
        img[axis] = 2 * w - img[axis]
        worst = min(worst, float(np.linalg.norm(img - rec_pos)))
    if worst < min_path:
        need = 0.5 * (min_path - worst)
        raise ValidationConfigError(
            f"receiver too close to a boundary for a clean direct-arrival window: "
            f"first reflection path {worst:.3f} m < required {min_path:.3f} m; "
            f"move walls out by at least {need:.3f} m"
        )

    rule = gll_rule(degree)
    ppw = (c / f0) / (element_size * _min_gll_gap(rule))
    run = build_run(mesh, table, rule,
                    [PointSource(position=src_pos, kind="pressure", stf=stf)],
                    [Receiver("probe", rec_pos, ("pressure",))],
                    courant=courant, t_end=window_end, backend=backend)
    res = execute(run)
    t = res.seismogram.times
    p_num = res.seismogram.data[:, 0]
    p_ana = np.array([amplitude * stf.value(ti - t_arr) for ti in t]) / (4 * np.pi * r)

    i0 = int(np.floor((t_arr - margin_periods / f0) / run.grid.dt))
    i0 = max(i0, 0)
    i1 = len(t) - 1
    num_w = p_num[i0 : i1 + 1]
    ana_w = p_ana[i0 : i1 + 1]
    misfit = float(np.linalg.norm(num_w - ana_w) / np.linalg.norm(ana_w))
    corr = np.correlate(num_w, ana_w, mode="full")
    lag = int(np.argmax(corr)) - (len(ana_w) - 1)
    return GreensOracleReport(
        misfit=misfit,
        arrival_lag_steps=lag,
        dt=run.grid.dt,
        expected_arrival=t_arr,
        window=(t[i0], t[i1]),
        points_per_wavelength=float(ppw),
        config_hash=_hash_params(element_size=element_size, degree=degree, r=r, f0=f0,
                                 n_cycles=n_cycles, alpha=tukey_alpha, courant=courant),
    )


def _min_gll_gap(rule) -> float:
    return float(np.min(np.diff(rule.nodes))) / 2.0


# ---------------------------------------------------------------------------
# interface reflection / transmission on a roller column


@dataclass
class InterfaceRTReport:
    r_measured: float
    r_analytic: float
    incident_peak: float
    reflected_peak: float
    incident_window: tuple
    reflected_window: tuple
    config_hash: str

    @property
    def abs_error(self) -> float:
        return abs(self.r_measured - abs(self.r_analytic))


def interface_rt_test(*, solid_name="bone", f0=100e3, n_cycles=4, degree=2,
                      element_size=2.5e-3, courant=0.25, backend=None,
                      control=False) -> InterfaceRTReport:
    """Normal-incidence pressure reflection at a flat water/solid interface.

    Narrow column (one element square) with roller side walls; pulse windows
    are computed from analytic travel times with 3-period margins. With
    ``control=True`` the solid is replaced by water (R should vanish).
    """
    table = builtin_dolphin_table()
    water = table.by_name("water")
    solid = table.by_name(solid_name)
    c = water.vp
    tau = 1.0 / f0
    t_burst = n_cycles / f0
    h = element_size

    n_src = int(np.ceil(0.5 * (c * (t_burst + 6 * tau) + c * (t_burst + 3 * tau)) / h)) + 2
    n_a = int(np.ceil(c * (t_burst + 6 * tau) / 2 / h)) + 2  # source -> receiver
    n_b = int(np.ceil(c * (t_burst + 6 * tau) / 2 / h)) + 2  # receiver -> interface
    n_solid = 16
    z_src = n_src * h
    z_rec = z_src + n_a * h
    z_int = z_rec + n_b * h
    n_int = n_src + n_a + n_b
    t_inc = (z_rec - z_src) / c
    t_ref = (2 * z_int - z_src - z_rec) / c
    inc_win = (t_inc - 3 * tau, t_inc + t_burst + 3 * tau)
    ref_win = (t_ref - 3 * tau, t_ref + t_burst + 3 * tau)
    if inc_win[1] >= ref_win[0]:
        raise ValidationConfigError("incident and reflected pulse windows overlap")
    if control:
        # keep the same windows, push the far wall out of the reflected window
        n_solid = int(np.ceil((c * ref_win[1] + z_src + z_rec) / 2 / h)) - n_int + 2

    nz = n_int + n_solid
    values = np.full((1, 1, nz), WATER_ID)
    if not control:
        values[:, :, n_int:] = table.id_of(solid_name)
    policy = {s: "roller" for s in BOUNDARY_SIDES[:4]}
    policy.update(zmin="absorbing", zmax="absorbing")
    mesh = voxels_to_hexmesh(VoxelVolume((1, 1, nz), (h, h, h), values), boundary_policy=policy)

    stf = tone_burst(f0, n_cycles, 0.5)
    mid = h / 2
    run = build_run(
        mesh, table, gll_rule(degree),
        [PointSource(position=[mid, mid, z_src], kind="pressure", stf=stf)],
        [Receiver("probe", [mid, mid, z_rec], ("pressure",))],
        courant=courant, t_end=ref_win[1], backend=backend,
    )
    res = execute(run)
    t = res.seismogram.times
    p = res.seismogram.data[:, 0]

    def peak(win):
        m = (t >= win[0]) & (t <= win[1])
        return float(np.max(np.abs(p[m])))

    inc, ref = peak(inc_win), peak(ref_win)
    z1 = water.impedance
    z2 = water.impedance if control else solid.impedance
    r_ana = (z2 - z1) / (z2 + z1)
    return InterfaceRTReport(
        r_measured=ref / inc,
        r_analytic=r_ana,
        incident_peak=inc,
        reflected_peak=ref,
        incident_window=inc_win,
        reflected_window=ref_win,
        config_hash=_hash_params(solid=solid_name if not control else "water", f0=f0,
                                 degree=degree, h=element_size, courant=courant),
    )


# ---------------------------------------------------------------------------
# absorbing-boundary column


@dataclass
class AbsorbingColumnReport:
    reflected_fraction: float
    max_boundary_power: float
    config_hash: str


def absorbing_column_test(*, f0=100e3, n_cycles=4, degree=2, element_size=2.5e-3,
                          courant=0.25, backend=None) -> AbsorbingColumnReport:
    """Normal-incidence P pulse in a homogeneous solid column hitting one
    absorbing end; reports the reflected/incident peak ratio."""
    table = builtin_dolphin_table()
    soft = table.by_name("soft_tissue")
    c = soft.vp
    tau = 1.0 / f0
    t_burst = n_cycles / f0
    h = element_size
    n_src = int(np.ceil(0.5 * (c * (t_burst + 6 * tau) + c * (t_burst + 3 * tau)) / h)) + 2
    n_a = int(np.ceil(c * (t_burst + 6 * tau) / 2 / h)) + 2
    n_b = int(np.ceil(c * (t_burst + 6 * tau) / 2 / h)) + 2
    nz = n_src + n_a + n_b
    z_src, z_rec, z_end = n_src * h, (n_src + n_a) * h, nz * h
    t_inc = (z_rec - z_src) / c
    t_ref = (2 * z_end - z_src - z_rec) / c
    inc_win = (t_inc - 3 * tau, t_inc + t_burst + 3 * tau)
    ref_win = (t_ref - 3 * tau, t_ref + t_burst + 3 * tau)
    if inc_win[1] >= ref_win[0]:
        raise ValidationConfigError("incident and reflected pulse windows overlap")

    values = np.full((1, 1, nz), SOFT_ID)
    policy = {s: "roller" for s in BOUNDARY_SIDES[:4]}
    policy.update(zmin="absorbing", zmax="absorbing")
    mesh = voxels_to_hexmesh(VoxelVolume((1, 1, nz), (h, h, h), values), boundary_policy=policy)
    stf = tone_burst(f0, n_cycles, 0.5)
    mid = h / 2
    # force sheet across the section (GLL nodes, quadrature-weighted): stays
    # in the plane-P subspace, so no slow shear duct modes are excited
    rule = gll_rule(degree)
    sources = []
    for a, wa in zip(rule.nodes, rule.weights):
        for b, wb in zip(rule.nodes, rule.weights):
            pos = [(a + 1) / 2 * h, (b + 1) / 2 * h, z_src]
            sources.append(
                PointSource(position=pos, kind="force", stf=stf,
                            direction=[0, 0, 1], scale=wa * wb)
            )
    run = build_run(
        mesh, table, rule, sources,
        [Receiver("probe", [mid, mid, z_rec], ("vz",))],
        courant=courant, t_end=ref_win[1], backend=backend,
    )
    res = execute(run)
    t = res.seismogram.times
    v = res.seismogram.data[:, 0]

    def peak(win):
        m = (t >= win[0]) & (t <= win[1])
        return float(np.max(np.abs(v[m])))

    return AbsorbingColumnReport(
        reflected_fraction=peak(ref_win) / peak(inc_win),
        max_boundary_power=run.max_boundary_power,
        config_hash=_hash_params(f0=f0, degree=degree, h=element_size, courant=courant),
    )


# ---------------------------------------------------------------------------
# spectral convergence on a standing mode


@dataclass
class ConvergenceReport:
    degrees: tuple
    errors: tuple
    dts: tuple
    dt_floor_hit: tuple  # True where the dt policy gave up before stabilising
    config_hash: str

    def ratio(self, i: int) -> float:
        return self.errors[i] / self.errors[i + 1]


def _standing_mode_error(degree, elements_z, element_size, n_periods, dt) -> float:
    table = builtin_dolphin_table()
    c = table.by_name("water").vp
    length = elements_z * element_size
    mesh = voxels_to_hexmesh(water_box((1, 1, elements_z), element_size), boundary_policy={})
    rule = gll_rule(degree)
    run = build_run(mesh, table, rule, [], [], grid=TimeGrid(dt=dt, n_steps=0, t_end=0.0, courant=0.0))
    freq = c / (2 * length)
    t_end = n_periods / freq
    n_steps = int(round(t_end / dt))
    run.grid = TimeGrid(dt=dt, n_steps=n_steps, t_end=t_end, courant=0.0)
    z = run.dofmap.coords[run.dofmap.is_fluid, 2]
    mode = np.cos(np.pi * z / length)
    run.state.phi[:] = mode
    run.state.phi_ddot = -run.ops.apply_acoustic_stiffness(run.state.phi) / run.mass.m_fluid
    for _ in range(n_steps):
        newmark_step(run)
    omega = np.pi * c / length
    exact = mode * np.cos(omega * n_steps * dt)
    return float(np.linalg.norm(run.state.phi - exact) / np.linalg.norm(exact))


def convergence_study(*, degrees=(2, 4, 6), elements_z=2, element_size=2.5e-2,
                      n_periods=2, courant0=0.3, max_halvings=12,
                      change_tol=0.05) -> ConvergenceReport:
    """Standing-mode error per polynomial degree, with dt halved until the
    spatial error dominates (change below ``change_tol``)."""
    table = builtin_dolphin_table()
    errors, dts, floor = [], [], []
    for degree in degrees:
        mesh = voxels_to_hexmesh(water_box((1, 1, elements_z), element_size), boundary_policy={})
        rule = gll_rule(degree)
        dt = compute_dt(mesh, table, rule, courant0).dt
        err = _standing_mode_error(degree, elements_z, element_size, n_periods, dt)
        hit_floor = True
        for _ in range(max_halvings):
            dt *= 0.5
            err_new = _standing_mode_error(degree, elements_z, element_size, n_periods, dt)
            change = abs(err_new - err) / max(err_new, 1e-300)
            err = err_new
            if change < change_tol:
                hit_floor = False
                break
        errors.append(err)
        dts.append(dt)
        floor.append(hit_floor)
    return ConvergenceReport(
        degrees=tuple(degrees),
        errors=tuple(errors),
        dts=tuple(dts),
        dt_floor_hit=tuple(floor),
        config_hash=_hash_params(degrees=tuple(degrees), elements_z=elements_z,
                                 element_size=element_size, n_periods=n_periods),
    )


def format_report(obj) -> str:
    """Key-value text block of any report dataclass."""
    lines = []
    for k, v in vars(obj).items():
        if isinstance(v, np.ndarray):
            continue
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"
