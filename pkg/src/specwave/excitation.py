"""Source time functions, point and plane-wave sources, and receiver
recording with in-element interpolation.

Acoustic point sources are calibrated so that the recorded pressure of the
analytic spherical wave is amplitude * s(t - r/c) / (4 pi r): the potential
equation is forced with -(1/rho) times the exact second antiderivative of
the tone burst (pressure is minus the second time derivative of the
potential). The antiderivatives are evaluated in closed form from the
piecewise sinusoidal decomposition of the Tukey-windowed burst.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hexmesh as hm
from .gll_basis import GllRule, lagrange_all, lagrange_deriv_all
from .material_model import ACOUSTIC, domain_kind


class SourcePlacementError(ValueError):
    pass


class DomainMismatchError(ValueError):
    pass


class ChannelMismatchError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Tukey tone burst


def _term_value(c, w, ph, t):
    return c * np.sin(w * t + ph)


def _term_anti1(c, w, ph, t):
    if w == 0.0:
        return c * np.sin(ph) * t
    return -(c / w) * np.cos(w * t + ph)


def _term_anti2(c, w, ph, t):
    if w == 0.0:
        return 0.5 * c * np.sin(ph) * t * t
    return -(c / (w * w)) * np.sin(w * t + ph)


@dataclass
class SourceTimeFunction:
    """Tukey-windowed tone burst s(t) = w(t) sin(2 pi f0 t) on [0, T].

    T = n_cycles / f0; outside [0, T] the value is exactly zero. The
    closed-form first and second antiderivatives (zero at t = 0) are used for
    calibrated acoustic injection; after T the second antiderivative keeps a
    constant tail (the burst has nonzero second moment).
    """

    f0: float
    n_cycles: int
    tukey_alpha: float
    amplitude: float = 1.0
    window_length: float = field(init=False)
    _regions: list = field(init=False, repr=False)

    def __post_init__(self):
        if self.f0 <= 0:
            raise ValueError("f0 must be positive")
        if self.n_cycles < 1:
            raise ValueError("n_cycles must be >= 1")
        if not 0.0 <= self.tukey_alpha <= 1.0:
            raise ValueError("tukey_alpha must be in [0, 1]")
        t_len = self.n_cycles / self.f0
        self.window_length = t_len
        omega = 2.0 * np.pi * self.f0
        regions = []  # (t_lo, t_hi, [(c, w, phase)])
        if self.tukey_alpha == 0.0:
            regions.append((0.0, t_len, [(1.0, omega, 0.0)]))
        else:
            taper = 0.5 * self.tukey_alpha * t_len
            a = np.pi / taper
            rise = [(0.5, omega, 0.0), (-0.25, omega + a, 0.0), (-0.25, omega - a, 0.0)]
            regions.append((0.0, taper, rise))
            if t_len - 2 * taper > 1e-300:
                regions.append((taper, t_len - taper, [(1.0, omega, 0.0)]))
            psi = a * (taper - t_len)
            fall = [(0.5, omega, 0.0), (0.25, omega + a, psi), (0.25, omega - a, -psi)]
            regions.append((t_len - taper, t_len, fall))
        # integration constants for C1 continuity of the antiderivatives
        compiled = []
        i1_prev = 0.0
        i2_prev = 0.0
        for t_lo, t_hi, terms in regions:
            a1_lo = sum(_term_anti1(c, w, ph, t_lo) for c, w, ph in terms)
            c1 = i1_prev - a1_lo
            a2_lo = sum(_term_anti2(c, w, ph, t_lo) for c, w, ph in terms)
            c2 = i2_prev - c1 * t_lo - a2_lo
            compiled.append((t_lo, t_hi, terms, c1, c2))
            i1_prev = c1 + sum(_term_anti1(c, w, ph, t_hi) for c, w, ph in terms)
            i2_prev = c2 + c1 * t_hi + sum(_term_anti2(c, w, ph, t_hi) for c, w, ph in terms)
        self._regions = compiled
        self._i1_end = i1_prev
        self._i2_end = i2_prev

    def _region(self, t):
        for t_lo, t_hi, terms, c1, c2 in self._regions:
            if t <= t_hi:
                return terms, c1, c2
        return self._regions[-1][2:]

    def value(self, t: float) -> float:
        if t <= 0.0 or t >= self.window_length:
            return 0.0
        terms, _, _ = self._region(t)
        return self.amplitude * sum(_term_value(c, w, ph, t) for c, w, ph in terms)

    def anti1(self, t: float) -> float:
        """First antiderivative, zero at t = 0."""
        if t <= 0.0:
            return 0.0
        if t >= self.window_length:
            return self.amplitude * self._i1_end
        terms, c1, _ = self._region(t)
        return self.amplitude * (c1 + sum(_term_anti1(c, w, ph, t) for c, w, ph in terms))

    def anti2(self, t: float) -> float:
        """Second antiderivative, zero at t = 0; constant tail after T."""
        if t <= 0.0:
            return 0.0
        if t >= self.window_length:
            tail = self._i2_end + self._i1_end * (t - self.window_length)
            return self.amplitude * tail
        terms, c1, c2 = self._region(t)
        return self.amplitude * (
            c2 + c1 * t + sum(_term_anti2(c, w, ph, t) for c, w, ph in terms)
        )

    def sample(self, times) -> np.ndarray:
        return np.array([self.value(t) for t in np.asarray(times, dtype=float)])


def tone_burst(f0: float, n_cycles: int, tukey_alpha: float = 0.5, amplitude: float = 1.0) -> SourceTimeFunction:
    return SourceTimeFunction(f0=f0, n_cycles=n_cycles, tukey_alpha=tukey_alpha, amplitude=amplitude)


def stf_spectrum(stf: SourceTimeFunction, dt: float, pad_factor: int = 16):
    """Discrete Fourier magnitude of the burst sampled at the simulation dt.

    Returns (freqs, magnitude). Zero padding sharpens the null positions.
    """
    n = int(np.ceil(stf.window_length / dt)) + 1
    samples = stf.sample(np.arange(n) * dt)
    n_fft = 1
    while n_fft < n * pad_factor:
        n_fft *= 2
    mag = np.abs(np.fft.rfft(samples, n_fft))
    freqs = np.fft.rfftfreq(n_fft, dt)
    return freqs, mag


def spectrum_peak_and_nulls(freqs: np.ndarray, mag: np.ndarray):
    """Main-lobe peak frequency and the first spectral nulls on either side
    (first local minimum walking away from the peak)."""
    ipk = int(np.argmax(mag))
    i = ipk
    while i > 1 and mag[i - 1] < mag[i]:
        i -= 1
    null_lo = freqs[i]
    i = ipk
    while i < len(mag) - 2 and mag[i + 1] < mag[i]:
        i += 1
    null_hi = freqs[i]
    return freqs[ipk], null_lo, null_hi


# ---------------------------------------------------------------------------
# point location inside the mesh


def invert_trilinear(corners: np.ndarray, x: np.ndarray, tol: float = 1e-12):
    """Newton inversion of the trilinear map; returns reference coords."""
    xi = np.zeros(3)
    for _ in range(50):
        s, ds = hm.shape_functions(xi)
        r = s[0] @ corners - x
        jac = np.einsum("ca,cb->ab", corners, ds[0])
        step = np.linalg.solve(jac, r)
        xi -= step
        if np.max(np.abs(step)) < tol:
            break
    return xi


def locate_point(mesh: hm.HexMesh, x, coord_tol: float = 1e-9):
    """Containing element and reference coordinates of a physical point.

    Ties (points on shared faces) resolve to the lowest element id; points
    farther than coord_tol from every element raise SourcePlacementError.
    """
    x = np.asarray(x, dtype=float)
    corners_all = mesh.nodes[mesh.elements]
    lo = corners_all.min(axis=1) - coord_tol
    hi = corners_all.max(axis=1) + coord_tol
    candidates = np.nonzero(np.all((x >= lo) & (x <= hi), axis=1))[0]
    for e in candidates:
        corners = corners_all[e]
        xi = invert_trilinear(corners, x)
        if np.max(np.abs(xi)) <= 1.0 + 1e-12:
            return int(e), np.clip(xi, -1.0, 1.0)
        xi_c = np.clip(xi, -1.0, 1.0)
        s, _ = hm.shape_functions(xi_c)
        if np.linalg.norm(s[0] @ corners - x) <= coord_tol:
            return int(e), xi_c
    raise SourcePlacementError(f"point {x.tolist()} lies outside the mesh")


def interp_weights(rule: GllRule, xi) -> np.ndarray:
    """Tensor-product Lagrange weights at reference coords, local ordering."""
    lx = lagrange_all(rule, xi[0])
    ly = lagrange_all(rule, xi[1])
    lz = lagrange_all(rule, xi[2])
    return np.einsum("i,j,k->ijk", lx, ly, lz).ravel()


def grad_weights(rule: GllRule, corners: np.ndarray, xi) -> np.ndarray:
    """Physical-gradient interpolation weights, shape (p^3, 3)."""
    lx, ly, lz = (lagrange_all(rule, xi[a]) for a in range(3))
    dx, dy, dz = (lagrange_deriv_all(rule, xi[a]) for a in range(3))
    g_ref = np.stack(
        [
            np.einsum("i,j,k->ijk", dx, ly, lz).ravel(),
            np.einsum("i,j,k->ijk", lx, dy, lz).ravel(),
            np.einsum("i,j,k->ijk", lx, ly, dz).ravel(),
        ],
        axis=1,
    )
    _, ds = hm.shape_functions(np.asarray(xi, dtype=float))
    jac = np.einsum("ca,cb->ab", corners, ds[0])
    return g_ref @ np.linalg.inv(jac)


# ---------------------------------------------------------------------------
# sources


@dataclass
class PointSource:
    """Point excitation: vector force (solid) or calibrated pressure (fluid).

    ``scale`` multiplies the stf amplitude per source (used by tapered
    arrays and force sheets sharing a single stf)."""

    position: np.ndarray
    kind: str  # "force" | "pressure"
    stf: SourceTimeFunction
    direction: np.ndarray | None = None  # unit vector, forces only
    delay: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.kind not in ("force", "pressure"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.kind == "force":
            if self.direction is None:
                raise ValueError("force source needs a direction")
            d = np.asarray(self.direction, dtype=float)
            n = np.linalg.norm(d)
            if n == 0:
                raise ValueError("force direction must be nonzero")
            self.direction = d / n


@dataclass
class PlaneWaveArray:
    """Tapered grid of simultaneous acoustic point sources on an axis-aligned
    plane: amplitude 1 inside r_flat, Gaussian decay of width sigma outside."""

    axis: int  # plane normal axis (propagation axis)
    plane_position: float
    spacing: float
    stf: SourceTimeFunction
    direction: float = -1.0  # informational: +-1 along axis
    r_flat: float | None = None  # defaults: 35% / 15% of the half-width
    sigma: float | None = None
    delay: float = 0.0

    def amplitude_profile(self, d: np.ndarray, r_flat: float, sigma: float) -> np.ndarray:
        amp = np.ones_like(d)
        outside = d > r_flat
        amp[outside] = np.exp(-(((d[outside] - r_flat) / sigma) ** 2))
        return amp


def build_plane_wave_array(pw: PlaneWaveArray, mesh: hm.HexMesh, table, water_vp: float):
    """Expand the array into (position, amplitude) point-source samples.

    The source-point spacing must resolve the wavelength: spacing <=
    lambda_min/4 with lambda_min = water_vp / f0.
    """
    lam_min = water_vp / pw.stf.f0
    if pw.spacing > lam_min / 4.0 + 1e-15:
        raise SourcePlacementError(
            f"plane-wave spacing {pw.spacing:.6g} exceeds lambda/4 = {lam_min / 4.0:.6g}"
        )
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    t_axes = [a for a in range(3) if a != pw.axis]
    centre = 0.5 * (lo + hi)
    half_widths = [0.5 * (hi[a] - lo[a]) for a in t_axes]
    half = min(half_widths)
    r_flat = 0.35 * half if pw.r_flat is None else pw.r_flat
    sigma = 0.15 * half if pw.sigma is None else pw.sigma

    points, dists = [], []
    margin = 1e-12
    for a_off in _centred_range(half_widths[0] - margin, pw.spacing):
        for b_off in _centred_range(half_widths[1] - margin, pw.spacing):
            p = centre.copy()
            p[pw.axis] = pw.plane_position
            p[t_axes[0]] = centre[t_axes[0]] + a_off
            p[t_axes[1]] = centre[t_axes[1]] + b_off
            points.append(p)
            dists.append(np.hypot(a_off, b_off))
    amps = pw.amplitude_profile(np.asarray(dists), r_flat, sigma)
    return np.asarray(points), amps


def _centred_range(half_width: float, step: float) -> np.ndarray:
    n = int(np.floor(half_width / step))
    return np.arange(-n, n + 1) * step


class CompiledSources:
    """Sources resolved against a mesh/dofmap, ready for the time loop.

    Fluid monopole contributions with a shared stf are merged into one
    coefficient vector so a plane-wave array costs a single evaluation.
    """

    def __init__(self, mesh, table, rule, dofmap, sources):
        self._fluid_groups = []  # (dofs, coefs, stf, delay)
        self._solid_groups = []  # (dofs, weight_matrix, stf, delay)
        merge = {}
        for src in sources:
            elem, xi = locate_point(mesh, src.position)
            props = table.get(mesh.materials[elem])
            w = interp_weights(rule, xi)
            nodes = dofmap.elem_nodes[elem]
            if src.kind == "pressure":
                if domain_kind(props) != ACOUSTIC:
                    raise DomainMismatchError(
                        f"pressure source at {src.position.tolist()} sits in elastic element {elem}"
                    )
                key = (id(src.stf), src.delay)
                bucket = merge.setdefault(key, (src.stf, src.delay, {}))
                dofs = dofmap.fluid_index[nodes]
                # calibrated monopole: F = -(scale/rho) * anti2(t) * weights
                for dof, wv in zip(dofs, w):
                    bucket[2][int(dof)] = bucket[2].get(int(dof), 0.0) - src.scale * wv / props.rho
            else:
                if domain_kind(props) == ACOUSTIC:
                    raise DomainMismatchError(
                        f"force source at {src.position.tolist()} sits in fluid element {elem}"
                    )
                dofs = dofmap.solid_index[nodes]
                mat = src.scale * w[:, None] * src.direction[None, :]
                self._solid_groups.append((dofs, mat, src.stf, src.delay))
        for stf, delay, coefs in merge.values():
            items = sorted(coefs.items())
            dofs = np.array([d for d, _ in items], dtype=np.int64)
            vals = np.array([v for _, v in items])
            self._fluid_groups.append((dofs, vals, stf, delay))

    def add_fluid(self, f_fluid: np.ndarray, t: float):
        for dofs, coefs, stf, delay in self._fluid_groups:
            drive = stf.anti2(t - delay)
            if drive != 0.0:
                f_fluid[dofs] += coefs * drive

    def add_solid(self, f_solid: np.ndarray, t: float):
        for dofs, mat, stf, delay in self._solid_groups:
            s = stf.value(t - delay)
            if s != 0.0:
                f_solid[dofs] += mat * s

    def active(self, t: float) -> bool:
        for _, _, stf, delay in self._fluid_groups:
            if t - delay > 0.0:
                return True
        for _, _, stf, delay in self._solid_groups:
            if 0.0 < t - delay < stf.window_length:
                return True
        return False


def inject_point_source(source: PointSource, mesh, table, rule, dofmap, t: float):
    """Load vectors (f_fluid, f_solid) of one source at time t."""
    compiled = CompiledSources(mesh, table, rule, dofmap, [source])
    f_fluid = np.zeros(dofmap.n_fluid)
    f_solid = np.zeros((dofmap.n_solid, 3))
    compiled.add_fluid(f_fluid, t)
    compiled.add_solid(f_solid, t)
    return f_fluid, f_solid


# ---------------------------------------------------------------------------
# receivers


PRESSURE = "pressure"
VELOCITY_CHANNELS = {"vx": 0, "vy": 1, "vz": 2}


@dataclass
class Receiver:
    name: str
    position: np.ndarray
    channels: tuple  # subset of ("pressure", "vx", "vy", "vz")

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        bad = [c for c in self.channels if c != PRESSURE and c not in VELOCITY_CHANNELS]
        if bad:
            raise ValueError(f"receiver {self.name}: unknown channels {bad}")


@dataclass
class Seismogram:
    times: np.ndarray
    data: np.ndarray  # (n_samples, n_channels)
    names: list  # "<receiver>_<quantity>"

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.names.index(name)]

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("t_seconds," + ",".join(self.names) + "\n")
            for i, t in enumerate(self.times):
                row = ",".join(f"{v:.17g}" for v in self.data[i])
                f.write(f"{t:.17g},{row}\n")


def read_seismogram_csv(path) -> Seismogram:
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = [list(map(float, line.split(","))) for line in f if line.strip()]
    arr = np.asarray(rows)
    return Seismogram(times=arr[:, 0], data=arr[:, 1:], names=header[1:])


class CompiledReceivers:
    """Receivers resolved to element interpolation weights."""

    def __init__(self, mesh, table, rule, dofmap, receivers):
        self._entries = []
        self.names = []
        for rec in receivers:
            elem, xi = locate_point(mesh, rec.position)
            props = table.get(mesh.materials[elem])
            acoustic = domain_kind(props) == ACOUSTIC
            w = interp_weights(rule, xi)
            nodes = dofmap.elem_nodes[elem]
            gw = None
            if acoustic and any(c in VELOCITY_CHANNELS for c in rec.channels):
                gw = grad_weights(rule, mesh.nodes[mesh.elements[elem]], xi)
            for ch in rec.channels:
                if ch == PRESSURE and not acoustic:
                    raise ChannelMismatchError(
                        f"receiver {rec.name}: pressure requested in solid element {elem}"
                    )
                self.names.append(f"{rec.name}_{ch}")
            dofs = dofmap.fluid_index[nodes] if acoustic else dofmap.solid_index[nodes]
            self._entries.append((rec, acoustic, dofs, w, gw, props.rho))

    @property
    def n_channels(self) -> int:
        return len(self.names)

    def sample(self, state, out_row: np.ndarray):
        col = 0
        for rec, acoustic, dofs, w, gw, rho in self._entries:
            if acoustic:
                vel = None
                for ch in rec.channels:
                    if ch == PRESSURE:
                        out_row[col] = -(state.phi_ddot[dofs] @ w)
                    else:
                        if vel is None:
                            vel = (state.phi_dot[dofs] @ gw) / rho
                        out_row[col] = vel[VELOCITY_CHANNELS[ch]]
                    col += 1
            else:
                vals = w @ state.u_dot[dofs]
                for ch in rec.channels:
                    out_row[col] = vals[VELOCITY_CHANNELS[ch]]
                    col += 1
