"""Hexahedral meshes: voxel overlay-grid generation, trilinear geometry at
GLL points, scaled-Jacobian quality, and the SHEX1/SVOX1 text formats.

Corner ordering convention (documented for the file format): bottom face
counter-clockwise viewed from +z, then the top face in the same order,
i.e. reference corners
    0:(-1,-1,-1) 1:(+1,-1,-1) 2:(+1,+1,-1) 3:(-1,+1,-1)
    4:(-1,-1,+1) 5:(+1,-1,+1) 6:(+1,+1,+1) 7:(-1,+1,+1)
Local face numbering: 0:-x 1:+x 2:-y 3:+y 4:-z 5:+z.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .gll_basis import GllRule

# reference corner coordinates, shape (8, 3)
CORNER_REF = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)

# corner ids of each local face (0:-x 1:+x 2:-y 3:+y 4:-z 5:+z)
FACE_CORNERS = np.array(
    [
        [0, 3, 7, 4],
        [1, 2, 6, 5],
        [0, 1, 5, 4],
        [3, 2, 6, 7],
        [0, 1, 2, 3],
        [4, 5, 6, 7],
    ],
    dtype=np.int64,
)

# (fixed axis, fixed value) per local face
FACE_AXIS = [(0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0), (2, -1.0), (2, 1.0)]

BOUNDARY_SIDES = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")


class MeshError(ValueError):
    pass


class EmptyVolumeError(MeshError):
    pass


class InvertedElementError(MeshError):
    pass


class MeshUnusableError(MeshError):
    pass


class MeshQualityWarning(UserWarning):
    pass


@dataclass
class HexMesh:
    """Conformal hex-8 mesh with per-element material ids and named face sets.

    face_sets maps a set name (e.g. "absorbing", "roller") to a list of
    (element id, local face 0..5) pairs.
    """

    nodes: np.ndarray  # (n_nodes, 3) float64, meters
    elements: np.ndarray  # (n_elems, 8) int64
    materials: np.ndarray  # (n_elems,) int64
    face_sets: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def validate(self):
        if self.elements.shape[0] == 0:
            raise MeshError("mesh has no elements")
        if np.any(self.elements < 0) or np.any(self.elements >= self.n_nodes):
            raise MeshError("element references a nonexistent node")
        for e in range(self.n_elements):
            if len(set(self.elements[e])) != 8:
                raise MeshError(f"element {e} does not reference 8 distinct nodes")
        faces = self.face_table()
        for name, pairs in self.face_sets.items():
            for elem, lf in pairs:
                if not (0 <= elem < self.n_elements and 0 <= lf < 6):
                    raise MeshError(f"face set {name!r} references invalid face ({elem},{lf})")
                key = face_key(self.elements[elem], lf)
                if len(faces[key]) > 1:
                    raise MeshError(
                        f"face set {name!r} contains interior face ({elem},{lf})"
                    )

    def face_table(self):
        """Map sorted-corner face key -> list of (element, local face)."""
        faces = {}
        for e in range(self.n_elements):
            conn = self.elements[e]
            for lf in range(6):
                faces.setdefault(face_key(conn, lf), []).append((e, lf))
        for key, owners in faces.items():
            if len(owners) > 2:
                raise MeshError(f"face {key} shared by {len(owners)} elements (non-conformal)")
        return faces

    def exterior_faces(self):
        return [owners[0] for owners in self.face_table().values() if len(owners) == 1]


def face_key(conn, local_face) -> tuple:
    return tuple(sorted(conn[FACE_CORNERS[local_face]].tolist()))


@dataclass
class VoxelVolume:
    """Cartesian voxel grid carrying one material id (or HU value) per cell."""

    dims: tuple  # (nx, ny, nz)
    spacing: tuple  # (sx, sy, sz) meters
    values: np.ndarray  # (nx, ny, nz) int64

    def __post_init__(self):
        nx, ny, nz = self.dims
        if nx < 1 or ny < 1 or nz < 1:
            raise EmptyVolumeError(f"voxel volume has a zero-size axis: {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise MeshError(f"voxel spacing must be positive: {self.spacing}")
        self.values = np.asarray(self.values, dtype=np.int64).reshape(self.dims)


def voxels_to_hexmesh(vol: VoxelVolume, boundary_policy=None) -> HexMesh:
    """One hexahedral element per voxel on the lattice of voxel corners.

    boundary_policy maps each box side (xmin..zmax) to a face-set name or
    None; the default assigns all six sides to "absorbing".
    """
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    if boundary_policy is None:
        boundary_policy = {side: "absorbing" for side in BOUNDARY_SIDES}
    unknown = set(boundary_policy) - set(BOUNDARY_SIDES)
    if unknown:
        raise MeshError(f"unknown boundary sides {sorted(unknown)}")

    xs = np.arange(nx + 1) * sx
    ys = np.arange(ny + 1) * sy
    zs = np.arange(nz + 1) * sz
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    # node id = i + (nx+1)*(j + (ny+1)*k)
    nodes = np.stack(
        [gx.transpose(2, 1, 0).ravel(), gy.transpose(2, 1, 0).ravel(), gz.transpose(2, 1, 0).ravel()],
        axis=1,
    )

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    i = i.transpose(2, 1, 0).ravel()
    j = j.transpose(2, 1, 0).ravel()
    k = k.transpose(2, 1, 0).ravel()
    elements = np.stack(
        [
            nid(i, j, k),
            nid(i + 1, j, k),
            nid(i + 1, j + 1, k),
            nid(i, j + 1, k),
            nid(i, j, k + 1),
            nid(i + 1, j, k + 1),
            nid(i + 1, j + 1, k + 1),
            nid(i, j + 1, k + 1),
        ],
        axis=1,
    ).astype(np.int64)
    materials = vol.values[i, j, k].astype(np.int64)

    face_sets = {}

    def add(side, mask, local_face):
        name = boundary_policy.get(side)
        if not name:
            return
        elems = np.nonzero(mask)[0]
        face_sets.setdefault(name, []).extend((int(e), local_face) for e in elems)

    add("xmin", i == 0, 0)
    add("xmax", i == nx - 1, 1)
    add("ymin", j == 0, 2)
    add("ymax", j == ny - 1, 3)
    add("zmin", k == 0, 4)
    add("zmax", k == nz - 1, 5)

    return HexMesh(nodes=nodes, elements=elements, materials=materials, face_sets=face_sets)


# ---------------------------------------------------------------------------
# geometry at GLL points


def shape_functions(ref_points: np.ndarray):
    """Trilinear shape values and gradients at reference points.

    Returns (S, dS) with S: (nq, 8) and dS: (nq, 8, 3).
    """
    rp = np.atleast_2d(ref_points)
    xi, eta, zeta = rp[:, 0:1], rp[:, 1:2], rp[:, 2:3]
    cx, cy, cz = CORNER_REF[:, 0], CORNER_REF[:, 1], CORNER_REF[:, 2]
    fx, fy, fz = 1 + xi * cx, 1 + eta * cy, 1 + zeta * cz
    s = 0.125 * fx * fy * fz
    ds = np.empty((rp.shape[0], 8, 3))
    ds[:, :, 0] = 0.125 * cx * fy * fz
    ds[:, :, 1] = 0.125 * fx * cy * fz
    ds[:, :, 2] = 0.125 * fx * fy * cz
    return s, ds


def gll_grid_ref(rule: GllRule) -> np.ndarray:
    """Reference coordinates of the (N+1)^3 GLL grid, local index
    q = (i*p + j)*p + k with i along xi."""
    x = rule.nodes
    p = rule.n_points
    xi, eta, zeta = np.meshgrid(x, x, x, indexing="ij")
    return np.stack([xi.ravel(), eta.ravel(), zeta.ravel()], axis=1).reshape(p**3, 3)


def face_grid_ref(rule: GllRule, local_face: int) -> np.ndarray:
    """Reference coordinates of the (N+1)^2 GLL grid on a local face.

    In-face ordering is (a, b) = the two free axes in axis order, a slowest.
    """
    x = rule.nodes
    p = rule.n_points
    axis, value = FACE_AXIS[local_face]
    a, b = [ax for ax in range(3) if ax != axis]
    pts = np.empty((p * p, 3))
    va, vb = np.meshgrid(x, x, indexing="ij")
    pts[:, axis] = value
    pts[:, a] = va.ravel()
    pts[:, b] = vb.ravel()
    return pts


def face_local_indices(rule: GllRule, local_face: int) -> np.ndarray:
    """Element-local flat indices q of the face GLL points, face ordering."""
    p = rule.n_points
    axis, value = FACE_AXIS[local_face]
    fixed = 0 if value < 0 else p - 1
    a, b = [ax for ax in range(3) if ax != axis]
    idx = np.empty((p, p), dtype=np.int64)
    for ia in range(p):
        for ib in range(p):
            ijk = [0, 0, 0]
            ijk[axis] = fixed
            ijk[a] = ia
            ijk[b] = ib
            idx[ia, ib] = (ijk[0] * p + ijk[1]) * p + ijk[2]
    return idx.ravel()


@dataclass
class ElementGeometry:
    """Jacobian data of the trilinear map at the GLL points of one element."""

    element: int
    jacobian: np.ndarray  # (p3, 3, 3) dx_a/dxi_b
    det: np.ndarray  # (p3,)
    inverse: np.ndarray  # (p3, 3, 3) dxi_a/dx_b
    face_normals: np.ndarray  # (6, p2, 3) unit outward
    face_jacobians: np.ndarray  # (6, p2) surface measure |t_a x t_b|


def _jacobians_at(corners: np.ndarray, ref_points: np.ndarray):
    _, ds = shape_functions(ref_points)
    # jac[q, a, b] = sum_c corners[c, a] * ds[q, c, b]
    return np.einsum("ca,qcb->qab", corners, ds)


def element_geometry(mesh: HexMesh, elem: int, rule: GllRule) -> ElementGeometry:
    """Jacobians, determinants, inverses and face data for one element."""
    corners = mesh.nodes[mesh.elements[elem]]
    jac = _jacobians_at(corners, gll_grid_ref(rule))
    det = np.linalg.det(jac)
    if np.any(det <= 0):
        raise InvertedElementError(
            f"element {elem}: non-positive Jacobian determinant at a GLL point"
        )
    inv = np.linalg.inv(jac)
    p = rule.n_points
    normals = np.empty((6, p * p, 3))
    sjac = np.empty((6, p * p))
    for lf in range(6):
        axis, value = FACE_AXIS[lf]
        a, b = [ax for ax in range(3) if ax != axis]
        fj = _jacobians_at(corners, face_grid_ref(rule, lf))
        t_a, t_b = fj[:, :, a], fj[:, :, b]
        n = np.cross(t_a, t_b)
        mag = np.linalg.norm(n, axis=1)
        if np.any(mag <= 0):
            raise InvertedElementError(f"element {elem}: degenerate face {lf}")
        n /= mag[:, None]
        # orient outward: against the physical image of the outward ref axis
        outward = fj[:, :, axis] * value
        flip = np.sum(n * outward, axis=1) < 0
        n[flip] *= -1.0
        normals[lf] = n
        sjac[lf] = mag
    return ElementGeometry(
        element=elem, jacobian=jac, det=det, inverse=inv, face_normals=normals, face_jacobians=sjac
    )


def all_jacobians(mesh: HexMesh, rule: GllRule):
    """Batched Jacobian data for every element: (jac, det, inv) arrays.

    Raises InvertedElementError naming the first offending element.
    """
    corners = mesh.nodes[mesh.elements]  # (nE, 8, 3)
    _, ds = shape_functions(gll_grid_ref(rule))  # (p3, 8, 3)
    jac = np.einsum("eca,qcb->eqab", corners, ds)
    det = np.linalg.det(jac)
    if np.any(det <= 0):
        bad = int(np.argwhere(np.any(det <= 0, axis=1))[0][0])
        raise InvertedElementError(
            f"element {bad}: non-positive Jacobian determinant at a GLL point"
        )
    inv = np.linalg.inv(jac)
    return jac, det, inv


# ---------------------------------------------------------------------------
# quality

# per-corner: the three axis neighbours (x, y, z) in the corner ordering
_CORNER_NEIGHBOURS = np.array(
    [
        [1, 3, 4],
        [0, 2, 5],
        [3, 1, 6],
        [2, 0, 7],
        [5, 7, 0],
        [4, 6, 1],
        [7, 5, 2],
        [6, 4, 3],
    ],
    dtype=np.int64,
)
# sign making the reference cube determinant +1 at every corner
_CORNER_SIGN = -np.prod(CORNER_REF, axis=1)


def scaled_jacobian(mesh: HexMesh, elem: int) -> float:
    """Minimum over the 8 corners of the unit-edge-vector determinant.

    1 for a perfect cuboid; <= 0 for degenerate or inverted corners. A
    zero-length edge makes the element degenerate and returns 0.
    """
    corners = mesh.nodes[mesh.elements[elem]]
    worst = 1.0
    for c in range(8):
        edges = corners[_CORNER_NEIGHBOURS[c]] - corners[c]
        norms = np.linalg.norm(edges, axis=1)
        if np.any(norms == 0.0):
            return 0.0
        d = float(np.linalg.det(edges / norms[:, None])) * _CORNER_SIGN[c]
        worst = min(worst, d)
    return worst


@dataclass
class QualityReport:
    average: float
    std_dev: float
    min: float
    max: float
    below_ideal: list  # elements with scaled Jacobian < 0.2
    values: np.ndarray


def quality_report(mesh: HexMesh, ideal_floor: float = 0.2) -> QualityReport:
    """Scaled-Jacobian statistics over all elements.

    Elements below the ideal floor trigger a MeshQualityWarning; any element
    at or below zero raises MeshUnusableError listing the offenders.
    """
    if mesh.n_elements == 0:
        raise MeshError("quality report of an empty mesh")
    vals = np.array([scaled_jacobian(mesh, e) for e in range(mesh.n_elements)])
    unusable = np.nonzero(vals <= 0.0)[0]
    if unusable.size:
        raise MeshUnusableError(
            "mesh unusable: scaled Jacobian <= 0 for elements "
            + ", ".join(map(str, unusable.tolist()))
        )
    below = np.nonzero(vals < ideal_floor)[0].tolist()
    if below:
        warnings.warn(
            f"{len(below)} elements below scaled-Jacobian {ideal_floor}: {below}",
            MeshQualityWarning,
            stacklevel=2,
        )
    return QualityReport(
        average=float(np.mean(vals)),
        std_dev=float(np.std(vals)),
        min=float(np.min(vals)),
        max=float(np.max(vals)),
        below_ideal=below,
        values=vals,
    )


def min_gll_spacing(mesh: HexMesh, rule: GllRule) -> float:
    """Minimum physical distance between adjacent GLL points, all elements
    and directions."""
    return float(np.min(per_element_min_gll_spacing(mesh, rule)))


def per_element_min_gll_spacing(mesh: HexMesh, rule: GllRule) -> np.ndarray:
    corners = mesh.nodes[mesh.elements]
    s, _ = shape_functions(gll_grid_ref(rule))  # (p3, 8)
    p = rule.n_points
    pts = np.einsum("qc,eca->eqa", s, corners).reshape(mesh.n_elements, p, p, p, 3)
    out = np.full(mesh.n_elements, np.inf)
    for axis in range(3):
        d = np.diff(pts, axis=1 + axis)
        dist = np.sqrt(np.sum(d * d, axis=-1))
        out = np.minimum(out, dist.reshape(mesh.n_elements, -1).min(axis=1))
    return out


# ---------------------------------------------------------------------------
# SHEX1 / SVOX1 text formats


def write_shex(mesh: HexMesh, path):
    """SHEX1: header, node lines, element lines, face-set blocks. Node and
    element ids are 0-based; coordinates use %.17g."""
    with open(path, "w") as f:
        f.write(f"SHEX1 {mesh.n_nodes} {mesh.n_elements} {len(mesh.face_sets)}\n")
        for i, (x, y, z) in enumerate(mesh.nodes):
            f.write(f"{i} {x:.17g} {y:.17g} {z:.17g}\n")
        for e in range(mesh.n_elements):
            conn = " ".join(map(str, mesh.elements[e].tolist()))
            f.write(f"{e} {conn} {mesh.materials[e]}\n")
        for name in sorted(mesh.face_sets):
            pairs = mesh.face_sets[name]
            f.write(f"FACESET {name} {len(pairs)}\n")
            for elem, lf in pairs:
                f.write(f"{elem} {lf}\n")


def read_shex(path) -> HexMesh:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 4 or header[0] != "SHEX1":
            raise MeshError(f"{path}: not a SHEX1 file")
        n_nodes, n_elems, n_sets = map(int, header[1:])
        nodes = np.empty((n_nodes, 3))
        for _ in range(n_nodes):
            parts = f.readline().split()
            nodes[int(parts[0])] = [float(parts[1]), float(parts[2]), float(parts[3])]
        elements = np.empty((n_elems, 8), dtype=np.int64)
        materials = np.empty(n_elems, dtype=np.int64)
        for _ in range(n_elems):
            parts = f.readline().split()
            e = int(parts[0])
            elements[e] = [int(x) for x in parts[1:9]]
            materials[e] = int(parts[9])
        face_sets = {}
        for _ in range(n_sets):
            parts = f.readline().split()
            if not parts or parts[0] != "FACESET":
                raise MeshError(f"{path}: malformed FACESET block")
            name, count = parts[1], int(parts[2])
            pairs = []
            for _ in range(count):
                e, lf = f.readline().split()
                pairs.append((int(e), int(lf)))
            face_sets[name] = pairs
    mesh = HexMesh(nodes=nodes, elements=elements, materials=materials, face_sets=face_sets)
    mesh.validate()
    return mesh


def write_svox(vol: VoxelVolume, path):
    """SVOX1: header `SVOX1 nx ny nz sx sy sz`, then material ids x-fastest."""
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    with open(path, "w") as f:
        f.write(f"SVOX1 {nx} {ny} {nz} {sx:.17g} {sy:.17g} {sz:.17g}\n")
        flat = vol.values.transpose(2, 1, 0).ravel()  # x fastest
        for k in range(0, flat.size, 16):
            f.write(" ".join(map(str, flat[k : k + 16].tolist())) + "\n")


def read_svox(path) -> VoxelVolume:
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 7 or header[0] != "SVOX1":
            raise MeshError(f"{path}: not a SVOX1 file")
        nx, ny, nz = map(int, header[1:4])
        spacing = tuple(map(float, header[4:7]))
        data = np.array(f.read().split(), dtype=np.int64)
    if data.size != nx * ny * nz:
        raise MeshError(f"{path}: expected {nx * ny * nz} voxel values, got {data.size}")
    values = data.reshape(nz, ny, nx).transpose(2, 1, 0)
    return VoxelVolume(dims=(nx, ny, nz), spacing=spacing, values=values)
