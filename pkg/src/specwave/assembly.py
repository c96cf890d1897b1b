"""Global DOF mapping and matrix-free evaluation of the coupled block system:
diagonal mass, acoustic and elastic stiffness actions, fluid-solid coupling
surface terms, and first-order paraxial (Stacey) absorbing tractions.

Variational convention (all pressure output depends on it): the acoustic
potential carries mass weighted by 1/(rho*vp^2) and stiffness weighted by
1/rho; particle displacement in the fluid is grad(phi)/rho and pressure is
recovered as p = -phi_ddot. With that choice the fluid row is forced by the
normal solid displacement u.n on interfaces and the solid row by the
pressure traction, which keeps the coupled system self-adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hexmesh as hm
from . import kernels
from .gll_basis import GllRule, derivative_matrix
from .material_model import ACOUSTIC, MaterialTable, domain_kind

_COORD_TOL = 1e-9  # node identity tolerance, meters

_CORNER_OF_BITS = {
    (0, 0, 0): 0,
    (1, 0, 0): 1,
    (1, 1, 0): 2,
    (0, 1, 0): 3,
    (0, 0, 1): 4,
    (1, 0, 1): 5,
    (1, 1, 1): 6,
    (0, 1, 1): 7,
}


class AssemblyError(RuntimeError):
    pass


class NonConformalMeshError(AssemblyError):
    pass


class AssemblyIntegrityError(AssemblyError):
    pass


class SetupError(AssemblyError):
    pass


@dataclass
class DofMap:
    """Shared global GLL numbering with per-node domain membership.

    Nodes touching an acoustic element carry one scalar potential DOF; nodes
    touching an elastic element carry three displacement DOFs; interface
    nodes carry both.
    """

    coords: np.ndarray  # (n_nodes, 3)
    elem_nodes: np.ndarray  # (n_elems, p3) global node ids
    is_fluid: np.ndarray
    is_solid: np.ndarray
    fluid_index: np.ndarray  # (n_nodes,) index into fluid arrays or -1
    solid_index: np.ndarray
    acoustic_elements: np.ndarray  # element ids, mesh order
    elastic_elements: np.ndarray
    idx_fluid: np.ndarray  # (nEa, p3) fluid DOF gather lists
    idx_solid: np.ndarray  # (nEe, p3)
    degree: int

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def n_fluid(self) -> int:
        return int(self.is_fluid.sum())

    @property
    def n_solid(self) -> int:
        return int(self.is_solid.sum())

    @property
    def n_interface(self) -> int:
        return int((self.is_fluid & self.is_solid).sum())


def _canonical_face_point(corner_ids, s, t, n):
    """Orientation-independent key for a point (s, t) on a quad face.

    corner_ids = (n00, n10, n01, n11) at (s,t) in {0,n}^2. Returns a tuple
    identical for both elements sharing the face.
    """
    n00, n10, n01, n11 = corner_ids
    m = min(corner_ids)
    if m == n00:
        a, b, nb_a, nb_b, diag = s, t, n10, n01, n11
    elif m == n10:
        a, b, nb_a, nb_b, diag = n - s, t, n00, n11, n01
    elif m == n01:
        a, b, nb_a, nb_b, diag = s, n - t, n11, n00, n10
    else:
        a, b, nb_a, nb_b, diag = n - s, n - t, n01, n10, n00
    if nb_a <= nb_b:
        return (m, nb_a, nb_b, diag, a, b)
    return (m, nb_b, nb_a, diag, b, a)


def build_dofmap(mesh: hm.HexMesh, table: MaterialTable, rule: GllRule) -> DofMap:
    """Deterministic global numbering of the GLL points of all elements.

    Shared points are identified structurally through the corner
    connectivity (exact, no floating-point matching); the final numbering is
    lexicographic by node coordinates rounded to 1e-9 m.
    """
    table.check_mesh(mesh.materials)
    hm.quality_report(mesh)  # raises MeshUnusableError on inverted elements
    n = rule.degree
    p = n + 1
    p3 = p**3
    n_elems = mesh.n_elements

    s_all, _ = hm.shape_functions(hm.gll_grid_ref(rule))  # (p3, 8)

    key_to_gid: dict = {}
    coords_list: list = []
    elem_nodes = np.empty((n_elems, p3), dtype=np.int64)

    # local point classification is the same for every element
    local_info = []
    for i in range(p):
        for j in range(p):
            for k in range(p):
                ijk = (i, j, k)
                onb = [1 if v == n else (0 if v == 0 else -1) for v in ijk]
                fixed = [ax for ax in range(3) if onb[ax] >= 0]
                local_info.append((ijk, onb, fixed))

    for e in range(n_elems):
        conn = mesh.elements[e]
        corners_xyz = mesh.nodes[conn]
        pts = s_all @ corners_xyz  # (p3, 3) physical GLL points
        for q, (ijk, onb, fixed) in enumerate(local_info):
            nf = len(fixed)
            if nf == 3:
                bits = (onb[0], onb[1], onb[2])
                key = ("c", int(conn[_CORNER_OF_BITS[bits]]))
            elif nf == 2:
                free_ax = next(ax for ax in range(3) if onb[ax] < 0)
                t = ijk[free_ax]
                bits_lo = [onb[0], onb[1], onb[2]]
                bits_hi = bits_lo.copy()
                bits_lo[free_ax], bits_hi[free_ax] = 0, 1
                na = int(conn[_CORNER_OF_BITS[tuple(bits_lo)]])
                nb = int(conn[_CORNER_OF_BITS[tuple(bits_hi)]])
                key = ("e", na, nb, t) if na < nb else ("e", nb, na, n - t)
            elif nf == 1:
                ax = fixed[0]
                u_ax, v_ax = [a for a in range(3) if a != ax]
                s, t = ijk[u_ax], ijk[v_ax]

                def cn(su, sv):
                    bits = [0, 0, 0]
                    bits[ax] = onb[ax]
                    bits[u_ax], bits[v_ax] = su, sv
                    return int(conn[_CORNER_OF_BITS[tuple(bits)]])

                key = ("f",) + _canonical_face_point(
                    (cn(0, 0), cn(1, 0), cn(0, 1), cn(1, 1)), s, t, n
                )
            else:
                key = ("i", e, ijk[0], ijk[1], ijk[2])
            gid = key_to_gid.get(key)
            if gid is None:
                gid = len(coords_list)
                key_to_gid[key] = gid
                coords_list.append(pts[q])
            elem_nodes[e, q] = gid

    coords = np.asarray(coords_list)
    # lexicographic renumbering by rounded coordinates
    kx, ky, kz = (np.round(coords[:, a] / _COORD_TOL).astype(np.int64) for a in range(3))
    order = np.lexsort((kz, ky, kx))
    sk = np.stack([kx[order], ky[order], kz[order]], axis=1)
    if len(sk) > 1 and np.any(np.all(np.diff(sk, axis=0) == 0, axis=1)):
        raise NonConformalMeshError(
            "distinct global nodes coincide within 1e-9 m; mesh is not conformal"
        )
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    coords = coords[order]
    elem_nodes = rank[elem_nodes]

    is_fluid = np.zeros(len(coords), dtype=bool)
    is_solid = np.zeros(len(coords), dtype=bool)
    acoustic_elems, elastic_elems = [], []
    for e in range(n_elems):
        props = table.get(mesh.materials[e])
        if domain_kind(props) == ACOUSTIC:
            acoustic_elems.append(e)
            is_fluid[elem_nodes[e]] = True
        else:
            elastic_elems.append(e)
            is_solid[elem_nodes[e]] = True

    fluid_index = np.full(len(coords), -1, dtype=np.int64)
    solid_index = np.full(len(coords), -1, dtype=np.int64)
    fluid_index[is_fluid] = np.arange(is_fluid.sum())
    solid_index[is_solid] = np.arange(is_solid.sum())

    acoustic_elems = np.asarray(acoustic_elems, dtype=np.int64)
    elastic_elems = np.asarray(elastic_elems, dtype=np.int64)
    idx_fluid = fluid_index[elem_nodes[acoustic_elems]] if len(acoustic_elems) else np.empty((0, p3), np.int64)
    idx_solid = solid_index[elem_nodes[elastic_elems]] if len(elastic_elems) else np.empty((0, p3), np.int64)

    return DofMap(
        coords=coords,
        elem_nodes=elem_nodes,
        is_fluid=is_fluid,
        is_solid=is_solid,
        fluid_index=fluid_index,
        solid_index=solid_index,
        acoustic_elements=acoustic_elems,
        elastic_elements=elastic_elems,
        idx_fluid=np.ascontiguousarray(idx_fluid),
        idx_solid=np.ascontiguousarray(idx_solid),
        degree=rule.degree,
    )


@dataclass
class DiagonalMass:
    """Strictly positive lumped masses; no off-diagonal storage exists."""

    m_fluid: np.ndarray  # (n_fluid,) weighted by 1/(rho vp^2)
    m_solid: np.ndarray  # (n_solid,) kg, shared by the 3 components


def assemble_mass(mesh, table, rule, dofmap) -> DiagonalMass:
    """Sum of per-element GLL contributions w*detJ*density-factor."""
    w = rule.weights
    w3 = np.einsum("i,j,k->ijk", w, w, w).ravel()
    _, det, _ = hm.all_jacobians(mesh, rule)
    m_fluid = np.zeros(dofmap.n_fluid)
    m_solid = np.zeros(dofmap.n_solid)
    for pos, e in enumerate(dofmap.acoustic_elements):
        props = table.get(mesh.materials[e])
        np.add.at(m_fluid, dofmap.idx_fluid[pos], w3 * det[e] / (props.rho * props.vp**2))
    for pos, e in enumerate(dofmap.elastic_elements):
        props = table.get(mesh.materials[e])
        np.add.at(m_solid, dofmap.idx_solid[pos], w3 * det[e] * props.rho)
    if (dofmap.n_fluid and m_fluid.min() <= 0) or (dofmap.n_solid and m_solid.min() <= 0):
        raise AssemblyIntegrityError("non-positive diagonal mass entry")
    return DiagonalMass(m_fluid=m_fluid, m_solid=m_solid)


@dataclass
class FieldVectors:
    """Potential (fluid) and displacement (solid) fields with derivatives."""

    phi: np.ndarray
    phi_dot: np.ndarray
    phi_ddot: np.ndarray
    u: np.ndarray
    u_dot: np.ndarray
    u_ddot: np.ndarray

    @classmethod
    def zeros(cls, dofmap: DofMap) -> "FieldVectors":
        nf, ns = dofmap.n_fluid, dofmap.n_solid
        return cls(
            phi=np.zeros(nf),
            phi_dot=np.zeros(nf),
            phi_ddot=np.zeros(nf),
            u=np.zeros((ns, 3)),
            u_dot=np.zeros((ns, 3)),
            u_ddot=np.zeros((ns, 3)),
        )


@dataclass
class WaveOperators:
    """Precomputed geometry and face data backing all operator applications.

    Immutable after construction; operator applications are pure functions of
    the field arrays and accumulate element contributions in fixed element
    order (bitwise reproducible, thread-count independent).
    """

    dofmap: DofMap
    D: np.ndarray
    backend: object
    # acoustic volume terms
    geom_a: np.ndarray  # (nEa, p3, 6)
    # elastic volume terms
    jinv_e: np.ndarray  # (nEe, p3, 3, 3)
    wdet_e: np.ndarray  # (nEe, p3)
    lam_e: np.ndarray
    mu_e: np.ndarray
    # coupling faces (fluid-side quadrature, normals fluid -> solid)
    cf_fluid: np.ndarray  # (ncf, p2)
    cf_solid: np.ndarray
    cf_wds: np.ndarray
    cf_normal: np.ndarray  # (ncf, p2, 3)
    # absorbing boundary accumulated per DOF: damping force is -B v with B
    # diagonal (fluid) / block-diagonal SPD (solid), so the stepper can fold
    # it into the mass inversion (implicit in velocity, unconditionally
    # stable even where several faces meet)
    ab_f_coef: np.ndarray  # (n_fluid,) wdS/(rho vp), zero off the boundary
    ab_s_idx: np.ndarray  # (nbs,) solid boundary dofs
    ab_s_bmat: np.ndarray  # (nbs, 3, 3) wdS * rho(vp n n^T + vs (I - n n^T))
    # roller constraints
    roller_idx: np.ndarray  # (nr,) solid dofs
    roller_n: np.ndarray  # (nr, 3) unit normals

    def apply_acoustic_stiffness(self, phi: np.ndarray) -> np.ndarray:
        out = np.zeros_like(phi)
        self.backend.acoustic_stiffness_apply(phi, self.dofmap.idx_fluid, self.geom_a, self.D, out)
        return out

    def apply_elastic_stiffness(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        self.backend.elastic_stiffness_apply(
            u, self.dofmap.idx_solid, self.jinv_e, self.wdet_e, self.lam_e, self.mu_e, self.D, out
        )
        return out

    def coupling_fluid(self, u: np.ndarray, out: np.ndarray):
        """Accumulate the normal solid displacement flux onto fluid DOFs."""
        if self.cf_fluid.size == 0:
            return
        un = np.einsum("fqc,fqc->fq", u[self.cf_solid], self.cf_normal)
        np.add.at(out, self.cf_fluid.ravel(), (self.cf_wds * un).ravel())

    def coupling_solid(self, phi_ddot: np.ndarray, out: np.ndarray):
        """Accumulate the pressure traction p*n (p = -phi_ddot) onto solid DOFs."""
        if self.cf_fluid.size == 0:
            return
        pn = -phi_ddot[self.cf_fluid][:, :, None] * self.cf_normal
        vals = self.cf_wds[:, :, None] * pn
        flat = self.cf_solid.ravel()
        for c in range(3):
            np.add.at(out[:, c], flat, vals[:, :, c].ravel())

    @property
    def has_absorbing_fluid(self) -> bool:
        return self.ab_f_coef.size > 0 and bool(self.ab_f_coef.any())

    @property
    def has_absorbing_solid(self) -> bool:
        return self.ab_s_idx.size > 0

    def stacey_fluid(self, phi_dot: np.ndarray, out: np.ndarray):
        if self.has_absorbing_fluid:
            out -= self.ab_f_coef * phi_dot

    def stacey_solid(self, u_dot: np.ndarray, out: np.ndarray):
        if self.has_absorbing_solid:
            v = u_dot[self.ab_s_idx]
            out[self.ab_s_idx] -= np.einsum("nij,nj->ni", self.ab_s_bmat, v)

    def apply_roller(self, arr: np.ndarray):
        """Zero the normal component at roller-constrained solid DOFs."""
        if self.roller_idx.size == 0:
            return
        vn = np.einsum("rc,rc->r", arr[self.roller_idx], self.roller_n)
        np.subtract.at(arr, self.roller_idx, vn[:, None] * self.roller_n)

    @property
    def n_coupling_faces(self) -> int:
        return self.cf_fluid.shape[0]


# spec-facing operation wrappers


def apply_acoustic_stiffness(state: FieldVectors, ops: WaveOperators) -> np.ndarray:
    return ops.apply_acoustic_stiffness(state.phi)


def apply_elastic_stiffness(state: FieldVectors, ops: WaveOperators) -> np.ndarray:
    return ops.apply_elastic_stiffness(state.u)


def coupling_terms(state: FieldVectors, ops: WaveOperators):
    f_fluid = np.zeros(ops.dofmap.n_fluid)
    f_solid = np.zeros((ops.dofmap.n_solid, 3))
    ops.coupling_fluid(state.u, f_fluid)
    ops.coupling_solid(state.phi_ddot, f_solid)
    return f_fluid, f_solid


def stacey_terms(state: FieldVectors, ops: WaveOperators):
    f_fluid = np.zeros(ops.dofmap.n_fluid)
    f_solid = np.zeros((ops.dofmap.n_solid, 3))
    ops.stacey_fluid(state.phi_dot, f_fluid)
    ops.stacey_solid(state.u_dot, f_solid)
    return f_fluid, f_solid


def _face_quadrature(mesh, rule, elem, local_face):
    """(wdS, outward unit normals) at the face GLL points of one element."""
    corners = mesh.nodes[mesh.elements[elem]]
    axis, value = hm.FACE_AXIS[local_face]
    a_ax, b_ax = [ax for ax in range(3) if ax != axis]
    fj = hm._jacobians_at(corners, hm.face_grid_ref(rule, local_face))
    t_a, t_b = fj[:, :, a_ax], fj[:, :, b_ax]
    nrm = np.cross(t_a, t_b)
    mag = np.linalg.norm(nrm, axis=1)
    if np.any(mag <= 0):
        raise SetupError(f"degenerate face ({elem},{local_face})")
    nrm /= mag[:, None]
    outward = fj[:, :, axis] * value
    flip = np.sum(nrm * outward, axis=1) < 0
    nrm[flip] *= -1.0
    w2 = np.einsum("a,b->ab", rule.weights, rule.weights).ravel()
    return w2 * mag, nrm


def build_operators(
    mesh: hm.HexMesh,
    table: MaterialTable,
    rule: GllRule,
    dofmap: DofMap,
    backend=None,
) -> WaveOperators:
    """Precompute volume metrics, interface faces and boundary face data.

    Faces in the "absorbing" face set get Stacey dampers, faces in "roller"
    get a normal-displacement constraint (solid side; the fluid natural
    condition is already rigid); every other exterior face is a free surface.
    """
    backend = backend or kernels.get_backend()
    p = rule.n_points
    p3 = p**3
    w = rule.weights
    w3 = np.einsum("i,j,k->ijk", w, w, w).ravel()
    D = np.ascontiguousarray(derivative_matrix(rule).deriv_matrix)

    jac, det, inv = hm.all_jacobians(mesh, rule)

    n_ea, n_ee = len(dofmap.acoustic_elements), len(dofmap.elastic_elements)
    geom_a = np.empty((n_ea, p3, 6))
    for pos, e in enumerate(dofmap.acoustic_elements):
        props = table.get(mesh.materials[e])
        g = np.einsum("qab,qcb->qac", inv[e], inv[e]) * (w3 * det[e] / props.rho)[:, None, None]
        geom_a[pos, :, 0] = g[:, 0, 0]
        geom_a[pos, :, 1] = g[:, 0, 1]
        geom_a[pos, :, 2] = g[:, 0, 2]
        geom_a[pos, :, 3] = g[:, 1, 1]
        geom_a[pos, :, 4] = g[:, 1, 2]
        geom_a[pos, :, 5] = g[:, 2, 2]

    jinv_e = np.empty((n_ee, p3, 3, 3))
    wdet_e = np.empty((n_ee, p3))
    lam_e = np.empty(n_ee)
    mu_e = np.empty(n_ee)
    for pos, e in enumerate(dofmap.elastic_elements):
        props = table.get(mesh.materials[e])
        jinv_e[pos] = inv[e]
        wdet_e[pos] = w3 * det[e]
        lam_e[pos] = props.lam  # raises InvalidMaterialError if vp^2 < 2 vs^2
        mu_e[pos] = props.mu

    is_acoustic = np.zeros(mesh.n_elements, dtype=bool)
    is_acoustic[dofmap.acoustic_elements] = True

    faces = mesh.face_table()

    # automatic interface detection: acoustic/elastic owner pairs
    cf_fluid, cf_solid, cf_wds, cf_normal = [], [], [], []
    face_ref_idx = {lf: hm.face_local_indices(rule, lf) for lf in range(6)}
    for owners in faces.values():
        if len(owners) != 2:
            continue
        (e1, f1), (e2, f2) = owners
        if is_acoustic[e1] == is_acoustic[e2]:
            continue
        (ef, ff) = (e1, f1) if is_acoustic[e1] else (e2, f2)
        wds, nrm = _face_quadrature(mesh, rule, ef, ff)
        nodes = dofmap.elem_nodes[ef][face_ref_idx[ff]]
        fi = dofmap.fluid_index[nodes]
        si = dofmap.solid_index[nodes]
        if np.any(fi < 0) or np.any(si < 0):
            raise SetupError("interface face with nodes missing a DOF kind")
        cf_fluid.append(fi)
        cf_solid.append(si)
        cf_wds.append(wds)
        cf_normal.append(nrm)

    def stack(lst, shape, dtype=float):
        return np.asarray(lst, dtype=dtype) if lst else np.empty(shape, dtype=dtype)

    p2 = p * p
    cf_fluid = stack(cf_fluid, (0, p2), np.int64)
    cf_solid = stack(cf_solid, (0, p2), np.int64)
    cf_wds = stack(cf_wds, (0, p2))
    cf_normal = stack(cf_normal, (0, p2, 3))

    # absorbing faces from the "absorbing" face set, accumulated per DOF
    ab_f_coef = np.zeros(dofmap.n_fluid)
    solid_b: dict = {}
    for elem, lf in mesh.face_sets.get("absorbing", []):
        key = hm.face_key(mesh.elements[elem], lf)
        if len(faces[key]) != 1:
            raise SetupError(f"absorbing face ({elem},{lf}) is not on the mesh exterior")
        wds, nrm = _face_quadrature(mesh, rule, elem, lf)
        nodes = dofmap.elem_nodes[elem][face_ref_idx[lf]]
        props = table.get(mesh.materials[elem])
        if is_acoustic[elem]:
            np.add.at(ab_f_coef, dofmap.fluid_index[nodes], wds / (props.rho * props.vp))
        else:
            rvp, rvs = props.rho * props.vp, props.rho * props.vs
            si = dofmap.solid_index[nodes]
            for dof, w_q, n_q in zip(si, wds, nrm):
                nnt = np.outer(n_q, n_q)
                b = w_q * (rvp * nnt + rvs * (np.eye(3) - nnt))
                if int(dof) in solid_b:
                    solid_b[int(dof)] = solid_b[int(dof)] + b
                else:
                    solid_b[int(dof)] = b
    if solid_b:
        items = sorted(solid_b.items())
        ab_s_idx = np.array([d for d, _ in items], dtype=np.int64)
        ab_s_bmat = np.array([b for _, b in items])
    else:
        ab_s_idx = np.empty(0, dtype=np.int64)
        ab_s_bmat = np.empty((0, 3, 3))

    # roller (symmetry) faces: constrain the normal solid component
    roller = {}
    for elem, lf in mesh.face_sets.get("roller", []):
        key = hm.face_key(mesh.elements[elem], lf)
        if len(faces[key]) != 1:
            raise SetupError(f"roller face ({elem},{lf}) is not on the mesh exterior")
        if is_acoustic[elem]:
            continue  # natural acoustic BC is already rigid
        _, nrm = _face_quadrature(mesh, rule, elem, lf)
        nodes = dofmap.elem_nodes[elem][face_ref_idx[lf]]
        si = dofmap.solid_index[nodes]
        for dof, nvec in zip(si, nrm):
            roller.setdefault((int(dof), tuple(np.round(nvec / 1e-12).astype(np.int64))), nvec)
    if roller:
        roller_idx = np.array([dof for dof, _ in roller.keys()], dtype=np.int64)
        roller_n = np.array(list(roller.values()))
    else:
        roller_idx = np.empty(0, dtype=np.int64)
        roller_n = np.empty((0, 3))

    return WaveOperators(
        dofmap=dofmap,
        D=D,
        backend=backend,
        geom_a=geom_a,
        jinv_e=jinv_e,
        wdet_e=wdet_e,
        lam_e=lam_e,
        mu_e=mu_e,
        cf_fluid=cf_fluid,
        cf_solid=cf_solid,
        cf_wds=cf_wds,
        cf_normal=cf_normal,
        ab_f_coef=ab_f_coef,
        ab_s_idx=ab_s_idx,
        ab_s_bmat=ab_s_bmat,
        roller_idx=roller_idx,
        roller_n=roller_n,
    )
