import numpy as np
import pytest

from specwave.assembly import (
    FieldVectors,
    NonConformalMeshError,
    apply_acoustic_stiffness,
    apply_elastic_stiffness,
    assemble_mass,
    build_dofmap,
    build_operators,
    coupling_terms,
    stacey_terms,
)
from specwave.gll_basis import gll_rule, lagrange_all, lagrange_deriv_all
from specwave.hexmesh import VoxelVolume, voxels_to_hexmesh
from specwave.kernels import HAS_COMPILED, get_backend
from specwave.material_model import MaterialTable, TissueProperties, builtin_dolphin_table

WATER_ID, SOFT_ID, BONE_ID = 5, 1, 4

BACKENDS = ["python"] + (["compiled"] if HAS_COMPILED else [])


def make_mesh(dims, material=WATER_ID, spacing=2.5e-3, policy=None):
    vol = VoxelVolume(dims=dims, spacing=(spacing,) * 3, values=np.full(dims, material))
    return voxels_to_hexmesh(vol, boundary_policy=policy if policy is not None else {})


def setup(dims, material=WATER_ID, degree=2, spacing=2.5e-3, policy=None, backend=None):
    mesh = make_mesh(dims, material, spacing, policy)
    table = builtin_dolphin_table()
    rule = gll_rule(degree)
    dofmap = build_dofmap(mesh, table, rule)
    ops = build_operators(mesh, table, rule, dofmap, backend=get_backend(backend))
    return mesh, table, rule, dofmap, ops


# ---------------------------------------------------------------------------
# dofmap


def test_dofmap_single_acoustic_element():
    _, _, _, dofmap, _ = setup((1, 1, 1), WATER_ID)
    assert dofmap.n_fluid == 27
    assert dofmap.n_solid == 0
    assert dofmap.n_interface == 0


def test_dofmap_two_acoustic_elements_share_face():
    _, _, _, dofmap, _ = setup((1, 1, 2), WATER_ID)
    assert dofmap.n_fluid == 45  # 2*27 - 9 shared
    assert dofmap.n_nodes == 45


def test_dofmap_interface_nodes():
    vol = VoxelVolume(
        dims=(1, 1, 2),
        spacing=(2.5e-3,) * 3,
        values=np.array([[[WATER_ID, SOFT_ID]]]),
    )
    mesh = voxels_to_hexmesh(vol, boundary_policy={})
    table = builtin_dolphin_table()
    rule = gll_rule(2)
    dofmap = build_dofmap(mesh, table, rule)
    assert dofmap.n_fluid == 27
    assert dofmap.n_solid == 27
    assert dofmap.n_interface == 9


def test_dofmap_deterministic_and_coordinate_sorted():
    _, _, _, d1, _ = setup((2, 2, 2))
    _, _, _, d2, _ = setup((2, 2, 2))
    np.testing.assert_array_equal(d1.elem_nodes, d2.elem_nodes)
    keys = np.round(d1.coords / 1e-9).astype(np.int64)
    assert np.all(np.diff([tuple(k) for k in keys], axis=0)[:, 0] >= 0)
    # lexicographic: sorting the key tuples leaves the order unchanged
    tuples = [tuple(k) for k in keys]
    assert tuples == sorted(tuples)


def test_dofmap_nodes_shared_across_higher_degree():
    # two elements sharing a face at degree 4: 2*125 - 25 shared
    _, _, _, dofmap, _ = setup((1, 1, 2), degree=4)
    assert dofmap.n_nodes == 225


def test_non_conformal_mesh_detected():
    mesh = make_mesh((1, 1, 2))
    # duplicate the shared-face nodes so the elements no longer share ids
    shared = np.intersect1d(mesh.elements[0], mesh.elements[1])
    new_ids = np.arange(len(shared)) + mesh.n_nodes
    mesh.nodes = np.vstack([mesh.nodes, mesh.nodes[shared]])
    conn = mesh.elements.copy()
    for old, new in zip(shared, new_ids):
        conn[1][conn[1] == old] = new
    mesh.elements = conn
    with pytest.raises(NonConformalMeshError):
        build_dofmap(mesh, builtin_dolphin_table(), gll_rule(2))


# ---------------------------------------------------------------------------
# mass


def test_mass_single_solid_element_total():
    spacing = 1.3e-3
    mesh, table, rule, dofmap, _ = setup((1, 1, 1), SOFT_ID, spacing=spacing)
    mass = assemble_mass(mesh, table, rule, dofmap)
    volume = spacing**3
    total = mass.m_solid.sum()
    assert abs(total - 1013 * volume) < 1e-12 * 1013 * volume
    assert np.all(mass.m_solid > 0)


def test_mass_bone_density_scaling():
    mesh, table, rule, dofmap, _ = setup((1, 1, 1), BONE_ID, spacing=1e-3)
    mass = assemble_mass(mesh, table, rule, dofmap)
    assert abs(mass.m_solid.sum() - 2035 * 1e-9) < 1e-12 * 2035e-9


def test_mass_additivity_stacked_elements():
    mesh1, table, rule, d1, _ = setup((1, 1, 1), SOFT_ID)
    mesh2, _, _, d2, _ = setup((1, 1, 2), SOFT_ID)
    m1 = assemble_mass(mesh1, table, rule, d1)
    m2 = assemble_mass(mesh2, table, rule, d2)
    # shared-face nodes carry exactly double the single-element value
    shared = np.isclose(d2.coords[d2.solid_index >= 0][:, 2], 2.5e-3)
    single_face = np.isclose(d1.coords[d1.solid_index >= 0][:, 2], 2.5e-3)
    np.testing.assert_allclose(
        np.sort(m2.m_solid[shared]), np.sort(2 * m1.m_solid[single_face]), rtol=1e-14
    )


def test_mass_acoustic_weighting():
    mesh, table, rule, dofmap, _ = setup((1, 1, 1), WATER_ID, spacing=1e-3)
    mass = assemble_mass(mesh, table, rule, dofmap)
    # total = volume / (rho vp^2)
    expected = 1e-9 / (1028 * 1480**2)
    assert abs(mass.m_fluid.sum() - expected) < 1e-12 * expected


# ---------------------------------------------------------------------------
# dense oracle: independent quadrature assembly on one element


def dense_acoustic_matrix(mesh, table, rule, dofmap):
    """27x27 acoustic stiffness by direct nested quadrature (independent of
    the tensorized path)."""
    from specwave.hexmesh import all_jacobians, gll_grid_ref

    p = rule.n_points
    jac, det, inv = all_jacobians(mesh, rule)
    props = table.get(mesh.materials[0])
    w = rule.weights
    grid = gll_grid_ref(rule)
    n_loc = p**3

    def grad_basis(basis_flat, q):
        i, j, k = np.unravel_index(basis_flat, (p, p, p))
        xi, eta, zeta = grid[q]
        li = lagrange_all(rule, xi)
        lj = lagrange_all(rule, eta)
        lk = lagrange_all(rule, zeta)
        dli = lagrange_deriv_all(rule, xi)
        dlj = lagrange_deriv_all(rule, eta)
        dlk = lagrange_deriv_all(rule, zeta)
        g_ref = np.array(
            [
                dli[i] * lj[j] * lk[k],
                li[i] * dlj[j] * lk[k],
                li[i] * lj[j] * dlk[k],
            ]
        )
        return inv[0, q].T @ g_ref

    k_dense = np.zeros((n_loc, n_loc))
    wq = np.einsum("i,j,k->ijk", w, w, w).ravel()
    grads = np.array([[grad_basis(b, q) for q in range(n_loc)] for b in range(n_loc)])
    for a in range(n_loc):
        for b in range(n_loc):
            k_dense[a, b] = np.sum(wq * det[0] * np.sum(grads[a] * grads[b], axis=1)) / props.rho
    # map局 local -> fluid dof ordering
    perm = dofmap.idx_fluid[0]
    out = np.zeros((n_loc, n_loc))
    for a in range(n_loc):
        for b in range(n_loc):
            out[perm[a], perm[b]] = k_dense[a, b]
    return out


def dense_elastic_matrix(mesh, table, rule, dofmap):
    """81x81 elastic stiffness by direct quadrature."""
    from specwave.hexmesh import all_jacobians, gll_grid_ref

    p = rule.n_points
    _, det, inv = all_jacobians(mesh, rule)
    props = table.get(mesh.materials[0])
    lam, mu = props.lam, props.mu
    w = rule.weights
    grid = gll_grid_ref(rule)
    n_loc = p**3
    wq = np.einsum("i,j,k->ijk", w, w, w).ravel()

    grads = np.empty((n_loc, n_loc, 3))
    for b in range(n_loc):
        i, j, k = np.unravel_index(b, (p, p, p))
        for q in range(n_loc):
            xi, eta, zeta = grid[q]
            li = lagrange_all(rule, xi)
            lj = lagrange_all(rule, eta)
            lk = lagrange_all(rule, zeta)
            dli = lagrange_deriv_all(rule, xi)
            dlj = lagrange_deriv_all(rule, eta)
            dlk = lagrange_deriv_all(rule, zeta)
            g_ref = np.array(
                [
                    dli[i] * lj[j] * lk[k],
                    li[i] * dlj[j] * lk[k],
                    li[i] * lj[j] * dlk[k],
                ]
            )
            grads[b, q] = inv[0, q].T @ g_ref

    def strain(b, c, q):
        e = np.zeros((3, 3))
        g = grads[b, q]
        e[c, :] += 0.5 * g
        e[:, c] += 0.5 * g
        return e

    k_dense = np.zeros((n_loc, 3, n_loc, 3))
    for q in range(n_loc):
        for b in range(n_loc):
            for c in range(3):
                eb = strain(b, c, q)
                sb = lam * np.trace(eb) * np.eye(3) + 2 * mu * eb
                for a in range(n_loc):
                    for d in range(3):
                        ea = strain(a, d, q)
                        k_dense[a, d, b, c] += wq[q] * det[0, q] * np.sum(sb * ea)
    perm = dofmap.idx_solid[0]
    out = np.zeros((n_loc * 3, n_loc * 3))
    for a in range(n_loc):
        for d in range(3):
            for b in range(n_loc):
                for c in range(3):
                    out[perm[a] * 3 + d, perm[b] * 3 + c] = k_dense[a, d, b, c]
    return out


@pytest.mark.parametrize("backend", BACKENDS)
def test_acoustic_matrix_free_matches_dense(backend):
    mesh, table, rule, dofmap, ops = setup((1, 1, 1), WATER_ID, backend=backend)
    k_dense = dense_acoustic_matrix(mesh, table, rule, dofmap)
    rng = np.random.default_rng(1)
    for _ in range(3):
        phi = rng.standard_normal(dofmap.n_fluid)
        got = ops.apply_acoustic_stiffness(phi)
        want = k_dense @ phi
        scale = np.max(np.abs(want))
        np.testing.assert_allclose(got, want, atol=1e-12 * scale)


@pytest.mark.parametrize("backend", BACKENDS)
def test_elastic_matrix_free_matches_dense(backend):
    mesh, table, rule, dofmap, ops = setup((1, 1, 1), SOFT_ID, backend=backend)
    k_dense = dense_elastic_matrix(mesh, table, rule, dofmap)
    rng = np.random.default_rng(2)
    for _ in range(2):
        u = rng.standard_normal((dofmap.n_solid, 3))
        got = ops.apply_elastic_stiffness(u)
        want = (k_dense @ u.reshape(-1)).reshape(-1, 3)
        scale = np.max(np.abs(want))
        np.testing.assert_allclose(got, want, atol=1e-12 * scale)


# ---------------------------------------------------------------------------
# null spaces, symmetry, positivity


def test_acoustic_annihilates_constants():
    _, _, _, dofmap, ops = setup((2, 2, 2), WATER_ID)
    out = ops.apply_acoustic_stiffness(np.full(dofmap.n_fluid, 3.7))
    ref = np.max(np.abs(ops.apply_acoustic_stiffness(np.random.default_rng(0).standard_normal(dofmap.n_fluid))))
    assert np.max(np.abs(out)) < 1e-10 * ref


def test_acoustic_linear_field_flux():
    # phi = x: interior rows vanish, x-boundary rows carry the flux
    mesh, table, rule, dofmap, ops = setup((1, 1, 1), WATER_ID, spacing=1.0)
    coords = dofmap.coords
    phi = coords[:, 0].copy()
    out = ops.apply_acoustic_stiffness(phi)
    on_xmin = np.isclose(coords[:, 0], 0.0)
    on_xmax = np.isclose(coords[:, 0], 1.0)
    interior = ~(on_xmin | on_xmax)
    rho = table.get(WATER_ID).rho
    w = rule.weights
    scale = np.max(np.abs(out))
    assert np.max(np.abs(out[interior])) < 1e-12 * scale
    # +x face node (j,k) carries w_j w_k / 4 / rho (face area jacobian 1/4)
    for n in np.nonzero(on_xmax)[0]:
        y, z = coords[n, 1], coords[n, 2]
        wj = w[np.argmin(np.abs(rule.nodes - (2 * y - 1)))]
        wk = w[np.argmin(np.abs(rule.nodes - (2 * z - 1)))]
        assert abs(out[n] - wj * wk / 4 / rho) < 1e-12
    np.testing.assert_allclose(out[on_xmin], -out[on_xmax], atol=1e-14)


@pytest.mark.parametrize("backend", BACKENDS)
def test_acoustic_symmetry_and_psd(backend):
    _, _, _, dofmap, ops = setup((2, 2, 2), WATER_ID, backend=backend)
    rng = np.random.default_rng(3)
    for _ in range(5):
        a = rng.standard_normal(dofmap.n_fluid)
        b = rng.standard_normal(dofmap.n_fluid)
        ka, kb = ops.apply_acoustic_stiffness(a), ops.apply_acoustic_stiffness(b)
        s1, s2 = a @ kb, b @ ka
        assert abs(s1 - s2) < 1e-10 * max(abs(s1), abs(s2), 1e-30)
        assert a @ ka >= -1e-10 * np.linalg.norm(a) * np.linalg.norm(ka)


@pytest.mark.parametrize("backend", BACKENDS)
def test_elastic_rigid_modes_and_symmetry(backend):
    _, _, _, dofmap, ops = setup((2, 2, 2), SOFT_ID, backend=backend)
    coords = dofmap.coords[dofmap.is_solid]
    rng = np.random.default_rng(4)
    ref = np.max(np.abs(ops.apply_elastic_stiffness(rng.standard_normal((dofmap.n_solid, 3)))))
    # translations
    for c in range(3):
        u = np.zeros((dofmap.n_solid, 3))
        u[:, c] = 1.0
        assert np.max(np.abs(ops.apply_elastic_stiffness(u))) < 1e-12 * ref
    # infinitesimal rotations about the three axes
    centre = coords.mean(axis=0)
    for axis in range(3):
        omega = np.zeros(3)
        omega[axis] = 1.0
        u = np.cross(omega, coords - centre)
        out = ops.apply_elastic_stiffness(u)
        assert np.max(np.abs(out)) < 1e-10 * ref
    # symmetry
    for _ in range(3):
        a = rng.standard_normal((dofmap.n_solid, 3))
        b = rng.standard_normal((dofmap.n_solid, 3))
        s1 = np.sum(a * ops.apply_elastic_stiffness(b))
        s2 = np.sum(b * ops.apply_elastic_stiffness(a))
        assert abs(s1 - s2) < 1e-10 * max(abs(s1), abs(s2))
        ka = ops.apply_elastic_stiffness(a)
        assert np.sum(a * ka) >= -1e-10 * np.linalg.norm(a) * np.linalg.norm(ka)


@pytest.mark.skipif(not HAS_COMPILED, reason="compiled kernels unavailable")
def test_backends_agree():
    mesh, table, rule, dofmap, ops_c = setup((2, 2, 3), WATER_ID, backend="compiled")
    ops_p = build_operators(mesh, table, rule, dofmap, backend=get_backend("python"))
    rng = np.random.default_rng(5)
    phi = rng.standard_normal(dofmap.n_fluid)
    a, b = ops_c.apply_acoustic_stiffness(phi), ops_p.apply_acoustic_stiffness(phi)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13 * np.max(np.abs(b)))

    mesh2, _, _, d2, oc2 = setup((2, 2, 2), BONE_ID, backend="compiled")
    op2 = build_operators(mesh2, table, rule, d2, backend=get_backend("python"))
    u = rng.standard_normal((d2.n_solid, 3))
    np.testing.assert_allclose(
        oc2.apply_elastic_stiffness(u),
        op2.apply_elastic_stiffness(u),
        rtol=1e-13,
        atol=1e-13 * np.max(np.abs(op2.apply_elastic_stiffness(u))),
    )


# ---------------------------------------------------------------------------
# coupling and absorbing terms


def coupled_setup(degree=2):
    values = np.broadcast_to(
        np.where(np.arange(2) == 0, WATER_ID, SOFT_ID)[None, None, :], (2, 2, 2)
    ).copy()
    vol = VoxelVolume(dims=(2, 2, 2), spacing=(5e-3,) * 3, values=values)
    mesh = voxels_to_hexmesh(vol, boundary_policy={})
    table = builtin_dolphin_table()
    rule = gll_rule(degree)
    dofmap = build_dofmap(mesh, table, rule)
    ops = build_operators(mesh, table, rule, dofmap)
    return mesh, table, rule, dofmap, ops


def test_coupling_faces_detected():
    _, _, _, _, ops = coupled_setup()
    assert ops.n_coupling_faces == 4
    # normals point from fluid (z low) into solid (z high)
    np.testing.assert_allclose(ops.cf_normal[..., 2], 1.0, atol=1e-14)


def test_coupling_zero_inputs():
    _, _, _, dofmap, ops = coupled_setup()
    state = FieldVectors.zeros(dofmap)
    f_fluid, f_solid = coupling_terms(state, ops)
    assert not f_fluid.any() and not f_solid.any()
    # tangential solid motion produces no fluid load
    state.u[:, 0] = 1.0
    f_fluid, _ = coupling_terms(state, ops)
    assert np.max(np.abs(f_fluid)) < 1e-16


def test_coupling_uniform_pressure_total_force():
    # p = 1 Pa on the interface: total solid load equals area * normal
    _, _, _, dofmap, ops = coupled_setup()
    state = FieldVectors.zeros(dofmap)
    state.phi_ddot[:] = -1.0  # p = -phi_ddot = 1
    _, f_solid = coupling_terms(state, ops)
    area = (2 * 5e-3) ** 2  # 1 cm^2
    total = f_solid.sum(axis=0)
    np.testing.assert_allclose(total, [0, 0, area], rtol=1e-12)
    assert abs(total[2] - 1e-4) < 1e-12 * 1e-4


def test_coupling_uniform_displacement_flux():
    _, _, _, dofmap, ops = coupled_setup()
    state = FieldVectors.zeros(dofmap)
    state.u[:, 2] = 2.0
    f_fluid, _ = coupling_terms(state, ops)
    area = (2 * 5e-3) ** 2
    assert abs(f_fluid.sum() - 2.0 * area) < 1e-12 * area


def test_stacey_zero_velocity_and_energy_sign():
    mesh, table, rule, dofmap, ops = setup(
        (2, 2, 2), WATER_ID, policy={s: "absorbing" for s in ("zmin", "zmax", "xmin", "xmax", "ymin", "ymax")}
    )
    state = FieldVectors.zeros(dofmap)
    f_fluid, f_solid = stacey_terms(state, ops)
    assert not f_fluid.any() and not f_solid.any()
    rng = np.random.default_rng(6)
    state.phi_dot[:] = rng.standard_normal(dofmap.n_fluid)
    f_fluid, _ = stacey_terms(state, ops)
    assert state.phi_dot @ f_fluid <= 1e-14


def test_stacey_solid_energy_sign():
    mesh, table, rule, dofmap, ops = setup(
        (2, 2, 2),
        SOFT_ID,
        policy={s: "absorbing" for s in ("zmin", "zmax", "xmin", "xmax", "ymin", "ymax")},
    )
    state = FieldVectors.zeros(dofmap)
    rng = np.random.default_rng(7)
    state.u_dot[:] = rng.standard_normal((dofmap.n_solid, 3))
    _, f_solid = stacey_terms(state, ops)
    assert np.sum(state.u_dot * f_solid) <= 1e-14


def test_roller_projection():
    mesh, table, rule, dofmap, ops = setup(
        (1, 1, 2), SOFT_ID, policy={"xmin": "roller", "xmax": "roller"}
    )
    arr = np.ones((dofmap.n_solid, 3))
    ops.apply_roller(arr)
    coords = dofmap.coords[dofmap.is_solid]
    on_wall = np.isclose(coords[:, 0], 0.0) | np.isclose(coords[:, 0], 2.5e-3)
    assert np.max(np.abs(arr[on_wall, 0])) < 1e-15
    np.testing.assert_allclose(arr[~on_wall, 0], 1.0)
    np.testing.assert_allclose(arr[:, 1:], 1.0)


def test_absorbing_interior_face_rejected():
    from specwave.assembly import SetupError

    mesh = make_mesh((1, 1, 2))
    mesh.face_sets["absorbing"] = [(0, 5)]  # interior face between the two elements
    table = builtin_dolphin_table()
    rule = gll_rule(2)
    with pytest.raises(Exception) as exc:
        mesh.validate()
    assert "interior" in str(exc.value)
