import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from rotormor import BlockSystem, FullOrderSolver, build_mesh, partition_dofs, solve_full, sweep_full
from rotormor.fem import assemble_loads, export_matrix_coo, p1_stiffness
from rotormor.machine import ROTATING

from .conftest import small_spec
from .oracles import brute_rotated_system, magnet_load_direct, unit_square_mesh

# textbook P1 stiffness of the unit square split along the main diagonal
UNIT_SQUARE_K = np.array(
    [
        [1.0, -0.5, 0.0, -0.5],
        [-0.5, 1.0, -0.5, 0.0],
        [0.0, -0.5, 1.0, -0.5],
        [-0.5, 0.0, -0.5, 1.0],
    ]
)


class TestP1Assembly:
    def test_unit_square_matches_hand_computation(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        tris = np.array([[0, 1, 2], [0, 2, 3]])
        k = p1_stiffness(nodes, tris, 1.0)
        np.testing.assert_allclose(k.toarray(), UNIT_SQUARE_K, atol=1e-15)

    def test_symmetry_and_zero_row_sums(self):
        nodes, tris, _ = unit_square_mesh(7)
        k = p1_stiffness(nodes, tris, 2.5)
        assert abs(k - k.T).max() == 0.0
        assert np.abs(np.asarray(k.sum(axis=1))).max() < 1e-12

    def test_degenerate_triangle_rejected(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        with pytest.raises(ValueError, match="degenerate|inverted"):
            p1_stiffness(nodes, np.array([[0, 1, 2]]), 1.0)

    def test_manufactured_poisson_convergence_rate(self):
        """-lap(u) = f with u = sin(pi x) sin(pi y): P1 converges at rate 2."""
        errs = []
        for n in (8, 16):
            nodes, tris, boundary = unit_square_mesh(n)
            dof_map = np.full(nodes.shape[0], -1, dtype=int)
            free = np.flatnonzero(~boundary)
            dof_map[free] = np.arange(free.size)
            k = p1_stiffness(nodes, tris, 1.0, free.size, dof_map)
            exact = np.sin(np.pi * nodes[:, 0]) * np.sin(np.pi * nodes[:, 1])
            # nodal load for f = 2 pi^2 u via one-point quadrature
            from rotormor.fem import _scatter_vector, p1_geometry

            area, _, _ = p1_geometry(nodes, tris)
            centroids = nodes[tris].mean(axis=1)
            fval = 2 * np.pi**2 * np.sin(np.pi * centroids[:, 0]) * np.sin(np.pi * centroids[:, 1])
            values = np.repeat((fval * area / 3.0)[:, None], 3, axis=1)
            f = _scatter_vector(values, tris, dof_map, free.size)
            u = spla.spsolve(k.tocsc(), f)
            errs.append(np.sqrt(np.mean((u - exact[free]) ** 2)))
        rate = np.log2(errs[0] / errs[1])
        assert 1.6 < rate < 2.4


class TestLoads:
    def test_zero_sources_give_zero_load(self):
        spec = small_spec(remanence_magnitude=0.0)
        mesh = build_mesh(spec)
        part = partition_dofs(mesh)
        loads = assemble_loads(mesh, part, spec)
        assert np.all(loads.magnet_load(spec.magnet_angles) == 0.0)
        f = loads.f_phase @ np.zeros(3)
        assert np.all(f == 0.0)

    def test_zero_angles_select_cosine_vectors(self, mesh, partition, spec):
        loads = assemble_loads(mesh, partition, spec)
        np.testing.assert_array_equal(
            loads.magnet_load(np.zeros(spec.n_poles)), loads.f_mag_cos.sum(axis=1)
        )

    def test_magnet_decomposition_matches_direct_assembly(self, mesh, partition, spec, rng):
        angles = rng.uniform(-np.deg2rad(10), np.deg2rad(10), size=spec.n_poles)
        loads = assemble_loads(mesh, partition, spec)
        fast = loads.magnet_load(angles)
        direct = magnet_load_direct(mesh, partition, spec, angles=angles)
        assert np.linalg.norm(fast - direct) <= 1e-13 * np.linalg.norm(direct)

    def test_magnet_drives_outward_flux_through_positive_pole(self, system, mesh, partition, spec):
        """Sign convention: magnet 0 (positive polarity) pushes radially
        outward flux through the airgap in front of its own pole center."""
        stripped = dataclasses.replace(spec, phase_current_amplitude=0.0)
        sys0 = BlockSystem.build(mesh, partition, stripped)
        sol = solve_full(sys0.at_angle(0))
        a_full = np.zeros(mesh.n_nodes)
        free = partition.node_to_dof >= 0
        a_full[free] = sol.a[partition.node_to_dof[free]]
        from rotormor.fem import p1_geometry

        area, b, c = p1_geometry(mesh.nodes, mesh.triangles)
        gap = mesh.tri_band == 2
        centroids = mesh.nodes[mesh.triangles].mean(axis=1)
        theta = np.arctan2(centroids[:, 1], centroids[:, 0])
        pole0 = np.abs(np.mod(theta, 2 * np.pi) - np.pi / 6) < np.pi / 24
        sel = gap & pole0
        vals = a_full[mesh.triangles[sel]]
        bx = np.sum(vals * c[sel], axis=1) / (2 * area[sel])   # dA/dy
        by = -np.sum(vals * b[sel], axis=1) / (2 * area[sel])  # -dA/dx
        radial = bx * np.cos(theta[sel]) + by * np.sin(theta[sel])
        assert radial.mean() > 0.0


class TestLockedStepRotation:
    def test_zero_step_is_the_base_system(self, system):
        base = system.at_angle(0)
        m0 = base.matrix()
        assert abs(m0 - m0.T).max() < 1e-12 * abs(m0).max()

    def test_full_revolution_is_identity(self, system, rng):
        m0 = system.at_angle(0).matrix()
        mfull = system.at_angle(system.n_interface).matrix()
        assert abs(m0 - mfull).max() == 0.0
        np.testing.assert_array_equal(system.at_angle(0).rhs(), system.at_angle(system.n_interface).rhs())

    def test_out_of_range_angle_rejected(self, system):
        with pytest.raises(ValueError):
            system.at_angle(-1)
        with pytest.raises(ValueError):
            system.at_angle(system.n_interface + 1)

    @pytest.mark.parametrize("k", [1, 9, 55, 100, 143])
    def test_rotated_system_matches_brute_force_reassembly(self, mesh, partition, spec, system, k):
        kb, fb = brute_rotated_system(mesh, partition, spec, k)
        rot = system.at_angle(k)
        km = rot.matrix()
        assert abs(km - kb).max() <= 1e-12 * abs(kb).max()
        fm = rot.rhs()
        assert np.linalg.norm(fm - fb) <= 1e-12 * np.linalg.norm(fb)

    def test_apply_matches_assembled_matrix(self, system, rng):
        x = rng.standard_normal(system.partition.n_total)
        for k in (0, 3, 77):
            rot = system.at_angle(k)
            np.testing.assert_allclose(rot.apply(x), rot.matrix() @ x, rtol=1e-11, atol=1e-13)

    def test_rotor_block_invariant_under_column_shift(self, system, partition, mesh):
        krr = system.blocks.Krr
        n_i = mesh.n_interface
        rotor_nodes = partition.rotating_nodes
        ring, col = mesh.node_ring[rotor_nodes], mesh.node_col[rotor_nodes]
        shifted = {(r, c): i for i, (r, c) in enumerate(zip(ring, col))}
        perm = np.array([shifted[(r, (c + 1) % n_i)] for r, c in zip(ring, col)])
        p = sp.coo_matrix(
            (np.ones(perm.size), (np.arange(perm.size), perm)), shape=krr.shape
        ).tocsr()
        assert abs(p @ krr @ p.T - krr).max() <= 1e-12 * abs(krr).max()

    def test_spectrum_independent_of_rotation(self, system):
        """The rotated matrix is a permutation similarity of the base one:
        the smallest five eigenvalues agree across sampled angles."""
        def smallest(k):
            mat = system.at_angle(k).matrix().tocsc()
            return spla.eigsh(mat, k=5, sigma=0, which="LM", tol=1e-12)[0]

        base = smallest(0)
        for k in (17, 61, 104):
            np.testing.assert_allclose(smallest(k), base, rtol=1e-10)


class TestFullSolver:
    def test_zero_load_gives_zero_solution(self, mesh, partition, spec):
        quiet = dataclasses.replace(spec, remanence_magnitude=0.0, phase_current_amplitude=0.0)
        sys0 = BlockSystem.build(mesh, partition, quiet)
        sol = solve_full(sys0.at_angle(5))
        assert np.all(sol.a == 0.0)

    def test_residual_contract_over_angle_sample(self, system, solver):
        for k in range(0, system.n_interface, system.n_interface // 16):
            sol = solver.solve(k)
            rot = system.at_angle(k)
            r = np.linalg.norm(rot.residual(sol.a)) / np.linalg.norm(rot.rhs())
            assert r <= 1e-10

    def test_cached_solver_matches_direct_factorization(self, system, solver):
        for k in (0, 31, 76):
            direct = solve_full(system.at_angle(k))
            cached = solver.solve(k)
            scale = np.linalg.norm(direct.a)
            assert np.linalg.norm(direct.a - cached.a) <= 1e-9 * scale

    def test_solution_norm_is_pole_periodic(self, system, solver, spec):
        pole = spec.n_interface // spec.n_poles
        for k in (4, 40):
            n1 = np.linalg.norm(solver.solve(k).a)
            n2 = np.linalg.norm(solver.solve(k + pole).a)
            assert abs(n1 - n2) <= 1e-8 * n1

    def test_pole_periodicity_with_index_shift(self, system, solver, spec, mesh, partition):
        """One pole ahead the rotor block repeats exactly and the stator
        block is the same field shifted by one pole of columns."""
        pole = spec.n_interface // spec.n_poles
        a1 = solver.solve(7)
        a2 = solver.solve(7 + pole)
        s, r, i = partition.slices()
        scale = np.linalg.norm(a1.a)
        assert np.linalg.norm(a2.a[r] - a1.a[r]) <= 1e-8 * scale
        stator_rings = partition.n_static // spec.n_interface
        as1 = a1.a[s].reshape(stator_rings, spec.n_interface)
        as2 = a2.a[s].reshape(stator_rings, spec.n_interface)
        assert np.linalg.norm(as2 - np.roll(as1, pole, axis=1)) <= 1e-8 * scale
        assert np.linalg.norm(a2.a[i] - np.roll(a1.a[i], pole)) <= 1e-8 * scale

    def test_sweep_orders_columns_and_rejects_duplicates(self, system, solver):
        snaps = sweep_full(system, [30, 4, 17], solver=solver)
        np.testing.assert_array_equal(snaps.angle_indices, [4, 17, 30])
        with pytest.raises(ValueError, match="duplicate"):
            sweep_full(system, [1, 1, 2], solver=solver)

    def test_assembled_matrix_is_positive_definite(self, system):
        mat = system.at_angle(0).matrix().tocsc()
        smallest = spla.eigsh(mat, k=1, sigma=0, which="LM", tol=1e-10)[0][0]
        assert smallest > 0.0

    def test_matrix_export_coordinate_format(self, system, tmp_path):
        path = tmp_path / "kss.txt"
        export_matrix_coo(system.blocks.KIIs, path)
        header = path.read_text().splitlines()[0].split()
        assert header[0] == "#" and int(header[3]) == system.blocks.KIIs.nnz
