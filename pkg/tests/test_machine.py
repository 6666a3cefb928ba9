import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotormor import GeometryError, MachineSpec, apply_tooth_perturbation, build_mesh, partition_dofs
from rotormor.machine import (
    AIRGAP,
    DIRICHLET,
    INTERFACE,
    MAGNET,
    ROTATING,
    SLOT,
    STATIC,
    TOOTH,
    YOKE,
    sector_bounds,
    tooth_cell_columns,
    tooth_node_displacements,
)

from .conftest import small_spec
from .oracles import toy_polar_mesh


class TestMachineSpec:
    def test_defaults_fill_symmetric_machine(self):
        spec = MachineSpec()
        assert spec.magnet_angles == (0.0,) * spec.n_poles
        assert all(l == spec.nominal_tooth_length for l in spec.tooth_lengths)
        assert spec.n_teeth == 36

    def test_interface_count_must_divide_poles(self):
        with pytest.raises(GeometryError):
            MachineSpec(n_interface=721)

    def test_radii_must_increase(self):
        with pytest.raises(GeometryError):
            MachineSpec(radii=(0.02, 0.05, 0.04, 0.048, 0.0505, 0.068, 0.080))

    def test_tooth_length_outside_annulus_rejected(self):
        spec = small_spec()
        bad = list(spec.tooth_lengths)
        bad[0] = spec.radii[5] - spec.radii[3] + 1e-3
        with pytest.raises(GeometryError):
            small_spec(tooth_lengths=tuple(bad))

    def test_bridge_must_leave_slotted_ring(self):
        with pytest.raises(GeometryError):
            small_spec(rings_per_band=(1, 1, 1, 1, 2, 1), bridge_rings=2)

    def test_config_roundtrip(self, tmp_path):
        spec = small_spec(phase_current_amplitude=3.3e6)
        path = tmp_path / "machine.json"
        spec.to_file(path)
        assert MachineSpec.from_file(path) == spec

    def test_unknown_config_key_rejected(self, tmp_path):
        path = tmp_path / "machine.json"
        path.write_text(json.dumps({"n_poles": 6, "bogus": 1}))
        with pytest.raises(GeometryError, match="bogus"):
            MachineSpec.from_file(path)

    def test_phase_currents_flip_after_one_pole(self):
        spec = small_spec()
        pole = 2 * np.pi / spec.n_poles
        np.testing.assert_allclose(
            spec.phase_currents(0.3 + pole), -spec.phase_currents(0.3), atol=1e-9 * spec.phase_current_amplitude
        )


class TestBuildMesh:
    def test_interface_node_count_matches_spec(self, mesh, spec):
        assert np.sum(mesh.node_role == INTERFACE) == spec.n_interface

    def test_dirichlet_nodes_are_exactly_the_outer_ring(self, mesh):
        outer = mesh.node_ring == mesh.ring_radii.size - 1
        assert np.array_equal(mesh.node_role == DIRICHLET, outer)

    def test_every_triangle_tagged_once(self, mesh):
        assert np.all(np.isin(mesh.tri_kind, [0, 1, 2, 3, 4, 5]))

    def test_magnet_triangles_inside_magnet_band(self, mesh):
        assert np.all(mesh.tri_band[mesh.tri_kind == MAGNET] == 1)

    def test_total_area_matches_polygon_formula(self, mesh, spec):
        n = spec.n_interface
        expected = 0.5 * n * np.sin(2 * np.pi / n) * (spec.radii[6] ** 2 - spec.radii[0] ** 2)
        assert abs(mesh.triangle_areas().sum() - expected) < 1e-12 * expected

    def test_deterministic_rebuild(self, spec, mesh):
        again = build_mesh(spec)
        assert np.array_equal(again.nodes, mesh.nodes)
        assert np.array_equal(again.triangles, mesh.triangles)
        assert np.array_equal(again.tri_kind, mesh.tri_kind)

    @settings(max_examples=8, deadline=None)
    @given(k=st.integers(min_value=1, max_value=143))
    def test_rotor_mesh_maps_onto_itself_under_any_column_shift(self, k):
        spec = small_spec()
        mesh = build_mesh(spec)
        alpha = k * spec.delta_theta
        rot = np.array([[np.cos(alpha), -np.sin(alpha)], [np.sin(alpha), np.cos(alpha)]])
        rotor = mesh.node_role == ROTATING
        rotated = mesh.nodes[rotor] @ rot.T
        ring, col = mesh.node_ring[rotor], mesh.node_col[rotor]
        target = mesh.node_id(0, 0) * 0 + ring * spec.n_interface + (col + k) % spec.n_interface
        assert np.allclose(rotated, mesh.nodes[target], atol=1e-12 * mesh.ring_radii[-1])

    def test_sixfold_tag_symmetry(self, mesh, spec):
        """Rotating cell columns by one pole maps the region tags onto
        themselves: kinds equal, magnet/tooth indices advance by one pole,
        slot phases repeat with flipped polarity."""
        n = spec.n_interface
        shift_cols = n // spec.n_poles
        ring_band = np.arange(mesh.triangles.shape[0]) // (2 * n)
        # map: triangle at (ring band, col, shape) -> (ring band, col+shift, shape)
        idx = {}
        for t in range(mesh.triangles.shape[0]):
            idx[(int(ring_band[t]), int(mesh.tri_col[t]), t % 2)] = t
        for t in range(mesh.triangles.shape[0]):
            other = idx[(int(ring_band[t]), int((mesh.tri_col[t] + shift_cols) % n), t % 2)]
            assert mesh.tri_kind[other] == mesh.tri_kind[t]
            if mesh.tri_kind[t] == MAGNET:
                assert mesh.tri_subindex[other] == (mesh.tri_subindex[t] + 1) % spec.n_poles
                assert mesh.tri_polarity[other] == -mesh.tri_polarity[t]
            elif mesh.tri_kind[t] == TOOTH and mesh.tri_subindex[t] >= 0:
                assert mesh.tri_subindex[other] == (mesh.tri_subindex[t] + 6) % spec.n_teeth
            elif mesh.tri_kind[t] == SLOT:
                assert mesh.tri_subindex[other] == mesh.tri_subindex[t]
                assert mesh.tri_polarity[other] == -mesh.tri_polarity[t]

    def test_paper_scale_interface_builds(self):
        spec = MachineSpec(n_interface=900, rings_per_band=(1, 1, 1, 1, 2, 1), bridge_rings=1)
        mesh = build_mesh(spec)
        assert np.sum(mesh.node_role == INTERFACE) == 900

    def test_sector_bounds_tiles_unevenly_when_needed(self):
        bounds = sector_bounds(150, 12)
        assert bounds[0] == 0 and bounds[-1] == 150
        sizes = np.diff(bounds)
        assert set(sizes.tolist()) <= {12, 13}

    def test_export_text(self, mesh, tmp_path):
        path = tmp_path / "mesh.txt"
        mesh.export_text(path)
        text = path.read_text().splitlines()
        assert text[0].startswith("# nodes:")
        assert sum(line.startswith("#") for line in text) == 3


class TestToothPerturbation:
    def test_nominal_lengths_leave_mesh_unchanged(self, mesh, spec):
        assert apply_tooth_perturbation(mesh, spec) is mesh

    def test_single_tooth_moves_only_its_own_columns(self, mesh):
        spec = mesh.spec
        lengths = list(spec.tooth_lengths)
        lengths[7] += 0.3e-3
        pert = dataclasses.replace(spec, tooth_lengths=tuple(lengths))
        out = apply_tooth_perturbation(mesh, pert)
        moved = np.flatnonzero(np.any(out.nodes != mesh.nodes, axis=1))
        ids, _ = tooth_node_displacements(spec, mesh)
        assert set(moved.tolist()) == set(ids[7].tolist())
        a, b = tooth_cell_columns(spec, 7)
        cols = set(mesh.node_col[moved].tolist())
        assert cols == set(range(a + 1, b))

    def test_area_positive_and_total_invariant(self, mesh):
        spec = mesh.spec
        lengths = list(spec.tooth_lengths)
        lengths[3] += 0.4e-3
        lengths[20] -= 0.4e-3
        pert = dataclasses.replace(spec, tooth_lengths=tuple(lengths))
        out = apply_tooth_perturbation(mesh, pert)
        areas = out.triangle_areas()
        assert np.all(areas > 0)
        assert abs(areas.sum() - mesh.triangle_areas().sum()) < 1e-12 * areas.sum()

    def test_gap_band_area_change_matches_annulus_formula(self):
        """Fully displaced cells of the stator-gap band change area by the
        analytic annulus-sector difference."""
        spec = small_spec(n_interface=288)
        mesh = build_mesh(spec)
        delta = 0.35e-3
        tooth = 13
        lengths = list(spec.tooth_lengths)
        lengths[tooth] += delta
        out = apply_tooth_perturbation(mesh, dataclasses.replace(spec, tooth_lengths=tuple(lengths)))
        a, b = tooth_cell_columns(spec, tooth)
        inner_cols = np.arange(a + 1, b - 1)  # cells whose both node columns move
        gap_band = 3
        sel = (mesh.tri_band == gap_band) & np.isin(mesh.tri_col, inner_cols)
        assert np.any(sel)
        before = mesh.triangle_areas()[sel].sum()
        after = out.triangle_areas()[sel].sum()
        r3, r4 = spec.radii[3], spec.radii[4]
        dtheta = spec.delta_theta
        expected = inner_cols.size * 0.5 * np.sin(dtheta) * (((r4 - delta) ** 2 - r3**2) - (r4**2 - r3**2))
        assert abs((after - before) - expected) < 1e-12 * before

    def test_inverting_displacement_rejected(self, mesh):
        # the linear displacement profile cannot invert any triangle for
        # lengths inside the admissible band, so the area guard is exercised
        # by smuggling an inadmissible length past the spec validation
        spec = dataclasses.replace(mesh.spec)
        lengths = list(spec.tooth_lengths)
        lengths[0] = spec.radii[5] - spec.radii[3] + 2e-3  # tip below the interface
        object.__setattr__(spec, "tooth_lengths", tuple(lengths))
        with pytest.raises(GeometryError, match="invert"):
            apply_tooth_perturbation(mesh, spec)

    @settings(max_examples=10, deadline=None)
    @given(
        tooth=st.integers(min_value=0, max_value=35),
        delta=st.floats(min_value=-4e-4, max_value=4e-4),
    )
    def test_random_admissible_perturbations_keep_valid_mesh(self, tooth, delta):
        spec = small_spec()
        mesh = build_mesh(spec)
        lengths = list(spec.tooth_lengths)
        lengths[tooth] += delta
        out = apply_tooth_perturbation(mesh, dataclasses.replace(spec, tooth_lengths=tuple(lengths)))
        assert np.all(out.triangle_areas() > 0)
        assert np.array_equal(out.triangles, mesh.triangles)
        assert np.array_equal(out.tri_kind, mesh.tri_kind)


class TestPartition:
    def test_toy_mesh_hand_count(self):
        mesh = toy_polar_mesh(n_cols=6)
        part = partition_dofs(mesh)
        assert (part.n_static, part.n_rotating, part.n_interface) == (6, 6, 6)
        assert part.n_total == 18

    def test_outer_ring_absent_from_all_lists(self, mesh, partition):
        outer = set(np.flatnonzero(mesh.node_role == DIRICHLET).tolist())
        for ids in (partition.static_nodes, partition.rotating_nodes, partition.interface_nodes):
            assert not outer & set(ids.tolist())

    def test_interface_sorted_by_angular_index(self, mesh, partition):
        cols = mesh.node_col[partition.interface_nodes]
        assert np.array_equal(cols, np.arange(partition.n_interface))

    def test_lists_disjoint_and_cover_free_nodes(self, mesh, partition):
        all_ids = np.concatenate(
            [partition.static_nodes, partition.rotating_nodes, partition.interface_nodes]
        )
        assert np.unique(all_ids).size == all_ids.size
        free = np.flatnonzero(mesh.node_role != DIRICHLET)
        assert set(all_ids.tolist()) == set(free.tolist())
        assert partition.n_total == free.size
