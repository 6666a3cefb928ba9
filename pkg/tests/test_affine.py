import dataclasses

import numpy as np
import pytest

from rotormor import apply_tooth_perturbation, build_mesh, build_parametric_decomposition
from rotormor.affine import CongruenceError
from rotormor.fem import assemble_loads, p1_stiffness

from .conftest import small_spec


@pytest.fixture(scope="module")
def setup():
    spec = small_spec()
    mesh = build_mesh(spec)
    from rotormor import partition_dofs

    part = partition_dofs(mesh)
    dec = build_parametric_decomposition(mesh, spec, part)
    return spec, mesh, part, dec


def direct_stiffness(spec, mesh, part, lengths):
    pert = dataclasses.replace(spec, tooth_lengths=tuple(lengths))
    actual = apply_tooth_perturbation(mesh, pert)
    return p1_stiffness(actual.nodes, actual.triangles, actual.reluctivities(), part.n_total, part.node_to_dof)


class TestStiffnessDecomposition:
    def test_nominal_point_reproduces_reference_assembly(self, setup):
        spec, mesh, part, dec = setup
        k_dec = dec.evaluate_stiffness()
        k_ref = direct_stiffness(spec, mesh, part, spec.tooth_lengths)
        assert abs(k_dec - k_ref).max() <= 1e-13 * abs(k_ref).max()

    def test_reference_elongation_matches_displaced_assembly(self, setup):
        spec, mesh, part, dec = setup
        lengths = np.array(spec.tooth_lengths)
        lengths[11] += 0.3e-3
        k_dec = dec.evaluate_stiffness(lengths)
        k_dir = direct_stiffness(spec, mesh, part, lengths)
        assert abs(k_dec - k_dir).max() <= 1e-12 * abs(k_dir).max()

    def test_random_parameter_points_match_direct_assembly(self, setup, rng):
        spec, mesh, part, dec = setup
        for _ in range(4):
            lengths = np.array(spec.tooth_lengths)
            teeth = rng.choice(spec.n_teeth, size=3, replace=False)
            lengths[teeth] += rng.uniform(-4e-4, 4e-4, size=3)
            k_dec = dec.evaluate_stiffness(lengths)
            k_dir = direct_stiffness(spec, mesh, part, lengths)
            assert abs(k_dec - k_dir).max() <= 1e-12 * abs(k_dir).max()

    def test_formal_term_sum_equals_fast_evaluation(self, setup, rng):
        spec, mesh, part, dec = setup
        lengths = np.array(spec.tooth_lengths)
        lengths[5] += 2.5e-4
        terms = dec.stiffness_terms()
        total = sum(t.theta(lengths) * t.matrix for t in terms)
        fast = dec.evaluate_stiffness(lengths)
        assert abs(total - fast).max() <= 1e-12 * abs(fast).max()

    def test_term_count_is_three_per_congruence_group(self, setup):
        spec, _, _, dec = setup
        assert dec.n_parametric_stiffness_terms == 3 * len(dec.groups)
        assert len(dec.stiffness_terms()) == dec.n_parametric_stiffness_terms + 1
        # e.g. with one slotted ring band above the bridge: three affected
        # ring bands, two triangle shapes, left/right edge columns
        assert len(dec.groups) == spec.n_teeth * dec.groups_per_tooth()

    def test_side_split_keeps_rotor_side_constant(self, setup, rng):
        spec, _, _, dec = setup
        lengths = np.array(spec.tooth_lengths)
        lengths[0] += 3e-4
        k_s, k_r = dec.evaluate_stiffness_sides(lengths)
        assert abs(k_r - dec.k_const_rotor).max() == 0.0
        assert abs((k_s + k_r) - dec.evaluate_stiffness(lengths)).max() < 1e-14 * abs(k_r).max()

    def test_wrong_length_count_rejected(self, setup):
        _, _, _, dec = setup
        with pytest.raises(ValueError, match="tooth lengths"):
            dec.evaluate_stiffness(np.zeros(5))

    def test_congruence_violation_reported_with_diagnostics(self):
        # needs a tooth wide enough for a multi-member interior class
        spec = small_spec(n_interface=288)
        mesh = build_mesh(spec)
        from rotormor import partition_dofs
        from rotormor.machine import tooth_cell_columns

        part = partition_dofs(mesh)
        a, b = tooth_cell_columns(spec, 0)
        tip_ring = int(np.flatnonzero(np.isclose(mesh.ring_radii, spec.radii[4]))[0])
        broken = dataclasses.replace(mesh, nodes=mesh.nodes.copy())
        broken.nodes[tip_ring * spec.n_interface + a + 2] *= 1.001
        with pytest.raises(CongruenceError, match="tooth 0"):
            build_parametric_decomposition(broken, spec, part)


class TestLoadDecomposition:
    def test_load_terms_cover_three_currents_and_two_per_magnet(self, setup):
        spec, _, _, dec = setup
        terms = dec.load_terms()
        assert len(terms) == 3 + 2 * spec.n_poles

    def test_term_sum_matches_evaluation(self, setup, rng):
        spec, _, _, dec = setup
        phis = rng.uniform(-0.2, 0.2, size=spec.n_poles)
        currents = rng.standard_normal(3) * spec.phase_current_amplitude
        f_eval = dec.evaluate_load(phis, currents)
        f_sum = sum(t.theta(phis, currents) * t.vector for t in dec.load_terms())
        assert np.linalg.norm(f_eval - f_sum) <= 1e-13 * np.linalg.norm(f_eval)

    def test_loads_do_not_depend_on_tooth_lengths(self, setup, rng):
        """The deformation never moves slot or magnet vertices, so the load
        vectors assembled on the displaced mesh equal the reference ones."""
        spec, mesh, part, dec = setup
        lengths = np.array(spec.tooth_lengths)
        lengths[[2, 17]] += [3e-4, -2e-4]
        actual = apply_tooth_perturbation(mesh, dataclasses.replace(spec, tooth_lengths=tuple(lengths)))
        displaced = assemble_loads(actual, part, spec)
        reference = assemble_loads(mesh, part, spec)
        assert np.array_equal(displaced.f_phase, reference.f_phase)
        assert np.array_equal(displaced.f_mag_cos, reference.f_mag_cos)
        assert np.array_equal(displaced.f_mag_sin, reference.f_mag_sin)
