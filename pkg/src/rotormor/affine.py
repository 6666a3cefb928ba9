"""Affine parametric decomposition of the assembled operators.

The stiffness matrix depends on the tooth lengths through a fixed-topology
radial deformation; each affected triangle is the image of its reference
triangle under an affine map that is linear in the tooth's elongation.
Pulling the integral back to the reference triangle turns the diffusion
coefficient into the tensor ``|det B| B^-1 B^-T``, so the stiffness
contribution of a group of congruent triangles is a combination of three
fixed matrices weighted by the tensor's independent entries, evaluated in
the group's rotation-aligned local frame.

Groups are formed per tooth, per ring band, per triangle shape (lower or
upper half of the grid cell) and per position in the tooth (left edge,
interior, right edge); within a group all triangles are exact rotated
copies of each other carrying the same displacement pattern, which is
verified at build time.

Load vectors are affine in the phase currents (three terms) and
trigonometric in each magnet's deviation angle (two terms per magnet);
they never depend on the tooth lengths because the deformation keeps coil
and magnet geometry untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import Loads, assemble_loads, p1_geometry, p1_stiffness
from .machine import (
    DofPartition,
    MachineSpec,
    Mesh,
    tooth_cell_columns,
    tooth_radial_weight,
)


class CongruenceError(RuntimeError):
    """A triangle group expected to be congruent is not; carries diagnostics."""


@dataclass
class StiffnessTerm:
    label: str
    theta: callable  # tooth_lengths -> float
    matrix: sp.csr_matrix


@dataclass
class LoadTerm:
    label: str
    theta: callable  # (magnet_angles, currents) -> float
    vector: np.ndarray


class _ToothGroup:
    """One congruence class of deforming triangles of one tooth."""

    def __init__(self, tooth, label, e0, ed, tri_ids):
        self.tooth = tooth
        self.label = label
        self.e0 = e0                      # reference edge matrix (local frame)
        self.ed = ed                      # edge displacement per meter of elongation
        self.minv = np.linalg.inv(e0)
        self.tri_ids = tri_ids
        self.fixed = None                 # (M_xx, M_xy, M_yy) csr matrices
        self.base = None                  # M_xx + M_yy, the nominal contribution

    def tensor(self, delta: float) -> np.ndarray:
        """``|det B| B^-1 B^-T`` of the group's map at elongation ``delta``."""
        b = (self.e0 + delta * self.ed) @ self.minv
        det = b[0, 0] * b[1, 1] - b[0, 1] * b[1, 0]
        if det <= 0.0:
            raise ValueError(
                f"tooth {self.tooth} group {self.label}: map degenerates at delta={delta}"
            )
        btb = b.T @ b
        return np.array(
            [[btb[1, 1], -btb[0, 1]], [-btb[0, 1], btb[0, 0]]]
        ) / det

    def thetas(self, tooth_lengths, nominal) -> tuple:
        g = self.tensor(float(tooth_lengths[self.tooth]) - nominal)
        return g[0, 0], g[0, 1], g[1, 1]


def _rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def _affected_ring_bands(mesh: Mesh, spec: MachineSpec):
    tooth_outer_ring = int(np.flatnonzero(np.isclose(mesh.ring_radii, spec.radii[5]))[0])
    return range(mesh.interface_ring, tooth_outer_ring), tooth_outer_ring


class ParametricDecomposition:
    """Exact parameter-separated form of the stiffness matrix and load
    vector on free DOFs, valid for any admissible parameter point.

    Stiffness: ``K(l) = K_const + sum_groups sum_{ab} G_ab(delta_t) M_ab``
    with one constant term covering every unaffected triangle.  Loads:
    ``f(phi, I) = sum_q I_q f_q + sum_p (cos(phi_p) f_p_cos + sin(phi_p) f_p_sin)``.
    """

    def __init__(self, spec, partition, k_const, k_const_rotor, groups, loads):
        self.spec = spec
        self.partition = partition
        self.k_const = k_const              # stator-side unaffected triangles
        self.k_const_rotor = k_const_rotor  # entire rotor side (never deforms)
        self.groups = groups
        self.loads = loads
        self.nominal = spec.nominal_tooth_length

    # -- stiffness ---------------------------------------------------------
    def evaluate_stiffness(self, tooth_lengths=None) -> sp.csr_matrix:
        """Full free-DOF stiffness at the given tooth lengths (base rotation)."""
        lengths = self._lengths(tooth_lengths)
        k = self.k_const + self.k_const_rotor
        extra = None
        for g in self.groups:
            delta = lengths[g.tooth] - self.nominal
            if delta == 0.0:
                part = g.base
            else:
                gxx, gxy, gyy = g.thetas(lengths, self.nominal)
                part = gxx * g.fixed[0] + gxy * g.fixed[1] + gyy * g.fixed[2]
            extra = part if extra is None else extra + part
        return (k + extra).tocsr() if extra is not None else k.tocsr()

    def evaluate_stiffness_sides(self, tooth_lengths=None):
        """(stator-side, rotor-side) split of :meth:`evaluate_stiffness`."""
        k_stator = self.evaluate_stiffness(tooth_lengths) - self.k_const_rotor
        return k_stator.tocsr(), self.k_const_rotor

    def stiffness_terms(self) -> list:
        """The formal term list: one constant term plus three per group."""
        terms = [
            StiffnessTerm("const", lambda lengths: 1.0, (self.k_const + self.k_const_rotor).tocsr())
        ]
        for g in self.groups:
            for comp, name in ((0, "xx"), (1, "xy"), (2, "yy")):
                terms.append(
                    StiffnessTerm(
                        f"tooth{g.tooth}:{g.label}:{name}",
                        (lambda lengths, g=g, comp=comp: g.thetas(lengths, self.nominal)[comp]),
                        g.fixed[comp],
                    )
                )
        return terms

    @property
    def n_parametric_stiffness_terms(self) -> int:
        """Parameter-dependent stiffness terms: three per congruence group."""
        return 3 * len(self.groups)

    def groups_per_tooth(self) -> int:
        counts = {}
        for g in self.groups:
            counts[g.tooth] = counts.get(g.tooth, 0) + 1
        assert len(set(counts.values())) <= 1
        return next(iter(counts.values())) if counts else 0

    # -- loads --------------------------------------------------------------
    def evaluate_load(self, magnet_angles=None, currents=(0.0, 0.0, 0.0)) -> np.ndarray:
        phis = self.spec.magnet_angles if magnet_angles is None else magnet_angles
        return self.loads.f_phase @ np.asarray(currents, float) + self.loads.magnet_load(phis)

    def load_terms(self) -> list:
        terms = []
        for q in range(3):
            terms.append(
                LoadTerm(
                    f"phase{q}",
                    (lambda phis, currents, q=q: float(currents[q])),
                    self.loads.f_phase[:, q],
                )
            )
        for p in range(self.spec.n_poles):
            terms.append(
                LoadTerm(
                    f"magnet{p}:cos",
                    (lambda phis, currents, p=p: float(np.cos(phis[p]))),
                    self.loads.f_mag_cos[:, p],
                )
            )
            terms.append(
                LoadTerm(
                    f"magnet{p}:sin",
                    (lambda phis, currents, p=p: float(np.sin(phis[p]))),
                    self.loads.f_mag_sin[:, p],
                )
            )
        return terms

    def _lengths(self, tooth_lengths):
        if tooth_lengths is None:
            return np.asarray(self.spec.tooth_lengths, float)
        lengths = np.asarray(tooth_lengths, dtype=float)
        if lengths.shape != (self.spec.n_teeth,):
            raise ValueError(f"expected {self.spec.n_teeth} tooth lengths")
        return lengths


def build_parametric_decomposition(
    reference_mesh: Mesh, spec: MachineSpec, partition: DofPartition = None
) -> ParametricDecomposition:
    """Group the deforming triangles of every tooth into congruence classes
    and assemble their fixed matrices on the reference mesh."""
    from .machine import partition_dofs

    mesh = reference_mesh
    if partition is None:
        partition = partition_dofs(mesh)
    n = partition.n_total
    dof_map = partition.node_to_dof
    n_i = spec.n_interface
    dtheta = spec.delta_theta
    nu = mesh.reluctivities()
    area, bco, cco = p1_geometry(mesh.nodes, mesh.triangles)

    ring_bands, tooth_outer_ring = _affected_ring_bands(mesh, spec)
    weights = tooth_radial_weight(spec, mesh.ring_radii)

    # map (ring_band, cell_col, shape) -> triangle id; triangles come in
    # (lower, upper) pairs per cell, cells column-major per ring band
    def tri_id(rb, col, shape):
        return 2 * (rb * n_i + col) + shape

    affected = np.zeros(mesh.triangles.shape[0], dtype=bool)
    groups = []
    for tooth in range(spec.n_teeth):
        a, b = tooth_cell_columns(spec, tooth)
        if b - a < 2:
            continue  # no interior node column: tooth is rigid
        positions = [("left", [a]), ("interior", list(range(a + 1, b - 1))), ("right", [b - 1])]
        for rb in ring_bands:
            for shape, shape_name in ((0, "lo"), (1, "hi")):
                for pos_name, cols in positions:
                    if not cols:
                        continue
                    members = [tri_id(rb, c, shape) for c in cols]
                    e0 = ed = None
                    for c, t_id in zip(cols, members):
                        affected[t_id] = True
                        verts = mesh.triangles[t_id]
                        rot = _rotation(-c * dtheta)
                        v_loc = mesh.nodes[verts] @ rot.T
                        d_loc = np.zeros((3, 2))
                        for j, node in enumerate(verts):
                            ncol = mesh.node_col[node]
                            if a + 1 <= ncol <= b - 1:
                                w = weights[mesh.node_ring[node]]
                                ang = (ncol - c) * dtheta
                                d_loc[j] = -w * np.array([np.cos(ang), np.sin(ang)])
                        e0_t = np.column_stack([v_loc[1] - v_loc[0], v_loc[2] - v_loc[0]])
                        ed_t = np.column_stack([d_loc[1] - d_loc[0], d_loc[2] - d_loc[0]])
                        if e0 is None:
                            e0, ed = e0_t, ed_t
                        else:
                            scale = np.abs(e0).max()
                            if (
                                np.abs(e0_t - e0).max() > 1e-12 * scale
                                or np.abs(ed_t - ed).max() > 1e-9
                            ):
                                raise CongruenceError(
                                    f"tooth {tooth} ring band {rb} {shape_name}/{pos_name}: "
                                    f"triangle {t_id} (col {c}) is not congruent to the "
                                    f"group representative (col {cols[0]})"
                                )
                    group = _ToothGroup(
                        tooth, f"rb{rb}:{shape_name}:{pos_name}", e0, ed, np.array(members)
                    )
                    group.fixed, group.base = _group_fixed_matrices(
                        mesh, group, nu, area, dof_map, n, dtheta
                    )
                    groups.append(group)

    rotor_side = mesh.tri_band <= 2
    const_sel = ~rotor_side & ~affected
    k_const = p1_stiffness(mesh.nodes, mesh.triangles[const_sel], nu[const_sel], n, dof_map)
    k_rot = p1_stiffness(mesh.nodes, mesh.triangles[rotor_side], nu[rotor_side], n, dof_map)
    loads = assemble_loads(mesh, partition, spec)
    return ParametricDecomposition(spec, partition, k_const, k_rot, groups, loads)


def _group_fixed_matrices(mesh, group, nu, area, dof_map, n, dtheta):
    """Assemble ``M_xx, M_xy, M_yy`` of one group: P1 stiffness pieces with
    gradients expressed in the group's rotation-aligned local frame."""
    rows, cols_idx = [], []
    data = {0: [], 1: [], 2: []}
    n_i = mesh.n_interface
    for t_id in group.tri_ids:
        verts = mesh.triangles[t_id]
        cell_col = (t_id // 2) % n_i
        rot = _rotation(-cell_col * dtheta)
        # global gradients (2x3) rotated into the local frame
        p = mesh.nodes[verts]
        x, y = p[:, 0], p[:, 1]
        gb = np.vstack([
            [y[1] - y[2], y[2] - y[0], y[0] - y[1]],
            [x[2] - x[1], x[0] - x[2], x[1] - x[0]],
        ]) / (2.0 * area[t_id])
        # local coordinates are rot @ x, so gradients transform the same way
        g_loc = rot @ gb
        gx, gy = g_loc[0], g_loc[1]
        f = nu[t_id] * area[t_id]
        m_xx = f * np.outer(gx, gx)
        m_yy = f * np.outer(gy, gy)
        m_xy = f * (np.outer(gx, gy) + np.outer(gy, gx))
        dd = dof_map[verts]
        rr = np.repeat(dd, 3)
        cc = np.tile(dd, 3)
        rows.append(rr)
        cols_idx.append(cc)
        data[0].append(m_xx.ravel())
        data[1].append(m_xy.ravel())
        data[2].append(m_yy.ravel())
    rr = np.concatenate(rows)
    cc = np.concatenate(cols_idx)
    keep = (rr >= 0) & (cc >= 0)
    mats = []
    for comp in (0, 1, 2):
        vals = np.concatenate(data[comp])[keep]
        mats.append(sp.coo_matrix((vals, (rr[keep], cc[keep])), shape=(n, n)).tocsr())
    return tuple(mats), (mats[0] + mats[2]).tocsr()
