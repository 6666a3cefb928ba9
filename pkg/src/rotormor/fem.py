"""2D magnetostatic P1 finite elements with a stator/rotor/interface block
structure and locked-step rotation by interface index shift.

The weak form solved is ``-div(nu grad a) = j_src - j_pm`` on the machine
cross-section with a homogeneous Dirichlet ring on the outer boundary.  The
DOF vector carries ``depth * A_z``; the uniform depth factor is omitted
from the assembled operators and all downstream algorithms are invariant
to it.

Rotating the rotor by ``k`` angular increments never reassembles anything:
the rotor-interface coupling and the rotor-side interface self-block are
index-shifted by the circular permutation ``P_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .machine import MAGNET, SLOT, DofPartition, MachineSpec, Mesh
from .pod import SnapshotSet

SOLVER_RTOL = 1e-10  # full-order solver contract on the relative residual


class SolverError(RuntimeError):
    """Linear solver breakdown or violated accuracy contract."""


def p1_geometry(nodes: np.ndarray, triangles: np.ndarray):
    """Areas and gradient coefficients of P1 triangles.

    Returns ``(area, b, c)`` with ``grad phi_i = (b_i, c_i) / (2 area)``.
    """
    p = nodes[triangles]
    x, y = p[..., 0], p[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    return area, b, c


def p1_stiffness(nodes, triangles, nu, n_dofs=None, dof_map=None) -> sp.csr_matrix:
    """Assemble ``int nu grad(phi_i) . grad(phi_j)`` over a triangulation.

    ``dof_map`` maps node ids to DOF ids with -1 marking eliminated
    (Dirichlet) nodes; by default all nodes are kept.
    """
    area, b, c = p1_geometry(nodes, triangles)
    if np.any(area <= 0.0):
        bad = int(np.flatnonzero(area <= 0.0)[0])
        raise ValueError(f"degenerate or inverted triangle {bad} (area {area[bad]:.3e})")
    nu = np.broadcast_to(np.asarray(nu, dtype=float), (triangles.shape[0],))
    factor = nu / (4.0 * area)
    ke = factor[:, None, None] * (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :])
    if dof_map is None:
        dof_map = np.arange(int(nodes.shape[0]))
        n_dofs = nodes.shape[0]
    rows = np.repeat(dof_map[triangles], 3, axis=1).ravel()
    cols = np.tile(dof_map[triangles], (1, 3)).ravel()
    data = ke.ravel()
    keep = (rows >= 0) & (cols >= 0)
    return sp.coo_matrix(
        (data[keep], (rows[keep], cols[keep])), shape=(n_dofs, n_dofs)
    ).tocsr()


def _scatter_vector(values, triangles, dof_map, n_dofs):
    """Scatter per-triangle per-vertex values into a DOF vector."""
    f = np.zeros(n_dofs)
    dofs = dof_map[triangles].ravel()
    vals = values.ravel()
    keep = dofs >= 0
    np.add.at(f, dofs[keep], vals[keep])
    return f


@dataclass
class StiffnessBlocks:
    """The five independent stiffness blocks of the rotating block system,
    with the interface self-block split by element side."""

    Kss: sp.csr_matrix
    Krr: sp.csr_matrix
    KsI: sp.csr_matrix
    KrI: sp.csr_matrix
    KIIs: sp.csr_matrix
    KIIr: sp.csr_matrix


def assemble_stiffness(mesh: Mesh, partition: DofPartition) -> StiffnessBlocks:
    """Assemble the block stiffness on the (possibly tooth-perturbed) mesh.

    Triangles are assembled separately for the rotor side (bands below the
    interface circle) and the stator side, which yields the split
    ``K_II = K_II_s + K_II_r`` that realizes rotation as an index shift.
    """
    nu = mesh.reluctivities()
    n = partition.n_total
    rotor_side = mesh.tri_band <= 2
    k_rot = p1_stiffness(
        mesh.nodes, mesh.triangles[rotor_side], nu[rotor_side], n, partition.node_to_dof
    )
    k_sta = p1_stiffness(
        mesh.nodes, mesh.triangles[~rotor_side], nu[~rotor_side], n, partition.node_to_dof
    )
    s, r, i = partition.slices()
    return StiffnessBlocks(
        Kss=k_sta[s, s].tocsr(),
        Krr=k_rot[r, r].tocsr(),
        KsI=k_sta[s, i].tocsr(),
        KrI=k_rot[r, i].tocsr(),
        KIIs=k_sta[i, i].tocsr(),
        KIIr=k_rot[i, i].tocsr(),
    )


@dataclass
class Loads:
    """Load blocks and their parameter structure.

    ``f_phase`` holds one column per coil phase (scaled by the phase current
    at solve time); ``f_mag_cos`` / ``f_mag_sin`` hold the two precomputed
    vectors per magnet whose ``cos/sin`` combination gives the magnet load
    for any remanence deviation angle.  All arrays live on free DOFs.
    """

    f_phase: np.ndarray
    f_mag_cos: np.ndarray
    f_mag_sin: np.ndarray

    def magnet_load(self, magnet_angles) -> np.ndarray:
        phis = np.asarray(magnet_angles, dtype=float)
        return self.f_mag_cos @ np.cos(phis) + self.f_mag_sin @ np.sin(phis)


def slot_weight_table(mesh: Mesh, spec: MachineSpec) -> np.ndarray:
    """Per-triangle, per-phase current-density weights of the winding.

    Belt winding: the tagged phase with its polarity.  Distributed winding:
    every slot carries all three phases weighted by the harmonic winding
    function sampled at the slot center.
    """
    from .machine import SECTORS_PER_POLE, sector_bounds

    n_tris = mesh.triangles.shape[0]
    weights = np.zeros((n_tris, 3))
    slot_sel = mesh.tri_kind == SLOT
    if spec.winding == "belt":
        for q in range(3):
            sel = slot_sel & (mesh.tri_subindex == q)
            weights[sel, q] = mesh.tri_polarity[sel]
        return weights
    per_pole = spec.n_interface // spec.n_poles
    bounds = sector_bounds(per_pole, SECTORS_PER_POLE)
    sector = np.searchsorted(bounds, mesh.tri_col % per_pole, side="right") - 1
    pole = mesh.tri_col // per_pole
    for p in range(spec.n_poles):
        for s_loc in range(SECTORS_PER_POLE // 2):
            sel = slot_sel & (pole == p) & (sector == 2 * s_loc + 1)
            if not np.any(sel):
                continue
            center = (
                p * per_pole + 0.5 * (bounds[2 * s_loc + 1] + bounds[2 * s_loc + 2])
            ) * spec.delta_theta
            weights[sel] = spec.slot_phase_weights(center)
    return weights


def magnet_triangle_fields(mesh: Mesh, spec: MachineSpec, p: int):
    """Per-triangle nominal remanence vectors of magnet ``p`` (evaluated at
    triangle centroids) and the selecting mask."""
    sel = (mesh.tri_kind == MAGNET) & (mesh.tri_subindex == p)
    centroids = mesh.nodes[mesh.triangles[sel]].mean(axis=1)
    theta = np.arctan2(centroids[:, 1], centroids[:, 0])
    return sel, spec.magnet_base_field(p, theta)


def assemble_loads(mesh: Mesh, partition: DofPartition, spec: MachineSpec) -> Loads:
    """Assemble coil and magnet load vectors.

    Coil term: ``f_q[i] = sum_slots w_q * int_slot phi_i`` per phase at unit
    current density.  Magnet term: the weak form of ``-curl(nu B_rem)``
    reduces to ``int nu (B_rem rotated by -90 deg) . grad phi_i`` over each
    magnet; a deviation angle ``phi_p`` rotates the remanence in-plane,
    which splits exactly into ``cos(phi_p)``- and ``sin(phi_p)``-weighted
    precomputed vectors.  The sign convention makes a positive-polarity
    magnet at zero deviation drive outward radial flux through its own
    pole face.
    """
    area, b, c = p1_geometry(mesh.nodes, mesh.triangles)
    n = partition.n_total
    dof_map = partition.node_to_dof

    f_phase = np.zeros((n, 3))
    weights = slot_weight_table(mesh, spec)
    for q in range(3):
        sel = weights[:, q] != 0.0
        if not np.any(sel):
            continue
        values = np.repeat(
            (weights[sel, q] * area[sel] / 3.0)[:, None], 3, axis=1
        )
        f_phase[:, q] = _scatter_vector(values, mesh.triangles[sel], dof_map, n)

    nu_mag = spec.reluctivity(MAGNET)
    f_cos = np.zeros((n, spec.n_poles))
    f_sin = np.zeros((n, spec.n_poles))
    for p in range(spec.n_poles):
        sel, base = magnet_triangle_fields(mesh, spec, p)
        if not np.any(sel):
            continue
        # rotate the remanence by +90 deg; the sign makes the interior field
        # align with the magnetization (outward flux through a positive pole)
        base_perp = np.column_stack([-base[:, 1], base[:, 0]])
        # int_T v . grad(phi_i) = (v_x b_i + v_y c_i) / 2
        for vec, target in ((base_perp, f_cos), (-base, f_sin)):
            values = 0.5 * (vec[:, :1] * b[sel] + vec[:, 1:2] * c[sel])
            target[:, p] = nu_mag * _scatter_vector(values, mesh.triangles[sel], dof_map, n)
    return Loads(f_phase=f_phase, f_mag_cos=f_cos, f_mag_sin=f_sin)


def roll_forward(v: np.ndarray, k: int) -> np.ndarray:
    """Apply the interface shift ``P_k``: ``(P_k v)[m] = v[m + k]``."""
    return np.roll(v, -k, axis=0)


def roll_backward(v: np.ndarray, k: int) -> np.ndarray:
    """Apply ``P_k^T``: ``(P_k^T v)[m] = v[m - k]``."""
    return np.roll(v, k, axis=0)


def shift_indices(n: int, k: int) -> np.ndarray:
    """Index array realizing ``P_k^T X P_k = X[ix_(idx, idx)]``."""
    return (np.arange(n) - k) % n


@dataclass
class BlockSystem:
    """Full-order block system of one machine configuration.

    Holds the five stiffness blocks, the split interface self-block, the
    parameter-structured load blocks, and the machine spec that provides
    the phase-current law.  The configuration (tooth lengths, magnet
    angles) is baked in; only the rotation angle remains free.
    """

    spec: MachineSpec
    partition: DofPartition
    blocks: StiffnessBlocks
    loads: Loads
    f_rotor: np.ndarray  # magnet load at the spec's magnet angles (free DOFs)

    @classmethod
    def build(cls, mesh: Mesh, partition: DofPartition, spec: MachineSpec) -> "BlockSystem":
        blocks = assemble_stiffness(mesh, partition)
        loads = assemble_loads(mesh, partition, spec)
        return cls(
            spec=spec,
            partition=partition,
            blocks=blocks,
            loads=loads,
            f_rotor=loads.magnet_load(spec.magnet_angles),
        )

    @property
    def n_interface(self) -> int:
        return self.partition.n_interface

    def currents(self, k: int) -> np.ndarray:
        return self.spec.phase_currents(k * self.spec.delta_theta)

    def load_vector(self, k: int) -> np.ndarray:
        """Free-DOF load at angle index ``k`` (interface rows of the coil and
        magnet loads are identically zero for this geometry, so no shift is
        needed here; the general shifted form lives in RotatedSystem.rhs)."""
        return self.loads.f_phase @ self.currents(k) + self.f_rotor

    def at_angle(self, k: int) -> "RotatedSystem":
        n_i = self.n_interface
        if not 0 <= k <= n_i:
            raise ValueError(f"angle index {k} outside [0, {n_i}]")
        return RotatedSystem(system=self, k=k % n_i)


@dataclass
class RotatedSystem:
    """View of the block system at rotation step ``k``; no entries are
    recomputed, the rotor-side couplings are index-shifted."""

    system: BlockSystem
    k: int

    def matrix(self) -> sp.csr_matrix:
        sy, k = self.system, self.k
        b = sy.blocks
        n_i = sy.n_interface
        idx = shift_indices(n_i, k)
        kri_k = b.KrI[:, idx]
        kii_k = b.KIIs + b.KIIr[idx][:, idx]
        return sp.bmat(
            [
                [b.Kss, None, b.KsI],
                [None, b.Krr, kri_k],
                [b.KsI.T, kri_k.T, kii_k],
            ],
            format="csr",
        )

    def rhs(self) -> np.ndarray:
        sy, k = self.system, self.k
        f = sy.loads.f_phase @ sy.currents(k)
        s, r, i = sy.partition.slices()
        out = f.copy()
        out[s] += sy.f_rotor[s]  # zero by construction, kept for generality
        out[r] += sy.f_rotor[r]
        out[i] += roll_backward(sy.f_rotor[i], k)
        return out

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Matrix-vector product without assembling the rotated matrix."""
        sy, k = self.system, self.k
        b = sy.blocks
        s, r, i = sy.partition.slices()
        xs, xr, xi = x[s], x[r], x[i]
        xi_shift = roll_forward(xi, k)
        out = np.empty_like(x)
        out[s] = b.Kss @ xs + b.KsI @ xi
        out[r] = b.Krr @ xr + b.KrI @ xi_shift
        out[i] = (
            b.KsI.T @ xs
            + roll_backward(b.KrI.T @ xr, k)
            + b.KIIs @ xi
            + roll_backward(b.KIIr @ xi_shift, k)
        )
        return out

    def residual(self, a: np.ndarray) -> np.ndarray:
        return self.rhs() - self.apply(a)


@dataclass
class FullSolution:
    """Full-order solution at one angle index."""

    a: np.ndarray
    k: int
    partition: DofPartition

    @property
    def a_static(self) -> np.ndarray:
        return self.a[self.partition.slices()[0]]

    @property
    def a_rotating(self) -> np.ndarray:
        return self.a[self.partition.slices()[1]]

    @property
    def a_interface(self) -> np.ndarray:
        return self.a[self.partition.slices()[2]]


def solve_full(rotated: RotatedSystem) -> FullSolution:
    """Direct sparse solve of one rotated system; enforces the relative
    residual contract and raises :class:`SolverError` on violation."""
    mat = rotated.matrix()
    f = rotated.rhs()
    try:
        lu = spla.splu(mat.tocsc())
        a = lu.solve(f)
    except RuntimeError as exc:  # pragma: no cover - factorization breakdown
        raise SolverError(f"sparse factorization failed at k={rotated.k}: {exc}") from exc
    fnorm = np.linalg.norm(f)
    if fnorm == 0.0:
        return FullSolution(a=np.zeros_like(f), k=rotated.k, partition=rotated.system.partition)
    res = np.linalg.norm(f - mat @ a) / fnorm
    if res > SOLVER_RTOL:
        a += lu.solve(f - mat @ a)
        res = np.linalg.norm(f - mat @ a) / fnorm
        if res > SOLVER_RTOL:
            raise SolverError(
                f"solver contract violated at k={rotated.k}: relative residual {res:.3e}"
            )
    return FullSolution(a=a, k=rotated.k, partition=rotated.system.partition)


class FullOrderSolver:
    """Full-order solves over many angles with cached factorizations.

    The angle-independent stator and rotor blocks are factorized once and
    the interface Schur complement is precomputed; because the rotor is
    rotationally congruent, the rotated Schur matrix differs from the base
    one only by floating-point noise, so each angle needs a permutation,
    one Cholesky backsolve and an iterative-refinement step.  Every
    solution is residual-checked against the same contract as
    :func:`solve_full`, with a fallback to a fresh direct solve.
    """

    def __init__(self, system: BlockSystem):
        self.system = system
        b = system.blocks
        self._lu_ss = spla.splu(b.Kss.tocsc())
        self._lu_rr = spla.splu(b.Krr.tocsc())
        ksi = b.KsI.toarray()
        kri = b.KrI.toarray()
        self._cs = b.KIIs.toarray() - ksi.T @ self._lu_ss.solve(ksi)
        self._cr = b.KIIr.toarray() - kri.T @ self._lu_rr.solve(kri)
        self._chol = sla.cho_factor(self._cs + self._cr)
        # current-unit stator responses and the constant rotor response
        s, r, i = system.partition.slices()
        self._fphase_s = system.loads.f_phase[s]
        self._fphase_i = system.loads.f_phase[i]
        self._fs_const = system.f_rotor[s]
        self._fi_const = system.f_rotor[i]
        self._ys_phase = self._lu_ss.solve(self._fphase_s)
        self._ys_const = self._lu_ss.solve(self._fs_const)
        self._fr = system.f_rotor[r]
        self._yr = self._lu_rr.solve(self._fr)
        self._vr = b.KrI.T @ self._yr
        self.fallbacks = 0

    def _schur_apply(self, z: np.ndarray, k: int) -> np.ndarray:
        return self._cs @ z + roll_backward(self._cr @ roll_forward(z, k), k)

    def solve(self, k: int) -> FullSolution:
        sy = self.system
        n_i = sy.n_interface
        if not 0 <= k <= n_i:
            raise ValueError(f"angle index {k} outside [0, {n_i}]")
        k = k % n_i
        b = sy.blocks
        s, r, i = sy.partition.slices()
        cur = sy.currents(k)
        ys = self._ys_phase @ cur + self._ys_const
        f_i = self._fphase_i @ cur + roll_backward(self._fi_const, k)
        beta = f_i - (b.KsI.T @ ys) - roll_backward(self._vr, k)
        # refine against the exactly-shifted Schur matrix
        ai = sla.cho_solve(self._chol, beta)
        bnorm = np.linalg.norm(beta) or 1.0
        for _ in range(6):
            resid = beta - self._schur_apply(ai, k)
            if np.linalg.norm(resid) <= 1e-14 * bnorm:
                break
            ai += sla.cho_solve(self._chol, resid)
        a = np.empty(sy.partition.n_total)
        a[s] = ys - self._lu_ss.solve(b.KsI @ ai)
        a[r] = self._yr - self._lu_rr.solve(b.KrI @ roll_forward(ai, k))
        a[i] = ai
        rotated = sy.at_angle(k)
        f = rotated.rhs()
        fnorm = np.linalg.norm(f)
        if fnorm > 0 and np.linalg.norm(f - rotated.apply(a)) / fnorm > SOLVER_RTOL:
            self.fallbacks += 1
            return solve_full(rotated)
        return FullSolution(a=a, k=k, partition=sy.partition)


def sweep_full(system: BlockSystem, angles, solver: FullOrderSolver = None) -> SnapshotSet:
    """Solve the full-order system for every index in ``angles``.

    Columns are ordered by ascending angle index; duplicates are rejected.
    """
    angles = np.asarray(sorted(int(k) for k in angles), dtype=int)
    if np.unique(angles).size != angles.size:
        raise ValueError("duplicate angle indices in sweep")
    if solver is None:
        solver = FullOrderSolver(system)
    cols = [solver.solve(int(k)).a for k in angles]
    return SnapshotSet(
        data=np.column_stack(cols) if cols else np.zeros((system.partition.n_total, 0)),
        angle_indices=angles,
        row_partition=system.partition.slices(),
    )


def export_matrix_coo(matrix, path) -> None:
    """Write a sparse matrix in the documented ``row col value`` text format."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
