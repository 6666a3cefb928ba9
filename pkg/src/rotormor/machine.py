"""Surrogate machine geometry and structured polar meshing.

The machine is a concentric-band cross-section: rotor iron core, a magnet
band of one sector magnet per pole, a two-sided airgap split by the sliding
interface circle, a tooth band alternating iron teeth and current-carrying
slots (six slots per pole), and the stator yoke.  Everything is meshed on a
structured polar grid with ``n_interface`` equidistant angular columns so
that rotating the rotor by one angular increment is an exact index shift.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MU0 = 4.0e-7 * math.pi

# region kind codes (per triangle)
ROTOR_IRON = 0
MAGNET = 1
AIRGAP = 2
TOOTH = 3
SLOT = 4
YOKE = 5

REGION_NAMES = {
    ROTOR_IRON: "rotor_iron",
    MAGNET: "magnet",
    AIRGAP: "airgap",
    TOOTH: "tooth",
    SLOT: "slot",
    YOKE: "yoke",
}

# node role codes
STATIC = 0
ROTATING = 1
INTERFACE = 2
DIRICHLET = 3

BANDS = ("core", "magnet", "gap_rotor", "gap_stator", "tooth", "yoke")
SLOTS_PER_POLE = 6
SECTORS_PER_POLE = 2 * SLOTS_PER_POLE

# slot belt pattern within one pole: (phase, sign); the sign alternates with
# the pole index so the winding produces an n_poles/2 pole-pair field.
_SLOT_PATTERN = ((0, 1), (0, 1), (2, -1), (2, -1), (1, 1), (1, 1))


class GeometryError(ValueError):
    """Invalid machine specification or inadmissible mesh deformation."""


@dataclass(frozen=True)
class MachineSpec:
    """Parameters of the surrogate machine.

    ``radii`` lists, strictly increasing, the seven band boundaries:
    shaft surface, magnet band inner/outer, interface circle, tooth tip
    circle (nominal), tooth root / yoke inner, and the outer boundary that
    carries the homogeneous Dirichlet condition.

    ``tooth_lengths`` are absolute radial tooth extents; the nominal length
    is ``radii[5] - radii[4]``.  ``magnet_angles`` are deviations of each
    magnet's remanence direction from its nominal (radial, alternating
    sign) orientation, in radians.
    """

    n_poles: int = 6
    n_interface: int = 720
    radii: tuple = (0.016, 0.025, 0.033, 0.048, 0.0505, 0.068, 0.080)
    rings_per_band: tuple = (2, 2, 1, 1, 3, 2)
    depth: float = 0.010
    rel_permeability_iron: float = 500.0
    rel_permeability_magnet: float = 1.0
    remanence_magnitude: float = 1.0
    # calibrated so the coil and magnet load vectors have comparable norms
    phase_current_amplitude: float = 2.0e7
    phase_offset: float = 0.0
    frequency: float = 50.0
    # innermost tooth-band ring bands kept as a solid iron bridge (closed
    # slots); smooths the slot corrugation seen across the airgap
    bridge_rings: int = 2
    # "sinusoidal": peak remanence tapers as cos over the pole so the ring
    # magnetization is a pure space harmonic; "uniform": constant magnitude
    # per sector magnet
    magnet_profile: str = "sinusoidal"
    # "sinusoidal": distributed winding, every slot carries all three phases
    # with harmonic weights (slots tagged by dominant phase); "belt": each
    # slot carries exactly one phase in the classic two-slot belt pattern
    winding: str = "sinusoidal"
    magnet_angles: tuple = None
    tooth_lengths: tuple = None

    def __post_init__(self):
        if self.n_poles < 2 or self.n_poles % 2:
            raise GeometryError(f"n_poles must be a positive even count, got {self.n_poles}")
        if self.n_interface % self.n_poles:
            raise GeometryError(
                f"n_interface={self.n_interface} not divisible by n_poles={self.n_poles}"
            )
        if len(self.radii) != 7:
            raise GeometryError("radii must list the 7 band boundaries")
        r = np.asarray(self.radii, dtype=float)
        if not np.all(np.diff(r) > 0.0) or r[0] <= 0.0:
            raise GeometryError(f"radii must be positive and strictly increasing, got {self.radii}")
        if len(self.rings_per_band) != 6 or any(int(k) < 1 for k in self.rings_per_band):
            raise GeometryError("rings_per_band needs one positive count per band")
        if not 0 <= self.bridge_rings < self.rings_per_band[4]:
            raise GeometryError(
                f"bridge_rings={self.bridge_rings} must leave at least one slotted "
                f"ring band of the {self.rings_per_band[4]} in the tooth band"
            )
        if self.magnet_profile not in ("sinusoidal", "uniform"):
            raise GeometryError(f"unknown magnet_profile {self.magnet_profile!r}")
        if self.winding not in ("sinusoidal", "belt"):
            raise GeometryError(f"unknown winding {self.winding!r}")
        object.__setattr__(self, "radii", tuple(float(x) for x in r))
        object.__setattr__(self, "rings_per_band", tuple(int(k) for k in self.rings_per_band))

        if self.magnet_angles is None:
            object.__setattr__(self, "magnet_angles", (0.0,) * self.n_poles)
        else:
            object.__setattr__(self, "magnet_angles", tuple(float(a) for a in self.magnet_angles))
        if len(self.magnet_angles) != self.n_poles:
            raise GeometryError("magnet_angles must give one angle per pole")

        nominal = self.radii[5] - self.radii[4]
        if self.tooth_lengths is None:
            object.__setattr__(self, "tooth_lengths", (nominal,) * self.n_teeth)
        else:
            object.__setattr__(self, "tooth_lengths", tuple(float(l) for l in self.tooth_lengths))
        if len(self.tooth_lengths) != self.n_teeth:
            raise GeometryError(f"tooth_lengths must give one length per tooth ({self.n_teeth})")
        span = self.radii[5] - self.radii[3]
        for t, l in enumerate(self.tooth_lengths):
            if not 0.0 < l < span:
                raise GeometryError(
                    f"tooth_lengths[{t}]={l} leaves the stator annulus (0, {span})"
                )

    @property
    def n_teeth(self) -> int:
        return SLOTS_PER_POLE * self.n_poles

    @property
    def nominal_tooth_length(self) -> float:
        return self.radii[5] - self.radii[4]

    @property
    def interface_radius(self) -> float:
        return self.radii[3]

    @property
    def delta_theta(self) -> float:
        return 2.0 * math.pi / self.n_interface

    def reluctivity(self, kind: int) -> float:
        if kind in (ROTOR_IRON, TOOTH, YOKE):
            return 1.0 / (MU0 * self.rel_permeability_iron)
        if kind == MAGNET:
            return 1.0 / (MU0 * self.rel_permeability_magnet)
        if kind in (AIRGAP, SLOT):
            return 1.0 / MU0
        raise GeometryError(f"unknown region kind {kind}")

    def phase_currents(self, theta: float) -> np.ndarray:
        """Slot current densities of the three phases at rotor angle ``theta``.

        Synchronous operation: ``I_q = I0 cos(p_e*theta - 2*pi*q/3 + gamma)``
        with ``p_e = n_poles/2`` pole pairs.
        """
        pe = self.n_poles // 2
        q = np.arange(3)
        return self.phase_current_amplitude * np.cos(
            pe * theta - 2.0 * math.pi * q / 3.0 + self.phase_offset
        )

    def magnet_direction(self, p: int, angle: float = 0.0) -> np.ndarray:
        """Unit remanence direction of magnet ``p`` at its sector center
        (radial, alternating sign), rotated in-plane by ``angle``."""
        center = (p + 0.5) * 2.0 * math.pi / self.n_poles
        sign = 1.0 if p % 2 == 0 else -1.0
        return sign * np.array([math.cos(center + angle), math.sin(center + angle)])

    def magnet_base_field(self, p: int, theta) -> np.ndarray:
        """Nominal remanence vectors of magnet ``p`` at azimuths ``theta``.

        ``sinusoidal``: locally radial with the peak magnitude tapering as a
        cosine over the pole, so the ring magnetization is a single space
        harmonic (extrema at pole centers, sign alternating).  ``uniform``:
        constant vector along the sector-center radial direction.
        Deviation angles are applied by the caller as an in-plane rotation.
        """
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        b = self.remanence_magnitude
        if self.magnet_profile == "uniform":
            return np.broadcast_to(b * self.magnet_direction(p), (theta.size, 2)).copy()
        pe = self.n_poles // 2
        profile = b * np.cos(pe * theta - pe * math.pi / self.n_poles)
        return profile[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])

    def slot_phase_weights(self, theta: float) -> np.ndarray:
        """Phase weights of a slot centered at azimuth ``theta`` for the
        distributed winding; the belt winding uses the slot tags instead."""
        pe = self.n_poles // 2
        q = np.arange(3)
        return np.cos(pe * theta - 2.0 * math.pi * q / 3.0)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["radii"] = list(d["radii"])
        d["rings_per_band"] = list(d["rings_per_band"])
        d["magnet_angles"] = list(d["magnet_angles"])
        d["tooth_lengths"] = list(d["tooth_lengths"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MachineSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise GeometryError(f"unknown machine config keys: {sorted(unknown)}")
        kwargs = dict(d)
        for key in ("radii", "rings_per_band", "magnet_angles", "tooth_lengths"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "MachineSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_file(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass
class Mesh:
    """Structured polar triangulation with region tags and node roles.

    Nodes are laid out ring-major: node ``ring * n_interface + col`` sits at
    radius ``ring_radii[ring]`` and angle ``col * delta_theta`` (before any
    tooth deformation).  Each ring-band cell is split into a lower triangle
    ``(i,j),(i+1,j),(i+1,j+1)`` and an upper triangle ``(i,j),(i+1,j+1),(i,j+1)``,
    the same diagonal in every column.
    """

    spec: MachineSpec
    nodes: np.ndarray          # (n_nodes, 2) coordinates [m]
    triangles: np.ndarray      # (n_tris, 3) node indices
    tri_band: np.ndarray       # (n_tris,) radial band index (0..5)
    tri_col: np.ndarray        # (n_tris,) angular cell column
    tri_kind: np.ndarray       # (n_tris,) region kind code
    tri_subindex: np.ndarray   # (n_tris,) magnet/tooth/phase index, -1 elsewhere
    tri_polarity: np.ndarray   # (n_tris,) +-1 for slots/magnets, 0 elsewhere
    node_ring: np.ndarray
    node_col: np.ndarray
    node_role: np.ndarray
    ring_radii: np.ndarray
    interface_ring: int

    @property
    def n_interface(self) -> int:
        return self.spec.n_interface

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def node_id(self, ring: int, col: int) -> int:
        return ring * self.n_interface + (col % self.n_interface)

    def triangle_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )

    def reluctivities(self) -> np.ndarray:
        nu = np.empty(self.triangles.shape[0])
        for kind in REGION_NAMES:
            nu[self.tri_kind == kind] = self.spec.reluctivity(kind)
        return nu

    def export_text(self, path) -> None:
        """Write node / triangle / tag tables in the documented plain format."""
        lines = ["# nodes: id x y ring col role"]
        for i in range(self.n_nodes):
            lines.append(
                f"{i} {self.nodes[i,0]:.17g} {self.nodes[i,1]:.17g} "
                f"{self.node_ring[i]} {self.node_col[i]} {int(self.node_role[i])}"
            )
        lines.append("# triangles: id n0 n1 n2 band")
        for i, tri in enumerate(self.triangles):
            lines.append(f"{i} {tri[0]} {tri[1]} {tri[2]} {self.tri_band[i]}")
        lines.append("# tags: tri_id region subindex polarity")
        for i in range(self.triangles.shape[0]):
            lines.append(
                f"{i} {REGION_NAMES[int(self.tri_kind[i])]} "
                f"{int(self.tri_subindex[i])} {int(self.tri_polarity[i])}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class DofPartition:
    """Free-DOF index sets after eliminating the Dirichlet ring.

    The global DOF order is [static, rotating, interface]; interface DOFs
    are ordered by angular index ``0..n_interface-1``.
    """

    static_nodes: np.ndarray
    rotating_nodes: np.ndarray
    interface_nodes: np.ndarray
    node_to_dof: np.ndarray

    @property
    def n_static(self) -> int:
        return self.static_nodes.size

    @property
    def n_rotating(self) -> int:
        return self.rotating_nodes.size

    @property
    def n_interface(self) -> int:
        return self.interface_nodes.size

    @property
    def n_total(self) -> int:
        return self.n_static + self.n_rotating + self.n_interface

    def slices(self):
        ns, nr, ni = self.n_static, self.n_rotating, self.n_interface
        return slice(0, ns), slice(ns, ns + nr), slice(ns + nr, ns + nr + ni)


def sector_bounds(n_cols: int, n_sectors: int) -> np.ndarray:
    """Column boundaries splitting ``n_cols`` into ``n_sectors`` near-equal parts."""
    return np.rint(np.arange(n_sectors + 1) * n_cols / n_sectors).astype(int)


def tooth_cell_columns(spec: MachineSpec, tooth: int) -> tuple:
    """Half-open cell-column range [a, b) occupied by ``tooth`` in the tooth band."""
    per_pole = spec.n_interface // spec.n_poles
    pole, local = divmod(tooth, SLOTS_PER_POLE)
    bounds = sector_bounds(per_pole, SECTORS_PER_POLE)
    a = pole * per_pole + bounds[2 * local]
    b = pole * per_pole + bounds[2 * local + 1]
    return int(a), int(b)


def build_mesh(spec: MachineSpec) -> Mesh:
    """Build the reference (unperturbed-tooth) structured polar mesh."""
    n_i = spec.n_interface
    radii_segments = []
    band_of_ringband = []
    for b, (r0, r1, k) in enumerate(
        zip(spec.radii[:-1], spec.radii[1:], spec.rings_per_band)
    ):
        radii_segments.append(np.linspace(r0, r1, k + 1)[:-1])
        band_of_ringband.extend([b] * k)
    ring_radii = np.concatenate(radii_segments + [[spec.radii[6]]])
    n_rings = ring_radii.size
    interface_ring = int(np.flatnonzero(np.isclose(ring_radii, spec.radii[3]))[0])

    cols = np.arange(n_i)
    theta = cols * spec.delta_theta
    nodes = np.empty((n_rings * n_i, 2))
    for ring, r in enumerate(ring_radii):
        nodes[ring * n_i : (ring + 1) * n_i, 0] = r * np.cos(theta)
        nodes[ring * n_i : (ring + 1) * n_i, 1] = r * np.sin(theta)

    node_ring = np.repeat(np.arange(n_rings), n_i)
    node_col = np.tile(cols, n_rings)
    node_role = np.full(n_rings * n_i, STATIC, dtype=np.int8)
    node_role[node_ring < interface_ring] = ROTATING
    node_role[node_ring == interface_ring] = INTERFACE
    node_role[node_ring == n_rings - 1] = DIRICHLET

    tris = []
    tri_band = []
    for rb in range(n_rings - 1):
        lo = rb * n_i + cols
        hi = (rb + 1) * n_i + cols
        hi_next = (rb + 1) * n_i + (cols + 1) % n_i
        lo_next = rb * n_i + (cols + 1) % n_i
        lower = np.column_stack([lo, hi, hi_next])
        upper = np.column_stack([lo, hi_next, lo_next])
        block = np.empty((2 * n_i, 3), dtype=np.int64)
        block[0::2] = lower
        block[1::2] = upper
        tris.append(block)
        tri_band.append(np.full(2 * n_i, band_of_ringband[rb], dtype=np.int16))
    triangles = np.vstack(tris)
    tri_band = np.concatenate(tri_band)

    # angular cell column of each triangle: cells come in (lower, upper) pairs
    tri_col = np.tile(np.repeat(cols, 2), n_rings - 1)

    tri_kind = np.empty(triangles.shape[0], dtype=np.int8)
    tri_subindex = np.full(triangles.shape[0], -1, dtype=np.int32)
    tri_polarity = np.zeros(triangles.shape[0], dtype=np.int8)

    per_pole = n_i // spec.n_poles
    pole_of_col = tri_col // per_pole
    tri_kind[tri_band == 0] = ROTOR_IRON
    magnet_sel = tri_band == 1
    tri_kind[magnet_sel] = MAGNET
    tri_subindex[magnet_sel] = pole_of_col[magnet_sel]
    tri_polarity[magnet_sel] = np.where(pole_of_col[magnet_sel] % 2 == 0, 1, -1)
    tri_kind[(tri_band == 2) | (tri_band == 3)] = AIRGAP
    tri_kind[tri_band == 5] = YOKE

    bounds = sector_bounds(per_pole, SECTORS_PER_POLE)
    local_col = tri_col % per_pole
    sector = np.searchsorted(bounds, local_col, side="right") - 1
    tri_ringband = np.arange(triangles.shape[0]) // (2 * n_i)
    bridge_end = sum(spec.rings_per_band[:4]) + spec.bridge_rings
    bridge_sel = (tri_band == 4) & (tri_ringband < bridge_end)
    tri_kind[bridge_sel] = TOOTH
    tooth_band_sel = (tri_band == 4) & ~bridge_sel
    even = sector % 2 == 0
    sel = tooth_band_sel & even
    tri_kind[sel] = TOOTH
    tri_subindex[sel] = pole_of_col[sel] * SLOTS_PER_POLE + sector[sel] // 2
    sel = tooth_band_sel & ~even
    tri_kind[sel] = SLOT
    slot_local = sector[sel] // 2
    if spec.winding == "belt":
        phases = np.array([p for p, _ in _SLOT_PATTERN])
        signs = np.array([s for _, s in _SLOT_PATTERN])
        tri_subindex[sel] = phases[slot_local]
        tri_polarity[sel] = signs[slot_local] * np.where(pole_of_col[sel] % 2 == 0, 1, -1)
    else:
        # distributed winding: tag each slot by its dominant phase
        for pole in range(spec.n_poles):
            for s_loc in range(SLOTS_PER_POLE):
                center = (
                    pole * per_pole + 0.5 * (bounds[2 * s_loc + 1] + bounds[2 * s_loc + 2])
                ) * spec.delta_theta
                w = spec.slot_phase_weights(center)
                q = int(np.argmax(np.abs(w)))
                in_slot = sel & (pole_of_col == pole) & (sector == 2 * s_loc + 1)
                tri_subindex[in_slot] = q
                tri_polarity[in_slot] = 1 if w[q] >= 0 else -1

    mesh = Mesh(
        spec=spec,
        nodes=nodes,
        triangles=triangles,
        tri_band=tri_band,
        tri_col=tri_col,
        tri_kind=tri_kind,
        tri_subindex=tri_subindex,
        tri_polarity=tri_polarity,
        node_ring=node_ring,
        node_col=node_col,
        node_role=node_role,
        ring_radii=ring_radii,
        interface_ring=interface_ring,
    )
    return mesh


def tooth_radial_weight(spec: MachineSpec, r: np.ndarray) -> np.ndarray:
    """Radial profile of the tooth-tip displacement: 1 at the nominal tip
    circle, falling linearly to 0 at the interface and at the tooth root."""
    r3, r4, r5 = spec.radii[3], spec.radii[4], spec.radii[5]
    r = np.asarray(r, dtype=float)
    w = np.zeros_like(r)
    inner = (r > r3) & (r <= r4)
    outer = (r > r4) & (r < r5)
    w[inner] = (r[inner] - r3) / (r4 - r3)
    w[outer] = (r5 - r[outer]) / (r5 - r4)
    return w


def tooth_node_displacements(spec: MachineSpec, mesh: Mesh) -> tuple:
    """Per-tooth node displacement pattern of the fixed-topology deformation.

    Returns ``(node_ids, unit_radial)`` lists indexed by tooth: the nodes
    that move when that tooth's length changes, and their radial
    displacement per meter of elongation (a negative radial shift).  Only
    node columns strictly inside the tooth sector move, so slot, magnet and
    coil geometry is never touched and the load vectors stay independent of
    the tooth lengths.
    """
    weights = tooth_radial_weight(spec, mesh.ring_radii)
    node_ids = []
    factors = []
    for t in range(spec.n_teeth):
        a, b = tooth_cell_columns(spec, t)
        cols = np.arange(a + 1, b)
        ids = []
        fac = []
        for ring, w in enumerate(weights):
            if w == 0.0:
                continue
            ids.append(ring * spec.n_interface + cols)
            fac.append(np.full(cols.size, -w))
        if ids:
            node_ids.append(np.concatenate(ids))
            factors.append(np.concatenate(fac))
        else:
            node_ids.append(np.empty(0, dtype=int))
            factors.append(np.empty(0))
    return node_ids, factors


def apply_tooth_perturbation(mesh: Mesh, spec: MachineSpec) -> Mesh:
    """Displace tooth-band vertices radially according to ``spec.tooth_lengths``.

    Topology, connectivity and region tags are unchanged; only vertices in
    the perturbed teeth's columns move.  Raises :class:`GeometryError` if
    the displacement would invert a triangle.
    """
    deltas = np.asarray(spec.tooth_lengths) - spec.nominal_tooth_length
    if np.all(deltas == 0.0):
        return mesh
    node_ids, factors = tooth_node_displacements(spec, mesh)
    nodes = mesh.nodes.copy()
    for t, delta in enumerate(deltas):
        if delta == 0.0:
            continue
        if node_ids[t].size == 0:
            raise GeometryError(
                f"tooth {t} has no interior node columns; refine n_interface"
            )
        ids = node_ids[t]
        radial = nodes[ids] / np.hypot(nodes[ids, 0], nodes[ids, 1])[:, None]
        nodes[ids] += delta * factors[t][:, None] * radial
    out = dataclasses.replace(mesh, nodes=nodes)
    areas = out.triangle_areas()
    bad = np.flatnonzero(areas <= 0.0)
    if bad.size:
        raise GeometryError(
            f"tooth perturbation inverts {bad.size} triangles (first: {bad[:5].tolist()})"
        )
    return out


def partition_dofs(mesh: Mesh) -> DofPartition:
    """Partition free DOFs into static / rotating / interface after
    eliminating the Dirichlet ring."""
    static = np.flatnonzero(mesh.node_role == STATIC)
    rotating = np.flatnonzero(mesh.node_role == ROTATING)
    interface = np.flatnonzero(mesh.node_role == INTERFACE)
    interface = interface[np.argsort(mesh.node_col[interface], kind="stable")]
    node_to_dof = np.full(mesh.n_nodes, -1, dtype=np.int64)
    node_to_dof[static] = np.arange(static.size)
    node_to_dof[rotating] = static.size + np.arange(rotating.size)
    node_to_dof[interface] = static.size + rotating.size + np.arange(interface.size)
    return DofPartition(
        static_nodes=static,
        rotating_nodes=rotating,
        interface_nodes=interface,
        node_to_dof=node_to_dof,
    )
