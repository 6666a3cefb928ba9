"""Weighted proper orthogonal decomposition of snapshot sets.

Two equivalent construction routes are provided: the SVD of the weighted
snapshot matrix (numerically preferred) and the snapshot-Gramian
eigenproblem.  Both return bases that are orthonormal in the chosen inner
product, with eigenvalues equal to the squared singular values.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

_GRAM_CUTOFF = 1e-14  # relative eigenvalue floor of the snapshot Gramian
_SVD_CUTOFF = 3e-14   # relative singular-value floor of the direct SVD route


class Weight:
    """SPD weight defining the inner product ``<u, v> = u^T W v``.

    Supports the identity (default and the only case used on machine
    sweeps), a diagonal given by its entries, or an explicit SPD matrix.
    For matrix weights a Cholesky factor ``F`` with ``F^T F = W`` plays the
    role of ``W^(1/2)``; any such factor yields a valid W-orthonormal basis.
    """

    def __init__(self, data=None):
        if data is None:
            self.kind = "identity"
            self.data = None
        elif np.ndim(data) == 1:
            d = np.asarray(data, dtype=float)
            if np.any(d <= 0):
                raise ValueError("diagonal weight must be positive")
            self.kind = "diagonal"
            self.data = d
        else:
            w = data.toarray() if sp.issparse(data) else np.asarray(data, dtype=float)
            self.kind = "matrix"
            self.data = w
            self._chol = sla.cholesky(w, lower=False)  # W = F^T F
        if self.kind == "diagonal":
            self._sqrt = np.sqrt(self.data)

    def __repr__(self):
        return f"Weight({self.kind})"

    @property
    def descriptor(self) -> str:
        return self.kind

    def apply(self, v: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return v
        if self.kind == "diagonal":
            return self.data[:, None] * v if v.ndim == 2 else self.data * v
        return self.data @ v

    def solve(self, v: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return v
        if self.kind == "diagonal":
            return v / self.data[:, None] if v.ndim == 2 else v / self.data
        return sla.cho_solve((self._chol, False), v)

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(u @ self.apply(v))

    def norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(v, v), 0.0)))

    def dual_norm(self, v: np.ndarray) -> float:
        """``||v||_{W^-1}``, one W-solve in the general case."""
        return float(np.sqrt(max(float(v @ self.solve(v)), 0.0)))

    def factor_apply(self, a: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return a
        if self.kind == "diagonal":
            return self._sqrt[:, None] * a if a.ndim == 2 else self._sqrt * a
        return self._chol @ a

    def factor_solve(self, a: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return a
        if self.kind == "diagonal":
            return a / self._sqrt[:, None] if a.ndim == 2 else a / self._sqrt
        return sla.solve_triangular(self._chol, a, lower=False)


IDENTITY_WEIGHT = Weight()


@dataclass
class SnapshotSet:
    """Full-order solutions as columns, keyed by angle index.

    ``row_partition`` carries the (static, rotating, interface) slices of
    the row space so per-block snapshot matrices can be extracted.
    """

    data: np.ndarray
    angle_indices: np.ndarray
    row_partition: tuple = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.angle_indices = np.asarray(self.angle_indices, dtype=int)
        if self.data.ndim != 2 or self.data.shape[1] != self.angle_indices.size:
            raise ValueError("snapshot matrix must have one column per angle index")
        if np.unique(self.angle_indices).size != self.angle_indices.size:
            raise ValueError("duplicate angle indices in snapshot set")

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]

    def block(self, name: str) -> np.ndarray:
        if self.row_partition is None:
            raise ValueError("snapshot set carries no row partition")
        s, r, i = self.row_partition
        return self.data[{"static": s, "rotating": r, "interface": i}[name]]

    @classmethod
    def concat(cls, first: "SnapshotSet", other: "SnapshotSet") -> "SnapshotSet":
        return cls(
            data=np.hstack([first.data, other.data]),
            angle_indices=np.concatenate([first.angle_indices, other.angle_indices]),
            row_partition=first.row_partition,
        )

    def export_csv(self, path) -> None:
        header = ",".join(str(k) for k in self.angle_indices)
        np.savetxt(path, self.data, delimiter=",", header=header, comments="")

    def export_npz(self, path) -> None:
        np.savez(path, data=self.data, angle_indices=self.angle_indices)

    @classmethod
    def from_npz(cls, path) -> "SnapshotSet":
        with np.load(path) as z:
            return cls(data=z["data"], angle_indices=z["angle_indices"])


@dataclass
class PodBasis:
    """W-orthonormal basis with its eigenvalue spectrum.

    ``total_energy`` is ``trace(A^T W A)`` of the snapshot matrix the basis
    was computed from; it is the truncation denominator and is computed via
    the trace identity rather than from the spectrum.
    """

    vectors: np.ndarray
    eigenvalues: np.ndarray
    total_energy: float
    block: str = ""
    weight: Weight = None

    def __post_init__(self):
        if self.weight is None:
            self.weight = IDENTITY_WEIGHT

    @property
    def size(self) -> int:
        return self.vectors.shape[1]

    def project_coefficients(self, a: np.ndarray) -> np.ndarray:
        return self.vectors.T @ self.weight.apply(a)

    def project(self, a: np.ndarray) -> np.ndarray:
        return self.vectors @ self.project_coefficients(a)

    def orthonormality_defect(self) -> float:
        g = self.vectors.T @ self.weight.apply(self.vectors)
        return float(np.max(np.abs(g - np.eye(self.size))))

    def export_spectrum_csv(self, path) -> None:
        lam = self.eigenvalues
        rows = ["mode,eigenvalue,normalized"]
        for i, l in enumerate(lam):
            rows.append(f"{i + 1},{l:.17g},{l / lam[0]:.17g}")
        Path(path).write_text("\n".join(rows) + "\n")


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # deterministic orientation: largest-magnitude entry of each mode positive
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _total_energy(a: np.ndarray, weight: Weight) -> float:
    return float(np.sum(a * weight.apply(a)))


def pod_svd(snapshots, weight: Weight = None, block: str = "") -> PodBasis:
    """POD basis via the singular value decomposition of ``W^(1/2) A``.

    Returns the untruncated basis: all modes whose eigenvalue exceeds the
    floating-point noise floor relative to the largest.
    """
    a = snapshots.data if isinstance(snapshots, SnapshotSet) else np.asarray(snapshots, float)
    weight = weight or IDENTITY_WEIGHT
    if a.ndim != 2 or a.shape[1] == 0 or not np.any(a):
        raise ValueError("empty POD: snapshot matrix has no nonzero column")
    u, s, _ = sla.svd(weight.factor_apply(a), full_matrices=False)
    lam = s**2
    keep = s > _SVD_CUTOFF * s[0]
    vectors = _fix_signs(weight.factor_solve(u[:, keep]))
    return PodBasis(
        vectors=vectors,
        eigenvalues=lam[keep],
        total_energy=_total_energy(a, weight),
        block=block,
        weight=weight,
    )


def pod_snapshot_method(snapshots, weight: Weight = None, block: str = "") -> PodBasis:
    """POD basis via the eigenproblem of the snapshot Gramian ``A^T W A``.

    Eigenvalues below ``1e-14`` of the largest are excluded before the
    ``psi_i = A v_i / sqrt(lambda_i)`` lift to avoid division blowup.
    """
    a = snapshots.data if isinstance(snapshots, SnapshotSet) else np.asarray(snapshots, float)
    weight = weight or IDENTITY_WEIGHT
    if a.ndim != 2 or a.shape[1] == 0 or not np.any(a):
        raise ValueError("empty POD: snapshot matrix has no nonzero column")
    gram = a.T @ weight.apply(a)
    lam, v = sla.eigh(gram)
    order = np.argsort(lam)[::-1]
    lam, v = lam[order], v[:, order]
    keep = lam > _GRAM_CUTOFF * lam[0]
    lam, v = lam[keep], v[:, keep]
    vectors = _fix_signs((a @ v) / np.sqrt(lam))
    return PodBasis(
        vectors=vectors,
        eigenvalues=lam,
        total_energy=_total_energy(a, weight),
        block=block,
        weight=weight,
    )


def truncate_energy(basis: PodBasis, eps_rel: float, mode: str = "energy") -> PodBasis:
    """Keep the smallest leading mode count whose cumulative ratio reaches
    ``eps_rel``.

    ``mode="energy"`` accumulates the eigenvalues against the total
    snapshot energy (trace identity); it can abandon up to ``1 - eps_rel``
    of the energy, i.e. ``sqrt(1 - eps_rel)`` in amplitude.  ``mode="amplitude"``
    accumulates the singular values instead, which bounds the abandoned
    content by roughly ``1 - eps_rel`` in amplitude and is what certified
    sweeps at tolerances near ``sqrt(1 - eps_rel)`` need; the adaptive
    driver uses it by default.
    """
    if not 0.0 < eps_rel <= 1.0:
        raise ValueError(f"eps_rel must be in (0, 1], got {eps_rel}")
    if mode == "energy":
        ratios = np.cumsum(basis.eigenvalues) / basis.total_energy
    elif mode == "amplitude":
        sigma = np.sqrt(basis.eigenvalues)
        ratios = np.cumsum(sigma) / np.sum(sigma)
    else:
        raise ValueError(f"unknown truncation mode {mode!r}")
    reached = np.flatnonzero(ratios >= eps_rel)
    n = int(reached[0]) + 1 if reached.size else basis.size
    return PodBasis(
        vectors=basis.vectors[:, :n],
        eigenvalues=basis.eigenvalues[:n],
        total_energy=basis.total_energy,
        block=basis.block,
        weight=basis.weight,
    )


def projection_error_sq(a: np.ndarray, basis: PodBasis, n: int = None) -> float:
    """Sum of squared W-norm projection errors of the columns of ``a`` onto
    the leading ``n`` modes (all modes if ``n`` is None)."""
    psi = basis.vectors if n is None else basis.vectors[:, :n]
    coeff = psi.T @ basis.weight.apply(a)
    resid = a - psi @ coeff
    return float(np.sum(resid * basis.weight.apply(resid)))
