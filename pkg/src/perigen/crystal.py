"""Periodic crystal data model, coordinate conversions, and exact symmetry transforms.

Conventions used throughout the package:

- The lattice matrix ``L`` stores the three lattice vectors as **columns**.
- Cartesian coordinates ``P`` are 3 x n with one atom per column, in Angstrom.
- Lattice angles are ordered ``[phi_12, phi_13, phi_23]`` in radians, where
  ``phi_ij`` is the angle between lattice vectors i and j.
- All arithmetic is 64-bit floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .elements import MAX_ATOMIC_NUMBER

#: |det L| below this is treated as a singular lattice.
DET_FLOOR = 1e-8

#: Slack allowed on arccos arguments before declaring a hard error.
ACOS_SLACK = 1e-9

#: Fractional coordinates closer than this to 1.0 snap to 0.0 when wrapping,
#: so wrapping is idempotent under floating-point round-trips.
FRAC_SNAP = 1e-12


class InvalidMaterialError(ValueError):
    """Material fields violate the data-model invariants."""


class InvalidLatticeError(ValueError):
    """Lattice matrix is singular or malformed."""


class UnrealizableCellError(ValueError):
    """Lattice lengths/angles do not describe a realizable 3D cell."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Material:
    """One unit cell: atom types, Cartesian coordinates (3 x n), lattice (3 x 3).

    Lattice vectors are the columns of ``lattice``.  Instances are immutable
    and safe to share across threads.
    """

    atom_types: np.ndarray
    coords: np.ndarray
    lattice: np.ndarray

    def __post_init__(self):
        types = np.array(self.atom_types, dtype=np.int64, copy=True)
        if types.ndim != 1 or types.size < 1:
            raise InvalidMaterialError("atom_types must be a non-empty 1D integer list")
        if np.any(types < 1) or np.any(types > MAX_ATOMIC_NUMBER):
            raise InvalidMaterialError(
                f"atom types must lie in 1..{MAX_ATOMIC_NUMBER}, got {types.tolist()}"
            )
        n = types.size
        coords = np.array(self.coords, dtype=np.float64, copy=True)
        if coords.shape != (3, n):
            raise InvalidMaterialError(f"coords must be 3x{n}, got {coords.shape}")
        lattice = np.array(self.lattice, dtype=np.float64, copy=True)
        if lattice.shape != (3, 3):
            raise InvalidMaterialError(f"lattice must be 3x3, got {lattice.shape}")
        if not (np.all(np.isfinite(coords)) and np.all(np.isfinite(lattice))):
            raise InvalidMaterialError("coords and lattice entries must be finite")
        if abs(np.linalg.det(lattice)) <= DET_FLOOR:
            raise InvalidMaterialError("lattice is singular (|det| <= 1e-8)")
        types.setflags(write=False)
        coords.setflags(write=False)
        lattice.setflags(write=False)
        object.__setattr__(self, "atom_types", types)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "lattice", lattice)

    @property
    def n(self) -> int:
        return self.atom_types.size

    @property
    def volume(self) -> float:
        """Cell volume |det L| in cubic Angstrom."""
        return float(abs(np.linalg.det(self.lattice)))

    def frac_coords(self) -> np.ndarray:
        """Fractional coordinates F = L^-1 P (3 x n)."""
        return np.linalg.solve(self.lattice, self.coords)

    def with_coords(self, coords: np.ndarray) -> "Material":
        return Material(self.atom_types, coords, self.lattice)


def material_from_frac(atom_types, frac_coords, lattice) -> Material:
    """Build a Material from fractional coordinates (3 x n or n x 3 list)."""
    lattice = np.asarray(lattice, dtype=np.float64)
    frac = np.asarray(frac_coords, dtype=np.float64)
    if frac.ndim != 2:
        raise InvalidMaterialError("frac_coords must be 2D")
    if frac.shape[0] != 3 and frac.shape[1] == 3:
        frac = frac.T
    return Material(atom_types, lattice @ frac, lattice)


@dataclass(frozen=True)
class LatticeParams:
    """Rotation-invariant cell description: three lengths and three angles.

    ``angles`` is ordered ``[phi_12, phi_13, phi_23]`` (radians, each in the
    open interval (0, pi)).  Construction verifies that the six items describe
    a realizable cell.
    """

    lengths: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        lengths = np.array(self.lengths, dtype=np.float64, copy=True)
        angles = np.array(self.angles, dtype=np.float64, copy=True)
        if lengths.shape != (3,) or angles.shape != (3,):
            raise UnrealizableCellError("lengths and angles must each have 3 entries")
        if not (np.all(np.isfinite(lengths)) and np.all(np.isfinite(angles))):
            raise UnrealizableCellError("lengths and angles must be finite")
        if np.any(lengths <= 0):
            raise UnrealizableCellError(f"lattice lengths must be positive, got {lengths.tolist()}")
        if np.any(angles <= 0) or np.any(angles >= math.pi):
            raise UnrealizableCellError(
                f"lattice angles must lie in (0, pi), got {angles.tolist()}"
            )
        arg = gamma_argument(angles)
        if abs(arg) > 1.0 + ACOS_SLACK:
            raise UnrealizableCellError(
                f"angles {angles.tolist()} are not realizable (gamma argument {arg:.6g})"
            )
        lengths.setflags(write=False)
        angles.setflags(write=False)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "angles", angles)


def gamma_argument(angles) -> float:
    """Cosine argument of the auxiliary angle used to rebuild a lattice.

    ``angles`` is [phi_12, phi_13, phi_23]; the argument is
    (cos phi_23 cos phi_13 - cos phi_12) / (sin phi_23 sin phi_13).
    Values outside [-1, 1] mean the three angles cannot be realized by any
    triple of 3D vectors.
    """
    phi_12, phi_13, phi_23 = float(angles[0]), float(angles[1]), float(angles[2])
    return (math.cos(phi_23) * math.cos(phi_13) - math.cos(phi_12)) / (
        math.sin(phi_23) * math.sin(phi_13)
    )


@dataclass(frozen=True)
class Rotation:
    """Orthogonal 3x3 matrix (Q^T Q = I to 1e-12 elementwise)."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64, copy=True)
        if q.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {q.shape}")
        if np.max(np.abs(q.T @ q - np.eye(3))) > 1e-12:
            raise ValueError("matrix is not orthogonal to 1e-12")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class Permutation:
    """Bijection on atom indices; ``order[i]`` is the source index of new atom i."""

    order: np.ndarray

    def __post_init__(self):
        order = np.array(self.order, dtype=np.int64, copy=True)
        if order.ndim != 1:
            raise ValueError("permutation order must be 1D")
        n = order.size
        if not np.array_equal(np.sort(order), np.arange(n)):
            raise ValueError(f"order {order.tolist()} is not a permutation of 0..{n - 1}")
        order.setflags(write=False)
        object.__setattr__(self, "order", order)

    def inverse(self) -> "Permutation":
        return Permutation(np.argsort(self.order))


@dataclass(frozen=True)
class PeriodicShift:
    """Integer 3 x n matrix of per-atom lattice-image offsets."""

    k_matrix: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k_matrix)
        if k.ndim != 2 or k.shape[0] != 3:
            raise ValueError(f"k_matrix must be 3 x n, got {k.shape}")
        if not np.issubdtype(k.dtype, np.integer):
            if not np.all(k == np.round(k)):
                raise ValueError("k_matrix entries must be integers")
        k = np.array(k, dtype=np.int64, copy=True)
        k.setflags(write=False)
        object.__setattr__(self, "k_matrix", k)


def lattice_to_params(lattice: np.ndarray) -> LatticeParams:
    """Lengths and pairwise angles of the three lattice vectors (columns).

    Raises InvalidLatticeError if the lattice is singular.  Cosine arguments
    are clamped to [-1, 1] to absorb roundoff.
    """
    lattice = np.asarray(lattice, dtype=np.float64)
    if lattice.shape != (3, 3):
        raise InvalidLatticeError(f"lattice must be 3x3, got {lattice.shape}")
    if abs(np.linalg.det(lattice)) <= DET_FLOOR:
        raise InvalidLatticeError("lattice is singular (|det| <= 1e-8)")
    lengths = np.linalg.norm(lattice, axis=0)
    angles = np.empty(3)
    for idx, (i, j) in enumerate(((0, 1), (0, 2), (1, 2))):
        c = float(lattice[:, i] @ lattice[:, j]) / (lengths[i] * lengths[j])
        angles[idx] = math.acos(min(1.0, max(-1.0, c)))
    return LatticeParams(lengths, angles)


def params_to_lattice(params: LatticeParams) -> np.ndarray:
    """Rebuild one lattice matrix from lengths and angles.

    The returned matrix is a canonical representative: any lattice with the
    same lengths/angles differs from it only by a rotation (same Gram matrix).
    Raises UnrealizableCellError when the gamma argument falls outside [-1, 1]
    beyond the 1e-9 slack.
    """
    l1, l2, l3 = (float(x) for x in params.lengths)
    phi_12, phi_13, phi_23 = (float(x) for x in params.angles)
    arg = gamma_argument(params.angles)
    if abs(arg) > 1.0 + ACOS_SLACK:
        raise UnrealizableCellError(f"gamma argument {arg:.6g} outside [-1, 1]")
    gamma = math.acos(min(1.0, max(-1.0, arg)))
    v1 = np.array([l1 * math.sin(phi_13), 0.0, l1 * math.cos(phi_13)])
    v2 = np.array(
        [
            -l2 * math.sin(phi_23) * math.cos(gamma),
            l2 * math.sin(phi_23) * math.sin(gamma),
            l2 * math.cos(phi_23),
        ]
    )
    v3 = np.array([0.0, 0.0, l3])
    return np.column_stack([v1, v2, v3])


def apply_permutation(material: Material, perm: Permutation) -> Material:
    """Reorder atoms: types and coordinate columns move together, lattice unchanged."""
    order = perm.order
    if order.size != material.n:
        raise ValueError(f"permutation length {order.size} != atom count {material.n}")
    return Material(
        material.atom_types[order], material.coords[:, order], material.lattice
    )


def apply_rotation_translation(material: Material, q, b) -> Material:
    """Rigid motion: P' = Q P + b 1^T and L' = Q L; atom types unchanged.

    ``q`` may be a Rotation or a raw 3x3 array; raw arrays must be orthogonal
    to 1e-10.  Reflections (det = -1) are admitted.
    """
    qm = q.q if isinstance(q, Rotation) else np.asarray(q, dtype=np.float64)
    if qm.shape != (3, 3):
        raise ValueError(f"rotation matrix must be 3x3, got {qm.shape}")
    if np.max(np.abs(qm.T @ qm - np.eye(3))) > 1e-10:
        raise ValueError("matrix is not orthogonal to 1e-10")
    b = np.asarray(b, dtype=np.float64).reshape(3)
    return Material(
        material.atom_types,
        qm @ material.coords + b[:, None],
        qm @ material.lattice,
    )


def apply_periodic(material: Material, shift: PeriodicShift) -> Material:
    """Move each atom by an integer combination of lattice vectors: P + L K."""
    k = shift.k_matrix
    if k.shape != (3, material.n):
        raise ValueError(f"k_matrix must be 3x{material.n}, got {k.shape}")
    return Material(
        material.atom_types,
        material.coords + material.lattice @ k.astype(np.float64),
        material.lattice,
    )


def wrap_frac(frac: np.ndarray) -> np.ndarray:
    """Map fractional coordinates into [0, 1) componentwise.

    Values within FRAC_SNAP of 1.0 snap to 0.0, which keeps wrapping
    idempotent when coordinates round-trip through Cartesian space.
    """
    wrapped = frac - np.floor(frac)
    wrapped[wrapped > 1.0 - FRAC_SNAP] = 0.0
    return wrapped


def wrap_to_cell(material: Material) -> Material:
    """Canonical representative with all fractional coordinates in [0, 1)."""
    frac = material.frac_coords()
    return material.with_coords(material.lattice @ wrap_frac(frac))


def random_rotation(seed: int) -> Rotation:
    """Approximately uniform proper rotation (det = +1), deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return Rotation(q)
