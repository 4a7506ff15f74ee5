"""Periodic multi-graph construction: the cutoff-radius edge set over all images.

Edges are stored directionally: for every (i, j, k) with
``||p_i + L k - p_j|| <= cutoff`` the reverse (j, i, -k) is also present.
Self-pairs (i, i, k != 0) are included when within cutoff; only the
zero-distance (i, i, 0) pair is excluded.  Edge order is canonical
(lexicographic in (i, j, k)) so downstream computations are reproducible.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .crystal import DET_FLOOR, InvalidLatticeError, Material, wrap_frac

#: Hard cap on the number of candidate image offsets scanned per build.
_MAX_OFFSETS = 1_000_000


class Edge(NamedTuple):
    i: int
    j: int
    k: tuple[int, int, int]
    d: float
    u: np.ndarray


@dataclass(frozen=True)
class MultiGraph:
    """Directed periodic edge set of one material at a fixed cutoff.

    ``src``/``dst`` are edge endpoint indices, ``offsets`` the integer image
    offsets (E x 3), ``dist`` the edge lengths, and ``unit`` the unit vectors
    (p_src + L k - p_dst) / d as rows (E x 3).  ``coords`` holds the wrapped
    Cartesian coordinates the edges were measured from; ``reverse_index[e]``
    locates the edge (j, i, -k) paired with edge e, and ``canon_index[e]``
    the lower-indexed edge of that pair (both directions share its geometry
    bit-for-bit).
    """

    n: int
    cutoff: float
    src: np.ndarray
    dst: np.ndarray
    offsets: np.ndarray
    dist: np.ndarray
    unit: np.ndarray
    coords: np.ndarray
    lattice: np.ndarray
    reverse_index: np.ndarray
    canon_index: np.ndarray

    @property
    def edge_count(self) -> int:
        return self.dist.size

    def edges(self) -> list[Edge]:
        """Edge records in canonical order."""
        return [
            Edge(
                int(self.src[e]),
                int(self.dst[e]),
                tuple(int(x) for x in self.offsets[e]),
                float(self.dist[e]),
                self.unit[e].copy(),
            )
            for e in range(self.edge_count)
        ]


def cell_heights(lattice: np.ndarray) -> np.ndarray:
    """Perpendicular height of the cell along each lattice direction.

    h_a = |det L| / area of the parallelogram spanned by the other two
    lattice vectors; an interatomic vector with |k_a| image shifts moves at
    least (|k_a| - 1) * h_a away from the cell, which bounds the image scan.
    """
    vol = abs(np.linalg.det(lattice))
    heights = np.empty(3)
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        area = np.linalg.norm(np.cross(lattice[:, b], lattice[:, c]))
        heights[a] = vol / area
    return heights


def build_multigraph(material: Material, cutoff: float) -> MultiGraph:
    """All periodic edges with 0 < distance <= cutoff.

    Coordinates are wrapped into the cell first, so scanning image offsets
    with |k_a| <= ceil(cutoff / h_a) + 1 per axis is sufficient for
    arbitrarily skewed cells.
    """
    if cutoff <= 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    lattice = material.lattice
    if abs(np.linalg.det(lattice)) <= DET_FLOOR:
        raise InvalidLatticeError("lattice is singular (|det| <= 1e-8)")
    n = material.n
    coords = lattice @ wrap_frac(material.frac_coords())

    heights = cell_heights(lattice)
    spans = np.ceil(cutoff / heights).astype(int) + 1
    n_offsets = int(np.prod(2 * spans + 1))
    if n_offsets > _MAX_OFFSETS:
        raise ValueError(
            f"image scan needs {n_offsets} offsets (cutoff {cutoff} vs cell heights {heights});"
            " cell too thin for this cutoff"
        )
    k_grid = np.array(
        list(
            itertools.product(
                range(-spans[0], spans[0] + 1),
                range(-spans[1], spans[1] + 1),
                range(-spans[2], spans[2] + 1),
            )
        ),
        dtype=np.int64,
    )
    shifts = k_grid @ lattice.T  # row o = (L k_o)^T

    # vec[i, j, o, :] = p_i + L k_o - p_j
    pt = coords.T
    vec = pt[:, None, None, :] + shifts[None, None, :, :] - pt[None, :, None, :]
    dist = np.linalg.norm(vec, axis=-1)
    mask = (dist <= cutoff) & (dist > 0.0)

    idx_i, idx_j, idx_o = np.nonzero(mask)
    offsets = k_grid[idx_o]
    d = dist[idx_i, idx_j, idx_o]
    u = vec[idx_i, idx_j, idx_o] / d[:, None]

    order = np.lexsort((offsets[:, 2], offsets[:, 1], offsets[:, 0], idx_j, idx_i))
    idx_i, idx_j, offsets, d, u = (
        idx_i[order],
        idx_j[order],
        offsets[order],
        d[order],
        u[order],
    )

    lookup = {
        (int(idx_i[e]), int(idx_j[e]), int(offsets[e, 0]), int(offsets[e, 1]), int(offsets[e, 2])): e
        for e in range(d.size)
    }
    reverse = np.empty(d.size, dtype=np.int64)
    for e in range(d.size):
        key = (
            int(idx_j[e]),
            int(idx_i[e]),
            -int(offsets[e, 0]),
            -int(offsets[e, 1]),
            -int(offsets[e, 2]),
        )
        reverse[e] = lookup[key]

    # Make paired directed edges bit-identical in geometry: copy d and u from
    # the lower-indexed partner (negating u), so reversal symmetry downstream
    # is exact rather than within roundoff.
    canon = np.minimum(np.arange(d.size), reverse)
    sign = np.where(canon == np.arange(d.size), 1.0, -1.0)
    d = d[canon]
    u = u[canon] * sign[:, None]
    canon.setflags(write=False)

    for arr in (idx_i, idx_j, offsets, d, u, coords, reverse):
        arr.setflags(write=False)
    return MultiGraph(
        n=n,
        cutoff=float(cutoff),
        src=idx_i,
        dst=idx_j,
        offsets=offsets,
        dist=d,
        unit=u,
        coords=coords,
        lattice=lattice,
        reverse_index=reverse,
        canon_index=canon,
    )


def neighbor_list(graph: MultiGraph, i: int) -> list[tuple[int, tuple[int, int, int], float, np.ndarray]]:
    """Edges leaving node ``i`` as (j, k, d, u), in canonical order."""
    if not 0 <= i < graph.n:
        raise IndexError(f"node index {i} out of range 0..{graph.n - 1}")
    sel = np.nonzero(graph.src == i)[0]
    return [
        (
            int(graph.dst[e]),
            tuple(int(x) for x in graph.offsets[e]),
            float(graph.dist[e]),
            graph.unit[e].copy(),
        )
        for e in sel
    ]


def distance_multiset(graph: MultiGraph) -> np.ndarray:
    """All edge distances, sorted ascending."""
    return np.sort(graph.dist)
