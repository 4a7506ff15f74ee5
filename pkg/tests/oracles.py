"""Independent reference implementations used as test oracles.

Everything here is deliberately brute-force and shares no code with the
package internals it checks.
"""

from __future__ import annotations

import itertools

import numpy as np


def brute_force_edges(atom_types, coords, lattice, cutoff, span=5):
    """All (i, j, k) with 0 < ||p_i + L k - p_j|| <= cutoff, k in [-span, span]^3.

    Coordinates must already be wrapped into the cell.  Returns a dict
    keyed by (i, j, kx, ky, kz) with the distance as value.
    """
    n = len(atom_types)
    edges = {}
    for i in range(n):
        for j in range(n):
            for k in itertools.product(range(-span, span + 1), repeat=3):
                vec = coords[:, i] + lattice @ np.asarray(k, dtype=float) - coords[:, j]
                d = float(np.linalg.norm(vec))
                if 0.0 < d <= cutoff:
                    edges[(i, j) + k] = d
    return edges


def brute_force_align_offset(p, reference, lattice, span=3):
    """Integer v in [-span, span]^3 minimizing ||p + L v - reference||."""
    best, best_d = None, np.inf
    for v in itertools.product(range(-span, span + 1), repeat=3):
        d = float(np.linalg.norm(p + lattice @ np.asarray(v, dtype=float) - reference))
        if d < best_d:
            best, best_d = v, d
    return np.asarray(best), best_d


def greedy_transport_emd(a, b):
    """1-Wasserstein distance by greedy mass transport on sorted samples.

    Treats each sample as mass 1/len; repeatedly moves the smallest
    remaining mass between the current smallest unmatched points.
    """
    a = sorted(float(x) for x in a)
    b = sorted(float(x) for x in b)
    wa, wb = 1.0 / len(a), 1.0 / len(b)
    ia = ib = 0
    ra, rb = wa, wb
    cost = 0.0
    while ia < len(a) and ib < len(b):
        move = min(ra, rb)
        cost += move * abs(a[ia] - b[ib])
        ra -= move
        rb -= move
        if ra <= 1e-15:
            ia += 1
            ra = wa
        if rb <= 1e-15:
            ib += 1
            rb = wb
    return cost


def brute_force_charge_neutral(elements, counts, table):
    """Exhaustive product over per-element oxidation states."""
    pools = [table[int(e)] for e in elements]
    for states in itertools.product(*pools):
        if sum(int(c) * s for c, s in zip(counts, states)) == 0:
            return True
    return False


def finite_difference_gradient(fn, x, h=1e-5):
    """Central finite differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in range(x.size):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (fn(xp) - fn(xm)) / (2 * h)
    return grad
