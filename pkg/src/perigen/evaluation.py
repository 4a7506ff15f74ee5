"""Validity, distribution-distance, coverage, and reconstruction metrics.

The composition fingerprint is the per-element atom-count vector; the
structure fingerprint is a normalized histogram of all periodic interatomic
distances below a cutoff (64 bins) with the density appended.  These are
simplified stand-ins for the featurizer-based fingerprints used elsewhere in
the literature, so coverage numbers computed here are comparable only within
this package ("simplified-fingerprint coverage").
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .crystal import Material
from .elements import ATOMIC_MASS_UNIT_G, MAX_ATOMIC_NUMBER, OXIDATION_STATES, atomic_mass
from .graph import build_multigraph, distance_multiset

STRUCTURE_FP_BINS = 64
MIN_INTERATOMIC_DISTANCE = 0.5  # Angstrom


@dataclass(frozen=True)
class MetricsReport:
    """Corpus-level metric battery for a generated set against a reference set."""

    composition_validity: float
    structure_validity: float
    unknown_element_rate: float
    emd_element_count: float
    emd_density: float
    cov_r: float
    cov_p: float
    uniqueness: float

    def __post_init__(self):
        for name in ("composition_validity", "structure_validity", "unknown_element_rate",
                     "cov_r", "cov_p", "uniqueness"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        for name in ("emd_element_count", "emd_density"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def as_dict(self) -> dict[str, float]:
        return {
            "composition_validity": self.composition_validity,
            "structure_validity": self.structure_validity,
            "unknown_element_rate": self.unknown_element_rate,
            "emd_element_count": self.emd_element_count,
            "emd_density": self.emd_density,
            "cov_r": self.cov_r,
            "cov_p": self.cov_p,
            "uniqueness": self.uniqueness,
        }


class CompositionVerdict(enum.Enum):
    VALID = "valid"
    INVALID = "invalid"
    UNKNOWN_ELEMENT = "unknown-element"


def density(material: Material) -> float:
    """Mass density in g/cm^3: summed atomic masses over the cell volume."""
    mass_u = sum(atomic_mass(int(z)) for z in material.atom_types)
    volume_cm3 = material.volume * 1e-24
    return mass_u * ATOMIC_MASS_UNIT_G / volume_cm3


def structure_validity(material: Material) -> bool:
    """True iff every periodic interatomic distance exceeds 0.5 Angstrom."""
    return build_multigraph(material, MIN_INTERATOMIC_DISTANCE).edge_count == 0


def composition_validity(
    atom_types, table: dict[int, tuple[int, ...]] | None = None
) -> CompositionVerdict:
    """Charge-neutrality check over per-element oxidation-state assignments.

    All atoms of one element share one state.  Returns UNKNOWN_ELEMENT when
    some element is missing from the table (counted separately, never folded
    into valid/invalid).
    """
    table = OXIDATION_STATES if table is None else table
    atom_types = np.asarray(atom_types, dtype=np.int64)
    elements, counts = np.unique(atom_types, return_counts=True)
    if any(int(e) not in table for e in elements):
        return CompositionVerdict.UNKNOWN_ELEMENT
    sums = {0}
    for element, count in zip(elements, counts):
        sums = {s + int(count) * state for s in sums for state in table[int(element)]}
    return CompositionVerdict.VALID if 0 in sums else CompositionVerdict.INVALID


def composition_fingerprint(atom_types, element_count: int = MAX_ATOMIC_NUMBER) -> np.ndarray:
    """Atoms per element as an integer vector of length ``element_count``."""
    counts = np.zeros(element_count, dtype=np.int64)
    for z in np.asarray(atom_types, dtype=np.int64):
        if not 1 <= z <= element_count:
            raise ValueError(f"atomic number {z} outside 1..{element_count}")
        counts[z - 1] += 1
    return counts


def structure_fingerprint(material: Material, cutoff: float = 6.0) -> np.ndarray:
    """Normalized periodic-distance histogram (64 bins over [0, cutoff]) + density.

    The histogram entries sum to 1 whenever the material has any neighbor
    within the cutoff; an isolated cell yields an all-zero histogram.
    """
    distances = distance_multiset(build_multigraph(material, cutoff))
    hist, _ = np.histogram(distances, bins=STRUCTURE_FP_BINS, range=(0.0, cutoff))
    hist = hist.astype(np.float64)
    total = hist.sum()
    if total > 0:
        hist /= total
    return np.concatenate([hist, [density(material)]])


def emd_1d(a, b) -> float:
    """Exact 1-Wasserstein distance between two empirical 1D distributions.

    Computed as the integral of |CDF_a - CDF_b| over the merged support.
    """
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("emd_1d requires non-empty samples")
    support = np.sort(np.concatenate([a, b]))
    deltas = np.diff(support)
    cdf_a = np.searchsorted(a, support[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, support[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


def cov_metrics(
    gen: list[Material],
    ref: list[Material],
    delta_c: float,
    delta_s: float,
    cutoff: float = 6.0,
) -> tuple[float, float]:
    """Coverage-recall and coverage-precision under the simplified fingerprints.

    X covers Y iff both fingerprint distances fall strictly below the
    thresholds.  COV-R is the fraction of reference materials covered by at
    least one generated material; COV-P the fraction of generated materials
    covering at least one reference material.
    """
    if not gen or not ref:
        raise ValueError("cov_metrics requires non-empty material lists")
    fc_gen = np.stack([composition_fingerprint(m.atom_types) for m in gen]).astype(np.float64)
    fc_ref = np.stack([composition_fingerprint(m.atom_types) for m in ref]).astype(np.float64)
    fs_gen = np.stack([structure_fingerprint(m, cutoff) for m in gen])
    fs_ref = np.stack([structure_fingerprint(m, cutoff) for m in ref])
    dc = np.linalg.norm(fc_gen[:, None, :] - fc_ref[None, :, :], axis=-1)
    ds = np.linalg.norm(fs_gen[:, None, :] - fs_ref[None, :, :], axis=-1)
    covered = (dc < delta_c) & (ds < delta_s)  # [gen, ref]
    cov_r = float(np.mean(covered.any(axis=0)))
    cov_p = float(np.mean(covered.any(axis=1)))
    return cov_r, cov_p


def uniqueness(gen: list[Material]) -> float:
    """Fraction of distinct compositions (canonical atom type sets) among ``gen``."""
    if not gen:
        raise ValueError("uniqueness requires a non-empty list")
    seen = set()
    for m in gen:
        elements, counts = np.unique(m.atom_types, return_counts=True)
        seen.add(tuple(zip(elements.tolist(), counts.tolist())))
    return len(seen) / len(gen)


def reconstruction_metrics(
    pairs: list[tuple[Material, Material]], cutoff: float = 6.0
) -> tuple[float, float, float]:
    """(atom-type match rate, lattice RMSE over the 6 items, distance RMSE).

    Type vectors are compared in canonical (sorted) order; materials with
    different atom counts count as mismatches.  The distance RMSE compares
    sorted periodic-distance lists truncated to the shorter length.
    """
    if not pairs:
        raise ValueError("reconstruction_metrics requires at least one pair")
    from .crystal import lattice_to_params

    matches = 0
    lattice_sq: list[float] = []
    dist_sq: list[float] = []
    for target, recon in pairs:
        if target.n == recon.n and np.array_equal(
            np.sort(target.atom_types), np.sort(recon.atom_types)
        ):
            matches += 1
        pt = lattice_to_params(target.lattice)
        pr = lattice_to_params(recon.lattice)
        items_t = np.concatenate([pt.lengths, pt.angles])
        items_r = np.concatenate([pr.lengths, pr.angles])
        lattice_sq.extend(((items_t - items_r) ** 2).tolist())
        dt = distance_multiset(build_multigraph(target, cutoff))
        dr = distance_multiset(build_multigraph(recon, cutoff))
        m = min(dt.size, dr.size)
        if m > 0:
            dist_sq.extend(((dt[:m] - dr[:m]) ** 2).tolist())
    match_rate = matches / len(pairs)
    lattice_rmse = float(np.sqrt(np.mean(lattice_sq)))
    distance_rmse = float(np.sqrt(np.mean(dist_sq))) if dist_sq else 0.0
    return match_rate, lattice_rmse, distance_rmse


def element_count_per_material(materials: list[Material]) -> np.ndarray:
    """Number of distinct elements in each material."""
    return np.array([np.unique(m.atom_types).size for m in materials], dtype=np.float64)


def metrics_report(
    gen: list[Material],
    ref: list[Material],
    delta_c: float,
    delta_s: float,
    cutoff: float = 6.0,
) -> MetricsReport:
    """Full metric battery of a generated corpus against a reference corpus."""
    verdicts = [composition_validity(m.atom_types) for m in gen]
    known = [v for v in verdicts if v is not CompositionVerdict.UNKNOWN_ELEMENT]
    comp_valid = (
        sum(v is CompositionVerdict.VALID for v in known) / len(known) if known else 0.0
    )
    unknown_rate = sum(v is CompositionVerdict.UNKNOWN_ELEMENT for v in verdicts) / len(verdicts)
    struct_valid = sum(structure_validity(m) for m in gen) / len(gen)
    cov_r, cov_p = cov_metrics(gen, ref, delta_c, delta_s, cutoff)
    return MetricsReport(
        composition_validity=comp_valid,
        structure_validity=struct_valid,
        unknown_element_rate=unknown_rate,
        emd_element_count=emd_1d(element_count_per_material(gen), element_count_per_material(ref)),
        emd_density=emd_1d([density(m) for m in gen], [density(m) for m in ref]),
        cov_r=cov_r,
        cov_p=cov_p,
        uniqueness=uniqueness(gen),
    )
