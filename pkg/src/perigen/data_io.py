"""Dataset format, synthetic corpus generation, and CIF export.

Materials serialize one-per-line as JSON records:

    {"atomic_numbers": [...], "lattice": [[...], [...], [...]],
     "frac_coords": [[...], ...], "id": "...", "property": ...}

``lattice`` lists the three lattice VECTORS vector-by-vector; they are the
**columns** of the 3x3 lattice matrix.  ``frac_coords`` holds one
[0, 1)-fractional triple per atom.  ``id`` and ``property`` are optional.
Materials are canonicalized (wrapped into the cell) on save; load rejects
out-of-range fractional coordinates and malformed lines with line numbers.
"""

from __future__ import annotations

import json

import numpy as np

from .crystal import InvalidMaterialError, Material, lattice_to_params, material_from_frac, wrap_to_cell
from .elements import symbol


class DatasetFormatError(ValueError):
    """A dataset line failed to parse or violated the record schema."""


# Site pools for the synthetic perovskite corpus (A/B/X of the ABX3 template):
# divalent A cations, tetravalent B cations, divalent X anions, so every
# template composition is charge-neutral.
PEROVSKITE_A = (20, 38, 56)  # Ca, Sr, Ba
PEROVSKITE_B = (22, 40, 72)  # Ti, Zr, Hf
PEROVSKITE_X = (8, 16)       # O, S

# Fractional sites: A at the corner, B at the body center, X at face centers.
PEROVSKITE_SITES = np.array(
    [
        [0.0, 0.0, 0.0],
        [0.5, 0.5, 0.5],
        [0.5, 0.5, 0.0],
        [0.5, 0.0, 0.5],
        [0.0, 0.5, 0.5],
    ]
).T


def material_to_record(material: Material, material_id: str | None = None,
                       prop: float | None = None) -> dict:
    """JSON-ready record of a material (canonicalized to in-cell coordinates)."""
    wrapped = wrap_to_cell(material)
    record = {
        "atomic_numbers": wrapped.atom_types.tolist(),
        "lattice": [wrapped.lattice[:, i].tolist() for i in range(3)],
        "frac_coords": wrapped.frac_coords().T.tolist(),
    }
    if material_id is not None:
        record["id"] = material_id
    if prop is not None:
        record["property"] = float(prop)
    return record


def record_to_material(record: dict) -> Material:
    """Material from a parsed record; validates shapes and coordinate ranges."""
    try:
        numbers = record["atomic_numbers"]
        lattice_vectors = record["lattice"]
        frac = record["frac_coords"]
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"missing record field: {exc}") from None
    lattice = np.asarray(lattice_vectors, dtype=np.float64)
    if lattice.shape != (3, 3):
        raise DatasetFormatError(f"lattice must be 3 vectors of 3 entries, got shape {lattice.shape}")
    frac = np.asarray(frac, dtype=np.float64)
    if frac.ndim != 2 or frac.shape[1] != 3:
        raise DatasetFormatError(f"frac_coords must be n x 3, got shape {frac.shape}")
    if np.any(frac < 0.0) or np.any(frac >= 1.0):
        raise DatasetFormatError("fractional coordinates must lie in [0, 1)")
    try:
        # records list lattice vectors; stack them as matrix columns
        return material_from_frac(numbers, frac.T, lattice.T)
    except InvalidMaterialError as exc:
        raise DatasetFormatError(str(exc)) from None


def save_dataset(path, materials: list[Material], ids: list[str] | None = None,
                 props: list[float] | None = None) -> None:
    """Write one JSON record per line; round-trips canonical materials to 1e-12."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, material in enumerate(materials):
            record = material_to_record(
                material,
                material_id=ids[i] if ids is not None else None,
                prop=props[i] if props is not None else None,
            )
            fh.write(json.dumps(record) + "\n")


def load_dataset(path) -> list[Material]:
    """Read a line-delimited dataset; errors name the offending line."""
    materials = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                materials.append(record_to_material(record))
            except DatasetFormatError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
    return materials


def split_dataset(
    materials: list[Material], seed: int
) -> tuple[list[Material], list[Material], list[Material]]:
    """Deterministic shuffled 3:1:1 split into (train, val, test)."""
    if len(materials) < 5:
        raise ValueError(f"need at least 5 materials to split, got {len(materials)}")
    order = np.random.default_rng(seed).permutation(len(materials))
    n_train = int(0.6 * len(materials))
    n_val = int(0.2 * len(materials))
    train = [materials[i] for i in order[:n_train]]
    val = [materials[i] for i in order[n_train : n_train + n_val]]
    test = [materials[i] for i in order[n_train + n_val :]]
    return train, val, test


def synth_perovskite_corpus(
    count: int, noise_scale: float = 0.02, seed: int = 0
) -> list[Material]:
    """Cubic ABX3 cells with jittered template sites.

    A/B/X are drawn from small divalent/tetravalent/anion pools, the lattice
    length from U(3.5, 4.5) Angstrom, and every coordinate is jittered by
    Gaussian noise of scale ``noise_scale`` (Angstrom).
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    materials = []
    for _ in range(count):
        a_elem = int(rng.choice(PEROVSKITE_A))
        b_elem = int(rng.choice(PEROVSKITE_B))
        x_elem = int(rng.choice(PEROVSKITE_X))
        length = float(rng.uniform(3.5, 4.5))
        lattice = length * np.eye(3)
        coords = lattice @ PEROVSKITE_SITES
        if noise_scale > 0:
            coords = coords + rng.standard_normal(coords.shape) * noise_scale
        types = [a_elem, b_elem, x_elem, x_elem, x_elem]
        materials.append(wrap_to_cell(Material(types, coords, lattice)))
    return materials


def export_cif(material: Material, path) -> None:
    """Minimal P1 CIF: cell lengths/angles (degrees) and fractional sites."""
    wrapped = wrap_to_cell(material)
    params = lattice_to_params(wrapped.lattice)
    lengths = params.lengths
    angles_deg = np.degrees(params.angles)
    frac = wrapped.frac_coords()
    lines = [
        "data_perigen",
        "_symmetry_space_group_name_H-M   'P 1'",
        "_symmetry_Int_Tables_number      1",
        f"_cell_length_a   {lengths[0]:.9f}",
        f"_cell_length_b   {lengths[1]:.9f}",
        f"_cell_length_c   {lengths[2]:.9f}",
        # CIF convention: alpha between b,c; beta between a,c; gamma between a,b
        f"_cell_angle_alpha   {angles_deg[2]:.9f}",
        f"_cell_angle_beta    {angles_deg[1]:.9f}",
        f"_cell_angle_gamma   {angles_deg[0]:.9f}",
        "loop_",
        "_atom_site_label",
        "_atom_site_type_symbol",
        "_atom_site_fract_x",
        "_atom_site_fract_y",
        "_atom_site_fract_z",
    ]
    for i, z in enumerate(wrapped.atom_types):
        sym = symbol(int(z))
        lines.append(
            f"{sym}{i + 1} {sym} {frac[0, i]:.9f} {frac[1, i]:.9f} {frac[2, i]:.9f}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """Small CSV writer for loss curves and metric tables."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_key_values(path, mapping: dict) -> None:
    """Flat ``key = value`` text file (metrics reports, config echoes)."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in mapping.items():
            fh.write(f"{key} = {value}\n")
