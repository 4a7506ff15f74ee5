"""Bundled element data for atomic numbers 1..100.

Provenance: atomic symbols and standard atomic weights (u) follow the IUPAC
2021 tabulation (conventional values for interval elements, mass number of
the most stable isotope for elements without stable isotopes).  Oxidation
states are the commonly observed states from standard inorganic-chemistry
references; elemental 0 is included for carbon and the noble gases so that
single-element solids can be charge-balanced.
"""

from __future__ import annotations

MAX_ATOMIC_NUMBER = 100

SYMBOLS: tuple[str, ...] = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm",
)

ATOMIC_MASS: tuple[float, ...] = (
    1.008, 4.002602, 6.94, 9.0121831, 10.81, 12.011, 14.007, 15.999,
    18.998403163, 20.1797, 22.98976928, 24.305, 26.9815385, 28.085,
    30.973761998, 32.06, 35.45, 39.948, 39.0983, 40.078, 44.955908,
    47.867, 50.9415, 51.9961, 54.938044, 55.845, 58.933194, 58.6934,
    63.546, 65.38, 69.723, 72.630, 74.921595, 78.971, 79.904, 83.798,
    85.4678, 87.62, 88.90584, 91.224, 92.90637, 95.95, 98.0, 101.07,
    102.90550, 106.42, 107.8682, 112.414, 114.818, 118.710, 121.760,
    127.60, 126.90447, 131.293, 132.90545196, 137.327, 138.90547,
    140.116, 140.90766, 144.242, 145.0, 150.36, 151.964, 157.25,
    158.92535, 162.500, 164.93033, 167.259, 168.93422, 173.045,
    174.9668, 178.49, 180.94788, 183.84, 186.207, 190.23, 192.217,
    195.084, 196.966569, 200.592, 204.38, 207.2, 208.98040, 209.0,
    210.0, 222.0, 223.0, 226.0, 227.0, 232.0377, 231.03588, 238.02891,
    237.0, 244.0, 243.0, 247.0, 247.0, 251.0, 252.0, 257.0,
)

# Common oxidation states per atomic number.  Keys are atomic numbers,
# values are the allowed per-element charges for the neutrality check.
OXIDATION_STATES: dict[int, tuple[int, ...]] = {
    1: (-1, 1),
    2: (0,),
    3: (1,),
    4: (2,),
    5: (3,),
    6: (-4, 0, 2, 4),
    7: (-3, 3, 5),
    8: (-2, -1),
    9: (-1,),
    10: (0,),
    11: (1,),
    12: (2,),
    13: (3,),
    14: (-4, 2, 4),
    15: (-3, 3, 5),
    16: (-2, 2, 4, 6),
    17: (-1, 1, 3, 5, 7),
    18: (0,),
    19: (1,),
    20: (2,),
    21: (3,),
    22: (2, 3, 4),
    23: (2, 3, 4, 5),
    24: (2, 3, 6),
    25: (2, 3, 4, 6, 7),
    26: (2, 3),
    27: (2, 3),
    28: (2, 3),
    29: (1, 2),
    30: (2,),
    31: (3,),
    32: (-4, 2, 4),
    33: (-3, 3, 5),
    34: (-2, 2, 4, 6),
    35: (-1, 1, 3, 5),
    36: (0, 2),
    37: (1,),
    38: (2,),
    39: (3,),
    40: (2, 3, 4),
    41: (3, 5),
    42: (2, 3, 4, 5, 6),
    43: (4, 7),
    44: (2, 3, 4, 8),
    45: (1, 2, 3),
    46: (2, 4),
    47: (1, 2),
    48: (2,),
    49: (1, 3),
    50: (-4, 2, 4),
    51: (-3, 3, 5),
    52: (-2, 2, 4, 6),
    53: (-1, 1, 3, 5, 7),
    54: (0, 2, 4, 6),
    55: (1,),
    56: (2,),
    57: (3,),
    58: (3, 4),
    59: (3, 4),
    60: (2, 3),
    61: (3,),
    62: (2, 3),
    63: (2, 3),
    64: (3,),
    65: (3, 4),
    66: (2, 3),
    67: (3,),
    68: (3,),
    69: (2, 3),
    70: (2, 3),
    71: (3,),
    72: (4,),
    73: (3, 5),
    74: (2, 3, 4, 5, 6),
    75: (2, 4, 6, 7),
    76: (2, 3, 4, 6, 8),
    77: (1, 2, 3, 4, 6),
    78: (2, 4),
    79: (1, 3),
    80: (1, 2),
    81: (1, 3),
    82: (2, 4),
    83: (3, 5),
    84: (-2, 2, 4),
    85: (-1, 1),
    86: (0, 2),
    87: (1,),
    88: (2,),
    89: (3,),
    90: (4,),
    91: (4, 5),
    92: (3, 4, 5, 6),
    93: (3, 4, 5, 6, 7),
    94: (3, 4, 5, 6),
    95: (2, 3, 4, 5, 6),
    96: (3, 4),
    97: (3, 4),
    98: (2, 3, 4),
    99: (2, 3),
    100: (2, 3),
}

# 1 u in grams; used to convert summed atomic masses to g/cm^3.
ATOMIC_MASS_UNIT_G = 1.66054e-24


def symbol(z: int) -> str:
    """Element symbol for atomic number ``z`` (1..100)."""
    if not 1 <= z <= MAX_ATOMIC_NUMBER:
        raise ValueError(f"atomic number {z} outside supported range 1..{MAX_ATOMIC_NUMBER}")
    return SYMBOLS[z - 1]


def atomic_number(sym: str) -> int:
    """Atomic number for element symbol ``sym``."""
    try:
        return SYMBOLS.index(sym) + 1
    except ValueError:
        raise ValueError(f"unknown element symbol {sym!r}") from None


def atomic_mass(z: int) -> float:
    """Standard atomic weight (u) for atomic number ``z``."""
    if not 1 <= z <= MAX_ATOMIC_NUMBER:
        raise ValueError(f"atomic number {z} outside supported range 1..{MAX_ATOMIC_NUMBER}")
    return ATOMIC_MASS[z - 1]
