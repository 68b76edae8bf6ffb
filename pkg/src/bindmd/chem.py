"""Element and residue vocabularies with standard atomic masses."""

from __future__ import annotations

import numpy as np

# Standard atomic weights (u) for Z = 1..86 (H through Rn). Values from the
# conventional IUPAC table, rounded to 3 decimals; radioactive elements use
# the mass number of the most stable isotope.
ATOMIC_MASSES = np.array([
    1.008, 4.003, 6.940, 9.012, 10.810, 12.011, 14.007, 15.999, 18.998,
    20.180, 22.990, 24.305, 26.982, 28.085, 30.974, 32.060, 35.450, 39.948,
    39.098, 40.078, 44.956, 47.867, 50.942, 51.996, 54.938, 55.845, 58.933,
    58.693, 63.546, 65.380, 69.723, 72.630, 74.922, 78.971, 79.904, 83.798,
    85.468, 87.620, 88.906, 91.224, 92.906, 95.950, 97.000, 101.070,
    102.906, 106.420, 107.868, 112.414, 114.818, 118.710, 121.760, 127.600,
    126.904, 131.293, 132.905, 137.327, 138.905, 140.116, 140.908, 144.242,
    145.000, 150.360, 151.964, 157.250, 158.925, 162.500, 164.930, 167.259,
    168.934, 173.045, 174.967, 178.486, 180.948, 183.840, 186.207, 190.230,
    192.217, 195.084, 196.967, 200.592, 204.380, 207.200, 208.980, 209.000,
    210.000, 222.000,
])

ELEMENT_SYMBOLS = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al",
    "Si", "P", "S", "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn",
    "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb",
    "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm",
    "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta",
    "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At",
    "Rn",
]

MAX_ATOMIC_NUMBER = len(ATOMIC_MASSES)  # 86 (Rn)


class UnknownElementError(ValueError):
    pass


def check_atomic_numbers(z) -> np.ndarray:
    z = np.asarray(z, dtype=int)
    bad = (z < 1) | (z > MAX_ATOMIC_NUMBER)
    if np.any(bad):
        raise UnknownElementError(
            f"unsupported atomic number(s) {sorted(set(z[bad].tolist()))}; "
            f"supported range is 1..{MAX_ATOMIC_NUMBER} (H..Rn)")
    return z


def element_masses(z) -> np.ndarray:
    return ATOMIC_MASSES[check_atomic_numbers(z) - 1]


# 20 natural amino acids plus an unknown bucket (index 20)
RESIDUE_TYPES = [
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
]
RESIDUE_UNKNOWN = len(RESIDUE_TYPES)  # 20
N_RESIDUE_TYPES = len(RESIDUE_TYPES) + 1

# backbone-atom masses used for mass-weighted centering of the complex
BACKBONE_ATOM_MASSES = np.array([14.007, 12.011, 12.011])  # N, Ca, C


def residue_index(name: str) -> int:
    try:
        return RESIDUE_TYPES.index(name.upper())
    except ValueError:
        return RESIDUE_UNKNOWN
