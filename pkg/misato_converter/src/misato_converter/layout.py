"""Every assumption about the MISATO HDF5 layout, in one mapping table.

The released dataset stores one group per complex id at the file root.
If the published key names drift, this table is the only thing to edit.
"""

# dataset names inside each complex group
KEYS = {
    # (snapshots, atoms, 3) coordinates for the whole complex
    "coordinates": "trajectory_coordinates",
    # optional (snapshots, atoms, 3) velocities
    "velocities": "trajectory_velocities",
    # (atoms,) atomic numbers
    "atomic_numbers": "atoms_number",
    # (atoms,) residue index per atom; ligand atoms may carry chain-style
    # residue annotations, which marks a peptide ligand
    "atom_residue": "atoms_residue",
    # (atoms,) backbone role code per atom, see ROLE below
    "atom_role": "atoms_name",
    # (molecules,) start index of each molecule; the ligand is the last
    "molecule_starts": "molecules_begin_atom_index",
    # (residues,) amino-acid type code 0..20; optional
    "residue_types": "residues_type",
    # optional (snapshots,) interaction energy per snapshot
    "energy": "frames_interaction_energy",
}

# group attribute that explicitly flags a peptide ligand
PEPTIDE_ATTR = "ligand_is_peptide"

# backbone role codes used by the atom_role dataset
ROLE = {"other": 0, "N": 1, "CA": 2, "C": 3}

REQUIRED = ("coordinates", "atomic_numbers", "atom_residue", "atom_role",
            "molecule_starts")
