#pragma once

// The unified data model: atoms grouped into fixed-arity blocks. A block is
// an amino acid, a nucleotide, or a single atom, with an attached rigid frame
// whose translation sits on the representative atom.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "blockfold/errors.hpp"
#include "blockfold/geometry.hpp"

namespace blockfold {

enum class EntityKind { Protein, Rna, Atomic };

inline std::string to_string(EntityKind k) {
    switch (k) {
        case EntityKind::Protein: return "protein";
        case EntityKind::Rna: return "rna";
        case EntityKind::Atomic: return "atomic";
    }
    return "?";
}

inline EntityKind entity_from_string(std::string_view s) {
    if (s == "protein") return EntityKind::Protein;
    if (s == "rna") return EntityKind::Rna;
    if (s == "atomic") return EntityKind::Atomic;
    throw ParseError("unknown entity kind: " + std::string(s));
}

// Ordered atom-slot lists per block kind. C1 is the representative slot of
// macromolecule blocks (the alpha carbon / sugar C1'); an atomic block is its
// own representative.
inline const std::vector<std::string>& slot_names(EntityKind k) {
    static const std::vector<std::string> protein = {"N", "C1", "C2", "O"};
    static const std::vector<std::string> rna = {"P",  "C5", "C4", "C3", "C2",
                                                 "C1", "O5", "O4", "O3", "O2"};
    static const std::vector<std::string> atomic = {"A"};
    switch (k) {
        case EntityKind::Protein: return protein;
        case EntityKind::Rna: return rna;
        case EntityKind::Atomic: return atomic;
    }
    return atomic;
}

inline int arity(EntityKind k) { return static_cast<int>(slot_names(k).size()); }

inline int representative_slot(EntityKind k) {
    switch (k) {
        case EntityKind::Protein: return 1;  // C1
        case EntityKind::Rna: return 5;      // C1
        case EntityKind::Atomic: return 0;
    }
    return 0;
}

inline int slot_index(EntityKind k, std::string_view name) {
    const auto& names = slot_names(k);
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

// Periodic table symbols; element id = atomic number - 1 (0..117).
inline const std::array<std::string_view, 118>& element_symbols() {
    static const std::array<std::string_view, 118> syms = {
        "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",
        "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
        "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh",
        "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
        "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re",
        "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
        "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db",
        "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};
    return syms;
}

inline int element_id(std::string_view symbol) {
    const auto& syms = element_symbols();
    for (std::size_t i = 0; i < syms.size(); ++i)
        if (syms[i] == symbol) return static_cast<int>(i);
    return -1;
}

// Default element per macromolecule slot (backbone chemistry).
inline int slot_element(EntityKind k, int slot) {
    static const int protein_elems[] = {6, 5, 5, 7};                      // N C C O
    static const int rna_elems[] = {14, 5, 5, 5, 5, 5, 7, 7, 7, 7};      // P C5 C4 C3 C2 C1 O*
    switch (k) {
        case EntityKind::Protein: return protein_elems[slot];
        case EntityKind::Rna: return rna_elems[slot];
        case EntityKind::Atomic: return 0;
    }
    return 0;
}

struct Atom {
    Vec3 position;
    int element = 0;  // 0..117
    int slot = 0;     // slot id within the block kind
};

struct Block {
    EntityKind kind = EntityKind::Protein;
    bool is_virtual = false;
    std::vector<std::optional<Atom>> atoms;  // fixed arity; missing slots masked
    Frame frame;
    int label = -1;  // class id; -1 = masked/unknown

    static Block real(EntityKind kind) {
        Block b;
        b.kind = kind;
        b.atoms.resize(arity(kind));
        return b;
    }

    static Block make_virtual(EntityKind kind, const Frame& f) {
        Block b;
        b.kind = kind;
        b.is_virtual = true;
        b.frame = f;
        return b;
    }

    bool representative_present() const {
        if (is_virtual) return true;
        const int r = representative_slot(kind);
        return r < static_cast<int>(atoms.size()) && atoms[r].has_value();
    }

    Vec3 representative_position() const {
        if (is_virtual) return frame.translation;
        return atoms[representative_slot(kind)]->position;
    }
};

}  // namespace blockfold
