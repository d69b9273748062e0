#pragma once

// Synthetic molecule generators for tests: random smooth backbones with
// plausible local geometry, and rigid-transform helpers.

#include <vector>

#include "blockfold/block.hpp"
#include "blockfold/featurizer.hpp"
#include "blockfold/geometry.hpp"
#include "blockfold/graph.hpp"
#include "oracles.hpp"

namespace synth {

using namespace blockfold;

inline Vec3 random_unit(Rng& rng) {
    Vec3 v;
    do {
        v = oracle::random_vec(rng);
    } while (v.norm() < 0.2);
    return v / v.norm();
}

// Random-walk trace of representative positions with a fixed step.
inline std::vector<Vec3> backbone_trace(Rng& rng, int n, double step = 3.8) {
    std::vector<Vec3> pts;
    Vec3 p{0, 0, 0};
    Vec3 dir = random_unit(rng);
    for (int i = 0; i < n; ++i) {
        pts.push_back(p);
        Vec3 kick = random_unit(rng);
        dir = dir + kick * 0.7;
        dir = dir / dir.norm();
        p = p + dir * step;
    }
    return pts;
}

inline Block protein_block(Rng& rng, const Vec3& c1, int label = 0) {
    Block b = Block::real(EntityKind::Protein);
    Vec3 u = random_unit(rng);
    Vec3 v = random_unit(rng);
    while (u.cross(v).norm() < 0.3) v = random_unit(rng);
    b.atoms[0] = Atom{c1 + v * 1.46, slot_element(EntityKind::Protein, 0), 0};  // N
    b.atoms[1] = Atom{c1, slot_element(EntityKind::Protein, 1), 1};             // C1
    b.atoms[2] = Atom{c1 + u * 1.52, slot_element(EntityKind::Protein, 2), 2};  // C2
    b.atoms[3] = Atom{c1 + (u + v) * 1.2, slot_element(EntityKind::Protein, 3), 3};  // O
    b.label = label;
    return b;
}

inline Block rna_block(Rng& rng, const Vec3& c1, int label = 0) {
    Block b = Block::real(EntityKind::Rna);
    Vec3 u = random_unit(rng);
    Vec3 v = random_unit(rng);
    while (u.cross(v).norm() < 0.3) v = random_unit(rng);
    Vec3 w = u.cross(v);
    const Vec3 offsets[10] = {
        (u * 2.2 + w * 1.1),  // P
        (u * 1.6 + v * 0.8),  // C5
        (u * 1.5),            // C4
        (u * 0.9 - v * 1.2),  // C3
        (v * -1.4),           // C2
        {0, 0, 0},            // C1
        (u * 2.3 + v * 1.0),  // O5
        (u * 0.7 + v * 1.1),  // O4
        (u * 1.1 - v * 2.0),  // O3
        (v * -2.1 + w * 0.6),  // O2
    };
    for (int s = 0; s < 10; ++s)
        b.atoms[s] = Atom{c1 + offsets[s], slot_element(EntityKind::Rna, s), s};
    b.label = label;
    return b;
}

inline std::vector<Block> random_molecule(Rng& rng, EntityKind kind, int n, int num_classes = 4) {
    std::vector<Block> blocks;
    std::vector<Vec3> trace = backbone_trace(rng, n, kind == EntityKind::Atomic ? 2.0 : 3.8);
    for (int i = 0; i < n; ++i) {
        const int label = static_cast<int>(rng.uniform_int(num_classes));
        switch (kind) {
            case EntityKind::Protein: blocks.push_back(protein_block(rng, trace[i], label)); break;
            case EntityKind::Rna: blocks.push_back(rna_block(rng, trace[i], label)); break;
            case EntityKind::Atomic: {
                Block b = Block::real(EntityKind::Atomic);
                b.atoms[0] = Atom{trace[i], 5, 0};
                b.label = label;
                blocks.push_back(b);
                break;
            }
        }
    }
    assign_frames(blocks);
    return blocks;
}

inline std::vector<Block> transformed(const std::vector<Block>& blocks, const Frame& q) {
    std::vector<Block> out = blocks;
    for (Block& b : out) {
        for (auto& a : b.atoms)
            if (a) a->position = apply(q, a->position);
    }
    assign_frames(out);
    return out;
}

inline BlockGraph graph_of(const std::vector<Block>& blocks, int k, int n_virtual) {
    return attach_virtual_blocks(build_knn_graph(blocks, k), n_virtual);
}

inline std::vector<int> labels_of(const BlockGraph& g) {
    std::vector<int> labels;
    for (const Block& b : g.blocks)
        if (!b.is_virtual) labels.push_back(b.label);
    return labels;
}

}  // namespace synth
