#pragma once

// Geometric featurizer: block frames (predefined for macromolecules, learned
// for atoms), invariant node features pooled from per-atom local coordinates,
// and directed edge features from the concatenated local coordinates of both
// endpoint blocks.

#include <cstdint>
#include <string>
#include <vector>

#include "blockfold/block.hpp"
#include "blockfold/errors.hpp"
#include "blockfold/geometry.hpp"
#include "blockfold/graph.hpp"
#include "blockfold/params.hpp"
#include "blockfold/tape.hpp"

namespace blockfold {

enum class FrameMode { Rotvec, Schmidt, Identity };

inline std::string to_string(FrameMode m) {
    switch (m) {
        case FrameMode::Rotvec: return "rotvec";
        case FrameMode::Schmidt: return "schmidt";
        case FrameMode::Identity: return "identity";
    }
    return "?";
}

inline FrameMode frame_mode_from_string(const std::string& s) {
    if (s == "rotvec") return FrameMode::Rotvec;
    if (s == "schmidt") return FrameMode::Schmidt;
    if (s == "identity") return FrameMode::Identity;
    throw ParseError("unknown frame mode: " + s);
}

struct FeaturizerConfig {
    int hidden_dim = 128;
    int atom_embed_dim = 32;
    bool learned_frame = false;  // true for atomic entities
    FrameMode frame_mode = FrameMode::Rotvec;
};

// ---------------------------------------------------------------------------
// Predefined macromolecule frames.

inline Frame build_protein_frame(const Block& b) {
    const int iN = 0, iC1 = 1, iC2 = 2;
    if (!b.atoms[iN] || !b.atoms[iC1] || !b.atoms[iC2])
        throw DegenerateGeometry("protein frame: N/C1/C2 atom missing");
    const Vec3 c1 = b.atoms[iC1]->position;
    return gram_schmidt_frame(c1, b.atoms[iC2]->position - c1, b.atoms[iN]->position - c1);
}

inline Frame build_rna_frame(const Block& b) {
    const int iC4 = 2, iC1 = 5, iO4 = 7;
    if (!b.atoms[iC1] || !b.atoms[iC4] || !b.atoms[iO4])
        throw DegenerateGeometry("rna frame: C1/C4/O4 atom missing");
    const Vec3 c1 = b.atoms[iC1]->position;
    return gram_schmidt_frame(c1, b.atoms[iC4]->position - c1, b.atoms[iO4]->position - c1);
}

// Atomic blocks get identity rotation at the atom; the network learns the
// rotation on the tape when FeaturizerConfig.learned_frame is set.
inline Frame build_block_frame(const Block& b) {
    switch (b.kind) {
        case EntityKind::Protein: return build_protein_frame(b);
        case EntityKind::Rna: return build_rna_frame(b);
        case EntityKind::Atomic: {
            Frame f;
            f.translation = b.atoms[0]->position;
            return f;
        }
    }
    return Frame{};
}

inline void assign_frames(std::vector<Block>& blocks) {
    for (Block& b : blocks) b.frame = build_block_frame(b);
}

// ---------------------------------------------------------------------------
// Per-graph constant index structures shared by featurizer and network.

struct GraphIndex {
    const BlockGraph* graph = nullptr;
    std::vector<int> edge_dst, edge_src;
    ad::Tensor trans;   // B x 3 frame translations
    ad::Tensor tdiff;   // E x 3 (t_src - t_dst)
    ad::Tensor rdist;   // E x 1 pairwise distance
    std::vector<int> real_rows, virt_rows;
    std::vector<int> virt_index;  // virtual block's index within its molecule
    std::vector<int> block_perm;  // block id -> row in [real rows | virtual rows]

    // flattened present atoms of real blocks
    std::vector<int> atom_block, atom_elem, atom_slot;
    ad::Tensor atom_offset;  // N_atoms x 3 (x_atom - t_block)
    std::vector<double> block_pool_scale;  // 1/#atoms for real blocks, 0 for virtual

    // edges grouped by (arity_dst, arity_src), virtual endpoints count as 1
    struct EdgeGroup {
        int arity_dst = 0, arity_src = 0;
        std::vector<int> edge_ids;
        ad::Tensor offsets;  // E_g x 3*(ad+as): slot offsets from t_dst, missing = 0
        ad::Tensor masks;    // E_g x (ad+as)
    };
    std::vector<EdgeGroup> groups;
    std::vector<int> edge_to_group_row;  // edge id -> row in group-concatenated order

    // real-to-real edge subset for the frame learner
    std::vector<int> rr_edges;
    std::vector<int> rr_dst, rr_src;
    ad::Tensor rr_dirs;  // unit directions (x_src - x_dst); eps-regularized

    static GraphIndex build(const BlockGraph& g, bool mask_elements) {
        GraphIndex ix;
        ix.graph = &g;
        const int B = g.n_blocks();
        const int E = g.n_edges();
        ix.edge_dst.resize(E);
        ix.edge_src.resize(E);
        ix.trans = ad::Tensor(B, 3);
        for (int b = 0; b < B; ++b) {
            const Vec3 t = g.blocks[b].frame.translation;
            ix.trans.at(b, 0) = t.x;
            ix.trans.at(b, 1) = t.y;
            ix.trans.at(b, 2) = t.z;
        }
        ix.tdiff = ad::Tensor(E, 3);
        ix.rdist = ad::Tensor(E, 1);
        for (int e = 0; e < E; ++e) {
            ix.edge_dst[e] = g.edges[e].dst;
            ix.edge_src[e] = g.edges[e].src;
            const Vec3 d = g.blocks[g.edges[e].src].frame.translation -
                           g.blocks[g.edges[e].dst].frame.translation;
            ix.tdiff.at(e, 0) = d.x;
            ix.tdiff.at(e, 1) = d.y;
            ix.tdiff.at(e, 2) = d.z;
            ix.rdist.at(e, 0) = d.norm();
        }

        ix.block_perm.resize(B);
        std::vector<int> virt_seen_per_mol;
        for (int b = 0; b < B; ++b) {
            if (g.blocks[b].is_virtual) {
                const int mol = g.block_molecule[b];
                if (static_cast<int>(virt_seen_per_mol.size()) <= mol) virt_seen_per_mol.resize(mol + 1, 0);
                ix.virt_index.push_back(virt_seen_per_mol[mol]++);
                ix.virt_rows.push_back(b);
            } else {
                ix.real_rows.push_back(b);
            }
        }
        for (std::size_t i = 0; i < ix.real_rows.size(); ++i) ix.block_perm[ix.real_rows[i]] = static_cast<int>(i);
        for (std::size_t i = 0; i < ix.virt_rows.size(); ++i)
            ix.block_perm[ix.virt_rows[i]] = static_cast<int>(ix.real_rows.size() + i);

        // flattened atoms
        ix.block_pool_scale.assign(B, 0.0);
        std::vector<std::array<double, 3>> offsets;
        for (int b = 0; b < B; ++b) {
            const Block& blk = g.blocks[b];
            if (blk.is_virtual) continue;
            int count = 0;
            for (const auto& a : blk.atoms) {
                if (!a) continue;
                ix.atom_block.push_back(b);
                ix.atom_elem.push_back(mask_elements ? 118 : a->element);
                ix.atom_slot.push_back(a->slot);
                const Vec3 off = a->position - blk.frame.translation;
                offsets.push_back({off.x, off.y, off.z});
                ++count;
            }
            if (count > 0) ix.block_pool_scale[b] = 1.0 / count;
        }
        ix.atom_offset = ad::Tensor(static_cast<int>(offsets.size()), 3);
        for (std::size_t i = 0; i < offsets.size(); ++i)
            for (int c = 0; c < 3; ++c) ix.atom_offset.at(static_cast<int>(i), c) = offsets[i][c];

        build_edge_groups(ix, g);
        build_rr(ix, g);
        return ix;
    }

private:
    static int effective_arity(const Block& b) { return b.is_virtual ? 1 : arity(b.kind); }

    static void slot_offsets(const Block& b, const Vec3& origin, double* coords, double* mask) {
        // virtual blocks contribute a single pseudo-slot at their frame origin
        if (b.is_virtual) {
            const Vec3 off = b.frame.translation - origin;
            coords[0] = off.x;
            coords[1] = off.y;
            coords[2] = off.z;
            mask[0] = 1.0;
            return;
        }
        for (std::size_t s = 0; s < b.atoms.size(); ++s) {
            if (b.atoms[s]) {
                const Vec3 off = b.atoms[s]->position - origin;
                coords[3 * s] = off.x;
                coords[3 * s + 1] = off.y;
                coords[3 * s + 2] = off.z;
                mask[s] = 1.0;
            } else {
                coords[3 * s] = coords[3 * s + 1] = coords[3 * s + 2] = 0.0;
                mask[s] = 0.0;
            }
        }
    }

    static void build_edge_groups(GraphIndex& ix, const BlockGraph& g) {
        const int E = g.n_edges();
        ix.edge_to_group_row.assign(E, -1);
        for (int e = 0; e < E; ++e) {
            const int ad_ = effective_arity(g.blocks[g.edges[e].dst]);
            const int as_ = effective_arity(g.blocks[g.edges[e].src]);
            EdgeGroup* grp = nullptr;
            for (auto& cand : ix.groups)
                if (cand.arity_dst == ad_ && cand.arity_src == as_) grp = &cand;
            if (!grp) {
                ix.groups.push_back(EdgeGroup{ad_, as_, {}, {}, {}});
                grp = &ix.groups.back();
            }
            grp->edge_ids.push_back(e);
        }
        int row0 = 0;
        for (auto& grp : ix.groups) {
            const int slots = grp.arity_dst + grp.arity_src;
            const int rows = static_cast<int>(grp.edge_ids.size());
            grp.offsets = ad::Tensor(rows, 3 * slots);
            grp.masks = ad::Tensor(rows, slots);
            for (int r = 0; r < rows; ++r) {
                const Edge& e = g.edges[grp.edge_ids[r]];
                const Block& bd = g.blocks[e.dst];
                const Block& bs = g.blocks[e.src];
                const Vec3 origin = bd.frame.translation;
                slot_offsets(bd, origin, grp.offsets.row_ptr(r), grp.masks.row_ptr(r));
                slot_offsets(bs, origin, grp.offsets.row_ptr(r) + 3 * grp.arity_dst,
                             grp.masks.row_ptr(r) + grp.arity_dst);
                ix.edge_to_group_row[grp.edge_ids[r]] = row0 + r;
            }
            row0 += rows;
        }
    }

    static void build_rr(GraphIndex& ix, const BlockGraph& g) {
        for (int e = 0; e < g.n_edges(); ++e) {
            const Edge& ed = g.edges[e];
            if (g.blocks[ed.src].is_virtual || g.blocks[ed.dst].is_virtual) continue;
            ix.rr_edges.push_back(e);
            ix.rr_dst.push_back(ed.dst);
            ix.rr_src.push_back(ed.src);
        }
        ix.rr_dirs = ad::Tensor(static_cast<int>(ix.rr_edges.size()), 3);
        for (std::size_t i = 0; i < ix.rr_edges.size(); ++i) {
            const int e = ix.rr_edges[i];
            const Vec3 d{ix.tdiff.at(e, 0), ix.tdiff.at(e, 1), ix.tdiff.at(e, 2)};
            const double n = d.norm() + 1e-8;  // coincident atoms contribute nothing
            ix.rr_dirs.at(static_cast<int>(i), 0) = d.x / n;
            ix.rr_dirs.at(static_cast<int>(i), 1) = d.y / n;
            ix.rr_dirs.at(static_cast<int>(i), 2) = d.z / n;
        }
    }
};

// ---------------------------------------------------------------------------
// On-tape featurizer.

class Featurizer {
public:
    Featurizer(ad::ParamStore& store, EntityKind entity, const FeaturizerConfig& cfg, int n_virtual)
        : entity_(entity), cfg_(cfg) {
        const int a = cfg.atom_embed_dim;
        const int d = cfg.hidden_dim;
        store.create("feat.elem_embed", 119, a, ad::Init::KaimingUniform);  // 118 elements + unknown
        store.create("feat.slot_embed", 10, a, ad::Init::KaimingUniform);
        if (n_virtual > 0) store.create("feat.virtual_embed", n_virtual, d, ad::Init::KaimingUniform);
        node_mlp_ = ad::Mlp::create(store, "feat.node_mlp", 2 * a + 3, d, d);
        const int A = arity(entity);
        edge_embed_keys_ = {key(A, A)};
        edge_dims_ = {{key(A, A), 4 * (A + A)}};
        if (A != 1) {
            edge_embed_keys_.push_back(key(A, 1));
            edge_embed_keys_.push_back(key(1, A));
            edge_dims_[key(A, 1)] = 4 * (A + 1);
            edge_dims_[key(1, A)] = 4 * (1 + A);
        }
        for (const auto& k : edge_embed_keys_)
            edge_embed_.emplace(k, ad::LinearMap::create(store, "feat.edge." + k, edge_dims_[k], d));
        if (cfg.learned_frame) {
            frame_att0_ = ad::Mlp::create(store, "feat.frame.att0", 2 * d, d, 1);
            if (cfg.frame_mode == FrameMode::Schmidt)
                frame_att1_ = ad::Mlp::create(store, "feat.frame.att1", 2 * d, d, 1);
        }
    }

    // Rotation matrices of the stored block frames as one B x 9 constant.
    static ad::Var constant_rotations(ad::Tape& tape, const BlockGraph& g) {
        ad::Tensor rot(g.n_blocks(), 9);
        for (int b = 0; b < g.n_blocks(); ++b)
            for (int i = 0; i < 9; ++i) rot.at(b, i) = g.blocks[b].frame.rotation.m[i];
        return tape.constant(std::move(rot));
    }

    static ad::Var identity_rotations(ad::Tape& tape, int n_blocks) {
        ad::Tensor rot(n_blocks, 9);
        for (int b = 0; b < n_blocks; ++b) rot.at(b, 0) = rot.at(b, 4) = rot.at(b, 8) = 1.0;
        return tape.constant(std::move(rot));
    }

    // Invariant node features: mean over present atoms of
    // MLP(element embedding, slot embedding, R^T (x - t)); virtual blocks use
    // a per-index learned embedding instead.
    ad::Var node_init(ad::TapeBinding& tb, const GraphIndex& ix, ad::Var rot) const {
        ad::Tape& t = tb.tape();
        const int B = ix.graph->n_blocks();
        ad::Var e_emb = t.gather_rows(tb.use("feat.elem_embed"), ix.atom_elem);
        ad::Var s_emb = t.gather_rows(tb.use("feat.slot_embed"), ix.atom_slot);
        ad::Var local = t.rot_apply(t.gather_rows(rot, ix.atom_block), t.constant(ix.atom_offset),
                                    /*transpose=*/true);
        ad::Var per_atom = node_mlp_.apply(tb, t.concat_cols({e_emb, s_emb, local}));
        ad::Var pooled = t.segment_sum(per_atom, ix.atom_block, B);
        ad::Var nodes = t.row_scale_const(pooled, ix.block_pool_scale);
        if (!ix.virt_rows.empty()) {
            ad::Var v_emb = t.gather_rows(tb.use("feat.virtual_embed"), ix.virt_index);
            nodes = t.add(nodes, t.segment_sum(v_emb, ix.virt_rows, B));
        }
        return nodes;
    }

    // Directed edge features: local coordinates of both endpoint blocks' slots
    // in the receiver's frame, zero-filled with a parallel mask channel, then
    // linearly embedded. Layout per group: [coords_dst | coords_src | masks].
    ad::Var edge_init(ad::TapeBinding& tb, const GraphIndex& ix, ad::Var rot) const {
        ad::Tape& t = tb.tape();
        std::vector<ad::Var> parts;
        for (const auto& grp : ix.groups) {
            std::vector<int> dsts(grp.edge_ids.size());
            for (std::size_t i = 0; i < grp.edge_ids.size(); ++i)
                dsts[i] = ix.edge_dst[grp.edge_ids[i]];
            ad::Var local =
                t.rot_apply(t.gather_rows(rot, dsts), t.constant(grp.offsets), /*transpose=*/true);
            ad::Var raw = t.concat_cols({local, t.constant(grp.masks)});
            parts.push_back(edge_embed_.at(key(grp.arity_dst, grp.arity_src)).apply(tb, raw));
        }
        ad::Var stacked = parts.size() == 1 ? parts[0] : t.concat_rows(parts);
        return t.gather_rows(stacked, ix.edge_to_group_row);
    }

    // Attention-weighted sum of unit directions toward neighbors (real-real
    // edges only), one rotation vector per real block.
    ad::Var learn_rotation_vectors(ad::TapeBinding& tb, const GraphIndex& ix, ad::Var boot_feats,
                                   const ad::Mlp& att) const {
        ad::Tape& t = tb.tape();
        ad::Var zin = t.concat_cols(
            {t.gather_rows(boot_feats, ix.rr_dst), t.gather_rows(boot_feats, ix.rr_src)});
        ad::Var w = att.apply(tb, zin);
        ad::Var a = t.segment_softmax(w, ix.rr_dst, ix.graph->n_blocks());
        ad::Var contrib = t.mul_col_broadcast(t.constant(ix.rr_dirs), a);
        ad::Var all_r = t.segment_sum(contrib, ix.rr_dst, ix.graph->n_blocks());
        return t.gather_rows(all_r, ix.real_rows);  // n_real x 3
    }

    // Rotation-vector path: quaternion assembly of Eq.-style axis-angle rows.
    static ad::Var rotvec_to_rotmat_rows(ad::Tape& t, ad::Var r) {
        ad::Var theta2 = t.row_sum(t.mul(r, r));
        ad::Var theta = t.usqrt(t.affine(theta2, 1.0, 1e-24));
        ad::Var half = t.scale(theta, 0.5);
        ad::Var w = t.ucos(half);
        ad::Var s = t.div(t.usin(half), theta);
        ad::Var v = t.mul_col_broadcast(r, s);
        ad::Var x = t.slice_cols(v, 0, 1), y = t.slice_cols(v, 1, 2), z = t.slice_cols(v, 2, 3);
        ad::Var xx = t.mul(x, x), yy = t.mul(y, y), zz = t.mul(z, z);
        ad::Var xy = t.mul(x, y), xz = t.mul(x, z), yz = t.mul(y, z);
        ad::Var xw = t.mul(x, w), yw = t.mul(y, w), zw = t.mul(z, w);
        ad::Var r00 = t.affine(t.add(yy, zz), -2.0, 1.0);
        ad::Var r01 = t.scale(t.sub(xy, zw), 2.0);
        ad::Var r02 = t.scale(t.add(xz, yw), 2.0);
        ad::Var r10 = t.scale(t.add(xy, zw), 2.0);
        ad::Var r11 = t.affine(t.add(xx, zz), -2.0, 1.0);
        ad::Var r12 = t.scale(t.sub(yz, xw), 2.0);
        ad::Var r20 = t.scale(t.sub(xz, yw), 2.0);
        ad::Var r21 = t.scale(t.add(yz, xw), 2.0);
        ad::Var r22 = t.affine(t.add(xx, yy), -2.0, 1.0);
        return t.concat_cols({r00, r01, r02, r10, r11, r12, r20, r21, r22});
    }

    // Learned rotations for the real blocks (n_real x 9).
    ad::Var learn_rotations(ad::TapeBinding& tb, const GraphIndex& ix, ad::Var boot_feats) const {
        ad::Tape& t = tb.tape();
        if (cfg_.frame_mode == FrameMode::Identity)
            return identity_rotations(t, static_cast<int>(ix.real_rows.size()));
        ad::Var r0 = learn_rotation_vectors(tb, ix, boot_feats, frame_att0_);
        if (cfg_.frame_mode == FrameMode::Rotvec) return rotvec_to_rotmat_rows(t, r0);
        // Schmidt ablation: orthonormalize two learned direction fields.
        ad::Var r1 = learn_rotation_vectors(tb, ix, boot_feats, frame_att1_);
        ad::Var e1 = normalize_rows(t, r0);
        ad::Var dot = t.row_sum(t.mul(r1, e1));
        ad::Var w2 = t.sub(r1, t.mul_col_broadcast(e1, dot));
        ad::Var e2 = normalize_rows(t, w2);
        ad::Var e3 = t.cross_rows(e1, e2);
        // columns [e1 e2 e3] in row-major order
        std::vector<ad::Var> cols;
        for (int row = 0; row < 3; ++row)
            for (ad::Var e : {e1, e2, e3}) cols.push_back(t.slice_cols(e, row, row + 1));
        return t.concat_cols(cols);
    }

    const FeaturizerConfig& config() const { return cfg_; }

private:
    static std::string key(int ad_, int as_) { return std::to_string(ad_) + "x" + std::to_string(as_); }

    static ad::Var normalize_rows(ad::Tape& t, ad::Var v) {
        return t.mul_col_broadcast(v, t.recip(t.row_norm(v, 1e-16)));
    }

    EntityKind entity_;
    FeaturizerConfig cfg_;
    ad::Mlp node_mlp_;
    ad::Mlp frame_att0_, frame_att1_;
    std::vector<std::string> edge_embed_keys_;
    std::map<std::string, int> edge_dims_;
    std::map<std::string, ad::LinearMap> edge_embed_;
};

}  // namespace blockfold
