#pragma once

// The block graph attention network: a stack of layers, each running the
// geometric interaction extractor over edges, gated edge attention over
// neighborhoods, a residual FFN, and an edge refresh, with node/edge row
// dropout during training. Works on any entity kind; for atomic graphs a
// bootstrap layer plus a message-passing frame learner produce the block
// rotations on the tape so gradients reach the frame parameters.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blockfold/block.hpp"
#include "blockfold/featurizer.hpp"
#include "blockfold/graph.hpp"
#include "blockfold/params.hpp"
#include "blockfold/rng.hpp"
#include "blockfold/tape.hpp"
#include "blockfold/task_spec.hpp"

namespace blockfold {

enum class Mode { Train, Eval };

struct BlockGATConfig {
    int layers = 10;
    int hidden = 128;       // d
    int virtual_atoms = 8;  // m: learned 3-vectors per feature
    double dropout = 0.05;
    int n_virtual = 3;  // virtual blocks per molecule
    int k = 0;          // 0 = default for the entity kind
    int atom_embed_dim = 32;
    FrameMode frame_mode = FrameMode::Rotvec;
    bool zero_residual_init = true;
};

inline int effective_k(const BlockGATConfig& cfg, EntityKind entity) {
    if (cfg.k > 0) return cfg.k;
    return entity == EntityKind::Atomic ? 12 : 30;
}

// On-tape per-layer state; shapes stay (B x d, E x d) across layers.
struct LayerState {
    ad::Var node_features = -1;
    ad::Var edge_features = -1;
    int layer_index = 0;
};

// Per-edge constant/derived frame quantities reused by every layer.
struct FrameVars {
    ad::Var rot = -1;        // B x 9
    ad::Var rel_rot = -1;    // E x 9, R_dst^T R_src
    ad::Var rel_trans = -1;  // E x 3, R_dst^T (t_src - t_dst)
    ad::Var rdist = -1;      // E x 1 constant pairwise distance
};

// Optional per-layer attention weights (E x 1 tensors) for diagnostics.
struct ForwardTrace {
    std::vector<ad::Tensor> attention;
};

struct LayerParams {
    ad::Mlp h_edge;    // d -> 3m virtual inter-atoms from edge features
    ad::Mlp h_node;    // d -> 3m virtual intra-atoms (shared for both endpoints)
    ad::Mlp geo;       // [6m | 9 | 1 | m^2] -> d
    ad::Mlp edge_in;   // 2d -> d edge refresh after geometric interaction
    ad::Mlp att;       // 3d -> 1 attention logits
    ad::Mlp value;     // d -> d values, conditioned on edge features only
    ad::Mlp gate;      // d -> d forget gate
    ad::Mlp ffn;       // d -> d residual feed-forward
    ad::Mlp edge_out;  // 3d -> d edge update from refreshed node features

    static LayerParams create(ad::ParamStore& store, const std::string& prefix, int d, int m,
                              bool zero_residual) {
        LayerParams p;
        p.h_edge = ad::Mlp::create(store, prefix + ".h_edge", d, d, 3 * m);
        p.h_node = ad::Mlp::create(store, prefix + ".h_node", d, d, 3 * m);
        p.geo = ad::Mlp::create(store, prefix + ".geo", 6 * m + 9 + 1 + m * m, d, d);
        p.edge_in = ad::Mlp::create(store, prefix + ".edge_in", 2 * d, d, d);
        p.att = ad::Mlp::create(store, prefix + ".att", 3 * d, d, 1);
        p.value = ad::Mlp::create(store, prefix + ".value", d, d, d, zero_residual);
        p.gate = ad::Mlp::create(store, prefix + ".gate", d, d, d);
        p.ffn = ad::Mlp::create(store, prefix + ".ffn", d, d, d, zero_residual);
        p.edge_out = ad::Mlp::create(store, prefix + ".edge_out", 3 * d, d, d);
        return p;
    }
};

// ---------------------------------------------------------------------------
// Layer operations.

// Enrich edge features with frame-aware geometry: local coordinates of
// edge-conditioned virtual atoms, the relative rotation and distance, and the
// rotated dot products of the endpoint virtual atoms.
inline ad::Var geometric_interaction(ad::TapeBinding& tb, const LayerState& state,
                                     const GraphIndex& ix, const FrameVars& fv,
                                     const LayerParams& lp, int m) {
    ad::Tape& t = tb.tape();
    ad::Var h_st = lp.h_edge.apply(tb, state.edge_features);
    ad::Var h_all = lp.h_node.apply(tb, state.node_features);
    ad::Var h_s = t.gather_rows(h_all, ix.edge_dst);
    ad::Var h_t = t.gather_rows(h_all, ix.edge_src);

    ad::Var rotated = t.rot_apply(fv.rel_rot, h_st);
    ad::Var placed = t.add(rotated, t.repeat_cols(fv.rel_trans, m));
    ad::Var z_hat = t.concat_cols({placed, h_st});              // E x 6m
    ad::Var dots = t.gram_pairs(h_s, t.rot_apply(fv.rel_rot, h_t));  // E x m^2

    ad::Var g = lp.geo.apply(tb, t.concat_cols({z_hat, fv.rel_rot, fv.rdist, dots}));
    return lp.edge_in.apply(tb, t.concat_cols({state.edge_features, g}));
}

// Attention over incoming edges; values depend on edge features only and are
// injected through a sigmoid forget gate. Optionally reports the attention
// weights for diagnostics.
inline ad::Var gated_edge_attention(ad::TapeBinding& tb, const LayerState& state,
                                    const GraphIndex& ix, const LayerParams& lp,
                                    ad::Tensor* attention_out = nullptr) {
    ad::Tape& t = tb.tape();
    const int B = ix.graph->n_blocks();
    ad::Var f_s = t.gather_rows(state.node_features, ix.edge_dst);
    ad::Var f_t = t.gather_rows(state.node_features, ix.edge_src);
    ad::Var w = lp.att.apply(tb, t.concat_cols({f_s, state.edge_features, f_t}));
    ad::Var a = t.segment_softmax(w, ix.edge_dst, B);
    if (attention_out) *attention_out = t.value(a);
    ad::Var values = lp.value.apply(tb, state.edge_features);
    ad::Var delta = t.segment_sum(t.mul_col_broadcast(values, a), ix.edge_dst, B);
    ad::Var gate = t.sigmoid(lp.gate.apply(tb, delta));
    return t.add(state.node_features, t.mul(gate, delta));
}

// Residual FFN on nodes, then each edge is recomputed from the refreshed
// endpoint features.
inline LayerState ffn_and_edge_update(ad::TapeBinding& tb, const LayerState& state,
                                      const GraphIndex& ix, const LayerParams& lp) {
    ad::Tape& t = tb.tape();
    LayerState out = state;
    out.node_features = t.add(state.node_features, lp.ffn.apply(tb, state.node_features));
    ad::Var f_s = t.gather_rows(out.node_features, ix.edge_dst);
    ad::Var f_t = t.gather_rows(out.node_features, ix.edge_src);
    out.edge_features = lp.edge_out.apply(tb, t.concat_cols({f_s, state.edge_features, f_t}));
    return out;
}

// Row dropout: each feature row is zeroed independently with probability p,
// survivors scaled by 1/(1-p). Identity when p == 0.
inline ad::Var apply_dropout(ad::Tape& t, ad::Var x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    const int rows = t.value(x).rows;
    std::vector<double> mask(rows);
    const double keep = 1.0 / (1.0 - p);
    for (int i = 0; i < rows; ++i) mask[i] = rng.uniform() < p ? 0.0 : keep;
    return t.row_scale_const(x, std::move(mask));
}

// ---------------------------------------------------------------------------
// Full network.

class Model {
public:
    TaskSpec task;
    BlockGATConfig cfg;
    ad::ParamStore params;

    Model(TaskSpec task_, BlockGATConfig cfg_, std::uint64_t seed)
        : task(std::move(task_)),
          cfg(cfg_),
          params(seed),
          featurizer_(params, task.entity,
                      FeaturizerConfig{cfg_.hidden, cfg_.atom_embed_dim,
                                       task.entity == EntityKind::Atomic, cfg_.frame_mode},
                      cfg_.n_virtual) {
        if (task.entity == EntityKind::Atomic)
            boot_ = LayerParams::create(params, "boot", cfg.hidden, cfg.virtual_atoms,
                                        cfg.zero_residual_init);
        for (int l = 0; l < cfg.layers; ++l)
            layers_.push_back(LayerParams::create(params, "layer" + std::to_string(l), cfg.hidden,
                                                  cfg.virtual_atoms, cfg.zero_residual_init));
        readout_ = ad::LinearMap::create(params, "readout", cfg.hidden, task.num_classes);
    }

    // Logits for the real (non-virtual) blocks, n_real x C, in block order.
    ad::Var forward(ad::TapeBinding& tb, const BlockGraph& graph, Mode mode,
                    std::uint64_t dropout_seed = 0, ForwardTrace* trace = nullptr) {
        validate(graph);
        ad::Tape& tape = tb.tape();
        const GraphIndex ix = GraphIndex::build(graph, task.entity == EntityKind::Atomic);

        ad::Var rot = block_rotations(tb, ix);
        FrameVars fv = frame_vars(tape, ix, rot);
        LayerState state;
        state.node_features = featurizer_.node_init(tb, ix, rot);
        state.edge_features = featurizer_.edge_init(tb, ix, rot);

        Rng drop_rng(dropout_seed);
        for (int l = 0; l < cfg.layers; ++l) {
            state = run_layer(tb, state, ix, fv, layers_[l], mode, drop_rng, trace);
            state.layer_index = l + 1;
        }
        return readout_.apply(tb, tape.gather_rows(state.node_features, ix.real_rows));
    }

    ad::Var forward(ad::Tape& tape, const BlockGraph& graph, Mode mode,
                    std::uint64_t dropout_seed = 0, ForwardTrace* trace = nullptr) {
        ad::TapeBinding tb(tape, params);
        return forward(tb, graph, mode, dropout_seed, trace);
    }

    // Loss + gradient accumulation into the parameter store. Returns the loss.
    double backward(ad::Tape& tape, const BlockGraph& graph, const std::vector<int>& targets,
                    const std::vector<bool>& mask, Mode mode, std::uint64_t dropout_seed = 0) {
        ad::TapeBinding tb(tape, params);
        ad::Var logits = forward(tb, graph, mode, dropout_seed);
        ad::Var loss = tape.softmax_cross_entropy(logits, targets, mask);
        tape.backward(loss);
        tb.harvest_grads();
        return tape.value(loss).v[0];
    }

    const Featurizer& featurizer() const { return featurizer_; }
    const LayerParams& layer(int l) const { return layers_[l]; }
    const LayerParams& boot_layer() const { return boot_; }

    // Learned rotations for atomic graphs (n_real x 9); used by tests.
    ad::Var learned_rotations(ad::TapeBinding& tb, const GraphIndex& ix) {
        return atomic_rotations(tb, ix);
    }

private:
    void validate(const BlockGraph& graph) const {
        std::vector<int> indeg(graph.n_blocks(), 0);
        for (const Edge& e : graph.edges) indeg[e.dst]++;
        for (int b = 0; b < graph.n_blocks(); ++b) {
            if (!graph.blocks[b].is_virtual && indeg[b] == 0)
                throw IsolatedNode("block " + std::to_string(b) + " has no incoming edges");
            if (graph.blocks[b].kind != task.entity && !graph.blocks[b].is_virtual)
                throw EntityMismatch("graph entity does not match task");
        }
    }

    ad::Var block_rotations(ad::TapeBinding& tb, const GraphIndex& ix) {
        if (task.entity != EntityKind::Atomic) return Featurizer::constant_rotations(tb.tape(), *ix.graph);
        return atomic_rotations(tb, ix);
    }

    // Bootstrap one layer with identity rotations, learn per-atom rotation
    // vectors from the bootstrapped features, and splice constant virtual
    // rotations back in block order.
    ad::Var atomic_rotations(ad::TapeBinding& tb, const GraphIndex& ix) {
        ad::Tape& t = tb.tape();
        ad::Var rot_id = Featurizer::identity_rotations(t, ix.graph->n_blocks());
        FrameVars fv = frame_vars(t, ix, rot_id);
        LayerState state;
        state.node_features = featurizer_.node_init(tb, ix, rot_id);
        state.edge_features = featurizer_.edge_init(tb, ix, rot_id);
        state.edge_features = geometric_interaction(tb, state, ix, fv, boot_, cfg.virtual_atoms);
        state.node_features = gated_edge_attention(tb, state, ix, boot_);
        state = ffn_and_edge_update(tb, state, ix, boot_);

        ad::Var real_rot = featurizer_.learn_rotations(tb, ix, state.node_features);
        if (ix.virt_rows.empty()) return real_rot;
        ad::Tensor vrot(static_cast<int>(ix.virt_rows.size()), 9);
        for (std::size_t i = 0; i < ix.virt_rows.size(); ++i)
            for (int c = 0; c < 9; ++c)
                vrot.at(static_cast<int>(i), c) = ix.graph->blocks[ix.virt_rows[i]].frame.rotation.m[c];
        ad::Var stacked = t.concat_rows({real_rot, t.constant(std::move(vrot))});
        return t.gather_rows(stacked, ix.block_perm);
    }

    static FrameVars frame_vars(ad::Tape& t, const GraphIndex& ix, ad::Var rot) {
        FrameVars fv;
        fv.rot = rot;
        ad::Var r_dst = t.gather_rows(rot, ix.edge_dst);
        ad::Var r_src = t.gather_rows(rot, ix.edge_src);
        fv.rel_rot = t.rot_compose_t(r_dst, r_src);
        fv.rel_trans = t.rot_apply(r_dst, t.constant(ix.tdiff), /*transpose=*/true);
        fv.rdist = t.constant(ix.rdist);
        return fv;
    }

    LayerState run_layer(ad::TapeBinding& tb, const LayerState& in, const GraphIndex& ix,
                         const FrameVars& fv, const LayerParams& lp, Mode mode, Rng& drop_rng,
                         ForwardTrace* trace) {
        ad::Tape& t = tb.tape();
        LayerState state = in;
        state.edge_features = geometric_interaction(tb, state, ix, fv, lp, cfg.virtual_atoms);
        ad::Tensor attn;
        state.node_features = gated_edge_attention(tb, state, ix, lp, trace ? &attn : nullptr);
        if (trace) trace->attention.push_back(std::move(attn));
        state = ffn_and_edge_update(tb, state, ix, lp);
        if (mode == Mode::Train && cfg.dropout > 0.0) {
            state.node_features = apply_dropout(t, state.node_features, cfg.dropout, drop_rng);
            state.edge_features = apply_dropout(t, state.edge_features, cfg.dropout, drop_rng);
        }
        return state;
    }

    Featurizer featurizer_;
    LayerParams boot_;
    std::vector<LayerParams> layers_;
    ad::LinearMap readout_;
};

}  // namespace blockfold
