#pragma once

// Block graph construction: directed kNN edges between real blocks plus
// fully-connected virtual blocks acting as global information agents.
// Edge (src, dst) carries src -> dst information; neighborhoods are the
// incoming edges of each node. Edges are kept sorted by (dst, src).

#include <algorithm>
#include <vector>

#include "blockfold/block.hpp"
#include "blockfold/errors.hpp"
#include "blockfold/geometry.hpp"

namespace blockfold {

struct Edge {
    int src = 0;
    int dst = 0;

    bool operator==(const Edge&) const = default;
};

struct BlockGraph {
    std::vector<Block> blocks;
    std::vector<Edge> edges;
    int k = 0;
    int n_virtual = 0;               // total virtual blocks
    std::vector<int> block_molecule;  // molecule id per block (batching)
    int n_molecules = 1;

    int n_blocks() const { return static_cast<int>(blocks.size()); }
    int n_real() const { return n_blocks() - n_virtual; }
    int n_edges() const { return static_cast<int>(edges.size()); }

    std::vector<int> real_block_indices() const {
        std::vector<int> idx;
        idx.reserve(n_real());
        for (int i = 0; i < n_blocks(); ++i)
            if (!blocks[i].is_virtual) idx.push_back(i);
        return idx;
    }

    // segment id per edge = destination block (for attention softmax)
    std::vector<int> edge_dst() const {
        std::vector<int> seg(edges.size());
        for (std::size_t e = 0; e < edges.size(); ++e) seg[e] = edges[e].dst;
        return seg;
    }
    std::vector<int> edge_src() const {
        std::vector<int> seg(edges.size());
        for (std::size_t e = 0; e < edges.size(); ++e) seg[e] = edges[e].src;
        return seg;
    }

    int count_virtual_touching_edges() const {
        int c = 0;
        for (const Edge& e : edges)
            if (blocks[e.src].is_virtual || blocks[e.dst].is_virtual) ++c;
        return c;
    }

    void sort_edges() {
        std::sort(edges.begin(), edges.end(),
                  [](const Edge& a, const Edge& b) { return a.dst != b.dst ? a.dst < b.dst : a.src < b.src; });
    }
};

// Directed kNN graph over real blocks: block s receives an edge from each of
// the k blocks nearest to its frame translation. Ties break to the lower
// block index.
inline BlockGraph build_knn_graph(std::vector<Block> blocks, int k) {
    const int n = static_cast<int>(blocks.size());
    if (n < 2) throw EmptyMolecule("build_knn_graph: need at least 2 blocks");
    BlockGraph g;
    g.k = k;
    g.block_molecule.assign(n, 0);

    std::vector<Vec3> pos(n);
    for (int i = 0; i < n; ++i) pos[i] = blocks[i].frame.translation;
    g.blocks = std::move(blocks);

    const int kk = std::min(k, n - 1);
    std::vector<std::pair<double, int>> cand;
    cand.reserve(n - 1);
    for (int s = 0; s < n; ++s) {
        cand.clear();
        for (int t = 0; t < n; ++t) {
            if (t == s) continue;
            cand.emplace_back((pos[t] - pos[s]).norm2(), t);
        }
        std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
        for (int j = 0; j < kk; ++j) g.edges.push_back(Edge{cand[j].second, s});
    }
    g.sort_edges();
    return g;
}

// Appends n_virtual virtual blocks, all sharing the principal-axis frame of
// the real block translations (identity rotation at the centroid when the
// cloud is too symmetric to orient). Each virtual block is wired to every
// real block in both directions: 2 * n * n_virtual new directed edges.
inline BlockGraph attach_virtual_blocks(BlockGraph g, int n_virtual) {
    if (g.n_virtual != 0) throw Error("attach_virtual_blocks: graph already has virtual blocks");
    if (n_virtual == 0) return g;
    const int n = g.n_blocks();

    std::vector<Vec3> pos(n);
    for (int i = 0; i < n; ++i) pos[i] = g.blocks[i].frame.translation;
    Frame vf;
    try {
        vf = principal_frame(pos);
    } catch (const DegenerateGeometry&) {
        Vec3 c;
        for (const Vec3& p : pos) c += p;
        vf.translation = c / static_cast<double>(n);
    }

    const EntityKind kind = g.blocks.empty() ? EntityKind::Protein : g.blocks[0].kind;
    const int mol = g.block_molecule.empty() ? 0 : g.block_molecule[0];
    for (int v = 0; v < n_virtual; ++v) {
        g.blocks.push_back(Block::make_virtual(kind, vf));
        g.block_molecule.push_back(mol);
        const int vid = n + v;
        for (int r = 0; r < n; ++r) {
            g.edges.push_back(Edge{r, vid});
            g.edges.push_back(Edge{vid, r});
        }
    }
    g.n_virtual = n_virtual;
    g.sort_edges();
    return g;
}

// Inverse of attach_virtual_blocks; used by tests and graph inspection.
inline BlockGraph strip_virtual_blocks(const BlockGraph& g) {
    BlockGraph out;
    out.k = g.k;
    out.n_molecules = g.n_molecules;
    std::vector<int> remap(g.n_blocks(), -1);
    for (int i = 0; i < g.n_blocks(); ++i) {
        if (g.blocks[i].is_virtual) continue;
        remap[i] = out.n_blocks();
        out.blocks.push_back(g.blocks[i]);
        out.block_molecule.push_back(g.block_molecule[i]);
    }
    for (const Edge& e : g.edges)
        if (remap[e.src] >= 0 && remap[e.dst] >= 0) out.edges.push_back(Edge{remap[e.src], remap[e.dst]});
    out.sort_edges();
    return out;
}

// Disjoint union with index offsets; keeps per-molecule membership so batched
// metrics can be split back out. No cross-molecule edges are created.
inline BlockGraph batch_graphs(const std::vector<BlockGraph>& gs) {
    if (gs.empty()) throw EmptyMolecule("batch_graphs: empty batch");
    BlockGraph out;
    out.k = gs[0].k;
    out.n_molecules = 0;
    int offset = 0;
    for (const BlockGraph& g : gs) {
        for (int i = 0; i < g.n_blocks(); ++i) {
            out.blocks.push_back(g.blocks[i]);
            out.block_molecule.push_back(out.n_molecules + g.block_molecule[i]);
        }
        for (const Edge& e : g.edges) out.edges.push_back(Edge{e.src + offset, e.dst + offset});
        out.n_virtual += g.n_virtual;
        offset += g.n_blocks();
        out.n_molecules += g.n_molecules;
    }
    return out;  // per-graph edges were sorted; offsets preserve global order
}

}  // namespace blockfold
