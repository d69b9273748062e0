#pragma once

// Flat registry of named trainable tensors with paired gradient buffers.
// Initialization is derived from (store seed, parameter name), so the same
// config and seed reproduce identical parameters regardless of creation order.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockfold/rng.hpp"
#include "blockfold/tape.hpp"
#include "blockfold/tensor.hpp"

namespace blockfold::ad {

enum class Init { Zero, KaimingUniform };

class ParamStore {
public:
    struct Entry {
        Tensor value;
        Tensor grad;
    };

    std::uint64_t rng_seed = 0;

    explicit ParamStore(std::uint64_t seed = 0) : rng_seed(seed) {}

    Entry& create(const std::string& name, int rows, int cols, Init init) {
        auto [it, inserted] = items_.try_emplace(name);
        if (!inserted) throw std::logic_error("ParamStore: duplicate parameter " + name);
        Entry& e = it->second;
        e.value = Tensor(rows, cols);
        e.grad = Tensor(rows, cols);
        if (init == Init::KaimingUniform) {
            Rng rng(derive_seed(rng_seed, hash_name(name)));
            const double bound = std::sqrt(6.0 / rows);  // fan-in scaling
            for (double& x : e.value.v) x = rng.uniform(-bound, bound);
        }
        return e;
    }

    Entry& at(const std::string& name) {
        auto it = items_.find(name);
        if (it == items_.end()) throw std::logic_error("ParamStore: unknown parameter " + name);
        return it->second;
    }
    const Entry& at(const std::string& name) const {
        auto it = items_.find(name);
        if (it == items_.end()) throw std::logic_error("ParamStore: unknown parameter " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return items_.count(name) != 0; }

    void zero_grads() {
        for (auto& [name, e] : items_) e.grad.fill(0.0);
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, e] : items_) n += e.value.size();
        return n;
    }

    // Deterministic (lexicographic) iteration order.
    std::map<std::string, Entry>& items() { return items_; }
    const std::map<std::string, Entry>& items() const { return items_; }

private:
    std::map<std::string, Entry> items_;
};

// Binds ParamStore entries to tape leaves for one forward/backward pass and
// copies adjoints back into the paired gradient buffers.
class TapeBinding {
public:
    TapeBinding(Tape& tape, ParamStore& store) : tape_(tape), store_(store) {}

    Var use(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        Var v = tape_.leaf(store_.at(name).value);
        bound_.emplace(name, v);
        return v;
    }

    // Accumulate tape adjoints into the store's gradient buffers.
    void harvest_grads() {
        for (auto& [name, var] : bound_) {
            const Tape::Node& node = tape_.nodes[var];
            if (!node.grad_alloc) continue;
            Tensor& g = store_.at(name).grad;
            for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += node.grad.v[i];
        }
    }

    Tape& tape() { return tape_; }

private:
    Tape& tape_;
    ParamStore& store_;
    std::map<std::string, Var> bound_;
};

// Two-layer perceptron (linear, SiLU, linear). Parameter names are
// "<prefix>.w0", "<prefix>.b0", "<prefix>.w1", "<prefix>.b1".
struct Mlp {
    std::string prefix;
    int in_dim = 0, hidden_dim = 0, out_dim = 0;

    static Mlp create(ParamStore& store, const std::string& prefix, int in_dim, int hidden_dim,
                      int out_dim, bool zero_final = false) {
        Mlp m{prefix, in_dim, hidden_dim, out_dim};
        store.create(prefix + ".w0", in_dim, hidden_dim, Init::KaimingUniform);
        store.create(prefix + ".b0", 1, hidden_dim, Init::Zero);
        store.create(prefix + ".w1", hidden_dim, out_dim,
                     zero_final ? Init::Zero : Init::KaimingUniform);
        store.create(prefix + ".b1", 1, out_dim, Init::Zero);
        return m;
    }

    Var apply(TapeBinding& tb, Var x) const {
        Tape& t = tb.tape();
        Var h = t.silu(t.linear(x, tb.use(prefix + ".w0"), tb.use(prefix + ".b0")));
        return t.linear(h, tb.use(prefix + ".w1"), tb.use(prefix + ".b1"));
    }
};

// Single linear map, names "<prefix>.w" / "<prefix>.b".
struct LinearMap {
    std::string prefix;
    int in_dim = 0, out_dim = 0;

    static LinearMap create(ParamStore& store, const std::string& prefix, int in_dim, int out_dim,
                            bool zero = false) {
        LinearMap m{prefix, in_dim, out_dim};
        store.create(prefix + ".w", in_dim, out_dim, zero ? Init::Zero : Init::KaimingUniform);
        store.create(prefix + ".b", 1, out_dim, Init::Zero);
        return m;
    }

    Var apply(TapeBinding& tb, Var x) const {
        return tb.tape().linear(x, tb.use(prefix + ".w"), tb.use(prefix + ".b"));
    }
};

}  // namespace blockfold::ad
