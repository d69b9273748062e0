#include <catch2/catch_amalgamated.hpp>

#include <functional>

#include "blockfold/params.hpp"
#include "blockfold/rng.hpp"
#include "blockfold/tape.hpp"

using namespace blockfold;
using namespace blockfold::ad;

namespace {

Tensor random_tensor(Rng& rng, int r, int c, double scale = 1.0) {
    Tensor t(r, c);
    for (double& x : t.v) x = rng.uniform(-scale, scale);
    return t;
}

// Reduce an arbitrary output to a scalar with fixed random weights so every
// output component participates in the gradient.
Var weighted_scalar(Tape& t, Var out, Rng& rng) {
    const Tensor& o = t.value(out);
    Tensor w(o.rows, o.cols);
    for (double& x : w.v) x = rng.uniform(-1.0, 1.0);
    return t.sum_all(t.mul(out, t.constant(std::move(w))));
}

// Central finite differences on every element of every input, against the
// tape's reverse-mode gradient.
void check_op(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
              std::vector<Tensor> inputs, double tol = 1e-7, double step = 1e-5) {
    Rng wrng(999);
    auto eval = [&](const std::vector<Tensor>& ins, std::vector<Tensor>* grads) {
        Tape tape;
        Rng local(999);
        std::vector<Var> vars;
        for (const Tensor& t : ins) vars.push_back(tape.leaf(t));
        Var out = build(tape, vars);
        Var scalar = weighted_scalar(tape, out, local);
        if (grads) {
            tape.backward(scalar);
            grads->clear();
            for (Var v : vars) {
                grads->push_back(tape.nodes[v].grad_alloc ? tape.grad(v)
                                                          : Tensor::zeros(tape.value(v).rows, tape.value(v).cols));
            }
        }
        return tape.value(scalar).v[0];
    };

    std::vector<Tensor> analytic;
    eval(inputs, &analytic);

    for (std::size_t n = 0; n < inputs.size(); ++n) {
        for (std::size_t i = 0; i < inputs[n].v.size(); ++i) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[n].v[i] += step;
            minus[n].v[i] -= step;
            const double fd = (eval(plus, nullptr) - eval(minus, nullptr)) / (2.0 * step);
            const double an = analytic[n].v[i];
            const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
            INFO("input " << n << " element " << i << " fd=" << fd << " an=" << an);
            CHECK(std::abs(fd - an) / denom < tol);
        }
    }
}

}  // namespace

TEST_CASE("elementwise binary ops") {
    Rng rng(1);
    for (auto kind : {0, 1, 2, 3}) {
        Tensor a = random_tensor(rng, 3, 4);
        Tensor b = random_tensor(rng, 3, 4);
        if (kind == 3)
            for (double& x : b.v) x += (x >= 0 ? 1.5 : -1.5);  // keep divisors away from 0
        check_op(
            [kind](Tape& t, const std::vector<Var>& v) {
                switch (kind) {
                    case 0: return t.add(v[0], v[1]);
                    case 1: return t.sub(v[0], v[1]);
                    case 2: return t.mul(v[0], v[1]);
                    default: return t.div(v[0], v[1]);
                }
            },
            {a, b});
    }
}

TEST_CASE("unary ops") {
    Rng rng(2);
    Tensor a = random_tensor(rng, 4, 3);
    check_op([](Tape& t, const std::vector<Var>& v) { return t.silu(v[0]); }, {a});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.sigmoid(v[0]); }, {a});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.uexp(v[0]); }, {a});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.usin(v[0]); }, {a});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.ucos(v[0]); }, {a});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.affine(v[0], -1.7, 0.3); }, {a});

    Tensor pos(3, 3);
    for (double& x : pos.v) x = rng.uniform(0.5, 3.0);
    check_op([](Tape& t, const std::vector<Var>& v) { return t.usqrt(v[0]); }, {pos});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.recip(v[0]); }, {pos});
}

TEST_CASE("matmul and linear") {
    Rng rng(3);
    check_op([](Tape& t, const std::vector<Var>& v) { return t.matmul(v[0], v[1]); },
             {random_tensor(rng, 3, 5), random_tensor(rng, 5, 2)});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.linear(v[0], v[1], v[2]); },
             {random_tensor(rng, 4, 3), random_tensor(rng, 3, 6), random_tensor(rng, 1, 6)});
}

TEST_CASE("shape ops") {
    Rng rng(4);
    check_op([](Tape& t, const std::vector<Var>& v) { return t.concat_cols({v[0], v[1], v[2]}); },
             {random_tensor(rng, 3, 2), random_tensor(rng, 3, 1), random_tensor(rng, 3, 4)});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.concat_rows({v[0], v[1]}); },
             {random_tensor(rng, 2, 3), random_tensor(rng, 4, 3)});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.slice_cols(v[0], 1, 4); },
             {random_tensor(rng, 3, 5)});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.gather_rows(v[0], {2, 0, 2, 1}); },
             {random_tensor(rng, 3, 4)});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.repeat_cols(v[0], 3); },
             {random_tensor(rng, 2, 3)});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.row_sum(v[0]); },
             {random_tensor(rng, 4, 5)});
}

TEST_CASE("segment ops") {
    Rng rng(5);
    std::vector<int> seg = {0, 0, 1, 2, 2, 2};
    check_op([&](Tape& t, const std::vector<Var>& v) { return t.segment_sum(v[0], seg, 3); },
             {random_tensor(rng, 6, 4)});
    check_op([&](Tape& t, const std::vector<Var>& v) { return t.segment_softmax(v[0], seg, 3); },
             {random_tensor(rng, 6, 1, 2.0)});

    // softmax weights sum to one per segment
    Tape tape;
    Var s = tape.constant(random_tensor(rng, 6, 1, 3.0));
    Var sm = tape.segment_softmax(s, seg, 3);
    std::vector<double> sums(3, 0.0);
    for (int i = 0; i < 6; ++i) sums[seg[i]] += tape.value(sm).v[i];
    for (double x : sums) CHECK(std::abs(x - 1.0) < 1e-12);
}

TEST_CASE("broadcast and mask ops") {
    Rng rng(6);
    check_op([](Tape& t, const std::vector<Var>& v) { return t.mul_col_broadcast(v[0], v[1]); },
             {random_tensor(rng, 4, 3), random_tensor(rng, 4, 1)});
    check_op([](Tape& t, const std::vector<Var>& v) {
                 return t.row_scale_const(v[0], {0.0, 2.0, 1.0, 0.5});
             },
             {random_tensor(rng, 4, 3)});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.row_norm(v[0]); },
             {random_tensor(rng, 5, 3)});
}

TEST_CASE("rotation ops") {
    Rng rng(7);
    check_op([](Tape& t, const std::vector<Var>& v) { return t.rot_compose_t(v[0], v[1]); },
             {random_tensor(rng, 3, 9), random_tensor(rng, 3, 9)});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.rot_apply(v[0], v[1], false); },
             {random_tensor(rng, 3, 9), random_tensor(rng, 3, 6)});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.rot_apply(v[0], v[1], true); },
             {random_tensor(rng, 3, 9), random_tensor(rng, 3, 6)});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.gram_pairs(v[0], v[1]); },
             {random_tensor(rng, 2, 6), random_tensor(rng, 2, 9)});
    check_op([](Tape& t, const std::vector<Var>& v) { return t.cross_rows(v[0], v[1]); },
             {random_tensor(rng, 4, 3), random_tensor(rng, 4, 3)});
}

TEST_CASE("rot_compose_t value matches dense 3x3 product") {
    Rng rng(8);
    Tensor a = random_tensor(rng, 1, 9), b = random_tensor(rng, 1, 9);
    Tape t;
    Var c = t.rot_compose_t(t.constant(a), t.constant(b));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double expect = 0.0;
            for (int k = 0; k < 3; ++k) expect += a.v[3 * k + i] * b.v[3 * k + j];
            CHECK(t.value(c).v[3 * i + j] == Catch::Approx(expect).margin(1e-14));
        }
}

TEST_CASE("softmax cross entropy gradient and value") {
    Rng rng(9);
    Tensor logits = random_tensor(rng, 5, 4, 2.0);
    std::vector<int> targets = {1, 0, 3, 2, 1};
    std::vector<bool> mask = {true, true, false, true, true};

    check_op([&](Tape& t, const std::vector<Var>& v) {
                 return t.softmax_cross_entropy(v[0], targets, mask);
             },
             {logits}, 1e-7);

    // uniform logits -> ln C
    Tape t;
    Var l = t.constant(Tensor::filled(3, 20, 0.25));
    Var loss = t.softmax_cross_entropy(l, {0, 5, 19}, {true, true, true});
    CHECK(std::abs(t.value(loss).v[0] - std::log(20.0)) < 1e-12);
}

TEST_CASE("composite chain: mlp through geometry ops") {
    Rng rng(10);
    // exercise a long mixed chain the way the network does
    check_op(
        [](Tape& t, const std::vector<Var>& v) {
            Var h = t.silu(t.linear(v[0], v[1], v[2]));
            Var n = t.row_norm(h);
            Var w = t.segment_softmax(n, {0, 0, 1, 1}, 2);
            Var s = t.mul_col_broadcast(h, w);
            return t.segment_sum(s, {0, 0, 1, 1}, 2);
        },
        {random_tensor(rng, 4, 3), random_tensor(rng, 3, 6), random_tensor(rng, 1, 6)}, 1e-6);
}

TEST_CASE("param store: deterministic init and binding") {
    ParamStore a(42), b(42);
    Mlp::create(a, "m", 4, 8, 2);
    Mlp::create(b, "m", 4, 8, 2);
    CHECK(a.parameter_count() == 4 * 8 + 8 + 8 * 2 + 2);
    CHECK(max_abs_diff(a.at("m.w0").value, b.at("m.w0").value) == 0.0);

    ParamStore c(43);
    Mlp::create(c, "m", 4, 8, 2);
    CHECK(max_abs_diff(a.at("m.w0").value, c.at("m.w0").value) > 0.0);

    // zero-final option
    ParamStore z(1);
    Mlp::create(z, "zf", 4, 8, 2, /*zero_final=*/true);
    for (double x : z.at("zf.w1").value.v) CHECK(x == 0.0);

    // harvest accumulates adjoints into grad buffers
    Rng rng(12);
    Tape tape;
    TapeBinding tb(tape, a);
    Mlp m{"m", 4, 8, 2};
    Tensor x = random_tensor(rng, 3, 4);
    Var out = m.apply(tb, tape.constant(x));
    Var loss = tape.sum_all(out);
    tape.backward(loss);
    tb.harvest_grads();
    double gsum = 0.0;
    for (double g : a.at("m.w0").grad.v) gsum += std::abs(g);
    CHECK(gsum > 0.0);
}
