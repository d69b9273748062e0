#pragma once

// Reverse-mode autodiff over dense tensors. A Tape records the forward
// computation; backward() walks it in reverse and accumulates adjoints.
// Every operation the network needs is a tape op with a hand-written
// backward, each verified against central finite differences in the tests.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockfold/tensor.hpp"

namespace blockfold::ad {

using Var = int;

class Tape {
public:
    struct Node {
        Tensor val;
        Tensor grad;
        bool needs_grad = false;
        bool grad_alloc = false;
        std::function<void(Tape&)> back;
    };

    std::vector<Node> nodes;

    const Tensor& value(Var v) const { return nodes[v].val; }
    const Tensor& grad(Var v) const { return nodes[v].grad; }

    Var constant(Tensor t) {
        Node n;
        n.val = std::move(t);
        nodes.push_back(std::move(n));
        return static_cast<Var>(nodes.size()) - 1;
    }

    Var constant_scalar(double x) { return constant(Tensor::scalar(x)); }

    // Trainable leaf. The value is copied in; after backward() the adjoint is
    // read back through leaf_grad()/accumulate hooks by the caller.
    Var leaf(const Tensor& t) {
        Node n;
        n.val = t;
        n.needs_grad = true;
        nodes.push_back(std::move(n));
        return static_cast<Var>(nodes.size()) - 1;
    }

    // ---- elementwise binary ----

    Var add(Var a, Var b) { return binary(a, b, BinKind::Add); }
    Var sub(Var a, Var b) { return binary(a, b, BinKind::Sub); }
    Var mul(Var a, Var b) { return binary(a, b, BinKind::Mul); }
    Var div(Var a, Var b) { return binary(a, b, BinKind::Div); }

    // alpha * a + beta, elementwise
    Var affine(Var a, double alpha, double beta) {
        Tensor out = nodes[a].val;
        for (double& x : out.v) x = alpha * x + beta;
        return make(std::move(out), {a}, [a, alpha](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            if (!t.nodes[a].needs_grad) return;
            Tensor& ga = t.ensure_grad(a);
            for (std::size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += alpha * self.grad.v[i];
        });
    }

    Var scale(Var a, double alpha) { return affine(a, alpha, 0.0); }

    // ---- elementwise unary ----

    Var silu(Var a) { return unary(a, UnKind::Silu); }
    Var sigmoid(Var a) { return unary(a, UnKind::Sigmoid); }
    Var uexp(Var a) { return unary(a, UnKind::Exp); }
    Var usin(Var a) { return unary(a, UnKind::Sin); }
    Var ucos(Var a) { return unary(a, UnKind::Cos); }
    Var usqrt(Var a) { return unary(a, UnKind::Sqrt); }
    Var recip(Var a) { return unary(a, UnKind::Recip); }

    // ---- linear algebra ----

    Var matmul(Var a, Var b) {
        const Tensor& A = nodes[a].val;
        const Tensor& B = nodes[b].val;
        check(A.cols == B.rows, "matmul shape mismatch");
        Tensor out(A.rows, B.cols);
        gemm(A, B, out);
        return make(std::move(out), {a, b}, [a, b](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            const Tensor& A = t.nodes[a].val;
            const Tensor& B = t.nodes[b].val;
            const Tensor& G = self.grad;
            if (t.nodes[a].needs_grad) {
                Tensor& ga = t.ensure_grad(a);  // G * B^T
                for (int i = 0; i < A.rows; ++i)
                    for (int l = 0; l < A.cols; ++l) {
                        double s = 0.0;
                        const double* gr = G.row_ptr(i);
                        const double* br = B.row_ptr(l);
                        for (int j = 0; j < B.cols; ++j) s += gr[j] * br[j];
                        ga.at(i, l) += s;
                    }
            }
            if (t.nodes[b].needs_grad) {
                Tensor& gb = t.ensure_grad(b);  // A^T * G
                for (int i = 0; i < A.rows; ++i) {
                    const double* ar = A.row_ptr(i);
                    const double* gr = G.row_ptr(i);
                    for (int l = 0; l < A.cols; ++l) {
                        const double av = ar[l];
                        if (av == 0.0) continue;
                        double* gbr = gb.row_ptr(l);
                        for (int j = 0; j < B.cols; ++j) gbr[j] += av * gr[j];
                    }
                }
            }
        });
    }

    // x*w + bias broadcast over rows
    Var linear(Var x, Var w, Var b) {
        const Tensor& X = nodes[x].val;
        const Tensor& W = nodes[w].val;
        const Tensor& B = nodes[b].val;
        check(X.cols == W.rows && B.rows == 1 && B.cols == W.cols, "linear shape mismatch");
        Tensor out(X.rows, W.cols);
        gemm(X, W, out);
        for (int i = 0; i < out.rows; ++i) {
            double* r = out.row_ptr(i);
            for (int j = 0; j < out.cols; ++j) r[j] += B.v[j];
        }
        return make(std::move(out), {x, w, b}, [x, w, b](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            const Tensor& X = t.nodes[x].val;
            const Tensor& W = t.nodes[w].val;
            const Tensor& G = self.grad;
            if (t.nodes[x].needs_grad) {
                Tensor& gx = t.ensure_grad(x);
                for (int i = 0; i < X.rows; ++i)
                    for (int l = 0; l < X.cols; ++l) {
                        double s = 0.0;
                        const double* gr = G.row_ptr(i);
                        const double* wr = W.row_ptr(l);
                        for (int j = 0; j < W.cols; ++j) s += gr[j] * wr[j];
                        gx.at(i, l) += s;
                    }
            }
            if (t.nodes[w].needs_grad) {
                Tensor& gw = t.ensure_grad(w);
                for (int i = 0; i < X.rows; ++i) {
                    const double* xr = X.row_ptr(i);
                    const double* gr = G.row_ptr(i);
                    for (int l = 0; l < X.cols; ++l) {
                        const double xv = xr[l];
                        if (xv == 0.0) continue;
                        double* gwr = gw.row_ptr(l);
                        for (int j = 0; j < W.cols; ++j) gwr[j] += xv * gr[j];
                    }
                }
            }
            if (t.nodes[b].needs_grad) {
                Tensor& gb = t.ensure_grad(b);
                for (int i = 0; i < G.rows; ++i) {
                    const double* gr = G.row_ptr(i);
                    for (int j = 0; j < G.cols; ++j) gb.v[j] += gr[j];
                }
            }
        });
    }

    // ---- shape ops ----

    Var concat_cols(const std::vector<Var>& parts) {
        check(!parts.empty(), "concat_cols: empty");
        const int rows = nodes[parts[0]].val.rows;
        int cols = 0;
        for (Var p : parts) {
            check(nodes[p].val.rows == rows, "concat_cols: row mismatch");
            cols += nodes[p].val.cols;
        }
        Tensor out(rows, cols);
        int off = 0;
        for (Var p : parts) {
            const Tensor& t = nodes[p].val;
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < t.cols; ++j) out.at(i, off + j) = t.at(i, j);
            off += t.cols;
        }
        std::vector<Var> deps = parts;
        return make(std::move(out), deps, [parts](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            int off = 0;
            for (Var p : parts) {
                const int c = t.nodes[p].val.cols;
                if (t.nodes[p].needs_grad) {
                    Tensor& gp = t.ensure_grad(p);
                    for (int i = 0; i < gp.rows; ++i)
                        for (int j = 0; j < c; ++j) gp.at(i, j) += self.grad.at(i, off + j);
                }
                off += c;
            }
        });
    }

    Var concat_rows(const std::vector<Var>& parts) {
        check(!parts.empty(), "concat_rows: empty");
        const int cols = nodes[parts[0]].val.cols;
        int rows = 0;
        for (Var p : parts) {
            check(nodes[p].val.cols == cols, "concat_rows: col mismatch");
            rows += nodes[p].val.rows;
        }
        Tensor out(rows, cols);
        int off = 0;
        for (Var p : parts) {
            const Tensor& t = nodes[p].val;
            for (int i = 0; i < t.rows; ++i)
                for (int j = 0; j < cols; ++j) out.at(off + i, j) = t.at(i, j);
            off += t.rows;
        }
        std::vector<Var> deps = parts;
        return make(std::move(out), deps, [parts](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            int off = 0;
            for (Var p : parts) {
                const int r = t.nodes[p].val.rows;
                if (t.nodes[p].needs_grad) {
                    Tensor& gp = t.ensure_grad(p);
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < gp.cols; ++j) gp.at(i, j) += self.grad.at(off + i, j);
                }
                off += r;
            }
        });
    }

    Var slice_cols(Var a, int c0, int c1) {
        const Tensor& A = nodes[a].val;
        check(0 <= c0 && c0 < c1 && c1 <= A.cols, "slice_cols: bad range");
        Tensor out(A.rows, c1 - c0);
        for (int i = 0; i < A.rows; ++i)
            for (int j = c0; j < c1; ++j) out.at(i, j - c0) = A.at(i, j);
        return make(std::move(out), {a}, [a, c0](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            if (!t.nodes[a].needs_grad) return;
            Tensor& ga = t.ensure_grad(a);
            for (int i = 0; i < self.grad.rows; ++i)
                for (int j = 0; j < self.grad.cols; ++j) ga.at(i, c0 + j) += self.grad.at(i, j);
        });
    }

    Var gather_rows(Var a, std::vector<int> idx) {
        const Tensor& A = nodes[a].val;
        Tensor out(static_cast<int>(idx.size()), A.cols);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < A.cols; ++j) out.at(static_cast<int>(i), j) = A.at(idx[i], j);
        return make(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            if (!t.nodes[a].needs_grad) return;
            Tensor& ga = t.ensure_grad(a);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                const double* g = self.grad.row_ptr(static_cast<int>(i));
                double* dst = ga.row_ptr(idx[i]);
                for (int j = 0; j < ga.cols; ++j) dst[j] += g[j];
            }
        });
    }

    // out.row(seg[i]) += a.row(i)
    Var segment_sum(Var a, std::vector<int> seg, int n_segments) {
        const Tensor& A = nodes[a].val;
        check(static_cast<int>(seg.size()) == A.rows, "segment_sum: seg size mismatch");
        Tensor out(n_segments, A.cols);
        for (int i = 0; i < A.rows; ++i) {
            const double* src = A.row_ptr(i);
            double* dst = out.row_ptr(seg[i]);
            for (int j = 0; j < A.cols; ++j) dst[j] += src[j];
        }
        return make(std::move(out), {a}, [a, seg = std::move(seg)](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            if (!t.nodes[a].needs_grad) return;
            Tensor& ga = t.ensure_grad(a);
            for (int i = 0; i < ga.rows; ++i) {
                const double* g = self.grad.row_ptr(seg[i]);
                double* dst = ga.row_ptr(i);
                for (int j = 0; j < ga.cols; ++j) dst[j] += g[j];
            }
        });
    }

    // Softmax of per-row scores within segments (score is N x 1).
    Var segment_softmax(Var score, std::vector<int> seg, int n_segments) {
        const Tensor& S = nodes[score].val;
        check(S.cols == 1 && static_cast<int>(seg.size()) == S.rows, "segment_softmax: bad shapes");
        std::vector<double> seg_max(n_segments, -1e300);
        for (int i = 0; i < S.rows; ++i) seg_max[seg[i]] = std::max(seg_max[seg[i]], S.v[i]);
        Tensor out(S.rows, 1);
        std::vector<double> seg_sum(n_segments, 0.0);
        for (int i = 0; i < S.rows; ++i) {
            out.v[i] = std::exp(S.v[i] - seg_max[seg[i]]);
            seg_sum[seg[i]] += out.v[i];
        }
        for (int i = 0; i < S.rows; ++i) out.v[i] /= seg_sum[seg[i]];
        return make(std::move(out), {score}, [score, seg = std::move(seg), n_segments](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            if (!t.nodes[score].needs_grad) return;
            Tensor& gs = t.ensure_grad(score);
            std::vector<double> seg_dot(n_segments, 0.0);
            for (int i = 0; i < self.val.rows; ++i) seg_dot[seg[i]] += self.val.v[i] * self.grad.v[i];
            for (int i = 0; i < self.val.rows; ++i)
                gs.v[i] += self.val.v[i] * (self.grad.v[i] - seg_dot[seg[i]]);
        });
    }

    Var row_sum(Var a) {
        const Tensor& A = nodes[a].val;
        Tensor out(A.rows, 1);
        for (int i = 0; i < A.rows; ++i) {
            double s = 0.0;
            const double* r = A.row_ptr(i);
            for (int j = 0; j < A.cols; ++j) s += r[j];
            out.v[i] = s;
        }
        return make(std::move(out), {a}, [a](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            if (!t.nodes[a].needs_grad) return;
            Tensor& ga = t.ensure_grad(a);
            for (int i = 0; i < ga.rows; ++i) {
                const double g = self.grad.v[i];
                double* r = ga.row_ptr(i);
                for (int j = 0; j < ga.cols; ++j) r[j] += g;
            }
        });
    }

    // Euclidean norm per row with an epsilon inside the sqrt.
    Var row_norm(Var a, double eps2 = 1e-24) {
        const Tensor& A = nodes[a].val;
        Tensor out(A.rows, 1);
        for (int i = 0; i < A.rows; ++i) {
            double s = eps2;
            const double* r = A.row_ptr(i);
            for (int j = 0; j < A.cols; ++j) s += r[j] * r[j];
            out.v[i] = std::sqrt(s);
        }
        return make(std::move(out), {a}, [a](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            if (!t.nodes[a].needs_grad) return;
            Tensor& ga = t.ensure_grad(a);
            const Tensor& A = t.nodes[a].val;
            for (int i = 0; i < ga.rows; ++i) {
                const double g = self.grad.v[i] / self.val.v[i];
                const double* ar = A.row_ptr(i);
                double* r = ga.row_ptr(i);
                for (int j = 0; j < ga.cols; ++j) r[j] += g * ar[j];
            }
        });
    }

    // out(i, j) = a(i, j) * c(i)
    Var mul_col_broadcast(Var a, Var c) {
        const Tensor& A = nodes[a].val;
        const Tensor& C = nodes[c].val;
        check(C.cols == 1 && C.rows == A.rows, "mul_col_broadcast: bad shapes");
        Tensor out = A;
        for (int i = 0; i < A.rows; ++i) {
            double* r = out.row_ptr(i);
            for (int j = 0; j < A.cols; ++j) r[j] *= C.v[i];
        }
        return make(std::move(out), {a, c}, [a, c](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            const Tensor& A = t.nodes[a].val;
            const Tensor& C = t.nodes[c].val;
            if (t.nodes[a].needs_grad) {
                Tensor& ga = t.ensure_grad(a);
                for (int i = 0; i < ga.rows; ++i) {
                    const double* g = self.grad.row_ptr(i);
                    double* r = ga.row_ptr(i);
                    for (int j = 0; j < ga.cols; ++j) r[j] += g[j] * C.v[i];
                }
            }
            if (t.nodes[c].needs_grad) {
                Tensor& gc = t.ensure_grad(c);
                for (int i = 0; i < A.rows; ++i) {
                    const double* g = self.grad.row_ptr(i);
                    const double* ar = A.row_ptr(i);
                    double s = 0.0;
                    for (int j = 0; j < A.cols; ++j) s += g[j] * ar[j];
                    gc.v[i] += s;
                }
            }
        });
    }

    Var repeat_cols(Var a, int times) {
        const Tensor& A = nodes[a].val;
        Tensor out(A.rows, A.cols * times);
        for (int i = 0; i < A.rows; ++i)
            for (int t = 0; t < times; ++t)
                for (int j = 0; j < A.cols; ++j) out.at(i, t * A.cols + j) = A.at(i, j);
        return make(std::move(out), {a}, [a, times](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            if (!t.nodes[a].needs_grad) return;
            Tensor& ga = t.ensure_grad(a);
            for (int i = 0; i < ga.rows; ++i)
                for (int k = 0; k < times; ++k)
                    for (int j = 0; j < ga.cols; ++j) ga.at(i, j) += self.grad.at(i, k * ga.cols + j);
        });
    }

    // Multiply each row by a fixed scalar (dropout masks; mask is constant).
    Var row_scale_const(Var a, std::vector<double> scales) {
        const Tensor& A = nodes[a].val;
        check(static_cast<int>(scales.size()) == A.rows, "row_scale_const: bad mask size");
        Tensor out = A;
        for (int i = 0; i < A.rows; ++i) {
            double* r = out.row_ptr(i);
            for (int j = 0; j < A.cols; ++j) r[j] *= scales[i];
        }
        return make(std::move(out), {a}, [a, scales = std::move(scales)](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            if (!t.nodes[a].needs_grad) return;
            Tensor& ga = t.ensure_grad(a);
            for (int i = 0; i < ga.rows; ++i) {
                const double* g = self.grad.row_ptr(i);
                double* r = ga.row_ptr(i);
                for (int j = 0; j < ga.cols; ++j) r[j] += g[j] * scales[i];
            }
        });
    }

    Var sum_all(Var a) {
        const Tensor& A = nodes[a].val;
        double s = 0.0;
        for (double x : A.v) s += x;
        return make(Tensor::scalar(s), {a}, [a](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            if (!t.nodes[a].needs_grad) return;
            Tensor& ga = t.ensure_grad(a);
            const double g = self.grad.v[0];
            for (double& x : ga.v) x += g;
        });
    }

    // ---- per-row 3x3 rotation ops (rows hold row-major 3x3 blocks) ----

    // out row = A_row^T * B_row (both N x 9)
    Var rot_compose_t(Var a, Var b) {
        const Tensor& A = nodes[a].val;
        const Tensor& B = nodes[b].val;
        check(A.cols == 9 && B.cols == 9 && A.rows == B.rows, "rot_compose_t: bad shapes");
        Tensor out(A.rows, 9);
        for (int r = 0; r < A.rows; ++r) {
            const double* ra = A.row_ptr(r);
            const double* rb = B.row_ptr(r);
            double* ro = out.row_ptr(r);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    double s = 0.0;
                    for (int k = 0; k < 3; ++k) s += ra[3 * k + i] * rb[3 * k + j];
                    ro[3 * i + j] = s;
                }
        }
        return make(std::move(out), {a, b}, [a, b](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            const Tensor& A = t.nodes[a].val;
            const Tensor& B = t.nodes[b].val;
            for (int r = 0; r < A.rows; ++r) {
                const double* g = self.grad.row_ptr(r);
                if (t.nodes[a].needs_grad) {
                    double* ga = t.ensure_grad(a).row_ptr(r);  // dA = B * G^T
                    const double* rb = B.row_ptr(r);
                    for (int k = 0; k < 3; ++k)
                        for (int i = 0; i < 3; ++i) {
                            double s = 0.0;
                            for (int j = 0; j < 3; ++j) s += rb[3 * k + j] * g[3 * i + j];
                            ga[3 * k + i] += s;
                        }
                }
                if (t.nodes[b].needs_grad) {
                    double* gb = t.ensure_grad(b).row_ptr(r);  // dB = A * G
                    const double* ra = A.row_ptr(r);
                    for (int k = 0; k < 3; ++k)
                        for (int j = 0; j < 3; ++j) {
                            double s = 0.0;
                            for (int i = 0; i < 3; ++i) s += ra[3 * k + i] * g[3 * i + j];
                            gb[3 * k + j] += s;
                        }
                }
            }
        });
    }

    // Rotate m packed 3-vectors per row: out_j = R v_j (or R^T v_j).
    Var rot_apply(Var rot, Var vecs, bool transpose = false) {
        const Tensor& R = nodes[rot].val;
        const Tensor& V = nodes[vecs].val;
        check(R.cols == 9 && V.cols % 3 == 0 && R.rows == V.rows, "rot_apply: bad shapes");
        const int m = V.cols / 3;
        Tensor out(V.rows, V.cols);
        for (int r = 0; r < V.rows; ++r) {
            const double* rm = R.row_ptr(r);
            const double* rv = V.row_ptr(r);
            double* ro = out.row_ptr(r);
            for (int v = 0; v < m; ++v)
                for (int i = 0; i < 3; ++i) {
                    double s = 0.0;
                    for (int k = 0; k < 3; ++k) s += (transpose ? rm[3 * k + i] : rm[3 * i + k]) * rv[3 * v + k];
                    ro[3 * v + i] = s;
                }
        }
        return make(std::move(out), {rot, vecs}, [rot, vecs, m, transpose](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            const Tensor& R = t.nodes[rot].val;
            const Tensor& V = t.nodes[vecs].val;
            for (int r = 0; r < V.rows; ++r) {
                const double* g = self.grad.row_ptr(r);
                if (t.nodes[rot].needs_grad) {
                    double* gr = t.ensure_grad(rot).row_ptr(r);
                    const double* rv = V.row_ptr(r);
                    // y = R v: dR_ik += g_i v_k ; y = R^T v: dR_ki += v_k g_i
                    for (int v = 0; v < m; ++v)
                        for (int i = 0; i < 3; ++i)
                            for (int k = 0; k < 3; ++k) {
                                if (transpose)
                                    gr[3 * k + i] += rv[3 * v + k] * g[3 * v + i];
                                else
                                    gr[3 * i + k] += g[3 * v + i] * rv[3 * v + k];
                            }
                }
                if (t.nodes[vecs].needs_grad) {
                    double* gv = t.ensure_grad(vecs).row_ptr(r);
                    const double* rm = R.row_ptr(r);
                    for (int v = 0; v < m; ++v)
                        for (int k = 0; k < 3; ++k) {
                            double s = 0.0;
                            for (int i = 0; i < 3; ++i)
                                s += (transpose ? rm[3 * k + i] : rm[3 * i + k]) * g[3 * v + i];
                            gv[3 * v + k] += s;
                        }
                }
            }
        });
    }

    // Pairwise dots of packed 3-vectors: out(i, a*m_b + b) = u_a . w_b.
    Var gram_pairs(Var u, Var w) {
        const Tensor& U = nodes[u].val;
        const Tensor& W = nodes[w].val;
        check(U.cols % 3 == 0 && W.cols % 3 == 0 && U.rows == W.rows, "gram_pairs: bad shapes");
        const int ma = U.cols / 3, mb = W.cols / 3;
        Tensor out(U.rows, ma * mb);
        for (int r = 0; r < U.rows; ++r) {
            const double* ru = U.row_ptr(r);
            const double* rw = W.row_ptr(r);
            double* ro = out.row_ptr(r);
            for (int a = 0; a < ma; ++a)
                for (int b = 0; b < mb; ++b)
                    ro[a * mb + b] = ru[3 * a] * rw[3 * b] + ru[3 * a + 1] * rw[3 * b + 1] +
                                     ru[3 * a + 2] * rw[3 * b + 2];
        }
        return make(std::move(out), {u, w}, [u, w, ma, mb](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            const Tensor& U = t.nodes[u].val;
            const Tensor& W = t.nodes[w].val;
            for (int r = 0; r < U.rows; ++r) {
                const double* g = self.grad.row_ptr(r);
                if (t.nodes[u].needs_grad) {
                    double* gu = t.ensure_grad(u).row_ptr(r);
                    const double* rw = W.row_ptr(r);
                    for (int a = 0; a < ma; ++a)
                        for (int b = 0; b < mb; ++b)
                            for (int c = 0; c < 3; ++c) gu[3 * a + c] += g[a * mb + b] * rw[3 * b + c];
                }
                if (t.nodes[w].needs_grad) {
                    double* gw = t.ensure_grad(w).row_ptr(r);
                    const double* ru = U.row_ptr(r);
                    for (int a = 0; a < ma; ++a)
                        for (int b = 0; b < mb; ++b)
                            for (int c = 0; c < 3; ++c) gw[3 * b + c] += g[a * mb + b] * ru[3 * a + c];
                }
            }
        });
    }

    // Per-row cross product of 3-vectors.
    Var cross_rows(Var a, Var b) {
        const Tensor& A = nodes[a].val;
        const Tensor& B = nodes[b].val;
        check(A.cols == 3 && B.cols == 3 && A.rows == B.rows, "cross_rows: bad shapes");
        Tensor out(A.rows, 3);
        for (int i = 0; i < A.rows; ++i) {
            const double* u = A.row_ptr(i);
            const double* v = B.row_ptr(i);
            double* o = out.row_ptr(i);
            o[0] = u[1] * v[2] - u[2] * v[1];
            o[1] = u[2] * v[0] - u[0] * v[2];
            o[2] = u[0] * v[1] - u[1] * v[0];
        }
        return make(std::move(out), {a, b}, [a, b](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            const Tensor& A = t.nodes[a].val;
            const Tensor& B = t.nodes[b].val;
            for (int i = 0; i < A.rows; ++i) {
                const double* g = self.grad.row_ptr(i);
                const double* u = A.row_ptr(i);
                const double* v = B.row_ptr(i);
                if (t.nodes[a].needs_grad) {
                    double* ga = t.ensure_grad(a).row_ptr(i);  // da = b x g
                    ga[0] += v[1] * g[2] - v[2] * g[1];
                    ga[1] += v[2] * g[0] - v[0] * g[2];
                    ga[2] += v[0] * g[1] - v[1] * g[0];
                }
                if (t.nodes[b].needs_grad) {
                    double* gb = t.ensure_grad(b).row_ptr(i);  // db = g x a
                    gb[0] += g[1] * u[2] - g[2] * u[1];
                    gb[1] += g[2] * u[0] - g[0] * u[2];
                    gb[2] += g[0] * u[1] - g[1] * u[0];
                }
            }
        });
    }

    // Mean negative log-likelihood over unmasked rows; cached probabilities
    // give the classic softmax-minus-one-hot backward.
    Var softmax_cross_entropy(Var logits, std::vector<int> targets, std::vector<bool> mask) {
        const Tensor& L = nodes[logits].val;
        check(static_cast<int>(targets.size()) == L.rows && mask.size() == targets.size(),
              "softmax_cross_entropy: bad shapes");
        int m_count = 0;
        for (bool b : mask)
            if (b) ++m_count;
        check(m_count > 0, "softmax_cross_entropy: all positions masked");
        Tensor probs(L.rows, L.cols);
        double loss = 0.0;
        for (int i = 0; i < L.rows; ++i) {
            const double* r = L.row_ptr(i);
            double mx = r[0];
            for (int j = 1; j < L.cols; ++j) mx = std::max(mx, r[j]);
            double sum = 0.0;
            double* p = probs.row_ptr(i);
            for (int j = 0; j < L.cols; ++j) {
                p[j] = std::exp(r[j] - mx);
                sum += p[j];
            }
            for (int j = 0; j < L.cols; ++j) p[j] /= sum;
            if (mask[i]) loss += std::log(sum) + mx - r[targets[i]];
        }
        loss /= m_count;
        return make(Tensor::scalar(loss), {logits},
                    [logits, targets = std::move(targets), mask = std::move(mask), probs = std::move(probs),
                     m_count](Tape& t) {
                        Tape::Node& self = t.nodes[t.cursor_];
                        if (!t.nodes[logits].needs_grad) return;
                        Tensor& gl = t.ensure_grad(logits);
                        const double g = self.grad.v[0] / m_count;
                        for (int i = 0; i < gl.rows; ++i) {
                            if (!mask[i]) continue;
                            const double* p = probs.row_ptr(i);
                            double* gr = gl.row_ptr(i);
                            for (int j = 0; j < gl.cols; ++j) gr[j] += g * p[j];
                            gr[targets[i]] -= g;
                        }
                    });
    }

    // ---- driver ----

    void backward(Var loss) {
        check(nodes[loss].val.rows == 1 && nodes[loss].val.cols == 1, "backward: loss must be scalar");
        check(nodes[loss].needs_grad, "backward: loss does not depend on any leaf");
        ensure_grad(loss).v[0] = 1.0;
        for (int i = loss; i >= 0; --i) {
            Node& n = nodes[i];
            if (!n.needs_grad || !n.grad_alloc || !n.back) continue;
            cursor_ = i;
            n.back(*this);
        }
    }

    Tensor& ensure_grad(Var v) {
        Node& n = nodes[v];
        if (!n.grad_alloc) {
            n.grad = Tensor::zeros(n.val.rows, n.val.cols);
            n.grad_alloc = true;
        }
        return n.grad;
    }

private:
    enum class BinKind { Add, Sub, Mul, Div };
    enum class UnKind { Silu, Sigmoid, Exp, Sin, Cos, Sqrt, Recip };

    int cursor_ = -1;

    static void check(bool ok, const char* msg) {
        if (!ok) throw std::logic_error(std::string("tape: ") + msg);
    }

    static void gemm(const Tensor& A, const Tensor& B, Tensor& C) {
        for (int i = 0; i < A.rows; ++i) {
            const double* ar = A.row_ptr(i);
            double* cr = C.row_ptr(i);
            for (int l = 0; l < A.cols; ++l) {
                const double a = ar[l];
                if (a == 0.0) continue;
                const double* br = B.row_ptr(l);
                for (int j = 0; j < B.cols; ++j) cr[j] += a * br[j];
            }
        }
    }

    Var make(Tensor value, const std::vector<Var>& deps, std::function<void(Tape&)> back) {
        Node n;
        n.val = std::move(value);
        for (Var d : deps)
            if (nodes[d].needs_grad) n.needs_grad = true;
        if (n.needs_grad) n.back = std::move(back);
        nodes.push_back(std::move(n));
        return static_cast<Var>(nodes.size()) - 1;
    }

    Var binary(Var a, Var b, BinKind kind) {
        const Tensor& A = nodes[a].val;
        const Tensor& B = nodes[b].val;
        check(A.same_shape(B), "elementwise: shape mismatch");
        Tensor out(A.rows, A.cols);
        for (std::size_t i = 0; i < out.v.size(); ++i) {
            switch (kind) {
                case BinKind::Add: out.v[i] = A.v[i] + B.v[i]; break;
                case BinKind::Sub: out.v[i] = A.v[i] - B.v[i]; break;
                case BinKind::Mul: out.v[i] = A.v[i] * B.v[i]; break;
                case BinKind::Div: out.v[i] = A.v[i] / B.v[i]; break;
            }
        }
        return make(std::move(out), {a, b}, [a, b, kind](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            const Tensor& A = t.nodes[a].val;
            const Tensor& B = t.nodes[b].val;
            const Tensor& G = self.grad;
            if (t.nodes[a].needs_grad) {
                Tensor& ga = t.ensure_grad(a);
                for (std::size_t i = 0; i < ga.v.size(); ++i) {
                    switch (kind) {
                        case BinKind::Add:
                        case BinKind::Sub: ga.v[i] += G.v[i]; break;
                        case BinKind::Mul: ga.v[i] += G.v[i] * B.v[i]; break;
                        case BinKind::Div: ga.v[i] += G.v[i] / B.v[i]; break;
                    }
                }
            }
            if (t.nodes[b].needs_grad) {
                Tensor& gb = t.ensure_grad(b);
                for (std::size_t i = 0; i < gb.v.size(); ++i) {
                    switch (kind) {
                        case BinKind::Add: gb.v[i] += G.v[i]; break;
                        case BinKind::Sub: gb.v[i] -= G.v[i]; break;
                        case BinKind::Mul: gb.v[i] += G.v[i] * A.v[i]; break;
                        case BinKind::Div: gb.v[i] -= G.v[i] * A.v[i] / (B.v[i] * B.v[i]); break;
                    }
                }
            }
        });
    }

    Var unary(Var a, UnKind kind) {
        const Tensor& A = nodes[a].val;
        Tensor out(A.rows, A.cols);
        for (std::size_t i = 0; i < out.v.size(); ++i) {
            const double x = A.v[i];
            switch (kind) {
                case UnKind::Silu: out.v[i] = x / (1.0 + std::exp(-x)); break;
                case UnKind::Sigmoid: out.v[i] = 1.0 / (1.0 + std::exp(-x)); break;
                case UnKind::Exp: out.v[i] = std::exp(x); break;
                case UnKind::Sin: out.v[i] = std::sin(x); break;
                case UnKind::Cos: out.v[i] = std::cos(x); break;
                case UnKind::Sqrt: out.v[i] = std::sqrt(x); break;
                case UnKind::Recip: out.v[i] = 1.0 / x; break;
            }
        }
        return make(std::move(out), {a}, [a, kind](Tape& t) {
            Tape::Node& self = t.nodes[t.cursor_];
            if (!t.nodes[a].needs_grad) return;
            Tensor& ga = t.ensure_grad(a);
            const Tensor& A = t.nodes[a].val;
            for (std::size_t i = 0; i < ga.v.size(); ++i) {
                const double x = A.v[i];
                const double y = self.val.v[i];
                double d = 0.0;
                switch (kind) {
                    case UnKind::Silu: {
                        const double s = 1.0 / (1.0 + std::exp(-x));
                        d = s * (1.0 + x * (1.0 - s));
                        break;
                    }
                    case UnKind::Sigmoid: d = y * (1.0 - y); break;
                    case UnKind::Exp: d = y; break;
                    case UnKind::Sin: d = std::cos(x); break;
                    case UnKind::Cos: d = -std::sin(x); break;
                    case UnKind::Sqrt: d = 0.5 / y; break;
                    case UnKind::Recip: d = -y * y; break;
                }
                ga.v[i] += self.grad.v[i] * d;
            }
        });
    }
};

}  // namespace blockfold::ad
