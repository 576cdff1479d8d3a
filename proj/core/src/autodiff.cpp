#include "patrec/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "patrec/errors.hpp"

namespace patrec {

namespace {

using json = nlohmann::ordered_json;

std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.shape.size() != 2)
        throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t));
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                     shape_str(b));
}

// Broadcast classes accepted by add/mul for the second operand.
enum class Bcast { same, row, col, scalar };

Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    require_matrix(a, op);
    require_matrix(b, op);
    if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::same;
    if (b.rows() == 1 && b.cols() == 1) return Bcast::scalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::row;
    if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::col;
    shape_fail(op, a, b);
}

size_t bindex(Bcast k, size_t r, size_t c, size_t cols) {
    switch (k) {
        case Bcast::same: return r * cols + c;
        case Bcast::row: return c;
        case Bcast::col: return r;
        case Bcast::scalar: return 0;
    }
    return 0;
}

}  // namespace

Tensor Tensor::from(std::vector<double> data, size_t rows, size_t cols) {
    if (data.size() != rows * cols)
        throw ShapeError("Tensor::from: " + std::to_string(data.size()) + " values for " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    Tensor t;
    t.shape = {rows, cols};
    t.values = std::move(data);
    return t;
}

Tensor Tensor::row(std::vector<double> data) {
    size_t n = data.size();
    return from(std::move(data), 1, n);
}

Tensor gaussian_tensor(size_t rows, size_t cols, double stddev, SplitMix64& rng) {
    Tensor t(rows, cols);
    for (auto& v : t.values) v = stddev * rng.next_gaussian();
    return t;
}

const Tensor& Var::value() const { return tape->nodes_[node].value; }
const Tensor& Var::grad() const { return tape->nodes_[node].grad; }

Var make_node(Tape& tape, Tensor value, const std::vector<Var>& inputs,
              std::function<void(Tape&, int)> backprop) {
    Tape::Node node;
    node.requires_grad = false;
    for (const auto& in : inputs) {
        if (in.tape != &tape) throw ContractError("op inputs must live on one tape");
        if (tape.nodes_[in.node].requires_grad) node.requires_grad = true;
    }
    if (node.requires_grad) {
        node.grad = Tensor(value.rows(), value.cols());
        node.backprop = std::move(backprop);
    }
    node.value = std::move(value);
    tape.nodes_.push_back(std::move(node));
    return Var{&tape, static_cast<int>(tape.nodes_.size()) - 1};
}

SplitMix64& tape_rng(Tape& tape) { return tape.rng_; }
void mark_stochastic(Tape& tape) { tape.stochastic_ = true; }

Var Tape::input(Tensor value, bool requires_grad) {
    require_matrix(value, "input");
    Node node;
    node.requires_grad = requires_grad;
    if (requires_grad) node.grad = Tensor(value.rows(), value.cols());
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var loss) {
    if (!loss.valid() || loss.tape != this) throw ContractError("backward: loss not on this tape");
    if (backward_done_) throw ContractError("backward: tape already differentiated");
    backward_done_ = true;
    Node& top = nodes_[loss.node];
    if (top.value.size() != 1)
        throw ContractError("backward: loss must be scalar, got " + shape_str(top.value));
    if (!top.requires_grad) return;  // nothing trainable feeds the loss
    top.grad.values[0] = 1.0;
    for (int i = loss.node; i >= 0; --i)
        if (nodes_[i].requires_grad && nodes_[i].backprop) nodes_[i].backprop(*this, i);
}

namespace {

Tensor& grad_of(Tape& tape, Var v) {
    // Private access via friend make_node is not available here; grads are
    // reached through the public handle instead.
    return const_cast<Tensor&>(v.grad());
}

bool needs_grad(Var v) { return !v.grad().values.empty(); }

}  // namespace

Var matmul(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "matmul");
    require_matrix(B, "matmul");
    if (A.cols() != B.rows()) shape_fail("matmul", A, B);
    size_t R = A.rows(), K = A.cols(), C = B.cols();
    Tensor out(R, C);
    for (size_t i = 0; i < R; ++i)
        for (size_t k = 0; k < K; ++k) {
            double av = A.values[i * K + k];
            if (av == 0.0) continue;
            const double* brow = &B.values[k * C];
            double* orow = &out.values[i * C];
            for (size_t j = 0; j < C; ++j) orow[j] += av * brow[j];
        }
    return make_node(*a.tape, std::move(out), {a, b}, [a, b, R, K, C](Tape& t, int self) {
        const Tensor& dC = t.node_grad(self);
        const Tensor& A2 = a.value();
        const Tensor& B2 = b.value();
        if (needs_grad(a)) {
            Tensor& dA = grad_of(t, a);
            for (size_t i = 0; i < R; ++i)
                for (size_t j = 0; j < C; ++j) {
                    double g = dC.values[i * C + j];
                    if (g == 0.0) continue;
                    for (size_t k = 0; k < K; ++k) dA.values[i * K + k] += g * B2.values[k * C + j];
                }
        }
        if (needs_grad(b)) {
            Tensor& dB = grad_of(t, b);
            for (size_t i = 0; i < R; ++i)
                for (size_t k = 0; k < K; ++k) {
                    double av = A2.values[i * K + k];
                    if (av == 0.0) continue;
                    for (size_t j = 0; j < C; ++j) dB.values[k * C + j] += av * dC.values[i * C + j];
                }
        }
    });
}

Var matmul_nt(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "matmul_nt");
    require_matrix(B, "matmul_nt");
    if (A.cols() != B.cols()) shape_fail("matmul_nt", A, B);
    size_t R = A.rows(), K = A.cols(), C = B.rows();
    Tensor out(R, C);
    for (size_t i = 0; i < R; ++i)
        for (size_t j = 0; j < C; ++j) {
            double acc = 0.0;
            const double* arow = &A.values[i * K];
            const double* brow = &B.values[j * K];
            for (size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
            out.values[i * C + j] = acc;
        }
    return make_node(*a.tape, std::move(out), {a, b}, [a, b, R, K, C](Tape& t, int self) {
        const Tensor& dC = t.node_grad(self);
        const Tensor& A2 = a.value();
        const Tensor& B2 = b.value();
        if (needs_grad(a)) {
            Tensor& dA = grad_of(t, a);
            for (size_t i = 0; i < R; ++i)
                for (size_t j = 0; j < C; ++j) {
                    double g = dC.values[i * C + j];
                    if (g == 0.0) continue;
                    for (size_t k = 0; k < K; ++k) dA.values[i * K + k] += g * B2.values[j * K + k];
                }
        }
        if (needs_grad(b)) {
            Tensor& dB = grad_of(t, b);
            for (size_t i = 0; i < R; ++i)
                for (size_t j = 0; j < C; ++j) {
                    double g = dC.values[i * C + j];
                    if (g == 0.0) continue;
                    for (size_t k = 0; k < K; ++k) dB.values[j * K + k] += g * A2.values[i * K + k];
                }
        }
    });
}

Var matmul_tn(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix(A, "matmul_tn");
    require_matrix(B, "matmul_tn");
    if (A.rows() != B.rows()) shape_fail("matmul_tn", A, B);
    size_t K = A.rows(), R = A.cols(), C = B.cols();
    Tensor out(R, C);
    for (size_t k = 0; k < K; ++k)
        for (size_t i = 0; i < R; ++i) {
            double av = A.values[k * R + i];
            if (av == 0.0) continue;
            for (size_t j = 0; j < C; ++j) out.values[i * C + j] += av * B.values[k * C + j];
        }
    return make_node(*a.tape, std::move(out), {a, b}, [a, b, R, K, C](Tape& t, int self) {
        const Tensor& dC = t.node_grad(self);
        const Tensor& A2 = a.value();
        const Tensor& B2 = b.value();
        if (needs_grad(a)) {
            Tensor& dA = grad_of(t, a);
            for (size_t k = 0; k < K; ++k)
                for (size_t i = 0; i < R; ++i) {
                    double acc = 0.0;
                    for (size_t j = 0; j < C; ++j)
                        acc += B2.values[k * C + j] * dC.values[i * C + j];
                    dA.values[k * R + i] += acc;
                }
        }
        if (needs_grad(b)) {
            Tensor& dB = grad_of(t, b);
            for (size_t k = 0; k < K; ++k)
                for (size_t j = 0; j < C; ++j) {
                    double acc = 0.0;
                    for (size_t i = 0; i < R; ++i)
                        acc += A2.values[k * R + i] * dC.values[i * C + j];
                    dB.values[k * C + j] += acc;
                }
        }
    });
}

Var add(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    Bcast kind = bcast_kind(A, B, "add");
    Tensor out = A;
    size_t C = A.cols();
    for (size_t r = 0; r < A.rows(); ++r)
        for (size_t c = 0; c < C; ++c) out.values[r * C + c] += B.values[bindex(kind, r, c, C)];
    return make_node(*a.tape, std::move(out), {a, b}, [a, b, kind](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        size_t C = dY.cols();
        if (needs_grad(a)) {
            Tensor& dA = grad_of(t, a);
            for (size_t i = 0; i < dY.size(); ++i) dA.values[i] += dY.values[i];
        }
        if (needs_grad(b)) {
            Tensor& dB = grad_of(t, b);
            for (size_t r = 0; r < dY.rows(); ++r)
                for (size_t c = 0; c < C; ++c)
                    dB.values[bindex(kind, r, c, C)] += dY.values[r * C + c];
        }
    });
}

Var mul(Var a, Var b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    Bcast kind = bcast_kind(A, B, "mul");
    Tensor out = A;
    size_t C = A.cols();
    for (size_t r = 0; r < A.rows(); ++r)
        for (size_t c = 0; c < C; ++c) out.values[r * C + c] *= B.values[bindex(kind, r, c, C)];
    return make_node(*a.tape, std::move(out), {a, b}, [a, b, kind](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        const Tensor& A2 = a.value();
        const Tensor& B2 = b.value();
        size_t C = dY.cols();
        if (needs_grad(a)) {
            Tensor& dA = grad_of(t, a);
            for (size_t r = 0; r < dY.rows(); ++r)
                for (size_t c = 0; c < C; ++c)
                    dA.values[r * C + c] += dY.values[r * C + c] * B2.values[bindex(kind, r, c, C)];
        }
        if (needs_grad(b)) {
            Tensor& dB = grad_of(t, b);
            for (size_t r = 0; r < dY.rows(); ++r)
                for (size_t c = 0; c < C; ++c)
                    dB.values[bindex(kind, r, c, C)] += dY.values[r * C + c] * A2.values[r * C + c];
        }
    });
}

Var scale(Var a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.values) v *= factor;
    return make_node(*a.tape, std::move(out), {a}, [a, factor](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        if (!needs_grad(a)) return;
        Tensor& dA = grad_of(t, a);
        for (size_t i = 0; i < dY.size(); ++i) dA.values[i] += factor * dY.values[i];
    });
}

Var add_const(Var a, double constant) {
    Tensor out = a.value();
    for (auto& v : out.values) v += constant;
    return make_node(*a.tape, std::move(out), {a}, [a](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        if (!needs_grad(a)) return;
        Tensor& dA = grad_of(t, a);
        for (size_t i = 0; i < dY.size(); ++i) dA.values[i] += dY.values[i];
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    size_t C = parts[0].value().cols(), R = 0;
    for (const auto& p : parts) {
        require_matrix(p.value(), "concat_rows");
        if (p.value().cols() != C) shape_fail("concat_rows", parts[0].value(), p.value());
        R += p.value().rows();
    }
    Tensor out(R, C);
    size_t r0 = 0;
    for (const auto& p : parts) {
        std::copy(p.value().values.begin(), p.value().values.end(), out.values.begin() + r0 * C);
        r0 += p.value().rows();
    }
    return make_node(*parts[0].tape, std::move(out), parts, [parts, C](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        size_t r0 = 0;
        for (const auto& p : parts) {
            size_t rows = p.value().rows();
            if (needs_grad(p)) {
                Tensor& dP = grad_of(t, p);
                for (size_t i = 0; i < rows * C; ++i) dP.values[i] += dY.values[r0 * C + i];
            }
            r0 += rows;
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    size_t R = parts[0].value().rows(), C = 0;
    for (const auto& p : parts) {
        require_matrix(p.value(), "concat_cols");
        if (p.value().rows() != R) shape_fail("concat_cols", parts[0].value(), p.value());
        C += p.value().cols();
    }
    Tensor out(R, C);
    size_t c0 = 0;
    for (const auto& p : parts) {
        size_t pc = p.value().cols();
        for (size_t r = 0; r < R; ++r)
            std::copy(p.value().values.begin() + r * pc, p.value().values.begin() + (r + 1) * pc,
                      out.values.begin() + r * C + c0);
        c0 += pc;
    }
    return make_node(*parts[0].tape, std::move(out), parts, [parts, R, C](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        size_t c0 = 0;
        for (const auto& p : parts) {
            size_t pc = p.value().cols();
            if (needs_grad(p)) {
                Tensor& dP = grad_of(t, p);
                for (size_t r = 0; r < R; ++r)
                    for (size_t c = 0; c < pc; ++c)
                        dP.values[r * pc + c] += dY.values[r * C + c0 + c];
            }
            c0 += pc;
        }
    });
}

Var slice_rows(Var a, size_t begin, size_t end) {
    const Tensor& A = a.value();
    require_matrix(A, "slice_rows");
    if (begin > end || end > A.rows())
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " + shape_str(A));
    size_t C = A.cols();
    Tensor out(end - begin, C);
    std::copy(A.values.begin() + begin * C, A.values.begin() + end * C, out.values.begin());
    return make_node(*a.tape, std::move(out), {a}, [a, begin, C](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        if (!needs_grad(a)) return;
        Tensor& dA = grad_of(t, a);
        for (size_t i = 0; i < dY.size(); ++i) dA.values[begin * C + i] += dY.values[i];
    });
}

Var slice_cols(Var a, size_t begin, size_t end) {
    const Tensor& A = a.value();
    require_matrix(A, "slice_cols");
    if (begin > end || end > A.cols())
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " + shape_str(A));
    size_t C = A.cols(), W = end - begin;
    Tensor out(A.rows(), W);
    for (size_t r = 0; r < A.rows(); ++r)
        std::copy(A.values.begin() + r * C + begin, A.values.begin() + r * C + end,
                  out.values.begin() + r * W);
    return make_node(*a.tape, std::move(out), {a}, [a, begin, C, W](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        if (!needs_grad(a)) return;
        Tensor& dA = grad_of(t, a);
        for (size_t r = 0; r < dY.rows(); ++r)
            for (size_t c = 0; c < W; ++c) dA.values[r * C + begin + c] += dY.values[r * W + c];
    });
}

Var gather_rows(Var table, const std::vector<int>& indices) {
    const Tensor& T = table.value();
    require_matrix(T, "gather_rows");
    size_t C = T.cols();
    Tensor out(indices.size(), C);
    for (size_t r = 0; r < indices.size(); ++r) {
        int idx = indices[r];
        if (idx < 0 || static_cast<size_t>(idx) >= T.rows())
            throw InputError("gather_rows: index " + std::to_string(idx) + " outside " +
                             shape_str(T));
        std::copy(T.values.begin() + idx * C, T.values.begin() + (idx + 1) * C,
                  out.values.begin() + r * C);
    }
    return make_node(*table.tape, std::move(out), {table}, [table, indices, C](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        if (!needs_grad(table)) return;
        Tensor& dT = grad_of(t, table);
        for (size_t r = 0; r < indices.size(); ++r)
            for (size_t c = 0; c < C; ++c)
                dT.values[indices[r] * C + c] += dY.values[r * C + c];
    });
}

Var reshape(Var a, size_t rows, size_t cols) {
    const Tensor& A = a.value();
    if (rows * cols != A.size())
        throw ShapeError("reshape: cannot view " + shape_str(A) + " as " + std::to_string(rows) +
                         "x" + std::to_string(cols));
    Tensor out = A;
    out.shape = {rows, cols};
    return make_node(*a.tape, std::move(out), {a}, [a](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        if (!needs_grad(a)) return;
        Tensor& dA = grad_of(t, a);
        for (size_t i = 0; i < dY.size(); ++i) dA.values[i] += dY.values[i];
    });
}

namespace {

Var reduce(Var a, bool over_rows, bool over_cols, bool mean, const char* /*op*/) {
    const Tensor& A = a.value();
    size_t R = A.rows(), C = A.cols();
    size_t out_r = over_rows ? 1 : R;
    size_t out_c = over_cols ? 1 : C;
    Tensor out(out_r, out_c);
    for (size_t r = 0; r < R; ++r)
        for (size_t c = 0; c < C; ++c)
            out.values[(over_rows ? 0 : r) * out_c + (over_cols ? 0 : c)] +=
                A.values[r * C + c];
    double denom = 1.0;
    if (mean) {
        denom = static_cast<double>((over_rows ? R : 1) * (over_cols ? C : 1));
        for (auto& v : out.values) v /= denom;
    }
    return make_node(*a.tape, std::move(out), {a},
                     [a, over_rows, over_cols, denom, R, C, out_c](Tape& t, int self) {
                         const Tensor& dY = t.node_grad(self);
                         if (!needs_grad(a)) return;
                         Tensor& dA = grad_of(t, a);
                         for (size_t r = 0; r < R; ++r)
                             for (size_t c = 0; c < C; ++c)
                                 dA.values[r * C + c] +=
                                     dY.values[(over_rows ? 0 : r) * out_c +
                                               (over_cols ? 0 : c)] /
                                     denom;
                     });
}

}  // namespace

Var sum_all(Var a) { return reduce(a, true, true, false, "sum_all"); }
Var mean_all(Var a) { return reduce(a, true, true, true, "mean_all"); }
Var sum_rows(Var a) { return reduce(a, false, true, false, "sum_rows"); }
Var mean_rows(Var a) { return reduce(a, false, true, true, "mean_rows"); }
Var sum_cols(Var a) { return reduce(a, true, false, false, "sum_cols"); }
Var mean_cols(Var a) { return reduce(a, true, false, true, "mean_cols"); }

Var softmax_rows(Var a) {
    const Tensor& A = a.value();
    require_matrix(A, "softmax_rows");
    size_t R = A.rows(), C = A.cols();
    Tensor out(R, C);
    for (size_t r = 0; r < R; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t c = 0; c < C; ++c) mx = std::max(mx, A.values[r * C + c]);
        double sum = 0.0;
        for (size_t c = 0; c < C; ++c) {
            double e = std::exp(A.values[r * C + c] - mx);
            out.values[r * C + c] = e;
            sum += e;
        }
        for (size_t c = 0; c < C; ++c) out.values[r * C + c] /= sum;
    }
    return make_node(*a.tape, std::move(out), {a}, [a, R, C](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        const Tensor& Y = t.node_value(self);
        if (!needs_grad(a)) return;
        Tensor& dA = grad_of(t, a);
        for (size_t r = 0; r < R; ++r) {
            double dot = 0.0;
            for (size_t c = 0; c < C; ++c) dot += dY.values[r * C + c] * Y.values[r * C + c];
            for (size_t c = 0; c < C; ++c)
                dA.values[r * C + c] += Y.values[r * C + c] * (dY.values[r * C + c] - dot);
        }
    });
}

Var log_softmax_rows(Var a) {
    const Tensor& A = a.value();
    require_matrix(A, "log_softmax_rows");
    size_t R = A.rows(), C = A.cols();
    Tensor out(R, C);
    for (size_t r = 0; r < R; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t c = 0; c < C; ++c) mx = std::max(mx, A.values[r * C + c]);
        double sum = 0.0;
        for (size_t c = 0; c < C; ++c) sum += std::exp(A.values[r * C + c] - mx);
        double lse = mx + std::log(sum);
        for (size_t c = 0; c < C; ++c) out.values[r * C + c] = A.values[r * C + c] - lse;
    }
    return make_node(*a.tape, std::move(out), {a}, [a, R, C](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        const Tensor& Y = t.node_value(self);
        if (!needs_grad(a)) return;
        Tensor& dA = grad_of(t, a);
        for (size_t r = 0; r < R; ++r) {
            double total = 0.0;
            for (size_t c = 0; c < C; ++c) total += dY.values[r * C + c];
            for (size_t c = 0; c < C; ++c)
                dA.values[r * C + c] +=
                    dY.values[r * C + c] - std::exp(Y.values[r * C + c]) * total;
        }
    });
}

Var leaky_relu(Var a, double slope) {
    Tensor out = a.value();
    for (auto& v : out.values)
        if (v < 0.0) v *= slope;
    return make_node(*a.tape, std::move(out), {a}, [a, slope](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        const Tensor& X = a.value();
        if (!needs_grad(a)) return;
        Tensor& dA = grad_of(t, a);
        for (size_t i = 0; i < dY.size(); ++i)
            dA.values[i] += dY.values[i] * (X.values[i] > 0.0 ? 1.0 : slope);
    });
}

Var relu(Var a) { return leaky_relu(a, 0.0); }

Var tanh(Var a) {
    Tensor out = a.value();
    for (auto& v : out.values) v = std::tanh(v);
    return make_node(*a.tape, std::move(out), {a}, [a](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        const Tensor& Y = t.node_value(self);
        if (!needs_grad(a)) return;
        Tensor& dA = grad_of(t, a);
        for (size_t i = 0; i < dY.size(); ++i)
            dA.values[i] += dY.values[i] * (1.0 - Y.values[i] * Y.values[i]);
    });
}

Var sigmoid(Var a) {
    Tensor out = a.value();
    for (auto& v : out.values) v = 1.0 / (1.0 + std::exp(-v));
    return make_node(*a.tape, std::move(out), {a}, [a](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        const Tensor& Y = t.node_value(self);
        if (!needs_grad(a)) return;
        Tensor& dA = grad_of(t, a);
        for (size_t i = 0; i < dY.size(); ++i)
            dA.values[i] += dY.values[i] * Y.values[i] * (1.0 - Y.values[i]);
    });
}

Var log_sigmoid(Var a) {
    Tensor out = a.value();
    // log sigma(x) = -log(1 + exp(-x)) = min(x,0) - log1p(exp(-|x|))
    for (auto& v : out.values) v = std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v)));
    return make_node(*a.tape, std::move(out), {a}, [a](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        const Tensor& X = a.value();
        if (!needs_grad(a)) return;
        Tensor& dA = grad_of(t, a);
        for (size_t i = 0; i < dY.size(); ++i) {
            double s = 1.0 / (1.0 + std::exp(-X.values[i]));
            dA.values[i] += dY.values[i] * (1.0 - s);
        }
    });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
    const Tensor& A = a.value();
    require_matrix(A, "layer_norm");
    size_t R = A.rows(), C = A.cols();
    if (gain.value().rows() != 1 || gain.value().cols() != C) shape_fail("layer_norm", A, gain.value());
    if (bias.value().rows() != 1 || bias.value().cols() != C) shape_fail("layer_norm", A, bias.value());
    Tensor out(R, C);
    auto xhat = std::make_shared<std::vector<double>>(R * C);
    auto inv = std::make_shared<std::vector<double>>(R);
    for (size_t r = 0; r < R; ++r) {
        double mean = 0.0;
        for (size_t c = 0; c < C; ++c) mean += A.values[r * C + c];
        mean /= static_cast<double>(C);
        double var = 0.0;
        for (size_t c = 0; c < C; ++c) {
            double d = A.values[r * C + c] - mean;
            var += d * d;
        }
        var /= static_cast<double>(C);
        double iv = 1.0 / std::sqrt(var + eps);
        (*inv)[r] = iv;
        for (size_t c = 0; c < C; ++c) {
            double xh = (A.values[r * C + c] - mean) * iv;
            (*xhat)[r * C + c] = xh;
            out.values[r * C + c] = gain.value().values[c] * xh + bias.value().values[c];
        }
    }
    return make_node(*a.tape, std::move(out), {a, gain, bias},
                     [a, gain, bias, xhat, inv, R, C](Tape& t, int self) {
                         const Tensor& dY = t.node_grad(self);
                         if (needs_grad(gain)) {
                             Tensor& dG = grad_of(t, gain);
                             for (size_t r = 0; r < R; ++r)
                                 for (size_t c = 0; c < C; ++c)
                                     dG.values[c] += dY.values[r * C + c] * (*xhat)[r * C + c];
                         }
                         if (needs_grad(bias)) {
                             Tensor& dB = grad_of(t, bias);
                             for (size_t r = 0; r < R; ++r)
                                 for (size_t c = 0; c < C; ++c) dB.values[c] += dY.values[r * C + c];
                         }
                         if (needs_grad(a)) {
                             Tensor& dA = grad_of(t, a);
                             const Tensor& G = gain.value();
                             for (size_t r = 0; r < R; ++r) {
                                 double m1 = 0.0, m2 = 0.0;
                                 for (size_t c = 0; c < C; ++c) {
                                     double dxh = dY.values[r * C + c] * G.values[c];
                                     m1 += dxh;
                                     m2 += dxh * (*xhat)[r * C + c];
                                 }
                                 m1 /= static_cast<double>(C);
                                 m2 /= static_cast<double>(C);
                                 for (size_t c = 0; c < C; ++c) {
                                     double dxh = dY.values[r * C + c] * G.values[c];
                                     dA.values[r * C + c] +=
                                         (*inv)[r] * (dxh - m1 - (*xhat)[r * C + c] * m2);
                                 }
                             }
                         }
                     });
}

Var dropout(Var a, double p) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0,1)");
    if (p == 0.0) return a;
    mark_stochastic(*a.tape);
    const Tensor& A = a.value();
    double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(A.size());
    Tensor out = A;
    SplitMix64& rng = tape_rng(*a.tape);
    for (size_t i = 0; i < A.size(); ++i) {
        double m = rng.next_double() < p ? 0.0 : keep_scale;
        (*mask)[i] = m;
        out.values[i] *= m;
    }
    return make_node(*a.tape, std::move(out), {a}, [a, mask](Tape& t, int self) {
        const Tensor& dY = t.node_grad(self);
        if (!needs_grad(a)) return;
        Tensor& dA = grad_of(t, a);
        for (size_t i = 0; i < dY.size(); ++i) dA.values[i] += dY.values[i] * (*mask)[i];
    });
}

namespace {

void check_segments(const Tensor& values, const std::vector<int>& segments, size_t num_segments,
                    const char* op) {
    if (segments.size() != values.rows())
        throw ShapeError(std::string(op) + ": " + std::to_string(segments.size()) +
                         " segment ids for " + std::to_string(values.rows()) + " rows");
    for (int s : segments)
        if (s < 0 || static_cast<size_t>(s) >= num_segments)
            throw InputError(std::string(op) + ": segment id " + std::to_string(s) +
                             " outside 0.." + std::to_string(num_segments - 1));
}

}  // namespace

Var segment_softmax(Var scores, const std::vector<int>& segments, size_t num_segments) {
    const Tensor& A = scores.value();
    require_matrix(A, "segment_softmax");
    if (A.cols() != 1) throw ShapeError("segment_softmax: scores must be K×1, got " + shape_str(A));
    check_segments(A, segments, num_segments, "segment_softmax");
    size_t K = A.rows();
    std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
    for (size_t k = 0; k < K; ++k) mx[segments[k]] = std::max(mx[segments[k]], A.values[k]);
    Tensor out(K, 1);
    std::vector<double> sums(num_segments, 0.0);
    for (size_t k = 0; k < K; ++k) {
        out.values[k] = std::exp(A.values[k] - mx[segments[k]]);
        sums[segments[k]] += out.values[k];
    }
    for (size_t k = 0; k < K; ++k) out.values[k] /= sums[segments[k]];
    return make_node(*scores.tape, std::move(out), {scores},
                     [scores, segments, num_segments, K](Tape& t, int self) {
                         const Tensor& dY = t.node_grad(self);
                         const Tensor& Y = t.node_value(self);
                         if (!needs_grad(scores)) return;
                         Tensor& dA = grad_of(t, scores);
                         std::vector<double> dot(num_segments, 0.0);
                         for (size_t k = 0; k < K; ++k) dot[segments[k]] += dY.values[k] * Y.values[k];
                         for (size_t k = 0; k < K; ++k)
                             dA.values[k] += Y.values[k] * (dY.values[k] - dot[segments[k]]);
                     });
}

Var segment_sum(Var values, const std::vector<int>& segments, size_t num_segments) {
    const Tensor& A = values.value();
    require_matrix(A, "segment_sum");
    check_segments(A, segments, num_segments, "segment_sum");
    size_t K = A.rows(), C = A.cols();
    Tensor out(num_segments, C);
    for (size_t k = 0; k < K; ++k)
        for (size_t c = 0; c < C; ++c) out.values[segments[k] * C + c] += A.values[k * C + c];
    return make_node(*values.tape, std::move(out), {values},
                     [values, segments, C, K](Tape& t, int self) {
                         const Tensor& dY = t.node_grad(self);
                         if (!needs_grad(values)) return;
                         Tensor& dA = grad_of(t, values);
                         for (size_t k = 0; k < K; ++k)
                             for (size_t c = 0; c < C; ++c)
                                 dA.values[k * C + c] += dY.values[segments[k] * C + c];
                     });
}

GradCheckReport grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& fn,
                           const std::vector<Tensor>& points, double step, double tolerance) {
    std::vector<Tensor> analytic;
    {
        Tape tape(0);
        std::vector<Var> vars;
        vars.reserve(points.size());
        for (const auto& p : points) vars.push_back(tape.input(p, true));
        Var loss = fn(tape, vars);
        if (tape.stochastic())
            throw ConfigError("grad_check requires a deterministic function (dropout is active)");
        if (loss.value().size() != 1)
            throw ContractError("grad_check: function must return a scalar");
        tape.backward(loss);
        for (const auto& v : vars) analytic.push_back(v.grad());
    }

    auto eval_at = [&](const std::vector<Tensor>& shifted) {
        Tape tape(0);
        std::vector<Var> vars;
        vars.reserve(shifted.size());
        for (const auto& p : shifted) vars.push_back(tape.input(p, false));
        return fn(tape, vars).value().values[0];
    };

    GradCheckReport report;
    report.pass = true;
    std::vector<Tensor> shifted = points;
    for (size_t i = 0; i < points.size(); ++i) {
        for (size_t j = 0; j < points[i].size(); ++j) {
            double keep = shifted[i].values[j];
            shifted[i].values[j] = keep + step;
            double up = eval_at(shifted);
            shifted[i].values[j] = keep - step;
            double down = eval_at(shifted);
            shifted[i].values[j] = keep;
            double numeric = (up - down) / (2.0 * step);
            double a = analytic[i].values[j];
            if (std::abs(a) < 1e-8 && std::abs(numeric) < 1e-8) continue;
            ++report.coordinates_checked;
            double rel = std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric));
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = "input " + std::to_string(i) + " @ " + std::to_string(j) + ": " +
                               std::to_string(a) + " vs " + std::to_string(numeric);
            }
            if (rel > tolerance) report.pass = false;
        }
    }
    return report;
}

void save_arrays(const std::string& path,
                 const std::vector<std::pair<std::string, Tensor>>& arrays) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint file: " + path);
    for (const auto& [name, tensor] : arrays) {
        json header;
        header["name"] = name;
        header["shape"] = tensor.shape;
        out << header.dump() << "\n";
        out.write(reinterpret_cast<const char*>(tensor.values.data()),
                  static_cast<std::streamsize>(tensor.values.size() * sizeof(double)));
    }
    if (!out) throw InputError("short write to checkpoint file: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_arrays(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint file: " + path);
    std::vector<std::pair<std::string, Tensor>> arrays;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json header;
        try {
            header = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError("checkpoint header: " + std::string(e.what()));
        }
        if (!header.contains("name") || !header.contains("shape"))
            throw SchemaError("checkpoint header needs name and shape");
        Tensor t;
        t.shape = header["shape"].get<std::vector<size_t>>();
        size_t count = 1;
        for (size_t d : t.shape) count *= d;
        t.values.resize(count);
        in.read(reinterpret_cast<char*>(t.values.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (static_cast<size_t>(in.gcount()) != count * sizeof(double))
            throw ParseError("checkpoint truncated in array '" +
                             header["name"].get<std::string>() + "'");
        arrays.emplace_back(header["name"].get<std::string>(), std::move(t));
    }
    return arrays;
}

}  // namespace patrec
