#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "patrec/rng.hpp"

namespace patrec {

// Dense row-major 64-bit float matrix. All differentiable ops work on rank-2
// shapes; vectors are 1×C or R×1 matrices.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(size_t rows, size_t cols, double fill = 0.0)
        : shape{rows, cols}, values(rows * cols, fill) {}

    static Tensor from(std::vector<double> data, size_t rows, size_t cols);
    static Tensor row(std::vector<double> data);

    size_t size() const { return values.size(); }
    size_t rows() const { return shape[0]; }
    size_t cols() const { return shape[1]; }
    double& at(size_t r, size_t c) { return values[r * shape[1] + c]; }
    double at(size_t r, size_t c) const { return values[r * shape[1] + c]; }
};

Tensor gaussian_tensor(size_t rows, size_t cols, double stddev, SplitMix64& rng);

class Tape;

// Handle to a tape node: the forward value plus (after backward) its grad.
struct Var {
    Tape* tape = nullptr;
    int node = -1;

    bool valid() const { return tape != nullptr && node >= 0; }
    const Tensor& value() const;
    const Tensor& grad() const;
    size_t rows() const { return value().rows(); }
    size_t cols() const { return value().cols(); }
};

// Records every op for reverse-mode differentiation. One tape per worker;
// backward may run once per tape.
class Tape {
public:
    explicit Tape(uint64_t seed = 0) : rng_(seed) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var input(Tensor value, bool requires_grad);

    // Populates grads of every requires_grad node reachable from loss.
    // loss must be 1×1; a tape can only run backward once.
    void backward(Var loss);

    // True once any op with sampling (dropout p>0) was recorded; such tapes
    // are rejected by grad_check.
    bool stochastic() const { return stochastic_; }
    size_t node_count() const { return nodes_.size(); }
    const Tensor& node_value(int idx) const { return nodes_[idx].value; }
    const Tensor& node_grad(int idx) const { return nodes_[idx].grad; }

private:
    friend struct Var;

    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Tape&, int)> backprop;  // reads grad of self, adds to inputs
    };

    std::vector<Node> nodes_;
    SplitMix64 rng_;
    bool stochastic_ = false;
    bool backward_done_ = false;

    friend Var make_node(Tape& tape, Tensor value, const std::vector<Var>& inputs,
                         std::function<void(Tape&, int)> backprop);
    friend SplitMix64& tape_rng(Tape& tape);
    friend void mark_stochastic(Tape& tape);
};

// --- differentiable ops ------------------------------------------------
// Shape errors name the op and offending dimensions.

Var matmul(Var a, Var b);     // [R,K]·[K,C]
Var matmul_nt(Var a, Var b);  // [R,K]·[C,K]ᵀ
Var matmul_tn(Var a, Var b);  // [K,R]ᵀ·[K,C]

// b may match a, be a 1×C row (per-column), an R×1 column (per-row), or 1×1.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_const(Var a, double constant);

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, size_t begin, size_t end);
Var slice_cols(Var a, size_t begin, size_t end);
Var gather_rows(Var table, const std::vector<int>& indices);
Var reshape(Var a, size_t rows, size_t cols);

Var sum_all(Var a);    // 1×1
Var mean_all(Var a);   // 1×1
Var sum_rows(Var a);   // R×C -> R×1 (sum over columns)
Var mean_rows(Var a);  // R×C -> R×1
Var sum_cols(Var a);   // R×C -> 1×C (sum over rows)
Var mean_cols(Var a);  // R×C -> 1×C

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var leaky_relu(Var a, double slope = 0.01);
Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var log_sigmoid(Var a);

// Per-row mean/variance normalization (biased variance, eps inside sqrt)
// followed by the affine gain/bias (both 1×C).
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-12);

// Inverted dropout: keep with probability 1-p and rescale by 1/(1-p); p = 0
// is the identity and records nothing stochastic.
Var dropout(Var a, double p);

// Softmax over groups of rows of a K×1 column: entries sharing segments[k]
// form one distribution. segment ids are 0..num_segments-1.
Var segment_softmax(Var scores, const std::vector<int>& segments, size_t num_segments);
// K×C rows summed into their segment's output row; output [num_segments, C].
Var segment_sum(Var values, const std::vector<int>& segments, size_t num_segments);

// --- gradient checking --------------------------------------------------

struct GradCheckReport {
    bool pass = false;
    double max_rel_error = 0.0;
    size_t coordinates_checked = 0;
    std::string worst;  // "input i @ flat index j: analytic vs numeric"
};

// Central-difference check of a scalar-valued function of the given points.
// Coordinates where both |analytic| and |numeric| < 1e-8 are skipped.
// Throws ConfigError if fn records stochastic ops (dropout with p>0).
GradCheckReport grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& fn,
    const std::vector<Tensor>& points, double step = 1e-5, double tolerance = 1e-3);

// --- checkpoint io --------------------------------------------------------
// Flat binary of named arrays: per array one JSON header line
// {"name": str, "shape": [int]} followed by row-major little-endian doubles.
// Round-trips byte-exactly.

void save_arrays(const std::string& path,
                 const std::vector<std::pair<std::string, Tensor>>& arrays);
std::vector<std::pair<std::string, Tensor>> load_arrays(const std::string& path);

}  // namespace patrec
