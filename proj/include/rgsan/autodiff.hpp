#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "rgsan/matrix.hpp"

namespace rgsan {

/// Reverse-mode autodiff over dense matrices. A Tape owns a growing list of
/// nodes; Var is a cheap handle into it. One tape per forward pass; call
/// backward() on a 1x1 output, then read gradients off the leaves.
template <typename Real>
class Tape;

template <typename Real>
struct Var {
    Tape<Real>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Matrix<Real>& value() const;
    const Matrix<Real>& grad() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

enum class OpKind {
    Leaf,
    Add,
    Sub,
    Scale,          // s0 * a
    AddConst,       // a + s0
    Hadamard,
    Div,            // elementwise a / b
    MatMul,
    Transpose,
    ConcatCols,
    AddRowVector,   // (N x D) + broadcast (1 x D)
    SoftmaxRows,
    LayerNormRows,  // parents: x, gamma (1xD), beta (1xD)
    Relu,
    Sigmoid,
    LogE,
    Abs,
    Clamp,          // clamp to [s0, s1]
    SumAll,
    MeanAll,
    GatherRows,     // idx selects rows of parent a
    SinCosEncode,   // positional featurizer; see ape_encode
    TableGather3,   // idx holds 3 flat bin indices per output cell into a (3 x bins) table
};

template <typename Real>
struct TapeNode {
    OpKind kind = OpKind::Leaf;
    int a = -1, b = -1, c = -1;
    bool requires_grad = false;
    Matrix<Real> value;
    Matrix<Real> grad;              // allocated on demand during backward
    Real s0 = 0, s1 = 0;
    std::vector<int> idx;           // gather / bin indices
    std::vector<Real> aux;          // op-specific cache (layernorm stats, encode freqs)
};

template <typename Real>
class Tape {
public:
    Var<Real> leaf(Matrix<Real> value, bool requires_grad = false) {
        TapeNode<Real> n;
        n.kind = OpKind::Leaf;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        return push(std::move(n));
    }

    Var<Real> constant(Matrix<Real> value) { return leaf(std::move(value), false); }

    Var<Real> scalar(Real v) { return constant(Matrix<Real>(1, 1, v)); }

    Var<Real> add(Var<Real> a, Var<Real> b) {
        require_same_shape(a, b, "add");
        TapeNode<Real> n = binary(OpKind::Add, a, b);
        n.value = val(a);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] += val(b).data()[i];
        return push(std::move(n));
    }

    Var<Real> sub(Var<Real> a, Var<Real> b) {
        require_same_shape(a, b, "sub");
        TapeNode<Real> n = binary(OpKind::Sub, a, b);
        n.value = val(a);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] -= val(b).data()[i];
        return push(std::move(n));
    }

    Var<Real> scale(Var<Real> a, Real s) {
        TapeNode<Real> n = unary(OpKind::Scale, a);
        n.s0 = s;
        n.value = val(a);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] *= s;
        return push(std::move(n));
    }

    Var<Real> add_const(Var<Real> a, Real s) {
        TapeNode<Real> n = unary(OpKind::AddConst, a);
        n.s0 = s;
        n.value = val(a);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] += s;
        return push(std::move(n));
    }

    Var<Real> hadamard(Var<Real> a, Var<Real> b) {
        require_same_shape(a, b, "hadamard");
        TapeNode<Real> n = binary(OpKind::Hadamard, a, b);
        n.value = val(a);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] *= val(b).data()[i];
        return push(std::move(n));
    }

    Var<Real> div(Var<Real> a, Var<Real> b) {
        require_same_shape(a, b, "div");
        TapeNode<Real> n = binary(OpKind::Div, a, b);
        n.value = val(a);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] /= val(b).data()[i];
        return push(std::move(n));
    }

    Var<Real> matmul(Var<Real> a, Var<Real> b) {
        TapeNode<Real> n = binary(OpKind::MatMul, a, b);
        n.value = rgsan::matmul(val(a), val(b));
        return push(std::move(n));
    }

    Var<Real> transpose(Var<Real> a) {
        TapeNode<Real> n = unary(OpKind::Transpose, a);
        n.value = transposed(val(a));
        return push(std::move(n));
    }

    Var<Real> concat_cols(Var<Real> a, Var<Real> b) {
        if (val(a).rows() != val(b).rows()) throw std::invalid_argument("concat_cols: row mismatch");
        TapeNode<Real> n = binary(OpKind::ConcatCols, a, b);
        const auto& A = val(a);
        const auto& B = val(b);
        n.value = Matrix<Real>(A.rows(), A.cols() + B.cols());
        for (std::size_t r = 0; r < A.rows(); ++r) {
            for (std::size_t ca = 0; ca < A.cols(); ++ca) n.value(r, ca) = A(r, ca);
            for (std::size_t cb = 0; cb < B.cols(); ++cb) n.value(r, A.cols() + cb) = B(r, cb);
        }
        return push(std::move(n));
    }

    Var<Real> add_row_vector(Var<Real> a, Var<Real> rowvec) {
        if (val(rowvec).rows() != 1 || val(rowvec).cols() != val(a).cols())
            throw std::invalid_argument("add_row_vector: need 1 x cols(a)");
        TapeNode<Real> n = binary(OpKind::AddRowVector, a, rowvec);
        n.value = val(a);
        for (std::size_t r = 0; r < n.value.rows(); ++r)
            for (std::size_t c = 0; c < n.value.cols(); ++c) n.value(r, c) += val(rowvec)(0, c);
        return push(std::move(n));
    }

    /// Row-wise stable softmax (max subtraction).
    Var<Real> softmax_rows(Var<Real> a) {
        TapeNode<Real> n = unary(OpKind::SoftmaxRows, a);
        const auto& X = val(a);
        n.value = Matrix<Real>(X.rows(), X.cols());
        for (std::size_t r = 0; r < X.rows(); ++r) {
            Real mx = X(r, 0);
            for (std::size_t c = 1; c < X.cols(); ++c) mx = std::max(mx, X(r, c));
            Real sum = 0;
            for (std::size_t c = 0; c < X.cols(); ++c) {
                const Real e = std::exp(X(r, c) - mx);
                n.value(r, c) = e;
                sum += e;
            }
            for (std::size_t c = 0; c < X.cols(); ++c) n.value(r, c) /= sum;
        }
        return push(std::move(n));
    }

    /// Row-wise layer norm with learnable gain/bias (1 x D each).
    Var<Real> layer_norm_rows(Var<Real> x, Var<Real> gamma, Var<Real> beta, Real eps = Real(1e-5)) {
        const auto& X = val(x);
        const std::size_t D = X.cols();
        if (val(gamma).cols() != D || val(beta).cols() != D)
            throw std::invalid_argument("layer_norm_rows: gain/bias width mismatch");
        TapeNode<Real> n;
        n.kind = OpKind::LayerNormRows;
        n.a = x.id;
        n.b = gamma.id;
        n.c = beta.id;
        n.requires_grad = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
        n.s0 = eps;
        n.value = Matrix<Real>(X.rows(), D);
        n.aux.resize(X.rows() * (D + 1));  // xhat per row followed by inv_std
        for (std::size_t r = 0; r < X.rows(); ++r) {
            Real mean = 0;
            for (std::size_t c = 0; c < D; ++c) mean += X(r, c);
            mean /= static_cast<Real>(D);
            Real var = 0;
            for (std::size_t c = 0; c < D; ++c) {
                const Real d = X(r, c) - mean;
                var += d * d;
            }
            var /= static_cast<Real>(D);
            const Real inv_std = Real(1) / std::sqrt(var + eps);
            for (std::size_t c = 0; c < D; ++c) {
                const Real xh = (X(r, c) - mean) * inv_std;
                n.aux[r * (D + 1) + c] = xh;
                n.value(r, c) = val(gamma)(0, c) * xh + val(beta)(0, c);
            }
            n.aux[r * (D + 1) + D] = inv_std;
        }
        return push(std::move(n));
    }

    Var<Real> relu(Var<Real> a) {
        TapeNode<Real> n = unary(OpKind::Relu, a);
        n.value = val(a);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = std::max(n.value.data()[i], Real(0));
        return push(std::move(n));
    }

    Var<Real> sigmoid(Var<Real> a) {
        TapeNode<Real> n = unary(OpKind::Sigmoid, a);
        n.value = val(a);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = Real(1) / (Real(1) + std::exp(-n.value.data()[i]));
        return push(std::move(n));
    }

    Var<Real> log_e(Var<Real> a) {
        TapeNode<Real> n = unary(OpKind::LogE, a);
        n.value = val(a);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = std::log(n.value.data()[i]);
        return push(std::move(n));
    }

    Var<Real> abs(Var<Real> a) {
        TapeNode<Real> n = unary(OpKind::Abs, a);
        n.value = val(a);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = std::abs(n.value.data()[i]);
        return push(std::move(n));
    }

    Var<Real> clamp(Var<Real> a, Real lo, Real hi) {
        TapeNode<Real> n = unary(OpKind::Clamp, a);
        n.s0 = lo;
        n.s1 = hi;
        n.value = val(a);
        for (std::size_t i = 0; i < n.value.size(); ++i) n.value.data()[i] = std::min(std::max(n.value.data()[i], lo), hi);
        return push(std::move(n));
    }

    Var<Real> sum_all(Var<Real> a) {
        TapeNode<Real> n = unary(OpKind::SumAll, a);
        Real s = 0;
        for (std::size_t i = 0; i < val(a).size(); ++i) s += val(a).data()[i];
        n.value = Matrix<Real>(1, 1, s);
        return push(std::move(n));
    }

    Var<Real> mean_all(Var<Real> a) {
        TapeNode<Real> n = unary(OpKind::MeanAll, a);
        Real s = 0;
        for (std::size_t i = 0; i < val(a).size(); ++i) s += val(a).data()[i];
        n.value = Matrix<Real>(1, 1, s / static_cast<Real>(val(a).size()));
        return push(std::move(n));
    }

    /// out.row(i) = table.row(idx[i]); backward scatter-adds into the table.
    Var<Real> gather_rows(Var<Real> table, std::vector<int> idx) {
        const auto& T = val(table);
        for (int i : idx)
            if (i < 0 || static_cast<std::size_t>(i) >= T.rows())
                throw std::out_of_range("gather_rows: index out of range");
        TapeNode<Real> n = unary(OpKind::GatherRows, table);
        n.value = Matrix<Real>(idx.size(), T.cols());
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < T.cols(); ++c) n.value(r, c) = T(idx[r], c);
        n.idx = std::move(idx);
        return push(std::move(n));
    }

    /// Sinusoidal featurizer: out(m, k) = sin_or_cos(P(m, axis_k) * freq_k).
    /// Column spec comes interleaved in aux as (axis, freq, is_cos) triples;
    /// columns beyond the spec are zero padding. Differentiable in P.
    Var<Real> sincos_encode(Var<Real> positions, const std::vector<int>& axes,
                            const std::vector<Real>& freqs, const std::vector<int>& is_cos,
                            std::size_t out_cols) {
        if (axes.size() != freqs.size() || axes.size() != is_cos.size())
            throw std::invalid_argument("sincos_encode: spec arrays differ in length");
        if (axes.size() > out_cols) throw std::invalid_argument("sincos_encode: spec wider than output");
        TapeNode<Real> n = unary(OpKind::SinCosEncode, positions);
        const auto& P = val(positions);
        n.value = Matrix<Real>(P.rows(), out_cols);
        n.idx.reserve(axes.size() * 2);
        n.aux.reserve(axes.size());
        for (std::size_t k = 0; k < axes.size(); ++k) {
            n.idx.push_back(axes[k]);
            n.idx.push_back(is_cos[k]);
            n.aux.push_back(freqs[k]);
        }
        for (std::size_t m = 0; m < P.rows(); ++m)
            for (std::size_t k = 0; k < axes.size(); ++k) {
                const Real arg = P(m, axes[k]) * freqs[k];
                n.value(m, k) = is_cos[k] ? std::cos(arg) : std::sin(arg);
            }
        return push(std::move(n));
    }

    /// out(i, j) = sum over axis of table(axis, bin_axis(i, j)); bins holds the
    /// three flattened (3 x bins) table offsets per output cell. Quantized
    /// displacements are constants, so only the table gets gradient.
    Var<Real> table_gather3(Var<Real> table, std::vector<int> bins, std::size_t rows, std::size_t cols) {
        if (bins.size() != rows * cols * 3) throw std::invalid_argument("table_gather3: index count mismatch");
        const auto& T = val(table);
        for (int f : bins)
            if (f < 0 || static_cast<std::size_t>(f) >= T.size())
                throw std::out_of_range("table_gather3: bin out of range");
        TapeNode<Real> n = unary(OpKind::TableGather3, table);
        n.value = Matrix<Real>(rows, cols);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) {
                const std::size_t base = (i * cols + j) * 3;
                n.value(i, j) = T.data()[bins[base]] + T.data()[bins[base + 1]] + T.data()[bins[base + 2]];
            }
        n.idx = std::move(bins);
        return push(std::move(n));
    }

    // Convenience composites.
    Var<Real> neg(Var<Real> a) { return scale(a, Real(-1)); }
    Var<Real> square(Var<Real> a) { return hadamard(a, a); }

    void backward(Var<Real> out) {
        if (!out.valid() || out.tape != this) throw std::invalid_argument("backward: foreign var");
        if (val_at(out.id).size() != 1) throw std::invalid_argument("backward: output must be scalar");
        node(out.id).grad = Matrix<Real>(1, 1, Real(1));
        for (int i = out.id; i >= 0; --i) {
            TapeNode<Real>& n = node(i);
            if (!n.requires_grad || n.grad.empty()) continue;
            propagate(n);
        }
    }

    const Matrix<Real>& value_of(Var<Real> v) const { return nodes_[v.id].value; }

    const Matrix<Real>& grad_of(Var<Real> v) const {
        const TapeNode<Real>& n = nodes_[v.id];
        if (n.grad.empty()) {
            static const Matrix<Real> empty;
            return empty;
        }
        return n.grad;
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    friend struct Var<Real>;
    std::vector<TapeNode<Real>> nodes_;

    TapeNode<Real>& node(int id) { return nodes_[id]; }
    const Matrix<Real>& val_at(int id) const { return nodes_[id].value; }
    const Matrix<Real>& val(Var<Real> v) const { return nodes_[v.id].value; }
    bool needs_grad(Var<Real> v) const { return nodes_[v.id].requires_grad; }

    Var<Real> push(TapeNode<Real>&& n) {
        nodes_.push_back(std::move(n));
        return Var<Real>{this, static_cast<int>(nodes_.size() - 1)};
    }

    TapeNode<Real> unary(OpKind k, Var<Real> a) {
        check_owned(a);
        TapeNode<Real> n;
        n.kind = k;
        n.a = a.id;
        n.requires_grad = needs_grad(a);
        return n;
    }

    TapeNode<Real> binary(OpKind k, Var<Real> a, Var<Real> b) {
        check_owned(a);
        check_owned(b);
        TapeNode<Real> n;
        n.kind = k;
        n.a = a.id;
        n.b = b.id;
        n.requires_grad = needs_grad(a) || needs_grad(b);
        return n;
    }

    void check_owned(Var<Real> v) const {
        if (!v.valid() || v.tape != this) throw std::invalid_argument("var does not belong to this tape");
    }

    void require_same_shape(Var<Real> a, Var<Real> b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }

    Matrix<Real>& grad_buf(int id) {
        TapeNode<Real>& n = node(id);
        if (n.grad.empty()) n.grad = Matrix<Real>(n.value.rows(), n.value.cols());
        return n.grad;
    }

    bool wants(int id) const { return id >= 0 && nodes_[id].requires_grad; }

    void propagate(TapeNode<Real>& n) {
        const Matrix<Real>& g = n.grad;
        switch (n.kind) {
            case OpKind::Leaf:
                break;
            case OpKind::Add: {
                if (wants(n.a)) accumulate(n.a, g);
                if (wants(n.b)) accumulate(n.b, g);
                break;
            }
            case OpKind::Sub: {
                if (wants(n.a)) accumulate(n.a, g);
                if (wants(n.b)) accumulate_scaled(n.b, g, Real(-1));
                break;
            }
            case OpKind::Scale: {
                if (wants(n.a)) accumulate_scaled(n.a, g, n.s0);
                break;
            }
            case OpKind::AddConst: {
                if (wants(n.a)) accumulate(n.a, g);
                break;
            }
            case OpKind::Hadamard: {
                if (wants(n.a)) accumulate_product(n.a, g, val_at(n.b));
                if (wants(n.b)) accumulate_product(n.b, g, val_at(n.a));
                break;
            }
            case OpKind::Div: {
                const Matrix<Real>& B = val_at(n.b);
                if (wants(n.a)) {
                    Matrix<Real>& da = grad_buf(n.a);
                    for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i] / B.data()[i];
                }
                if (wants(n.b)) {
                    Matrix<Real>& db = grad_buf(n.b);
                    for (std::size_t i = 0; i < g.size(); ++i)
                        db.data()[i] -= g.data()[i] * n.value.data()[i] / B.data()[i];
                }
                break;
            }
            case OpKind::MatMul: {
                if (wants(n.a)) add_into(grad_buf(n.a), matmul_bt(g, val_at(n.b)));
                if (wants(n.b)) add_into(grad_buf(n.b), matmul_at(val_at(n.a), g));
                break;
            }
            case OpKind::Transpose: {
                if (wants(n.a)) add_into(grad_buf(n.a), transposed(g));
                break;
            }
            case OpKind::ConcatCols: {
                const std::size_t ca = val_at(n.a).cols();
                if (wants(n.a)) {
                    Matrix<Real>& da = grad_buf(n.a);
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < ca; ++c) da(r, c) += g(r, c);
                }
                if (wants(n.b)) {
                    Matrix<Real>& db = grad_buf(n.b);
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < db.cols(); ++c) db(r, c) += g(r, ca + c);
                }
                break;
            }
            case OpKind::AddRowVector: {
                if (wants(n.a)) accumulate(n.a, g);
                if (wants(n.b)) {
                    Matrix<Real>& db = grad_buf(n.b);
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < g.cols(); ++c) db(0, c) += g(r, c);
                }
                break;
            }
            case OpKind::SoftmaxRows: {
                if (!wants(n.a)) break;
                Matrix<Real>& da = grad_buf(n.a);
                const Matrix<Real>& y = n.value;
                for (std::size_t r = 0; r < y.rows(); ++r) {
                    Real dot = 0;
                    for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
                    for (std::size_t c = 0; c < y.cols(); ++c) da(r, c) += y(r, c) * (g(r, c) - dot);
                }
                break;
            }
            case OpKind::LayerNormRows: {
                const Matrix<Real>& gamma = val_at(n.b);
                const std::size_t D = n.value.cols();
                for (std::size_t r = 0; r < n.value.rows(); ++r) {
                    const Real* xhat = n.aux.data() + r * (D + 1);
                    const Real inv_std = xhat[D];
                    if (wants(n.b)) {
                        Matrix<Real>& dg = grad_buf(n.b);
                        for (std::size_t c = 0; c < D; ++c) dg(0, c) += g(r, c) * xhat[c];
                    }
                    if (wants(n.c)) {
                        Matrix<Real>& db = grad_buf(n.c);
                        for (std::size_t c = 0; c < D; ++c) db(0, c) += g(r, c);
                    }
                    if (wants(n.a)) {
                        Matrix<Real>& dx = grad_buf(n.a);
                        Real mean_gy = 0, mean_gyx = 0;
                        for (std::size_t c = 0; c < D; ++c) {
                            const Real gy = g(r, c) * gamma(0, c);
                            mean_gy += gy;
                            mean_gyx += gy * xhat[c];
                        }
                        mean_gy /= static_cast<Real>(D);
                        mean_gyx /= static_cast<Real>(D);
                        for (std::size_t c = 0; c < D; ++c) {
                            const Real gy = g(r, c) * gamma(0, c);
                            dx(r, c) += inv_std * (gy - mean_gy - xhat[c] * mean_gyx);
                        }
                    }
                }
                break;
            }
            case OpKind::Relu: {
                if (!wants(n.a)) break;
                Matrix<Real>& da = grad_buf(n.a);
                const Matrix<Real>& x = val_at(n.a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (x.data()[i] > Real(0)) da.data()[i] += g.data()[i];
                break;
            }
            case OpKind::Sigmoid: {
                if (!wants(n.a)) break;
                Matrix<Real>& da = grad_buf(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const Real y = n.value.data()[i];
                    da.data()[i] += g.data()[i] * y * (Real(1) - y);
                }
                break;
            }
            case OpKind::LogE: {
                if (!wants(n.a)) break;
                Matrix<Real>& da = grad_buf(n.a);
                const Matrix<Real>& x = val_at(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i] / x.data()[i];
                break;
            }
            case OpKind::Abs: {
                if (!wants(n.a)) break;
                Matrix<Real>& da = grad_buf(n.a);
                const Matrix<Real>& x = val_at(n.a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const Real xi = x.data()[i];
                    if (xi > Real(0)) da.data()[i] += g.data()[i];
                    else if (xi < Real(0)) da.data()[i] -= g.data()[i];
                }
                break;
            }
            case OpKind::Clamp: {
                if (!wants(n.a)) break;
                Matrix<Real>& da = grad_buf(n.a);
                const Matrix<Real>& x = val_at(n.a);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (x.data()[i] >= n.s0 && x.data()[i] <= n.s1) da.data()[i] += g.data()[i];
                break;
            }
            case OpKind::SumAll: {
                if (!wants(n.a)) break;
                Matrix<Real>& da = grad_buf(n.a);
                const Real gs = g(0, 0);
                for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] += gs;
                break;
            }
            case OpKind::MeanAll: {
                if (!wants(n.a)) break;
                Matrix<Real>& da = grad_buf(n.a);
                const Real gs = g(0, 0) / static_cast<Real>(da.size());
                for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] += gs;
                break;
            }
            case OpKind::GatherRows: {
                if (!wants(n.a)) break;
                Matrix<Real>& dt = grad_buf(n.a);
                for (std::size_t r = 0; r < n.idx.size(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) dt(n.idx[r], c) += g(r, c);
                break;
            }
            case OpKind::SinCosEncode: {
                if (!wants(n.a)) break;
                Matrix<Real>& dp = grad_buf(n.a);
                const Matrix<Real>& P = val_at(n.a);
                const std::size_t spec = n.aux.size();
                for (std::size_t m = 0; m < P.rows(); ++m)
                    for (std::size_t k = 0; k < spec; ++k) {
                        const int axis = n.idx[k * 2];
                        const int is_cos = n.idx[k * 2 + 1];
                        const Real f = n.aux[k];
                        const Real arg = P(m, axis) * f;
                        const Real d = is_cos ? -std::sin(arg) : std::cos(arg);
                        dp(m, axis) += g(m, k) * d * f;
                    }
                break;
            }
            case OpKind::TableGather3: {
                if (!wants(n.a)) break;
                Matrix<Real>& dt = grad_buf(n.a);
                for (std::size_t i = 0; i < n.value.rows(); ++i)
                    for (std::size_t j = 0; j < n.value.cols(); ++j) {
                        const std::size_t base = (i * n.value.cols() + j) * 3;
                        const Real gv = g(i, j);
                        dt.data()[n.idx[base]] += gv;
                        dt.data()[n.idx[base + 1]] += gv;
                        dt.data()[n.idx[base + 2]] += gv;
                    }
                break;
            }
        }
    }

    void accumulate(int id, const Matrix<Real>& g) { add_into(grad_buf(id), g); }

    void accumulate_scaled(int id, const Matrix<Real>& g, Real s) {
        Matrix<Real>& d = grad_buf(id);
        for (std::size_t i = 0; i < g.size(); ++i) d.data()[i] += s * g.data()[i];
    }

    void accumulate_product(int id, const Matrix<Real>& g, const Matrix<Real>& other) {
        Matrix<Real>& d = grad_buf(id);
        for (std::size_t i = 0; i < g.size(); ++i) d.data()[i] += g.data()[i] * other.data()[i];
    }

    static void add_into(Matrix<Real>& dst, const Matrix<Real>& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += src.data()[i];
    }
};

template <typename Real>
const Matrix<Real>& Var<Real>::value() const {
    return tape->value_of(*this);
}

template <typename Real>
const Matrix<Real>& Var<Real>::grad() const {
    return tape->grad_of(*this);
}

}  // namespace rgsan
