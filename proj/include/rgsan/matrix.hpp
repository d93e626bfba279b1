#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace rgsan {

/// Dense row-major matrix. Small and dumb on purpose; all model math goes
/// through the autodiff tape, which uses this as its value type.
template <typename Real>
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<Real>> rows) {
        Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
        std::size_t r = 0;
        for (const auto& row : rows) {
            if (row.size() != m.cols_) throw std::invalid_argument("ragged initializer");
            std::size_t c = 0;
            for (Real v : row) m(r, c++) = v;
            ++r;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    Real* row(std::size_t r) { return data_.data() + r * cols_; }
    const Real* row(std::size_t r) const { return data_.data() + r * cols_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool all_finite() const {
        for (Real v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill(Real v) { data_.assign(data_.size(), v); }

    template <typename Other>
    Matrix<Other> cast() const {
        Matrix<Other> out(rows_, cols_);
        for (std::size_t i = 0; i < data_.size(); ++i)
            out.data()[i] = static_cast<Other>(data_[i]);
        return out;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Real> data_;
};

/// C = A * B. ikj loop order keeps the inner loop contiguous for both B and C.
template <typename Real>
Matrix<Real> matmul(const Matrix<Real>& a, const Matrix<Real>& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
    Matrix<Real> c(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        Real* ci = c.row(i);
        const Real* ai = a.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const Real aip = ai[p];
            if (aip == Real(0)) continue;
            const Real* bp = b.row(p);
            for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
    return c;
}

/// C = A * B^T.
template <typename Real>
Matrix<Real> matmul_bt(const Matrix<Real>& a, const Matrix<Real>& b) {
    if (a.cols() != b.cols()) throw std::invalid_argument("matmul_bt: inner dimensions differ");
    Matrix<Real> c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const Real* ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const Real* bj = b.row(j);
            Real acc = 0;
            for (std::size_t p = 0; p < a.cols(); ++p) acc += ai[p] * bj[p];
            c(i, j) = acc;
        }
    }
    return c;
}

/// C = A^T * B.
template <typename Real>
Matrix<Real> matmul_at(const Matrix<Real>& a, const Matrix<Real>& b) {
    if (a.rows() != b.rows()) throw std::invalid_argument("matmul_at: inner dimensions differ");
    Matrix<Real> c(a.cols(), b.cols());
    for (std::size_t p = 0; p < a.rows(); ++p) {
        const Real* ap = a.row(p);
        const Real* bp = b.row(p);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const Real aip = ap[i];
            if (aip == Real(0)) continue;
            Real* ci = c.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aip * bp[j];
        }
    }
    return c;
}

template <typename Real>
Matrix<Real> transposed(const Matrix<Real>& a) {
    Matrix<Real> t(a.cols(), a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
    return t;
}

template <typename Real>
double max_abs_diff(const Matrix<Real>& a, const Matrix<Real>& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return m;
}

}  // namespace rgsan
