#include "advlora/matrix.hpp"

#include <cmath>

#include "advlora/errors.hpp"
#include "advlora/kernels.hpp"
#include "advlora/rng.hpp"

namespace advlora {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix Matrix::gaussian(std::size_t rows, std::size_t cols, double sigma,
                        std::uint64_t seed) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i)
        m.data_[i] = sigma * advlora::gaussian(seed, i);
    return m;
}

bool Matrix::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix& Matrix::operator+=(const Matrix& other) {
    if (!same_shape(other)) throw ContractError("Matrix += shape mismatch");
    kernels::add(data(), other.data(), size());
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    if (!same_shape(other)) throw ContractError("Matrix -= shape mismatch");
    kernels::axpy(data(), -1.0, other.data(), size());
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    kernels::scal(data(), s, size());
    return *this;
}

void Matrix::add_scaled(const Matrix& other, double s) {
    if (!same_shape(other)) throw ContractError("Matrix add_scaled shape mismatch");
    kernels::axpy(data(), s, other.data(), size());
}

double frobenius_norm(const Matrix& m) {
    return std::sqrt(kernels::sum_sq(m.data(), m.size()));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ContractError("matmul: inner dimensions disagree");
    Matrix c(a.rows(), b.cols());
    kernels::matmul_nn(c.data(), a.data(), b.data(), a.rows(), a.cols(), b.cols());
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw ContractError("matmul_nt: inner dimensions disagree");
    Matrix c(a.rows(), b.rows());
    kernels::matmul_nt(c.data(), a.data(), b.data(), a.rows(), a.cols(), b.rows());
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows())
        throw ContractError("matmul_tn: inner dimensions disagree");
    Matrix c(a.cols(), b.cols());
    kernels::matmul_tn(c.data(), a.data(), b.data(), a.cols(), a.rows(), b.cols());
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c)
            t(c, r) = m(r, c);
    return t;
}

double dot(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ContractError("dot: length mismatch");
    return kernels::dot(x.data(), y.data(), x.size());
}

double l2_norm(const std::vector<double>& x) {
    return std::sqrt(kernels::sum_sq(x.data(), x.size()));
}

} // namespace advlora
