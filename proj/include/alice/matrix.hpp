#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "alice/errors.hpp"

namespace alice {

// Dense row-major matrix of doubles. The universal numeric carrier.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

    static Matrix identity(std::size_t n);
    static Matrix ones(std::size_t rows, std::size_t cols);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    Matrix transposed() const;
    Matrix symmetrized() const; // (M + M^T) / 2, square input required

    double trace() const; // square input required
    double frobenius_norm() const;
    double sum_abs() const;
    double max_abs() const;
    bool all_finite() const;
    bool same_shape(const Matrix& other) const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix m);
Matrix operator*(Matrix m, double s);
Matrix matmul(const Matrix& a, const Matrix& b);

// trace(a^T b), the Frobenius inner product.
double dot(const Matrix& a, const Matrix& b);

// Square matrix with |M[i][j] - M[j][i]| <= 1e-9 * max(1, ||M||_F),
// validated on construction.
class SymmetricMatrix {
public:
    static SymmetricMatrix from(Matrix m);

    std::size_t order() const { return m_.rows(); }
    const Matrix& matrix() const { return m_; }
    operator const Matrix&() const { return m_; }

private:
    explicit SymmetricMatrix(Matrix m) : m_(std::move(m)) {}
    Matrix m_;
};

// One sample's spatial feature map: m positions (rows) by c channels (columns).
struct FeatureMap {
    Matrix values;

    static FeatureMap from(Matrix values); // requires m >= 2
    std::size_t positions() const { return values.rows(); }
    std::size_t channels() const { return values.cols(); }
};

struct SymmetricEigen {
    std::vector<double> values; // descending
    Matrix vectors;             // column k pairs with values[k]; orthonormal
};

// Position-centered second-order pooling: A = X^T Ibar X with
// Ibar = (1/m)(I - (1/m) ones), m the number of positions.
SymmetricMatrix covariance_pool(const FeatureMap& f);

// Cyclic Jacobi rotations; converges when the off-diagonal Frobenius mass
// drops below 1e-12 * ||M||_F.
SymmetricEigen eigendecompose_symmetric(const SymmetricMatrix& m);

// Entrywise sign(x) * max(|x| - lambda, 0). lambda must be nonnegative.
Matrix soft_threshold(const Matrix& m, double lambda);

// Spectral shrinkage: eigendecompose, soft-threshold the eigenvalues by
// magnitude, rebuild. Proximal map of lambda * nuclear norm on symmetric
// matrices.
SymmetricMatrix singular_value_threshold(const SymmetricMatrix& m, double lambda);

// Coupled Newton-Schulz iteration for the PSD square root. The input is
// pre-scaled by 1/trace(A); requires trace > 0.
SymmetricMatrix newton_schulz_sqrt(const SymmetricMatrix& a, std::size_t iters);

// Singular values (descending) via the eigenvalues of M^T M.
std::vector<double> singular_values(const Matrix& m);

struct MatrixNorms {
    double frobenius;
    double nuclear;
    double l1;
};

MatrixNorms norms(const Matrix& m);

// Number of singular values above tol * sigma_max.
std::size_t numerical_rank(const Matrix& m, double tol = 1e-6);

// Fraction of entries with |x| < tol.
double near_zero_fraction(const Matrix& m, double tol = 1e-9);

// Text format: first line "<rows> <cols>", then row-major decimal entries.
// Values are written with enough digits for exact double round-trips.
Matrix read_matrix(std::istream& in);
Matrix read_matrix_file(const std::string& path);
void write_matrix(std::ostream& out, const Matrix& m);
void write_matrix_file(const std::string& path, const Matrix& m);

} // namespace alice
