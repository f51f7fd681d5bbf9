#include "alice/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace alice {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw ValidationError(msg);
}

void require_square(const Matrix& m, const char* who) {
    if (m.rows() != m.cols())
        throw ShapeError(std::string(who) + ": matrix must be square, got " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}

void require_finite(const Matrix& m, const char* who) {
    if (!m.all_finite())
        throw DivergenceError(std::string(who) + ": non-finite entries in result");
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::ones(std::size_t rows, std::size_t cols) {
    return Matrix(rows, cols, 1.0);
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require(same_shape(other), "matrix add: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require(same_shape(other), "matrix subtract: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

Matrix Matrix::symmetrized() const {
    require_square(*this, "symmetrized");
    Matrix s(rows_, cols_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j)
            s(i, j) = 0.5 * ((*this)(i, j) + (*this)(j, i));
    return s;
}

double Matrix::trace() const {
    require_square(*this, "trace");
    double t = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) t += (*this)(i, i);
    return t;
}

double Matrix::frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

double Matrix::sum_abs() const {
    double s = 0.0;
    for (double v : data_) s += std::abs(v);
    return s;
}

double Matrix::max_abs() const {
    double s = 0.0;
    for (double v : data_) s = std::max(s, std::abs(v));
    return s;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
}

bool Matrix::same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
}

Matrix operator+(Matrix a, const Matrix& b) { a += b; return a; }
Matrix operator-(Matrix a, const Matrix& b) { a -= b; return a; }
Matrix operator*(double s, Matrix m) { m *= s; return m; }
Matrix operator*(Matrix m, double s) { m *= s; return m; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree, " +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
    Matrix c(a.rows(), b.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j)
                c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

double dot(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("dot: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

SymmetricMatrix SymmetricMatrix::from(Matrix m) {
    if (m.rows() != m.cols())
        throw ShapeError("symmetric matrix: input must be square, got " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    const double tol = 1e-9 * std::max(1.0, m.frobenius_norm());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = i + 1; j < m.cols(); ++j)
            if (std::abs(m(i, j) - m(j, i)) > tol)
                throw ValidationError("symmetric matrix: asymmetry at (" +
                                      std::to_string(i) + "," + std::to_string(j) +
                                      ") exceeds tolerance");
    return SymmetricMatrix(std::move(m));
}

FeatureMap FeatureMap::from(Matrix values) {
    if (values.rows() < 2)
        throw ValidationError("feature map: need at least 2 spatial positions, got " +
                              std::to_string(values.rows()));
    return FeatureMap{std::move(values)};
}

SymmetricMatrix covariance_pool(const FeatureMap& f) {
    const Matrix& x = f.values;
    const std::size_t m = x.rows();
    if (m < 2)
        throw ValidationError("covariance_pool: degenerate feature map, fewer than 2 positions");

    // Ibar = (1/m)(I - (1/m) ones)
    const double inv_m = 1.0 / static_cast<double>(m);
    Matrix ibar(m, m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            ibar(i, j) = inv_m * ((i == j ? 1.0 : 0.0) - inv_m);

    Matrix a = matmul(matmul(x.transposed(), ibar), x);
    a = a.symmetrized();
    require_finite(a, "covariance_pool");
    return SymmetricMatrix::from(std::move(a));
}

SymmetricEigen eigendecompose_symmetric(const SymmetricMatrix& sm) {
    const Matrix& m0 = sm.matrix();
    const std::size_t n = m0.rows();

    SymmetricEigen out;
    out.values.assign(n, 0.0);
    out.vectors = Matrix::identity(n);
    if (n == 0) return out;

    // Work on a scaled copy so squaring entries cannot overflow.
    const double scale = m0.max_abs();
    if (scale == 0.0) return out; // zero matrix
    if (!std::isfinite(scale))
        throw ValidationError("eigendecompose: non-finite input");

    Matrix a = m0;
    a *= 1.0 / scale;
    a = a.symmetrized();
    Matrix v = Matrix::identity(n);

    const double norm = a.frobenius_norm();
    const double tol = 1e-12 * norm;

    auto off_diag_mass = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
        return std::sqrt(s);
    };

    const std::size_t max_sweeps = 128;
    bool converged = (off_diag_mass() <= tol);
    for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < 1e-300) continue;

                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double sign = theta >= 0.0 ? 1.0 : -1.0;
                const double t = sign / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                const double app = a(p, p);
                const double aqq = a(q, q);
                a(p, p) = app - t * apq;
                a(q, q) = aqq + t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(p, k) = a(k, p);
                    a(k, q) = s * akp + c * akq;
                    a(q, k) = a(k, q);
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
        converged = (off_diag_mass() <= tol);
    }
    if (!converged)
        throw DivergenceError("eigendecompose: jacobi sweep limit reached");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]) * scale;
        for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
    }
    return out;
}

Matrix soft_threshold(const Matrix& m, double lambda) {
    if (!(lambda >= 0.0))
        throw ValidationError("soft_threshold: lambda must be nonnegative");
    if (lambda == 0.0) return m;
    Matrix out = m;
    for (double& v : out.data()) {
        const double mag = std::abs(v) - lambda;
        v = mag > 0.0 ? (v < 0.0 ? -mag : mag) : 0.0;
    }
    return out;
}

SymmetricMatrix singular_value_threshold(const SymmetricMatrix& m, double lambda) {
    if (!(lambda >= 0.0))
        throw ValidationError("singular_value_threshold: lambda must be nonnegative");
    if (lambda == 0.0) return m;

    SymmetricEigen eig = eigendecompose_symmetric(m);
    const std::size_t n = m.order();
    // V * diag(shrunk) * V^T
    Matrix scaled = eig.vectors;
    for (std::size_t k = 0; k < n; ++k) {
        const double lam = eig.values[k];
        const double mag = std::abs(lam) - lambda;
        const double shrunk = mag > 0.0 ? (lam < 0.0 ? -mag : mag) : 0.0;
        for (std::size_t r = 0; r < n; ++r) scaled(r, k) *= shrunk;
    }
    Matrix out = matmul(scaled, eig.vectors.transposed()).symmetrized();
    require_finite(out, "singular_value_threshold");
    return SymmetricMatrix::from(std::move(out));
}

SymmetricMatrix newton_schulz_sqrt(const SymmetricMatrix& a, std::size_t iters) {
    const Matrix& m = a.matrix();
    const double tr = m.trace();
    if (!(tr > 0.0))
        throw ValidationError("newton_schulz_sqrt: degenerate input, trace must be positive");

    const std::size_t n = m.rows();
    Matrix ahat = m;
    ahat *= 1.0 / tr;

    Matrix y = ahat;
    Matrix z = Matrix::identity(n);
    const Matrix three_i = 3.0 * Matrix::identity(n);
    for (std::size_t k = 0; k < iters; ++k) {
        Matrix t = three_i - matmul(z, y);
        y = 0.5 * matmul(y, t);
        z = 0.5 * matmul(t, z);
    }

    y *= std::sqrt(tr);
    y = y.symmetrized();
    require_finite(y, "newton_schulz_sqrt");
    return SymmetricMatrix::from(std::move(y));
}

std::vector<double> singular_values(const Matrix& m) {
    Matrix gram = matmul(m.transposed(), m).symmetrized();
    SymmetricEigen eig = eigendecompose_symmetric(SymmetricMatrix::from(std::move(gram)));
    std::vector<double> sv(eig.values.size());
    for (std::size_t i = 0; i < sv.size(); ++i)
        sv[i] = std::sqrt(std::max(eig.values[i], 0.0));
    return sv; // descending, inherited from the eigenvalue order
}

MatrixNorms norms(const Matrix& m) {
    MatrixNorms out{};
    out.frobenius = m.frobenius_norm();
    out.l1 = m.sum_abs();
    const std::vector<double> sv = singular_values(m);
    out.nuclear = std::accumulate(sv.begin(), sv.end(), 0.0);
    return out;
}

std::size_t numerical_rank(const Matrix& m, double tol) {
    if (!(tol >= 0.0)) throw ValidationError("numerical_rank: tol must be nonnegative");
    const std::vector<double> sv = singular_values(m);
    if (sv.empty() || sv.front() == 0.0) return 0;
    const double cut = tol * sv.front();
    std::size_t rank = 0;
    for (double s : sv)
        if (s > cut) ++rank;
    return rank;
}

double near_zero_fraction(const Matrix& m, double tol) {
    if (m.size() == 0) return 0.0;
    std::size_t count = 0;
    for (double v : m.data())
        if (std::abs(v) < tol) ++count;
    return static_cast<double>(count) / static_cast<double>(m.size());
}

Matrix read_matrix(std::istream& in) {
    long long rows = 0, cols = 0;
    if (!(in >> rows >> cols))
        throw ValidationError("matrix parse error: expected \"<rows> <cols>\" header");
    if (rows <= 0 || cols <= 0)
        throw ValidationError("matrix parse error: dimensions must be positive");

    Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!(in >> m.data()[i]))
            throw ValidationError("matrix parse error: expected " +
                                  std::to_string(m.size()) + " entries, failed at entry " +
                                  std::to_string(i));
    }
    return m;
}

Matrix read_matrix_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open matrix file: " + path);
    return read_matrix(in);
}

void write_matrix(std::ostream& out, const Matrix& m) {
    out << m.rows() << ' ' << m.cols() << '\n';
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out << ' ';
            out << m(i, j);
        }
        out << '\n';
    }
}

void write_matrix_file(const std::string& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open matrix file for writing: " + path);
    write_matrix(out, m);
    if (!out) throw IoError("failed writing matrix file: " + path);
}

} // namespace alice
