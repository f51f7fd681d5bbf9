#include "alice/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "alice/errors.hpp"

namespace alice {

void Temperature::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau))
        throw ValidationError("temperature must be positive and finite");
}

void ContrastiveBatch::validate(double norm_tol) const {
    if (labels.size() != z.rows() || view_origin.size() != z.rows())
        throw ShapeError("contrastive batch: labels and origins must match row count");
    if (z.rows() % 2 != 0)
        throw ValidationError("contrastive batch: view count must be even");
    std::unordered_map<std::size_t, std::vector<std::size_t>> by_origin;
    for (std::size_t i = 0; i < view_origin.size(); ++i)
        by_origin[view_origin[i]].push_back(i);
    for (const auto& [origin, rows] : by_origin) {
        if (rows.size() != 2)
            throw ValidationError("contrastive batch: origin " + std::to_string(origin) +
                                  " appears " + std::to_string(rows.size()) +
                                  " times, expected exactly 2");
        if (labels[rows[0]] != labels[rows[1]])
            throw ValidationError("contrastive batch: views of origin " +
                                  std::to_string(origin) + " carry different labels");
    }
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < z.cols(); ++j) n2 += z(i, j) * z(i, j);
        if (std::abs(std::sqrt(n2) - 1.0) > norm_tol)
            throw ValidationError("contrastive batch: row " + std::to_string(i) +
                                  " is not unit length");
    }
}

namespace {

// Common checks both losses need; label consistency is left to the strict
// validator so mislabeled batches still reach the per-anchor errors below.
void check_structure(const ContrastiveBatch& b) {
    if (b.labels.size() != b.z.rows() || b.view_origin.size() != b.z.rows())
        throw ShapeError("contrastive batch: labels and origins must match row count");
    if (b.z.rows() < 4)
        throw ValidationError("contrastive batch: need at least two source samples, "
                              "otherwise no negatives exist");
    if (b.z.rows() % 2 != 0)
        throw ValidationError("contrastive batch: view count must be even");
    std::unordered_map<std::size_t, std::size_t> counts;
    for (std::size_t origin : b.view_origin) counts[origin]++;
    for (const auto& [origin, n] : counts)
        if (n != 2)
            throw ValidationError("contrastive batch: origin " + std::to_string(origin) +
                                  " appears " + std::to_string(n) +
                                  " times, expected exactly 2");
}

// Shared anchor loop: loss and dL/dZ for arbitrary per-anchor positive sets.
ContrastiveLossResult anchored_loss(const ContrastiveBatch& b, Temperature t,
                                    const std::vector<std::vector<std::size_t>>& positives) {
    t.validate();
    const std::size_t n = b.z.rows();
    const double inv_tau = 1.0 / t.tau;

    Matrix s(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < b.z.cols(); ++j) acc += b.z(i, j) * b.z(k, j);
            s(i, k) = acc * inv_tau;
        }

    Matrix c(n, n, 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) mx = std::max(mx, s(i, k));
        double denom = 0.0;
        for (std::size_t k = 0; k < n; ++k)
            if (k != i) denom += std::exp(s(i, k) - mx);
        const double lse = mx + std::log(denom);

        const double inv_p = 1.0 / static_cast<double>(positives[i].size());
        for (std::size_t p : positives[i]) loss += (lse - s(i, p)) * inv_p;

        for (std::size_t k = 0; k < n; ++k)
            if (k != i) c(i, k) = std::exp(s(i, k) - lse);
        for (std::size_t p : positives[i]) c(i, p) -= inv_p;
    }

    // L depends on z only through s_ik = z_i . z_k / tau.
    ContrastiveLossResult out;
    out.loss = loss;
    out.dz = Matrix(n, b.z.cols(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
            const double w = c(i, k);
            if (w == 0.0) continue;
            for (std::size_t j = 0; j < b.z.cols(); ++j) {
                out.dz(i, j) += w * b.z(k, j) * inv_tau;
                out.dz(k, j) += w * b.z(i, j) * inv_tau;
            }
        }
    return out;
}

} // namespace

ContrastiveLossResult self_supervised_loss(const ContrastiveBatch& b, Temperature t) {
    check_structure(b);
    const std::size_t n = b.z.rows();
    std::unordered_map<std::size_t, std::vector<std::size_t>> by_origin;
    for (std::size_t i = 0; i < n; ++i) by_origin[b.view_origin[i]].push_back(i);
    std::vector<std::vector<std::size_t>> positives(n);
    for (const auto& [origin, rows] : by_origin) {
        positives[rows[0]] = {rows[1]};
        positives[rows[1]] = {rows[0]};
    }
    return anchored_loss(b, t, positives);
}

ContrastiveLossResult supervised_contrastive_loss(const ContrastiveBatch& b,
                                                  Temperature t) {
    check_structure(b);
    const std::size_t n = b.z.rows();
    const bool single_class =
        std::all_of(b.labels.begin(), b.labels.end(),
                    [&](int l) { return l == b.labels.front(); });
    if (single_class)
        throw ValidationError("contrastive batch: only one class present, "
                              "no negatives exist");
    std::vector<std::vector<std::size_t>> positives(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k)
            if (k != i && b.labels[k] == b.labels[i]) positives[i].push_back(k);
        if (positives[i].empty())
            throw ValidationError("contrastive batch: anchor " + std::to_string(i) +
                                  " has no positive partners");
    }
    return anchored_loss(b, t, positives);
}

TripletGap triplet_gap(const std::vector<double>& z_a, const std::vector<double>& z_p,
                       const std::vector<double>& z_n, Temperature t) {
    t.validate();
    if (z_a.size() != z_p.size() || z_a.size() != z_n.size())
        throw ShapeError("triplet: vector lengths differ");
    double ap = 0.0, an = 0.0, pp = 0.0, nn = 0.0, aa = 0.0;
    for (std::size_t j = 0; j < z_a.size(); ++j) {
        ap += z_a[j] * z_p[j];
        an += z_a[j] * z_n[j];
        aa += z_a[j] * z_a[j];
        pp += z_p[j] * z_p[j];
        nn += z_n[j] * z_n[j];
    }
    const double u = (an - ap) / t.tau;
    TripletGap out;
    // log(1 + e^u), kept stable for large |u|
    out.exact = u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u));
    out.approx = (aa + pp - 2.0 * ap) - (aa + nn - 2.0 * an) + 2.0 * t.tau;
    return out;
}

void AugmentConfig::validate() const {
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
        throw ValidationError("augment config: noise sigma must be nonnegative");
    if (!(dropout_p >= 0.0 && dropout_p <= 1.0))
        throw ValidationError("augment config: dropout fraction must lie in [0, 1]");
    if (!(scale_s >= 0.0) || !std::isfinite(scale_s))
        throw ValidationError("augment config: scale jitter must be nonnegative");
}

std::vector<double> rand_augment_lite(const std::vector<double>& x,
                                      const AugmentConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    std::vector<double> out = x;
    if (cfg.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
        for (double& v : out) v += noise(rng);
    }
    if (cfg.dropout_p > 0.0) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (double& v : out)
            if (u(rng) < cfg.dropout_p) v = 0.0;
    }
    if (cfg.scale_s > 0.0) {
        std::uniform_real_distribution<double> u(1.0 - cfg.scale_s, 1.0 + cfg.scale_s);
        const double factor = u(rng);
        for (double& v : out) v *= factor;
    }
    for (double v : out)
        if (!std::isfinite(v))
            throw ValidationError("augmentation produced a non-finite value");
    return out;
}

std::vector<double> rand_augment_lite(const std::vector<double>& x,
                                      const AugmentConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return rand_augment_lite(x, cfg, rng);
}

ViewBatch make_views(const Matrix& x, const std::vector<int>& labels,
                     const AugmentConfig& cfg, std::uint64_t seed) {
    if (x.rows() == 0) throw ValidationError("make_views: empty batch");
    if (labels.size() != x.rows())
        throw ShapeError("make_views: label count does not match batch size");
    std::mt19937_64 rng(seed);
    ViewBatch out;
    out.views = Matrix(2 * x.rows(), x.cols());
    out.labels.resize(2 * x.rows());
    out.view_origin.resize(2 * x.rows());
    std::vector<double> sample(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) sample[j] = x(i, j);
        for (std::size_t v = 0; v < 2; ++v) {
            const std::vector<double> view = rand_augment_lite(sample, cfg, rng);
            const std::size_t row = 2 * i + v;
            for (std::size_t j = 0; j < x.cols(); ++j) out.views(row, j) = view[j];
            out.labels[row] = labels[i];
            out.view_origin[row] = i;
        }
    }
    return out;
}

MixupResult mixup(const std::vector<double>& x1, const std::vector<double>& x2,
                  const std::vector<double>& y1, const std::vector<double>& y2,
                  double lambda) {
    if (x1.size() != x2.size() || y1.size() != y2.size())
        throw ShapeError("mixup: shapes differ");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw ValidationError("mixup: lambda must lie in [0, 1]");
    MixupResult out;
    out.lambda = lambda;
    out.x.resize(x1.size());
    out.y.resize(y1.size());
    for (std::size_t i = 0; i < x1.size(); ++i)
        out.x[i] = lambda * x1[i] + (1.0 - lambda) * x2[i];
    for (std::size_t i = 0; i < y1.size(); ++i)
        out.y[i] = lambda * y1[i] + (1.0 - lambda) * y2[i];
    return out;
}

MixupResult mixup(const std::vector<double>& x1, const std::vector<double>& x2,
                  const std::vector<double>& y1, const std::vector<double>& y2,
                  std::mt19937_64& rng, double a) {
    if (!(a > 0.0)) throw ValidationError("mixup: concentration must be positive");
    std::gamma_distribution<double> g(a, 1.0);
    const double g1 = g(rng), g2 = g(rng);
    double lambda = g1 + g2 > 0.0 ? g1 / (g1 + g2) : 0.5;
    lambda = std::clamp(lambda, 0.0, 1.0);
    return mixup(x1, x2, y1, y2, lambda);
}

} // namespace alice
