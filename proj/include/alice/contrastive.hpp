#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "alice/matrix.hpp"

namespace alice {

struct Temperature {
    double tau = 0.1;

    void validate() const;
};

// Two augmented views per source sample. Rows of z are unit embeddings;
// view_origin maps each row back to its source index.
struct ContrastiveBatch {
    Matrix z;
    std::vector<int> labels;
    std::vector<std::size_t> view_origin;

    // Structural checks plus unit-norm rows (within norm_tol).
    void validate(double norm_tol = 1e-6) const;
    std::size_t size() const { return z.rows(); } // 2N
};

struct ContrastiveLossResult {
    double loss;
    Matrix dz;
};

// Single positive per anchor: the other view of the same origin. Loss summed
// over anchors.
ContrastiveLossResult self_supervised_loss(const ContrastiveBatch& b, Temperature t);

// All same-label views are positives, each anchor averaged by its positive
// count. Reduces exactly to the self-supervised form when every origin has a
// distinct label.
ContrastiveLossResult supervised_contrastive_loss(const ContrastiveBatch& b,
                                                  Temperature t);

struct TripletGap {
    double exact;  // log(1 + exp((a.n - a.p) / tau))
    double approx; // |a-p|^2 - |a-n|^2 + 2 tau
};

TripletGap triplet_gap(const std::vector<double>& z_a, const std::vector<double>& z_p,
                       const std::vector<double>& z_n, Temperature t);

struct AugmentConfig {
    double noise_sigma = 0.05; // additive gaussian
    double dropout_p = 0.1;    // per-feature zeroing probability
    double scale_s = 0.1;      // multiplicative jitter in [1-s, 1+s]

    void validate() const;
};

std::vector<double> rand_augment_lite(const std::vector<double>& x,
                                      const AugmentConfig& cfg, std::uint64_t seed);
std::vector<double> rand_augment_lite(const std::vector<double>& x,
                                      const AugmentConfig& cfg, std::mt19937_64& rng);

// Inputs for a contrastive step: two independently augmented views per sample,
// interleaved (source i occupies rows 2i and 2i+1).
struct ViewBatch {
    Matrix views;
    std::vector<int> labels;
    std::vector<std::size_t> view_origin;
};

ViewBatch make_views(const Matrix& x, const std::vector<int>& labels,
                     const AugmentConfig& cfg, std::uint64_t seed);

struct MixupResult {
    std::vector<double> x;
    std::vector<double> y; // stays on the simplex
    double lambda;
};

MixupResult mixup(const std::vector<double>& x1, const std::vector<double>& x2,
                  const std::vector<double>& y1, const std::vector<double>& y2,
                  double lambda);
// Draws lambda from Beta(a, a).
MixupResult mixup(const std::vector<double>& x1, const std::vector<double>& x2,
                  const std::vector<double>& y1, const std::vector<double>& y2,
                  std::mt19937_64& rng, double a = 0.2);

} // namespace alice
