#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "alice/contrastive.hpp"
#include "test_util.hpp"

using alice::ContrastiveBatch;
using alice::Matrix;
using alice::Temperature;

namespace {

// Interleaved two-view batch with unit rows; labels keyed by origin.
ContrastiveBatch random_batch(std::size_t sources, std::size_t dim,
                              std::size_t classes, std::mt19937_64& g) {
    ContrastiveBatch b;
    b.z = testutil::unit_rows(testutil::random_gaussian(2 * sources, dim, g));
    for (std::size_t i = 0; i < sources; ++i) {
        for (int v = 0; v < 2; ++v) {
            b.labels.push_back(static_cast<int>(i % classes));
            b.view_origin.push_back(i);
        }
    }
    return b;
}

ContrastiveBatch axis_batch() {
    // two origins, views identical per origin, orthogonal across origins
    ContrastiveBatch b;
    b.z = Matrix(4, 4, 0.0);
    b.z(0, 0) = b.z(1, 0) = 1.0;
    b.z(2, 1) = b.z(3, 1) = 1.0;
    b.labels = {0, 0, 1, 1};
    b.view_origin = {0, 0, 1, 1};
    return b;
}

std::vector<double> unit3(double x, double y, double z) {
    const double n = std::sqrt(x * x + y * y + z * z);
    return {x / n, y / n, z / n};
}

} // namespace

TEST_CASE("temperature and batch validation") {
    Temperature t;
    CHECK_NOTHROW(t.validate());
    t.tau = 0.0;
    CHECK_THROWS_AS(t.validate(), alice::ValidationError);

    ContrastiveBatch b = axis_batch();
    CHECK_NOTHROW(b.validate());

    SUBCASE("non-unit row") {
        b.z(0, 0) = 1.5;
        CHECK_THROWS_AS(b.validate(), alice::ValidationError);
    }
    SUBCASE("odd view count") {
        b.z = Matrix(3, 4, 0.5);
        b.labels = {0, 0, 1};
        b.view_origin = {0, 0, 1};
        CHECK_THROWS_AS(b.validate(), alice::ValidationError);
    }
    SUBCASE("origin seen once and thrice") {
        b.view_origin = {0, 0, 0, 1};
        CHECK_THROWS_AS(b.validate(), alice::ValidationError);
    }
    SUBCASE("length mismatch") {
        b.labels.pop_back();
        CHECK_THROWS_AS(b.validate(), alice::ShapeError);
    }
    SUBCASE("norm tolerance is honored") {
        b.z(0, 0) = 1.0 + 5e-7;
        CHECK_NOTHROW(b.validate(1e-6));
        CHECK_THROWS_AS(b.validate(1e-8), alice::ValidationError);
    }
}

TEST_CASE("self-supervised loss hand values") {
    Temperature t;
    t.tau = 1.0;

    SUBCASE("orthogonal pairs") {
        // per anchor: -log(e / (e + 2)) = log((e + 2) / e)
        auto res = alice::self_supervised_loss(axis_batch(), t);
        const double per = std::log((std::exp(1.0) + 2.0) / std::exp(1.0));
        CHECK(std::abs(per - 0.5514) <= 5e-5);
        CHECK(res.loss == doctest::Approx(4.0 * per).epsilon(1e-10));
        CHECK(std::abs(res.loss - 2.2057) <= 5e-4);
    }
    SUBCASE("identical embeddings give the uniform-softmax value") {
        ContrastiveBatch b;
        b.z = Matrix(6, 3, 0.0);
        for (std::size_t i = 0; i < 6; ++i) b.z(i, 0) = 1.0;
        b.labels = {0, 0, 1, 1, 2, 2};
        b.view_origin = {0, 0, 1, 1, 2, 2};
        auto res = alice::self_supervised_loss(b, t);
        CHECK(res.loss == doctest::Approx(6.0 * std::log(5.0)).epsilon(1e-12));
    }
    SUBCASE("single source has no negatives") {
        ContrastiveBatch b;
        b.z = Matrix(2, 2, 0.0);
        b.z(0, 0) = b.z(1, 0) = 1.0;
        b.labels = {0, 0};
        b.view_origin = {0, 0};
        CHECK_THROWS_AS(alice::self_supervised_loss(b, t), alice::ValidationError);
    }
}

TEST_CASE("loss is invariant to rotations and batch order") {
    auto g = testutil::rng(11);
    ContrastiveBatch b = random_batch(4, 5, 3, g);
    Temperature t;

    const double self0 = alice::self_supervised_loss(b, t).loss;
    const double sup0 = alice::supervised_contrastive_loss(b, t).loss;

    SUBCASE("global rotation") {
        Matrix q = testutil::random_orthogonal(5, g);
        ContrastiveBatch r = b;
        r.z = alice::matmul(b.z, q);
        CHECK(std::abs(alice::self_supervised_loss(r, t).loss - self0) <= 1e-12);
        CHECK(std::abs(alice::supervised_contrastive_loss(r, t).loss - sup0) <= 1e-12);
    }
    SUBCASE("row permutation") {
        std::vector<std::size_t> perm(b.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), g);
        ContrastiveBatch p;
        p.z = Matrix(b.size(), 5);
        for (std::size_t i = 0; i < b.size(); ++i) {
            for (std::size_t j = 0; j < 5; ++j) p.z(i, j) = b.z(perm[i], j);
            p.labels.push_back(b.labels[perm[i]]);
            p.view_origin.push_back(b.view_origin[perm[i]]);
        }
        CHECK(std::abs(alice::self_supervised_loss(p, t).loss - self0) <= 1e-12);
        CHECK(std::abs(alice::supervised_contrastive_loss(p, t).loss - sup0) <= 1e-12);
    }
}

TEST_CASE("supervised loss reduces to the self-supervised one on distinct labels") {
    auto g = testutil::rng(13);
    for (std::size_t sources : {2ull, 4ull, 8ull}) {
        ContrastiveBatch b = random_batch(sources, 5, sources, g);
        Temperature t;
        auto sup = alice::supervised_contrastive_loss(b, t);
        auto self = alice::self_supervised_loss(b, t);
        CHECK(std::abs(sup.loss - self.loss) <= 1e-12);
        CHECK((sup.dz - self.dz).max_abs() <= 1e-12);
    }
}

TEST_CASE("supervised loss error cases") {
    Temperature t;
    SUBCASE("single class leaves no negatives") {
        ContrastiveBatch b = axis_batch();
        b.labels = {0, 0, 0, 0};
        CHECK_THROWS_AS(alice::supervised_contrastive_loss(b, t),
                        alice::ValidationError);
    }
    SUBCASE("anchor without positives is named") {
        // inconsistent hand-built labels: row 0 alone in class 2
        ContrastiveBatch b = axis_batch();
        b.labels = {2, 0, 1, 1};
        try {
            alice::supervised_contrastive_loss(b, t);
            FAIL("expected a validation error");
        } catch (const alice::ValidationError& e) {
            CHECK(std::string(e.what()).find("anchor 0") != std::string::npos);
        }
    }
}

TEST_CASE("tightening classes lowers the supervised loss") {
    // views on unit circles in disjoint planes: cross-class dots stay 0
    auto batch_at = [](double alpha) {
        ContrastiveBatch b;
        b.z = Matrix(8, 4, 0.0);
        const double angles[4] = {1.0, -1.0, 2.0, -2.0};
        for (int v = 0; v < 4; ++v) {
            b.z(v, 0) = std::cos(alpha * angles[v]);
            b.z(v, 1) = std::sin(alpha * angles[v]);
            b.z(4 + v, 2) = std::cos(alpha * angles[v]);
            b.z(4 + v, 3) = std::sin(alpha * angles[v]);
        }
        b.labels = {0, 0, 0, 0, 1, 1, 1, 1};
        b.view_origin = {0, 0, 1, 1, 2, 2, 3, 3};
        return b;
    };
    Temperature t;
    const double wide = alice::supervised_contrastive_loss(batch_at(0.5), t).loss;
    const double tight = alice::supervised_contrastive_loss(batch_at(0.25), t).loss;
    CHECK(tight < wide);
}

TEST_CASE("contrastive gradients match finite differences") {
    auto g = testutil::rng(17);
    Temperature t;
    const double h = 1e-7;
    for (std::size_t sources : {2ull, 4ull, 8ull}) {
        ContrastiveBatch b = random_batch(sources, 5, 2, g);
        for (int variant = 0; variant < 2; ++variant) {
            auto eval = [&](const ContrastiveBatch& bb) {
                return variant == 0 ? alice::self_supervised_loss(bb, t)
                                    : alice::supervised_contrastive_loss(bb, t);
            };
            auto res = eval(b);
            for (std::size_t i = 0; i < b.z.size(); ++i) {
                ContrastiveBatch bp = b, bm = b;
                bp.z.data()[i] += h;
                bm.z.data()[i] -= h;
                const double fd = (eval(bp).loss - eval(bm).loss) / (2.0 * h);
                CHECK(std::abs(fd - res.dz.data()[i]) <=
                      1e-4 * std::max(1.0, std::abs(res.dz.data()[i])) + 1e-5);
            }
        }
    }
}

TEST_CASE("triplet gap") {
    Temperature t;
    t.tau = 0.1;
    std::vector<double> a = {1, 0, 0};

    SUBCASE("hand evaluation") {
        auto zp = unit3(0.9, std::sqrt(1.0 - 0.81), 0.0);
        std::vector<double> zn = {0.1, 0.0, std::sqrt(1.0 - 0.01)};
        auto gap = alice::triplet_gap(a, zp, zn, t);
        CHECK(std::abs(gap.exact - std::log(1.0 + std::exp(-8.0))) <= 1e-12);
        CHECK(std::abs(gap.exact - 3.3535e-4) <= 1e-7);
        // |a-p|^2 - |a-n|^2 + 2 tau with unit vectors
        CHECK(gap.approx == doctest::Approx(0.2 - 1.8 + 0.2).epsilon(1e-9));
    }
    SUBCASE("coincident positive and negative") {
        auto z = unit3(0.3, 0.4, 0.5);
        auto gap = alice::triplet_gap(a, z, z, t);
        CHECK(std::abs(gap.exact - std::log(2.0)) <= 1e-12);
    }
    SUBCASE("softmax form agrees with the log1p form") {
        auto g = testutil::rng(19);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int i = 0; i < 100; ++i) {
            auto za = unit3(u(g), u(g), u(g));
            auto zp = unit3(u(g), u(g), u(g));
            auto zn = unit3(u(g), u(g), u(g));
            const double ap =
                za[0] * zp[0] + za[1] * zp[1] + za[2] * zp[2];
            const double an =
                za[0] * zn[0] + za[1] * zn[1] + za[2] * zn[2];
            const double m = std::max(ap, an) / t.tau;
            const double softmax_form =
                -(ap / t.tau - m) + std::log(std::exp(ap / t.tau - m) +
                                             std::exp(an / t.tau - m));
            auto gap = alice::triplet_gap(za, zp, zn, t);
            CHECK(std::abs(gap.exact - softmax_form) <= 1e-12);
        }
    }
    SUBCASE("monotone in both similarities") {
        double prev = alice::triplet_gap(a, unit3(0.2, std::sqrt(0.96), 0), a, t).exact;
        for (double c : {0.4, 0.6, 0.8}) {
            const double cur =
                alice::triplet_gap(a, unit3(c, std::sqrt(1 - c * c), 0), a, t).exact;
            CHECK(cur < prev);
            prev = cur;
        }
        prev = alice::triplet_gap(a, a, unit3(0.2, 0, std::sqrt(0.96)), t).exact;
        for (double c : {0.4, 0.6, 0.8}) {
            const double cur =
                alice::triplet_gap(a, a, unit3(c, 0, std::sqrt(1 - c * c)), t).exact;
            CHECK(cur > prev);
            prev = cur;
        }
    }
}

TEST_CASE("view construction") {
    auto g = testutil::rng(23);
    Matrix x = testutil::random_matrix(3, 4, g);
    std::vector<int> labels = {2, 0, 1};

    SUBCASE("identity augmentation duplicates rows") {
        alice::AugmentConfig id;
        id.noise_sigma = 0.0;
        id.dropout_p = 0.0;
        id.scale_s = 0.0;
        auto vb = alice::make_views(x, labels, id, 7);
        REQUIRE(vb.views.rows() == 6);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                CHECK(vb.views(2 * i, j) == x(i, j));
                CHECK(vb.views(2 * i + 1, j) == x(i, j));
            }
    }
    SUBCASE("bookkeeping and determinism") {
        alice::AugmentConfig cfg;
        auto v1 = alice::make_views(x, labels, cfg, 7);
        auto v2 = alice::make_views(x, labels, cfg, 7);
        auto v3 = alice::make_views(x, labels, cfg, 8);
        CHECK((v1.views - v2.views).max_abs() == 0.0);
        CHECK((v1.views - v3.views).max_abs() > 0.0);
        std::vector<int> seen(3, 0);
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(v1.labels[i] == labels[v1.view_origin[i]]);
            seen[v1.view_origin[i]]++;
        }
        CHECK(seen == std::vector<int>{2, 2, 2});
        // the two views of a sample are independently augmented
        bool differ = false;
        for (std::size_t j = 0; j < 4; ++j)
            differ = differ || v1.views(0, j) != v1.views(1, j);
        CHECK(differ);
    }
}

TEST_CASE("lightweight random augmentation") {
    std::vector<double> x = {1.0, -2.0, 0.5, 3.0};

    SUBCASE("zero magnitudes are the identity") {
        alice::AugmentConfig id{0.0, 0.0, 0.0};
        CHECK(alice::rand_augment_lite(x, id, 42) == x);
    }
    SUBCASE("full dropout zeroes everything") {
        alice::AugmentConfig cfg{0.0, 1.0, 0.0};
        auto out = alice::rand_augment_lite(x, cfg, 42);
        for (double v : out) CHECK(v == 0.0);
    }
    SUBCASE("seeded determinism and finiteness") {
        alice::AugmentConfig cfg;
        auto a = alice::rand_augment_lite(x, cfg, 5);
        auto b = alice::rand_augment_lite(x, cfg, 5);
        CHECK(a == b);
        for (double v : a) CHECK(std::isfinite(v));
    }
    SUBCASE("config validation") {
        alice::AugmentConfig bad{-0.1, 0.0, 0.0};
        CHECK_THROWS_AS(bad.validate(), alice::ValidationError);
        bad = {0.0, 1.5, 0.0};
        CHECK_THROWS_AS(bad.validate(), alice::ValidationError);
    }
}

TEST_CASE("mixup") {
    std::vector<double> x1 = {0.0, 0.0}, x2 = {2.0, 2.0};
    std::vector<double> y1 = {1.0, 0.0}, y2 = {0.0, 1.0};

    SUBCASE("endpoints and midpoint") {
        auto full = alice::mixup(x1, x2, y1, y2, 1.0);
        CHECK(full.x == x1);
        CHECK(full.y == y1);
        auto mid = alice::mixup(x1, x2, y1, y2, 0.5);
        CHECK(mid.x[0] == doctest::Approx(1.0));
        CHECK(mid.y[0] == doctest::Approx(0.5));
    }
    SUBCASE("labels stay on the simplex") {
        auto g = testutil::rng(29);
        for (int i = 0; i < 50; ++i) {
            auto res = alice::mixup(x1, x2, y1, y2, g, 0.2);
            CHECK(res.lambda >= 0.0);
            CHECK(res.lambda <= 1.0);
            CHECK(res.y[0] + res.y[1] == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(res.y[0] >= 0.0);
            CHECK(res.y[1] >= 0.0);
        }
    }
    SUBCASE("argument validation") {
        CHECK_THROWS_AS(alice::mixup(x1, {1.0}, y1, y2, 0.5), alice::ShapeError);
        CHECK_THROWS_AS(alice::mixup(x1, x2, y1, y2, 1.5), alice::ValidationError);
    }
}
