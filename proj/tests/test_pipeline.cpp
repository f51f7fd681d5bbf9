#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "alice/pipeline.hpp"
#include "test_util.hpp"

using alice::Dataset;
using alice::DenseLayer;
using alice::Head;
using alice::Matrix;
using alice::MetricsRecord;
using alice::Network;
using alice::TrainConfig;

namespace fs = std::filesystem;

namespace {

struct ScratchDir {
    fs::path root;
    ScratchDir() {
        root = fs::temp_directory_path() /
               ("pipeline_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(root);
    }
    ~ScratchDir() { fs::remove_all(root); }
    std::string file(const std::string& name) const { return (root / name).string(); }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TrainConfig tiny_cfg() {
    TrainConfig c;
    c.adversarial_epochs = 2;
    c.contrastive_epochs = 2;
    c.lagrangian_epochs = 1;
    c.learning_rate1 = 0.02;
    c.learning_rate2 = 0.002;
    c.batch_size = 16;
    c.attack_epsilon = 0.1;
    c.attack_steps = 2;
    c.hidden_dim = 8;
    c.embedding_dim = 6;
    c.spatial_positions = 3;
    c.channels = 2;
    c.reduced_channels = 2;
    c.proj_hidden = 6;
    c.proj_dim = 4;
    c.solver_max_iters = 8;
    c.record_timing = false;
    c.seed = 3;
    return c;
}

Dataset tiny_blobs(std::uint64_t seed = 7) {
    return alice::make_blobs(20, 5, 3, 6, 2.0, 0.5, seed);
}

DenseLayer dense_from(Matrix w) {
    DenseLayer d;
    d.gw = Matrix(w.rows(), w.cols(), 0.0);
    d.gb.assign(w.rows(), 0.0);
    d.b.assign(w.rows(), 0.0);
    d.w = std::move(w);
    return d;
}

// Trunk copies the two inputs into the first two embedding slots; the
// classifier reads them back, so logits equal the raw features.
Network passthrough_net() {
    alice::NetConfig nc;
    nc.input_dim = 2;
    nc.class_count = 2;
    nc.hidden_dim = 4;
    nc.embedding_dim = 4;
    nc.proj_hidden = 4;
    nc.proj_dim = 3;
    nc.spatial_positions = 2;
    nc.channels = 2;
    nc.reduced_channels = 2;
    Network net = Network::build(nc, 0);
    Matrix wt(4, 2, 0.0);
    wt(0, 0) = 1.0;
    wt(1, 1) = 1.0;
    net.trunk().clear();
    net.trunk().push_back(dense_from(wt));
    Matrix wc(2, 4, 0.0);
    wc(0, 0) = 1.0;
    wc(1, 1) = 1.0;
    net.classifier().clear();
    net.classifier().push_back(dense_from(wc));
    return net;
}

// Zeroed trunk weights give identically-zero embeddings, so every pooled
// covariance has zero trace and the solver path skips the sample.
void kill_trunk(Network& net) {
    for (auto& layer : net.trunk()) {
        if (auto* d = std::get_if<DenseLayer>(&layer)) {
            for (double& v : d->w.data()) v = 0.0;
            for (double& v : d->b) v = 0.0;
        }
    }
}

bool params_equal(Network& a, Network& b) {
    auto pa = a.parameters(), pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t k = 0; k < pa.size(); ++k) {
        if (pa[k].count != pb[k].count) return false;
        for (std::size_t i = 0; i < pa[k].count; ++i)
            if (pa[k].value[i] != pb[k].value[i]) return false;
    }
    return true;
}

} // namespace

TEST_CASE("train config json round trip and key policy") {
    TrainConfig c = tiny_cfg();
    c.attack_norm = "linf";
    c.mixup_alpha = 0.3;
    TrainConfig back = TrainConfig::from_json(c.to_json());
    CHECK(back.adversarial_epochs == c.adversarial_epochs);
    CHECK(back.learning_rate2 == c.learning_rate2);
    CHECK(back.attack_norm == "linf");
    CHECK(back.mixup_alpha == 0.3);
    CHECK(back.solver_mu_init == c.solver_mu_init);
    CHECK(back.seed == c.seed);
    CHECK(back.record_timing == false);

    alice::ordered_json j = c.to_json();
    j["bogus"] = 1;
    CHECK_THROWS_WITH_AS(TrainConfig::from_json(j), doctest::Contains("bogus"),
                         alice::ValidationError);
    alice::ordered_json typed = {{"batch_size", "many"}};
    CHECK_THROWS_AS(TrainConfig::from_json(typed), alice::ValidationError);
    CHECK_THROWS_AS(TrainConfig::from_json(alice::ordered_json::array()),
                    alice::ValidationError);
}

TEST_CASE("train config file loading") {
    ScratchDir dir;
    TrainConfig c = tiny_cfg();
    std::ofstream(dir.file("cfg.json")) << c.to_json().dump(2);
    TrainConfig back = TrainConfig::from_json_file(dir.file("cfg.json"));
    CHECK(back.embedding_dim == c.embedding_dim);

    CHECK_THROWS_AS(TrainConfig::from_json_file(dir.file("missing.json")),
                    alice::IoError);
    std::ofstream(dir.file("bad.json")) << "{ not json";
    CHECK_THROWS_AS(TrainConfig::from_json_file(dir.file("bad.json")),
                    alice::ValidationError);
}

TEST_CASE("train config validation") {
    TrainConfig c = tiny_cfg();
    CHECK(c.validate().empty());

    SUBCASE("reversed learning rates only warn") {
        c.learning_rate2 = c.learning_rate1 * 2.0;
        auto warnings = c.validate();
        REQUIRE(warnings.size() == 1);
        CHECK(warnings[0].find("learning_rate2") != std::string::npos);
    }
    SUBCASE("hard violations throw") {
        c.batch_size = 0;
        CHECK_THROWS_AS(c.validate(), alice::ValidationError);
        c = tiny_cfg();
        c.tau = 0.0;
        CHECK_THROWS_AS(c.validate(), alice::ValidationError);
        c = tiny_cfg();
        c.embedding_dim = 7;
        CHECK_THROWS_AS(c.validate(), alice::ValidationError);
        c = tiny_cfg();
        c.momentum = 1.0;
        CHECK_THROWS_AS(c.validate(), alice::ValidationError);
        c = tiny_cfg();
        c.attack_norm = "l7";
        CHECK_THROWS_AS(c.validate(), alice::ValidationError);
    }
}

TEST_CASE("derived configs mirror the flat fields") {
    TrainConfig c = tiny_cfg();
    c.attack_norm = "linf";
    auto atk = c.attack_config();
    CHECK(atk.epsilon == c.attack_epsilon);
    CHECK(atk.norm == alice::AttackNorm::Linf);
    auto aug = c.augment_config();
    CHECK(aug.dropout_p == c.augment_dropout_p);
    auto sol = c.solver_config();
    CHECK(sol.alpha1 == c.solver_alpha1);
    CHECK(sol.max_iters == c.solver_max_iters);
    auto nc = c.net_config(6, 3);
    CHECK(nc.input_dim == 6);
    CHECK(nc.class_count == 3);
    CHECK(nc.channels == c.channels);
}

TEST_CASE("checkpoint round trip") {
    ScratchDir dir;
    Dataset d = tiny_blobs();
    TrainConfig cfg = tiny_cfg();
    Network net = Network::build(cfg.net_config(6, 3), 5);
    // a few steps so the weights are not the raw initialization
    alice::SgdOptimizer opt(net, {0.05, 0.9, 5e-4});
    for (int i = 0; i < 3; ++i)
        alice::clean_train_step(net, d.train.x, d.train.labels, opt);

    SUBCASE("plain checkpoint") {
        alice::Checkpoint c;
        c.stage = "adversarial";
        c.seed = 17;
        c.net = net;
        c.solver = cfg.solver_config();
        alice::save_checkpoint(c, dir.file("ck.json"));
        alice::Checkpoint back = alice::load_checkpoint(dir.file("ck.json"));
        CHECK(back.stage == "adversarial");
        CHECK(back.seed == 17);
        CHECK(back.solver.alpha1 == c.solver.alpha1);
        CHECK(back.solver.max_iters == c.solver.max_iters);
        CHECK(back.net.mode() == alice::PipelineMode::Plain);
        CHECK(params_equal(net, back.net));
    }
    SUBCASE("bilinear checkpoint keeps the mode") {
        net.rebuild_bilinear_classifier(9);
        alice::Checkpoint c;
        c.stage = "final";
        c.net = net;
        c.solver = cfg.solver_config();
        alice::save_checkpoint(c, dir.file("ck2.json"));
        alice::Checkpoint back = alice::load_checkpoint(dir.file("ck2.json"));
        CHECK(back.net.mode() == alice::PipelineMode::Bilinear);
        CHECK(!back.net.has_projection());
        CHECK(params_equal(net, back.net));
    }
    SUBCASE("load failures") {
        CHECK_THROWS_AS(alice::load_checkpoint(dir.file("none.json")), alice::IoError);
        std::ofstream(dir.file("junk.json")) << "]] nope";
        CHECK_THROWS_AS(alice::load_checkpoint(dir.file("junk.json")),
                        alice::ValidationError);
    }
}

TEST_CASE("evaluate on constructed classifiers") {
    Network net = passthrough_net();
    alice::DataSplit s;
    s.x = Matrix(3, 2);
    s.x(0, 0) = 2.0;
    s.x(0, 1) = 1.0;
    s.x(1, 0) = 1.0;
    s.x(1, 1) = 3.0;
    s.x(2, 0) = 5.0;
    s.x(2, 1) = 0.0;
    s.labels = {0, 1, 0};
    alice::SolverConfig sol;

    SUBCASE("perfect separation") {
        auto r = alice::evaluate(net, s, sol);
        CHECK(r.accuracy == 1.0);
        REQUIRE(r.per_class.size() == 2);
        CHECK(r.per_class[0] == 1.0);
        CHECK(r.per_class[1] == 1.0);
        CHECK(r.sample_count == 3);
        CHECK(r.solver_skips == 0);
    }
    SUBCASE("tied logits fall to the lowest class") {
        auto& head = std::get<DenseLayer>(net.classifier().front());
        for (double& v : head.w.data()) v = 0.0;
        auto r = alice::evaluate(net, s, sol);
        CHECK(r.accuracy == doctest::Approx(2.0 / 3.0));
        CHECK(r.per_class[0] == 1.0);
        CHECK(r.per_class[1] == 0.0);
    }
    SUBCASE("input width mismatch") {
        alice::DataSplit wide;
        wide.x = Matrix(1, 3, 0.2);
        wide.labels = {0};
        CHECK_THROWS_AS(alice::evaluate(net, wide, sol), alice::ValidationError);
    }
    SUBCASE("empty split") {
        alice::DataSplit empty;
        CHECK_THROWS_AS(alice::evaluate(net, empty, sol), alice::ValidationError);
    }
    SUBCASE("label outside checkpoint range") {
        s.labels = {0, 2, 0};
        CHECK_THROWS_AS(alice::evaluate(net, s, sol), alice::ValidationError);
    }
}

TEST_CASE("second-order evaluation counts unusable samples as wrong") {
    TrainConfig cfg = tiny_cfg();
    Dataset d = tiny_blobs();
    Network net = Network::build(cfg.net_config(6, 3), 2);
    kill_trunk(net);
    net.rebuild_bilinear_classifier(1);
    auto r = alice::evaluate(net, d.test, cfg.solver_config());
    CHECK(r.solver_skips == d.test.size());
    CHECK(r.accuracy == 0.0);
}

TEST_CASE("adversarial pretraining stage") {
    Dataset d = tiny_blobs();
    TrainConfig cfg = tiny_cfg();

    SUBCASE("zero epochs leave the initialization untouched") {
        cfg.adversarial_epochs = 0;
        Network net = Network::build(cfg.net_config(6, 3), cfg.seed);
        Network ref = Network::build(cfg.net_config(6, 3), cfg.seed);
        std::vector<MetricsRecord> metrics;
        alice::stage_adversarial_pretrain(net, d, cfg, metrics);
        CHECK(metrics.empty());
        CHECK(params_equal(net, ref));
    }
    SUBCASE("zero budget follows the clean baseline trajectory exactly") {
        cfg.attack_epsilon = 0.0;
        cfg.adversarial_epochs = 3;
        cfg.contrastive_epochs = 0;
        cfg.lagrangian_epochs = 0;
        Network net = Network::build(cfg.net_config(6, 3), cfg.seed);
        std::vector<MetricsRecord> metrics;
        alice::stage_adversarial_pretrain(net, d, cfg, metrics);

        auto base = alice::train_baseline(d, cfg, "");
        REQUIRE(metrics.size() == 3);
        REQUIRE(base.metrics.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(metrics[i].loss == base.metrics[i].loss);
            CHECK(metrics[i].accuracy == base.metrics[i].accuracy);
        }
    }
    SUBCASE("smoke run beats chance comfortably") {
        for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
            Dataset blobs = alice::make_blobs(20, 5, 3, 6, 2.5, 0.3, seed);
            TrainConfig c = tiny_cfg();
            c.adversarial_epochs = 15;
            c.seed = seed;
            Network net = Network::build(c.net_config(6, 3), seed);
            std::vector<MetricsRecord> metrics;
            alice::stage_adversarial_pretrain(net, blobs, c, metrics);
            CHECK(metrics.back().accuracy > 1.0 / 3.0 + 0.3);
        }
    }
    SUBCASE("empty train split") {
        Dataset empty;
        empty.class_count = 2;
        Network net = Network::build(cfg.net_config(6, 3), 1);
        std::vector<MetricsRecord> metrics;
        CHECK_THROWS_AS(alice::stage_adversarial_pretrain(net, empty, cfg, metrics),
                        alice::ValidationError);
    }
}

TEST_CASE("contrastive stage") {
    Dataset d = tiny_blobs();
    TrainConfig cfg = tiny_cfg();

    SUBCASE("identity augmentation with zero rate holds the loss constant") {
        cfg.learning_rate1 = 0.0;
        cfg.weight_decay = 0.0;
        cfg.augment_noise_sigma = 0.0;
        cfg.augment_dropout_p = 0.0;
        cfg.augment_scale_s = 0.0;
        cfg.contrastive_epochs = 3;
        cfg.batch_size = d.train.size();
        Network net = Network::build(cfg.net_config(6, 3), 4);
        std::vector<MetricsRecord> metrics;
        alice::stage_contrastive(net, d, cfg, metrics);
        REQUIRE(metrics.size() == 3);
        CHECK(std::abs(metrics[1].loss - metrics[0].loss) <= 1e-9);
        CHECK(std::abs(metrics[2].loss - metrics[0].loss) <= 1e-9);
    }
    SUBCASE("loss decreases and the classifier stays frozen") {
        cfg.learning_rate1 = 0.05;
        cfg.contrastive_epochs = 6;
        Network net = Network::build(cfg.net_config(6, 3), 4);
        std::vector<double> cls_before;
        for (auto& pv : net.parameters())
            if (pv.name.rfind("classifier.", 0) == 0)
                cls_before.insert(cls_before.end(), pv.value, pv.value + pv.count);

        std::vector<MetricsRecord> metrics;
        alice::stage_contrastive(net, d, cfg, metrics);
        REQUIRE(metrics.size() == 6);
        CHECK(metrics.back().loss < metrics.front().loss);

        std::vector<double> cls_after;
        bool projection_moved = false;
        Network ref = Network::build(cfg.net_config(6, 3), 4);
        auto pn = net.parameters();
        auto pr = ref.parameters();
        for (std::size_t k = 0; k < pn.size(); ++k) {
            if (pn[k].name.rfind("classifier.", 0) == 0)
                cls_after.insert(cls_after.end(), pn[k].value,
                                 pn[k].value + pn[k].count);
            if (pn[k].name.rfind("projection.", 0) == 0)
                for (std::size_t i = 0; i < pn[k].count; ++i)
                    if (pn[k].value[i] != pr[k].value[i]) projection_moved = true;
        }
        CHECK(cls_after == cls_before);
        CHECK(projection_moved);
    }
    SUBCASE("a bilinear checkpoint cannot enter the contrastive stage") {
        Network net = Network::build(cfg.net_config(6, 3), 4);
        net.rebuild_bilinear_classifier(2);
        std::vector<MetricsRecord> metrics;
        CHECK_THROWS_AS(alice::stage_contrastive(net, d, cfg, metrics),
                        alice::ValidationError);
    }
}

TEST_CASE("lagrangian fine-tune stage") {
    Dataset d = tiny_blobs();
    TrainConfig cfg = tiny_cfg();

    SUBCASE("switches to the second-order path and reports solver stats") {
        cfg.lagrangian_epochs = 2;
        Network net = Network::build(cfg.net_config(6, 3), 6);
        std::vector<MetricsRecord> metrics;
        alice::stage_lagrangian_finetune(net, d, cfg, metrics);
        CHECK(net.mode() == alice::PipelineMode::Bilinear);
        CHECK(!net.has_projection());
        REQUIRE(metrics.size() == 2);
        for (const auto& r : metrics) {
            CHECK(r.stage == "lagrangian");
            CHECK(std::isfinite(r.loss));
            CHECK(r.mean_rank > 0.0);
            CHECK(r.mean_residual >= 0.0);
        }
    }
    SUBCASE("degenerate solver settings still train") {
        cfg.solver_alpha1 = 0.0;
        cfg.solver_alpha2 = 0.0;
        cfg.solver_mu_init = 0.0;
        cfg.solver_max_iters = 2;
        Network net = Network::build(cfg.net_config(6, 3), 6);
        std::vector<MetricsRecord> metrics;
        alice::stage_lagrangian_finetune(net, d, cfg, metrics);
        REQUIRE(metrics.size() == 1);
        CHECK(std::isfinite(metrics[0].loss));
    }
    SUBCASE("wholesale solver failure aborts the stage") {
        Network net = Network::build(cfg.net_config(6, 3), 6);
        kill_trunk(net);
        std::vector<MetricsRecord> metrics;
        CHECK_THROWS_AS(alice::stage_lagrangian_finetune(net, d, cfg, metrics),
                        alice::DivergenceError);
    }
}

TEST_CASE("regularization knobs act on pipeline-pooled covariances") {
    // same plumbing the fine-tune stage uses: embedding -> feature map ->
    // reduction -> position-centered pooling, then the normalizing solver
    TrainConfig cfg = tiny_cfg();
    cfg.reduced_channels = 3;
    cfg.channels = 3;
    cfg.spatial_positions = 4;
    cfg.embedding_dim = 12;
    Dataset d = alice::make_blobs(4, 1, 2, 6, 2.0, 0.5, 31);
    Network net = Network::build(cfg.net_config(6, 2), 8);

    const Matrix emb = net.forward(d.train.x, Head::Embedding, false);
    alice::SymmetricMatrix pooled = alice::SymmetricMatrix::from(Matrix(3, 3, 0.0));
    bool found = false;
    for (std::size_t i = 0; i < emb.rows() && !found; ++i) {
        std::vector<double> row(emb.cols());
        for (std::size_t j = 0; j < emb.cols(); ++j) row[j] = emb(i, j);
        const auto fm = alice::reshape_to_feature_map(row, 4, 3);
        alice::StackCache cache;
        const Matrix reduced = alice::stack_forward(net.reduction(), fm.values, cache, false);
        auto cand = alice::covariance_pool(alice::FeatureMap::from(reduced));
        if (cand.matrix().trace() > 1e-6) {
            pooled = cand;
            found = true;
        }
    }
    REQUIRE(found);

    alice::SolverConfig sol;
    sol.alpha2 = 0.0;
    sol.residual_tol = 1e-7;
    sol.max_iters = 250;
    std::size_t prev_rank = 4;
    for (double a1 : {0.0, 0.3, 1.0}) {
        sol.alpha1 = a1;
        auto res = alice::solve(pooled, sol);
        const std::size_t r = alice::numerical_rank(res.y, 1e-6);
        CHECK(r <= prev_rank);
        prev_rank = r;
    }
    sol.alpha1 = 0.0;
    double prev_zero = -1.0;
    for (double a2 : {0.0, 0.5, 1.0}) {
        sol.alpha2 = a2;
        auto res = alice::solve(pooled, sol);
        const double z = alice::near_zero_fraction(res.y, 1e-6);
        CHECK(z >= prev_zero);
        prev_zero = z;
    }
}

TEST_CASE("full pipeline run") {
    ScratchDir dir;
    Dataset d = tiny_blobs();
    TrainConfig cfg = tiny_cfg();

    auto res = alice::train_pipeline(d, cfg, dir.file("run"));

    SUBCASE("artifacts and metrics") {
        for (const char* name :
             {"checkpoint_adversarial.json", "checkpoint_contrastive.json",
              "checkpoint_final.json", "metrics.jsonl"})
            CHECK(fs::exists(dir.root / "run" / name));

        REQUIRE(res.metrics.size() == 5); // 2 + 2 + 1
        CHECK(res.metrics[0].stage == "adversarial");
        CHECK(res.metrics[2].stage == "contrastive");
        CHECK(res.metrics[4].stage == "lagrangian");
        CHECK(res.metrics[1].epoch == 1);

        auto on_disk = alice::read_metrics(dir.file("run/metrics.jsonl"));
        REQUIRE(on_disk.size() == res.metrics.size());
        for (std::size_t i = 0; i < on_disk.size(); ++i)
            CHECK(on_disk[i] == res.metrics[i]);

        CHECK(res.final_eval.sample_count == d.test.size());
        CHECK(res.final_eval.per_class.size() == 3);

        auto final_ck = alice::load_checkpoint(dir.file("run/checkpoint_final.json"));
        CHECK(final_ck.net.mode() == alice::PipelineMode::Bilinear);
        auto adv_ck = alice::load_checkpoint(dir.file("run/checkpoint_adversarial.json"));
        CHECK(adv_ck.net.mode() == alice::PipelineMode::Plain);
    }
    SUBCASE("identical seeds reproduce the run bit for bit") {
        auto res2 = alice::train_pipeline(d, cfg, dir.file("run2"));
        REQUIRE(res2.metrics.size() == res.metrics.size());
        for (std::size_t i = 0; i < res.metrics.size(); ++i)
            CHECK(res2.metrics[i] == res.metrics[i]);
        CHECK(res2.final_eval.accuracy == res.final_eval.accuracy);
        CHECK(slurp(dir.file("run2/checkpoint_final.json")) ==
              slurp(dir.file("run/checkpoint_final.json")));
        CHECK(slurp(dir.file("run2/metrics.jsonl")) ==
              slurp(dir.file("run/metrics.jsonl")));
    }
    SUBCASE("later stages never disturb stage-1 artifacts") {
        TrainConfig first_only = cfg;
        first_only.contrastive_epochs = 0;
        first_only.lagrangian_epochs = 0;
        alice::train_pipeline(d, first_only, dir.file("short"));
        CHECK(slurp(dir.file("short/checkpoint_adversarial.json")) ==
              slurp(dir.file("run/checkpoint_adversarial.json")));
    }
}

TEST_CASE("baseline trainer") {
    ScratchDir dir;
    Dataset d = tiny_blobs();
    TrainConfig cfg = tiny_cfg();

    auto res = alice::train_baseline(d, cfg, dir.file("base"));
    REQUIRE(res.metrics.size() == 5); // same epoch budget as the pipeline
    for (const auto& r : res.metrics) CHECK(r.stage == "baseline");
    CHECK(res.metrics.back().epoch == 4);

    auto ck = alice::load_checkpoint(dir.file("base/checkpoint_baseline.json"));
    CHECK(ck.net.mode() == alice::PipelineMode::Plain);

    Dataset tiny;
    tiny.class_count = 1;
    tiny.train = d.train;
    CHECK_THROWS_AS(alice::train_baseline(tiny, cfg, ""), alice::ValidationError);
}
