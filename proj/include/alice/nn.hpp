#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "alice/matrix.hpp"

namespace alice {

// Generic nd-array carrier. Batched layer math runs on Matrix (rows are
// samples); Tensor is the shape-checked interchange type.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad; // empty, or one slot per data element

    std::size_t count() const;
    void validate() const;
    static Tensor from_matrix(const Matrix& m);
    Matrix to_matrix() const; // requires rank-2 shape
};

struct DenseLayer {
    Matrix w; // out x in
    std::vector<double> b;
    Matrix gw;
    std::vector<double> gb;
};

struct ReluLayer {};

struct BatchNormLayer {
    std::vector<double> gamma, beta;
    std::vector<double> running_mean, running_var;
    std::vector<double> ggamma, gbeta;
    double momentum = 0.9;
    double eps = 1e-5;
};

struct L2NormalizeLayer {};

using Layer = std::variant<DenseLayer, ReluLayer, BatchNormLayer, L2NormalizeLayer>;

struct LayerCache {
    Matrix input;
    Matrix normalized;           // batchnorm x-hat / l2norm output
    std::vector<double> inv_std; // per-feature (batchnorm) or per-row (l2norm)
    bool train = false;
};

using LayerStack = std::vector<Layer>;
using StackCache = std::vector<LayerCache>;

// Caches are owned by the caller so several passes can stay alive at once.
Matrix layer_forward(Layer& layer, const Matrix& x, LayerCache& cache, bool train);
Matrix layer_backward(Layer& layer, const Matrix& gy, const LayerCache& cache);
Matrix stack_forward(LayerStack& stack, const Matrix& x, StackCache& cache, bool train);
Matrix stack_backward(LayerStack& stack, const Matrix& gy, const StackCache& cache);

enum class Head { Embedding, Classifier, Projection };
enum class PipelineMode { Plain, Bilinear };

struct NetConfig {
    std::size_t input_dim = 16;
    std::size_t class_count = 10;
    std::size_t hidden_dim = 128;
    std::size_t embedding_dim = 128; // must equal spatial_positions * channels
    std::size_t proj_hidden = 64;
    std::size_t proj_dim = 32;
    std::size_t spatial_positions = 8;
    std::size_t channels = 16;
    std::size_t reduced_channels = 8;

    void validate() const;
};

// Encoder trunk plus classifier / projection / reduction heads.
// Trunk: dense(hidden) relu dense(embedding). Projection: dense relu dense
// l2-normalize. Reduction: a per-position dense + relu over channel vectors.
class Network {
public:
    static Network build(const NetConfig& cfg, std::uint64_t seed);

    // x rows are samples. Stores the pass so backward can run once.
    Matrix forward(const Matrix& x, Head head, bool train);
    // Propagates loss_grad, accumulates parameter gradients, returns dL/dx.
    Matrix backward(const Matrix& loss_grad);
    void zero_grads();

    // Switches the classifier to consume vectorized upper triangles of the
    // pooled second-order features and drops the projection head.
    void rebuild_bilinear_classifier(std::uint64_t seed);

    struct ParamView {
        std::string name;
        double* value;
        double* grad;
        std::size_t count;
    };
    std::vector<ParamView> parameters(); // fixed enumeration order

    const NetConfig& config() const { return cfg_; }
    PipelineMode mode() const { return mode_; }
    bool has_projection() const { return has_projection_; }

    LayerStack& trunk() { return trunk_; }
    LayerStack& classifier() { return classifier_; }
    LayerStack& projection() { return projection_; }
    LayerStack& reduction() { return reduction_; }
    const LayerStack& trunk() const { return trunk_; }
    const LayerStack& classifier() const { return classifier_; }
    const LayerStack& projection() const { return projection_; }
    const LayerStack& reduction() const { return reduction_; }

    // Serialization hooks (exact round-trip); see nn_io.
    void set_mode(PipelineMode mode) { mode_ = mode; }
    void set_has_projection(bool v) { has_projection_ = v; }
    void set_config(const NetConfig& cfg) { cfg_ = cfg; }

private:
    NetConfig cfg_;
    PipelineMode mode_ = PipelineMode::Plain;
    bool has_projection_ = true;
    LayerStack trunk_, classifier_, projection_, reduction_;

    struct Tape {
        bool valid = false;
        Head head = Head::Embedding;
        StackCache trunk_cache, head_cache;
    } tape_;
};

struct SgdConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;

    void validate() const;
};

// Which parts of the network a training stage may update.
struct TrainScope {
    bool trunk = true;
    bool classifier = true;
    bool projection = true;
    bool reduction = true;
    std::size_t freeze_trunk_layers = 0; // leading trunk layers held fixed
};

// v <- momentum * v + grad + weight_decay * param; param -= lr * v.
// All gradients are cleared after the step.
class SgdOptimizer {
public:
    SgdOptimizer(Network& net, SgdConfig cfg, TrainScope scope = {});
    void step(Network& net);
    const SgdConfig& config() const { return cfg_; }

private:
    SgdConfig cfg_;
    std::vector<std::vector<double>> velocity_;
    std::vector<char> trainable_;
};

struct CrossEntropyResult {
    double loss;                    // mean over the batch
    Matrix dlogits;                 // gradient of the mean loss
    std::vector<double> per_sample; // individual losses
};

CrossEntropyResult softmax_cross_entropy(const Matrix& logits,
                                         const std::vector<int>& labels);
// Soft targets: each row a distribution over classes.
CrossEntropyResult softmax_cross_entropy_soft(const Matrix& logits, const Matrix& targets);

// Ties resolve to the lowest index.
std::size_t argmax_row(const Matrix& m, std::size_t row);

// Row-major reinterpretation of a length m*c embedding.
FeatureMap reshape_to_feature_map(const std::vector<double>& embedding, std::size_t m,
                                  std::size_t c);
std::vector<double> flatten_feature_map(const FeatureMap& f);

// Row-major upper triangle (diagonal included) of a square matrix.
std::vector<double> upper_triangle(const Matrix& m);
// Scatter an upper-triangle gradient back to matrix form (lower part zero).
Matrix upper_triangle_grad(const std::vector<double>& g, std::size_t n);

} // namespace alice
