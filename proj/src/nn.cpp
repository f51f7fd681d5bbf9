#include "alice/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace alice {

std::size_t Tensor::count() const {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return shape.empty() ? 0 : n;
}

void Tensor::validate() const {
    if (data.size() != count())
        throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                         " does not match shape product " + std::to_string(count()));
    if (!grad.empty() && grad.size() != data.size())
        throw ShapeError("tensor: gradient length does not match data length");
}

Tensor Tensor::from_matrix(const Matrix& m) {
    Tensor t;
    t.shape = {m.rows(), m.cols()};
    t.data = m.data();
    return t;
}

Matrix Tensor::to_matrix() const {
    if (shape.size() != 2) throw ShapeError("tensor: rank-2 shape required");
    validate();
    Matrix m(shape[0], shape[1]);
    m.data() = data;
    return m;
}

namespace {

Matrix dense_forward(const DenseLayer& d, const Matrix& x) {
    if (x.cols() != d.w.cols())
        throw ShapeError("dense: input width " + std::to_string(x.cols()) +
                         " does not match layer fan-in " + std::to_string(d.w.cols()));
    Matrix y(x.rows(), d.w.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t o = 0; o < d.w.rows(); ++o) {
            double acc = d.b[o];
            for (std::size_t k = 0; k < d.w.cols(); ++k) acc += x(i, k) * d.w(o, k);
            y(i, o) = acc;
        }
    return y;
}

Matrix dense_backward(DenseLayer& d, const Matrix& gy, const LayerCache& cache) {
    const Matrix& x = cache.input;
    for (std::size_t o = 0; o < d.w.rows(); ++o) {
        double gbo = 0.0;
        for (std::size_t i = 0; i < gy.rows(); ++i) gbo += gy(i, o);
        d.gb[o] += gbo;
    }
    for (std::size_t o = 0; o < d.w.rows(); ++o)
        for (std::size_t k = 0; k < d.w.cols(); ++k) {
            double acc = 0.0;
            for (std::size_t i = 0; i < gy.rows(); ++i) acc += gy(i, o) * x(i, k);
            d.gw(o, k) += acc;
        }
    Matrix gx(x.rows(), x.cols(), 0.0);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t o = 0; o < d.w.rows(); ++o) {
            const double g = gy(i, o);
            if (g == 0.0) continue;
            for (std::size_t k = 0; k < d.w.cols(); ++k) gx(i, k) += g * d.w(o, k);
        }
    return gx;
}

Matrix batchnorm_forward(BatchNormLayer& bn, const Matrix& x, LayerCache& cache,
                         bool train) {
    const std::size_t dim = bn.gamma.size();
    if (x.cols() != dim) throw ShapeError("batchnorm: feature width mismatch");
    const std::size_t b = x.rows();
    if (train && b == 0) throw ValidationError("batchnorm: empty batch");

    cache.normalized = Matrix(b, dim);
    cache.inv_std.assign(dim, 0.0);

    Matrix y(b, dim);
    if (train) {
        for (std::size_t j = 0; j < dim; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < b; ++i) mean += x(i, j);
            mean /= static_cast<double>(b);
            double var = 0.0;
            for (std::size_t i = 0; i < b; ++i) {
                const double d = x(i, j) - mean;
                var += d * d;
            }
            var /= static_cast<double>(b);
            const double inv = 1.0 / std::sqrt(var + bn.eps);
            cache.inv_std[j] = inv;
            for (std::size_t i = 0; i < b; ++i) {
                const double xhat = (x(i, j) - mean) * inv;
                cache.normalized(i, j) = xhat;
                y(i, j) = bn.gamma[j] * xhat + bn.beta[j];
            }
            bn.running_mean[j] = bn.momentum * bn.running_mean[j] + (1.0 - bn.momentum) * mean;
            bn.running_var[j] = bn.momentum * bn.running_var[j] + (1.0 - bn.momentum) * var;
        }
    } else {
        for (std::size_t j = 0; j < dim; ++j) {
            const double inv = 1.0 / std::sqrt(bn.running_var[j] + bn.eps);
            cache.inv_std[j] = inv;
            for (std::size_t i = 0; i < b; ++i) {
                const double xhat = (x(i, j) - bn.running_mean[j]) * inv;
                cache.normalized(i, j) = xhat;
                y(i, j) = bn.gamma[j] * xhat + bn.beta[j];
            }
        }
    }
    return y;
}

Matrix batchnorm_backward(BatchNormLayer& bn, const Matrix& gy, const LayerCache& cache) {
    const std::size_t dim = bn.gamma.size();
    const std::size_t b = gy.rows();
    const Matrix& xhat = cache.normalized;

    Matrix gx(b, dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j) {
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            sum_gy += gy(i, j);
            sum_gy_xhat += gy(i, j) * xhat(i, j);
        }
        bn.gbeta[j] += sum_gy;
        bn.ggamma[j] += sum_gy_xhat;

        const double inv = cache.inv_std[j];
        if (cache.train) {
            const double n = static_cast<double>(b);
            // gx = gamma*inv/n * (n*gy - sum(gy) - xhat * sum(gy*xhat))
            for (std::size_t i = 0; i < b; ++i)
                gx(i, j) = bn.gamma[j] * inv / n *
                           (n * gy(i, j) - sum_gy - xhat(i, j) * sum_gy_xhat);
        } else {
            for (std::size_t i = 0; i < b; ++i) gx(i, j) = gy(i, j) * bn.gamma[j] * inv;
        }
    }
    return gx;
}

Matrix l2norm_forward(const Matrix& x, LayerCache& cache) {
    const std::size_t b = x.rows(), dim = x.cols();
    cache.inv_std.assign(b, 0.0);
    cache.normalized = Matrix(b, dim);
    Matrix y(b, dim);
    for (std::size_t i = 0; i < b; ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) n2 += x(i, j) * x(i, j);
        const double inv = 1.0 / std::max(std::sqrt(n2), 1e-12);
        cache.inv_std[i] = inv;
        for (std::size_t j = 0; j < dim; ++j) {
            y(i, j) = x(i, j) * inv;
            cache.normalized(i, j) = y(i, j);
        }
    }
    return y;
}

Matrix l2norm_backward(const Matrix& gy, const LayerCache& cache) {
    const Matrix& y = cache.normalized;
    const std::size_t b = gy.rows(), dim = gy.cols();
    Matrix gx(b, dim);
    for (std::size_t i = 0; i < b; ++i) {
        double proj = 0.0;
        for (std::size_t j = 0; j < dim; ++j) proj += y(i, j) * gy(i, j);
        for (std::size_t j = 0; j < dim; ++j)
            gx(i, j) = (gy(i, j) - y(i, j) * proj) * cache.inv_std[i];
    }
    return gx;
}

} // namespace

Matrix layer_forward(Layer& layer, const Matrix& x, LayerCache& cache, bool train) {
    cache.input = x;
    cache.train = train;
    return std::visit(
        [&](auto& l) -> Matrix {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, DenseLayer>) {
                return dense_forward(l, x);
            } else if constexpr (std::is_same_v<T, ReluLayer>) {
                Matrix y = x;
                for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
                return y;
            } else if constexpr (std::is_same_v<T, BatchNormLayer>) {
                return batchnorm_forward(l, x, cache, train);
            } else {
                return l2norm_forward(x, cache);
            }
        },
        layer);
}

Matrix layer_backward(Layer& layer, const Matrix& gy, const LayerCache& cache) {
    return std::visit(
        [&](auto& l) -> Matrix {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, DenseLayer>) {
                return dense_backward(l, gy, cache);
            } else if constexpr (std::is_same_v<T, ReluLayer>) {
                Matrix gx = gy;
                for (std::size_t i = 0; i < gx.size(); ++i)
                    if (cache.input.data()[i] <= 0.0) gx.data()[i] = 0.0;
                return gx;
            } else if constexpr (std::is_same_v<T, BatchNormLayer>) {
                return batchnorm_backward(l, gy, cache);
            } else {
                return l2norm_backward(gy, cache);
            }
        },
        layer);
}

Matrix stack_forward(LayerStack& stack, const Matrix& x, StackCache& cache, bool train) {
    cache.assign(stack.size(), LayerCache{});
    Matrix cur = x;
    for (std::size_t i = 0; i < stack.size(); ++i)
        cur = layer_forward(stack[i], cur, cache[i], train);
    return cur;
}

Matrix stack_backward(LayerStack& stack, const Matrix& gy, const StackCache& cache) {
    if (cache.size() != stack.size())
        throw ValidationError("stack backward: cache does not match stack");
    Matrix cur = gy;
    for (std::size_t i = stack.size(); i-- > 0;)
        cur = layer_backward(stack[i], cur, cache[i]);
    return cur;
}

void NetConfig::validate() const {
    if (input_dim == 0 || class_count == 0 || hidden_dim == 0 || embedding_dim == 0 ||
        proj_hidden == 0 || proj_dim == 0 || reduced_channels == 0)
        throw ValidationError("network config: dimensions must be positive");
    if (spatial_positions < 2)
        throw ValidationError("network config: need at least 2 spatial positions");
    if (spatial_positions * channels != embedding_dim)
        throw ValidationError("network config: embedding_dim must equal spatial_positions * channels");
}

namespace {

DenseLayer make_dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    DenseLayer d;
    d.w = Matrix(out, in);
    d.b.assign(out, 0.0);
    d.gw = Matrix(out, in, 0.0);
    d.gb.assign(out, 0.0);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (double& v : d.w.data()) v = u(rng);
    return d;
}

void collect_params(const std::string& prefix, LayerStack& stack,
                    std::vector<Network::ParamView>& out) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
        const std::string base = prefix + "." + std::to_string(i);
        if (auto* d = std::get_if<DenseLayer>(&stack[i])) {
            out.push_back({base + ".w", d->w.data().data(), d->gw.data().data(),
                           d->w.size()});
            out.push_back({base + ".b", d->b.data(), d->gb.data(), d->b.size()});
        } else if (auto* bn = std::get_if<BatchNormLayer>(&stack[i])) {
            out.push_back({base + ".gamma", bn->gamma.data(), bn->ggamma.data(),
                           bn->gamma.size()});
            out.push_back({base + ".beta", bn->beta.data(), bn->gbeta.data(),
                           bn->beta.size()});
        }
    }
}

} // namespace

Network Network::build(const NetConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Network net;
    net.cfg_ = cfg;
    std::mt19937_64 rng(seed);

    net.trunk_.push_back(make_dense(cfg.input_dim, cfg.hidden_dim, rng));
    net.trunk_.push_back(ReluLayer{});
    net.trunk_.push_back(make_dense(cfg.hidden_dim, cfg.embedding_dim, rng));

    net.classifier_.push_back(make_dense(cfg.embedding_dim, cfg.class_count, rng));

    net.projection_.push_back(make_dense(cfg.embedding_dim, cfg.proj_hidden, rng));
    net.projection_.push_back(ReluLayer{});
    net.projection_.push_back(make_dense(cfg.proj_hidden, cfg.proj_dim, rng));
    net.projection_.push_back(L2NormalizeLayer{});

    net.reduction_.push_back(make_dense(cfg.channels, cfg.reduced_channels, rng));
    net.reduction_.push_back(ReluLayer{});

    return net;
}

void Network::rebuild_bilinear_classifier(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t u = cfg_.reduced_channels * (cfg_.reduced_channels + 1) / 2;
    classifier_.clear();
    classifier_.push_back(make_dense(u, cfg_.class_count, rng));
    projection_.clear();
    has_projection_ = false;
    mode_ = PipelineMode::Bilinear;
    tape_.valid = false;
}

Matrix Network::forward(const Matrix& x, Head head, bool train) {
    if (x.cols() != cfg_.input_dim)
        throw ShapeError("network forward: input width " + std::to_string(x.cols()) +
                         " does not match input_dim " + std::to_string(cfg_.input_dim));
    tape_ = Tape{};
    tape_.head = head;

    Matrix embedding = stack_forward(trunk_, x, tape_.trunk_cache, train);
    Matrix out = embedding;
    if (head == Head::Classifier) {
        if (mode_ == PipelineMode::Bilinear)
            throw ValidationError("network forward: classifier head needs the pooled "
                                  "second-order path in bilinear mode");
        out = stack_forward(classifier_, embedding, tape_.head_cache, train);
    } else if (head == Head::Projection) {
        if (!has_projection_)
            throw ValidationError("network forward: projection head is absent");
        out = stack_forward(projection_, embedding, tape_.head_cache, train);
    }
    tape_.valid = true;
    return out;
}

Matrix Network::backward(const Matrix& loss_grad) {
    if (!tape_.valid)
        throw ValidationError("network backward: no stored forward pass");
    Matrix g = loss_grad;
    if (tape_.head == Head::Classifier)
        g = stack_backward(classifier_, g, tape_.head_cache);
    else if (tape_.head == Head::Projection)
        g = stack_backward(projection_, g, tape_.head_cache);
    Matrix gx = stack_backward(trunk_, g, tape_.trunk_cache);
    tape_.valid = false;
    return gx;
}

void Network::zero_grads() {
    for (const ParamView& p : parameters())
        std::fill(p.grad, p.grad + p.count, 0.0);
}

std::vector<Network::ParamView> Network::parameters() {
    std::vector<ParamView> out;
    collect_params("trunk", trunk_, out);
    collect_params("classifier", classifier_, out);
    collect_params("projection", projection_, out);
    collect_params("reduction", reduction_, out);
    return out;
}

void SgdConfig::validate() const {
    if (!(learning_rate >= 0.0))
        throw ValidationError("sgd config: learning rate must be nonnegative");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw ValidationError("sgd config: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0))
        throw ValidationError("sgd config: weight decay must be nonnegative");
}

SgdOptimizer::SgdOptimizer(Network& net, SgdConfig cfg, TrainScope scope) : cfg_(cfg) {
    cfg_.validate();
    const auto params = net.parameters();
    velocity_.reserve(params.size());
    trainable_.reserve(params.size());
    for (const auto& p : params) {
        velocity_.emplace_back(p.count, 0.0);
        bool on = true;
        if (p.name.rfind("trunk.", 0) == 0) {
            on = scope.trunk;
            const std::size_t layer =
                static_cast<std::size_t>(std::stoul(p.name.substr(6)));
            if (layer < scope.freeze_trunk_layers) on = false;
        } else if (p.name.rfind("classifier.", 0) == 0) {
            on = scope.classifier;
        } else if (p.name.rfind("projection.", 0) == 0) {
            on = scope.projection;
        } else if (p.name.rfind("reduction.", 0) == 0) {
            on = scope.reduction;
        }
        trainable_.push_back(on ? 1 : 0);
    }
}

void SgdOptimizer::step(Network& net) {
    const auto params = net.parameters();
    if (params.size() != velocity_.size())
        throw ValidationError("sgd step: network layout changed under the optimizer");
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (params[p].count != velocity_[p].size())
            throw ValidationError("sgd step: parameter shape changed under the optimizer");
        if (trainable_[p]) {
            double* value = params[p].value;
            double* grad = params[p].grad;
            std::vector<double>& vel = velocity_[p];
            for (std::size_t i = 0; i < vel.size(); ++i) {
                vel[i] = cfg_.momentum * vel[i] + grad[i] + cfg_.weight_decay * value[i];
                value[i] -= cfg_.learning_rate * vel[i];
            }
        }
        std::fill(params[p].grad, params[p].grad + params[p].count, 0.0);
    }
}

CrossEntropyResult softmax_cross_entropy(const Matrix& logits,
                                         const std::vector<int>& labels) {
    if (logits.rows() != labels.size())
        throw ShapeError("cross entropy: label count does not match batch size");
    const std::size_t b = logits.rows(), c = logits.cols();
    if (b == 0) throw ValidationError("cross entropy: empty batch");

    CrossEntropyResult out;
    out.dlogits = Matrix(b, c);
    out.per_sample.assign(b, 0.0);
    double total = 0.0;
    const double invb = 1.0 / static_cast<double>(b);

    for (std::size_t i = 0; i < b; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw ValidationError("cross entropy: label " + std::to_string(y) +
                                  " out of range for " + std::to_string(c) + " classes");
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits(i, j) - mx);
        const double log_denom = mx + std::log(denom);
        out.per_sample[i] = log_denom - logits(i, static_cast<std::size_t>(y));
        total += out.per_sample[i];
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(logits(i, j) - log_denom);
            out.dlogits(i, j) =
                (p - (j == static_cast<std::size_t>(y) ? 1.0 : 0.0)) * invb;
        }
    }
    out.loss = total * invb;
    return out;
}

CrossEntropyResult softmax_cross_entropy_soft(const Matrix& logits, const Matrix& targets) {
    if (!logits.same_shape(targets))
        throw ShapeError("cross entropy: target shape does not match logits");
    const std::size_t b = logits.rows(), c = logits.cols();
    if (b == 0) throw ValidationError("cross entropy: empty batch");

    CrossEntropyResult out;
    out.dlogits = Matrix(b, c);
    out.per_sample.assign(b, 0.0);
    double total = 0.0;
    const double invb = 1.0 / static_cast<double>(b);

    for (std::size_t i = 0; i < b; ++i) {
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits(i, j) - mx);
        const double log_denom = mx + std::log(denom);
        double li = 0.0;
        for (std::size_t j = 0; j < c; ++j)
            li += targets(i, j) * (log_denom - logits(i, j));
        out.per_sample[i] = li;
        total += li;
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(logits(i, j) - log_denom);
            out.dlogits(i, j) = (p - targets(i, j)) * invb;
        }
    }
    out.loss = total * invb;
    return out;
}

std::size_t argmax_row(const Matrix& m, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m.cols(); ++j)
        if (m(row, j) > m(row, best)) best = j;
    return best;
}

FeatureMap reshape_to_feature_map(const std::vector<double>& embedding, std::size_t m,
                                  std::size_t c) {
    if (embedding.size() != m * c)
        throw ShapeError("reshape: embedding length " + std::to_string(embedding.size()) +
                         " does not factor as " + std::to_string(m) + "x" +
                         std::to_string(c));
    Matrix values(m, c);
    values.data() = embedding;
    return FeatureMap::from(std::move(values));
}

std::vector<double> flatten_feature_map(const FeatureMap& f) {
    return f.values.data();
}

std::vector<double> upper_triangle(const Matrix& m) {
    if (m.rows() != m.cols()) throw ShapeError("upper_triangle: square input required");
    const std::size_t n = m.rows();
    std::vector<double> out;
    out.reserve(n * (n + 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) out.push_back(m(i, j));
    return out;
}

Matrix upper_triangle_grad(const std::vector<double>& g, std::size_t n) {
    if (g.size() != n * (n + 1) / 2)
        throw ShapeError("upper_triangle_grad: length does not match order");
    Matrix out(n, n, 0.0);
    std::size_t idx = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) out(i, j) = g[idx++];
    return out;
}

} // namespace alice
