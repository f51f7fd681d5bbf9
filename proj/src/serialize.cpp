#include "alice/serialize.hpp"

#include <fstream>

#include "alice/errors.hpp"

namespace alice {

namespace {

ordered_json matrix_to_json(const Matrix& m) {
    ordered_json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    j["data"] = m.data();
    return j;
}

Matrix matrix_from_json(const ordered_json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    const auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != m.size())
        throw ValidationError("checkpoint: matrix payload length mismatch");
    m.data() = data;
    return m;
}

ordered_json layer_to_json(const Layer& layer) {
    ordered_json j;
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        j["type"] = "dense";
        j["w"] = matrix_to_json(d->w);
        j["b"] = d->b;
    } else if (std::get_if<ReluLayer>(&layer)) {
        j["type"] = "relu";
    } else if (const auto* bn = std::get_if<BatchNormLayer>(&layer)) {
        j["type"] = "batchnorm";
        j["gamma"] = bn->gamma;
        j["beta"] = bn->beta;
        j["running_mean"] = bn->running_mean;
        j["running_var"] = bn->running_var;
        j["momentum"] = bn->momentum;
        j["eps"] = bn->eps;
    } else {
        j["type"] = "l2normalize";
    }
    return j;
}

Layer layer_from_json(const ordered_json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "dense") {
        DenseLayer d;
        d.w = matrix_from_json(j.at("w"));
        d.b = j.at("b").get<std::vector<double>>();
        if (d.b.size() != d.w.rows())
            throw ValidationError("checkpoint: dense bias length mismatch");
        d.gw = Matrix(d.w.rows(), d.w.cols(), 0.0);
        d.gb.assign(d.b.size(), 0.0);
        return d;
    }
    if (type == "relu") return ReluLayer{};
    if (type == "batchnorm") {
        BatchNormLayer bn;
        bn.gamma = j.at("gamma").get<std::vector<double>>();
        bn.beta = j.at("beta").get<std::vector<double>>();
        bn.running_mean = j.at("running_mean").get<std::vector<double>>();
        bn.running_var = j.at("running_var").get<std::vector<double>>();
        bn.momentum = j.at("momentum").get<double>();
        bn.eps = j.at("eps").get<double>();
        const std::size_t n = bn.gamma.size();
        if (bn.beta.size() != n || bn.running_mean.size() != n || bn.running_var.size() != n)
            throw ValidationError("checkpoint: batchnorm vector length mismatch");
        bn.ggamma.assign(n, 0.0);
        bn.gbeta.assign(n, 0.0);
        return bn;
    }
    if (type == "l2normalize") return L2NormalizeLayer{};
    throw ValidationError("checkpoint: unknown layer type '" + type + "'");
}

ordered_json stack_to_json(const LayerStack& stack) {
    ordered_json arr = ordered_json::array();
    for (const Layer& l : stack) arr.push_back(layer_to_json(l));
    return arr;
}

LayerStack stack_from_json(const ordered_json& arr) {
    LayerStack out;
    for (const auto& j : arr) out.push_back(layer_from_json(j));
    return out;
}

ordered_json net_config_to_json(const NetConfig& c) {
    ordered_json j;
    j["input_dim"] = c.input_dim;
    j["class_count"] = c.class_count;
    j["hidden_dim"] = c.hidden_dim;
    j["embedding_dim"] = c.embedding_dim;
    j["proj_hidden"] = c.proj_hidden;
    j["proj_dim"] = c.proj_dim;
    j["spatial_positions"] = c.spatial_positions;
    j["channels"] = c.channels;
    j["reduced_channels"] = c.reduced_channels;
    return j;
}

NetConfig net_config_from_json(const ordered_json& j) {
    NetConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.class_count = j.at("class_count").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.proj_hidden = j.at("proj_hidden").get<std::size_t>();
    c.proj_dim = j.at("proj_dim").get<std::size_t>();
    c.spatial_positions = j.at("spatial_positions").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.reduced_channels = j.at("reduced_channels").get<std::size_t>();
    return c;
}

} // namespace

ordered_json network_to_json(const Network& net) {
    ordered_json j;
    j["config"] = net_config_to_json(net.config());
    j["mode"] = net.mode() == PipelineMode::Bilinear ? "bilinear" : "plain";
    j["has_projection"] = net.has_projection();
    j["trunk"] = stack_to_json(net.trunk());
    j["classifier"] = stack_to_json(net.classifier());
    j["projection"] = stack_to_json(net.projection());
    j["reduction"] = stack_to_json(net.reduction());
    return j;
}

Network network_from_json(const ordered_json& j) {
    Network net;
    net.set_config(net_config_from_json(j.at("config")));
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "bilinear")
        net.set_mode(PipelineMode::Bilinear);
    else if (mode == "plain")
        net.set_mode(PipelineMode::Plain);
    else
        throw ValidationError("checkpoint: unknown pipeline mode '" + mode + "'");
    net.set_has_projection(j.at("has_projection").get<bool>());
    net.trunk() = stack_from_json(j.at("trunk"));
    net.classifier() = stack_from_json(j.at("classifier"));
    net.projection() = stack_from_json(j.at("projection"));
    net.reduction() = stack_from_json(j.at("reduction"));
    return net;
}

ordered_json solver_config_to_json(const SolverConfig& cfg) {
    ordered_json j;
    j["alpha1"] = cfg.alpha1;
    j["alpha2"] = cfg.alpha2;
    j["mu_init"] = cfg.mu_init;
    j["rho_init"] = cfg.rho_init;
    j["growth"] = cfg.growth;
    j["max_iters"] = cfg.max_iters;
    j["y_step"] = cfg.y_step;
    j["y_inner_steps"] = cfg.y_inner_steps;
    j["residual_tol"] = cfg.residual_tol;
    j["conditional_rho_growth"] = cfg.conditional_rho_growth;
    return j;
}

SolverConfig solver_config_from_json(const ordered_json& j) {
    SolverConfig cfg;
    cfg.alpha1 = j.at("alpha1").get<double>();
    cfg.alpha2 = j.at("alpha2").get<double>();
    cfg.mu_init = j.at("mu_init").get<double>();
    cfg.rho_init = j.at("rho_init").get<double>();
    cfg.growth = j.at("growth").get<double>();
    cfg.max_iters = j.at("max_iters").get<std::size_t>();
    cfg.y_step = j.at("y_step").get<double>();
    cfg.y_inner_steps = j.at("y_inner_steps").get<std::size_t>();
    cfg.residual_tol = j.at("residual_tol").get<double>();
    cfg.conditional_rho_growth = j.at("conditional_rho_growth").get<bool>();
    cfg.validate();
    return cfg;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    ordered_json j;
    j["version"] = 1;
    j["stage"] = c.stage;
    j["seed"] = c.seed;
    j["network"] = network_to_json(c.net);
    j["solver"] = solver_config_to_json(c.solver);
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("checkpoint '" + path + "': " + e.what());
    }
    try {
        if (j.at("version").get<int>() != 1)
            throw ValidationError("checkpoint '" + path + "': unsupported version");
        Checkpoint c;
        c.stage = j.at("stage").get<std::string>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.net = network_from_json(j.at("network"));
        c.solver = solver_config_from_json(j.at("solver"));
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("checkpoint '" + path + "': " + e.what());
    }
}

} // namespace alice
