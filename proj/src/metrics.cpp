#include "alice/metrics.hpp"

#include <fstream>

#include <json.hpp>

#include "alice/errors.hpp"

namespace alice {

using ordered_json = nlohmann::ordered_json;

bool operator==(const MetricsRecord& a, const MetricsRecord& b) {
    return a.stage == b.stage && a.epoch == b.epoch && a.loss == b.loss &&
           a.accuracy == b.accuracy && a.mean_residual == b.mean_residual &&
           a.mean_rank == b.mean_rank && a.mean_sparsity == b.mean_sparsity &&
           a.wall_clock_s == b.wall_clock_s;
}

void emit_metrics(const std::vector<MetricsRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot open '" + path + "' for appending");
    for (const MetricsRecord& r : records) {
        ordered_json j;
        j["stage"] = r.stage;
        j["epoch"] = r.epoch;
        j["loss"] = r.loss;
        j["accuracy"] = r.accuracy;
        j["mean_residual"] = r.mean_residual;
        j["mean_rank"] = r.mean_rank;
        j["mean_sparsity"] = r.mean_sparsity;
        j["wall_clock_s"] = r.wall_clock_s;
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("write to '" + path + "' failed");
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::vector<MetricsRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        MetricsRecord r;
        try {
            r.stage = j.at("stage").get<std::string>();
            r.epoch = j.at("epoch").get<long>();
            r.loss = j.at("loss").get<double>();
            r.accuracy = j.at("accuracy").get<double>();
            r.mean_residual = j.at("mean_residual").get<double>();
            r.mean_rank = j.at("mean_rank").get<double>();
            r.mean_sparsity = j.at("mean_sparsity").get<double>();
            r.wall_clock_s = j.at("wall_clock_s").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(std::move(r));
    }
    return out;
}

void export_curves_csv(const std::string& metrics_path, const std::string& out_csv) {
    const std::vector<MetricsRecord> records = read_metrics(metrics_path);
    std::ofstream out(out_csv);
    if (!out) throw IoError("cannot open '" + out_csv + "' for writing");
    out << "stage,epoch,loss,accuracy,mean_residual,mean_rank,mean_sparsity,wall_clock_s\n";
    out.precision(17);
    for (const MetricsRecord& r : records)
        out << r.stage << "," << r.epoch << "," << r.loss << "," << r.accuracy << ","
            << r.mean_residual << "," << r.mean_rank << "," << r.mean_sparsity << ","
            << r.wall_clock_s << "\n";
    if (!out) throw IoError("write to '" + out_csv + "' failed");
}

} // namespace alice
