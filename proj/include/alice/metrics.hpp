#pragma once

#include <string>
#include <vector>

namespace alice {

struct MetricsRecord {
    std::string stage;
    long epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    double mean_residual = 0.0;
    double mean_rank = 0.0;
    double mean_sparsity = 0.0;
    double wall_clock_s = 0.0;
};

bool operator==(const MetricsRecord& a, const MetricsRecord& b);

// One flat JSON object per line, fixed key order, appended to path.
void emit_metrics(const std::vector<MetricsRecord>& records, const std::string& path);
std::vector<MetricsRecord> read_metrics(const std::string& path);

// Flattens a metrics file into a CSV of plot-ready columns.
void export_curves_csv(const std::string& metrics_path, const std::string& out_csv);

} // namespace alice
