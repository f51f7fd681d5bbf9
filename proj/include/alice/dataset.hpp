#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alice/matrix.hpp"

namespace alice {

struct DataSplit {
    Matrix x;
    std::vector<int> labels;

    std::size_t size() const { return x.rows(); }
    std::size_t dim() const { return x.cols(); }
    void validate() const;
};

struct Dataset {
    DataSplit train;
    DataSplit test;
    std::size_t class_count = 0;

    // Checks label ranges and that no feature row appears in both splits.
    void validate() const;
};

enum class DataFormat { Auto, Csv, Binary };

// CSV: header "label,f0,f1,...", one sample per row.
// Binary: "ALI1" magic, u32 count, u32 dims, u8 dtype (0 = u8, 1 = f32),
// then per sample a u32 label plus dims payload values. Little-endian.
DataSplit read_split(const std::string& path, DataFormat fmt = DataFormat::Auto);
void write_split_csv(const DataSplit& s, const std::string& path);
void write_split_binary(const DataSplit& s, const std::string& path, bool as_u8 = false);

// A directory holds train.* and test.*; a single file becomes the train split.
Dataset load_dataset(const std::string& path, DataFormat fmt = DataFormat::Auto);

// Per-class sampling without replacement, ceil(fraction * n_c) kept per class.
// Prefixes of a per-class seeded shuffle, so subsets nest across fractions
// under the same seed. The test split passes through untouched.
Dataset stratified_subset(const Dataset& d, double fraction, std::uint64_t seed);

// Gaussian class clusters with seeded centers, split into train/test.
Dataset make_blobs(std::size_t train_per_class, std::size_t test_per_class,
                   std::size_t classes, std::size_t dim, double center_spread,
                   double cluster_std, std::uint64_t seed);

} // namespace alice
