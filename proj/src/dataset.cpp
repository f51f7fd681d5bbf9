#include "alice/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_set>

#include "alice/errors.hpp"

namespace alice {

namespace fs = std::filesystem;

void DataSplit::validate() const {
    if (labels.size() != x.rows())
        throw ValidationError("data split: label count does not match sample count");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0)
            throw ValidationError("data split: negative label at sample " +
                                  std::to_string(i));
    if (!x.all_finite()) throw ValidationError("data split: non-finite feature value");
}

namespace {

std::string row_key(const Matrix& x, const std::vector<int>& labels, std::size_t i) {
    std::string key(reinterpret_cast<const char*>(&labels[i]), sizeof(int));
    const double* row = x.data().data() + i * x.cols();
    key.append(reinterpret_cast<const char*>(row), x.cols() * sizeof(double));
    return key;
}

} // namespace

void Dataset::validate() const {
    train.validate();
    test.validate();
    if (class_count == 0) throw ValidationError("dataset: class count is zero");
    for (const DataSplit* s : {&train, &test})
        for (std::size_t i = 0; i < s->labels.size(); ++i)
            if (static_cast<std::size_t>(s->labels[i]) >= class_count)
                throw ValidationError("dataset: label " + std::to_string(s->labels[i]) +
                                      " outside [0, " + std::to_string(class_count) + ")");
    if (train.size() > 0 && test.size() > 0 && train.dim() != test.dim())
        throw ValidationError("dataset: train and test feature widths differ");
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < train.size(); ++i)
        seen.insert(row_key(train.x, train.labels, i));
    for (std::size_t i = 0; i < test.size(); ++i)
        if (seen.count(row_key(test.x, test.labels, i)))
            throw ValidationError("dataset: test sample " + std::to_string(i) +
                                  " also appears in the train split");
}

namespace {

DataSplit read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");

    std::string line;
    if (!std::getline(in, line))
        throw ValidationError(path + ":1: missing header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    if (header.empty() || header[0] != "label")
        throw ValidationError(path + ":1: header must start with 'label'");
    const std::size_t dims = header.size() - 1;
    if (dims == 0) throw ValidationError(path + ":1: no feature columns declared");

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            std::size_t pos = 0;
            try {
                if (col == 0) {
                    const long lab = std::stol(cell, &pos);
                    if (pos != cell.size()) throw std::invalid_argument(cell);
                    if (lab < 0)
                        throw ValidationError(path + ":" + std::to_string(lineno) +
                                              ": negative label");
                    labels.push_back(static_cast<int>(lab));
                } else {
                    const double v = std::stod(cell, &pos);
                    if (pos != cell.size()) throw std::invalid_argument(cell);
                    values.push_back(v);
                }
            } catch (const std::invalid_argument&) {
                throw ValidationError(path + ":" + std::to_string(lineno) +
                                      ": cannot parse '" + cell + "'");
            } catch (const std::out_of_range&) {
                throw ValidationError(path + ":" + std::to_string(lineno) +
                                      ": value out of range: '" + cell + "'");
            }
            ++col;
        }
        if (col != dims + 1)
            throw ValidationError(path + ":" + std::to_string(lineno) + ": expected " +
                                  std::to_string(dims + 1) + " cells, got " +
                                  std::to_string(col));
    }

    DataSplit out;
    out.x = Matrix(labels.size(), dims);
    out.x.data() = std::move(values);
    out.labels = std::move(labels);
    out.validate();
    return out;
}

template <typename T>
void write_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& path, const char* what) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in)
        throw ValidationError(path + ": truncated while reading " + what);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

DataSplit read_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ALI1", 4) != 0)
        throw ValidationError(path + ": bad magic, expected ALI1");
    const std::uint32_t count = read_le<std::uint32_t>(in, path, "sample count");
    const std::uint32_t dims = read_le<std::uint32_t>(in, path, "feature width");
    const std::uint8_t dtype = read_le<std::uint8_t>(in, path, "dtype");
    if (dtype > 1)
        throw ValidationError(path + ": unknown dtype " + std::to_string(dtype));
    if (dims == 0) throw ValidationError(path + ": zero feature width");

    DataSplit out;
    out.x = Matrix(count, dims);
    out.labels.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t lab = read_le<std::uint32_t>(in, path, "label");
        out.labels[i] = static_cast<int>(lab);
        for (std::uint32_t j = 0; j < dims; ++j) {
            if (dtype == 0)
                out.x(i, j) = static_cast<double>(read_le<std::uint8_t>(in, path, "payload"));
            else
                out.x(i, j) = static_cast<double>(read_le<float>(in, path, "payload"));
        }
    }
    out.validate();
    return out;
}

DataFormat sniff_format(const std::string& path) {
    const fs::path p(path);
    if (p.extension() == ".csv") return DataFormat::Csv;
    if (p.extension() == ".bin" || p.extension() == ".ali") return DataFormat::Binary;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    char magic[4] = {0, 0, 0, 0};
    in.read(magic, 4);
    return std::memcmp(magic, "ALI1", 4) == 0 ? DataFormat::Binary : DataFormat::Csv;
}

} // namespace

DataSplit read_split(const std::string& path, DataFormat fmt) {
    if (fmt == DataFormat::Auto) fmt = sniff_format(path);
    return fmt == DataFormat::Csv ? read_csv(path) : read_binary(path);
}

void write_split_csv(const DataSplit& s, const std::string& path) {
    s.validate();
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "label";
    for (std::size_t j = 0; j < s.dim(); ++j) out << ",f" << j;
    out << "\n";
    out.precision(17);
    for (std::size_t i = 0; i < s.size(); ++i) {
        out << s.labels[i];
        for (std::size_t j = 0; j < s.dim(); ++j) out << "," << s.x(i, j);
        out << "\n";
    }
    if (!out) throw IoError("write to '" + path + "' failed");
}

void write_split_binary(const DataSplit& s, const std::string& path, bool as_u8) {
    s.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write("ALI1", 4);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.dim()));
    write_le<std::uint8_t>(out, as_u8 ? 0 : 1);
    for (std::size_t i = 0; i < s.size(); ++i) {
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.labels[i]));
        for (std::size_t j = 0; j < s.dim(); ++j) {
            const double v = s.x(i, j);
            if (as_u8) {
                if (v < 0.0 || v > 255.0 || v != std::floor(v))
                    throw ValidationError("binary write: value " + std::to_string(v) +
                                          " does not fit dtype u8");
                write_le<std::uint8_t>(out, static_cast<std::uint8_t>(v));
            } else {
                write_le<float>(out, static_cast<float>(v));
            }
        }
    }
    if (!out) throw IoError("write to '" + path + "' failed");
}

Dataset load_dataset(const std::string& path, DataFormat fmt) {
    Dataset d;
    if (fs::is_directory(path)) {
        std::string train_path, test_path;
        for (const char* stem : {"train.csv", "train.bin", "train.ali"})
            if (fs::exists(fs::path(path) / stem)) train_path = (fs::path(path) / stem).string();
        for (const char* stem : {"test.csv", "test.bin", "test.ali"})
            if (fs::exists(fs::path(path) / stem)) test_path = (fs::path(path) / stem).string();
        if (train_path.empty())
            throw IoError("no train.csv or train.bin under '" + path + "'");
        d.train = read_split(train_path, fmt);
        if (!test_path.empty()) d.test = read_split(test_path, fmt);
    } else if (fs::exists(path)) {
        d.train = read_split(path, fmt);
    } else {
        throw IoError("no such file or directory: '" + path + "'");
    }
    int mx = -1;
    for (int l : d.train.labels) mx = std::max(mx, l);
    for (int l : d.test.labels) mx = std::max(mx, l);
    if (mx < 0) throw ValidationError("dataset: no samples loaded");
    d.class_count = static_cast<std::size_t>(mx) + 1;
    d.validate();
    return d;
}

Dataset stratified_subset(const Dataset& d, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ValidationError("stratified subset: fraction must lie in (0, 1]");
    d.validate();

    std::vector<std::vector<std::size_t>> per_class(d.class_count);
    for (std::size_t i = 0; i < d.train.size(); ++i)
        per_class[static_cast<std::size_t>(d.train.labels[i])].push_back(i);

    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < d.class_count; ++c) {
        auto& idx = per_class[c];
        if (idx.empty())
            throw ValidationError("stratified subset: class " + std::to_string(c) +
                                  " has no train samples");
        std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                         static_cast<std::uint32_t>(c)};
        std::mt19937_64 rng(sq);
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto take = static_cast<std::size_t>(
            std::ceil(fraction * static_cast<double>(idx.size())));
        keep.insert(keep.end(), idx.begin(), idx.begin() + take);
    }
    std::sort(keep.begin(), keep.end());

    Dataset out;
    out.class_count = d.class_count;
    out.test = d.test;
    out.train.x = Matrix(keep.size(), d.train.dim());
    out.train.labels.resize(keep.size());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        for (std::size_t j = 0; j < d.train.dim(); ++j)
            out.train.x(r, j) = d.train.x(keep[r], j);
        out.train.labels[r] = d.train.labels[keep[r]];
    }
    return out;
}

Dataset make_blobs(std::size_t train_per_class, std::size_t test_per_class,
                   std::size_t classes, std::size_t dim, double center_spread,
                   double cluster_std, std::uint64_t seed) {
    if (classes < 2) throw ValidationError("make_blobs: need at least two classes");
    if (dim == 0 || train_per_class == 0)
        throw ValidationError("make_blobs: empty geometry");
    if (!(center_spread > 0.0) || !(cluster_std >= 0.0))
        throw ValidationError("make_blobs: bad spread parameters");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Matrix centers(classes, dim);
    for (double& v : centers.data()) v = center_spread * gauss(rng);

    Dataset d;
    d.class_count = classes;
    d.train.x = Matrix(classes * train_per_class, dim);
    d.train.labels.resize(classes * train_per_class);
    d.test.x = Matrix(classes * test_per_class, dim);
    d.test.labels.resize(classes * test_per_class);

    std::size_t tr = 0, te = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < train_per_class; ++i, ++tr) {
            for (std::size_t j = 0; j < dim; ++j)
                d.train.x(tr, j) = centers(c, j) + cluster_std * gauss(rng);
            d.train.labels[tr] = static_cast<int>(c);
        }
        for (std::size_t i = 0; i < test_per_class; ++i, ++te) {
            for (std::size_t j = 0; j < dim; ++j)
                d.test.x(te, j) = centers(c, j) + cluster_std * gauss(rng);
            d.test.labels[te] = static_cast<int>(c);
        }
    }
    return d;
}

} // namespace alice
