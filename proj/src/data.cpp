#include "advlora/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "advlora/errors.hpp"
#include "advlora/kernels.hpp"
#include "advlora/numio.hpp"
#include "advlora/rng.hpp"

namespace advlora {

BlobPair make_blobs(std::size_t num_classes, std::size_t dim,
                    std::size_t per_class, double spread, std::uint64_t seed) {
    if (num_classes < 2) throw ContractError("make_blobs: need at least 2 classes");
    if (per_class < 2) throw ContractError("make_blobs: need at least 2 samples per class");

    Matrix centers = Matrix::gaussian(num_classes, dim, 1.0,
                                      substream(seed, Stream::blobs, 0));
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double n = std::sqrt(kernels::sum_sq(centers.row(k), dim));
        kernels::scal(centers.row(k), 1.0 / n, dim);
    }

    const std::size_t train_per = (per_class + 1) / 2;
    const std::size_t test_per = per_class - train_per;

    BlobPair out;
    out.centers = centers;
    out.train.features = Matrix(num_classes * train_per, dim);
    out.test.features = Matrix(num_classes * test_per, dim);
    out.train.num_classes = out.test.num_classes = num_classes;
    out.train.split = Split::train;
    out.test.split = Split::test;
    out.train.name = out.test.name = "blobs";

    std::size_t tr = 0, te = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        const std::uint64_t class_seed = substream(seed, Stream::blobs, 1, k);
        for (std::size_t s = 0; s < per_class; ++s) {
            const bool is_train = s < train_per;
            double* row = is_train ? out.train.features.row(tr) : out.test.features.row(te);
            for (std::size_t j = 0; j < dim; ++j)
                row[j] = centers(k, j) + spread * gaussian(class_seed, s * dim + j);
            if (is_train) {
                out.train.labels.push_back(k);
                ++tr;
            } else {
                out.test.labels.push_back(k);
                ++te;
            }
        }
    }
    return out;
}

double nearest_center_accuracy(const Matrix& centers, const Dataset& ds) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t k = 0; k < centers.rows(); ++k) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < ds.dim(); ++j) {
                const double diff = ds.features(i, j) - centers(k, j);
                d2 += diff * diff;
            }
            if (d2 < best) {
                best = d2;
                arg = k;
            }
        }
        if (arg == ds.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double_field(const std::string& field, std::size_t line_no) {
    double value = 0.0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last)
        throw ParseError("line " + std::to_string(line_no) +
                         ": non-numeric field '" + field + "'");
    return value;
}

} // namespace

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path);

    std::string line;
    if (!std::getline(in, line))
        throw ParseError(path + ": empty file, expected header");
    auto header = split_fields(line);
    if (header.empty() || header[0] != "label")
        throw ParseError(path + ": missing 'label,f0,...' header");
    const std::size_t dim = header.size() - 1;
    for (std::size_t j = 0; j < dim; ++j)
        if (header[j + 1] != "f" + std::to_string(j))
            throw ParseError(path + ": malformed header column '" + header[j + 1] + "'");

    std::vector<double> values;
    std::vector<std::size_t> labels;
    std::size_t line_no = 1;
    std::size_t max_label = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_fields(line);
        if (fields.size() != dim + 1)
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(dim + 1) + " fields, got " +
                             std::to_string(fields.size()));
        const double lab = parse_double_field(fields[0], line_no);
        if (lab < 0 || lab != std::floor(lab))
            throw ParseError("line " + std::to_string(line_no) +
                             ": label must be a non-negative integer");
        labels.push_back(static_cast<std::size_t>(lab));
        max_label = std::max(max_label, labels.back());
        for (std::size_t j = 0; j < dim; ++j)
            values.push_back(parse_double_field(fields[j + 1], line_no));
    }

    Dataset ds;
    ds.features = Matrix(labels.size(), dim);
    std::copy(values.begin(), values.end(), ds.features.data());
    ds.labels = std::move(labels);
    ds.num_classes = ds.labels.empty() ? 0 : max_label + 1;
    ds.name = path;
    return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write dataset file: " + path);
    out << "label";
    for (std::size_t j = 0; j < ds.dim(); ++j) out << ",f" << j;
    out << "\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << ds.labels[i];
        for (std::size_t j = 0; j < ds.dim(); ++j)
            out << "," << format_double(ds.features(i, j));
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

Dataset sample_few_shot(const Dataset& ds, std::size_t shots, std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

    std::vector<std::size_t> picked;
    for (std::size_t k = 0; k < ds.num_classes; ++k) {
        auto& ids = by_class[k];
        if (ids.size() < shots)
            throw ConfigError("class " + std::to_string(k) + " has only " +
                              std::to_string(ids.size()) + " samples, need " +
                              std::to_string(shots));
        CounterRng rng(substream(seed, Stream::few_shot, k));
        for (std::size_t i = ids.size(); i > 1; --i)
            std::swap(ids[i - 1], ids[rng.next_below(i)]);
        picked.insert(picked.end(), ids.begin(), ids.begin() + shots);
    }

    Dataset out;
    out.features = Matrix(picked.size(), ds.dim());
    out.labels.reserve(picked.size());
    for (std::size_t i = 0; i < picked.size(); ++i) {
        std::copy_n(ds.features.row(picked[i]), ds.dim(), out.features.row(i));
        out.labels.push_back(ds.labels[picked[i]]);
    }
    out.num_classes = ds.num_classes;
    out.split = ds.split;
    out.name = ds.name;
    return out;
}

BaseNewSplit split_base_new(const Dataset& ds) {
    if (ds.num_classes < 2) throw ConfigError("base/new split needs at least 2 classes");
    const std::size_t base_count = (ds.num_classes + 1) / 2;

    BaseNewSplit out;
    for (std::size_t k = 0; k < ds.num_classes; ++k)
        (k < base_count ? out.base_classes : out.new_classes).push_back(k);

    auto build = [&](const std::vector<std::size_t>& classes, Split split,
                     const char* suffix) {
        std::vector<std::size_t> remap(ds.num_classes, 0);
        for (std::size_t i = 0; i < classes.size(); ++i) remap[classes[i]] = i;
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (std::find(classes.begin(), classes.end(), ds.labels[i]) != classes.end())
                rows.push_back(i);
        Dataset part;
        part.features = Matrix(rows.size(), ds.dim());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy_n(ds.features.row(rows[i]), ds.dim(), part.features.row(i));
            part.labels.push_back(remap[ds.labels[rows[i]]]);
        }
        part.num_classes = classes.size();
        part.split = split;
        part.name = ds.name + suffix;
        return part;
    };

    out.base = build(out.base_classes, ds.split, "/base");
    out.new_part = build(out.new_classes, ds.split, "/new");
    return out;
}

} // namespace advlora
