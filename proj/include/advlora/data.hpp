#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "advlora/matrix.hpp"

namespace advlora {

enum class Split { train, test };

struct Dataset {
    Matrix features;             // total x n
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;
    Split split = Split::train;
    std::string name;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return features.cols(); }
};

struct BlobPair {
    Dataset train;
    Dataset test;
    Matrix centers;              // K x n, unit rows
};

// K unit-norm random centers; samples = center + N(0, spread^2) noise.
// The first ceil(per_class/2) samples of each class go to train.
BlobPair make_blobs(std::size_t num_classes, std::size_t dim,
                    std::size_t per_class, double spread, std::uint64_t seed);

// Accuracy of classify-by-nearest-center, the task's Bayes proxy.
double nearest_center_accuracy(const Matrix& centers, const Dataset& ds);

// CSV: header "label,f0,...,f{n-1}", one sample per row.
Dataset load_csv(const std::string& path);
void save_csv(const Dataset& ds, const std::string& path);

// Exactly `shots` samples per class, picked by seeded shuffle within class.
Dataset sample_few_shot(const Dataset& ds, std::size_t shots, std::uint64_t seed);

struct BaseNewSplit {
    Dataset base;
    Dataset new_part;
    std::vector<std::size_t> base_classes;  // original class ids, sorted
    std::vector<std::size_t> new_classes;
};

// First ceil(K/2) class ids form the base task; labels re-indexed densely.
BaseNewSplit split_base_new(const Dataset& ds);

} // namespace advlora
