#pragma once

#include <string>
#include <vector>

#include "icl/rng.hpp"
#include "icl/tensor.hpp"

namespace icl {

// A fixed labeled sample set. All inputs share one shape; labels are class ids
// in [0, n_classes).
struct LabeledDataset {
    Shape shape;
    int n_classes = 0;
    std::string split;                // "train" or "test"
    std::vector<std::vector<double>> samples;  // each of length shape.size()
    std::vector<int> labels;

    int size() const { return static_cast<int>(samples.size()); }
    std::vector<std::vector<int>> indices_by_class() const;
    void validate() const;  // throws ShapeError on inconsistent contents
};

struct DatasetPair {
    LabeledDataset train;
    LabeledDataset test;
};

// Synthetic Gaussian-blobs image set: each class is a smooth random pattern
// plus per-sample noise. Deterministic in (seed); used by unit tests.
DatasetPair make_blobs_dataset(int n_classes, int train_per_class, int test_per_class,
                               Shape shape, double noise, std::uint64_t seed);

// Reads an MNIST-style IDX pair (images + labels) from `dir`:
//   <prefix>-images-idx3-ubyte, <prefix>-labels-idx1-ubyte
// Pixels are rescaled from [0,255] to [-0.5, 0.5].
LabeledDataset load_idx_dataset(const std::string& dir, const std::string& prefix,
                                const std::string& split_tag);

// Convenience loader for the committed digits files (train/test prefixes).
DatasetPair load_idx_pair(const std::string& dir);

// Collects a batch from dataset rows given sample indices.
Batch gather_batch(const LabeledDataset& ds, const std::vector<int>& indices);

}  // namespace icl
