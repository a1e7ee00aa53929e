#include "icl/dataset.hpp"

#include <cstdint>
#include <fstream>

#include "icl/error.hpp"

namespace icl {

std::vector<std::vector<int>> LabeledDataset::indices_by_class() const {
    std::vector<std::vector<int>> by_class(n_classes);
    for (int i = 0; i < size(); ++i) by_class[labels[i]].push_back(i);
    return by_class;
}

void LabeledDataset::validate() const {
    if (samples.size() != labels.size())
        throw ShapeError("dataset: samples/labels length mismatch");
    const auto expect = static_cast<std::size_t>(shape.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].size() != expect)
            throw ShapeError("dataset: sample " + std::to_string(i) + " has wrong length");
        if (labels[i] < 0 || labels[i] >= n_classes)
            throw ShapeError("dataset: label " + std::to_string(labels[i]) + " out of range");
    }
}

DatasetPair make_blobs_dataset(int n_classes, int train_per_class, int test_per_class,
                               Shape shape, double noise, std::uint64_t seed) {
    Rng proto_rng = Rng::seeded(seed, 101);
    const int dim = shape.size();

    // Class prototypes: smooth low-frequency patterns so nearby pixels correlate.
    std::vector<std::vector<double>> protos(n_classes, std::vector<double>(dim));
    for (auto& proto : protos) {
        const double fx = proto_rng.uniform(0.5, 2.0);
        const double fy = proto_rng.uniform(0.5, 2.0);
        const double px = proto_rng.uniform(0.0, 2.0 * M_PI);
        const double py = proto_rng.uniform(0.0, 2.0 * M_PI);
        const double amp = proto_rng.uniform(0.3, 0.5);
        int idx = 0;
        for (int c = 0; c < shape.c; ++c)
            for (int y = 0; y < shape.h; ++y)
                for (int x = 0; x < shape.w; ++x)
                    proto[idx++] = amp * std::sin(fx * x + px + c) * std::cos(fy * y + py);
    }

    auto fill = [&](LabeledDataset& ds, int per_class, std::uint64_t stream) {
        Rng rng = Rng::seeded(seed, stream);
        ds.shape = shape;
        ds.n_classes = n_classes;
        for (int cls = 0; cls < n_classes; ++cls) {
            for (int k = 0; k < per_class; ++k) {
                std::vector<double> x(dim);
                for (int d = 0; d < dim; ++d) x[d] = protos[cls][d] + noise * rng.normal();
                ds.samples.push_back(std::move(x));
                ds.labels.push_back(cls);
            }
        }
    };

    DatasetPair pair;
    pair.train.split = "train";
    pair.test.split = "test";
    fill(pair.train, train_per_class, 102);
    fill(pair.test, test_per_class, 103);
    return pair;
}

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw IoError("idx: truncated header in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

LabeledDataset load_idx_dataset(const std::string& dir, const std::string& prefix,
                                const std::string& split_tag) {
    const std::string img_path = dir + "/" + prefix + "-images-idx3-ubyte";
    const std::string lbl_path = dir + "/" + prefix + "-labels-idx1-ubyte";

    std::ifstream img(img_path, std::ios::binary);
    if (!img) throw IoError("idx: cannot open " + img_path);
    if (read_be32(img, img_path) != 0x00000803u)
        throw IoError("idx: bad image magic in " + img_path);
    const int n = static_cast<int>(read_be32(img, img_path));
    const int h = static_cast<int>(read_be32(img, img_path));
    const int w = static_cast<int>(read_be32(img, img_path));

    std::ifstream lbl(lbl_path, std::ios::binary);
    if (!lbl) throw IoError("idx: cannot open " + lbl_path);
    if (read_be32(lbl, lbl_path) != 0x00000801u)
        throw IoError("idx: bad label magic in " + lbl_path);
    if (static_cast<int>(read_be32(lbl, lbl_path)) != n)
        throw IoError("idx: image/label count mismatch for prefix " + prefix);

    LabeledDataset ds;
    ds.shape = Shape{1, h, w};
    ds.split = split_tag;

    std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w);
    int max_label = -1;
    for (int i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (!img) throw IoError("idx: truncated image data in " + img_path);
        std::vector<double> x(raw.size());
        for (std::size_t p = 0; p < raw.size(); ++p) x[p] = raw[p] / 255.0 - 0.5;
        ds.samples.push_back(std::move(x));

        char c;
        lbl.read(&c, 1);
        if (!lbl) throw IoError("idx: truncated label data in " + lbl_path);
        const int y = static_cast<unsigned char>(c);
        max_label = std::max(max_label, y);
        ds.labels.push_back(y);
    }
    ds.n_classes = max_label + 1;
    ds.validate();
    return ds;
}

DatasetPair load_idx_pair(const std::string& dir) {
    DatasetPair pair;
    pair.train = load_idx_dataset(dir, "train", "train");
    pair.test = load_idx_dataset(dir, "test", "test");
    // Label spaces of the two splits must agree.
    pair.train.n_classes = pair.test.n_classes =
        std::max(pair.train.n_classes, pair.test.n_classes);
    return pair;
}

Batch gather_batch(const LabeledDataset& ds, const std::vector<int>& indices) {
    Batch b;
    b.x.resize(static_cast<int>(indices.size()), ds.shape.c, ds.shape.h, ds.shape.w);
    b.labels.resize(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& src = ds.samples[indices[i]];
        std::copy(src.begin(), src.end(), b.x.sample(static_cast<int>(i)));
        b.labels[i] = ds.labels[indices[i]];
    }
    return b;
}

}  // namespace icl
