#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "icl/error.hpp"

namespace icl {

struct Shape {
    int c = 1;
    int h = 1;
    int w = 1;
    int size() const { return c * h * w; }
    bool operator==(const Shape&) const = default;
};

// Dense N x C x H x W buffer, row-major, double precision throughout so the
// training path and the finite-difference checks share one code path.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_) { resize(n_, c_, h_, w_); }

    void resize(int n_, int c_, int h_, int w_) {
        n = n_;
        c = c_;
        h = h_;
        w = w_;
        v.assign(static_cast<std::size_t>(n) * c * h * w, 0.0);
    }

    int per_sample() const { return c * h * w; }
    double* sample(int i) { return v.data() + static_cast<std::size_t>(i) * per_sample(); }
    const double* sample(int i) const { return v.data() + static_cast<std::size_t>(i) * per_sample(); }
};

// A batch of labeled inputs as consumed by losses and the trainer.
struct Batch {
    Tensor x;                 // n x c x h x w
    std::vector<int> labels;  // n
    int size() const { return x.n; }
    bool empty() const { return x.n == 0; }
};

// Row-major n x k matrix used for logits, probabilities and second inputs.
struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c) { resize(r, c); }

    void resize(int r, int c) {
        rows = r;
        cols = c;
        v.assign(static_cast<std::size_t>(r) * c, 0.0);
    }

    double* row(int i) { return v.data() + static_cast<std::size_t>(i) * cols; }
    const double* row(int i) const { return v.data() + static_cast<std::size_t>(i) * cols; }
    double& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }
};

// Numerically stable in-place row softmax.
inline void softmax_rows(const Mat& logits, Mat& out) {
    out.resize(logits.rows, logits.cols);
    for (int i = 0; i < logits.rows; ++i) {
        const double* z = logits.row(i);
        double* p = out.row(i);
        double zmax = z[0];
        for (int j = 1; j < logits.cols; ++j) zmax = std::max(zmax, z[j]);
        double sum = 0.0;
        for (int j = 0; j < logits.cols; ++j) {
            p[j] = std::exp(z[j] - zmax);
            sum += p[j];
        }
        for (int j = 0; j < logits.cols; ++j) p[j] /= sum;
    }
}

// log(softmax(z)) for one row.
inline void log_softmax_row(const double* z, int k, double* out) {
    double zmax = z[0];
    for (int j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    const double lse = zmax + std::log(sum);
    for (int j = 0; j < k; ++j) out[j] = z[j] - lse;
}

}  // namespace icl
