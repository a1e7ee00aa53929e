#include "icl/losses.hpp"

#include <cmath>

#include "icl/error.hpp"

namespace icl {

void LossConfig::validate() const {
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0)
        throw ConfigError("LossConfig: alpha/beta/gamma must be >= 0");
    if (p_empty < 0.0 || p_empty > 1.0)
        throw ConfigError("LossConfig: p_empty must lie in [0, 1]");
}

std::vector<double> choose_second_input(int label, int n_total_classes, double p_empty,
                                        Rng& rng) {
    if (label < 0 || label >= n_total_classes)
        throw ShapeError("choose_second_input: label out of range");
    if (rng.bernoulli(p_empty)) return empty_signal(n_total_classes);
    std::vector<double> one_hot(n_total_classes, 0.0);
    one_hot[label] = 1.0;
    return one_hot;
}

Mat choose_second_inputs(const std::vector<int>& labels, int n_total_classes, double p_empty,
                         Rng& rng) {
    Mat y2(static_cast<int>(labels.size()), n_total_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto row = choose_second_input(labels[i], n_total_classes, p_empty, rng);
        std::copy(row.begin(), row.end(), y2.row(static_cast<int>(i)));
    }
    return y2;
}

double cross_entropy(const Mat& logits, const std::vector<int>& labels) {
    if (logits.rows != static_cast<int>(labels.size()))
        throw ShapeError("cross_entropy: logits/labels size mismatch");
    double total = 0.0;
    std::vector<double> logp(logits.cols);
    for (int i = 0; i < logits.rows; ++i) {
        if (labels[i] < 0 || labels[i] >= logits.cols)
            throw ShapeError("cross_entropy: label out of range");
        log_softmax_row(logits.row(i), logits.cols, logp.data());
        total -= logp[labels[i]];
    }
    return total / logits.rows;
}

namespace {

// d(mean CE)/dlogits = (softmax - one_hot) / batch
Mat cross_entropy_grad(const Mat& logits, const std::vector<int>& labels) {
    Mat d;
    softmax_rows(logits, d);
    for (int i = 0; i < d.rows; ++i) d.at(i, labels[i]) -= 1.0;
    const double inv = 1.0 / d.rows;
    for (auto& v : d.v) v *= inv;
    return d;
}

void scale(Mat& m, double s) {
    for (auto& v : m.v) v *= s;
}

// Backward of p = softmax(z): dz_i = p_i * (dp_i - sum_k p_k dp_k), per row.
Mat softmax_backward(const Mat& p, const Mat& dp) {
    Mat dz(p.rows, p.cols);
    for (int i = 0; i < p.rows; ++i) {
        double dot = 0.0;
        for (int j = 0; j < p.cols; ++j) dot += p.at(i, j) * dp.at(i, j);
        for (int j = 0; j < p.cols; ++j) dz.at(i, j) = p.at(i, j) * (dp.at(i, j) - dot);
    }
    return dz;
}

void add_into(Mat& dst, const Mat& src) {
    for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

}  // namespace

double l_ice(LabelConditionedNet& net, const Batch& batch, const LossConfig& cfg, Rng& rng,
             bool do_backward, double weight) {
    if (batch.empty()) throw ShapeError("l_ice: empty batch");
    const int n_classes = net.n_classes();

    const Mat y_star = choose_second_inputs(batch.labels, n_classes, cfg.p_empty, rng);

    LabelConditionedNet::Cache cache_a;
    const Mat z_a = net.forward(batch.x, y_star, cache_a);
    const double ce1 = cross_entropy(z_a, batch.labels);

    Mat p_a;
    softmax_rows(z_a, p_a);

    LabelConditionedNet::Cache cache_b;
    const Mat z_b = net.forward(batch.x, p_a, cache_b);
    const double ce2 = cross_entropy(z_b, batch.labels);

    if (do_backward) {
        Mat d_b = cross_entropy_grad(z_b, batch.labels);
        scale(d_b, weight);
        Mat d_a = cross_entropy_grad(z_a, batch.labels);
        scale(d_a, weight);

        LabelConditionedNet::BackwardOpts opts_b;
        opts_b.want_dy2 = cfg.ice_grad_through_inner;
        const auto dy2_b = net.backward(cache_b, d_b, opts_b);
        if (cfg.ice_grad_through_inner) {
            // Route the second pass's input gradient back into pass one.
            add_into(d_a, softmax_backward(p_a, *dy2_b));
        }
        net.backward(cache_a, d_a, {});
    }
    return ce1 + ce2;
}

double l_rep_ice(LabelConditionedNet& net, const Batch& buffer_batch, const LossConfig& cfg,
                 Rng& rng, bool do_backward, double weight) {
    if (buffer_batch.empty()) return 0.0;
    return l_ice(net, buffer_batch, cfg, rng, do_backward, weight);
}

namespace {

struct IdeGrads {
    double value = 0.0;
    Mat dy0;  // gradient w.r.t. the first-pass logits
    Mat dy1;  // gradient w.r.t. the target logits (alt routing only)
};

IdeGrads ide_distance(const Mat& y0, const Mat& y1, IdeDistance distance, bool want_dy1) {
    IdeGrads g;
    const int n = y0.rows, c = y0.cols;
    if (distance == IdeDistance::MseLogits) {
        // Mean over batch and class dimension; depends only on y0 - y1.
        g.dy0.resize(n, c);
        if (want_dy1) g.dy1.resize(n, c);
        const double inv = 1.0 / (static_cast<double>(n) * c);
        for (std::size_t i = 0; i < y0.v.size(); ++i) {
            const double diff = y0.v[i] - y1.v[i];
            g.value += diff * diff * inv;
            g.dy0.v[i] = 2.0 * diff * inv;
            if (want_dy1) g.dy1.v[i] = -2.0 * diff * inv;
        }
    } else {
        // KL(softmax(y1) || softmax(y0)), mean over batch.
        Mat p1, q0;
        softmax_rows(y1, p1);
        softmax_rows(y0, q0);
        g.dy0.resize(n, c);
        if (want_dy1) g.dy1.resize(n, c);
        std::vector<double> logp(c), logq(c);
        for (int i = 0; i < n; ++i) {
            log_softmax_row(y1.row(i), c, logp.data());
            log_softmax_row(y0.row(i), c, logq.data());
            for (int j = 0; j < c; ++j)
                g.value += p1.at(i, j) * (logp[j] - logq[j]) / n;
            for (int j = 0; j < c; ++j) g.dy0.at(i, j) = (q0.at(i, j) - p1.at(i, j)) / n;
            if (want_dy1) {
                // dL/dp1_j = log p1_j - log q0_j + 1, then through softmax.
                Mat dp(1, c), p_row(1, c);
                for (int j = 0; j < c; ++j) {
                    dp.at(0, j) = (logp[j] - logq[j] + 1.0) / n;
                    p_row.at(0, j) = p1.at(i, j);
                }
                const Mat dz = softmax_backward(p_row, dp);
                for (int j = 0; j < c; ++j) g.dy1.at(i, j) = dz.at(0, j);
            }
        }
    }
    return g;
}

}  // namespace

double l_ide(LabelConditionedNet& net, const FrozenCheckpoint& checkpoint, const Batch& batch,
             const LossConfig& cfg, bool do_backward, double weight) {
    if (batch.empty()) throw ShapeError("l_ide: empty batch");
    const int n_classes = net.n_classes();

    LabelConditionedNet::Cache cache0;
    const Mat y0 = net.forward(batch.x, empty_signal_rows(batch.size(), n_classes), cache0);
    Mat p0;
    softmax_rows(y0, p0);

    LabelConditionedNet::Cache cache_t;
    const Mat y1 = checkpoint.forward(batch.x, p0, cache_t);

    const bool alt = cfg.ide_grad_through_teacher_input;
    IdeGrads g = ide_distance(y0, y1, cfg.distance, alt);

    if (do_backward) {
        Mat dy0 = g.dy0;
        if (alt) {
            // y1 also depends on y0 through the teacher's second input.
            const Mat dp0 = checkpoint.backward_dy2(cache_t, g.dy1);
            add_into(dy0, softmax_backward(p0, dp0));
        }
        scale(dy0, weight);
        net.backward(cache0, dy0, {});
    }
    return g.value;
}

double l_ide_naive(LabelConditionedNet& net, const Batch& batch, const LossConfig& cfg,
                   bool do_backward, double weight) {
    if (batch.empty()) throw ShapeError("l_ide_naive: empty batch");
    const int n_classes = net.n_classes();

    LabelConditionedNet::Cache cache0;
    const Mat y0 = net.forward(batch.x, empty_signal_rows(batch.size(), n_classes), cache0);
    Mat p0;
    softmax_rows(y0, p0);

    LabelConditionedNet::Cache cache1;
    const Mat y1 = net.forward(batch.x, p0, cache1);  // stop-gradded target

    IdeGrads g = ide_distance(y0, y1, cfg.distance, false);
    if (do_backward) {
        scale(g.dy0, weight);
        net.backward(cache0, g.dy0, {});
    }
    return g.value;
}

double l_bfp(LabelConditionedNet& net, const FrozenCheckpoint& checkpoint, Linear& projection,
             const Batch& batch, bool do_backward, double weight) {
    if (batch.empty()) throw ShapeError("l_bfp: empty batch");
    const int n_classes = net.n_classes();
    const Mat empty = empty_signal_rows(batch.size(), n_classes);

    LabelConditionedNet::Cache cache_t, cache_p;
    const Tensor& feat_t = net.forward_features(batch.x, empty, cache_t);
    const Tensor& feat_p = checkpoint.forward_features(batch.x, empty, cache_p);
    if (feat_t.c != feat_p.c || feat_t.h != feat_p.h || feat_t.w != feat_p.w)
        throw ShapeError("l_bfp: feature shapes differ between net and checkpoint");
    if (projection.in_d != feat_t.c || projection.out_d != feat_t.c)
        throw ShapeError("l_bfp: projection must be square on the feature dimension");

    // Rows = spatial positions, cols = channels; the projection acts per position.
    const int n = feat_t.n, c = feat_t.c, hw = feat_t.h * feat_t.w;
    Mat rows(n * hw, c);
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            const double* plane = feat_t.sample(i) + static_cast<std::size_t>(ch) * hw;
            for (int s = 0; s < hw; ++s) rows.at(i * hw + s, ch) = plane[s];
        }

    Linear::Cache proj_cache;
    Mat projected;
    projection.forward(rows, projected, proj_cache);

    // Per-sample L2 norm of the full feature difference, mean over batch.
    std::vector<double> norms(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double sq = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            const double* prev = feat_p.sample(i) + static_cast<std::size_t>(ch) * hw;
            for (int s = 0; s < hw; ++s) {
                const double diff = projected.at(i * hw + s, ch) - prev[s];
                sq += diff * diff;
            }
        }
        norms[i] = std::sqrt(sq);
    }
    double value = 0.0;
    for (double d : norms) value += d / n;

    if (do_backward) {
        Mat dproj(n * hw, c);
        for (int i = 0; i < n; ++i) {
            if (norms[i] <= 0.0) continue;
            const double inv = weight / (norms[i] * n);
            for (int ch = 0; ch < c; ++ch) {
                const double* prev = feat_p.sample(i) + static_cast<std::size_t>(ch) * hw;
                for (int s = 0; s < hw; ++s)
                    dproj.at(i * hw + s, ch) =
                        (projected.at(i * hw + s, ch) - prev[s]) * inv;
            }
        }
        Mat drows;
        projection.backward(proj_cache, dproj, &drows, /*param_grads=*/true);

        Tensor dfeat(n, c, feat_t.h, feat_t.w);
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                double* plane = dfeat.sample(i) + static_cast<std::size_t>(ch) * hw;
                for (int s = 0; s < hw; ++s) plane[s] = drows.at(i * hw + s, ch);
            }
        net.backward_features(cache_t, dfeat, {});
    }
    return value;
}

Batch concat(const Batch& a, const Batch& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.x.c != b.x.c || a.x.h != b.x.h || a.x.w != b.x.w)
        throw ShapeError("concat: batch shapes differ");
    Batch out;
    out.x.resize(a.size() + b.size(), a.x.c, a.x.h, a.x.w);
    std::copy(a.x.v.begin(), a.x.v.end(), out.x.v.begin());
    std::copy(b.x.v.begin(), b.x.v.end(), out.x.v.begin() + a.x.v.size());
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    return out;
}

LossBreakdown l_ider(LabelConditionedNet& net, const FrozenCheckpoint* checkpoint,
                     const Batch& current, const Batch& buffer_b1, const Batch& buffer_b2,
                     const LossConfig& cfg, Rng& rng, bool do_backward, IdeVariant variant,
                     Linear* bfp_projection) {
    cfg.validate();
    LossBreakdown out;

    out.ice = l_ice(net, current, cfg, rng, do_backward, 1.0);
    out.total = out.ice;

    if (cfg.alpha > 0.0 && variant != IdeVariant::None) {
        const Batch union_batch = concat(current, buffer_b1);
        if (variant == IdeVariant::Checkpointed && checkpoint != nullptr)
            out.ide = l_ide(net, *checkpoint, union_batch, cfg, do_backward, cfg.alpha);
        else if (variant == IdeVariant::Naive)
            out.ide = l_ide_naive(net, union_batch, cfg, do_backward, cfg.alpha);
        out.total += cfg.alpha * out.ide;
    }

    if (cfg.beta > 0.0 && !buffer_b2.empty()) {
        out.rep_ice = l_rep_ice(net, buffer_b2, cfg, rng, do_backward, cfg.beta);
        out.total += cfg.beta * out.rep_ice;
    }

    if (bfp_projection != nullptr && cfg.gamma > 0.0 && checkpoint != nullptr) {
        const Batch union_batch = concat(current, buffer_b1);
        out.bfp = l_bfp(net, *checkpoint, *bfp_projection, union_batch, do_backward, cfg.gamma);
        out.total += cfg.gamma * out.bfp;
    }
    return out;
}

}  // namespace icl
