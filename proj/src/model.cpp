#include "icl/model.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "icl/error.hpp"

namespace icl {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using MapRowC = Eigen::Map<const RowMat>;

std::vector<double> empty_signal(int n_total_classes) {
    if (n_total_classes <= 0)
        throw ConfigError("empty_signal: n_total_classes must be positive");
    return std::vector<double>(n_total_classes, 1.0 / n_total_classes);
}

Mat empty_signal_rows(int n, int n_total_classes) {
    if (n_total_classes <= 0)
        throw ConfigError("empty_signal_rows: n_total_classes must be positive");
    Mat m(n, n_total_classes);
    const double u = 1.0 / n_total_classes;
    std::fill(m.v.begin(), m.v.end(), u);
    return m;
}

Mat one_hot_rows(const std::vector<int>& labels, int n_total_classes) {
    Mat m(static_cast<int>(labels.size()), n_total_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_total_classes)
            throw ShapeError("one_hot_rows: label out of range");
        m.at(static_cast<int>(i), labels[i]) = 1.0;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Conv2d

void Conv2d::configure(int in_c_, int out_c_, int k_, int stride_, int pad_) {
    in_c = in_c_;
    out_c = out_c_;
    k = k_;
    stride = stride_;
    pad = pad_;
    w.assign(static_cast<std::size_t>(out_c) * in_c * k * k, 0.0);
    b.assign(out_c, 0.0);
    gw.assign(w.size(), 0.0);
    gb.assign(b.size(), 0.0);
}

void Conv2d::init_weights(Rng& rng) {
    const double std = std::sqrt(2.0 / (in_c * k * k));
    for (auto& x : w) x = rng.normal(0.0, std);
    std::fill(b.begin(), b.end(), 0.0);
}

namespace {

// col: (in_c*k*k) x (oh*ow), column-major Eigen matrix, one sample.
void im2col(const double* x, int in_c, int ih, int iw, int k, int stride, int pad,
            int oh, int ow, Eigen::MatrixXd& col) {
    col.resize(in_c * k * k, oh * ow);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            const int o = oy * ow + ox;
            double* dst = col.data() + static_cast<std::size_t>(o) * col.rows();
            for (int c = 0; c < in_c; ++c) {
                const double* plane = x + static_cast<std::size_t>(c) * ih * iw;
                for (int ki = 0; ki < k; ++ki) {
                    const int y = oy * stride - pad + ki;
                    for (int kj = 0; kj < k; ++kj) {
                        const int xx = ox * stride - pad + kj;
                        *dst++ = (y >= 0 && y < ih && xx >= 0 && xx < iw)
                                     ? plane[y * iw + xx]
                                     : 0.0;
                    }
                }
            }
        }
}

void col2im_add(const Eigen::MatrixXd& dcol, int in_c, int ih, int iw, int k, int stride,
                int pad, int oh, int ow, double* dx) {
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            const int o = oy * ow + ox;
            const double* src = dcol.data() + static_cast<std::size_t>(o) * dcol.rows();
            for (int c = 0; c < in_c; ++c) {
                double* plane = dx + static_cast<std::size_t>(c) * ih * iw;
                for (int ki = 0; ki < k; ++ki) {
                    const int y = oy * stride - pad + ki;
                    for (int kj = 0; kj < k; ++kj, ++src) {
                        const int xx = ox * stride - pad + kj;
                        if (y >= 0 && y < ih && xx >= 0 && xx < iw) plane[y * iw + xx] += *src;
                    }
                }
            }
        }
}

}  // namespace

void Conv2d::forward(const Tensor& x, Tensor& y, Cache& c) const {
    if (x.c != in_c) throw ShapeError("Conv2d: input channel mismatch");
    const int oh = out_h(x.h), ow = out_w(x.w);
    y.resize(x.n, out_c, oh, ow);
    c.in = x;

    MapRowC W(w.data(), out_c, in_c * k * k);
    Eigen::MatrixXd col;
    for (int n = 0; n < x.n; ++n) {
        im2col(x.sample(n), in_c, x.h, x.w, k, stride, pad, oh, ow, col);
        MapRow Y(y.sample(n), out_c, oh * ow);
        Y.noalias() = W * col;
        for (int oc = 0; oc < out_c; ++oc) Y.row(oc).array() += b[oc];
    }
}

void Conv2d::backward(const Cache& c, const Tensor& dy, Tensor* dx, bool param_grads) {
    const Tensor& x = c.in;
    const int oh = dy.h, ow = dy.w;
    if (dx) dx->resize(x.n, x.c, x.h, x.w);

    MapRowC W(w.data(), out_c, in_c * k * k);
    MapRow dW(gw.data(), out_c, in_c * k * k);
    Eigen::MatrixXd col, dcol;
    for (int n = 0; n < x.n; ++n) {
        MapRowC dY(dy.sample(n), out_c, oh * ow);
        if (param_grads) {
            im2col(x.sample(n), in_c, x.h, x.w, k, stride, pad, oh, ow, col);
            dW.noalias() += dY * col.transpose();
            for (int oc = 0; oc < out_c; ++oc) gb[oc] += dY.row(oc).sum();
        }
        if (dx) {
            dcol.noalias() = W.transpose() * dY;
            col2im_add(dcol, in_c, x.h, x.w, k, stride, pad, oh, ow, dx->sample(n));
        }
    }
}

// ---------------------------------------------------------------------------
// GroupNorm

void GroupNorm::configure(int channels_, int groups_) {
    channels = channels_;
    groups = groups_;
    if (groups < 1 || channels % groups != 0)
        throw ConfigError("GroupNorm: groups must divide channels");
    gamma.assign(channels, 1.0);
    beta.assign(channels, 0.0);
    ggamma.assign(channels, 0.0);
    gbeta.assign(channels, 0.0);
}

void GroupNorm::forward(const Tensor& x, Tensor& y, Cache& c) const {
    if (x.c != channels) throw ShapeError("GroupNorm: channel mismatch");
    y.resize(x.n, x.c, x.h, x.w);
    c.xhat.resize(x.n, x.c, x.h, x.w);
    c.inv_std.assign(static_cast<std::size_t>(x.n) * groups, 0.0);

    const int cpg = channels / groups;
    const int hw = x.h * x.w;
    const int m = cpg * hw;
    for (int n = 0; n < x.n; ++n) {
        for (int g = 0; g < groups; ++g) {
            const double* xs = x.sample(n) + static_cast<std::size_t>(g) * cpg * hw;
            double mean = 0.0;
            for (int i = 0; i < m; ++i) mean += xs[i];
            mean /= m;
            double var = 0.0;
            for (int i = 0; i < m; ++i) var += (xs[i] - mean) * (xs[i] - mean);
            var /= m;
            const double istd = 1.0 / std::sqrt(var + eps);
            c.inv_std[static_cast<std::size_t>(n) * groups + g] = istd;

            double* xh = c.xhat.sample(n) + static_cast<std::size_t>(g) * cpg * hw;
            double* ys = y.sample(n) + static_cast<std::size_t>(g) * cpg * hw;
            for (int ch = 0; ch < cpg; ++ch) {
                const double gm = gamma[g * cpg + ch], bt = beta[g * cpg + ch];
                for (int i = 0; i < hw; ++i) {
                    const double v = (xs[ch * hw + i] - mean) * istd;
                    xh[ch * hw + i] = v;
                    ys[ch * hw + i] = gm * v + bt;
                }
            }
        }
    }
}

void GroupNorm::backward(const Cache& c, const Tensor& dy, Tensor& dx, bool param_grads) {
    const Tensor& xhat = c.xhat;
    dx.resize(dy.n, dy.c, dy.h, dy.w);
    const int cpg = channels / groups;
    const int hw = dy.h * dy.w;
    const int m = cpg * hw;
    for (int n = 0; n < dy.n; ++n) {
        for (int g = 0; g < groups; ++g) {
            const std::size_t off = static_cast<std::size_t>(g) * cpg * hw;
            const double* dys = dy.sample(n) + off;
            const double* xh = xhat.sample(n) + off;
            double* dxs = dx.sample(n) + off;
            const double istd = c.inv_std[static_cast<std::size_t>(n) * groups + g];

            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (int ch = 0; ch < cpg; ++ch) {
                const double gm = gamma[g * cpg + ch];
                for (int i = 0; i < hw; ++i) {
                    const double dxh = dys[ch * hw + i] * gm;
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh[ch * hw + i];
                }
            }
            for (int ch = 0; ch < cpg; ++ch) {
                const double gm = gamma[g * cpg + ch];
                for (int i = 0; i < hw; ++i) {
                    const double dxh = dys[ch * hw + i] * gm;
                    dxs[ch * hw + i] =
                        istd / m * (m * dxh - sum_dxh - xh[ch * hw + i] * sum_dxh_xh);
                }
            }
            if (param_grads) {
                for (int ch = 0; ch < cpg; ++ch) {
                    double dg = 0.0, db = 0.0;
                    for (int i = 0; i < hw; ++i) {
                        dg += dys[ch * hw + i] * xh[ch * hw + i];
                        db += dys[ch * hw + i];
                    }
                    ggamma[g * cpg + ch] += dg;
                    gbeta[g * cpg + ch] += db;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Linear

void Linear::configure(int in_d_, int out_d_) {
    in_d = in_d_;
    out_d = out_d_;
    w.assign(static_cast<std::size_t>(out_d) * in_d, 0.0);
    b.assign(out_d, 0.0);
    gw.assign(w.size(), 0.0);
    gb.assign(b.size(), 0.0);
}

void Linear::init_weights(Rng& rng) {
    const double std = std::sqrt(2.0 / in_d);
    for (auto& x : w) x = rng.normal(0.0, std);
    std::fill(b.begin(), b.end(), 0.0);
}

void Linear::forward(const Mat& x, Mat& y, Cache& c) const {
    if (x.cols != in_d) throw ShapeError("Linear: input dimension mismatch");
    c.in = x;
    y.resize(x.rows, out_d);
    MapRowC X(x.v.data(), x.rows, x.cols);
    MapRowC W(w.data(), out_d, in_d);
    MapRow Y(y.v.data(), y.rows, y.cols);
    Y.noalias() = X * W.transpose();
    for (int j = 0; j < out_d; ++j) Y.col(j).array() += b[j];
}

void Linear::backward(const Cache& c, const Mat& dy, Mat* dx, bool param_grads) {
    MapRowC X(c.in.v.data(), c.in.rows, c.in.cols);
    MapRowC dY(dy.v.data(), dy.rows, dy.cols);
    if (param_grads) {
        MapRow dW(gw.data(), out_d, in_d);
        dW.noalias() += dY.transpose() * X;
        for (int j = 0; j < out_d; ++j) gb[j] += dY.col(j).sum();
    }
    if (dx) {
        dx->resize(dy.rows, in_d);
        MapRow dX(dx->v.data(), dx->rows, dx->cols);
        MapRowC W(w.data(), out_d, in_d);
        dX.noalias() = dY * W;
    }
}

// ---------------------------------------------------------------------------
// ResidualBlock

namespace {
int effective_groups(int channels, int requested) {
    int g = std::min(channels, requested);
    while (g > 1 && channels % g != 0) --g;
    return g;
}
}  // namespace

void ResidualBlock::configure(int in_c, int out_c, int stride_, int norm_groups) {
    stride = stride_;
    conv1.configure(in_c, out_c, 3, stride, 1);
    conv2.configure(out_c, out_c, 3, 1, 1);
    if (in_c != out_c || stride != 1) {
        proj.emplace();
        proj->configure(in_c, out_c, 1, stride, 0);
    } else {
        proj.reset();
    }
    norm1.reset();
    norm2.reset();
    norm_proj.reset();
    if (norm_groups > 0) {
        const int g = effective_groups(out_c, norm_groups);
        norm1.emplace();
        norm1->configure(out_c, g);
        norm2.emplace();
        norm2->configure(out_c, g);
        if (proj) {
            norm_proj.emplace();
            norm_proj->configure(out_c, g);
        }
    }
}

void ResidualBlock::init_weights(Rng& rng) {
    conv1.init_weights(rng);
    conv2.init_weights(rng);
    if (proj) proj->init_weights(rng);
}

namespace {
inline void relu_forward(const Tensor& pre, Tensor& out) {
    out = pre;
    for (auto& v : out.v) v = v > 0.0 ? v : 0.0;
}
// dpre = dout where pre > 0, else 0 (in place on dout)
inline void relu_backward(const Tensor& pre, Tensor& dout) {
    for (std::size_t i = 0; i < dout.v.size(); ++i)
        if (pre.v[i] <= 0.0) dout.v[i] = 0.0;
}
}  // namespace

void ResidualBlock::forward(const Tensor& x, Tensor& y, Cache& c) const {
    Tensor conv1_out, h1;
    conv1.forward(x, conv1_out, c.c1);
    if (norm1) norm1->forward(conv1_out, c.pre1, c.n1);
    else c.pre1 = std::move(conv1_out);
    relu_forward(c.pre1, h1);

    Tensor conv2_out;
    conv2.forward(h1, conv2_out, c.c2);
    if (norm2) norm2->forward(conv2_out, c.sum, c.n2);
    else c.sum = std::move(conv2_out);

    if (proj) {
        Tensor sc_conv, sc;
        proj->forward(x, sc_conv, c.cp);
        if (norm_proj) norm_proj->forward(sc_conv, sc, c.np);
        else sc = std::move(sc_conv);
        for (std::size_t i = 0; i < c.sum.v.size(); ++i) c.sum.v[i] += sc.v[i];
    } else {
        for (std::size_t i = 0; i < c.sum.v.size(); ++i) c.sum.v[i] += x.v[i];
    }
    relu_forward(c.sum, y);
}

void ResidualBlock::backward(const Cache& c, const Tensor& dy, Tensor& dx, bool param_grads) {
    Tensor dsum = dy;
    relu_backward(c.sum, dsum);

    Tensor dconv2 = dsum;
    if (norm2) {
        Tensor tmp;
        norm2->backward(c.n2, dsum, tmp, param_grads);
        dconv2 = std::move(tmp);
    }
    Tensor dh1;
    conv2.backward(c.c2, dconv2, &dh1, param_grads);
    relu_backward(c.pre1, dh1);
    if (norm1) {
        Tensor tmp;
        norm1->backward(c.n1, dh1, tmp, param_grads);
        dh1 = std::move(tmp);
    }
    conv1.backward(c.c1, dh1, &dx, param_grads);

    if (proj) {
        Tensor dsc = dsum;
        if (norm_proj) {
            Tensor tmp;
            norm_proj->backward(c.np, dsum, tmp, param_grads);
            dsc = std::move(tmp);
        }
        Tensor dproj_x;
        proj->backward(c.cp, dsc, &dproj_x, param_grads);
        for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dproj_x.v[i];
    } else {
        for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dsum.v[i];
    }
}

// ---------------------------------------------------------------------------
// LabelConditionedNet

int NetConfig::resolved_partition() const {
    const int b = n_blocks();
    int p = partition_block < 0 ? b / 2 : partition_block;
    if (p < 0 || p > b)
        throw ConfigError("NetConfig: partition_block " + std::to_string(partition_block) +
                          " outside [0, " + std::to_string(b) + "]");
    return p;
}

LabelConditionedNet::LabelConditionedNet(const NetConfig& cfg, Rng& init_rng) : cfg_(cfg) {
    if (cfg_.n_classes < 1) throw ConfigError("NetConfig: n_classes must be >= 1");
    if (cfg_.base_channels < 1 || cfg_.n_stages < 1 || cfg_.blocks_per_stage < 1)
        throw ConfigError("NetConfig: channels/stages/blocks must be >= 1");
    build();
    stem_.init_weights(init_rng);
    for (auto& blk : blocks_) blk.init_weights(init_rng);
    if (cfg_.label_embed) label_embed_.init_weights(init_rng);
    head_.init_weights(init_rng);
}

void LabelConditionedNet::build() {
    partition_ = cfg_.resolved_partition();
    stem_.configure(cfg_.input.c, cfg_.base_channels, 3, 1, 1);
    stem_norm_.reset();
    if (cfg_.norm_groups > 0) {
        stem_norm_.emplace();
        stem_norm_->configure(cfg_.base_channels,
                              effective_groups(cfg_.base_channels, cfg_.norm_groups));
    }

    blocks_.clear();
    int ch = cfg_.base_channels;
    for (int s = 0; s < cfg_.n_stages; ++s) {
        for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
            const bool transition = s > 0 && b == 0;
            const int in_ch = transition ? ch / 2 : ch;
            ResidualBlock blk;
            blk.configure(in_ch, ch, transition ? 2 : 1, cfg_.norm_groups);
            blocks_.push_back(std::move(blk));
        }
        if (s + 1 < cfg_.n_stages) ch *= 2;
    }
    last_c_ = ch;

    // Channel count at the partition boundary.
    if (partition_ == 0) {
        feat_c_ = cfg_.base_channels;
    } else {
        const int stage = (partition_ - 1) / cfg_.blocks_per_stage;
        feat_c_ = cfg_.base_channels << stage;
    }

    if (cfg_.label_embed) label_embed_.configure(cfg_.n_classes, feat_c_);
    head_.configure(last_c_, cfg_.n_classes);
}

const Tensor& LabelConditionedNet::forward_features(const Tensor& x, const Mat& y2,
                                                    Cache& cache) const {
    if (x.c != cfg_.input.c || x.h != cfg_.input.h || x.w != cfg_.input.w)
        throw ShapeError("forward: input tensor does not match configured shape");
    if (cfg_.label_embed && (y2.rows != x.n || y2.cols != cfg_.n_classes))
        throw ShapeError("forward: second input must be n x n_classes");
    for (double p : y2.v)
        if (p < 0.0) throw ShapeError("forward: second input entries must be >= 0");

    cache.blocks.resize(blocks_.size());

    Tensor h;
    if (stem_norm_) {
        Tensor stem_out;
        stem_.forward(x, stem_out, cache.stem);
        stem_norm_->forward(stem_out, cache.stem_pre, cache.stem_norm);
    } else {
        stem_.forward(x, cache.stem_pre, cache.stem);
    }
    relu_forward(cache.stem_pre, h);
    for (int i = 0; i < partition_; ++i) {
        Tensor next;
        blocks_[i].forward(h, next, cache.blocks[i]);
        h = std::move(next);
    }

    if (cfg_.label_embed) {
        cache.y2 = y2;
        Mat embed;
        Linear::Cache ignored;
        // Keep the linear cache tiny: y2 itself is the cached input.
        label_embed_.forward(y2, cache.embed_pre, ignored);
        embed = cache.embed_pre;
        for (auto& v : embed.v)
            if (v < 0.0) v *= cfg_.leaky_slope;
        const int hw = h.h * h.w;
        for (int n = 0; n < h.n; ++n) {
            double* base = h.sample(n);
            for (int c = 0; c < h.c; ++c) {
                const double e = embed.at(n, c);
                double* plane = base + static_cast<std::size_t>(c) * hw;
                for (int i = 0; i < hw; ++i) plane[i] += e;
            }
        }
    }

    cache.features = std::move(h);
    return cache.features;
}

Mat LabelConditionedNet::forward(const Tensor& x, const Mat& y2, Cache& cache) const {
    Tensor h = forward_features(x, y2, cache);

    for (std::size_t i = partition_; i < blocks_.size(); ++i) {
        Tensor next;
        blocks_[i].forward(h, next, cache.blocks[i]);
        h = std::move(next);
    }

    // Global average pool.
    cache.pooled.resize(h.n, h.c);
    const int hw = h.h * h.w;
    for (int n = 0; n < h.n; ++n)
        for (int c = 0; c < h.c; ++c) {
            const double* plane = h.sample(n) + static_cast<std::size_t>(c) * hw;
            double s = 0.0;
            for (int i = 0; i < hw; ++i) s += plane[i];
            cache.pooled.at(n, c) = s / hw;
        }
    cache.head_in_h = h.h;
    cache.head_in_w = h.w;

    Mat logits;
    head_.forward(cache.pooled, logits, cache.head);
    return logits;
}

std::optional<Mat> LabelConditionedNet::backward(Cache& cache, const Mat& dlogits,
                                                 const BackwardOpts& opts) {
    Mat dpooled;
    head_.backward(cache.head, dlogits, &dpooled, opts.param_grads);

    // Un-pool.
    const int hh = cache.head_in_h, hw_ = cache.head_in_w;
    const int hw = hh * hw_;
    Tensor dh(dpooled.rows, dpooled.cols, hh, hw_);
    for (int n = 0; n < dh.n; ++n)
        for (int c = 0; c < dh.c; ++c) {
            const double g = dpooled.at(n, c) / hw;
            double* plane = dh.sample(n) + static_cast<std::size_t>(c) * hw;
            for (int i = 0; i < hw; ++i) plane[i] = g;
        }

    for (int i = static_cast<int>(blocks_.size()) - 1; i >= partition_; --i) {
        Tensor dx;
        blocks_[i].backward(cache.blocks[i], dh, dx, opts.param_grads);
        dh = std::move(dx);
    }
    return backward_features(cache, dh, opts);
}

std::optional<Mat> LabelConditionedNet::backward_features(Cache& cache, const Tensor& dfeatures,
                                                          const BackwardOpts& opts) {
    std::optional<Mat> dy2;

    if (cfg_.label_embed) {
        // Channel-wise sum over space feeds the embedding path.
        Mat dembed(dfeatures.n, dfeatures.c);
        const int hw = dfeatures.h * dfeatures.w;
        for (int n = 0; n < dfeatures.n; ++n)
            for (int c = 0; c < dfeatures.c; ++c) {
                const double* plane = dfeatures.sample(n) + static_cast<std::size_t>(c) * hw;
                double s = 0.0;
                for (int i = 0; i < hw; ++i) s += plane[i];
                dembed.at(n, c) = s;
            }
        // LeakyReLU backward on the cached pre-activation.
        for (std::size_t i = 0; i < dembed.v.size(); ++i)
            if (cache.embed_pre.v[i] < 0.0) dembed.v[i] *= cfg_.leaky_slope;

        Linear::Cache lc;
        lc.in = cache.y2;
        Mat dy2_local;
        label_embed_.backward(lc, dembed, opts.want_dy2 ? &dy2_local : nullptr,
                              opts.param_grads);
        if (opts.want_dy2) dy2 = std::move(dy2_local);
    } else if (opts.want_dy2) {
        dy2 = Mat(dfeatures.n, cfg_.n_classes);  // inert second input: zero gradient
    }

    Tensor dh = dfeatures;
    for (int i = partition_ - 1; i >= 0; --i) {
        Tensor dx;
        blocks_[i].backward(cache.blocks[i], dh, dx, opts.param_grads);
        dh = std::move(dx);
    }
    relu_backward(cache.stem_pre, dh);
    if (stem_norm_) {
        Tensor tmp;
        stem_norm_->backward(cache.stem_norm, dh, tmp, opts.param_grads);
        dh = std::move(tmp);
    }
    stem_.backward(cache.stem, dh, nullptr, opts.param_grads);
    return dy2;
}

std::vector<ParamView> LabelConditionedNet::params() {
    std::vector<ParamView> out;
    auto add = [&out](const std::string& name, std::vector<double>& w, std::vector<double>& g) {
        out.push_back({name, &w, &g});
    };
    add("stem.w", stem_.w, stem_.gw);
    add("stem.b", stem_.b, stem_.gb);
    if (stem_norm_) {
        add("stem.norm.gamma", stem_norm_->gamma, stem_norm_->ggamma);
        add("stem.norm.beta", stem_norm_->beta, stem_norm_->gbeta);
    }
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        auto& blk = blocks_[i];
        add(p + "conv1.w", blk.conv1.w, blk.conv1.gw);
        add(p + "conv1.b", blk.conv1.b, blk.conv1.gb);
        if (blk.norm1) {
            add(p + "norm1.gamma", blk.norm1->gamma, blk.norm1->ggamma);
            add(p + "norm1.beta", blk.norm1->beta, blk.norm1->gbeta);
        }
        add(p + "conv2.w", blk.conv2.w, blk.conv2.gw);
        add(p + "conv2.b", blk.conv2.b, blk.conv2.gb);
        if (blk.norm2) {
            add(p + "norm2.gamma", blk.norm2->gamma, blk.norm2->ggamma);
            add(p + "norm2.beta", blk.norm2->beta, blk.norm2->gbeta);
        }
        if (blk.proj) {
            add(p + "proj.w", blk.proj->w, blk.proj->gw);
            add(p + "proj.b", blk.proj->b, blk.proj->gb);
        }
        if (blk.norm_proj) {
            add(p + "norm_proj.gamma", blk.norm_proj->gamma, blk.norm_proj->ggamma);
            add(p + "norm_proj.beta", blk.norm_proj->beta, blk.norm_proj->gbeta);
        }
    }
    if (cfg_.label_embed) {
        add("label_embed.w", label_embed_.w, label_embed_.gw);
        add("label_embed.b", label_embed_.b, label_embed_.gb);
    }
    add("head.w", head_.w, head_.gw);
    add("head.b", head_.b, head_.gb);
    return out;
}

std::size_t LabelConditionedNet::n_params() const {
    std::size_t n = 0;
    for (const auto& p : const_cast<LabelConditionedNet*>(this)->params()) n += p.w->size();
    return n;
}

void LabelConditionedNet::zero_grads() {
    for (auto& p : params()) std::fill(p.g->begin(), p.g->end(), 0.0);
}

double LabelConditionedNet::grad_abs_sum() const {
    double s = 0.0;
    for (const auto& p : const_cast<LabelConditionedNet*>(this)->params())
        for (double g : *p.g) s += std::abs(g);
    return s;
}

void LabelConditionedNet::save(std::ostream& os) const {
    nlohmann::json j;
    j["n_classes"] = cfg_.n_classes;
    j["input"] = {cfg_.input.c, cfg_.input.h, cfg_.input.w};
    j["base_channels"] = cfg_.base_channels;
    j["n_stages"] = cfg_.n_stages;
    j["blocks_per_stage"] = cfg_.blocks_per_stage;
    j["partition_block"] = cfg_.partition_block;
    j["label_embed"] = cfg_.label_embed;
    j["leaky_slope"] = cfg_.leaky_slope;
    j["norm_groups"] = cfg_.norm_groups;

    auto* self = const_cast<LabelConditionedNet*>(this);
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& p : self->params())
        tensors.push_back({{"name", p.name}, {"size", p.w->size()}});
    j["tensors"] = tensors;

    const std::string header = j.dump();
    const std::uint64_t len = header.size();
    os.write("ICLCKPT1", 8);
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& p : self->params())
        os.write(reinterpret_cast<const char*>(p.w->data()),
                 static_cast<std::streamsize>(p.w->size() * sizeof(double)));
}

LabelConditionedNet LabelConditionedNet::load(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "ICLCKPT1", 8) != 0)
        throw IoError("checkpoint: bad magic");
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header(len, '\0');
    is.read(header.data(), static_cast<std::streamsize>(len));
    if (!is) throw IoError("checkpoint: truncated header");
    const auto j = nlohmann::json::parse(header);

    NetConfig cfg;
    cfg.n_classes = j.at("n_classes");
    cfg.input = Shape{j.at("input")[0], j.at("input")[1], j.at("input")[2]};
    cfg.base_channels = j.at("base_channels");
    cfg.n_stages = j.at("n_stages");
    cfg.blocks_per_stage = j.at("blocks_per_stage");
    cfg.partition_block = j.at("partition_block");
    cfg.label_embed = j.at("label_embed");
    cfg.leaky_slope = j.at("leaky_slope");
    cfg.norm_groups = j.at("norm_groups");

    LabelConditionedNet net;
    net.cfg_ = cfg;
    net.build();

    auto views = net.params();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != views.size()) throw IoError("checkpoint: tensor count mismatch");
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (tensors[i].at("name") != views[i].name ||
            tensors[i].at("size") != views[i].w->size())
            throw IoError("checkpoint: tensor layout mismatch at " + views[i].name);
        is.read(reinterpret_cast<char*>(views[i].w->data()),
                static_cast<std::streamsize>(views[i].w->size() * sizeof(double)));
    }
    if (!is) throw IoError("checkpoint: truncated tensor data");
    return net;
}

std::pair<Mat, Mat> recurse(const LabelConditionedNet& net, const Tensor& x) {
    LabelConditionedNet::Cache c0, c1;
    const Mat logits0 = net.forward(x, empty_signal_rows(x.n, net.n_classes()), c0);
    Mat p0;
    softmax_rows(logits0, p0);
    const Mat logits1 = net.forward(x, p0, c1);
    return {logits0, logits1};
}

FrozenCheckpoint snapshot(const LabelConditionedNet& net, int task_id) {
    return FrozenCheckpoint(net, task_id);
}

}  // namespace icl
