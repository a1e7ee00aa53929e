#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "icl/rng.hpp"
#include "icl/tensor.hpp"

namespace icl {

// Uniform distribution over all classes: the uninformative second input.
std::vector<double> empty_signal(int n_total_classes);

Mat empty_signal_rows(int n, int n_total_classes);
Mat one_hot_rows(const std::vector<int>& labels, int n_total_classes);

// Named view over one parameter tensor and its gradient buffer.
struct ParamView {
    std::string name;
    std::vector<double>* w = nullptr;
    std::vector<double>* g = nullptr;
};

struct Conv2d {
    int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
    std::vector<double> w, b, gw, gb;  // w: out_c x (in_c*k*k)

    void configure(int in_c_, int out_c_, int k_, int stride_, int pad_);
    void init_weights(Rng& rng);
    int out_h(int ih) const { return (ih + 2 * pad - k) / stride + 1; }
    int out_w(int iw) const { return (iw + 2 * pad - k) / stride + 1; }

    struct Cache {
        Tensor in;
    };
    void forward(const Tensor& x, Tensor& y, Cache& c) const;
    void backward(const Cache& c, const Tensor& dy, Tensor* dx, bool param_grads);
};

// Per-sample channel-group normalization with learned scale and shift.
struct GroupNorm {
    int channels = 0, groups = 1;
    double eps = 1e-5;
    std::vector<double> gamma, beta, ggamma, gbeta;

    void configure(int channels_, int groups_);

    struct Cache {
        Tensor xhat;                    // normalized input
        std::vector<double> inv_std;    // per (sample, group)
    };
    void forward(const Tensor& x, Tensor& y, Cache& c) const;
    void backward(const Cache& c, const Tensor& dy, Tensor& dx, bool param_grads);
};

struct Linear {
    int in_d = 0, out_d = 0;
    std::vector<double> w, b, gw, gb;  // w: out_d x in_d

    void configure(int in_d_, int out_d_);
    void init_weights(Rng& rng);

    struct Cache {
        Mat in;
    };
    void forward(const Mat& x, Mat& y, Cache& c) const;
    void backward(const Cache& c, const Mat& dy, Mat* dx, bool param_grads);
};

// Two 3x3 convs with group normalization, identity (or 1x1 projected) skip,
// ReLU activations. norm_groups = 0 builds the un-normalized variant.
struct ResidualBlock {
    Conv2d conv1, conv2;
    std::optional<Conv2d> proj;
    std::optional<GroupNorm> norm1, norm2, norm_proj;
    int stride = 1;

    void configure(int in_c, int out_c, int stride_, int norm_groups);
    void init_weights(Rng& rng);

    struct Cache {
        Conv2d::Cache c1, c2, cp;
        GroupNorm::Cache n1, n2, np;
        Tensor pre1;  // first branch activation input (post-norm, pre-ReLU)
        Tensor sum;   // second branch output + skip, before final ReLU
    };
    void forward(const Tensor& x, Tensor& y, Cache& c) const;
    void backward(const Cache& c, const Tensor& dy, Tensor& dx, bool param_grads);
};

struct NetConfig {
    int n_classes = 10;     // fixed head over the whole stream
    Shape input{1, 8, 8};
    int base_channels = 16;
    int n_stages = 2;        // channels double, spatial halves, per stage after the first
    int blocks_per_stage = 1;
    int partition_block = -1;  // block boundary for the split; -1 = midpoint
    bool label_embed = true;   // false = plain backbone, second input inert
    double leaky_slope = 0.01;
    int norm_groups = 4;  // group-norm groups per conv (capped by channels); 0 = off

    int n_blocks() const { return n_stages * blocks_per_stage; }
    int resolved_partition() const;
};

// Split backbone: logits = part2(part1(x) + label_embed(y2)). part1 is the
// stem plus the blocks before the partition; label_embed is a linear map to
// the partition channel count followed by LeakyReLU, broadcast over space.
class LabelConditionedNet {
public:
    LabelConditionedNet() = default;
    LabelConditionedNet(const NetConfig& cfg, Rng& init_rng);

    const NetConfig& config() const { return cfg_; }
    int n_classes() const { return cfg_.n_classes; }
    int feature_channels() const { return feat_c_; }

    struct Cache {
        Conv2d::Cache stem;
        GroupNorm::Cache stem_norm;
        Tensor stem_pre;
        std::vector<ResidualBlock::Cache> blocks;
        Mat y2;         // second input as given
        Mat embed_pre;  // label_embed linear output before LeakyReLU
        Tensor features;  // partition feature map, injection applied
        Mat pooled;
        int head_in_h = 0, head_in_w = 0;
        Linear::Cache head;
    };

    // Full forward pass; throws ShapeError on input/second-input mismatch.
    Mat forward(const Tensor& x, const Mat& y2, Cache& cache) const;
    // Stops at the partition point (used by the feature-projection loss).
    const Tensor& forward_features(const Tensor& x, const Mat& y2, Cache& cache) const;

    struct BackwardOpts {
        bool param_grads = true;  // false: leave gradient buffers untouched
        bool want_dy2 = false;    // also return d(loss)/d(second input)
    };
    std::optional<Mat> backward(Cache& cache, const Mat& dlogits, const BackwardOpts& opts);
    // Gradient entering at the partition feature map.
    std::optional<Mat> backward_features(Cache& cache, const Tensor& dfeatures,
                                         const BackwardOpts& opts);

    std::vector<ParamView> params();
    std::size_t n_params() const;
    void zero_grads();
    double grad_abs_sum() const;

    void save(std::ostream& os) const;
    static LabelConditionedNet load(std::istream& is);

private:
    void build();  // allocates layers from cfg_, no weight init

    NetConfig cfg_;
    int feat_c_ = 0;   // channels at the partition
    int last_c_ = 0;   // channels entering the head
    int partition_ = 0;

    Conv2d stem_;
    std::optional<GroupNorm> stem_norm_;
    std::vector<ResidualBlock> blocks_;
    Linear label_embed_;
    Linear head_;
};

// Immutable copy of the network at a task boundary. Forward passes through it
// never produce parameter gradients.
class FrozenCheckpoint {
public:
    FrozenCheckpoint(const LabelConditionedNet& net, int task_id)
        : net_(net), task_id_(task_id) {
        net_.zero_grads();
    }

    int task_id() const { return task_id_; }
    const LabelConditionedNet& net() const { return net_; }

    Mat forward(const Tensor& x, const Mat& y2, LabelConditionedNet::Cache& cache) const {
        return net_.forward(x, y2, cache);
    }
    const Tensor& forward_features(const Tensor& x, const Mat& y2,
                                   LabelConditionedNet::Cache& cache) const {
        return net_.forward_features(x, y2, cache);
    }

    // Input-gradient path only; parameter buffers stay zero by contract.
    Mat backward_dy2(LabelConditionedNet::Cache& cache, const Mat& dlogits) const {
        LabelConditionedNet::BackwardOpts opts;
        opts.param_grads = false;
        opts.want_dy2 = true;
        return *net_.backward(cache, dlogits, opts);
    }

    double param_grad_abs_sum() const { return net_.grad_abs_sum(); }

private:
    mutable LabelConditionedNet net_;
    int task_id_ = 0;
};

// logits0 = f(x, empty); logits1 = f(x, softmax(logits0)).
std::pair<Mat, Mat> recurse(const LabelConditionedNet& net, const Tensor& x);

FrozenCheckpoint snapshot(const LabelConditionedNet& net, int task_id);

}  // namespace icl
