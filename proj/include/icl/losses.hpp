#pragma once

#include <optional>

#include "icl/buffer.hpp"
#include "icl/model.hpp"

namespace icl {

enum class IdeDistance { MseLogits, KlProbs };

struct LossConfig {
    double alpha = 0.5;   // weight of the idempotence distillation term
    double beta = 0.5;    // weight of the replay term
    double gamma = 1.0;   // weight of the feature-projection term (plugin)
    double p_empty = 0.9; // probability of the uniform second input
    IdeDistance distance = IdeDistance::MseLogits;

    // Alternative gradient routings, off by default. When enabled, gradients
    // also flow through the fed-back prediction (ice) or through the frozen
    // model's second-input path (ide).
    bool ice_grad_through_inner = false;
    bool ide_grad_through_teacher_input = false;

    void validate() const;
};

// One draw of the second input: the uniform signal with probability p_empty,
// otherwise the ground-truth one-hot vector.
std::vector<double> choose_second_input(int label, int n_total_classes, double p_empty,
                                        Rng& rng);
Mat choose_second_inputs(const std::vector<int>& labels, int n_total_classes, double p_empty,
                         Rng& rng);

double cross_entropy(const Mat& logits, const std::vector<int>& labels);

// Two-pass cross-entropy: CE on f(x, y*) plus CE on f(x, softmax(f(x, y*))),
// the fed-back prediction treated as constant unless grad_through_inner.
// Returns the (unweighted) value; gradients are scaled by `weight`.
double l_ice(LabelConditionedNet& net, const Batch& batch, const LossConfig& cfg, Rng& rng,
             bool do_backward, double weight);

// Replay form of l_ice; empty batch contributes zero.
double l_rep_ice(LabelConditionedNet& net, const Batch& buffer_batch, const LossConfig& cfg,
                 Rng& rng, bool do_backward, double weight);

// Idempotence distillation: d(y0, y1) with y0 = net(x, empty) and
// y1 = checkpoint(x, softmax(y0)) held as a constant target.
double l_ide(LabelConditionedNet& net, const FrozenCheckpoint& checkpoint, const Batch& batch,
             const LossConfig& cfg, bool do_backward, double weight);

// Ablation form: both passes through the current net, second pass stop-gradded.
double l_ide_naive(LabelConditionedNet& net, const Batch& batch, const LossConfig& cfg,
                   bool do_backward, double weight);

// Mean L2 distance between projected current features and checkpoint features
// at the partition point, both under the empty second input. `projection` is
// the learnable square map on the feature (channel) dimension.
double l_bfp(LabelConditionedNet& net, const FrozenCheckpoint& checkpoint, Linear& projection,
             const Batch& batch, bool do_backward, double weight);

enum class IdeVariant { None, Checkpointed, Naive };

struct LossBreakdown {
    double total = 0.0;
    double ice = 0.0;
    double ide = 0.0;
    double rep_ice = 0.0;
    double bfp = 0.0;
};

Batch concat(const Batch& a, const Batch& b);

// Full objective: l_ice + alpha * l_ide(current u b1) + beta * l_rep_ice(b2)
// [+ gamma * l_bfp(current u b1) when a projection is supplied]. Terms whose
// inputs are absent (no checkpoint, empty buffer batch) are disabled.
LossBreakdown l_ider(LabelConditionedNet& net, const FrozenCheckpoint* checkpoint,
                     const Batch& current, const Batch& buffer_b1, const Batch& buffer_b2,
                     const LossConfig& cfg, Rng& rng, bool do_backward,
                     IdeVariant variant = IdeVariant::Checkpointed,
                     Linear* bfp_projection = nullptr);

}  // namespace icl
