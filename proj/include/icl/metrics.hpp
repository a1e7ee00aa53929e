#pragma once

#include <vector>

#include "icl/model.hpp"
#include "icl/rng.hpp"
#include "icl/streams.hpp"

namespace icl {

// a(i, t) = test accuracy on task i after finishing task t, for i <= t.
class AccuracyMatrix {
public:
    AccuracyMatrix() = default;
    explicit AccuracyMatrix(int n_tasks)
        : T_(n_tasks), a_(static_cast<std::size_t>(n_tasks) * n_tasks, -1.0) {}

    int n_tasks() const { return T_; }
    void set(int task, int after_task, double acc);
    double at(int task, int after_task) const;
    bool complete() const;  // every lower-triangular entry filled

    std::vector<double> final_row() const;  // a(i, T-1) for all i

private:
    int T_ = 0;
    std::vector<double> a_;
};

// Mean over tasks of the final-task accuracies.
double faa(const AccuracyMatrix& m);

// (1/(T-1)) * sum_i max_j (a(i,j) - a(i,T-1)), i and j over all but the last task.
double final_forgetting(const AccuracyMatrix& m);

struct ConfidenceRecord {
    double confidence = 0.0;  // max softmax probability
    int predicted = 0;
    int label = 0;
    int task_of_origin = 0;
};

using ConfidenceLog = std::vector<ConfidenceRecord>;

// Expected calibration error over n_bins equal bins of (0, 1].
double ece(const ConfidenceLog& log, int n_bins);

// Per-bin rows for the reliability diagram: [lo, hi, count, accuracy, confidence].
struct ReliabilityBin {
    double lo = 0.0, hi = 0.0;
    int count = 0;
    double accuracy = 0.0;
    double confidence = 0.0;
};
std::vector<ReliabilityBin> reliability_bins(const ConfidenceLog& log, int n_bins);

enum class SecondInputMode { Empty, CorrectOneHot, WrongOneHot };

// Per-sample ||f2(x, softmax(f1(x, z))) - f1(x, z)||_2 where f1 is `net` and f2
// is `net` again (self mode) or the frozen checkpoint (cross mode). `rng` is
// used only by the wrong-one-hot mode.
std::vector<double> idempotence_distances(const LabelConditionedNet& net,
                                          const LabelConditionedNet* second_net,
                                          const LabeledDataset& data,
                                          SecondInputMode mode, Rng& rng);

// Mean softmax mass per task's class set over the test samples; defined only
// for CIL streams (disjoint class sets). Components sum to one.
std::vector<double> task_probability_mass(const LabelConditionedNet& net,
                                          const LabeledDataset& test,
                                          const TaskStream& stream);

// Evaluation helpers shared by trainer and diagnostics: single forward with
// the empty second input, argmax prediction.
struct EvalResult {
    double accuracy = 0.0;
    ConfidenceLog log;
};
EvalResult evaluate(const LabelConditionedNet& net, const LabeledDataset& data,
                    const std::vector<int>& indices, int task_of_origin,
                    int eval_batch = 256);

}  // namespace icl
