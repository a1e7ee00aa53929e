#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icl/buffer.hpp"
#include "icl/losses.hpp"
#include "icl/metrics.hpp"
#include "icl/model.hpp"
#include "icl/streams.hpp"

namespace icl {

enum class Method { Finetune, FinetunePlain, ER, ERID, BFPID, NaiveID };

Method method_from_string(const std::string& s);
std::string to_string(Method m);

struct TrainConfig {
    int epochs_per_task = 5;
    int batch_size = 32;
    double learning_rate = 0.03;
    std::vector<int> lr_decay_epochs;  // empty: 60% and 90% of epochs_per_task
    double lr_decay_factor = 0.1;
    double momentum = 0.9;
    double grad_clip_norm = 10.0;  // global-norm clip; 0 disables
    std::uint64_t seed = 0;
    Method method = Method::ERID;
    LossConfig loss;
    int buffer_capacity = 200;
    std::optional<BufferPolicy> buffer_policy;  // default: per method
    NetConfig net;

    void validate() const;
    std::vector<int> resolved_decay_epochs() const;
    BufferPolicy resolved_policy() const;
    // Per-method weight overrides (finetune: alpha=beta=0; ER: alpha=0).
    LossConfig resolved_loss() const;
    bool uses_buffer() const;
};

// Plain single-pass cross-entropy step loss; the unmodified-backbone control.
double plain_ce_loss(LabelConditionedNet& net, const Batch& batch, bool do_backward,
                     double weight);

// Scales gradients so their global L2 norm is at most max_norm; returns the
// pre-clip norm. max_norm <= 0 leaves gradients untouched.
double clip_grad_norm(const std::vector<ParamView>& params, double max_norm);

class SgdMomentum {
public:
    explicit SgdMomentum(double momentum = 0.9) : momentum_(momentum) {}
    void step(const std::vector<ParamView>& params, double lr);
    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    double momentum_;
    std::vector<std::vector<double>> velocity_;
};

struct TrainerState {
    LabelConditionedNet net;
    std::optional<FrozenCheckpoint> checkpoint;
    ReplayBuffer buffer;
    std::optional<Linear> bfp_projection;
    int current_task = 0;
    bool task_trained = false;
    Rng data_rng, loss_rng, replay_rng;
    SgdMomentum optimizer;

    std::vector<ParamView> all_params();
    void save(std::ostream& os) const;
    static TrainerState load(std::istream& is);
};

// Fresh state for a run: seeded net init, empty buffer, derived rng streams.
TrainerState make_trainer(const TrainConfig& cfg, int n_classes, Shape input_shape);

struct TaskTrainLog {
    std::vector<LossBreakdown> steps;
    double seconds = 0.0;
};

// One task of training: interleaves current/replay batches, updates the
// buffer during the first epoch only, leaves current_task untouched.
TaskTrainLog train_task(TrainerState& state, const TaskSpec& task,
                        const LabeledDataset& train, const TrainConfig& cfg);

// Snapshot the net as the new frozen checkpoint and advance the task counter.
void end_of_task(TrainerState& state, const TrainConfig& cfg);

struct SeedRunResult {
    std::uint64_t seed = 0;
    AccuracyMatrix matrix;
    double faa_value = 0.0;
    std::optional<double> ff_value;  // undefined for single-task streams
    double ece_value = 0.0;
    ConfidenceLog final_log;
    std::vector<ReliabilityBin> reliability;
    std::vector<double> task_mass;  // empty unless CIL
    std::vector<double> final_self_distances;
    std::vector<double> final_cross_distances;  // vs last pre-final checkpoint
    std::vector<TaskTrainLog> task_logs;
    std::vector<double> per_task_seconds;
    double total_seconds = 0.0;
};

struct RunOptions {
    std::string persist_dir;  // empty: keep everything in memory
    bool resume = false;      // reuse per-task states found in persist_dir
    int ece_bins = 10;
};

// Full stream pass: train/evaluate per task, final calibration + diagnostics.
SeedRunResult run_experiment(const TaskStream& stream, const LabeledDataset& train,
                             const LabeledDataset& test, const TrainConfig& cfg,
                             const RunOptions& opts = {});

// Test-set indices whose label belongs to the task's class set.
std::vector<int> test_indices_for_task(const LabeledDataset& test, const TaskSpec& task);

}  // namespace icl
