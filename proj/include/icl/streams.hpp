#pragma once

#include <map>
#include <string>
#include <vector>

#include "icl/dataset.hpp"

namespace icl {

enum class Protocol { CIL, GCILUniform, GCILLongtail };

std::string to_string(Protocol p);

struct TaskSpec {
    int task_id = 0;
    std::vector<int> classes;         // sorted, nonempty
    std::vector<int> train_samples;   // indices into the train dataset
    std::map<int, int> per_class_counts;
};

// Immutable after construction; safe to share read-only.
struct TaskStream {
    Protocol protocol = Protocol::CIL;
    std::uint64_t seed = 0;
    int n_classes = 0;
    std::vector<TaskSpec> tasks;

    int n_tasks() const { return static_cast<int>(tasks.size()); }

    // task id owning each class; only meaningful for CIL (disjoint class sets).
    std::vector<int> class_to_task() const;

    std::string manifest_json() const;
};

// Splits the class set into n_tasks equal disjoint groups via a seeded
// permutation; every train sample lands in exactly one task.
TaskStream make_cil_stream(const LabeledDataset& train, int n_tasks, std::uint64_t seed);

struct GcilOptions {
    int n_tasks = 10;
    bool longtail = false;
    int class_count_min = 2;
    int class_count_max = 5;
    int samples_per_task = 200;
    // Per-rank weight decay for the longtail mode.
    double decay = 0.9;
};

// Variable class counts, class reappearance across tasks, and (longtail mode)
// imbalanced per-class counts with geometric rank weights.
TaskStream make_gcil_stream(const LabeledDataset& train, const GcilOptions& opt,
                            std::uint64_t seed);

}  // namespace icl
