#include "icl/streams.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "icl/error.hpp"

namespace icl {

std::string to_string(Protocol p) {
    switch (p) {
        case Protocol::CIL: return "cil";
        case Protocol::GCILUniform: return "gcil-uniform";
        case Protocol::GCILLongtail: return "gcil-longtail";
    }
    return "?";
}

std::vector<int> TaskStream::class_to_task() const {
    std::vector<int> owner(n_classes, -1);
    for (const auto& task : tasks)
        for (int cls : task.classes) {
            if (owner[cls] != -1)
                throw ConfigError("class_to_task: class " + std::to_string(cls) +
                                  " appears in multiple tasks (GCIL stream?)");
            owner[cls] = task.task_id;
        }
    return owner;
}

std::string TaskStream::manifest_json() const {
    nlohmann::json j;
    j["protocol"] = to_string(protocol);
    j["seed"] = seed;
    j["n_classes"] = n_classes;
    j["tasks"] = nlohmann::json::array();
    for (const auto& task : tasks) {
        nlohmann::json t;
        t["task_id"] = task.task_id;
        t["classes"] = task.classes;
        nlohmann::json counts = nlohmann::json::object();
        for (const auto& [cls, cnt] : task.per_class_counts) counts[std::to_string(cls)] = cnt;
        t["per_class_counts"] = counts;
        t["n_train_samples"] = task.train_samples.size();
        j["tasks"].push_back(std::move(t));
    }
    return j.dump(2);
}

TaskStream make_cil_stream(const LabeledDataset& train, int n_tasks, std::uint64_t seed) {
    if (n_tasks < 1) throw ConfigError("make_cil_stream: n_tasks must be >= 1");
    if (train.size() == 0) throw ConfigError("make_cil_stream: empty dataset");
    if (train.n_classes % n_tasks != 0)
        throw ConfigError("make_cil_stream: n_classes (" + std::to_string(train.n_classes) +
                          ") not divisible by n_tasks (" + std::to_string(n_tasks) + ")");

    std::vector<int> perm(train.n_classes);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = Rng::seeded(seed, 201);
    rng.shuffle(perm);

    const int per_task = train.n_classes / n_tasks;
    TaskStream stream;
    stream.protocol = Protocol::CIL;
    stream.seed = seed;
    stream.n_classes = train.n_classes;

    std::vector<int> owner(train.n_classes);
    for (int t = 0; t < n_tasks; ++t) {
        TaskSpec task;
        task.task_id = t;
        task.classes.assign(perm.begin() + t * per_task, perm.begin() + (t + 1) * per_task);
        std::sort(task.classes.begin(), task.classes.end());
        for (int cls : task.classes) owner[cls] = t;
        stream.tasks.push_back(std::move(task));
    }
    for (int i = 0; i < train.size(); ++i) {
        TaskSpec& task = stream.tasks[owner[train.labels[i]]];
        task.train_samples.push_back(i);
        task.per_class_counts[train.labels[i]]++;
    }
    return stream;
}

TaskStream make_gcil_stream(const LabeledDataset& train, const GcilOptions& opt,
                            std::uint64_t seed) {
    if (opt.n_tasks < 1) throw ConfigError("make_gcil_stream: n_tasks must be >= 1");
    if (opt.class_count_min < 1 || opt.class_count_max > train.n_classes ||
        opt.class_count_min > opt.class_count_max)
        throw ConfigError("make_gcil_stream: class count range [" +
                          std::to_string(opt.class_count_min) + ", " +
                          std::to_string(opt.class_count_max) + "] out of bounds");
    if (opt.samples_per_task < opt.class_count_max)
        throw ConfigError("make_gcil_stream: samples_per_task below max class count");

    Rng rng = Rng::seeded(seed, 202);
    const auto by_class = train.indices_by_class();

    TaskStream stream;
    stream.protocol = opt.longtail ? Protocol::GCILLongtail : Protocol::GCILUniform;
    stream.seed = seed;
    stream.n_classes = train.n_classes;

    std::vector<int> all_classes(train.n_classes);
    std::iota(all_classes.begin(), all_classes.end(), 0);

    for (int t = 0; t < opt.n_tasks; ++t) {
        const int k = static_cast<int>(rng.uniform_int(opt.class_count_min, opt.class_count_max));

        // Classes without replacement within the task, with replacement across tasks.
        std::vector<int> pool = all_classes;
        rng.shuffle(pool);
        std::vector<int> chosen(pool.begin(), pool.begin() + k);

        // Per-class counts over the draw order (rank 0 = head class).
        std::vector<int> counts(k);
        if (!opt.longtail) {
            const int base = opt.samples_per_task / k;
            const int extra = opt.samples_per_task % k;
            for (int r = 0; r < k; ++r) counts[r] = base + (r < extra ? 1 : 0);
        } else {
            std::vector<double> weights(k);
            double wsum = 0.0;
            for (int r = 0; r < k; ++r) {
                weights[r] = std::pow(opt.decay, r);
                wsum += weights[r];
            }
            int assigned = 0;
            for (int r = 0; r < k; ++r) {
                counts[r] = std::max(1, static_cast<int>(std::llround(
                                            opt.samples_per_task * weights[r] / wsum)));
                assigned += counts[r];
            }
            // Fix rounding drift on the head class, keeping every count >= 1.
            counts[0] += opt.samples_per_task - assigned;
            if (counts[0] < 1) throw ConfigError("make_gcil_stream: samples_per_task too small");
            // Keep max > min when rounding flattened the profile.
            const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
            if (k > 1 && *mx == *mn && counts[k - 1] >= 2) {
                counts[0] += 1;
                counts[k - 1] -= 1;
            }
        }

        TaskSpec task;
        task.task_id = t;
        task.classes = chosen;
        std::sort(task.classes.begin(), task.classes.end());
        for (int r = 0; r < k; ++r) {
            const int cls = chosen[r];
            std::vector<int> members = by_class[cls];
            rng.shuffle(members);
            const int take = std::min<int>(counts[r], static_cast<int>(members.size()));
            for (int i = 0; i < take; ++i) task.train_samples.push_back(members[i]);
            task.per_class_counts[cls] = take;
        }
        stream.tasks.push_back(std::move(task));
    }
    return stream;
}

}  // namespace icl
