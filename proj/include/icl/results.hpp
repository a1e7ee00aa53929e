#pragma once

#include <string>
#include <vector>

#include "icl/config.hpp"
#include "icl/trainer.hpp"

namespace icl {

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;
};

Aggregate aggregate(const std::vector<double>& xs);

// Per-config result set across seeds, mirrored 1:1 into results.json.
struct ResultBundle {
    std::string config_hash;
    std::string version;
    std::string config_text;
    std::string protocol;
    std::string method;
    std::vector<SeedRunResult> seeds;

    Aggregate faa_agg() const;
    Aggregate ff_agg() const;
    Aggregate ece_agg() const;

    void write(const std::string& out_dir, const ExperimentConfig& cfg, int ece_bins) const;
    static ResultBundle read(const std::string& results_json_path);
};

struct CompareReport {
    std::vector<std::uint64_t> seeds;
    std::vector<double> faa_delta;  // a - b per seed
    std::vector<double> ff_delta;
    std::vector<double> ece_delta;
    bool faa_up_every_seed = false;
    bool ece_down_every_seed = false;
    bool ff_down_on_mean = false;
    bool directional_pass = false;

    std::string to_text(const std::string& name_a, const std::string& name_b) const;
};

// Seed-paired metric deltas; throws ConfigError when the bundles are not
// comparable (different protocols or seed lists).
CompareReport compare_bundles(const ResultBundle& a, const ResultBundle& b);

}  // namespace icl
