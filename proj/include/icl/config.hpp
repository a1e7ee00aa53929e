#pragma once

#include <map>
#include <string>
#include <vector>

#include "icl/streams.hpp"
#include "icl/trainer.hpp"

namespace icl {

// Minimal sectioned key=value file; '#' and ';' start comments. Parse errors
// carry file:line diagnostics.
class KeyValueFile {
public:
    static KeyValueFile parse_file(const std::string& path);
    static KeyValueFile parse_string(const std::string& text, const std::string& name);

    bool has(const std::string& section, const std::string& key) const;
    std::string get(const std::string& section, const std::string& key,
                    const std::string& fallback) const;
    std::string require(const std::string& section, const std::string& key) const;

    double get_double(const std::string& section, const std::string& key, double fallback) const;
    int get_int(const std::string& section, const std::string& key, int fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& section, const std::string& key) const;

    const std::map<std::string, std::map<std::string, std::string>>& sections() const {
        return sections_;
    }

private:
    std::string name_;
    std::map<std::string, std::map<std::string, std::string>> sections_;
    std::map<std::string, int> lines_;  // "section.key" -> line number

    [[noreturn]] void fail(const std::string& section, const std::string& key,
                           const std::string& what) const;
};

struct DatasetConfig {
    std::string name = "digits";  // digits | idx | blobs
    std::string root;             // directory of IDX files (digits/idx)
    // blobs parameters
    int blobs_classes = 10;
    int blobs_train_per_class = 64;
    int blobs_test_per_class = 32;
    double blobs_noise = 0.35;
    std::uint64_t blobs_seed = 7;
};

struct StreamConfig {
    Protocol protocol = Protocol::CIL;
    int n_tasks = 5;
    GcilOptions gcil;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    StreamConfig stream;
    TrainConfig train;
    std::string out_dir = "runs/out";
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<std::string> plots;
    int ece_bins = 10;

    // Parses, applies ICL_DATA_ROOT, validates field ranges and referenced paths.
    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_kv(const KeyValueFile& kv);

    // Canonical flat rendering; embedded in results.json and hashed.
    std::string resolved_text() const;
    std::uint64_t config_hash() const;

    DatasetPair load_dataset() const;
    TaskStream build_stream(const LabeledDataset& train, std::uint64_t seed) const;
};

}  // namespace icl
