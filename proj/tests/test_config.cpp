#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "icl/config.hpp"
#include "icl/error.hpp"
#include "icl/results.hpp"

using namespace icl;

namespace {

const char* kSample = R"(
# sample experiment
[dataset]
name = blobs
blobs_classes = 4
blobs_train_per_class = 16
blobs_test_per_class = 8

[stream]
protocol = cil
n_tasks = 2

[train]
method = er_id
epochs_per_task = 1
batch_size = 8
learning_rate = 0.05
buffer_capacity = 20

[loss]
alpha = 0.25
beta = 0.75
p_empty = 0.8
distance = kl

[model]
base_channels = 4
stages = 2

[run]
out = /tmp/icl_cfg_test
seeds = 3, 5
plots = accuracy_curve, task_mass
)";

}  // namespace

TEST_CASE("config parsing: values, defaults, lists") {
    const auto kv = KeyValueFile::parse_string(kSample, "sample.ini");
    const auto cfg = ExperimentConfig::from_kv(kv);

    CHECK(cfg.dataset.name == "blobs");
    CHECK(cfg.stream.n_tasks == 2);
    CHECK(cfg.train.method == Method::ERID);
    CHECK(cfg.train.loss.alpha == doctest::Approx(0.25));
    CHECK(cfg.train.loss.beta == doctest::Approx(0.75));
    CHECK(cfg.train.loss.p_empty == doctest::Approx(0.8));
    CHECK(cfg.train.loss.distance == IdeDistance::KlProbs);
    CHECK(cfg.train.momentum == doctest::Approx(0.9));  // default preserved
    CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 5});
    CHECK(cfg.plots == std::vector<std::string>{"accuracy_curve", "task_mass"});
}

TEST_CASE("config parsing: diagnostics carry file and line") {
    CHECK_THROWS_WITH_AS(KeyValueFile::parse_string("[a]\nnonsense line\n", "bad.ini"),
                         doctest::Contains("bad.ini:2"), ConfigError);

    const auto kv = KeyValueFile::parse_string("[train]\nbatch_size = twelve\n", "bad2.ini");
    CHECK_THROWS_WITH_AS(kv.get_int("train", "batch_size", 1),
                         doctest::Contains("bad2.ini:2"), ConfigError);

    CHECK_THROWS_AS(
        ExperimentConfig::from_kv(KeyValueFile::parse_string(
            "[dataset]\nname = blobs\n[train]\nmethod = nonsense\n", "bad3.ini")),
        ConfigError);
}

TEST_CASE("config validation: invalid ranges rejected") {
    auto parse_with = [](const std::string& extra) {
        std::string text = std::string(kSample) + extra;
        return ExperimentConfig::from_kv(KeyValueFile::parse_string(text, "x.ini"));
    };
    CHECK_THROWS_AS(parse_with("\n[loss]\np_empty = 1.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_with("\n[loss]\nalpha = -0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_with("\n[train]\nepochs_per_task = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_with("\n[run]\nplots = pie_chart\n"), ConfigError);
}

TEST_CASE("dataset root: env var fills in and missing paths fail") {
    const char* saved = std::getenv("ICL_DATA_ROOT");

    setenv("ICL_DATA_ROOT", "/definitely/not/a/path", 1);
    const std::string text = "[dataset]\nname = digits\n[run]\nseeds = 0\n";
    CHECK_THROWS_AS(ExperimentConfig::from_kv(KeyValueFile::parse_string(text, "env.ini")),
                    IoError);

    setenv("ICL_DATA_ROOT", "data/digits", 1);
    const auto cfg = ExperimentConfig::from_kv(KeyValueFile::parse_string(text, "env.ini"));
    CHECK(cfg.dataset.root == "data/digits");

    if (saved) setenv("ICL_DATA_ROOT", saved, 1);
    else unsetenv("ICL_DATA_ROOT");
}

TEST_CASE("resolved text is stable and hash distinguishes configs") {
    const auto kv = KeyValueFile::parse_string(kSample, "sample.ini");
    auto cfg = ExperimentConfig::from_kv(kv);
    const auto h1 = cfg.config_hash();
    CHECK(h1 == ExperimentConfig::from_kv(kv).config_hash());

    cfg.train.loss.alpha = 0.3;
    CHECK(cfg.config_hash() != h1);
}

TEST_CASE("result bundle round-trips through results.json and compares to itself") {
    namespace fs = std::filesystem;
    const auto kv = KeyValueFile::parse_string(kSample, "sample.ini");
    auto cfg = ExperimentConfig::from_kv(kv);
    cfg.seeds = {3};
    cfg.train.seed = 3;

    const auto data = cfg.load_dataset();
    const auto stream = cfg.build_stream(data.train, 3);
    auto train_cfg = cfg.train;
    train_cfg.seed = 3;

    ResultBundle bundle;
    bundle.method = to_string(cfg.train.method);
    bundle.protocol = to_string(cfg.stream.protocol);
    bundle.seeds.push_back(run_experiment(stream, data.train, data.test, train_cfg));

    const fs::path dir = fs::temp_directory_path() / "icl_results_test";
    fs::remove_all(dir);
    bundle.write(dir.string(), cfg, cfg.ece_bins);
    CHECK(fs::exists(dir / "results.json"));
    CHECK(fs::exists(dir / "acc_matrix_seed3.csv"));
    CHECK(fs::exists(dir / "reliability_seed3.csv"));

    const auto loaded = ResultBundle::read((dir / "results.json").string());
    REQUIRE(loaded.seeds.size() == 1);
    CHECK(loaded.seeds[0].faa_value == doctest::Approx(bundle.seeds[0].faa_value));

    const auto self = compare_bundles(loaded, loaded);
    for (double d : self.faa_delta) CHECK(d == 0.0);
    for (double d : self.ece_delta) CHECK(d == 0.0);
    CHECK_FALSE(self.directional_pass);  // zero deltas are not improvements

    auto other = loaded;
    other.seeds[0].seed = 99;
    CHECK_THROWS_AS(compare_bundles(loaded, other), ConfigError);
    fs::remove_all(dir);
}
