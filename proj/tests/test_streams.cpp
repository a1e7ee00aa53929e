#include <doctest.h>

#include <set>

#include <nlohmann/json.hpp>

#include "icl/error.hpp"
#include "icl/streams.hpp"

using namespace icl;

namespace {
DatasetPair blobs10() {
    return make_blobs_dataset(10, 20, 8, Shape{1, 8, 8}, 0.3, 99);
}
}  // namespace

TEST_CASE("cil stream: equal disjoint class groups covering the train set") {
    const auto data = blobs10();
    const auto stream = make_cil_stream(data.train, 5, 3);

    REQUIRE(stream.n_tasks() == 5);
    std::set<int> all_classes;
    std::set<int> all_samples;
    for (const auto& task : stream.tasks) {
        CHECK(task.classes.size() == 2);
        int count_sum = 0;
        for (const auto& [cls, cnt] : task.per_class_counts) count_sum += cnt;
        CHECK(count_sum == static_cast<int>(task.train_samples.size()));
        for (int cls : task.classes) {
            CHECK(all_classes.count(cls) == 0);  // pairwise disjoint
            all_classes.insert(cls);
        }
        for (int s : task.train_samples) {
            CHECK(all_samples.count(s) == 0);  // partition, no duplicates
            all_samples.insert(s);
        }
    }
    CHECK(all_classes.size() == 10);
    CHECK(static_cast<int>(all_samples.size()) == data.train.size());
}

TEST_CASE("cil stream: single task degenerates to joint training") {
    const auto data = blobs10();
    const auto stream = make_cil_stream(data.train, 1, 0);
    REQUIRE(stream.n_tasks() == 1);
    CHECK(stream.tasks[0].classes.size() == 10);
    CHECK(static_cast<int>(stream.tasks[0].train_samples.size()) == data.train.size());
}

TEST_CASE("cil stream: deterministic in (dataset, n_tasks, seed)") {
    const auto data = blobs10();
    const auto a = make_cil_stream(data.train, 5, 42);
    const auto b = make_cil_stream(data.train, 5, 42);
    CHECK(a.manifest_json() == b.manifest_json());
    for (int t = 0; t < 5; ++t)
        CHECK(a.tasks[t].train_samples == b.tasks[t].train_samples);

    const auto c = make_cil_stream(data.train, 5, 43);
    CHECK(a.manifest_json() != c.manifest_json());
}

TEST_CASE("cil stream: configuration errors") {
    const auto data = blobs10();
    CHECK_THROWS_AS(make_cil_stream(data.train, 3, 0), ConfigError);  // 10 % 3 != 0
    CHECK_THROWS_AS(make_cil_stream(data.train, 0, 0), ConfigError);
    CHECK_THROWS_AS(make_cil_stream(LabeledDataset{}, 1, 0), ConfigError);
}

TEST_CASE("gcil uniform: forced split when the class-count range is a point") {
    const auto data = blobs10();
    GcilOptions opt;
    opt.n_tasks = 6;
    opt.class_count_min = opt.class_count_max = 5;
    opt.samples_per_task = 100;
    const auto stream = make_gcil_stream(data.train, opt, 1);
    for (const auto& task : stream.tasks) {
        CHECK(task.classes.size() == 5);
        for (const auto& [cls, cnt] : task.per_class_counts) CHECK(cnt == 20);
    }
}

TEST_CASE("gcil: class reappearance across tasks is near-certain") {
    const auto data = make_blobs_dataset(100, 4, 1, Shape{1, 4, 4}, 0.3, 5);
    GcilOptions opt;
    opt.n_tasks = 20;
    opt.class_count_min = 5;
    opt.class_count_max = 25;
    opt.samples_per_task = 60;
    for (std::uint64_t seed = 0; seed <= 4; ++seed) {
        const auto stream = make_gcil_stream(data.train, opt, seed);
        std::multiset<int> occurrences;
        for (const auto& task : stream.tasks)
            for (int cls : task.classes) occurrences.insert(cls);
        bool any_dup = false;
        for (int cls : occurrences)
            if (occurrences.count(cls) >= 2) any_dup = true;
        CHECK(any_dup);
    }
}

TEST_CASE("gcil longtail: per-class counts decay and stay imbalanced") {
    const auto data = blobs10();
    GcilOptions opt;
    opt.n_tasks = 8;
    opt.longtail = true;
    opt.class_count_min = 3;
    opt.class_count_max = 6;
    opt.samples_per_task = 40;  // within the 20-sample class pools after decay
    const auto stream = make_gcil_stream(data.train, opt, 7);
    for (const auto& task : stream.tasks) {
        std::vector<int> counts;
        for (const auto& [cls, cnt] : task.per_class_counts) counts.push_back(cnt);
        std::sort(counts.rbegin(), counts.rend());
        for (std::size_t i = 1; i < counts.size(); ++i) CHECK(counts[i - 1] >= counts[i]);
        if (counts.size() > 1) CHECK(counts.front() > counts.back());
    }
}

TEST_CASE("gcil: range validation") {
    const auto data = blobs10();
    GcilOptions opt;
    opt.class_count_min = 5;
    opt.class_count_max = 3;  // inverted
    CHECK_THROWS_AS(make_gcil_stream(data.train, opt, 0), ConfigError);
    opt.class_count_min = 1;
    opt.class_count_max = 11;  // out of bounds
    CHECK_THROWS_AS(make_gcil_stream(data.train, opt, 0), ConfigError);
    opt.class_count_max = 5;
    opt.samples_per_task = 3;  // below max class count
    CHECK_THROWS_AS(make_gcil_stream(data.train, opt, 0), ConfigError);
}

TEST_CASE("manifest json carries protocol, seed and per-task structure") {
    const auto data = blobs10();
    const auto stream = make_cil_stream(data.train, 5, 11);
    const auto j = nlohmann::json::parse(stream.manifest_json());
    CHECK(j.at("protocol") == "cil");
    CHECK(j.at("seed") == 11);
    REQUIRE(j.at("tasks").size() == 5);
    CHECK(j.at("tasks")[0].at("classes").size() == 2);
    CHECK(j.at("tasks")[0].at("per_class_counts").size() == 2);
}

TEST_CASE("class_to_task rejects overlapping (GCIL) streams") {
    const auto data = blobs10();
    GcilOptions opt;
    opt.n_tasks = 12;
    opt.class_count_min = 4;
    opt.class_count_max = 8;
    opt.samples_per_task = 40;
    const auto stream = make_gcil_stream(data.train, opt, 3);
    CHECK_THROWS_AS(stream.class_to_task(), ConfigError);
}
