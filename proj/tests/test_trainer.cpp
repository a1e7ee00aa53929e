#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "icl/error.hpp"
#include "icl/trainer.hpp"
#include "test_util.hpp"

using namespace icl;
using namespace icl::testutil;

namespace {

TrainConfig small_cfg(Method method, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.method = method;
    cfg.seed = seed;
    cfg.epochs_per_task = 2;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.05;
    cfg.buffer_capacity = 40;
    cfg.net = tiny_net_config(4);
    cfg.net.base_channels = 4;
    return cfg;
}

DatasetPair blobs4() {
    return make_blobs_dataset(4, 24, 12, Shape{1, 4, 4}, 0.35, 44);
}

}  // namespace

TEST_CASE("train_task rejects out-of-order tasks; end_of_task needs training") {
    const auto data = blobs4();
    const auto stream = make_cil_stream(data.train, 2, 1);
    auto cfg = small_cfg(Method::ERID, 0);
    auto state = make_trainer(cfg, data.train.n_classes, data.train.shape);

    CHECK_THROWS_AS(train_task(state, stream.tasks[1], data.train, cfg), SequencingError);
    CHECK_THROWS_AS(end_of_task(state, cfg), SequencingError);

    train_task(state, stream.tasks[0], data.train, cfg);
    end_of_task(state, cfg);
    REQUIRE(state.checkpoint.has_value());
    CHECK(state.checkpoint->task_id() == 0);
    CHECK(state.current_task == 1);
    CHECK_THROWS_AS(end_of_task(state, cfg), SequencingError);  // double call
}

TEST_CASE("the distillation term activates only after the first boundary") {
    const auto data = blobs4();
    const auto stream = make_cil_stream(data.train, 2, 2);
    auto cfg = small_cfg(Method::ERID, 3);
    auto state = make_trainer(cfg, data.train.n_classes, data.train.shape);

    const auto log0 = train_task(state, stream.tasks[0], data.train, cfg);
    for (const auto& s : log0.steps) CHECK(s.ide == 0.0);
    end_of_task(state, cfg);

    const auto log1 = train_task(state, stream.tasks[1], data.train, cfg);
    bool any_ide = false;
    for (const auto& s : log1.steps) any_ide |= s.ide != 0.0;
    CHECK(any_ide);
}

TEST_CASE("task-1 equivalence: er_id with zero weights is step-for-step pure l_ice") {
    const auto data = blobs4();
    const auto stream = make_cil_stream(data.train, 2, 5);

    auto cfg_a = small_cfg(Method::ERID, 7);
    cfg_a.loss.alpha = 0.0;
    cfg_a.loss.beta = 0.0;
    auto state_a = make_trainer(cfg_a, data.train.n_classes, data.train.shape);
    const auto log_a = train_task(state_a, stream.tasks[0], data.train, cfg_a);

    auto cfg_b = small_cfg(Method::Finetune, 7);
    auto state_b = make_trainer(cfg_b, data.train.n_classes, data.train.shape);
    const auto log_b = train_task(state_b, stream.tasks[0], data.train, cfg_b);

    REQUIRE(log_a.steps.size() == log_b.steps.size());
    for (std::size_t i = 0; i < log_a.steps.size(); ++i)
        CHECK(log_a.steps[i].total == log_b.steps[i].total);  // bitwise

    auto pa = state_a.net.params();
    auto pb = state_b.net.params();
    for (std::size_t i = 0; i < pa.size(); ++i)
        for (std::size_t j = 0; j < pa[i].w->size(); ++j)
            CHECK((*pa[i].w)[j] == (*pb[i].w)[j]);

    // The buffered method still filled its buffer along the way.
    CHECK(state_a.buffer.stream_count() == stream.tasks[0].train_samples.size());
    CHECK(state_b.buffer.stream_count() == 0);
}

TEST_CASE("buffer sees every sample exactly once per task") {
    const auto data = blobs4();
    const auto stream = make_cil_stream(data.train, 2, 6);
    auto cfg = small_cfg(Method::ERID, 8);
    cfg.epochs_per_task = 3;
    auto state = make_trainer(cfg, data.train.n_classes, data.train.shape);

    std::uint64_t expect = 0;
    for (const auto& task : stream.tasks) {
        train_task(state, task, data.train, cfg);
        expect += task.train_samples.size();
        CHECK(state.buffer.stream_count() == expect);
        end_of_task(state, cfg);
    }
}

TEST_CASE("run_experiment fills the lower triangle and is deterministic") {
    const auto data = blobs4();
    const auto stream = make_cil_stream(data.train, 2, 9);
    auto cfg = small_cfg(Method::ERID, 10);

    const auto r1 = run_experiment(stream, data.train, data.test, cfg);
    const auto r2 = run_experiment(stream, data.train, data.test, cfg);

    REQUIRE(r1.matrix.n_tasks() == 2);
    CHECK(r1.matrix.complete());
    for (int i = 0; i < 2; ++i)
        for (int t = i; t < 2; ++t) CHECK(r1.matrix.at(i, t) == r2.matrix.at(i, t));
    CHECK(r1.faa_value == r2.faa_value);
    CHECK(r1.ece_value == r2.ece_value);
    REQUIRE(r1.ff_value.has_value());
    CHECK(*r1.ff_value == *r2.ff_value);
    CHECK(r1.task_mass.size() == 2);
}

TEST_CASE("single-task stream: er and er_id land within 3 points") {
    const auto data = blobs4();
    const auto stream = make_cil_stream(data.train, 1, 11);
    auto cfg_er = small_cfg(Method::ER, 12);
    auto cfg_id = small_cfg(Method::ERID, 12);

    const auto r_er = run_experiment(stream, data.train, data.test, cfg_er);
    const auto r_id = run_experiment(stream, data.train, data.test, cfg_id);
    CHECK(std::abs(r_er.faa_value - r_id.faa_value) < 0.03);
    CHECK_FALSE(r_er.ff_value.has_value());
}

TEST_CASE("finetune forgets the first task on a two-task stream") {
    const auto data = make_blobs_dataset(4, 40, 16, Shape{1, 4, 4}, 0.3, 45);
    const auto stream = make_cil_stream(data.train, 2, 13);
    auto cfg = small_cfg(Method::Finetune, 14);
    cfg.epochs_per_task = 4;

    const auto r = run_experiment(stream, data.train, data.test, cfg);
    const double drop = r.matrix.at(0, 0) - r.matrix.at(0, 1);
    CHECK(drop > 0.30);
}

TEST_CASE("resume reproduces the uninterrupted run exactly") {
    namespace fs = std::filesystem;
    const auto data = blobs4();
    const auto stream = make_cil_stream(data.train, 2, 15);
    auto cfg = small_cfg(Method::ERID, 16);

    const fs::path dir = fs::temp_directory_path() / "icl_resume_test";
    fs::remove_all(dir);
    RunOptions opts;
    opts.persist_dir = dir.string();
    const auto full = run_experiment(stream, data.train, data.test, cfg, opts);

    // Simulate an interrupt after task 0 and resume.
    fs::remove(dir / "state_task1.bin");
    RunOptions resume_opts = opts;
    resume_opts.resume = true;
    const auto resumed = run_experiment(stream, data.train, data.test, cfg, resume_opts);

    for (int i = 0; i < 2; ++i)
        for (int t = i; t < 2; ++t)
            CHECK(full.matrix.at(i, t) == resumed.matrix.at(i, t));
    CHECK(full.faa_value == resumed.faa_value);
    CHECK(full.ece_value == resumed.ece_value);
    fs::remove_all(dir);
}

TEST_CASE("deep backbone variant trains a step without shape errors") {
    const auto data = make_blobs_dataset(4, 12, 4, Shape{1, 8, 8}, 0.3, 46);
    const auto stream = make_cil_stream(data.train, 2, 17);
    TrainConfig cfg;
    cfg.method = Method::ERID;
    cfg.seed = 18;
    cfg.epochs_per_task = 1;
    cfg.batch_size = 8;
    cfg.buffer_capacity = 16;
    cfg.net.base_channels = 8;
    cfg.net.n_stages = 4;
    cfg.net.blocks_per_stage = 2;  // 18-layer-style topology
    cfg.net.input = Shape{1, 8, 8};

    auto state = make_trainer(cfg, data.train.n_classes, data.train.shape);
    CHECK(state.net.config().resolved_partition() == 4);
    const auto log = train_task(state, stream.tasks[0], data.train, cfg);
    CHECK(!log.steps.empty());
    for (const auto& s : log.steps) CHECK(std::isfinite(s.total));
}
