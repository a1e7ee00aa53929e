#include <doctest.h>

#include <cmath>
#include <sstream>

#include "icl/error.hpp"
#include "icl/model.hpp"
#include "test_util.hpp"

using namespace icl;
using namespace icl::testutil;

TEST_CASE("empty_signal is the uniform distribution") {
    const auto v = empty_signal(10);
    REQUIRE(v.size() == 10);
    for (double p : v) CHECK(p == doctest::Approx(0.1));

    CHECK(empty_signal(1) == std::vector<double>{1.0});
    for (int n : {2, 7, 100}) {
        double sum = 0.0;
        for (double p : empty_signal(n)) sum += p;
        CHECK(sum == doctest::Approx(1.0));
    }
    CHECK_THROWS_AS(empty_signal(0), ConfigError);
    CHECK_THROWS_AS(empty_signal(-3), ConfigError);
}

TEST_CASE("zeroed label embedding makes the second input inert") {
    auto net = make_tiny_net(3);
    for (auto& p : net.params())
        if (p.name.rfind("label_embed", 0) == 0)
            std::fill(p.w->begin(), p.w->end(), 0.0);

    const Batch b = random_batch(5, net.config().input, net.n_classes(), 17);
    LabelConditionedNet::Cache c1, c2;
    const Mat za = net.forward(b.x, empty_signal_rows(5, 4), c1);
    const Mat zb = net.forward(b.x, one_hot_rows(b.labels, 4), c2);
    for (std::size_t i = 0; i < za.v.size(); ++i) CHECK(za.v[i] == zb.v[i]);

    // And recursion collapses: logits1 == logits0 exactly.
    auto [l0, l1] = recurse(net, b.x);
    for (std::size_t i = 0; i < l0.v.size(); ++i) CHECK(l0.v[i] == l1.v[i]);
}

TEST_CASE("second input changes the output of a randomly initialized net") {
    auto net = make_tiny_net(4);
    const Batch b = random_batch(6, net.config().input, net.n_classes(), 23);
    LabelConditionedNet::Cache c1, c2;
    const Mat za = net.forward(b.x, empty_signal_rows(6, 4), c1);
    const Mat zb = net.forward(b.x, one_hot_rows(b.labels, 4), c2);
    double max_abs = 0.0;
    for (std::size_t i = 0; i < za.v.size(); ++i)
        max_abs = std::max(max_abs, std::abs(za.v[i] - zb.v[i]));
    CHECK(max_abs > 0.0);
}

TEST_CASE("recurse distances are finite and non-negative") {
    auto net = make_tiny_net(5);
    const Batch b = random_batch(4, net.config().input, net.n_classes(), 29);
    auto [l0, l1] = recurse(net, b.x);
    for (int i = 0; i < l0.rows; ++i) {
        double sq = 0.0;
        for (int j = 0; j < l0.cols; ++j) {
            const double d = l1.at(i, j) - l0.at(i, j);
            sq += d * d;
        }
        CHECK(std::isfinite(sq));
        CHECK(sq >= 0.0);
    }
}

TEST_CASE("forward rejects shape mismatches") {
    auto net = make_tiny_net(6);
    Batch b = random_batch(3, net.config().input, net.n_classes(), 31);
    LabelConditionedNet::Cache c;
    CHECK_THROWS_AS(net.forward(b.x, empty_signal_rows(3, 7), c), ShapeError);

    Tensor bad(3, 2, 4, 4);
    CHECK_THROWS_AS(net.forward(bad, empty_signal_rows(3, 4), c), ShapeError);
}

TEST_CASE("snapshot isolates the checkpoint from later updates") {
    auto net = make_tiny_net(7);
    const Batch b = random_batch(4, net.config().input, net.n_classes(), 37);

    auto ckpt = snapshot(net, 0);
    LabelConditionedNet::Cache c0;
    const Mat before = ckpt.forward(b.x, empty_signal_rows(4, 4), c0);

    // Bitwise equality with the source net at the snapshot instant.
    LabelConditionedNet::Cache cs;
    const Mat src = net.forward(b.x, empty_signal_rows(4, 4), cs);
    for (std::size_t i = 0; i < src.v.size(); ++i) CHECK(src.v[i] == before.v[i]);

    for (auto& p : net.params())
        for (auto& w : *p.w) w += 0.25;

    LabelConditionedNet::Cache c1;
    const Mat after = ckpt.forward(b.x, empty_signal_rows(4, 4), c1);
    for (std::size_t i = 0; i < before.v.size(); ++i) CHECK(before.v[i] == after.v[i]);
}

TEST_CASE("checkpoint serialization round-trips bitwise") {
    auto net = make_tiny_net(41);
    std::stringstream ss;
    net.save(ss);
    auto loaded = LabelConditionedNet::load(ss);

    const Batch b = random_batch(3, net.config().input, net.n_classes(), 43);
    LabelConditionedNet::Cache c1, c2;
    const Mat za = net.forward(b.x, empty_signal_rows(3, 4), c1);
    const Mat zb = loaded.forward(b.x, empty_signal_rows(3, 4), c2);
    for (std::size_t i = 0; i < za.v.size(); ++i) CHECK(za.v[i] == zb.v[i]);
}

TEST_CASE("partition point controls the injection channel width") {
    NetConfig cfg = tiny_net_config();
    cfg.partition_block = 0;
    Rng r1 = Rng::seeded(1, 1);
    LabelConditionedNet at_stem(cfg, r1);
    CHECK(at_stem.feature_channels() == cfg.base_channels);

    cfg.partition_block = 2;
    Rng r2 = Rng::seeded(1, 1);
    LabelConditionedNet at_end(cfg, r2);
    CHECK(at_end.feature_channels() == cfg.base_channels * 2);

    cfg.partition_block = 3;
    Rng r3 = Rng::seeded(1, 1);
    CHECK_THROWS_AS(LabelConditionedNet(cfg, r3), ConfigError);
}

TEST_CASE("tiny gradient-check network stays under the parameter budget") {
    auto net = make_tiny_net();
    CHECK(net.n_params() <= 500);
    CHECK(net.n_params() > 100);
}
