#include <doctest.h>

#include <cmath>

#include "icl/error.hpp"
#include "icl/losses.hpp"
#include "test_util.hpp"

using namespace icl;
using namespace icl::testutil;

namespace {

void zero_params(LabelConditionedNet& net) {
    for (auto& p : net.params()) std::fill(p.w->begin(), p.w->end(), 0.0);
}

void set_head_bias(LabelConditionedNet& net, const std::vector<double>& bias) {
    for (auto& p : net.params())
        if (p.name == "head.b") *p.w = bias;
}

double mse_rows(const Mat& a, const Mat& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) s += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
    return s / a.v.size();
}

}  // namespace

TEST_CASE("choose_second_input obeys the empty-signal probability") {
    Rng rng = Rng::seeded(5, 5);
    SUBCASE("p_empty = 1 always yields the uniform signal") {
        for (int i = 0; i < 50; ++i) {
            const auto v = choose_second_input(3, 10, 1.0, rng);
            for (double p : v) CHECK(p == doctest::Approx(0.1));
        }
    }
    SUBCASE("p_empty = 0 always yields the one-hot label") {
        for (int i = 0; i < 50; ++i) {
            const auto v = choose_second_input(3, 10, 0.0, rng);
            CHECK(v[3] == 1.0);
            double sum = 0.0;
            for (double p : v) sum += p;
            CHECK(sum == doctest::Approx(1.0));
        }
    }
    SUBCASE("p_empty = 0.9 empirical frequency within 0.01 of 0.9") {
        int empties = 0;
        const int n = 10000;
        for (int i = 0; i < n; ++i)
            if (choose_second_input(2, 10, 0.9, rng)[2] < 0.5) ++empties;
        CHECK(empties / static_cast<double>(n) == doctest::Approx(0.9).epsilon(0.0112));
    }
}

TEST_CASE("l_ice on a zero-weight two-class net equals 2 ln 2") {
    auto net = make_tiny_net(11, 2);
    zero_params(net);
    Batch b = random_batch(1, net.config().input, 2, 53);
    b.labels = {1};

    Rng rng = Rng::seeded(9, 9);
    LossConfig cfg;
    cfg.p_empty = 1.0;  // first pass fed the uniform signal
    const double v = l_ice(net, b, cfg, rng, false, 1.0);
    CHECK(v == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("l_ice approaches zero in the perfect-prediction limit") {
    auto net = make_tiny_net(11, 4);
    zero_params(net);  // inert everything; head bias decides the logits
    set_head_bias(net, {0.0, 30.0, 0.0, 0.0});
    Batch b = random_batch(3, net.config().input, 4, 59);
    b.labels = {1, 1, 1};

    Rng rng = Rng::seeded(9, 9);
    LossConfig cfg;
    const double v = l_ice(net, b, cfg, rng, false, 1.0);
    CHECK(v >= 0.0);
    CHECK(v < 1e-8);
}

TEST_CASE("l_ice dominates its first cross-entropy term") {
    auto net = make_tiny_net(13);
    const Batch b = random_batch(8, net.config().input, 4, 61);
    LossConfig cfg;

    Rng rng_loss = Rng::seeded(21, 0);
    const double v = l_ice(net, b, cfg, rng_loss, false, 1.0);

    Rng rng_repeat = Rng::seeded(21, 0);
    const Mat y_star = choose_second_inputs(b.labels, 4, cfg.p_empty, rng_repeat);
    LabelConditionedNet::Cache c;
    const double ce1 = cross_entropy(net.forward(b.x, y_star, c), b.labels);
    CHECK(v >= ce1);
    CHECK(v >= 0.0);
}

TEST_CASE("l_ide hand instance: constant-logit nets give 0.25") {
    // Zero-weight nets ignore both inputs; head biases pin the logits exactly.
    auto net = make_tiny_net(11, 2);
    zero_params(net);
    set_head_bias(net, {1.0, -1.0});  // y0 = [1, -1]

    auto teacher = make_tiny_net(12, 2);
    zero_params(teacher);
    set_head_bias(teacher, {0.5, -0.5});  // y1 = [0.5, -0.5]
    const auto ckpt = snapshot(teacher, 0);

    Batch b = random_batch(1, net.config().input, 2, 67);
    LossConfig cfg;
    const double v = l_ide(net, ckpt, b, cfg, false, 1.0);
    CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("l_ide vanishes at the idempotent fixed point") {
    auto net = make_tiny_net(11, 4);
    zero_params(net);
    set_head_bias(net, {0.3, -0.2, 0.1, 0.0});
    const auto ckpt = snapshot(net, 0);
    Batch b = random_batch(4, net.config().input, 4, 71);

    LossConfig cfg;
    CHECK(l_ide(net, ckpt, b, cfg, false, 1.0) == doctest::Approx(0.0));
    cfg.distance = IdeDistance::KlProbs;
    CHECK(l_ide(net, ckpt, b, cfg, false, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("l_ide_naive equals l_ide when checkpoint weights match the net") {
    auto net = make_tiny_net(17);
    const auto ckpt = snapshot(net, 0);
    const Batch b = random_batch(6, net.config().input, 4, 73);
    LossConfig cfg;
    const double a = l_ide(net, ckpt, b, cfg, false, 1.0);
    const double n = l_ide_naive(net, b, cfg, false, 1.0);
    CHECK(a == doctest::Approx(n).epsilon(1e-14));
    CHECK(a >= 0.0);
}

TEST_CASE("l_rep_ice: empty batch contributes zero, otherwise matches l_ice") {
    auto net = make_tiny_net(19);
    LossConfig cfg;
    Rng rng = Rng::seeded(3, 3);
    CHECK(l_rep_ice(net, Batch{}, cfg, rng, false, 1.0) == 0.0);

    const Batch b = random_batch(5, net.config().input, 4, 79);
    Rng r1 = Rng::seeded(4, 4), r2 = Rng::seeded(4, 4);
    CHECK(l_rep_ice(net, b, cfg, r1, false, 1.0) == l_ice(net, b, cfg, r2, false, 1.0));
}

TEST_CASE("l_bfp is zero for identity projection at a fresh snapshot") {
    auto net = make_tiny_net(23);
    const auto ckpt = snapshot(net, 0);
    Linear proj;
    proj.configure(net.feature_channels(), net.feature_channels());
    for (int i = 0; i < proj.in_d; ++i) proj.w[i * proj.in_d + i] = 1.0;

    const Batch b = random_batch(4, net.config().input, 4, 83);
    CHECK(l_bfp(net, ckpt, proj, b, false, 1.0) == doctest::Approx(0.0));

    Linear bad;
    bad.configure(net.feature_channels() + 1, net.feature_channels() + 1);
    CHECK_THROWS_AS(l_bfp(net, ckpt, bad, b, false, 1.0), ShapeError);
}

TEST_CASE("l_ider collapses to l_ice when alpha = beta = 0 and on the stream head") {
    auto net = make_tiny_net(29);
    const Batch cur = random_batch(6, net.config().input, 4, 89);
    LossConfig cfg;
    cfg.alpha = 0.0;
    cfg.beta = 0.0;

    Rng r1 = Rng::seeded(8, 8), r2 = Rng::seeded(8, 8);
    const auto breakdown = l_ider(net, nullptr, cur, {}, {}, cfg, r1, false);
    CHECK(breakdown.total == l_ice(net, cur, cfg, r2, false, 1.0));

    // Task-1 shape: weights on but no checkpoint and empty buffer batches.
    LossConfig full;
    Rng r3 = Rng::seeded(8, 8), r4 = Rng::seeded(8, 8);
    const auto head = l_ider(net, nullptr, cur, {}, {}, full, r3, false);
    CHECK(head.total == l_ice(net, cur, full, r4, false, 1.0));
    CHECK(head.ide == 0.0);
    CHECK(head.rep_ice == 0.0);
}

// ---------------------------------------------------------------------------
// Gradient verification against central finite differences.

TEST_CASE("gradient check: l_ice (stop-grad default)") {
    auto net = make_tiny_net(31);
    const Batch b = random_batch(6, net.config().input, 4, 97);
    LossConfig cfg;

    // Pin the fed-back prediction at the unperturbed parameters.
    Rng pin = Rng::seeded(55, 0);
    const Mat y_star = choose_second_inputs(b.labels, 4, cfg.p_empty, pin);
    LabelConditionedNet::Cache c0;
    Mat p_pinned;
    softmax_rows(net.forward(b.x, y_star, c0), p_pinned);

    auto rep = finite_difference_check(
        net.params(),
        [&] {
            net.zero_grads();
            Rng rng = Rng::seeded(55, 0);
            l_ice(net, b, cfg, rng, true, 1.0);
        },
        [&] {
            LabelConditionedNet::Cache ca, cb;
            return cross_entropy(net.forward(b.x, y_star, ca), b.labels) +
                   cross_entropy(net.forward(b.x, p_pinned, cb), b.labels);
        });
    CAPTURE(rep.worst_param);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gradient check: l_ice with gradient through the inner prediction") {
    auto net = make_tiny_net(37);
    const Batch b = random_batch(6, net.config().input, 4, 101);
    LossConfig cfg;
    cfg.ice_grad_through_inner = true;

    auto rep = finite_difference_check(
        net.params(),
        [&] {
            net.zero_grads();
            Rng rng = Rng::seeded(56, 0);
            l_ice(net, b, cfg, rng, true, 1.0);
        },
        [&] {
            Rng rng = Rng::seeded(56, 0);
            return l_ice(net, b, cfg, rng, false, 1.0);
        });
    CAPTURE(rep.worst_param);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("stop-gradient property: default l_ice gradient ignores the inner path") {
    auto net = make_tiny_net(37);
    const Batch b = random_batch(6, net.config().input, 4, 101);
    LossConfig cfg;  // default: stop-grad

    // Against the full composite objective the stop-grad gradient must NOT
    // match; the discrepancy is exactly the inner-path contribution.
    auto rep = finite_difference_check(
        net.params(),
        [&] {
            net.zero_grads();
            Rng rng = Rng::seeded(56, 0);
            l_ice(net, b, cfg, rng, true, 1.0);
        },
        [&] {
            Rng rng = Rng::seeded(56, 0);
            return l_ice(net, b, cfg, rng, false, 1.0);
        });
    CHECK(rep.max_rel_err > 1e-3);
}

TEST_CASE("gradient check: l_ide, both distances, both gradient routings") {
    auto net = make_tiny_net(41);
    auto teacher = make_tiny_net(42);
    const auto ckpt = snapshot(teacher, 0);
    const Batch b = random_batch(6, net.config().input, 4, 103);

    for (const auto distance : {IdeDistance::MseLogits, IdeDistance::KlProbs}) {
        for (const bool through_teacher : {false, true}) {
            LossConfig cfg;
            cfg.distance = distance;
            cfg.ide_grad_through_teacher_input = through_teacher;

            Mat y1_pinned;
            if (!through_teacher) {
                LabelConditionedNet::Cache c0, ct;
                const Mat y0 = net.forward(b.x, empty_signal_rows(b.size(), 4), c0);
                Mat p0;
                softmax_rows(y0, p0);
                y1_pinned = ckpt.forward(b.x, p0, ct);
            }

            auto rep = finite_difference_check(
                net.params(),
                [&] {
                    net.zero_grads();
                    l_ide(net, ckpt, b, cfg, true, 1.0);
                },
                [&]() -> double {
                    if (through_teacher) return l_ide(net, ckpt, b, cfg, false, 1.0);
                    LabelConditionedNet::Cache c0;
                    const Mat y0 = net.forward(b.x, empty_signal_rows(b.size(), 4), c0);
                    if (distance == IdeDistance::MseLogits) return mse_rows(y0, y1_pinned);
                    double kl = 0.0;
                    std::vector<double> logp(4), logq(4);
                    Mat p1;
                    softmax_rows(y1_pinned, p1);
                    for (int i = 0; i < y0.rows; ++i) {
                        log_softmax_row(y1_pinned.row(i), 4, logp.data());
                        log_softmax_row(y0.row(i), 4, logq.data());
                        for (int j = 0; j < 4; ++j)
                            kl += p1.at(i, j) * (logp[j] - logq[j]) / y0.rows;
                    }
                    return kl;
                });
            CAPTURE(static_cast<int>(distance));
            CAPTURE(through_teacher);
            CAPTURE(rep.worst_param);
            CHECK(rep.max_rel_err < 1e-4);

            // Frozen contract regardless of routing.
            CHECK(ckpt.param_grad_abs_sum() == 0.0);
        }
    }
}

TEST_CASE("gradient check: l_ide_naive") {
    auto net = make_tiny_net(43);
    const Batch b = random_batch(6, net.config().input, 4, 107);
    LossConfig cfg;

    // Frozen second-pass target at the unperturbed parameters.
    LabelConditionedNet::Cache c0, c1;
    const Mat y0 = net.forward(b.x, empty_signal_rows(b.size(), 4), c0);
    Mat p0;
    softmax_rows(y0, p0);
    const Mat y1_pinned = net.forward(b.x, p0, c1);

    auto rep = finite_difference_check(
        net.params(),
        [&] {
            net.zero_grads();
            l_ide_naive(net, b, cfg, true, 1.0);
        },
        [&] {
            LabelConditionedNet::Cache c;
            const Mat z = net.forward(b.x, empty_signal_rows(b.size(), 4), c);
            return mse_rows(z, y1_pinned);
        });
    CAPTURE(rep.worst_param);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("gradient check: l_bfp over net and projection parameters") {
    auto net = make_tiny_net(47);
    auto other = make_tiny_net(48);
    const auto ckpt = snapshot(other, 0);
    const Batch b = random_batch(5, net.config().input, 4, 109);

    Linear proj;
    proj.configure(net.feature_channels(), net.feature_channels());
    Rng prng = Rng::seeded(12, 12);
    proj.init_weights(prng);

    auto params = net.params();
    params.push_back({"proj.w", &proj.w, &proj.gw});
    params.push_back({"proj.b", &proj.b, &proj.gb});

    auto rep = finite_difference_check(
        params,
        [&] {
            net.zero_grads();
            std::fill(proj.gw.begin(), proj.gw.end(), 0.0);
            std::fill(proj.gb.begin(), proj.gb.end(), 0.0);
            l_bfp(net, ckpt, proj, b, true, 1.0);
        },
        [&] { return l_bfp(net, ckpt, proj, b, false, 1.0); });
    CAPTURE(rep.worst_param);
    CHECK(rep.max_rel_err < 1e-4);
    CHECK(ckpt.param_grad_abs_sum() == 0.0);
}
