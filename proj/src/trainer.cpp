#include "icl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "icl/error.hpp"

namespace icl {

namespace {
// Fixed stream ids so tests can reproduce trainer randomness exactly.
constexpr std::uint64_t kInitStream = 400;
constexpr std::uint64_t kDataStream = 401;
constexpr std::uint64_t kLossStream = 402;
constexpr std::uint64_t kReplayStream = 403;
}  // namespace

Method method_from_string(const std::string& s) {
    if (s == "finetune") return Method::Finetune;
    if (s == "finetune_plain") return Method::FinetunePlain;
    if (s == "er") return Method::ER;
    if (s == "er_id") return Method::ERID;
    if (s == "bfp_id") return Method::BFPID;
    if (s == "naive_id") return Method::NaiveID;
    throw ConfigError("unknown method '" + s + "'");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::Finetune: return "finetune";
        case Method::FinetunePlain: return "finetune_plain";
        case Method::ER: return "er";
        case Method::ERID: return "er_id";
        case Method::BFPID: return "bfp_id";
        case Method::NaiveID: return "naive_id";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (epochs_per_task < 1) throw ConfigError("TrainConfig: epochs_per_task must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("TrainConfig: learning_rate must be > 0");
    if (buffer_capacity < 0) throw ConfigError("TrainConfig: buffer_capacity must be >= 0");
    loss.validate();
}

std::vector<int> TrainConfig::resolved_decay_epochs() const {
    if (!lr_decay_epochs.empty()) return lr_decay_epochs;
    std::vector<int> out;
    const int d1 = static_cast<int>(std::floor(0.6 * epochs_per_task));
    const int d2 = static_cast<int>(std::floor(0.9 * epochs_per_task));
    if (d1 > 0) out.push_back(d1);
    if (d2 > d1) out.push_back(d2);
    return out;
}

BufferPolicy TrainConfig::resolved_policy() const {
    if (buffer_policy) return *buffer_policy;
    return method == Method::BFPID ? BufferPolicy::ClassBalanced : BufferPolicy::Reservoir;
}

LossConfig TrainConfig::resolved_loss() const {
    LossConfig l = loss;
    switch (method) {
        case Method::Finetune:
        case Method::FinetunePlain:
            l.alpha = 0.0;
            l.beta = 0.0;
            break;
        case Method::ER:
            l.alpha = 0.0;
            break;
        default:
            break;
    }
    return l;
}

bool TrainConfig::uses_buffer() const {
    return buffer_capacity > 0 && method != Method::Finetune &&
           method != Method::FinetunePlain;
}

double plain_ce_loss(LabelConditionedNet& net, const Batch& batch, bool do_backward,
                     double weight) {
    if (batch.empty()) throw ShapeError("plain_ce_loss: empty batch");
    LabelConditionedNet::Cache cache;
    const Mat logits =
        net.forward(batch.x, empty_signal_rows(batch.size(), net.n_classes()), cache);
    const double value = cross_entropy(logits, batch.labels);
    if (do_backward) {
        Mat d;
        softmax_rows(logits, d);
        for (int i = 0; i < d.rows; ++i) d.at(i, batch.labels[i]) -= 1.0;
        const double s = weight / d.rows;
        for (auto& v : d.v) v *= s;
        net.backward(cache, d, {});
    }
    return value;
}

double clip_grad_norm(const std::vector<ParamView>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (double g : *p.g) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double scale = max_norm / norm;
        for (const auto& p : params)
            for (double& g : *p.g) g *= scale;
    }
    return norm;
}

void SgdMomentum::step(const std::vector<ParamView>& params, double lr) {
    if (velocity_.size() < params.size()) velocity_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& v = velocity_[i];
        auto& w = *params[i].w;
        auto& g = *params[i].g;
        if (v.size() != w.size()) v.assign(w.size(), 0.0);
        for (std::size_t j = 0; j < w.size(); ++j) {
            v[j] = momentum_ * v[j] + g[j];
            w[j] -= lr * v[j];
        }
    }
}

void SgdMomentum::save(std::ostream& os) const {
    const std::uint64_t n = velocity_.size();
    os.write(reinterpret_cast<const char*>(&momentum_), sizeof(momentum_));
    os.write(reinterpret_cast<const char*>(&n), sizeof(n));
    for (const auto& v : velocity_) {
        const std::uint64_t m = v.size();
        os.write(reinterpret_cast<const char*>(&m), sizeof(m));
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(m * sizeof(double)));
    }
}

void SgdMomentum::load(std::istream& is) {
    std::uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&momentum_), sizeof(momentum_));
    is.read(reinterpret_cast<char*>(&n), sizeof(n));
    velocity_.assign(n, {});
    for (auto& v : velocity_) {
        std::uint64_t m = 0;
        is.read(reinterpret_cast<char*>(&m), sizeof(m));
        v.resize(m);
        is.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(m * sizeof(double)));
    }
    if (!is) throw IoError("optimizer state: truncated");
}

std::vector<ParamView> TrainerState::all_params() {
    auto params = net.params();
    if (bfp_projection) {
        params.push_back({"bfp_proj.w", &bfp_projection->w, &bfp_projection->gw});
        params.push_back({"bfp_proj.b", &bfp_projection->b, &bfp_projection->gb});
    }
    return params;
}

TrainerState make_trainer(const TrainConfig& cfg, int n_classes, Shape input_shape) {
    cfg.validate();
    TrainerState state;
    NetConfig net_cfg = cfg.net;
    net_cfg.n_classes = n_classes;
    net_cfg.input = input_shape;
    if (cfg.method == Method::FinetunePlain) net_cfg.label_embed = false;

    Rng init = Rng::seeded(cfg.seed, kInitStream);
    state.net = LabelConditionedNet(net_cfg, init);
    state.buffer = ReplayBuffer(cfg.uses_buffer() ? cfg.buffer_capacity : 0,
                                cfg.resolved_policy(), cfg.seed);
    state.data_rng = Rng::seeded(cfg.seed, kDataStream);
    state.loss_rng = Rng::seeded(cfg.seed, kLossStream);
    state.replay_rng = Rng::seeded(cfg.seed, kReplayStream);
    state.optimizer = SgdMomentum(cfg.momentum);
    return state;
}

namespace {

void reset_projection_to_identity(Linear& proj) {
    std::fill(proj.w.begin(), proj.w.end(), 0.0);
    for (int i = 0; i < proj.in_d; ++i) proj.w[static_cast<std::size_t>(i) * proj.in_d + i] = 1.0;
    std::fill(proj.b.begin(), proj.b.end(), 0.0);
}

void zero_all_grads(TrainerState& state) {
    for (auto& p : state.all_params()) std::fill(p.g->begin(), p.g->end(), 0.0);
}

}  // namespace

TaskTrainLog train_task(TrainerState& state, const TaskSpec& task, const LabeledDataset& train,
                        const TrainConfig& cfg) {
    cfg.validate();
    if (task.task_id != state.current_task)
        throw SequencingError("train_task: task id " + std::to_string(task.task_id) +
                              " does not match trainer position " +
                              std::to_string(state.current_task));

    const auto t_start = std::chrono::steady_clock::now();
    const LossConfig loss_cfg = cfg.resolved_loss();
    const auto decay_epochs = cfg.resolved_decay_epochs();
    const Shape shape{state.net.config().input.c, state.net.config().input.h,
                      state.net.config().input.w};

    const bool id_method = cfg.method == Method::ERID || cfg.method == Method::BFPID;
    const bool naive_method = cfg.method == Method::NaiveID;

    if (cfg.method == Method::BFPID && state.checkpoint && !state.bfp_projection) {
        state.bfp_projection.emplace();
        state.bfp_projection->configure(state.net.feature_channels(),
                                        state.net.feature_channels());
        reset_projection_to_identity(*state.bfp_projection);
    }

    TaskTrainLog log;
    for (int epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
        double lr = cfg.learning_rate;
        for (int d : decay_epochs)
            if (epoch >= d) lr *= cfg.lr_decay_factor;

        std::vector<int> order = task.train_samples;
        state.data_rng.shuffle(order);

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - start);
            const std::vector<int> idx(order.begin() + start, order.begin() + start + n);
            const Batch cur = gather_batch(train, idx);

            // The distillation term applies from the second task on.
            IdeVariant variant = IdeVariant::None;
            if (id_method && state.checkpoint) variant = IdeVariant::Checkpointed;
            if (naive_method && state.current_task >= 1) variant = IdeVariant::Naive;

            Batch b1, b2;
            if (variant != IdeVariant::None && loss_cfg.alpha > 0.0 && !state.buffer.empty())
                b1 = state.buffer.sample_batch_as(shape, cur.size(), state.replay_rng);
            if (loss_cfg.beta > 0.0 && !state.buffer.empty())
                b2 = state.buffer.sample_batch_as(shape, cfg.batch_size, state.replay_rng);

            zero_all_grads(state);
            LossBreakdown breakdown;
            if (cfg.method == Method::FinetunePlain) {
                breakdown.ice = plain_ce_loss(state.net, cur, true, 1.0);
                breakdown.total = breakdown.ice;
            } else {
                Linear* proj = (cfg.method == Method::BFPID && state.bfp_projection &&
                                state.checkpoint)
                                   ? &*state.bfp_projection
                                   : nullptr;
                breakdown = l_ider(state.net,
                                   state.checkpoint ? &*state.checkpoint : nullptr, cur, b1,
                                   b2, loss_cfg, state.loss_rng, true, variant, proj);
            }
            const auto params = state.all_params();
            clip_grad_norm(params, cfg.grad_clip_norm);
            state.optimizer.step(params, lr);
            log.steps.push_back(breakdown);

            if (epoch == 0 && cfg.uses_buffer()) {
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    BufferedSample s;
                    s.x = train.samples[idx[i]];
                    s.label = train.labels[idx[i]];
                    state.buffer.offer(s);
                }
            }
        }
    }

    state.task_trained = true;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
                      .count();
    return log;
}

void end_of_task(TrainerState& state, const TrainConfig& cfg) {
    if (!state.task_trained)
        throw SequencingError("end_of_task: no completed train_task for task " +
                              std::to_string(state.current_task));
    state.checkpoint.emplace(state.net, state.current_task);
    state.current_task += 1;
    state.task_trained = false;

    if (cfg.method == Method::BFPID) {
        // New teacher: restart the feature projection from the identity.
        if (!state.bfp_projection) {
            state.bfp_projection.emplace();
            state.bfp_projection->configure(state.net.feature_channels(),
                                            state.net.feature_channels());
        }
        reset_projection_to_identity(*state.bfp_projection);
    }
}

// ---------------------------------------------------------------------------
// Trainer state serialization (exact resume, same machine).

void TrainerState::save(std::ostream& os) const {
    nlohmann::json j;
    j["current_task"] = current_task;
    j["task_trained"] = task_trained;
    j["has_checkpoint"] = checkpoint.has_value();
    j["checkpoint_task"] = checkpoint ? checkpoint->task_id() : -1;
    j["has_projection"] = bfp_projection.has_value();
    j["proj_dim"] = bfp_projection ? bfp_projection->in_d : 0;
    j["data_rng"] = data_rng.save_state();
    j["loss_rng"] = loss_rng.save_state();
    j["replay_rng"] = replay_rng.save_state();
    const std::string header = j.dump();
    const std::uint64_t len = header.size();
    os.write("ICLSTAT1", 8);
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));

    net.save(os);
    if (checkpoint) checkpoint->net().save(os);
    buffer.save(os);
    if (bfp_projection) {
        os.write(reinterpret_cast<const char*>(bfp_projection->w.data()),
                 static_cast<std::streamsize>(bfp_projection->w.size() * sizeof(double)));
        os.write(reinterpret_cast<const char*>(bfp_projection->b.data()),
                 static_cast<std::streamsize>(bfp_projection->b.size() * sizeof(double)));
    }
    optimizer.save(os);
}

TrainerState TrainerState::load(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != "ICLSTAT1") throw IoError("trainer state: bad magic");
    std::uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header(len, '\0');
    is.read(header.data(), static_cast<std::streamsize>(len));
    if (!is) throw IoError("trainer state: truncated header");
    const auto j = nlohmann::json::parse(header);

    TrainerState state;
    state.current_task = j.at("current_task");
    state.task_trained = j.at("task_trained");
    state.data_rng.load_state(j.at("data_rng"));
    state.loss_rng.load_state(j.at("loss_rng"));
    state.replay_rng.load_state(j.at("replay_rng"));

    state.net = LabelConditionedNet::load(is);
    if (j.at("has_checkpoint").get<bool>()) {
        LabelConditionedNet ckpt_net = LabelConditionedNet::load(is);
        state.checkpoint.emplace(ckpt_net, j.at("checkpoint_task").get<int>());
    }
    state.buffer = ReplayBuffer::load(is);
    if (j.at("has_projection").get<bool>()) {
        const int dim = j.at("proj_dim");
        state.bfp_projection.emplace();
        state.bfp_projection->configure(dim, dim);
        is.read(reinterpret_cast<char*>(state.bfp_projection->w.data()),
                static_cast<std::streamsize>(state.bfp_projection->w.size() * sizeof(double)));
        is.read(reinterpret_cast<char*>(state.bfp_projection->b.data()),
                static_cast<std::streamsize>(state.bfp_projection->b.size() * sizeof(double)));
    }
    state.optimizer.load(is);
    if (!is) throw IoError("trainer state: truncated body");
    return state;
}

// ---------------------------------------------------------------------------

std::vector<int> test_indices_for_task(const LabeledDataset& test, const TaskSpec& task) {
    std::vector<int> out;
    for (int i = 0; i < test.size(); ++i)
        if (std::find(task.classes.begin(), task.classes.end(), test.labels[i]) !=
            task.classes.end())
            out.push_back(i);
    return out;
}

namespace {

std::string state_path(const std::string& dir, int task) {
    return dir + "/state_task" + std::to_string(task) + ".bin";
}

LabeledDataset subset_by_classes(const LabeledDataset& src, const std::vector<bool>& keep_class,
                                 std::vector<int>* origin, const std::vector<int>& owner) {
    LabeledDataset out;
    out.shape = src.shape;
    out.n_classes = src.n_classes;
    out.split = src.split;
    for (int i = 0; i < src.size(); ++i)
        if (keep_class[src.labels[i]]) {
            out.samples.push_back(src.samples[i]);
            out.labels.push_back(src.labels[i]);
            if (origin) origin->push_back(owner[src.labels[i]]);
        }
    return out;
}

}  // namespace

SeedRunResult run_experiment(const TaskStream& stream, const LabeledDataset& train,
                             const LabeledDataset& test, const TrainConfig& cfg,
                             const RunOptions& opts) {
    cfg.validate();
    const auto run_start = std::chrono::steady_clock::now();

    SeedRunResult res;
    res.seed = cfg.seed;
    const int T = stream.n_tasks();
    res.matrix = AccuracyMatrix(T);

    TrainerState state = make_trainer(cfg, train.n_classes, train.shape);

    const bool persist = !opts.persist_dir.empty();
    if (persist) std::filesystem::create_directories(opts.persist_dir);
    const std::string progress_path = opts.persist_dir + "/progress.json";

    int start_task = 0;
    if (persist && opts.resume) {
        for (int t = 0; t < T; ++t)
            if (std::filesystem::exists(state_path(opts.persist_dir, t))) start_task = t + 1;
        // A fully finished directory re-runs the last task so the final
        // diagnostics (which need the pre-final checkpoint) are regenerated.
        start_task = std::min(start_task, T - 1);
        if (start_task > 0) {
            std::ifstream is(state_path(opts.persist_dir, start_task - 1), std::ios::binary);
            if (!is) throw IoError("run_experiment: cannot read resume state");
            state = TrainerState::load(is);
            std::ifstream pf(progress_path);
            if (!pf) throw IoError("run_experiment: missing " + progress_path);
            nlohmann::json progress;
            pf >> progress;
            for (const auto& e : progress.at("matrix"))
                if (e.at("after_task").get<int>() < start_task) {
                    res.matrix.set(e.at("task"), e.at("after_task"), e.at("accuracy"));
                }
            for (double s : progress.at("per_task_seconds"))
                if (static_cast<int>(res.per_task_seconds.size()) < start_task)
                    res.per_task_seconds.push_back(s);
        }
    }

    // Earliest task touching each class, for confidence-log attribution.
    std::vector<int> first_task_of_class(stream.n_classes, -1);
    for (const auto& task : stream.tasks)
        for (int cls : task.classes)
            if (first_task_of_class[cls] < 0) first_task_of_class[cls] = task.task_id;

    for (int t = start_task; t < T; ++t) {
        res.task_logs.push_back(train_task(state, stream.tasks[t], train, cfg));
        res.per_task_seconds.push_back(res.task_logs.back().seconds);

        for (int i = 0; i <= t; ++i) {
            const auto idx = test_indices_for_task(test, stream.tasks[i]);
            const auto eval = evaluate(state.net, test, idx, i);
            res.matrix.set(i, t, eval.accuracy);
        }

        if (t == T - 1) {
            // Final diagnostics against the checkpoint used while training
            // the last task, before it is replaced below.
            std::vector<bool> seen(stream.n_classes, false);
            for (int i = 0; i <= t; ++i)
                for (int cls : stream.tasks[i].classes) seen[cls] = true;
            std::vector<int> origin;
            const LabeledDataset final_test
                = subset_by_classes(test, seen, &origin, first_task_of_class);

            std::vector<int> all_idx(final_test.size());
            for (int i = 0; i < final_test.size(); ++i) all_idx[i] = i;
            auto eval = evaluate(state.net, final_test, all_idx, 0);
            for (std::size_t i = 0; i < eval.log.size(); ++i)
                eval.log[i].task_of_origin = origin[i];
            res.final_log = std::move(eval.log);
            res.ece_value = ece(res.final_log, opts.ece_bins);
            res.reliability = reliability_bins(res.final_log, opts.ece_bins);

            Rng diag_rng = Rng::seeded(cfg.seed, 777);
            res.final_self_distances = idempotence_distances(
                state.net, nullptr, final_test, SecondInputMode::Empty, diag_rng);
            if (state.checkpoint)
                res.final_cross_distances = idempotence_distances(
                    state.net, &state.checkpoint->net(), final_test, SecondInputMode::Empty,
                    diag_rng);
            if (stream.protocol == Protocol::CIL)
                res.task_mass = task_probability_mass(state.net, final_test, stream);
        }

        end_of_task(state, cfg);

        if (persist) {
            std::ofstream os(state_path(opts.persist_dir, t), std::ios::binary);
            if (!os) throw IoError("run_experiment: cannot write " +
                                   state_path(opts.persist_dir, t));
            state.save(os);

            nlohmann::json progress;
            progress["completed_tasks"] = t + 1;
            progress["per_task_seconds"] = res.per_task_seconds;
            auto entries = nlohmann::json::array();
            for (int i = 0; i <= t; ++i)
                for (int after = i; after <= t; ++after)
                    entries.push_back({{"task", i},
                                       {"after_task", after},
                                       {"accuracy", res.matrix.at(i, after)}});
            progress["matrix"] = entries;
            std::ofstream pf(progress_path);
            pf << progress.dump(2);
        }
    }

    res.faa_value = faa(res.matrix);
    if (T >= 2) res.ff_value = final_forgetting(res.matrix);
    res.total_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
    return res;
}

}  // namespace icl
