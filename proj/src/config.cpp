#include "icl/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "icl/error.hpp"

namespace icl {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& s) {
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i] == '#' || s[i] == ';') return s.substr(0, i);
    return s;
}

}  // namespace

KeyValueFile KeyValueFile::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str(), path);
}

KeyValueFile KeyValueFile::parse_string(const std::string& text, const std::string& name) {
    KeyValueFile kv;
    kv.name_ = name;
    std::istringstream is(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(name + ":" + std::to_string(line_no) +
                                  ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError(name + ":" + std::to_string(line_no) + ": empty section name");
            kv.sections_[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(name + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(name + ":" + std::to_string(line_no) + ": empty key");
        kv.sections_[section][key] = value;
        kv.lines_[section + "." + key] = line_no;
    }
    return kv;
}

void KeyValueFile::fail(const std::string& section, const std::string& key,
                        const std::string& what) const {
    const auto it = lines_.find(section + "." + key);
    const std::string where =
        it == lines_.end() ? name_ : name_ + ":" + std::to_string(it->second);
    throw ConfigError(where + ": [" + section + "] " + key + ": " + what);
}

bool KeyValueFile::has(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
}

std::string KeyValueFile::get(const std::string& section, const std::string& key,
                              const std::string& fallback) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return fallback;
    const auto k = s->second.find(key);
    return k == s->second.end() ? fallback : k->second;
}

std::string KeyValueFile::require(const std::string& section, const std::string& key) const {
    if (!has(section, key)) fail(section, key, "required field missing");
    return get(section, key, "");
}

double KeyValueFile::get_double(const std::string& section, const std::string& key,
                                double fallback) const {
    if (!has(section, key)) return fallback;
    try {
        std::size_t pos = 0;
        const std::string raw = get(section, key, "");
        const double v = std::stod(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception& e) {
        fail(section, key, std::string("not a number (") + e.what() + ")");
    }
}

int KeyValueFile::get_int(const std::string& section, const std::string& key,
                          int fallback) const {
    if (!has(section, key)) return fallback;
    try {
        std::size_t pos = 0;
        const std::string raw = get(section, key, "");
        const int v = std::stoi(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception& e) {
        fail(section, key, std::string("not an integer (") + e.what() + ")");
    }
}

bool KeyValueFile::get_bool(const std::string& section, const std::string& key,
                            bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = get(section, key, "");
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(section, key, "not a boolean ('" + v + "')");
}

std::vector<std::string> KeyValueFile::get_list(const std::string& section,
                                                const std::string& key) const {
    std::vector<std::string> out;
    std::string raw = get(section, key, "");
    std::replace(raw.begin(), raw.end(), ',', ' ');
    std::istringstream is(raw);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    return from_kv(KeyValueFile::parse_file(path));
}

ExperimentConfig ExperimentConfig::from_kv(const KeyValueFile& kv) {
    ExperimentConfig cfg;

    cfg.dataset.name = kv.get("dataset", "name", cfg.dataset.name);
    cfg.dataset.root = kv.get("dataset", "root", cfg.dataset.root);
    cfg.dataset.blobs_classes = kv.get_int("dataset", "blobs_classes", cfg.dataset.blobs_classes);
    cfg.dataset.blobs_train_per_class =
        kv.get_int("dataset", "blobs_train_per_class", cfg.dataset.blobs_train_per_class);
    cfg.dataset.blobs_test_per_class =
        kv.get_int("dataset", "blobs_test_per_class", cfg.dataset.blobs_test_per_class);
    cfg.dataset.blobs_noise = kv.get_double("dataset", "blobs_noise", cfg.dataset.blobs_noise);

    const std::string proto = kv.get("stream", "protocol", "cil");
    if (proto == "cil") cfg.stream.protocol = Protocol::CIL;
    else if (proto == "gcil-uniform") cfg.stream.protocol = Protocol::GCILUniform;
    else if (proto == "gcil-longtail") cfg.stream.protocol = Protocol::GCILLongtail;
    else throw ConfigError("config: [stream] protocol: unknown value '" + proto + "'");
    cfg.stream.n_tasks = kv.get_int("stream", "n_tasks", cfg.stream.n_tasks);
    cfg.stream.gcil.n_tasks = cfg.stream.n_tasks;
    cfg.stream.gcil.longtail = cfg.stream.protocol == Protocol::GCILLongtail;
    cfg.stream.gcil.class_count_min =
        kv.get_int("stream", "class_count_min", cfg.stream.gcil.class_count_min);
    cfg.stream.gcil.class_count_max =
        kv.get_int("stream", "class_count_max", cfg.stream.gcil.class_count_max);
    cfg.stream.gcil.samples_per_task =
        kv.get_int("stream", "samples_per_task", cfg.stream.gcil.samples_per_task);

    TrainConfig& t = cfg.train;
    t.method = method_from_string(kv.get("train", "method", to_string(t.method)));
    t.epochs_per_task = kv.get_int("train", "epochs_per_task", t.epochs_per_task);
    t.batch_size = kv.get_int("train", "batch_size", t.batch_size);
    t.learning_rate = kv.get_double("train", "learning_rate", t.learning_rate);
    t.lr_decay_factor = kv.get_double("train", "lr_decay_factor", t.lr_decay_factor);
    t.momentum = kv.get_double("train", "momentum", t.momentum);
    t.grad_clip_norm = kv.get_double("train", "grad_clip_norm", t.grad_clip_norm);
    t.buffer_capacity = kv.get_int("train", "buffer_capacity", t.buffer_capacity);
    for (const auto& s : kv.get_list("train", "lr_decay_epochs"))
        t.lr_decay_epochs.push_back(std::stoi(s));
    if (kv.has("train", "buffer_policy")) {
        const std::string p = kv.get("train", "buffer_policy", "");
        if (p == "reservoir") t.buffer_policy = BufferPolicy::Reservoir;
        else if (p == "class_balanced") t.buffer_policy = BufferPolicy::ClassBalanced;
        else throw ConfigError("config: [train] buffer_policy: unknown value '" + p + "'");
    }

    LossConfig& l = t.loss;
    l.alpha = kv.get_double("loss", "alpha", l.alpha);
    l.beta = kv.get_double("loss", "beta", l.beta);
    l.gamma = kv.get_double("loss", "gamma", l.gamma);
    l.p_empty = kv.get_double("loss", "p_empty", l.p_empty);
    const std::string dist = kv.get("loss", "distance", "mse");
    if (dist == "mse") l.distance = IdeDistance::MseLogits;
    else if (dist == "kl") l.distance = IdeDistance::KlProbs;
    else throw ConfigError("config: [loss] distance: unknown value '" + dist + "'");
    l.ice_grad_through_inner = kv.get_bool("loss", "ice_grad_through_inner", false);
    l.ide_grad_through_teacher_input =
        kv.get_bool("loss", "ide_grad_through_teacher_input", false);

    NetConfig& n = t.net;
    n.base_channels = kv.get_int("model", "base_channels", n.base_channels);
    n.n_stages = kv.get_int("model", "stages", n.n_stages);
    n.blocks_per_stage = kv.get_int("model", "blocks_per_stage", n.blocks_per_stage);
    n.partition_block = kv.get_int("model", "partition_block", n.partition_block);
    n.label_embed = kv.get_bool("model", "label_embed", n.label_embed);
    n.leaky_slope = kv.get_double("model", "leaky_slope", n.leaky_slope);
    n.norm_groups = kv.get_int("model", "norm_groups", n.norm_groups);

    cfg.out_dir = kv.get("run", "out", cfg.out_dir);
    if (kv.has("run", "seeds")) {
        cfg.seeds.clear();
        for (const auto& s : kv.get_list("run", "seeds"))
            cfg.seeds.push_back(std::stoull(s));
    }
    cfg.plots = kv.get_list("run", "plots");
    cfg.ece_bins = kv.get_int("run", "ece_bins", cfg.ece_bins);

    // Environment override for the dataset root.
    if (const char* env = std::getenv("ICL_DATA_ROOT"); env && *env) {
        if (cfg.dataset.root.empty())
            cfg.dataset.root = env;
        else if (!std::filesystem::path(cfg.dataset.root).is_absolute())
            cfg.dataset.root = (std::filesystem::path(env) / cfg.dataset.root).string();
    }

    if (cfg.seeds.empty()) throw ConfigError("config: [run] seeds must be nonempty");
    if (cfg.dataset.name != "blobs") {
        if (cfg.dataset.root.empty())
            throw ConfigError("config: [dataset] root required for dataset '" +
                              cfg.dataset.name + "'");
        if (!std::filesystem::exists(cfg.dataset.root))
            throw IoError("config: dataset root '" + cfg.dataset.root + "' does not exist");
    }
    const std::vector<std::string> known_plots = {"accuracy_curve", "reliability",
                                                  "idempotence_hist", "task_mass"};
    for (const auto& p : cfg.plots)
        if (std::find(known_plots.begin(), known_plots.end(), p) == known_plots.end())
            throw ConfigError("config: [run] plots: unknown plot '" + p + "'");
    cfg.train.validate();
    return cfg;
}

std::string ExperimentConfig::resolved_text() const {
    std::ostringstream os;
    os << "[dataset]\n"
       << "name = " << dataset.name << "\n"
       << "root = " << dataset.root << "\n";
    if (dataset.name == "blobs")
        os << "blobs_classes = " << dataset.blobs_classes << "\n"
           << "blobs_train_per_class = " << dataset.blobs_train_per_class << "\n"
           << "blobs_test_per_class = " << dataset.blobs_test_per_class << "\n"
           << "blobs_noise = " << dataset.blobs_noise << "\n";
    os << "\n[stream]\n"
       << "protocol = " << to_string(stream.protocol) << "\n"
       << "n_tasks = " << stream.n_tasks << "\n";
    if (stream.protocol != Protocol::CIL)
        os << "class_count_min = " << stream.gcil.class_count_min << "\n"
           << "class_count_max = " << stream.gcil.class_count_max << "\n"
           << "samples_per_task = " << stream.gcil.samples_per_task << "\n";
    os << "\n[train]\n"
       << "method = " << to_string(train.method) << "\n"
       << "epochs_per_task = " << train.epochs_per_task << "\n"
       << "batch_size = " << train.batch_size << "\n"
       << "learning_rate = " << train.learning_rate << "\n"
       << "lr_decay_factor = " << train.lr_decay_factor << "\n"
       << "lr_decay_epochs =";
    for (int d : train.resolved_decay_epochs()) os << " " << d;
    os << "\n"
       << "momentum = " << train.momentum << "\n"
       << "grad_clip_norm = " << train.grad_clip_norm << "\n"
       << "buffer_capacity = " << train.buffer_capacity << "\n"
       << "buffer_policy = "
       << (train.resolved_policy() == BufferPolicy::Reservoir ? "reservoir" : "class_balanced")
       << "\n";
    os << "\n[loss]\n"
       << "alpha = " << train.loss.alpha << "\n"
       << "beta = " << train.loss.beta << "\n"
       << "gamma = " << train.loss.gamma << "\n"
       << "p_empty = " << train.loss.p_empty << "\n"
       << "distance = " << (train.loss.distance == IdeDistance::MseLogits ? "mse" : "kl")
       << "\n"
       << "ice_grad_through_inner = " << (train.loss.ice_grad_through_inner ? "true" : "false")
       << "\n"
       << "ide_grad_through_teacher_input = "
       << (train.loss.ide_grad_through_teacher_input ? "true" : "false") << "\n";
    os << "\n[model]\n"
       << "base_channels = " << train.net.base_channels << "\n"
       << "stages = " << train.net.n_stages << "\n"
       << "blocks_per_stage = " << train.net.blocks_per_stage << "\n"
       << "partition_block = " << train.net.partition_block << "\n"
       << "label_embed = " << (train.net.label_embed ? "true" : "false") << "\n"
       << "leaky_slope = " << train.net.leaky_slope << "\n"
       << "norm_groups = " << train.net.norm_groups << "\n";
    os << "\n[run]\n"
       << "out = " << out_dir << "\n"
       << "seeds =";
    for (auto s : seeds) os << " " << s;
    os << "\nece_bins = " << ece_bins << "\nplots =";
    for (const auto& p : plots) os << " " << p;
    os << "\n";
    return os.str();
}

std::uint64_t ExperimentConfig::config_hash() const {
    // FNV-1a over the canonical rendering.
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : resolved_text()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

DatasetPair ExperimentConfig::load_dataset() const {
    if (dataset.name == "blobs")
        return make_blobs_dataset(dataset.blobs_classes, dataset.blobs_train_per_class,
                                  dataset.blobs_test_per_class, Shape{1, 8, 8},
                                  dataset.blobs_noise, dataset.blobs_seed);
    if (dataset.name == "digits" || dataset.name == "idx")
        return load_idx_pair(dataset.root);
    throw ConfigError("config: unknown dataset '" + dataset.name + "'");
}

TaskStream ExperimentConfig::build_stream(const LabeledDataset& train_ds,
                                          std::uint64_t seed) const {
    if (stream.protocol == Protocol::CIL)
        return make_cil_stream(train_ds, stream.n_tasks, seed);
    GcilOptions opt = stream.gcil;
    opt.n_tasks = stream.n_tasks;
    opt.longtail = stream.protocol == Protocol::GCILLongtail;
    return make_gcil_stream(train_ds, opt, seed);
}

}  // namespace icl
