#include "icl/results.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "icl/error.hpp"

namespace icl {

namespace {
constexpr const char* kVersion = "0.1.0";
}

Aggregate aggregate(const std::vector<double>& xs) {
    Aggregate a;
    if (xs.empty()) return a;
    for (double x : xs) a.mean += x;
    a.mean /= xs.size();
    double var = 0.0;
    for (double x : xs) var += (x - a.mean) * (x - a.mean);
    a.stddev = xs.size() > 1 ? std::sqrt(var / (xs.size() - 1)) : 0.0;
    return a;
}

Aggregate ResultBundle::faa_agg() const {
    std::vector<double> v;
    for (const auto& s : seeds) v.push_back(s.faa_value);
    return aggregate(v);
}

Aggregate ResultBundle::ff_agg() const {
    std::vector<double> v;
    for (const auto& s : seeds)
        if (s.ff_value) v.push_back(*s.ff_value);
    return aggregate(v);
}

Aggregate ResultBundle::ece_agg() const {
    std::vector<double> v;
    for (const auto& s : seeds) v.push_back(s.ece_value);
    return aggregate(v);
}

namespace {

nlohmann::json matrix_json(const AccuracyMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < m.n_tasks(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int t = 0; t < m.n_tasks(); ++t) {
            if (t < i) row.push_back(nullptr);
            else row.push_back(m.at(i, t));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

AccuracyMatrix matrix_from_json(const nlohmann::json& rows) {
    const int T = static_cast<int>(rows.size());
    AccuracyMatrix m(T);
    for (int i = 0; i < T; ++i)
        for (int t = i; t < T; ++t) m.set(i, t, rows[i][t].get<double>());
    return m;
}

nlohmann::json seed_json(const SeedRunResult& s) {
    nlohmann::json j;
    j["seed"] = s.seed;
    j["faa"] = s.faa_value;
    if (s.ff_value) j["ff"] = *s.ff_value;
    else j["ff"] = nullptr;
    j["ece"] = s.ece_value;
    j["accuracy_matrix"] = matrix_json(s.matrix);
    j["task_mass"] = s.task_mass;
    j["idempotence_self"] = s.final_self_distances;
    j["idempotence_cross"] = s.final_cross_distances;
    nlohmann::json bins = nlohmann::json::array();
    for (const auto& b : s.reliability)
        bins.push_back({{"lo", b.lo},
                        {"hi", b.hi},
                        {"count", b.count},
                        {"accuracy", b.accuracy},
                        {"confidence", b.confidence}});
    j["reliability"] = bins;
    j["timing"] = {{"per_task_seconds", s.per_task_seconds},
                   {"total_seconds", s.total_seconds}};
    return j;
}

SeedRunResult seed_from_json(const nlohmann::json& j) {
    SeedRunResult s;
    s.seed = j.at("seed");
    s.faa_value = j.at("faa");
    if (!j.at("ff").is_null()) s.ff_value = j.at("ff").get<double>();
    s.ece_value = j.at("ece");
    s.matrix = matrix_from_json(j.at("accuracy_matrix"));
    s.task_mass = j.at("task_mass").get<std::vector<double>>();
    s.final_self_distances = j.at("idempotence_self").get<std::vector<double>>();
    s.final_cross_distances = j.at("idempotence_cross").get<std::vector<double>>();
    for (const auto& b : j.at("reliability")) {
        ReliabilityBin bin;
        bin.lo = b.at("lo");
        bin.hi = b.at("hi");
        bin.count = b.at("count");
        bin.accuracy = b.at("accuracy");
        bin.confidence = b.at("confidence");
        s.reliability.push_back(bin);
    }
    s.per_task_seconds = j.at("timing").at("per_task_seconds").get<std::vector<double>>();
    s.total_seconds = j.at("timing").at("total_seconds");
    return s;
}

}  // namespace

void ResultBundle::write(const std::string& out_dir, const ExperimentConfig& cfg,
                         int ece_bins) const {
    std::filesystem::create_directories(out_dir);

    nlohmann::json j;
    std::ostringstream hash_hex;
    hash_hex << std::hex << std::setw(16) << std::setfill('0') << cfg.config_hash();
    j["config_hash"] = hash_hex.str();
    j["version"] = kVersion;
    j["protocol"] = to_string(cfg.stream.protocol);
    j["method"] = to_string(cfg.train.method);
    j["config"] = cfg.resolved_text();
    j["timestamp"] = std::chrono::duration_cast<std::chrono::seconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();

    nlohmann::json seed_arr = nlohmann::json::array();
    for (const auto& s : seeds) seed_arr.push_back(seed_json(s));
    j["seeds"] = seed_arr;

    const auto faa_a = faa_agg();
    const auto ff_a = ff_agg();
    const auto ece_a = ece_agg();
    j["aggregate"] = {{"faa", {{"mean", faa_a.mean}, {"std", faa_a.stddev}}},
                      {"ff", {{"mean", ff_a.mean}, {"std", ff_a.stddev}}},
                      {"ece", {{"mean", ece_a.mean}, {"std", ece_a.stddev}}}};

    std::ofstream f(out_dir + "/results.json");
    if (!f) throw IoError("results: cannot write " + out_dir + "/results.json");
    f << j.dump(2) << "\n";

    for (const auto& s : seeds) {
        {
            std::ofstream csv(out_dir + "/acc_matrix_seed" + std::to_string(s.seed) + ".csv");
            csv << "task";
            for (int t = 0; t < s.matrix.n_tasks(); ++t) csv << ",after_task_" << t;
            csv << "\n";
            for (int i = 0; i < s.matrix.n_tasks(); ++i) {
                csv << i;
                for (int t = 0; t < s.matrix.n_tasks(); ++t) {
                    csv << ",";
                    if (t >= i) csv << s.matrix.at(i, t);
                }
                csv << "\n";
            }
        }
        {
            std::ofstream csv(out_dir + "/reliability_seed" + std::to_string(s.seed) + ".csv");
            csv << "bin_lo,bin_hi,count,accuracy,confidence\n";
            const auto bins = s.reliability.empty() && !s.final_log.empty()
                                  ? reliability_bins(s.final_log, ece_bins)
                                  : s.reliability;
            for (const auto& b : bins)
                csv << b.lo << "," << b.hi << "," << b.count << "," << b.accuracy << ","
                    << b.confidence << "\n";
        }
    }
}

ResultBundle ResultBundle::read(const std::string& results_json_path) {
    std::ifstream f(results_json_path);
    if (!f) throw IoError("results: cannot open " + results_json_path);
    nlohmann::json j;
    f >> j;

    ResultBundle b;
    b.config_hash = j.at("config_hash");
    b.version = j.at("version");
    b.protocol = j.at("protocol");
    b.method = j.at("method");
    b.config_text = j.at("config");
    for (const auto& s : j.at("seeds")) b.seeds.push_back(seed_from_json(s));
    return b;
}

CompareReport compare_bundles(const ResultBundle& a, const ResultBundle& b) {
    if (a.protocol != b.protocol)
        throw ConfigError("compare: bundles use different stream protocols (" + a.protocol +
                          " vs " + b.protocol + ")");
    if (a.seeds.size() != b.seeds.size())
        throw ConfigError("compare: bundles have different seed counts");
    for (std::size_t i = 0; i < a.seeds.size(); ++i)
        if (a.seeds[i].seed != b.seeds[i].seed)
            throw ConfigError("compare: seed lists differ at position " + std::to_string(i));

    CompareReport r;
    double ff_mean_a = 0.0, ff_mean_b = 0.0;
    int ff_n = 0;
    for (std::size_t i = 0; i < a.seeds.size(); ++i) {
        r.seeds.push_back(a.seeds[i].seed);
        r.faa_delta.push_back(a.seeds[i].faa_value - b.seeds[i].faa_value);
        r.ece_delta.push_back(a.seeds[i].ece_value - b.seeds[i].ece_value);
        if (a.seeds[i].ff_value && b.seeds[i].ff_value) {
            r.ff_delta.push_back(*a.seeds[i].ff_value - *b.seeds[i].ff_value);
            ff_mean_a += *a.seeds[i].ff_value;
            ff_mean_b += *b.seeds[i].ff_value;
            ++ff_n;
        }
    }
    r.faa_up_every_seed = !r.faa_delta.empty();
    for (double d : r.faa_delta) r.faa_up_every_seed &= d > 0.0;
    r.ece_down_every_seed = !r.ece_delta.empty();
    for (double d : r.ece_delta) r.ece_down_every_seed &= d < 0.0;
    r.ff_down_on_mean = ff_n > 0 && ff_mean_a < ff_mean_b;
    r.directional_pass = r.faa_up_every_seed && r.ece_down_every_seed && r.ff_down_on_mean;
    return r;
}

std::string CompareReport::to_text(const std::string& name_a, const std::string& name_b) const {
    std::ostringstream os;
    os << "compare: " << name_a << " (A) vs " << name_b << " (B); deltas are A - B\n";
    os << std::fixed << std::setprecision(4);
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        os << "  seed " << seeds[i] << ": dFAA = " << faa_delta[i];
        if (i < ff_delta.size()) os << ", dFF = " << ff_delta[i];
        os << ", dECE = " << ece_delta[i] << "\n";
    }
    os << "  FAA higher on every seed (want yes): " << (faa_up_every_seed ? "yes" : "no")
       << "\n";
    os << "  ECE lower on every seed  (want yes): " << (ece_down_every_seed ? "yes" : "no")
       << "\n";
    os << "  FF lower on seed mean    (want yes): " << (ff_down_on_mean ? "yes" : "no") << "\n";
    os << "  directional check: " << (directional_pass ? "PASS" : "FAIL") << "\n";
    return os.str();
}

}  // namespace icl
