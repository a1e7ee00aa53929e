#include "icl/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "icl/error.hpp"

namespace icl {

void AccuracyMatrix::set(int task, int after_task, double acc) {
    if (task < 0 || after_task < task || after_task >= T_)
        throw MetricError("AccuracyMatrix::set: index outside lower triangle");
    a_[static_cast<std::size_t>(task) * T_ + after_task] = acc;
}

double AccuracyMatrix::at(int task, int after_task) const {
    if (task < 0 || after_task < task || after_task >= T_)
        throw MetricError("AccuracyMatrix::at: index outside lower triangle");
    const double v = a_[static_cast<std::size_t>(task) * T_ + after_task];
    if (v < 0.0) throw MetricError("AccuracyMatrix::at: entry not filled");
    return v;
}

bool AccuracyMatrix::complete() const {
    for (int i = 0; i < T_; ++i)
        for (int t = i; t < T_; ++t)
            if (a_[static_cast<std::size_t>(i) * T_ + t] < 0.0) return false;
    return T_ > 0;
}

std::vector<double> AccuracyMatrix::final_row() const {
    std::vector<double> out(T_);
    for (int i = 0; i < T_; ++i) out[i] = at(i, T_ - 1);
    return out;
}

double faa(const AccuracyMatrix& m) {
    if (!m.complete()) throw MetricError("faa: accuracy matrix incomplete");
    double s = 0.0;
    for (int i = 0; i < m.n_tasks(); ++i) s += m.at(i, m.n_tasks() - 1);
    return s / m.n_tasks();
}

double final_forgetting(const AccuracyMatrix& m) {
    const int T = m.n_tasks();
    if (T < 2) throw MetricError("final_forgetting: undefined for T < 2");
    if (!m.complete()) throw MetricError("final_forgetting: accuracy matrix incomplete");
    // Per-task drop from the historical peak, floored at zero so tasks whose
    // accuracy never degrades contribute nothing.
    double s = 0.0;
    for (int i = 0; i < T - 1; ++i) {
        double peak_drop = 0.0;
        for (int j = i; j < T - 1; ++j)
            peak_drop = std::max(peak_drop, m.at(i, j) - m.at(i, T - 1));
        s += peak_drop;
    }
    return s / (T - 1);
}

namespace {
inline int bin_index(double p, int n_bins) {
    // Bins partition (0, 1] left-open right-closed.
    int b = static_cast<int>(std::ceil(p * n_bins)) - 1;
    return std::clamp(b, 0, n_bins - 1);
}
}  // namespace

double ece(const ConfidenceLog& log, int n_bins) {
    if (log.empty()) throw MetricError("ece: empty confidence log");
    if (n_bins < 1) throw MetricError("ece: n_bins must be >= 1");
    std::vector<double> conf_sum(n_bins, 0.0), acc_sum(n_bins, 0.0);
    std::vector<int> count(n_bins, 0);
    for (const auto& r : log) {
        const int b = bin_index(r.confidence, n_bins);
        conf_sum[b] += r.confidence;
        acc_sum[b] += r.predicted == r.label ? 1.0 : 0.0;
        count[b]++;
    }
    double e = 0.0;
    const double n = static_cast<double>(log.size());
    for (int b = 0; b < n_bins; ++b) {
        if (count[b] == 0) continue;
        e += (count[b] / n) * std::abs(acc_sum[b] / count[b] - conf_sum[b] / count[b]);
    }
    return e;
}

std::vector<ReliabilityBin> reliability_bins(const ConfidenceLog& log, int n_bins) {
    if (n_bins < 1) throw MetricError("reliability_bins: n_bins must be >= 1");
    std::vector<ReliabilityBin> bins(n_bins);
    for (int b = 0; b < n_bins; ++b) {
        bins[b].lo = static_cast<double>(b) / n_bins;
        bins[b].hi = static_cast<double>(b + 1) / n_bins;
    }
    for (const auto& r : log) {
        auto& bin = bins[bin_index(r.confidence, n_bins)];
        bin.count++;
        bin.confidence += r.confidence;
        bin.accuracy += r.predicted == r.label ? 1.0 : 0.0;
    }
    for (auto& bin : bins) {
        if (bin.count == 0) continue;
        bin.confidence /= bin.count;
        bin.accuracy /= bin.count;
    }
    return bins;
}

std::vector<double> idempotence_distances(const LabelConditionedNet& net,
                                          const LabelConditionedNet* second_net,
                                          const LabeledDataset& data,
                                          SecondInputMode mode, Rng& rng) {
    if (data.size() == 0) throw MetricError("idempotence_distances: empty data");
    const LabelConditionedNet& f2 = second_net ? *second_net : net;
    const int n_classes = net.n_classes();

    std::vector<double> out;
    out.reserve(data.size());
    const int chunk = 256;
    for (int start = 0; start < data.size(); start += chunk) {
        const int n = std::min(chunk, data.size() - start);
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = start + i;
        const Batch b = gather_batch(data, idx);

        Mat z(n, n_classes);
        switch (mode) {
            case SecondInputMode::Empty:
                z = empty_signal_rows(n, n_classes);
                break;
            case SecondInputMode::CorrectOneHot:
                z = one_hot_rows(b.labels, n_classes);
                break;
            case SecondInputMode::WrongOneHot:
                for (int i = 0; i < n; ++i) {
                    int wrong = static_cast<int>(rng.uniform_int(0, n_classes - 2));
                    if (wrong >= b.labels[i]) ++wrong;
                    z.at(i, wrong) = 1.0;
                }
                break;
        }

        LabelConditionedNet::Cache c0, c1;
        const Mat y0 = net.forward(b.x, z, c0);
        Mat p0;
        softmax_rows(y0, p0);
        const Mat y1 = f2.forward(b.x, p0, c1);
        for (int i = 0; i < n; ++i) {
            double sq = 0.0;
            for (int j = 0; j < n_classes; ++j) {
                const double d = y1.at(i, j) - y0.at(i, j);
                sq += d * d;
            }
            out.push_back(std::sqrt(sq));
        }
    }
    return out;
}

std::vector<double> task_probability_mass(const LabelConditionedNet& net,
                                          const LabeledDataset& test,
                                          const TaskStream& stream) {
    if (test.size() == 0) throw MetricError("task_probability_mass: empty test set");
    const auto owner = stream.class_to_task();  // throws on overlapping class sets
    for (int cls = 0; cls < stream.n_classes; ++cls)
        if (owner[cls] < 0)
            throw MetricError("task_probability_mass: class " + std::to_string(cls) +
                              " not covered by any task");

    std::vector<double> mass(stream.n_tasks(), 0.0);
    const int chunk = 256;
    for (int start = 0; start < test.size(); start += chunk) {
        const int n = std::min(chunk, test.size() - start);
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = start + i;
        const Batch b = gather_batch(test, idx);

        LabelConditionedNet::Cache cache;
        const Mat logits = net.forward(b.x, empty_signal_rows(n, net.n_classes()), cache);
        Mat p;
        softmax_rows(logits, p);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < p.cols; ++j) mass[owner[j]] += p.at(i, j);
    }
    for (auto& m : mass) m /= test.size();
    return mass;
}

EvalResult evaluate(const LabelConditionedNet& net, const LabeledDataset& data,
                    const std::vector<int>& indices, int task_of_origin, int eval_batch) {
    EvalResult res;
    if (indices.empty()) return res;
    int correct = 0;
    for (std::size_t start = 0; start < indices.size(); start += eval_batch) {
        const std::size_t n = std::min<std::size_t>(eval_batch, indices.size() - start);
        const std::vector<int> idx(indices.begin() + start, indices.begin() + start + n);
        const Batch b = gather_batch(data, idx);

        LabelConditionedNet::Cache cache;
        const Mat logits =
            net.forward(b.x, empty_signal_rows(static_cast<int>(n), net.n_classes()), cache);
        Mat p;
        softmax_rows(logits, p);
        for (std::size_t i = 0; i < n; ++i) {
            int arg = 0;
            for (int j = 1; j < p.cols; ++j)
                if (p.at(static_cast<int>(i), j) > p.at(static_cast<int>(i), arg)) arg = j;
            if (arg == b.labels[i]) ++correct;
            res.log.push_back({p.at(static_cast<int>(i), arg), arg, b.labels[i],
                               task_of_origin});
        }
    }
    res.accuracy = static_cast<double>(correct) / indices.size();
    return res;
}

}  // namespace icl
