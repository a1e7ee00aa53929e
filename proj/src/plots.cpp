#include "icl/plots.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "icl/error.hpp"

namespace icl {

namespace {

constexpr int kW = 720, kH = 520;
constexpr int kMarginL = 70, kMarginR = 30, kMarginT = 40, kMarginB = 60;

const cv::Scalar kWhite(255, 255, 255);
const cv::Scalar kBlack(30, 30, 30);
const cv::Scalar kGrey(200, 200, 200);
const cv::Scalar kBlue(180, 110, 40);
const cv::Scalar kOrange(40, 130, 230);

struct Axes {
    cv::Mat img{kH, kW, CV_8UC3, kWhite};
    double x0, x1, y0, y1;

    Axes(double x_lo, double x_hi, double y_lo, double y_hi, const std::string& title,
         const std::string& xlabel, const std::string& ylabel)
        : x0(x_lo), x1(x_hi), y0(y_lo), y1(y_hi) {
        cv::rectangle(img, {kMarginL, kMarginT}, {kW - kMarginR, kH - kMarginB}, kBlack, 1);
        cv::putText(img, title, {kMarginL, kMarginT - 14}, cv::FONT_HERSHEY_SIMPLEX, 0.55,
                    kBlack, 1, cv::LINE_AA);
        cv::putText(img, xlabel, {kW / 2 - 60, kH - 18}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                    kBlack, 1, cv::LINE_AA);
        cv::putText(img, ylabel, {8, kMarginT - 14}, cv::FONT_HERSHEY_SIMPLEX, 0.45, kBlack, 1,
                    cv::LINE_AA);
        for (int i = 0; i <= 5; ++i) {
            const double fy = y0 + (y1 - y0) * i / 5.0;
            const int py = to_py(fy);
            cv::line(img, {kMarginL, py}, {kW - kMarginR, py}, kGrey, 1);
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f", fy);
            cv::putText(img, buf, {8, py + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, kBlack, 1,
                        cv::LINE_AA);
        }
    }

    int to_px(double x) const {
        const double f = (x - x0) / (x1 - x0 + 1e-300);
        return kMarginL + static_cast<int>(f * (kW - kMarginL - kMarginR));
    }
    int to_py(double y) const {
        const double f = (y - y0) / (y1 - y0 + 1e-300);
        return kH - kMarginB - static_cast<int>(f * (kH - kMarginT - kMarginB));
    }

    void polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                  const cv::Scalar& color, int thickness) {
        for (std::size_t i = 1; i < xs.size(); ++i)
            cv::line(img, {to_px(xs[i - 1]), to_py(ys[i - 1])}, {to_px(xs[i]), to_py(ys[i])},
                     color, thickness, cv::LINE_AA);
    }

    void bar(double x_lo, double x_hi, double height, const cv::Scalar& color) {
        cv::rectangle(img, {to_px(x_lo) + 1, to_py(height)}, {to_px(x_hi) - 1, to_py(0.0)},
                      color, cv::FILLED);
    }

    void xtick(double x, const std::string& label) {
        cv::putText(img, label, {to_px(x) - 8, kH - kMarginB + 20}, cv::FONT_HERSHEY_SIMPLEX,
                    0.4, kBlack, 1, cv::LINE_AA);
    }

    void save(const std::string& path) {
        if (!cv::imwrite(path, img)) throw IoError("plots: cannot write " + path);
    }
};

void plot_accuracy_curve(const ResultBundle& b, const std::string& path) {
    const int T = b.seeds.empty() ? 0 : b.seeds[0].matrix.n_tasks();
    if (T == 0) return;
    Axes ax(1, T, 0.0, 1.0, "Average accuracy on seen tasks (" + b.method + ")", "tasks seen",
            "accuracy");
    std::vector<double> xs(T), mean_ys(T, 0.0);
    for (int t = 0; t < T; ++t) xs[t] = t + 1;
    for (const auto& s : b.seeds) {
        std::vector<double> ys(T);
        for (int t = 0; t < T; ++t) {
            double acc = 0.0;
            for (int i = 0; i <= t; ++i) acc += s.matrix.at(i, t);
            ys[t] = acc / (t + 1);
            mean_ys[t] += ys[t] / b.seeds.size();
        }
        ax.polyline(xs, ys, kGrey, 1);
    }
    ax.polyline(xs, mean_ys, kBlue, 2);
    for (int t = 0; t < T; ++t) ax.xtick(t + 1, std::to_string(t + 1));
    ax.save(path);
}

void plot_reliability(const ResultBundle& b, const std::string& path) {
    if (b.seeds.empty() || b.seeds[0].reliability.empty()) return;
    const int n_bins = static_cast<int>(b.seeds[0].reliability.size());
    std::vector<double> acc(n_bins, 0.0), conf(n_bins, 0.0), count(n_bins, 0.0);
    for (const auto& s : b.seeds)
        for (int i = 0; i < n_bins; ++i) {
            acc[i] += s.reliability[i].accuracy * s.reliability[i].count;
            conf[i] += s.reliability[i].confidence * s.reliability[i].count;
            count[i] += s.reliability[i].count;
        }
    Axes ax(0.0, 1.0, 0.0, 1.0, "Reliability diagram (" + b.method + ")", "confidence",
            "accuracy");
    for (int i = 0; i < n_bins; ++i) {
        if (count[i] == 0) continue;
        const double lo = static_cast<double>(i) / n_bins;
        const double hi = static_cast<double>(i + 1) / n_bins;
        ax.bar(lo, hi, acc[i] / count[i], kBlue);
    }
    ax.polyline({0.0, 1.0}, {0.0, 1.0}, kBlack, 1);
    for (int i = 0; i <= 5; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%.1f", i / 5.0);
        ax.xtick(i / 5.0, buf);
    }
    ax.save(path);
}

void plot_idempotence_hist(const ResultBundle& b, const std::string& path) {
    std::vector<double> self_d, cross_d;
    for (const auto& s : b.seeds) {
        self_d.insert(self_d.end(), s.final_self_distances.begin(),
                      s.final_self_distances.end());
        cross_d.insert(cross_d.end(), s.final_cross_distances.begin(),
                       s.final_cross_distances.end());
    }
    if (self_d.empty()) return;
    double dmax = 0.0;
    for (double d : self_d) dmax = std::max(dmax, d);
    for (double d : cross_d) dmax = std::max(dmax, d);
    dmax = std::max(dmax, 1e-9);

    const int n_bins = 30;
    auto hist = [&](const std::vector<double>& xs) {
        std::vector<double> h(n_bins, 0.0);
        for (double x : xs) {
            int bin = static_cast<int>(x / dmax * n_bins);
            h[std::clamp(bin, 0, n_bins - 1)] += 1.0 / xs.size();
        }
        return h;
    };
    const auto hs = hist(self_d);
    std::vector<double> hc;
    if (!cross_d.empty()) hc = hist(cross_d);
    double ymax = 1e-9;
    for (double v : hs) ymax = std::max(ymax, v);
    for (double v : hc) ymax = std::max(ymax, v);

    Axes ax(0.0, dmax, 0.0, ymax * 1.1, "Idempotence distance histogram (" + b.method + ")",
            "||second pass - first pass||", "fraction");
    for (int i = 0; i < n_bins; ++i) {
        const double lo = dmax * i / n_bins, hi = dmax * (i + 1) / n_bins;
        ax.bar(lo, hi, hs[i], kBlue);
        if (!hc.empty()) {
            const int px0 = ax.to_px(lo) + 1, px1 = ax.to_px(hi) - 1;
            cv::rectangle(ax.img, {px0, ax.to_py(hc[i])}, {px1, ax.to_py(0.0)}, kOrange, 2);
        }
    }
    cv::putText(ax.img, "filled: self   outline: vs checkpoint", {kMarginL + 10, kMarginT + 20},
                cv::FONT_HERSHEY_SIMPLEX, 0.45, kBlack, 1, cv::LINE_AA);
    ax.save(path);
}

void plot_task_mass(const ResultBundle& b, const std::string& path) {
    if (b.seeds.empty() || b.seeds[0].task_mass.empty()) return;
    const int T = static_cast<int>(b.seeds[0].task_mass.size());
    std::vector<double> mass(T, 0.0);
    for (const auto& s : b.seeds)
        for (int t = 0; t < T; ++t) mass[t] += s.task_mass[t] / b.seeds.size();
    double ymax = 0.0;
    for (double m : mass) ymax = std::max(ymax, m);

    Axes ax(0.0, T, 0.0, std::max(ymax * 1.15, 1.0 / T * 1.5),
            "Predicted probability mass per task (" + b.method + ")", "task", "mass");
    for (int t = 0; t < T; ++t) {
        ax.bar(t + 0.15, t + 0.85, mass[t], kBlue);
        ax.xtick(t + 0.5, std::to_string(t));
    }
    const int py = ax.to_py(1.0 / T);
    cv::line(ax.img, {kMarginL, py}, {kW - kMarginR, py}, kOrange, 2);
    cv::putText(ax.img, "uniform (1/T)", {kW - kMarginR - 130, py - 8},
                cv::FONT_HERSHEY_SIMPLEX, 0.45, kOrange, 1, cv::LINE_AA);
    ax.save(path);
}

}  // namespace

void write_plots(const ResultBundle& bundle, const std::vector<std::string>& which,
                 const std::string& dir) {
    if (which.empty()) return;
    std::filesystem::create_directories(dir);
    for (const auto& name : which) {
        if (name == "accuracy_curve") plot_accuracy_curve(bundle, dir + "/accuracy_curve.png");
        else if (name == "reliability") plot_reliability(bundle, dir + "/reliability.png");
        else if (name == "idempotence_hist")
            plot_idempotence_hist(bundle, dir + "/idempotence_hist.png");
        else if (name == "task_mass") plot_task_mass(bundle, dir + "/task_mass.png");
        else throw ConfigError("plots: unknown plot '" + name + "'");
    }
}

}  // namespace icl
