#include "msdnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "msdnn/threads.hpp"

namespace msdnn {

namespace {

/// Kahan-compensated accumulator so dataset means do not depend on fan-out.
struct Kahan {
    double sum = 0, c = 0;
    void add(double x) {
        const double y = x - c;
        const double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
};

void check_pair(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_binary(const Tensor& gt, const char* what) {
    for (std::int64_t i = 0; i < gt.size(); ++i)
        if (gt[i] != 0 && gt[i] != 1) throw InputError(std::string(what) + ": ground truth is not binary");
}

} // namespace

MetricsConfig::MetricsConfig() {
    for (int level = 0; level <= 255; level += 5) pr_levels.push_back(level);
}

void MetricsConfig::validate() const {
    if (beta_squared < 0) throw ConfigError("beta_squared must be non-negative");
    if (pr_levels.empty()) throw ConfigError("pr_levels must be non-empty");
    for (std::size_t i = 1; i < pr_levels.size(); ++i)
        if (pr_levels[i] <= pr_levels[i - 1]) throw ConfigError("pr_levels must be strictly increasing");
    if (adaptive_multiplier <= 0) throw ConfigError("adaptive_multiplier must be positive");
}

Tensor binarize(const Tensor& map, double threshold) {
    Tensor out(map.shape());
    for (std::int64_t i = 0; i < map.size(); ++i) out[i] = map[i] > threshold ? real(1) : real(0);
    return out;
}

std::pair<double, double> precision_recall(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt, "precision_recall");
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::int64_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0;
        const bool g = gt[i] != 0;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    const double precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    return {precision, recall};
}

std::vector<PrPoint> pr_curve(const std::vector<SaliencyMap>& maps, const std::vector<GroundTruth>& gts,
                              const MetricsConfig& cfg) {
    cfg.validate();
    if (maps.empty() || maps.size() != gts.size())
        throw InputError("pr_curve: need equally sized, non-empty map and ground-truth lists");
    std::vector<PrPoint> curve(cfg.pr_levels.size());
    for (std::size_t t = 0; t < cfg.pr_levels.size(); ++t) {
        const double thr = cfg.pr_levels[t] / 255.0;
        Kahan psum, rsum;
        for (std::size_t i = 0; i < maps.size(); ++i) {
            auto [p, r] = precision_recall(binarize(maps[i].values, thr), gts[i].mask);
            psum.add(p);
            rsum.add(r);
        }
        curve[t].threshold = thr;
        curve[t].precision = psum.sum / static_cast<double>(maps.size());
        curve[t].recall = rsum.sum / static_cast<double>(maps.size());
    }
    return curve;
}

AdaptiveScore adaptive_fmeasure(const Tensor& map, const Tensor& gt, const MetricsConfig& cfg) {
    check_pair(map, gt, "adaptive_fmeasure");
    AdaptiveScore s;
    s.threshold = std::min(cfg.adaptive_multiplier * static_cast<double>(reduce_mean(map)), 1.0);
    auto [p, r] = precision_recall(binarize(map, s.threshold), gt);
    s.precision = p;
    s.recall = r;
    const double denom = cfg.beta_squared * p + r;
    s.fmeasure = denom > 0 ? (1.0 + cfg.beta_squared) * p * r / denom : 0.0;
    return s;
}

double mae(const Tensor& map, const Tensor& gt) {
    check_pair(map, gt, "mae");
    Kahan acc;
    for (std::int64_t i = 0; i < map.size(); ++i) acc.add(std::abs(static_cast<double>(map[i]) - static_cast<double>(gt[i])));
    return acc.sum / static_cast<double>(map.size());
}

double auc(const Tensor& map, const Tensor& gt) {
    check_pair(map, gt, "auc");
    check_binary(gt, "auc");
    std::int64_t pos = 0;
    for (std::int64_t i = 0; i < gt.size(); ++i) pos += gt[i] != 0;
    const std::int64_t neg = gt.size() - pos;
    if (pos == 0 || neg == 0) throw MetricError("auc undefined: ground truth has a single class");

    // Sort scores descending and walk tie groups; the trapezoid between the
    // ROC points before and after a group contributes pos_in_group halves for
    // ties and full area for strictly separated pairs. This is the exact ROC
    // (a threshold between every pair of distinct values).
    std::vector<std::pair<real, bool>> scored(static_cast<std::size_t>(map.size()));
    for (std::int64_t i = 0; i < map.size(); ++i) scored[static_cast<std::size_t>(i)] = {map[i], gt[i] != 0};
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    double area2 = 0; // accumulated in units of (pairs counted), ties count once
    std::int64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < scored.size()) {
        std::size_t j = i;
        std::int64_t dp = 0, dn = 0;
        while (j < scored.size() && scored[j].first == scored[i].first) {
            dp += scored[j].second;
            dn += !scored[j].second;
            ++j;
        }
        // trapezoid: width dn, heights tp and tp+dp, doubled
        area2 += static_cast<double>(dn) * static_cast<double>(2 * tp + dp);
        tp += dp;
        fp += dn;
        i = j;
    }
    (void)fp;
    return area2 / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

MetricsReport evaluate_dataset(const std::vector<SaliencyMap>& maps, const std::vector<GroundTruth>& gts,
                               const MetricsConfig& cfg) {
    cfg.validate();
    if (maps.empty() || maps.size() != gts.size())
        throw InputError("evaluate_dataset: need equally sized, non-empty map and ground-truth lists");
    for (std::size_t i = 0; i < maps.size(); ++i)
        if (maps[i].id != gts[i].id)
            throw InputError("evaluate_dataset: pairing mismatch at index " + std::to_string(i) + ": " + maps[i].id +
                             " vs " + gts[i].id);

    MetricsReport report;
    report.per_image.resize(maps.size());
    parallel_for(static_cast<std::int64_t>(maps.size()), [&](std::int64_t i) {
        const auto idx = static_cast<std::size_t>(i);
        ImageMetrics& m = report.per_image[idx];
        m.id = maps[idx].id;
        const AdaptiveScore s = adaptive_fmeasure(maps[idx].values, gts[idx].mask, cfg);
        m.adaptive_threshold = s.threshold;
        m.precision = s.precision;
        m.recall = s.recall;
        m.fmeasure = s.fmeasure;
        m.mae = mae(maps[idx].values, gts[idx].mask);
        m.auc = auc(maps[idx].values, gts[idx].mask);
    });

    Kahan thr, p, r, f, e, a;
    for (const ImageMetrics& m : report.per_image) {
        thr.add(m.adaptive_threshold);
        p.add(m.precision);
        r.add(m.recall);
        f.add(m.fmeasure);
        e.add(m.mae);
        a.add(m.auc);
    }
    const double n = static_cast<double>(maps.size());
    report.mean.id = "MEAN";
    report.mean.adaptive_threshold = thr.sum / n;
    report.mean.precision = p.sum / n;
    report.mean.recall = r.sum / n;
    report.mean.fmeasure = f.sum / n;
    report.mean.mae = e.sum / n;
    report.mean.auc = a.sum / n;

    report.pr_curve = pr_curve(maps, gts, cfg);
    return report;
}

namespace {
void csv_row(std::ostream& os, const ImageMetrics& m) {
    os << m.id << "," << m.adaptive_threshold << "," << m.precision << "," << m.recall << "," << m.fmeasure << ","
       << m.mae << "," << m.auc << "\n";
}
} // namespace

std::string MetricsReport::report_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "id,adaptive_threshold,precision,recall,fmeasure,mae,auc\n";
    for (const ImageMetrics& m : per_image) csv_row(os, m);
    csv_row(os, mean);
    return os.str();
}

std::string MetricsReport::pr_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "threshold,mean_precision,mean_recall\n";
    for (const PrPoint& p : pr_curve) os << p.threshold << "," << p.precision << "," << p.recall << "\n";
    return os.str();
}

} // namespace msdnn
