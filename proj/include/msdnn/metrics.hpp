#ifndef MSDNN_METRICS_HPP
#define MSDNN_METRICS_HPP

#include <string>
#include <utility>
#include <vector>

#include "msdnn/tensor.hpp"

namespace msdnn {

/// Predicted saliency map, single channel, values in [0,1].
struct SaliencyMap {
    Tensor values; // [H,W]
    std::string id;
};

/// Binary ground-truth mask paired with a map of the same size.
struct GroundTruth {
    Tensor mask; // [H,W], {0,1}
    std::string id;
};

struct MetricsConfig {
    double beta_squared = 0.3;
    std::vector<int> pr_levels;       // default 0,5,...,255 on the 8-bit scale
    double adaptive_multiplier = 2.0; // threshold = multiplier * mean(map)

    MetricsConfig();
    void validate() const;
};

struct PrPoint {
    double threshold = 0; // on the [0,1] map scale (level/255)
    double precision = 0;
    double recall = 0;
};

struct AdaptiveScore {
    double threshold = 0;
    double precision = 0;
    double recall = 0;
    double fmeasure = 0;
};

struct ImageMetrics {
    std::string id;
    double adaptive_threshold = 0;
    double precision = 0;
    double recall = 0;
    double fmeasure = 0;
    double mae = 0;
    double auc = 0;
};

struct MetricsReport {
    std::vector<ImageMetrics> per_image;
    ImageMetrics mean; // id == "MEAN"
    std::vector<PrPoint> pr_curve;

    std::string report_csv() const; // id,adaptive_threshold,precision,recall,fmeasure,mae,auc
    std::string pr_csv() const;     // threshold,mean_precision,mean_recall
};

/// pixel -> 1 iff value > threshold (strict).
Tensor binarize(const Tensor& map, double threshold);

/// P = TP/(TP+FP), R = TP/(TP+FN); 0 when the denominator is empty.
std::pair<double, double> precision_recall(const Tensor& pred, const Tensor& gt);

/// Mean P and R across images at each configured threshold level.
std::vector<PrPoint> pr_curve(const std::vector<SaliencyMap>& maps, const std::vector<GroundTruth>& gts,
                              const MetricsConfig& cfg);

/// Threshold min(multiplier * mean(map), 1); F = (1+b2)PR / (b2 P + R), 0 on 0/0.
AdaptiveScore adaptive_fmeasure(const Tensor& map, const Tensor& gt, const MetricsConfig& cfg);

/// Mean absolute per-pixel difference.
double mae(const Tensor& map, const Tensor& gt);

/// Area under the pixelwise ROC curve, trapezoidal over the exact threshold
/// set (one per distinct map value). Equals the rank statistic
/// P(score_pos > score_neg) + 0.5*P(tie); the ground truth needs at least one
/// positive and one negative pixel.
double auc(const Tensor& map, const Tensor& gt);

/// Per-image metrics, dataset P-R curve and compensated means. The report is
/// independent of evaluation order.
MetricsReport evaluate_dataset(const std::vector<SaliencyMap>& maps, const std::vector<GroundTruth>& gts,
                               const MetricsConfig& cfg);

} // namespace msdnn

#endif
