#pragma once

// Image quality measures and the per-bucket evaluation report.

#include "edgelbam/data.hpp"
#include "edgelbam/losses.hpp"

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace edgelbam {

/// Returned by psnr() for identical images.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(1 / MSE) for images in [0, 1].
double psnr(const Tensor& pred, const Tensor& gt);

/// Mean SSIM on luminance with an 11 x 11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, data range 1, mirrored borders; the 5-pixel border
/// band is left out of the mean. Inputs are [C, H, W] or [H, W] in [0, 1].
double ssim(const Tensor& pred, const Tensor& gt);

struct MaskedL1 {
    double percent = 0.0;
    bool undefined = false;  // no hole content to compare against
};

/// 100 * ||(1 - M) * (gt - pred)||_1 / ||(1 - M) * gt||_1.
MaskedL1 masked_l1_pct(const Tensor& pred, const Tensor& gt, const Tensor& mask);

/// Sum over levels of the spatial mean of the squared difference between
/// channel-normalised features. Symmetric, non-negative, zero for identical
/// features.
double perceptual_distance(const Tensor& pred, const Tensor& gt, const FeatureFn& extractor);

struct BucketMetrics {
    RatioBucket bucket;
    int64_t count = 0;
    double psnr = 0.0;
    double ssim = 0.0;
    double l1_pct = 0.0;
    double perc_dist = 0.0;
};

struct EvalReport {
    std::string evaluated_on = "composited";
    std::vector<BucketMetrics> buckets;  // buckets without samples are left out

    [[nodiscard]] std::string to_csv() const;
    [[nodiscard]] std::string to_table() const;
    void write(const std::filesystem::path& csv_path, const std::filesystem::path& table_path) const;
};

/// Per-sample metric accumulator for one bucket.
class BucketAccumulator {
public:
    explicit BucketAccumulator(RatioBucket bucket) : bucket_(bucket) {}
    void add(double psnr, double ssim, double l1_pct, double perc_dist);
    [[nodiscard]] BucketMetrics result() const;
    [[nodiscard]] int64_t count() const { return count_; }

private:
    RatioBucket bucket_;
    int64_t count_ = 0;
    double psnr_ = 0.0, ssim_ = 0.0, l1_ = 0.0, perc_ = 0.0;
};

}  // namespace edgelbam
