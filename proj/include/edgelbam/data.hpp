#pragma once

// Dataset ingestion: manifests, image I/O, irregular masks and sample pairing.

#include "edgelbam/edges.hpp"

#include <opencv2/core.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace edgelbam {

// ---- masks -------------------------------------------------------------------

/// Hole-to-image area ratio interval (low, high].
struct RatioBucket {
    double low = 0.1;
    double high = 0.2;

    [[nodiscard]] bool contains(double ratio) const { return ratio > low && ratio <= high; }
    /// "10-20%" style label.
    [[nodiscard]] std::string label() const;
};

/// The four evaluation buckets (0.1,0.2] ... (0.4,0.5].
const std::vector<RatioBucket>& standard_buckets();
RatioBucket parse_bucket(const std::string& label);

struct MaskSpec {
    RatioBucket bucket;
    uint64_t seed = 0;
};

/// Free-form mask of thick random-walk strokes and ellipses, redrawn until the
/// hole ratio lands in the bucket. Returns float32 [1, size, size] with
/// 1 = known, 0 = hole. Throws when the bucket cannot be reached at this size.
Tensor generate_irregular_mask(const MaskSpec& spec, int64_t size);

/// Fraction of hole pixels (mask == 0).
double hole_ratio(const Tensor& mask);

/// Seed of the evaluation mask of one image: identical for every model that
/// is evaluated with the same image id, eval seed and bucket.
uint64_t eval_mask_seed(const std::string& image_id, uint64_t eval_seed, size_t bucket_index);

// ---- images --------------------------------------------------------------------

/// 8-bit BGR image; throws std::runtime_error when the file cannot be decoded.
cv::Mat load_image(const std::filesystem::path& path);
/// Single-channel mask file: nonzero = known.
Tensor load_mask(const std::filesystem::path& path);

/// BGR 8-bit Mat -> RGB float32 [3, H, W] in [0, 1].
Tensor image_to_tensor(const cv::Mat& bgr);
/// [C, H, W] in [0, 1] (C = 1 or 3, RGB order) -> 8-bit Mat (BGR for C = 3).
cv::Mat tensor_to_image(const Tensor& chw);

void save_image(const std::filesystem::path& path, const Tensor& chw);
/// Binary map written as 0 / 255.
void save_binary_png(const std::filesystem::path& path, const Tensor& map);

// ---- preprocessing ---------------------------------------------------------------

struct PreprocessOptions {
    int64_t min_side = 350;
    int64_t crop = 256;
    bool random_crop = true;  // false: centre crop
    bool flip = true;         // horizontal flip with probability 0.5

    /// 64 x 64 crops from images resized to a min side of 88.
    static PreprocessOptions desk();
};

/// Resize so that min(H, W) == min_side, keeping the aspect ratio.
cv::Mat resize_min_side(const cv::Mat& image, int64_t min_side);

struct CropPlan {
    int64_t y = 0;
    int64_t x = 0;
    bool flip = false;
};

CropPlan plan_crop(int64_t rows, int64_t cols, const PreprocessOptions& options, std::mt19937_64& rng);
Tensor apply_crop(const cv::Mat& resized, const CropPlan& plan, int64_t crop);

/// resize_min_side + crop + optional flip; returns RGB float32 [3, crop, crop].
Tensor preprocess(const cv::Mat& image, const PreprocessOptions& options, std::mt19937_64& rng);

// ---- samples ----------------------------------------------------------------------

struct Sample {
    Tensor image_gt;      // [3, H, W] in [0, 1]
    Tensor mask;          // [1, H, W], 1 = known
    Tensor edge_gt;       // [1, H, W] in {0, 1}
    Tensor edge_corrupt;  // [1, H, W] in {0, 1}
};

Sample make_sample(const Tensor& image_gt, const Tensor& mask, const CannyParams& canny = {});

/// Edges of the clean image.
Tensor ground_truth_edges(const Tensor& image_gt, const CannyParams& canny = {});

// ---- manifests ------------------------------------------------------------------------

struct ManifestEntry {
    std::filesystem::path path;  // resolved against the manifest directory
    std::string id;              // the path as written in the manifest
    std::string split;           // optional tag after a tab, empty if absent
};

/// UTF-8 text, one image path per line, optional "<TAB>split" suffix, '#'
/// starts a comment, blank lines ignored.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& lines);

struct LoadedImage {
    std::string id;
    cv::Mat image;  // already resized to the preprocessing min side
};

/// Decodes every entry (optionally filtered by split; untagged entries belong
/// to every split), resizing to options.min_side. Undecodable or too-small images are skipped with a
/// message on stderr.
std::vector<LoadedImage> load_images(const std::vector<ManifestEntry>& entries, const PreprocessOptions& options,
                                     const std::string& split = "");

}  // namespace edgelbam
