#include "edgelbam/data.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

namespace edgelbam {

namespace fs = std::filesystem;

// ---- masks -------------------------------------------------------------------

std::string RatioBucket::label() const {
    return std::to_string(static_cast<int>(std::lround(low * 100))) + "-" +
           std::to_string(static_cast<int>(std::lround(high * 100))) + "%";
}

const std::vector<RatioBucket>& standard_buckets() {
    static const std::vector<RatioBucket> buckets{{0.1, 0.2}, {0.2, 0.3}, {0.3, 0.4}, {0.4, 0.5}};
    return buckets;
}

RatioBucket parse_bucket(const std::string& label) {
    for (const auto& b : standard_buckets())
        if (b.label() == label || b.label() == label + "%") return b;
    throw std::invalid_argument("unknown ratio bucket '" + label + "' (expected 10-20, 20-30, 30-40 or 40-50)");
}

double hole_ratio(const Tensor& mask) { return (mask == 0).to(torch::kFloat64).mean().item<double>(); }

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
}

int64_t uniform_int(std::mt19937_64& rng, int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(rng() % static_cast<uint64_t>(hi - lo + 1));
}

// One random-walk stroke of thick line segments.
void draw_stroke(cv::Mat& hole, std::mt19937_64& rng, double scale) {
    const int size = hole.rows;
    const int vertices = static_cast<int>(uniform_int(rng, 2, 8));
    const int width = std::max(1, static_cast<int>(std::lround(uniform(rng, 0.03, 0.09) * size * scale)));
    cv::Point p(static_cast<int>(uniform_int(rng, 0, size - 1)), static_cast<int>(uniform_int(rng, 0, size - 1)));
    double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    for (int v = 0; v < vertices; ++v) {
        angle += uniform(rng, -0.8, 0.8);
        const double length = uniform(rng, 0.05, 0.25) * size * scale;
        cv::Point q(std::clamp(static_cast<int>(std::lround(p.x + length * std::cos(angle))), 0, size - 1),
                    std::clamp(static_cast<int>(std::lround(p.y + length * std::sin(angle))), 0, size - 1));
        cv::line(hole, p, q, cv::Scalar(255), width, cv::LINE_8);
        p = q;
    }
}

void draw_ellipse(cv::Mat& hole, std::mt19937_64& rng, double scale) {
    const int size = hole.rows;
    const cv::Point centre(static_cast<int>(uniform_int(rng, 0, size - 1)),
                           static_cast<int>(uniform_int(rng, 0, size - 1)));
    const cv::Size axes(std::max(1, static_cast<int>(std::lround(uniform(rng, 0.03, 0.15) * size * scale))),
                        std::max(1, static_cast<int>(std::lround(uniform(rng, 0.03, 0.15) * size * scale))));
    cv::ellipse(hole, centre, axes, uniform(rng, 0.0, 180.0), 0.0, 360.0, cv::Scalar(255), cv::FILLED, cv::LINE_8);
}

}  // namespace

Tensor generate_irregular_mask(const MaskSpec& spec, int64_t size) {
    require(spec.bucket.low >= 0.0 && spec.bucket.low < spec.bucket.high && spec.bucket.high <= 1.0,
            "generate_irregular_mask: invalid bucket");
    require(size > 0, "generate_irregular_mask: size must be positive");
    std::mt19937_64 rng(spec.seed);
    const double total = static_cast<double>(size * size);
    constexpr int kAttempts = 200;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        cv::Mat hole = cv::Mat::zeros(static_cast<int>(size), static_cast<int>(size), CV_8U);
        double ratio = 0.0;
        // Shapes shrink as the hole approaches the bucket so the last one
        // rarely overshoots.
        while (ratio <= spec.bucket.low) {
            const double remaining = (spec.bucket.high - ratio) / std::max(spec.bucket.high, 1e-9);
            const double scale = std::clamp(std::sqrt(remaining) * 1.5, 0.3, 1.5);
            if (uniform(rng, 0.0, 1.0) < 0.75) draw_stroke(hole, rng, scale);
            else draw_ellipse(hole, rng, scale);
            ratio = static_cast<double>(cv::countNonZero(hole)) / total;
        }
        if (spec.bucket.contains(ratio)) {
            cv::Mat known;
            cv::compare(hole, 0, known, cv::CMP_EQ);  // 255 where known
            auto t = torch::from_blob(known.data, {1, size, size}, torch::kUInt8).to(torch::kFloat32) / 255.0;
            return t.contiguous();
        }
    }
    throw std::invalid_argument("generate_irregular_mask: bucket " + spec.bucket.label() +
                                " is not attainable at size " + std::to_string(size));
}

uint64_t eval_mask_seed(const std::string& image_id, uint64_t eval_seed, size_t bucket_index) {
    // FNV-1a over the id, then a splitmix64 finaliser over the combination.
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : image_id) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    uint64_t z = h ^ (eval_seed * 0x9E3779B97F4A7C15ULL) ^ (static_cast<uint64_t>(bucket_index) << 56);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// ---- images --------------------------------------------------------------------

cv::Mat load_image(const fs::path& path) {
    cv::Mat image = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (image.empty()) throw std::runtime_error("cannot decode image '" + path.string() + "'");
    return image;
}

Tensor load_mask(const fs::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw std::runtime_error("cannot decode mask '" + path.string() + "'");
    cv::Mat known;
    cv::compare(m, 0, known, cv::CMP_NE);
    return (torch::from_blob(known.data, {1, known.rows, known.cols}, torch::kUInt8).to(torch::kFloat32) / 255.0)
        .contiguous();
}

Tensor image_to_tensor(const cv::Mat& bgr) {
    require(bgr.type() == CV_8UC3, "image_to_tensor: expected an 8-bit 3-channel image");
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8);
    return (t.permute({2, 0, 1}).to(torch::kFloat32) / 255.0).contiguous();
}

cv::Mat tensor_to_image(const Tensor& chw) {
    require(chw.dim() == 3 && (chw.size(0) == 1 || chw.size(0) == 3), "tensor_to_image: expected [1|3, H, W]");
    auto bytes = (chw.detach().to(torch::kFloat64).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8);
    bytes = bytes.permute({1, 2, 0}).contiguous();
    const int rows = static_cast<int>(chw.size(1));
    const int cols = static_cast<int>(chw.size(2));
    if (chw.size(0) == 1) return cv::Mat(rows, cols, CV_8UC1, bytes.data_ptr<uint8_t>()).clone();
    cv::Mat rgb(rows, cols, CV_8UC3, bytes.data_ptr<uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return bgr;
}

void save_image(const fs::path& path, const Tensor& chw) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), tensor_to_image(chw)))
        throw std::runtime_error("cannot write image '" + path.string() + "'");
}

void save_binary_png(const fs::path& path, const Tensor& map) {
    const auto m = map.reshape({1, map.size(-2), map.size(-1)});
    save_image(path, (m > 0.5).to(torch::kFloat32));
}

// ---- preprocessing ---------------------------------------------------------------

PreprocessOptions PreprocessOptions::desk() {
    PreprocessOptions o;
    o.min_side = 88;
    o.crop = 64;
    return o;
}

cv::Mat resize_min_side(const cv::Mat& image, int64_t min_side) {
    require(!image.empty() && min_side > 0, "resize_min_side: empty image");
    const double scale = static_cast<double>(min_side) / std::min(image.rows, image.cols);
    int rows = static_cast<int>(std::lround(image.rows * scale));
    int cols = static_cast<int>(std::lround(image.cols * scale));
    if (image.rows <= image.cols) rows = static_cast<int>(min_side);
    else cols = static_cast<int>(min_side);
    if (rows == image.rows && cols == image.cols) return image.clone();
    cv::Mat out;
    cv::resize(image, out, cv::Size(cols, rows), 0, 0, scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR);
    return out;
}

CropPlan plan_crop(int64_t rows, int64_t cols, const PreprocessOptions& options, std::mt19937_64& rng) {
    require(rows >= options.crop && cols >= options.crop, "plan_crop: image smaller than the crop");
    CropPlan plan;
    if (options.random_crop) {
        plan.y = uniform_int(rng, 0, rows - options.crop);
        plan.x = uniform_int(rng, 0, cols - options.crop);
    } else {
        plan.y = (rows - options.crop) / 2;
        plan.x = (cols - options.crop) / 2;
    }
    plan.flip = options.flip && (rng() & 1ULL);
    return plan;
}

Tensor apply_crop(const cv::Mat& resized, const CropPlan& plan, int64_t crop) {
    cv::Mat roi = resized(cv::Rect(static_cast<int>(plan.x), static_cast<int>(plan.y), static_cast<int>(crop),
                                   static_cast<int>(crop)));
    if (plan.flip) {
        cv::Mat flipped;
        cv::flip(roi, flipped, 1);
        return image_to_tensor(flipped);
    }
    return image_to_tensor(roi.clone());
}

Tensor preprocess(const cv::Mat& image, const PreprocessOptions& options, std::mt19937_64& rng) {
    const cv::Mat resized = resize_min_side(image, options.min_side);
    return apply_crop(resized, plan_crop(resized.rows, resized.cols, options, rng), options.crop);
}

// ---- samples ----------------------------------------------------------------------

Tensor ground_truth_edges(const Tensor& image_gt, const CannyParams& canny_params) {
    return canny(to_grayscale(image_gt.to(torch::kFloat64)), canny_params);
}

Sample make_sample(const Tensor& image_gt, const Tensor& mask, const CannyParams& canny_params) {
    require(image_gt.dim() == 3 && image_gt.size(0) == 3, "make_sample: image must be [3, H, W]");
    require(mask.dim() == 3 && mask.size(0) == 1 && mask.size(1) == image_gt.size(1) &&
                mask.size(2) == image_gt.size(2),
            "make_sample: mask must be [1, H, W] matching the image");
    Sample s;
    s.image_gt = image_gt;
    s.mask = mask;
    s.edge_gt = ground_truth_edges(image_gt, canny_params);
    s.edge_corrupt = corrupted_edges(image_gt, mask, canny_params);
    return s;
}

// ---- manifests ------------------------------------------------------------------------

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
    const fs::path base = path.parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        first = false;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
        const auto start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        line.erase(0, start);
        ManifestEntry e;
        if (const auto tab = line.find('\t'); tab != std::string::npos) {
            e.id = line.substr(0, tab);
            e.split = line.substr(line.find_first_not_of(" \t", tab));
        } else {
            e.id = line;
        }
        const fs::path p(e.id);
        e.path = p.is_absolute() ? p : base / p;
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_manifest(const fs::path& path, const std::vector<std::string>& lines) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
    for (const auto& l : lines) out << l << '\n';
}

std::vector<LoadedImage> load_images(const std::vector<ManifestEntry>& entries, const PreprocessOptions& options,
                                     const std::string& split) {
    std::vector<LoadedImage> images;
    for (const auto& e : entries) {
        if (!split.empty() && !e.split.empty() && e.split != split) continue;
        try {
            cv::Mat resized = resize_min_side(load_image(e.path), options.min_side);
            if (resized.rows < options.crop || resized.cols < options.crop) {
                std::cerr << "skipping '" << e.id << "': smaller than the " << options.crop << " crop\n";
                continue;
            }
            images.push_back({e.id, std::move(resized)});
        } catch (const std::exception& ex) {
            std::cerr << "skipping '" << e.id << "': " << ex.what() << '\n';
        }
    }
    return images;
}

}  // namespace edgelbam
