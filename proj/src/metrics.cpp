#include "edgelbam/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace edgelbam {

namespace F = torch::nn::functional;

double psnr(const Tensor& pred, const Tensor& gt) {
    require(pred.sizes() == gt.sizes(), "psnr: shape mismatch");
    const double mse = (pred.to(torch::kFloat64) - gt.to(torch::kFloat64)).square().mean().item<double>();
    if (mse == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

Tensor luminance(const Tensor& image) {
    auto x = image.to(torch::kFloat64);
    if (x.dim() == 2) return x;
    require(x.dim() == 3, "ssim: expected [C, H, W] or [H, W]");
    return to_grayscale(x).squeeze(0);
}

// Half-sample symmetric indices for padding one axis by r.
Tensor mirror_indices(int64_t n, int64_t r) {
    std::vector<int64_t> idx;
    for (int64_t i = -r; i < n + r; ++i) {
        int64_t k = i;
        while (k < 0 || k >= n) k = k < 0 ? -k - 1 : 2 * n - k - 1;
        idx.push_back(k);
    }
    return torch::tensor(idx, torch::kLong);
}

Tensor gaussian_filter(const Tensor& x, const Tensor& kernel1d) {
    const int64_t r = kernel1d.size(0) / 2;
    auto padded = x.index_select(0, mirror_indices(x.size(0), r)).index_select(1, mirror_indices(x.size(1), r));
    auto h = padded.unsqueeze(0).unsqueeze(0);
    h = F::conv2d(h, kernel1d.view({1, 1, -1, 1}));
    h = F::conv2d(h, kernel1d.view({1, 1, 1, -1}));
    return h.squeeze(0).squeeze(0);
}

}  // namespace

double ssim(const Tensor& pred, const Tensor& gt) {
    require(pred.sizes() == gt.sizes(), "ssim: shape mismatch");
    const auto x = luminance(pred);
    const auto y = luminance(gt);
    constexpr double sigma = 1.5;
    constexpr int64_t radius = 5;
    require(x.size(0) > 2 * radius && x.size(1) > 2 * radius, "ssim: image smaller than the 11x11 window");
    auto k = torch::arange(-radius, radius + 1, torch::kFloat64);
    k = torch::exp(-0.5 * k.square() / (sigma * sigma));
    k = k / k.sum();

    const auto ux = gaussian_filter(x, k);
    const auto uy = gaussian_filter(y, k);
    const auto vx = gaussian_filter(x * x, k) - ux * ux;
    const auto vy = gaussian_filter(y * y, k) - uy * uy;
    const auto vxy = gaussian_filter(x * y, k) - ux * uy;
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const auto s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux.square() + uy.square() + c1) * (vx + vy + c2));
    return s.slice(0, radius, s.size(0) - radius).slice(1, radius, s.size(1) - radius).mean().item<double>();
}

MaskedL1 masked_l1_pct(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
    require(pred.sizes() == gt.sizes(), "masked_l1_pct: shape mismatch");
    const auto hole = 1.0 - mask.to(torch::kFloat64);
    const double num = (hole * (gt.to(torch::kFloat64) - pred.to(torch::kFloat64))).abs().sum().item<double>();
    const double den = (hole * gt.to(torch::kFloat64)).abs().sum().item<double>();
    if (den == 0.0) return {0.0, true};
    return {100.0 * num / den, false};
}

double perceptual_distance(const Tensor& pred, const Tensor& gt, const FeatureFn& extractor) {
    require(pred.sizes() == gt.sizes(), "perceptual_distance: shape mismatch");
    torch::NoGradGuard guard;
    auto batch = [](const Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; };
    const auto fa = extractor(batch(pred));
    const auto fb = extractor(batch(gt));
    auto unit = [](const Tensor& f) { return f / (f.square().sum(1, true).sqrt() + 1e-10); };
    double d = 0.0;
    for (size_t i = 0; i < fa.size(); ++i)
        d += (unit(fa[i]) - unit(fb[i])).square().sum(1).mean().item<double>();
    return d;
}

void BucketAccumulator::add(double p, double s, double l1, double perc) {
    ++count_;
    psnr_ += p;
    ssim_ += s;
    l1_ += l1;
    perc_ += perc;
}

BucketMetrics BucketAccumulator::result() const {
    BucketMetrics m;
    m.bucket = bucket_;
    m.count = count_;
    if (count_ == 0) return m;
    const auto n = static_cast<double>(count_);
    m.psnr = psnr_ / n;
    m.ssim = ssim_ / n;
    m.l1_pct = l1_ / n;
    m.perc_dist = perc_ / n;
    return m;
}

namespace {

std::string fmt(double v, int precision) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

struct Row {
    std::string name;
    int precision;
    double BucketMetrics::*field;
};

const std::vector<Row>& rows() {
    static const std::vector<Row> r{{"psnr", 4, &BucketMetrics::psnr},
                                    {"ssim", 6, &BucketMetrics::ssim},
                                    {"l1_pct", 4, &BucketMetrics::l1_pct},
                                    {"perc_dist", 6, &BucketMetrics::perc_dist}};
    return r;
}

}  // namespace

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << "# evaluated_on=" << evaluated_on << '\n';
    os << "metric";
    for (const auto& b : buckets) os << ',' << b.bucket.label();
    os << '\n';
    for (const auto& row : rows()) {
        os << row.name;
        for (const auto& b : buckets) os << ',' << fmt(b.*(row.field), row.precision);
        os << '\n';
    }
    os << "count";
    for (const auto& b : buckets) os << ',' << b.count;
    os << '\n';
    return os.str();
}

std::string EvalReport::to_table() const {
    constexpr int name_width = 10;
    constexpr int col_width = 12;
    std::ostringstream os;
    os << "Evaluated on " << evaluated_on << " outputs\n";
    os << std::left << std::setw(name_width) << "metric";
    for (const auto& b : buckets) os << std::right << std::setw(col_width) << b.bucket.label();
    os << '\n' << std::string(name_width + col_width * buckets.size(), '-') << '\n';
    for (const auto& row : rows()) {
        os << std::left << std::setw(name_width) << row.name;
        for (const auto& b : buckets) os << std::right << std::setw(col_width) << fmt(b.*(row.field), row.precision);
        os << '\n';
    }
    os << std::left << std::setw(name_width) << "count";
    for (const auto& b : buckets) os << std::right << std::setw(col_width) << b.count;
    os << '\n';
    return os.str();
}

void EvalReport::write(const std::filesystem::path& csv_path, const std::filesystem::path& table_path) const {
    for (const auto& [path, text] : {std::pair{csv_path, to_csv()}, std::pair{table_path, to_table()}}) {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
        out << text;
    }
}

}  // namespace edgelbam
