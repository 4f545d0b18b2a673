#include "edgelbam/edges.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <vector>

namespace edgelbam {

namespace {

struct Grid {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<double> v;

    Grid(int64_t r, int64_t c, double fill = 0.0) : rows(r), cols(c), v(static_cast<size_t>(r * c), fill) {}
    double& at(int64_t i, int64_t j) { return v[static_cast<size_t>(i * cols + j)]; }
    [[nodiscard]] double at(int64_t i, int64_t j) const { return v[static_cast<size_t>(i * cols + j)]; }
};

Grid to_grid(const Tensor& gray) {
    Tensor t = gray;
    if (t.dim() == 3) {
        require(t.size(0) == 1, "canny: expected a single-channel image, got " + shape_string(gray));
        t = t.squeeze(0);
    }
    require(t.dim() == 2, "canny: expected a single-channel image, got " + shape_string(gray));
    t = t.to(torch::kFloat64).contiguous();
    Grid g(t.size(0), t.size(1));
    std::copy_n(t.data_ptr<double>(), g.v.size(), g.v.begin());
    return g;
}

// Summation order of numpy's pairwise sum for short arrays, so the Gaussian
// weights normalise to the same bits as the reference filters.
double pairwise_sum(const std::vector<double>& x) {
    const size_t n = x.size();
    if (n < 8) {
        double s = 0.0;
        for (double e : x) s += e;
        return s;
    }
    std::array<double, 8> r{};
    for (size_t k = 0; k < 8; ++k) r[k] = x[k];
    size_t i = 8;
    for (; i + 8 <= n; i += 8)
        for (size_t k = 0; k < 8; ++k) r[k] += x[i + k];
    double res = ((r[0] + r[1]) + (r[2] + r[3])) + ((r[4] + r[5]) + (r[6] + r[7]));
    for (; i < n; ++i) res += x[i];
    return res;
}

std::vector<double> gaussian_weights(double sigma) {
    const auto radius = static_cast<int64_t>(4.0 * sigma + 0.5);
    const double scale = -0.5 / (sigma * sigma);
    std::vector<double> phi;
    for (int64_t x = -radius; x <= radius; ++x) phi.push_back(std::exp(scale * static_cast<double>(x * x)));
    const double sum = pairwise_sum(phi);
    for (auto& p : phi) p /= sum;
    return phi;
}

enum class Border { constant_zero, reflect };

double sample(const Grid& g, int64_t i, int64_t j, int axis, int64_t offset, Border border) {
    int64_t k = (axis == 0 ? i : j) + offset;
    const int64_t n = axis == 0 ? g.rows : g.cols;
    if (k < 0 || k >= n) {
        if (border == Border::constant_zero) return 0.0;
        // half-sample symmetric: d c b a | a b c d | d c b a
        while (k < 0 || k >= n) k = k < 0 ? -k - 1 : 2 * n - k - 1;
    }
    return axis == 0 ? g.at(k, j) : g.at(i, k);
}

// 1-D correlation along one axis with an odd, symmetric (sign = +1) or
// antisymmetric (sign = -1) kernel, accumulated in the same order as the
// reference filters.
Grid correlate_axis(const Grid& in, const std::vector<double>& w, int axis, Border border, int sign) {
    const auto half = static_cast<int64_t>(w.size() / 2);
    Grid out(in.rows, in.cols);
    for (int64_t i = 0; i < in.rows; ++i) {
        for (int64_t j = 0; j < in.cols; ++j) {
            double acc = sample(in, i, j, axis, 0, border) * w[static_cast<size_t>(half)];
            for (int64_t d = half; d >= 1; --d) {
                const double lo = sample(in, i, j, axis, -d, border);
                const double hi = sample(in, i, j, axis, d, border);
                const double wd = w[static_cast<size_t>(half - d)];
                acc += (sign > 0 ? lo + hi : lo - hi) * wd;
            }
            out.at(i, j) = acc;
        }
    }
    return out;
}

Grid gaussian_smooth(const Grid& in, double sigma) {
    const auto w = gaussian_weights(sigma);
    auto pass = [&](const Grid& g) {
        return correlate_axis(correlate_axis(g, w, 0, Border::constant_zero, +1), w, 1, Border::constant_zero, +1);
    };
    // Normalise by the smoothed support so the zero border does not darken edges.
    const Grid num = pass(in);
    const Grid den = pass(Grid(in.rows, in.cols, 1.0));
    Grid out(in.rows, in.cols);
    for (size_t k = 0; k < out.v.size(); ++k)
        out.v[k] = num.v[k] / (den.v[k] + std::numeric_limits<double>::epsilon());
    return out;
}

struct Gradients {
    Grid di;  // along rows
    Grid dj;  // along columns
    Grid magnitude;
};

Gradients sobel_gradients(const Grid& smoothed) {
    const std::vector<double> deriv{-1.0, 0.0, 1.0};
    const std::vector<double> smooth{1.0, 2.0, 1.0};
    Grid di = correlate_axis(correlate_axis(smoothed, deriv, 0, Border::reflect, -1), smooth, 1, Border::reflect, +1);
    Grid dj = correlate_axis(correlate_axis(smoothed, deriv, 1, Border::reflect, -1), smooth, 0, Border::reflect, +1);
    Grid mag(smoothed.rows, smoothed.cols);
    for (size_t k = 0; k < mag.v.size(); ++k) {
        double m = di.v[k] * di.v[k];
        m += dj.v[k] * dj.v[k];
        mag.v[k] = std::sqrt(m);
    }
    return {std::move(di), std::move(dj), std::move(mag)};
}

// Non-maximum suppression with bilinear interpolation between the two pixels
// straddling the gradient direction. Border pixels never survive.
Grid suppress_non_maxima(const Gradients& g, double low) {
    const Grid& mag = g.magnitude;
    Grid out(mag.rows, mag.cols);
    for (int64_t x = 1; x + 1 < mag.rows; ++x) {
        for (int64_t y = 1; y + 1 < mag.cols; ++y) {
            const double m = mag.at(x, y);
            if (!(m >= low)) continue;
            const double gi = g.di.at(x, y);
            const double gj = g.dj.at(x, y);
            const double ai = std::fabs(gi);
            const double aj = std::fabs(gj);
            if (ai == 0.0 && aj == 0.0) continue;
            const int64_t s = (gi >= 0) == (gj >= 0) || gi == 0.0 || gj == 0.0 ? 1 : -1;
            double plus, minus;
            if (ai >= aj) {
                const double w = aj / ai;
                plus = mag.at(x + 1, y + s) * w + mag.at(x + 1, y) * (1.0 - w);
                minus = mag.at(x - 1, y - s) * w + mag.at(x - 1, y) * (1.0 - w);
            } else {
                const double w = ai / aj;
                plus = mag.at(x + s, y + 1) * w + mag.at(x, y + 1) * (1.0 - w);
                minus = mag.at(x - s, y - 1) * w + mag.at(x, y - 1) * (1.0 - w);
            }
            if (plus <= m && minus <= m) out.at(x, y) = m;
        }
    }
    return out;
}

// Keep 8-connected components of candidates that contain a strong pixel.
Grid hysteresis(const Grid& candidates, double high) {
    Grid out(candidates.rows, candidates.cols);
    std::deque<std::pair<int64_t, int64_t>> queue;
    for (int64_t i = 0; i < candidates.rows; ++i)
        for (int64_t j = 0; j < candidates.cols; ++j)
            if (candidates.at(i, j) > 0 && candidates.at(i, j) >= high) {
                out.at(i, j) = 1.0;
                queue.emplace_back(i, j);
            }
    while (!queue.empty()) {
        const auto [i, j] = queue.front();
        queue.pop_front();
        for (int64_t di = -1; di <= 1; ++di)
            for (int64_t dj = -1; dj <= 1; ++dj) {
                const int64_t a = i + di, b = j + dj;
                if (a < 0 || b < 0 || a >= candidates.rows || b >= candidates.cols) continue;
                if (out.at(a, b) > 0 || !(candidates.at(a, b) > 0)) continue;
                out.at(a, b) = 1.0;
                queue.emplace_back(a, b);
            }
    }
    return out;
}

Tensor grid_to_tensor(const Grid& g) {
    auto t = torch::empty({1, g.rows, g.cols}, torch::kFloat32);
    auto* p = t.data_ptr<float>();
    for (size_t k = 0; k < g.v.size(); ++k) p[k] = static_cast<float>(g.v[k]);
    return t;
}

Gradients detector_gradients(const Tensor& gray, double sigma) {
    require(sigma > 0.0, "canny: sigma must be positive");
    return sobel_gradients(gaussian_smooth(to_grid(gray), sigma));
}

Tensor run_canny(const Gradients& g, double low, double high) {
    return grid_to_tensor(hysteresis(suppress_non_maxima(g, low), high));
}

}  // namespace

Tensor to_grayscale(const Tensor& image) {
    const int64_t channel_dim = image.dim() == 4 ? 1 : 0;
    require(image.dim() == 3 || image.dim() == 4, "to_grayscale: expected [C,H,W] or [N,C,H,W]");
    const int64_t channels = image.size(channel_dim);
    if (channels == 1) return image;
    require(channels == 3, "to_grayscale: expected 1 or 3 channels, got " + shape_string(image));
    const auto r = image.select(channel_dim, 0);
    const auto g = image.select(channel_dim, 1);
    const auto b = image.select(channel_dim, 2);
    return (0.299 * r + 0.587 * g + 0.114 * b).unsqueeze(channel_dim);
}

Tensor gradient_magnitude(const Tensor& gray, double sigma) {
    const auto g = detector_gradients(gray, sigma);
    auto t = torch::empty({g.magnitude.rows, g.magnitude.cols}, torch::kFloat64);
    std::copy(g.magnitude.v.begin(), g.magnitude.v.end(), t.data_ptr<double>());
    return t;
}

CannyThresholds auto_thresholds(const Tensor& magnitude, const CannyParams& params) {
    const double peak = magnitude.numel() ? magnitude.max().item<double>() : 0.0;
    return {params.low.value_or(params.auto_low_fraction * peak),
            params.high.value_or(params.auto_high_fraction * peak)};
}

Tensor canny(const Tensor& gray, double sigma, double low, double high) {
    require(low > 0.0 && low < high, "canny: thresholds must satisfy 0 < low < high");
    return run_canny(detector_gradients(gray, sigma), low, high);
}

Tensor canny(const Tensor& gray, const CannyParams& params) {
    const auto g = detector_gradients(gray, params.sigma);
    double peak = 0.0;
    for (double m : g.magnitude.v) peak = std::max(peak, m);
    const double low = params.low.value_or(params.auto_low_fraction * peak);
    const double high = params.high.value_or(params.auto_high_fraction * peak);
    // A flat image has no gradient to threshold; what remains is rounding
    // noise from the border normalisation.
    if (peak <= 1e-8 || !(low > 0.0)) return torch::zeros({1, g.magnitude.rows, g.magnitude.cols});
    require(low < high, "canny: thresholds must satisfy 0 < low < high");
    return run_canny(g, low, high);
}

Tensor corrupted_edges(const Tensor& image, const Tensor& mask, const CannyParams& params) {
    require(image.dim() == 3, "corrupted_edges: image must be [C,H,W]");
    const auto gray = to_grayscale(image.to(torch::kFloat64)).squeeze(0);
    auto known = mask.to(torch::kFloat64).reshape({gray.size(0), gray.size(1)});
    require(((known == 0) | (known == 1)).all().item<bool>(), "corrupted_edges: mask must be binary");
    const double count = known.sum().item<double>();
    if (count == 0.0) return torch::zeros({1, gray.size(0), gray.size(1)});
    const double fill = (gray * known).sum().item<double>() / count;
    const auto filled = gray * known + fill * (1.0 - known);
    auto edges = canny(filled, params);
    // hole dilated by one pixel (8-neighbourhood)
    const auto hole = (1.0 - known).unsqueeze(0).unsqueeze(0);
    const auto dilated = torch::max_pool2d(hole, {3, 3}, {1, 1}, {1, 1}).squeeze(0);
    return edges * (1.0 - dilated).to(torch::kFloat32);
}

}  // namespace edgelbam
