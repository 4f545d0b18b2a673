#pragma once

// Binary edge maps for the edge completion stage: a Canny detector and the
// "incomplete edges" of a corrupted image.

#include "edgelbam/common.hpp"

#include <optional>

namespace edgelbam {

struct CannyThresholds {
    double low = 0.0;
    double high = 0.0;
};

/// Detector settings. Thresholds left unset are chosen per image as fixed
/// fractions of the largest gradient magnitude.
struct CannyParams {
    double sigma = 2.0;
    std::optional<double> low;
    std::optional<double> high;
    double auto_low_fraction = 0.1;
    double auto_high_fraction = 0.2;
};

/// Luminance (0.299 R + 0.587 G + 0.114 B) of a [3, H, W] or [N, 3, H, W]
/// image; single-channel input is returned unchanged.
Tensor to_grayscale(const Tensor& image);

/// Gaussian-smoothed Sobel gradient magnitude of a [H, W] or [1, H, W] image,
/// as float64 [H, W].
Tensor gradient_magnitude(const Tensor& gray, double sigma);

CannyThresholds auto_thresholds(const Tensor& magnitude, const CannyParams& params);

/// Canny edge map with explicit hysteresis thresholds (0 < low < high).
/// Input must be single-channel, [H, W] or [1, H, W]; output is float32
/// [1, H, W] with values in {0, 1}.
Tensor canny(const Tensor& gray, double sigma, double low, double high);
Tensor canny(const Tensor& gray, const CannyParams& params = {});

/// Edges of the corrupted image: holes are filled with the mean of the known
/// pixels, the detector runs on the result, and responses inside the hole
/// dilated by one pixel are removed. `image` is [C, H, W] in [0, 1]; `mask`
/// is [1, H, W] or [H, W] with 1 = known.
Tensor corrupted_edges(const Tensor& image, const Tensor& mask, const CannyParams& params = {});

}  // namespace edgelbam
