#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace edgelbam {

using torch::Tensor;

/// Geometry of a square convolution: kernel size, stride and zero padding.
struct ConvSpec {
    int64_t kernel = 4;
    int64_t stride = 2;
    int64_t padding = 1;

    /// Output extent along one axis, or -1 when the geometry does not tile
    /// the input exactly.
    [[nodiscard]] int64_t output_extent(int64_t input) const {
        const int64_t span = input + 2 * padding - kernel;
        if (span < 0 || span % stride != 0) return -1;
        return span / stride + 1;
    }

    static ConvSpec down() { return {4, 2, 1}; }
    static ConvSpec same(int64_t k = 3) { return {k, 1, k / 2}; }
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw std::invalid_argument(message);
}

inline std::string shape_string(const Tensor& t) {
    std::string s = "[";
    for (int64_t i = 0; i < t.dim(); ++i) {
        if (i) s += ", ";
        s += std::to_string(t.size(i));
    }
    return s + "]";
}

/// Spatial size check for NCHW tensors.
inline bool same_spatial(const Tensor& a, const Tensor& b) {
    return a.dim() == 4 && b.dim() == 4 && a.size(2) == b.size(2) && a.size(3) == b.size(3);
}

}  // namespace edgelbam
