#pragma once

// Multi-scale edge completion network, its patch discriminator and losses.

#include "edgelbam/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace edgelbam {

enum class MECVariant { full, single_scale, multi_loss };

std::string to_string(MECVariant variant);
MECVariant parse_mec_variant(const std::string& name);

struct MECNetConfig {
    std::vector<int64_t> scales{8, 16, 32, 64};  // branch resolutions, ascending
    int64_t blocks_per_branch = 8;
    int64_t base_channels = 64;  // stem width; branches use 2x, the decoder 1x then 0.5x
    int64_t image_size = 256;
    MECVariant variant = MECVariant::full;

    /// 64 x 64 profile: scales {2, 4, 8, 16}, quarter widths.
    static MECNetConfig desk(MECVariant variant = MECVariant::full);
    void validate() const;
    /// Scales actually instantiated (only the highest for single_scale).
    [[nodiscard]] std::vector<int64_t> active_scales() const;
};

struct EdgePrediction {
    Tensor edge_hat;                  // [N, 1, H, W] in [0, 1]
    std::vector<Tensor> side_outputs; // multi_loss only: one full-resolution map per scale
};

struct ResidualBlockImpl : torch::nn::Module {
    explicit ResidualBlockImpl(int64_t channels);
    Tensor forward(const Tensor& x);
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResidualBlock);

class MECNetImpl : public torch::nn::Module {
public:
    explicit MECNetImpl(MECNetConfig config);

    /// `image` [N, 3, H, W] in [0, 1] (hole content is ignored), `mask`
    /// [N, 1, H, W] with 1 = known, `edges` [N, 1, H, W] incomplete edges.
    EdgePrediction forward(const Tensor& image, const Tensor& mask, const Tensor& edges);

    [[nodiscard]] const MECNetConfig& config() const { return config_; }

private:
    MECNetConfig config_;
    std::vector<int64_t> scales_;
    torch::nn::Conv2d stem1{nullptr}, stem2{nullptr};
    std::vector<torch::nn::Conv2d> branch_in_;
    std::vector<torch::nn::Sequential> branch_blocks_;
    std::vector<torch::nn::ConvTranspose2d> branch_up_;
    std::vector<torch::nn::Conv2d> side_heads_;
    torch::nn::ConvTranspose2d up1{nullptr}, up2{nullptr}, out{nullptr};
};
TORCH_MODULE(MECNet);

struct PatchDiscriminatorOptions {
    int64_t in_channels = 4;  // edge + RGB image
    int64_t base_channels = 64;
};

/// 70 x 70 PatchGAN. forward returns the five layer outputs; the last one is
/// the patch score map (logits).
class PatchDiscriminatorImpl : public torch::nn::Module {
public:
    explicit PatchDiscriminatorImpl(PatchDiscriminatorOptions options = {});
    std::vector<Tensor> forward(const Tensor& edge, const Tensor& image);

    /// Kernel sizes and strides of the five layers.
    [[nodiscard]] std::vector<std::pair<int64_t, int64_t>> geometry() const;

private:
    std::vector<torch::nn::Conv2d> convs_;
};
TORCH_MODULE(PatchDiscriminator);

/// Receptive field of one output unit of a stack of convolutions given as
/// (kernel, stride) pairs.
int64_t receptive_field(const std::vector<std::pair<int64_t, int64_t>>& layers);

/// Anything that maps (edge, image) to the five discriminator layer outputs.
using EdgeDiscriminatorFn = std::function<std::vector<Tensor>(const Tensor& edge, const Tensor& image)>;

struct MECLosses {
    Tensor adv;
    Tensor rec;
    Tensor total;
};

/// L_total = L_adv + alpha_r * L_rec.
Tensor mec_total(const Tensor& adv, const Tensor& rec, double alpha_r = 10.0);

/// Generator side. L_adv is the non-saturating term on the fake patch scores;
/// L_rec sums, over the five layers, the mean absolute difference between the
/// features of (edge_hat, image) and (edge_gt, image).
MECLosses mecnet_losses(const Tensor& edge_hat, const Tensor& edge_gt, const Tensor& image,
                        const EdgeDiscriminatorFn& discriminator, double alpha_r = 10.0);

/// Discriminator side: BCE on real (edge_gt) and fake (edge_hat, detached)
/// patch scores, averaged.
Tensor mecnet_discriminator_loss(const Tensor& edge_hat, const Tensor& edge_gt, const Tensor& image,
                                 const EdgeDiscriminatorFn& discriminator);

}  // namespace edgelbam
