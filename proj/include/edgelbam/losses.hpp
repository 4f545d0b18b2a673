#pragma once

// Training objective of the inpainting network: pixel, perceptual, style and
// WGAN-GP adversarial terms with a two-column critic.

#include "edgelbam/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace edgelbam {

struct LossWeights {
    double l1 = 1.0;
    double adv = 0.1;
    double perc = 0.05;
    double style = 120.0;
};

/// Maps an image batch to a list of feature maps (coarsening levels).
using FeatureFn = std::function<std::vector<Tensor>(const Tensor& x)>;

struct FeaturePyramidOptions {
    /// Widths of the three blocks; 64/128/256 reproduces the 16-layer
    /// classification backbone, the default is the reduced desk profile.
    std::vector<int64_t> widths{16, 32, 64};
    uint64_t seed = 1234;
    /// Subtract the usual ImageNet mean / divide by std before the first
    /// block (enable together with pretrained weights).
    bool imagenet_normalize = false;
};

/// Fixed three-block convolutional pyramid returning the outputs of pool-1,
/// pool-2 and pool-3. Weights are frozen: gradients reach the input only.
class FeaturePyramidImpl : public torch::nn::Module {
public:
    explicit FeaturePyramidImpl(FeaturePyramidOptions options = {});

    std::vector<Tensor> forward(const Tensor& x);
    /// Loads weights saved with torch::save from a module with the same
    /// parameter names (block{1,2,3}.conv{1,2,3}.{weight,bias}).
    void load_weights(const std::string& path);
    void freeze();

    [[nodiscard]] const FeaturePyramidOptions& options() const { return options_; }

private:
    FeaturePyramidOptions options_;
    std::vector<torch::nn::Sequential> blocks_;
};
TORCH_MODULE(FeaturePyramid);

FeatureFn as_feature_fn(FeaturePyramid pyramid);

/// Mean absolute difference.
Tensor l1_loss(const Tensor& pred, const Tensor& gt);

/// (1/N) sum_i mean((P_i(gt) - P_i(pred))^2).
Tensor perceptual_loss(const Tensor& pred, const Tensor& gt, const FeatureFn& extractor);

/// Gram matrix of [N, C, H, W] features flattened to C x HW: [N, C, C].
Tensor gram_matrix(const Tensor& features);

/// (1/N) sum_i (1/C_i^2) ||G_i(gt) - G_i(pred)||_F^2, averaged over the batch.
/// With `spatial_normalization` each Gram matrix is divided by H_i * W_i first.
Tensor style_loss(const Tensor& pred, const Tensor& gt, const FeatureFn& extractor,
                  bool spatial_normalization = false);

/// Scores an image batch ([N, C, H, W]) with one scalar per sample ([N]).
using CriticFn = std::function<Tensor(const Tensor& image)>;

struct TwoColumnCriticOptions {
    int64_t image_channels = 3;
    int64_t base_channels = 64;
    int64_t image_size = 256;
};

/// Wasserstein critic with one column over the known region (M * x) and one
/// over the hole (1 - M) * x. Each column has six 4x4 stride-2 convolutions
/// with leaky ReLU (3x3 stride 1 once the map is 1x1); the concatenated
/// columns are fused by a 1x1 convolution and averaged to one score.
class TwoColumnCriticImpl : public torch::nn::Module {
public:
    explicit TwoColumnCriticImpl(TwoColumnCriticOptions options = {});
    Tensor forward(const Tensor& image, const Tensor& mask);

private:
    std::vector<torch::nn::Conv2d> known_, hole_;
    torch::nn::Conv2d fuse_{nullptr};
};
TORCH_MODULE(TwoColumnCritic);

/// Binds a mask to the critic so it can be used as a CriticFn.
CriticFn bind_mask(TwoColumnCritic critic, const Tensor& mask);

/// lambda * E[(||grad_x D(x~)|| - 1)^2] with x~ = eps * gt + (1 - eps) * pred,
/// `epsilon` broadcastable as [N, 1, 1, 1].
Tensor gradient_penalty(const CriticFn& critic, const Tensor& pred, const Tensor& gt, const Tensor& epsilon,
                        double lambda = 10.0);

struct AdversarialLosses {
    Tensor gen;          // E[D(gt)] - E[D(pred)], only the pred term carries gradient
    Tensor disc;         // -(E[D(gt)] - E[D(pred)]) + gp, pred detached
    Tensor wasserstein;  // E[D(gt)] - E[D(pred)]
    Tensor gp;
};

/// Generator term only (no penalty evaluation).
Tensor generator_adversarial_loss(const Tensor& pred, const Tensor& gt, const CriticFn& critic);

/// Critic term: -(E[D(gt)] - E[D(pred)]) + gradient penalty. `pred` is detached.
AdversarialLosses critic_losses(const Tensor& pred, const Tensor& gt, const CriticFn& critic,
                                const Tensor& epsilon, double lambda_gp = 10.0);

AdversarialLosses adversarial_losses(const Tensor& pred, const Tensor& gt, const CriticFn& critic,
                                     const Tensor& epsilon, double lambda_gp = 10.0);

struct LossComponents {
    Tensor l1;
    Tensor adv;
    Tensor perc;
    Tensor style;
};

Tensor total_loss(const LossComponents& components, const LossWeights& weights = {});
double total_loss(double l1, double adv, double perc, double style, const LossWeights& weights = {});

}  // namespace edgelbam
