#include "edgelbam/mecnet.hpp"

#include <algorithm>

namespace edgelbam {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

std::string to_string(MECVariant variant) {
    switch (variant) {
        case MECVariant::full: return "full";
        case MECVariant::single_scale: return "single_scale";
        case MECVariant::multi_loss: return "multi_loss";
    }
    throw std::logic_error("unknown MECNet variant");
}

MECVariant parse_mec_variant(const std::string& name) {
    if (name == "full") return MECVariant::full;
    if (name == "single_scale" || name == "S") return MECVariant::single_scale;
    if (name == "multi_loss" || name == "ML") return MECVariant::multi_loss;
    throw std::invalid_argument("unknown MECNet variant '" + name + "' (full, single_scale, multi_loss)");
}

MECNetConfig MECNetConfig::desk(MECVariant variant) {
    MECNetConfig c;
    c.scales = {2, 4, 8, 16};
    c.base_channels = 16;
    c.image_size = 64;
    c.variant = variant;
    return c;
}

void MECNetConfig::validate() const {
    require(!scales.empty(), "MECNetConfig: at least one scale");
    require(blocks_per_branch > 0 && base_channels >= 2, "MECNetConfig: invalid widths");
    for (size_t i = 0; i < scales.size(); ++i) {
        require(scales[i] > 0 && image_size % scales[i] == 0,
                "MECNetConfig: scale " + std::to_string(scales[i]) + " does not divide the input resolution " +
                    std::to_string(image_size));
        if (i > 0)
            require(scales[i] == 2 * scales[i - 1], "MECNetConfig: consecutive scales must differ by a factor of 2");
    }
    require(scales.back() * 4 == image_size,
            "MECNetConfig: the highest scale must be a quarter of the input resolution");
}

std::vector<int64_t> MECNetConfig::active_scales() const {
    if (variant == MECVariant::single_scale) return {scales.back()};
    return scales;
}

namespace {

nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1, bool bias = false) {
    return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2).bias(bias));
}

nn::ConvTranspose2d upconv(int64_t in, int64_t out, bool bias = false) {
    return nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1).bias(bias));
}

Tensor norm_relu(const Tensor& x) {
    return torch::relu(F::instance_norm(x, F::InstanceNormFuncOptions().eps(1e-5)));
}

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int64_t channels) {
    conv1 = register_module("conv1", conv(channels, channels, 3));
    conv2 = register_module("conv2", conv(channels, channels, 3));
}

Tensor ResidualBlockImpl::forward(const Tensor& x) {
    auto h = norm_relu(conv1(x));
    h = F::instance_norm(conv2(h), F::InstanceNormFuncOptions().eps(1e-5));
    return x + h;
}

MECNetImpl::MECNetImpl(MECNetConfig config) : config_(std::move(config)) {
    config_.validate();
    scales_ = config_.active_scales();
    const int64_t base = config_.base_channels;
    const int64_t wide = 2 * base;
    stem1 = register_module("stem1", conv(5, base, 7));
    stem2 = register_module("stem2", conv(base, base, 3));
    for (size_t i = 0; i < scales_.size(); ++i) {
        const std::string s = std::to_string(scales_[i]);
        const int64_t in = i == 0 ? base : base + wide;
        branch_in_.push_back(register_module("branch" + s + "_in", conv(in, wide, 3)));
        nn::Sequential blocks;
        for (int64_t b = 0; b < config_.blocks_per_branch; ++b) blocks->push_back(ResidualBlock(wide));
        branch_blocks_.push_back(register_module("branch" + s + "_blocks", blocks));
        if (i + 1 < scales_.size()) branch_up_.push_back(register_module("branch" + s + "_up", upconv(wide, wide)));
        if (config_.variant == MECVariant::multi_loss)
            side_heads_.push_back(register_module("branch" + s + "_head", conv(wide, 1, 1, 1, true)));
    }
    up1 = register_module("up1", upconv(wide, base));
    up2 = register_module("up2", upconv(base, base / 2));
    out = register_module("out", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(base / 2, 1, 3).padding(1)));
}

EdgePrediction MECNetImpl::forward(const Tensor& image, const Tensor& mask, const Tensor& edges) {
    const int64_t size = config_.image_size;
    require(image.dim() == 4 && image.size(1) == 3, "MECNet: image must be [N, 3, H, W], got " + shape_string(image));
    require(image.size(2) == size && image.size(3) == size,
            "MECNet: input resolution " + std::to_string(image.size(2)) + "x" + std::to_string(image.size(3)) +
                " does not match the configured scales (expected " + std::to_string(size) + ")");
    require(mask.dim() == 4 && mask.size(1) == 1 && same_spatial(mask, image), "MECNet: mask must be [N, 1, H, W]");
    require(edges.dim() == 4 && edges.size(1) == 1 && same_spatial(edges, image), "MECNet: edges must be [N, 1, H, W]");

    const auto x = torch::cat({image * mask, mask, edges}, 1);
    const auto stem = norm_relu(stem2(norm_relu(stem1(x))));

    EdgePrediction result;
    Tensor carried;
    for (size_t i = 0; i < scales_.size(); ++i) {
        const int64_t factor = size / scales_[i];
        auto pooled = factor > 1 ? F::avg_pool2d(stem, F::AvgPool2dFuncOptions(factor).stride(factor)) : stem;
        auto in = carried.defined() ? torch::cat({pooled, carried}, 1) : pooled;
        auto branch = branch_blocks_[i]->forward(norm_relu(branch_in_[i](in)));
        if (!side_heads_.empty()) {
            auto side = torch::sigmoid(side_heads_[i](branch));
            result.side_outputs.push_back(
                F::interpolate(side, F::InterpolateFuncOptions()
                                         .size(std::vector<int64_t>{size, size})
                                         .mode(torch::kBilinear)
                                         .align_corners(false)));
        }
        if (i + 1 < scales_.size()) carried = norm_relu(branch_up_[i](branch));
        else carried = branch;
    }
    auto h = norm_relu(up1(carried));
    h = norm_relu(up2(h));
    result.edge_hat = torch::sigmoid(out(h));
    return result;
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(PatchDiscriminatorOptions options) {
    const int64_t b = options.base_channels;
    const std::vector<std::pair<int64_t, int64_t>> widths{
        {options.in_channels, b}, {b, 2 * b}, {2 * b, 4 * b}, {4 * b, 8 * b}, {8 * b, 1}};
    const auto geo = geometry();
    for (size_t i = 0; i < widths.size(); ++i) {
        const bool normed = i >= 1 && i <= 3;
        convs_.push_back(register_module(
            "conv" + std::to_string(i + 1),
            nn::Conv2d(nn::Conv2dOptions(widths[i].first, widths[i].second, geo[i].first)
                           .stride(geo[i].second)
                           .padding(1)
                           .bias(!normed))));
    }
}

std::vector<std::pair<int64_t, int64_t>> PatchDiscriminatorImpl::geometry() const {
    return {{4, 2}, {4, 2}, {4, 2}, {4, 1}, {4, 1}};
}

std::vector<Tensor> PatchDiscriminatorImpl::forward(const Tensor& edge, const Tensor& image) {
    require(same_spatial(edge, image), "PatchDiscriminator: edge/image resolution mismatch");
    std::vector<Tensor> features;
    Tensor h = torch::cat({edge, image}, 1);
    for (size_t i = 0; i < convs_.size(); ++i) {
        h = convs_[i](h);
        if (i + 1 < convs_.size()) {
            if (i >= 1) h = F::instance_norm(h, F::InstanceNormFuncOptions().eps(1e-5));
            h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2));
        }
        features.push_back(h);
    }
    return features;
}

int64_t receptive_field(const std::vector<std::pair<int64_t, int64_t>>& layers) {
    // Walk back from one output unit: r <- (r - 1) * stride + kernel.
    int64_t r = 1;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) r = (r - 1) * it->second + it->first;
    return r;
}

Tensor mec_total(const Tensor& adv, const Tensor& rec, double alpha_r) { return adv + alpha_r * rec; }

MECLosses mecnet_losses(const Tensor& edge_hat, const Tensor& edge_gt, const Tensor& image,
                        const EdgeDiscriminatorFn& discriminator, double alpha_r) {
    require(edge_hat.sizes() == edge_gt.sizes(), "mecnet_losses: edge_hat/edge_gt shape mismatch");
    const auto fake = discriminator(edge_hat, image);
    std::vector<Tensor> real;
    {
        torch::NoGradGuard guard;
        real = discriminator(edge_gt, image);
    }
    require(fake.size() == 5 && real.size() == 5, "mecnet_losses: discriminator must expose 5 layers");
    MECLosses out;
    const auto& logits = fake.back();
    out.adv = F::binary_cross_entropy_with_logits(logits, torch::ones_like(logits));
    out.rec = torch::zeros({}, edge_hat.options());
    for (size_t l = 0; l < fake.size(); ++l) out.rec = out.rec + (fake[l] - real[l]).abs().mean();
    out.total = mec_total(out.adv, out.rec, alpha_r);
    return out;
}

Tensor mecnet_discriminator_loss(const Tensor& edge_hat, const Tensor& edge_gt, const Tensor& image,
                                 const EdgeDiscriminatorFn& discriminator) {
    const auto real = discriminator(edge_gt, image).back();
    const auto fake = discriminator(edge_hat.detach(), image).back();
    return 0.5 * (F::binary_cross_entropy_with_logits(real, torch::ones_like(real)) +
                  F::binary_cross_entropy_with_logits(fake, torch::zeros_like(fake)));
}

}  // namespace edgelbam
