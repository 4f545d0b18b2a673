#include "edgelbam/losses.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

namespace edgelbam {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

FeaturePyramidImpl::FeaturePyramidImpl(FeaturePyramidOptions options) : options_(std::move(options)) {
    require(options_.widths.size() == 3, "FeaturePyramid: expected three block widths");
    const std::vector<int> convs_per_block{2, 2, 3};
    int64_t in = 3;
    for (size_t b = 0; b < 3; ++b) {
        nn::Sequential block;
        for (int c = 0; c < convs_per_block[b]; ++c) {
            block->push_back("conv" + std::to_string(c + 1),
                             nn::Conv2d(nn::Conv2dOptions(in, options_.widths[b], 3).padding(1)));
            block->push_back("relu" + std::to_string(c + 1), nn::ReLU());
            in = options_.widths[b];
        }
        block->push_back("pool", nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2)));
        blocks_.push_back(register_module("block" + std::to_string(b + 1), block));
    }
    // He-normal weights from a private generator so construction never
    // touches the global random state.
    auto gen = at::detail::createCPUGenerator(options_.seed);
    torch::NoGradGuard guard;
    for (auto& item : named_parameters(true)) {
        auto& p = item.value();
        if (p.dim() == 4) {
            const double fan_in = static_cast<double>(p.size(1) * p.size(2) * p.size(3));
            p.copy_(at::randn(p.sizes(), gen, p.options()) * std::sqrt(2.0 / fan_in));
        } else {
            p.zero_();
        }
    }
    freeze();
}

void FeaturePyramidImpl::freeze() {
    for (auto& p : parameters()) p.set_requires_grad(false);
    eval();
}

void FeaturePyramidImpl::load_weights(const std::string& path) {
    torch::serialize::InputArchive archive;
    archive.load_from(path);
    torch::NoGradGuard guard;
    for (auto& item : named_parameters(true)) {
        Tensor loaded;
        require(archive.try_read(item.key(), loaded), "FeaturePyramid: '" + path + "' has no tensor " + item.key());
        require(loaded.sizes() == item.value().sizes(), "FeaturePyramid: shape mismatch for " + item.key());
        item.value().copy_(loaded);
    }
    freeze();
}

std::vector<Tensor> FeaturePyramidImpl::forward(const Tensor& x) {
    require(x.dim() == 4 && x.size(1) == 3, "FeaturePyramid: expected [N, 3, H, W], got " + shape_string(x));
    Tensor h = x;
    if (options_.imagenet_normalize) {
        const auto mean = torch::tensor({0.485, 0.456, 0.406}, x.options()).view({1, 3, 1, 1});
        const auto std = torch::tensor({0.229, 0.224, 0.225}, x.options()).view({1, 3, 1, 1});
        h = (h - mean) / std;
    }
    std::vector<Tensor> levels;
    for (auto& block : blocks_) {
        h = block->forward(h);
        levels.push_back(h);
    }
    return levels;
}

FeatureFn as_feature_fn(FeaturePyramid pyramid) {
    return [pyramid](const Tensor& x) mutable { return pyramid->forward(x); };
}

Tensor l1_loss(const Tensor& pred, const Tensor& gt) {
    require(pred.sizes() == gt.sizes(), "l1_loss: shape mismatch " + shape_string(pred) + " vs " + shape_string(gt));
    return (pred - gt).abs().mean();
}

namespace {

std::pair<std::vector<Tensor>, std::vector<Tensor>> paired_features(const Tensor& pred, const Tensor& gt,
                                                                   const FeatureFn& extractor) {
    require(pred.sizes() == gt.sizes(), "feature loss: shape mismatch " + shape_string(pred) + " vs " +
                                            shape_string(gt));
    auto fp = extractor(pred);
    auto fg = extractor(gt);
    require(!fp.empty() && fp.size() == fg.size(), "feature loss: extractor returned no levels");
    return {std::move(fp), std::move(fg)};
}

}  // namespace

Tensor perceptual_loss(const Tensor& pred, const Tensor& gt, const FeatureFn& extractor) {
    const auto [fp, fg] = paired_features(pred, gt, extractor);
    Tensor sum = torch::zeros({}, pred.options());
    for (size_t i = 0; i < fp.size(); ++i) sum = sum + (fg[i] - fp[i]).square().mean();
    return sum / static_cast<double>(fp.size());
}

Tensor gram_matrix(const Tensor& features) {
    require(features.dim() == 4, "gram_matrix: expected [N, C, H, W]");
    const auto flat = features.flatten(2);
    return torch::bmm(flat, flat.transpose(1, 2));
}

Tensor style_loss(const Tensor& pred, const Tensor& gt, const FeatureFn& extractor, bool spatial_normalization) {
    const auto [fp, fg] = paired_features(pred, gt, extractor);
    Tensor sum = torch::zeros({}, pred.options());
    for (size_t i = 0; i < fp.size(); ++i) {
        const auto c = static_cast<double>(fp[i].size(1));
        auto diff = gram_matrix(fg[i]) - gram_matrix(fp[i]);
        if (spatial_normalization) diff = diff / static_cast<double>(fp[i].size(2) * fp[i].size(3));
        sum = sum + diff.square().sum({1, 2}).mean() / (c * c);
    }
    return sum / static_cast<double>(fp.size());
}

TwoColumnCriticImpl::TwoColumnCriticImpl(TwoColumnCriticOptions options) {
    const int64_t b = options.base_channels;
    const std::vector<int64_t> widths{b, 2 * b, 4 * b, 8 * b, 8 * b, 8 * b};
    auto build = [&](const std::string& name, std::vector<nn::Conv2d>& column) {
        int64_t in = options.image_channels;
        int64_t size = options.image_size;
        for (size_t i = 0; i < widths.size(); ++i) {
            auto opts = size >= 2 ? nn::Conv2dOptions(in, widths[i], 4).stride(2).padding(1)
                                  : nn::Conv2dOptions(in, widths[i], 3).stride(1).padding(1);
            column.push_back(register_module(name + std::to_string(i + 1), nn::Conv2d(opts)));
            if (size >= 2) size /= 2;
            in = widths[i];
        }
    };
    build("known", known_);
    build("hole", hole_);
    fuse_ = register_module("fuse", nn::Conv2d(nn::Conv2dOptions(2 * widths.back(), 1, 1)));
}

Tensor TwoColumnCriticImpl::forward(const Tensor& image, const Tensor& mask) {
    auto run = [](std::vector<nn::Conv2d>& column, Tensor h) {
        for (auto& conv : column) h = F::leaky_relu(conv(h), F::LeakyReLUFuncOptions().negative_slope(0.2));
        return h;
    };
    const auto a = run(known_, image * mask);
    const auto b = run(hole_, image * (1.0 - mask));
    return fuse_(torch::cat({a, b}, 1)).mean({1, 2, 3});
}

CriticFn bind_mask(TwoColumnCritic critic, const Tensor& mask) {
    return [critic, mask](const Tensor& image) mutable { return critic->forward(image, mask); };
}

Tensor gradient_penalty(const CriticFn& critic, const Tensor& pred, const Tensor& gt, const Tensor& epsilon,
                        double lambda) {
    require(pred.sizes() == gt.sizes(), "gradient_penalty: shape mismatch");
    auto mixed = (epsilon * gt.detach() + (1.0 - epsilon) * pred.detach()).requires_grad_(true);
    const auto scores = critic(mixed);
    const auto grads = torch::autograd::grad({scores.sum()}, {mixed}, {}, /*retain_graph=*/true,
                                             /*create_graph=*/true)[0];
    const auto norms = grads.flatten(1).norm(2, 1);
    return lambda * (norms - 1.0).square().mean();
}

Tensor generator_adversarial_loss(const Tensor& pred, const Tensor& gt, const CriticFn& critic) {
    Tensor real;
    {
        torch::NoGradGuard guard;
        real = critic(gt).mean();
    }
    return real - critic(pred).mean();
}

AdversarialLosses critic_losses(const Tensor& pred, const Tensor& gt, const CriticFn& critic,
                                const Tensor& epsilon, double lambda_gp) {
    AdversarialLosses out;
    const auto fake = pred.detach();
    out.wasserstein = critic(gt).mean() - critic(fake).mean();
    out.gp = gradient_penalty(critic, fake, gt, epsilon, lambda_gp);
    out.disc = -out.wasserstein + out.gp;
    out.gen = out.wasserstein.detach();
    return out;
}

AdversarialLosses adversarial_losses(const Tensor& pred, const Tensor& gt, const CriticFn& critic,
                                     const Tensor& epsilon, double lambda_gp) {
    auto out = critic_losses(pred, gt, critic, epsilon, lambda_gp);
    out.gen = generator_adversarial_loss(pred, gt, critic);
    return out;
}

Tensor total_loss(const LossComponents& c, const LossWeights& w) {
    return w.l1 * c.l1 + w.adv * c.adv + w.perc * c.perc + w.style * c.style;
}

double total_loss(double l1, double adv, double perc, double style, const LossWeights& w) {
    return w.l1 * l1 + w.adv * adv + w.perc * perc + w.style * style;
}

}  // namespace edgelbam
