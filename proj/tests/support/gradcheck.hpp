#pragma once

// Central finite differences against autograd, in float64.

#include <torch/torch.h>

#include <functional>
#include <string>
#include <vector>

namespace edgelbam::testing {

struct GradCheckResult {
    double worst_relative_error = 0.0;
    std::string worst_input;
};

/// `fn` maps the inputs to a tensor; it is reduced to a scalar with fixed
/// random weights so every output element contributes. Inputs must be float64
/// leaves; their requires_grad flag is set here.
inline GradCheckResult gradcheck(const std::function<torch::Tensor(const std::vector<torch::Tensor>&)>& fn,
                                 std::vector<torch::Tensor> inputs, const std::vector<std::string>& names = {},
                                 double h = 1e-6, uint64_t projection_seed = 99) {
    for (auto& x : inputs) x = x.detach().clone().to(torch::kFloat64).set_requires_grad(true);
    auto first = fn(inputs);
    auto gen = at::detail::createCPUGenerator(projection_seed);
    const auto weights = torch::randn(first.sizes(), gen, torch::kFloat64);
    auto scalar = [&](const std::vector<torch::Tensor>& xs) { return (fn(xs) * weights).sum(); };

    const auto analytic = torch::autograd::grad({scalar(inputs)}, inputs, {}, false, false, true);
    GradCheckResult result;
    for (size_t i = 0; i < inputs.size(); ++i) {
        torch::NoGradGuard guard;
        auto flat = inputs[i].view(-1);
        auto numeric = torch::zeros_like(flat);
        for (int64_t j = 0; j < flat.numel(); ++j) {
            const double keep = flat[j].item<double>();
            flat[j] = keep + h;
            const double up = scalar(inputs).item<double>();
            flat[j] = keep - h;
            const double down = scalar(inputs).item<double>();
            flat[j] = keep;
            numeric[j] = (up - down) / (2.0 * h);
        }
        const auto a = analytic[i].defined() ? analytic[i].reshape(-1) : torch::zeros_like(numeric);
        const double scale = std::max(numeric.norm().item<double>(), a.norm().item<double>());
        const double err = scale < 1e-12 ? 0.0 : (a - numeric).norm().item<double>() / scale;
        if (err >= result.worst_relative_error) {
            result.worst_relative_error = err;
            result.worst_input = i < names.size() ? names[i] : "input " + std::to_string(i);
        }
    }
    return result;
}

}  // namespace edgelbam::testing
