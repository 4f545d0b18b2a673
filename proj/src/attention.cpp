#include "edgelbam/attention.hpp"

#include <cmath>

namespace edgelbam {

namespace F = torch::nn::functional;

AttentionTensors AttentionTensors::constant(const AttentionParams& p, torch::TensorOptions options,
                                            bool requires_grad) {
    auto make = [&](double v) { return torch::tensor(v, options).requires_grad_(requires_grad); };
    return {make(p.a), make(p.mu), make(p.gamma_l), make(p.gamma_r), p.alpha};
}

// ---- activations -----------------------------------------------------------

Tensor hard_attention(const Tensor& mc) {
    const auto valid = mc > 0;
    const auto safe = torch::where(valid, mc, torch::ones_like(mc));
    return torch::where(valid, 1.0 / safe, torch::zeros_like(mc));
}

Tensor hard_mask_update(const Tensor& mc) { return (mc > 0).to(mc.scalar_type()); }

namespace {

class MaskUpdateFunction : public torch::autograd::Function<MaskUpdateFunction> {
public:
    static Tensor forward(torch::autograd::AutogradContext* ctx, const Tensor& mc, double alpha) {
        ctx->saved_data["alpha"] = alpha;
        ctx->save_for_backward({mc});
        const auto positive = mc > 0;
        const auto safe = torch::where(positive, mc, torch::ones_like(mc));
        return torch::where(positive, safe.pow(alpha), torch::zeros_like(mc));
    }

    static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx,
                                                   torch::autograd::variable_list grads) {
        const double alpha = ctx->saved_data["alpha"].toDouble();
        const auto mc = ctx->get_saved_variables()[0];
        const auto positive = mc > 0;
        const auto safe = torch::where(positive, mc, torch::ones_like(mc));
        const auto slope = torch::where(positive, alpha * safe.pow(alpha - 1.0), torch::zeros_like(mc));
        return {grads[0] * slope, Tensor()};
    }
};

}  // namespace

Tensor mask_update(const Tensor& mc, double alpha) {
    require(alpha >= 0.0, "mask_update: alpha must be >= 0");
    return MaskUpdateFunction::apply(mc, alpha);
}

Tensor attention_map(const Tensor& mc, const AttentionTensors& p) {
    const auto d2 = (mc - p.mu).square();
    const auto left = p.a * torch::exp(-p.gamma_l * d2);
    // a + (a - 1) expm1(.) equals 1 + (a - 1) exp(.) and meets the left branch exactly at mu
    const auto right = p.a + (p.a - 1.0) * torch::expm1(-p.gamma_r * d2);
    return torch::where(mc < p.mu, left, right);
}

double attention_value(double mc, const AttentionParams& p) {
    const double d2 = (mc - p.mu) * (mc - p.mu);
    if (mc < p.mu) return p.a * std::exp(-p.gamma_l * d2);
    return p.a + (p.a - 1.0) * std::expm1(-p.gamma_r * d2);
}

double mask_update_value(double mc, double alpha) { return mc > 0.0 ? std::pow(mc, alpha) : 0.0; }

// ---- mask convolution ------------------------------------------------------

Tensor uniform_mask_kernel(int64_t size, torch::TensorOptions options) {
    require(size > 0, "uniform_mask_kernel: size must be positive");
    return torch::full({1, 1, size, size}, 1.0 / static_cast<double>(size * size), options);
}

Tensor convolve_mask(const Tensor& mask, const Tensor& kernel, int64_t stride, int64_t padding) {
    require(mask.dim() == 4, "convolve_mask: mask must be NCHW, got " + shape_string(mask));
    require(kernel.dim() == 4 && kernel.size(2) == kernel.size(3),
            "convolve_mask: kernel must be square [O, I, k, k], got " + shape_string(kernel));
    require(kernel.size(1) == mask.size(1), "convolve_mask: kernel/mask channel mismatch");
    require(stride > 0 && padding >= 0, "convolve_mask: invalid stride/padding");
    const ConvSpec spec{kernel.size(2), stride, padding};
    require(spec.output_extent(mask.size(2)) > 0 && spec.output_extent(mask.size(3)) > 0,
            "convolve_mask: " + shape_string(mask) + " does not tile with kernel " +
                std::to_string(spec.kernel) + " stride " + std::to_string(stride) + " padding " +
                std::to_string(padding));
    require(torch::isfinite(mask).all().item<bool>(), "convolve_mask: mask values must be finite");
    return F::conv2d(mask, kernel, F::Conv2dFuncOptions().stride(stride).padding(padding));
}

namespace {

void check_kernel_matches(const Tensor& kernel, const ConvSpec& spec, const char* what) {
    require(kernel.dim() == 4 && kernel.size(2) == spec.kernel && kernel.size(3) == spec.kernel,
            std::string(what) + ": kernel " + shape_string(kernel) + " does not match layer geometry k=" +
                std::to_string(spec.kernel));
}

MaskUpdate activate(Tensor conv_mask, const AttentionTensors& params, Activation activation) {
    MaskUpdate out;
    if (activation == Activation::hard) {
        out.attention = hard_attention(conv_mask);
        out.mask = hard_mask_update(conv_mask);
    } else {
        out.attention = attention_map(conv_mask, params);
        out.mask = mask_update(conv_mask, params.alpha);
    }
    out.conv_mask = std::move(conv_mask);
    return out;
}

Tensor feature_convolution(const Tensor& feature, const Tensor& weight, const ConvSpec& spec) {
    require(feature.dim() == 4, "feature must be NCHW, got " + shape_string(feature));
    require(weight.dim() == 4 && weight.size(1) == feature.size(1),
            "channel mismatch: feature " + shape_string(feature) + " vs weights " + shape_string(weight));
    check_kernel_matches(weight, spec, "feature convolution");
    return F::conv2d(feature, weight, F::Conv2dFuncOptions().stride(spec.stride).padding(spec.padding));
}

}  // namespace

MaskUpdate update_mask(const Tensor& mask, const Tensor& kernel, const AttentionTensors& params,
                       const ConvSpec& spec, Activation activation) {
    check_kernel_matches(kernel, spec, "update_mask");
    return activate(convolve_mask(mask, kernel, spec.stride, spec.padding), params, activation);
}

Tensor edge_gate(const Tensor& mask, const Tensor& edge, const EdgeGuidanceKernels& kernels,
                 const ConvSpec& spec) {
    require(same_spatial(mask, edge), "edge_gate: mask " + shape_string(mask) + " and edge " +
                                          shape_string(edge) + " resolutions differ");
    check_kernel_matches(kernels.guide_in, spec, "edge_gate");
    const auto joint = torch::cat({mask, edge}, 1);
    const auto hidden = convolve_mask(joint, kernels.guide_in, spec.stride, spec.padding);
    const int64_t k2 = kernels.guide_out.size(2);
    auto logits = F::conv2d(hidden, kernels.guide_out, F::Conv2dFuncOptions().padding(k2 / 2));
    if (kernels.gate_bias.defined()) logits = logits + kernels.gate_bias;
    return torch::sigmoid(logits);
}

MaskUpdate update_mask_edge_guided(const Tensor& mask, const Tensor& edge,
                                   const EdgeGuidanceKernels& kernels,
                                   const AttentionTensors& params, const ConvSpec& spec,
                                   Activation activation) {
    require(edge.defined(), "edge-guided mask update needs an edge map");
    check_kernel_matches(kernels.mask, spec, "update_mask_edge_guided");
    auto intermediate = convolve_mask(mask, kernels.mask, spec.stride, spec.padding);
    auto gate = edge_gate(mask, edge, kernels, spec);
    auto out = activate(intermediate * gate, params, activation);
    out.intermediate = std::move(intermediate);
    out.gate = std::move(gate);
    if (kernels.edge.defined()) {
        check_kernel_matches(kernels.edge, spec, "edge update");
        out.edge = convolve_mask(edge, kernels.edge, spec.stride, spec.padding);
    }
    return out;
}

// ---- forward layers --------------------------------------------------------

ForwardLayerOutput pconv_layer(const Tensor& feature, const Tensor& mask, const Tensor& weight,
                               const ConvSpec& spec) {
    require(same_spatial(feature, mask), "pconv_layer: feature/mask resolution mismatch");
    ForwardLayerOutput out;
    out.conv_feature = feature_convolution(feature * mask, weight, spec);
    const auto kernel = uniform_mask_kernel(spec.kernel, mask.options());
    out.mask = update_mask(mask, kernel, {}, spec, Activation::hard);
    out.feature = out.conv_feature * out.mask.attention;
    return out;
}

ForwardLayerOutput lfam_layer(const Tensor& feature, const Tensor& mask, const Tensor& weight,
                              const Tensor& mask_kernel, const AttentionTensors& params,
                              const ConvSpec& spec, Activation activation) {
    require(same_spatial(feature, mask), "lfam_layer: feature/mask resolution mismatch");
    ForwardLayerOutput out;
    out.conv_feature = feature_convolution(feature, weight, spec);
    out.mask = update_mask(mask, mask_kernel, params, spec, activation);
    out.feature = out.conv_feature * out.mask.attention;
    return out;
}

ForwardLayerOutput edge_lfam_layer(const LayerState& state, const Tensor& weight,
                                   const EdgeGuidanceKernels& kernels,
                                   const AttentionTensors& params, const ConvSpec& spec,
                                   Activation activation) {
    require(same_spatial(state.feature, state.mask), "edge_lfam_layer: feature/mask resolution mismatch");
    require(state.edge.defined() && same_spatial(state.mask, state.edge),
            "edge_lfam_layer: mask/edge resolution mismatch");
    ForwardLayerOutput out;
    out.conv_feature = feature_convolution(state.feature, weight, spec);
    out.mask = update_mask_edge_guided(state.mask, state.edge, kernels, params, spec, activation);
    out.feature = out.conv_feature * out.mask.attention;
    return out;
}

// ---- reverse layers --------------------------------------------------------

Tensor reverse_renormalize(const Tensor& enc_conv, const Tensor& enc_attention,
                           const Tensor& dec_conv, const Tensor& dec_attention) {
    require(same_spatial(enc_conv, enc_attention),
            "reverse attention: A_e " + shape_string(enc_attention) + " does not match F^c_e " +
                shape_string(enc_conv));
    require(same_spatial(dec_conv, dec_attention),
            "reverse attention: A_d " + shape_string(dec_attention) + " does not match F^c_d " +
                shape_string(dec_conv));
    require(same_spatial(enc_conv, dec_conv) && enc_conv.size(1) == dec_conv.size(1),
            "reverse attention: encoder/decoder branches disagree: " + shape_string(enc_conv) + " vs " +
                shape_string(dec_conv));
    return enc_conv * enc_attention + dec_conv * dec_attention;
}

Tensor skip_convolution(const Tensor& enc_feature, const Tensor& weight_e) {
    require(enc_feature.dim() == 4 && weight_e.dim() == 4 && weight_e.size(1) == enc_feature.size(1),
            "skip convolution: channel mismatch " + shape_string(enc_feature) + " vs " + shape_string(weight_e));
    require(weight_e.size(2) % 2 == 1, "skip convolution: kernel must be odd-sized");
    return F::conv2d(enc_feature, weight_e, F::Conv2dFuncOptions().padding(weight_e.size(2) / 2));
}

Tensor decoder_convolution(const Tensor& dec_feature, const Tensor& weight_d, const ConvSpec& spec) {
    require(dec_feature.dim() == 4 && weight_d.dim() == 4 && weight_d.size(0) == dec_feature.size(1),
            "decoder convolution: channel mismatch " + shape_string(dec_feature) + " vs " +
                shape_string(weight_d));
    check_kernel_matches(weight_d, spec, "decoder convolution");
    return F::conv_transpose2d(dec_feature, weight_d,
                               F::ConvTranspose2dFuncOptions().stride(spec.stride).padding(spec.padding));
}

ReverseLayerOutput lram_layer(const Tensor& enc_feature, const Tensor& dec_feature,
                              const Tensor& rev_mask, const Tensor& enc_attention,
                              const Tensor& weight_e, const Tensor& weight_d,
                              const Tensor& rev_kernel, const AttentionTensors& params,
                              const ConvSpec& spec, Activation activation) {
    ReverseLayerOutput out;
    out.enc_conv = skip_convolution(enc_feature, weight_e);
    out.dec_conv = decoder_convolution(dec_feature, weight_d, spec);
    out.mask = update_mask(rev_mask, rev_kernel, params, spec, activation);
    out.feature = reverse_renormalize(out.enc_conv, enc_attention, out.dec_conv, out.mask.attention);
    return out;
}

ReverseLayerOutput edge_lram_layer(const Tensor& enc_feature, const Tensor& dec_feature,
                                   const Tensor& rev_mask, const Tensor& edge,
                                   const Tensor& enc_attention, const Tensor& weight_e,
                                   const Tensor& weight_d, const EdgeGuidanceKernels& kernels,
                                   const AttentionTensors& params, const ConvSpec& spec,
                                   Activation activation) {
    ReverseLayerOutput out;
    out.enc_conv = skip_convolution(enc_feature, weight_e);
    out.dec_conv = decoder_convolution(dec_feature, weight_d, spec);
    out.mask = update_mask_edge_guided(rev_mask, edge, kernels, params, spec, activation);
    out.feature = reverse_renormalize(out.enc_conv, enc_attention, out.dec_conv, out.mask.attention);
    return out;
}

// ---- modules ---------------------------------------------------------------

AsymmetricGaussianImpl::AsymmetricGaussianImpl(const AttentionParams& init) : alpha_(init.alpha) {
    a = register_parameter("a", torch::tensor(init.a));
    mu = register_parameter("mu", torch::tensor(init.mu));
    gamma_l = register_parameter("gamma_l", torch::tensor(init.gamma_l));
    gamma_r = register_parameter("gamma_r", torch::tensor(init.gamma_r));
}

AttentionTensors AsymmetricGaussianImpl::tensors() const { return {a, mu, gamma_l, gamma_r, alpha_}; }

void AsymmetricGaussianImpl::project() {
    torch::NoGradGuard guard;
    gamma_l.clamp_min_(0.0);
    gamma_r.clamp_min_(0.0);
}

MaskPathImpl::MaskPathImpl(const MaskPathOptions& options) : options_(options) {
    const int64_t k = options.spec.kernel;
    switch (options.kind) {
        case MaskPathKind::uniform_hard:
            kernel = register_buffer("kernel", uniform_mask_kernel(k));
            return;
        case MaskPathKind::learnable:
            kernel = register_parameter("kernel", uniform_mask_kernel(k));
            break;
        case MaskPathKind::learnable_concat_edge:
            kernel = register_parameter(
                "kernel", torch::cat({uniform_mask_kernel(k), torch::zeros({1, 1, k, k})}, 1));
            break;
        case MaskPathKind::edge_guided:
            kernel = register_parameter("kernel", uniform_mask_kernel(k));
            guide_in = register_parameter("guide_in",
                                          torch::randn({options.guide_hidden, 2, k, k}) * 0.01);
            guide_out = register_parameter(
                "guide_out",
                torch::randn({1, options.guide_hidden, options.guide_kernel, options.guide_kernel}) * 0.01);
            gate_bias = register_parameter("gate_bias", torch::tensor(options.gate_bias_init));
            if (options.emit_edge) edge_kernel = register_parameter("edge_kernel", uniform_mask_kernel(k));
            break;
    }
    activation = register_module("activation", AsymmetricGaussian(options.init));
}

bool MaskPathImpl::uses_edge() const {
    return options_.kind == MaskPathKind::learnable_concat_edge || options_.kind == MaskPathKind::edge_guided;
}

AttentionTensors MaskPathImpl::attention_tensors() const {
    if (!activation) return {};
    return activation->tensors();
}

EdgeGuidanceKernels MaskPathImpl::edge_kernels() const {
    return {kernel, guide_in, guide_out, gate_bias, edge_kernel};
}

MaskUpdate MaskPathImpl::forward(const Tensor& mask, const Tensor& edge) {
    const auto& spec = options_.spec;
    switch (options_.kind) {
        case MaskPathKind::uniform_hard:
            return update_mask(mask, kernel, {}, spec, Activation::hard);
        case MaskPathKind::learnable:
            return update_mask(mask, kernel, activation->tensors(), spec, Activation::learnable);
        case MaskPathKind::learnable_concat_edge:
            require(edge.defined() && same_spatial(mask, edge), "concat-edge mask path needs a matching edge map");
            return update_mask(torch::cat({mask, edge}, 1), kernel, activation->tensors(), spec,
                               Activation::learnable);
        case MaskPathKind::edge_guided:
            return update_mask_edge_guided(mask, edge, edge_kernels(), activation->tensors(), spec,
                                           Activation::learnable);
    }
    throw std::logic_error("unreachable mask path kind");
}

void MaskPathImpl::project() {
    if (activation) activation->project();
}

}  // namespace edgelbam
