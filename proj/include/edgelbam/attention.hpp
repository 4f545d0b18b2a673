#pragma once

// Mask/feature interplay primitives: partial convolution, learnable forward
// and reverse attention maps, and their edge-guided forms.
//
// Conventions: NCHW tensors. Mask maps and edge maps are single-channel
// ([N, 1, H, W]); a mask value of 1 marks a known pixel and 0 a hole. Every
// convolution on the mask and edge paths is bias-free, so the all-zero mask
// is a fixed point of every mask update.

#include "edgelbam/common.hpp"

#include <optional>

namespace edgelbam {

/// Scalars of the asymmetric Gaussian attention activation plus the fixed
/// exponent of the mask-updating activation.
struct AttentionParams {
    double a = 1.1;
    double mu = 2.0;
    double gamma_l = 1.0;
    double gamma_r = 1.0;
    double alpha = 0.8;  // constant, never trained
};

/// Same scalars as 0-dim tensors so gradients can reach them.
struct AttentionTensors {
    Tensor a;
    Tensor mu;
    Tensor gamma_l;
    Tensor gamma_r;
    double alpha = 0.8;

    static AttentionTensors constant(const AttentionParams& p,
                                     torch::TensorOptions options = torch::kFloat64,
                                     bool requires_grad = false);
};

enum class Activation { learnable, hard };

// ---- activations -----------------------------------------------------------

/// 1/mc where mc > 0, else 0. Not differentiable; oracle and ablation use.
Tensor hard_attention(const Tensor& mc);
/// 1 where mc > 0, else 0.
Tensor hard_mask_update(const Tensor& mc);
/// ReLU(mc)^alpha. The derivative at mc <= 0 is defined as 0. With alpha == 0
/// this is exactly hard_mask_update.
Tensor mask_update(const Tensor& mc, double alpha);
/// Asymmetric Gaussian: a*exp(-gl*(mc-mu)^2) below mu,
/// 1 + (a-1)*exp(-gr*(mc-mu)^2) at and above mu.
Tensor attention_map(const Tensor& mc, const AttentionTensors& params);

double attention_value(double mc, const AttentionParams& params);
double mask_update_value(double mc, double alpha);

// ---- mask convolution ------------------------------------------------------

/// k x k single-channel kernel with every element 1/k^2 (k = 3 gives k_{1/9}).
Tensor uniform_mask_kernel(int64_t size, torch::TensorOptions options = torch::kFloat32);

/// Zero-padded convolution of a mask map. Rejects geometries whose output
/// size would not be integral.
Tensor convolve_mask(const Tensor& mask, const Tensor& kernel, int64_t stride, int64_t padding);

// ---- layer state -----------------------------------------------------------

struct LayerState {
    Tensor feature;
    Tensor mask;
    Tensor edge;
};

/// Kernels of an edge-guided mask path.
///   mask      k_m  [1, 1, k, k]   applied with the layer geometry
///   guide_in  k_1  [h, 2, k, k]   on concat(mask, edge), layer geometry
///   guide_out k_2  [1, h, k2, k2] stride 1, same padding
///   gate_bias      0-dim, added before the sigmoid of the gate
///   edge      k_e  [1, 1, k, k]   layer geometry; may be undefined when the
///                                 edge output is not consumed
struct EdgeGuidanceKernels {
    Tensor mask;
    Tensor guide_in;
    Tensor guide_out;
    Tensor gate_bias;
    Tensor edge;
};

/// Everything the mask path of one module produces.
struct MaskUpdate {
    Tensor conv_mask;     // M^c
    Tensor mask;          // M^out
    Tensor attention;     // A = g_A(M^c) (or f_A for hard activations)
    Tensor intermediate;  // M^int (edge-guided only)
    Tensor gate;          // A^E   (edge-guided only)
    Tensor edge;          // E^out (edge-guided only, when k_e is given)
};

/// M^c = M (x) kernel, then attention and mask update.
MaskUpdate update_mask(const Tensor& mask, const Tensor& kernel, const AttentionTensors& params,
                       const ConvSpec& spec, Activation activation);

/// A^E = sigmoid(k_2 (x) (k_1 (x) concat(M, E)) + bias).
Tensor edge_gate(const Tensor& mask, const Tensor& edge, const EdgeGuidanceKernels& kernels,
                 const ConvSpec& spec);

/// M^int = M (x) k_m, M^c = M^int * A^E, E^out = E (x) k_e.
MaskUpdate update_mask_edge_guided(const Tensor& mask, const Tensor& edge,
                                   const EdgeGuidanceKernels& kernels,
                                   const AttentionTensors& params, const ConvSpec& spec,
                                   Activation activation);

// ---- forward (encoder-side) layers ----------------------------------------

struct ForwardLayerOutput {
    Tensor feature;       // F^out
    Tensor conv_feature;  // F^c
    MaskUpdate mask;
};

/// Partial convolution with zero bias: F^c = W^T (F * M), F^out = F^c * f_A(M^c),
/// M^out = f_M(M^c), with M^c taken against the uniform kernel that matches W.
ForwardLayerOutput pconv_layer(const Tensor& feature, const Tensor& mask, const Tensor& weight,
                               const ConvSpec& spec);

/// Learnable forward attention: F^out = (W^T F) * g_A(M (x) k_m), M^out = g_M(M (x) k_m).
ForwardLayerOutput lfam_layer(const Tensor& feature, const Tensor& mask, const Tensor& weight,
                              const Tensor& mask_kernel, const AttentionTensors& params,
                              const ConvSpec& spec, Activation activation = Activation::learnable);

ForwardLayerOutput edge_lfam_layer(const LayerState& state, const Tensor& weight,
                                   const EdgeGuidanceKernels& kernels,
                                   const AttentionTensors& params, const ConvSpec& spec,
                                   Activation activation = Activation::learnable);

// ---- reverse (decoder-side) layers ----------------------------------------

struct ReverseLayerOutput {
    Tensor feature;       // F^out_d
    Tensor enc_conv;      // F^c_e
    Tensor dec_conv;      // F^c_d
    MaskUpdate mask;      // reverse mask path; its mask/edge feed the preceding decoder layer
};

/// F^out_d = F^c_e * A_e + F^c_d * A_d.
Tensor reverse_renormalize(const Tensor& enc_conv, const Tensor& enc_attention,
                           const Tensor& dec_conv, const Tensor& dec_attention);

/// Skip-path convolution (stride 1, same padding) and decoder-path transposed
/// convolution with the layer geometry.
Tensor skip_convolution(const Tensor& enc_feature, const Tensor& weight_e);
Tensor decoder_convolution(const Tensor& dec_feature, const Tensor& weight_d, const ConvSpec& spec);

/// `rev_mask` sits at the layer's input-side (higher) resolution; the reverse
/// mask convolution brings it down to the resolution of F^out_d.
ReverseLayerOutput lram_layer(const Tensor& enc_feature, const Tensor& dec_feature,
                              const Tensor& rev_mask, const Tensor& enc_attention,
                              const Tensor& weight_e, const Tensor& weight_d,
                              const Tensor& rev_kernel, const AttentionTensors& params,
                              const ConvSpec& spec, Activation activation = Activation::learnable);

ReverseLayerOutput edge_lram_layer(const Tensor& enc_feature, const Tensor& dec_feature,
                                   const Tensor& rev_mask, const Tensor& edge,
                                   const Tensor& enc_attention, const Tensor& weight_e,
                                   const Tensor& weight_d, const EdgeGuidanceKernels& kernels,
                                   const AttentionTensors& params, const ConvSpec& spec,
                                   Activation activation = Activation::learnable);

// ---- modules ---------------------------------------------------------------

/// Learnable a, mu, gamma_l, gamma_r of one layer.
class AsymmetricGaussianImpl : public torch::nn::Module {
public:
    explicit AsymmetricGaussianImpl(const AttentionParams& init = {});

    [[nodiscard]] AttentionTensors tensors() const;
    Tensor forward(const Tensor& mc) const { return attention_map(mc, tensors()); }
    /// Keeps gamma_l, gamma_r >= 0; called after every optimizer step.
    void project();

    Tensor a, mu, gamma_l, gamma_r;

private:
    double alpha_;
};
TORCH_MODULE(AsymmetricGaussian);

enum class MaskPathKind {
    uniform_hard,           // PConv: fixed uniform kernel, f_A / f_M
    learnable,              // LFAM / LRAM
    learnable_concat_edge,  // LBAM(E): kernel over concat(mask, edge)
    edge_guided,            // Edge-LFAM / Edge-LRAM
};

struct MaskPathOptions {
    MaskPathKind kind = MaskPathKind::learnable;
    ConvSpec spec = ConvSpec::down();
    AttentionParams init{};
    int64_t guide_hidden = 1;
    int64_t guide_kernel = 3;
    double gate_bias_init = 4.0;
    bool emit_edge = true;  // build k_e only when the edge output is consumed downstream
};

/// The mask path of one attention module; shared by encoder layers and by the
/// decoder's reverse mask chain.
class MaskPathImpl : public torch::nn::Module {
public:
    explicit MaskPathImpl(const MaskPathOptions& options);

    MaskUpdate forward(const Tensor& mask, const Tensor& edge = {});
    [[nodiscard]] const MaskPathOptions& options() const { return options_; }
    [[nodiscard]] bool uses_edge() const;
    [[nodiscard]] AttentionTensors attention_tensors() const;
    [[nodiscard]] EdgeGuidanceKernels edge_kernels() const;
    void project();

    Tensor kernel;  // k_m (or the 2-channel kernel of the concat variant)
    Tensor guide_in, guide_out, gate_bias, edge_kernel;
    AsymmetricGaussian activation{nullptr};

private:
    MaskPathOptions options_;
};
TORCH_MODULE(MaskPath);

}  // namespace edgelbam
