#pragma once

// The 14-layer U-Net inpainting generator with bidirectional attention, and
// the ablation variants that swap its encoder and decoder modules.
//
// Layer numbering: encoder layers 1..7, decoder layers 8..14. Decoder layer
// 14 - l mirrors encoder layer l (l = 1..6) and runs at the same resolution.
// Encoder layers 1..6 and decoder layers 8..13 carry attention modules;
// layer 7 is a plain convolution and layer 14 a plain transposed convolution
// followed by tanh.

#include "edgelbam/attention.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace edgelbam {

enum class Variant {
    BF,              // partial convolution encoder, plain decoder
    BF_BR,           // partial convolution both ways
    LFAM,            // learnable forward attention, plain decoder
    LFAM_BR,         // learnable forward, hard reverse
    LBAM,            // learnable both ways
    LBAM_E,          // LBAM with the edge map concatenated into the outer mask paths
    EdgeLFAM,        // edge-guided forward, plain decoder
    EdgeLFAM_BR,     // edge-guided forward, hard reverse
    EdgeLFAM_LRAM,   // edge-guided forward, learnable reverse
    EdgeLBAM,        // edge-guided both ways
};

enum class EncoderKind { pconv, lfam, lfam_concat_edge, edge_lfam };
enum class DecoderKind { plain, hard_reverse, lram, lram_concat_edge, edge_lram };

struct VariantTraits {
    EncoderKind encoder;
    DecoderKind decoder;
    bool needs_edge;       // an edge map must be supplied
    bool edge_via_concat;  // edges only enter by concatenation with the mask
    bool edge_via_gate;    // edges only enter through the A^E gates
};

VariantTraits variant_traits(Variant variant);
std::string to_string(Variant variant);
Variant parse_variant(const std::string& name);
const std::vector<Variant>& all_variants();

struct UNetConfig {
    int64_t num_layers = 14;
    int64_t kernel = 4;
    int64_t stride = 2;
    int64_t padding = 1;
    /// Output channels of encoder layers 1..7; the decoder mirrors them.
    std::vector<int64_t> channels{64, 128, 256, 512, 512, 512, 512};
    int64_t image_size = 256;
    int64_t image_channels = 3;
    Variant variant = Variant::EdgeLBAM;
    AttentionParams attention{};
    double leaky_slope = 0.2;

    /// 64 x 64 profile with the channel schedule quartered.
    static UNetConfig desk(Variant variant = Variant::EdgeLBAM);
    void validate() const;
};

/// Per-layer geometry of the encoder for a square input of `size`. Layers
/// downsample by 2 (4x4, stride 2, pad 1) while their input is at least 4
/// pixels wide and keep the size (3x3, stride 1, pad 1) after that, so the
/// innermost resolution never drops below 2 x 2.
std::vector<ConvSpec> encoder_schedule(const UNetConfig& config);
/// Spatial size after encoder layer l (index 0 is the input itself).
std::vector<int64_t> resolution_ladder(const UNetConfig& config);

struct InpaintTrace {
    /// Encoder layers 1..6: updated mask M^out, attention A, gate A^E (edge variants).
    std::vector<MaskUpdate> forward;
    /// Reverse chain for decoder layers 13, 12, ..., 8 (pair l = 1..6).
    std::vector<MaskUpdate> reverse;
};

struct InpaintOutput {
    Tensor raw;         // tanh output in [-1, 1]
    Tensor composited;  // M * I + (1 - M) * prediction, in [0, 1]
    std::optional<InpaintTrace> trace;

    /// Raw output mapped to [0, 1].
    [[nodiscard]] Tensor prediction() const { return (raw + 1.0) * 0.5; }
};

/// M * image + (1 - M) * prediction; all in [0, 1].
Tensor composite(const Tensor& prediction, const Tensor& image, const Tensor& mask);

/// Mask maps of a traced pass, each normalised to [0, 1] by its maximum and
/// max-pooled across channels: encoder layers 1..6, then decoder layers 13..8
/// when the variant has a reverse chain. Throws when tracing was off.
std::vector<std::pair<int, Tensor>> collect_mask_maps(const InpaintOutput& output);

struct EncoderLayerImpl : torch::nn::Module {
    EncoderLayerImpl(int64_t index, int64_t in_channels, int64_t out_channels, const ConvSpec& spec,
                     EncoderKind kind, bool emit_edge, const UNetConfig& config);

    int64_t index;
    ConvSpec spec;
    EncoderKind kind;
    torch::nn::Conv2d conv{nullptr};
    MaskPath mask_path{nullptr};  // absent for pconv and the plain layer 7
    torch::nn::BatchNorm2d norm{nullptr};
};
TORCH_MODULE(EncoderLayer);

struct DecoderLayerImpl : torch::nn::Module {
    DecoderLayerImpl(int64_t pair, int64_t in_channels, int64_t out_channels, const ConvSpec& up_spec,
                     const ConvSpec& mask_spec, DecoderKind kind, bool emit_edge, const UNetConfig& config);

    int64_t pair;  // mirrors encoder layer `pair`; this is decoder layer 14 - pair
    ConvSpec up_spec;
    DecoderKind kind;
    torch::nn::Conv2d skip{nullptr};
    torch::nn::ConvTranspose2d deconv{nullptr};
    MaskPath mask_path{nullptr};  // reverse chain module; absent for plain decoders
    torch::nn::BatchNorm2d norm{nullptr};
};
TORCH_MODULE(DecoderLayer);

class InpaintNetImpl : public torch::nn::Module {
public:
    explicit InpaintNetImpl(UNetConfig config);

    /// `image` is [N, 3, H, W] in [0, 1]; `mask` [N, 1, H, W] binary;
    /// `edge` [N, 1, H, W] in [0, 1], required by edge variants and ignored
    /// otherwise.
    InpaintOutput forward(const Tensor& image, const Tensor& mask, const Tensor& edge = {},
                          bool trace = false);

    /// Keeps every attention shape parameter in its valid range.
    void project();

    [[nodiscard]] const UNetConfig& config() const { return config_; }
    [[nodiscard]] const VariantTraits& traits() const { return traits_; }
    [[nodiscard]] const std::vector<ConvSpec>& schedule() const { return schedule_; }

    /// Parameters of all attention modules (mask kernels, gate kernels,
    /// activation shapes).
    std::vector<std::pair<std::string, Tensor>> attention_parameters() const;

    std::vector<EncoderLayer> encoder;  // layers 1..7
    std::vector<DecoderLayer> decoder;  // layers 8..13 (pair 6..1)
    torch::nn::ConvTranspose2d final_layer{nullptr};  // layer 14

private:
    UNetConfig config_;
    VariantTraits traits_;
    std::vector<ConvSpec> schedule_;
};
TORCH_MODULE(InpaintNet);

}  // namespace edgelbam
