#include "edgelbam/inpaint_net.hpp"

#include <algorithm>
#include <map>

namespace edgelbam {

namespace F = torch::nn::functional;

VariantTraits variant_traits(Variant variant) {
    switch (variant) {
        case Variant::BF: return {EncoderKind::pconv, DecoderKind::plain, false, false, false};
        case Variant::BF_BR: return {EncoderKind::pconv, DecoderKind::hard_reverse, false, false, false};
        case Variant::LFAM: return {EncoderKind::lfam, DecoderKind::plain, false, false, false};
        case Variant::LFAM_BR: return {EncoderKind::lfam, DecoderKind::hard_reverse, false, false, false};
        case Variant::LBAM: return {EncoderKind::lfam, DecoderKind::lram, false, false, false};
        case Variant::LBAM_E:
            return {EncoderKind::lfam_concat_edge, DecoderKind::lram_concat_edge, true, true, false};
        case Variant::EdgeLFAM: return {EncoderKind::edge_lfam, DecoderKind::plain, true, false, true};
        case Variant::EdgeLFAM_BR: return {EncoderKind::edge_lfam, DecoderKind::hard_reverse, true, false, true};
        case Variant::EdgeLFAM_LRAM: return {EncoderKind::edge_lfam, DecoderKind::lram, true, false, true};
        case Variant::EdgeLBAM: return {EncoderKind::edge_lfam, DecoderKind::edge_lram, true, false, true};
    }
    throw std::logic_error("unknown variant");
}

namespace {

const std::vector<std::pair<Variant, std::string>>& variant_names() {
    static const std::vector<std::pair<Variant, std::string>> names{
        {Variant::BF, "BF"},
        {Variant::BF_BR, "BF+BR"},
        {Variant::LFAM, "LFAM"},
        {Variant::LFAM_BR, "LFAM+BR"},
        {Variant::LBAM, "LBAM"},
        {Variant::LBAM_E, "LBAM(E)"},
        {Variant::EdgeLFAM, "Edge-LFAM"},
        {Variant::EdgeLFAM_BR, "Edge-LFAM+BR"},
        {Variant::EdgeLFAM_LRAM, "Edge-LFAM+LRAM"},
        {Variant::EdgeLBAM, "Edge-LBAM"},
    };
    return names;
}

}  // namespace

std::string to_string(Variant variant) {
    for (const auto& [v, name] : variant_names())
        if (v == variant) return name;
    throw std::logic_error("unknown variant");
}

Variant parse_variant(const std::string& name) {
    for (const auto& [v, n] : variant_names())
        if (n == name) return v;
    std::string known;
    for (const auto& [v, n] : variant_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown variant '" + name + "' (expected one of: " + known + ")");
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> all = [] {
        std::vector<Variant> v;
        for (const auto& entry : variant_names()) v.push_back(entry.first);
        return v;
    }();
    return all;
}

UNetConfig UNetConfig::desk(Variant variant) {
    UNetConfig c;
    c.channels = {16, 32, 64, 128, 128, 128, 128};
    c.image_size = 64;
    c.variant = variant;
    return c;
}

void UNetConfig::validate() const {
    require(num_layers == 14, "UNetConfig: the network has exactly 14 layers");
    require(kernel == 4 && stride == 2 && padding == 1, "UNetConfig: backbone geometry is 4x4, stride 2, padding 1");
    require(static_cast<int64_t>(channels.size()) == num_layers / 2,
            "UNetConfig: channels must list the 7 encoder widths");
    require(std::all_of(channels.begin(), channels.end(), [](int64_t c) { return c > 0; }),
            "UNetConfig: channel widths must be positive");
    require(image_size >= 8 && (image_size & (image_size - 1)) == 0,
            "UNetConfig: image size must be a power of two >= 8, got " + std::to_string(image_size));
    require(image_channels > 0, "UNetConfig: image_channels must be positive");
}

std::vector<ConvSpec> encoder_schedule(const UNetConfig& config) {
    config.validate();
    std::vector<ConvSpec> specs;
    int64_t size = config.image_size;
    for (int64_t l = 1; l <= config.num_layers / 2; ++l) {
        if (size >= 4) {
            specs.push_back({config.kernel, config.stride, config.padding});
            size /= 2;
        } else {
            specs.push_back(ConvSpec::same(3));
        }
    }
    return specs;
}

std::vector<int64_t> resolution_ladder(const UNetConfig& config) {
    std::vector<int64_t> sizes{config.image_size};
    for (const auto& spec : encoder_schedule(config)) sizes.push_back(spec.output_extent(sizes.back()));
    return sizes;
}

Tensor composite(const Tensor& prediction, const Tensor& image, const Tensor& mask) {
    return mask * image + (1.0 - mask) * prediction;
}

std::vector<std::pair<int, Tensor>> collect_mask_maps(const InpaintOutput& output) {
    require(output.trace.has_value(), "collect_mask_maps: the forward pass was run without tracing");
    auto normalise = [](const Tensor& map) {
        auto pooled = std::get<0>(map.detach().max(1, /*keepdim=*/true));
        const double peak = pooled.max().item<double>();
        return peak > 0.0 ? pooled / peak : pooled;
    };
    std::vector<std::pair<int, Tensor>> maps;
    const auto& trace = *output.trace;
    for (size_t i = 0; i < trace.forward.size(); ++i)
        maps.emplace_back(static_cast<int>(i + 1), normalise(trace.forward[i].mask));
    for (size_t i = 0; i < trace.reverse.size(); ++i)
        maps.emplace_back(static_cast<int>(13 - i), normalise(trace.reverse[i].mask));
    return maps;
}

namespace {

MaskPathKind encoder_mask_kind(EncoderKind kind, int64_t index) {
    switch (kind) {
        case EncoderKind::pconv: return MaskPathKind::uniform_hard;
        case EncoderKind::lfam: return MaskPathKind::learnable;
        case EncoderKind::lfam_concat_edge:
            return index == 1 ? MaskPathKind::learnable_concat_edge : MaskPathKind::learnable;
        case EncoderKind::edge_lfam: return MaskPathKind::edge_guided;
    }
    throw std::logic_error("unknown encoder kind");
}

MaskPathKind decoder_mask_kind(DecoderKind kind, int64_t pair) {
    switch (kind) {
        case DecoderKind::plain: break;
        case DecoderKind::hard_reverse: return MaskPathKind::uniform_hard;
        case DecoderKind::lram: return MaskPathKind::learnable;
        case DecoderKind::lram_concat_edge:
            return pair == 1 ? MaskPathKind::learnable_concat_edge : MaskPathKind::learnable;
        case DecoderKind::edge_lram: return MaskPathKind::edge_guided;
    }
    throw std::logic_error("plain decoders have no mask path");
}

Tensor activate(const Tensor& x, torch::nn::BatchNorm2d& norm, double slope) {
    return F::leaky_relu(norm ? norm(x) : x, F::LeakyReLUFuncOptions().negative_slope(slope));
}

}  // namespace

EncoderLayerImpl::EncoderLayerImpl(int64_t index_, int64_t in_channels, int64_t out_channels,
                                   const ConvSpec& spec_, EncoderKind kind_, bool emit_edge,
                                   const UNetConfig& config)
    : index(index_), spec(spec_), kind(kind_) {
    conv = register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, spec.kernel)
                                                         .stride(spec.stride)
                                                         .padding(spec.padding)
                                                         .bias(false)));
    if (index <= 6) {
        MaskPathOptions options;
        options.kind = encoder_mask_kind(kind, index);
        options.spec = spec;
        options.init = config.attention;
        options.emit_edge = emit_edge;
        mask_path = register_module("mask_path", MaskPath(options));
    }
    if (index > 1) norm = register_module("norm", torch::nn::BatchNorm2d(out_channels));
}

DecoderLayerImpl::DecoderLayerImpl(int64_t pair_, int64_t in_channels, int64_t out_channels,
                                   const ConvSpec& up_spec_, const ConvSpec& mask_spec, DecoderKind kind_,
                                   bool emit_edge, const UNetConfig& config)
    : pair(pair_), up_spec(up_spec_), kind(kind_) {
    skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(out_channels, out_channels, 3)
                                                         .padding(1)
                                                         .bias(false)));
    deconv = register_module(
        "deconv", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(in_channels, out_channels, up_spec.kernel)
                                                 .stride(up_spec.stride)
                                                 .padding(up_spec.padding)
                                                 .bias(false)));
    if (kind != DecoderKind::plain) {
        MaskPathOptions options;
        options.kind = decoder_mask_kind(kind, pair);
        options.spec = mask_spec;
        options.init = config.attention;
        options.emit_edge = emit_edge;
        mask_path = register_module("mask_path", MaskPath(options));
    }
    norm = register_module("norm", torch::nn::BatchNorm2d(out_channels));
}

InpaintNetImpl::InpaintNetImpl(UNetConfig config)
    : config_(std::move(config)), traits_(variant_traits(config_.variant)), schedule_(encoder_schedule(config_)) {
    const auto& ch = config_.channels;
    const bool gated_encoder = traits_.encoder == EncoderKind::edge_lfam;
    for (int64_t l = 1; l <= 7; ++l) {
        const int64_t in = l == 1 ? config_.image_channels : ch[static_cast<size_t>(l - 2)];
        auto layer = EncoderLayer(l, in, ch[static_cast<size_t>(l - 1)], schedule_[static_cast<size_t>(l - 1)],
                                  traits_.encoder, gated_encoder && l < 6, config_);
        encoder.push_back(register_module("enc" + std::to_string(l), layer));
    }
    const bool gated_decoder = traits_.decoder == DecoderKind::edge_lram;
    for (int64_t pair = 6; pair >= 1; --pair) {
        const auto p = static_cast<size_t>(pair);
        auto layer = DecoderLayer(pair, ch[p], ch[p - 1], schedule_[p], schedule_[p - 1], traits_.decoder,
                                  gated_decoder && pair < 6, config_);
        decoder.push_back(register_module("dec" + std::to_string(14 - pair), layer));
    }
    const auto& outer = schedule_.front();
    final_layer = register_module(
        "dec14", torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(ch.front(), config_.image_channels,
                                                                              outer.kernel)
                                                .stride(outer.stride)
                                                .padding(outer.padding)
                                                .bias(false)));
}

InpaintOutput InpaintNetImpl::forward(const Tensor& image, const Tensor& mask, const Tensor& edge, bool trace) {
    const int64_t size = config_.image_size;
    require(image.dim() == 4 && image.size(1) == config_.image_channels && image.size(2) == size &&
                image.size(3) == size,
            "InpaintNet: expected image [N, " + std::to_string(config_.image_channels) + ", " +
                std::to_string(size) + ", " + std::to_string(size) + "], got " + shape_string(image));
    require(mask.dim() == 4 && mask.size(1) == 1 && same_spatial(image, mask) && mask.size(0) == image.size(0),
            "InpaintNet: mask must be [N, 1, H, W] matching the image, got " + shape_string(mask));
    Tensor e;
    if (traits_.needs_edge) {
        require(edge.defined(), "InpaintNet: variant " + to_string(config_.variant) + " needs an edge map");
        require(edge.dim() == 4 && edge.size(1) == 1 && same_spatial(edge, mask) && edge.size(0) == mask.size(0),
                "InpaintNet: edge must be [N, 1, H, W] matching the mask, got " + shape_string(edge));
        e = edge;
    }

    InpaintTrace record;
    const double slope = config_.leaky_slope;
    std::vector<Tensor> features{(2.0 * image - 1.0) * mask};
    std::vector<Tensor> enc_attention{Tensor()};
    Tensor m = mask;
    for (int64_t l = 1; l <= 6; ++l) {
        auto& layer = encoder[static_cast<size_t>(l - 1)];
        const auto& x = features.back();
        Tensor out;
        MaskUpdate update;
        if (layer->kind == EncoderKind::pconv) {
            auto result = pconv_layer(x, m, layer->conv->weight, layer->spec);
            out = result.feature;
            update = std::move(result.mask);
        } else {
            const bool edge_here = layer->mask_path->uses_edge();
            update = layer->mask_path->forward(m, edge_here ? e : Tensor());
            out = layer->conv(x) * update.attention;
            if (layer->kind == EncoderKind::edge_lfam) e = update.edge;
        }
        m = update.mask;
        features.push_back(activate(out, layer->norm, slope));
        enc_attention.push_back(update.attention);
        if (trace) record.forward.push_back(update);
    }
    features.push_back(activate(encoder[6]->conv(features.back()), encoder[6]->norm, slope));

    // Reverse mask chain: starts from the complement of the input mask at the
    // output end and runs against the feature flow.
    std::vector<MaskUpdate> reverse(7);
    if (traits_.decoder != DecoderKind::plain) {
        Tensor rm = 1.0 - mask;
        Tensor re = traits_.needs_edge ? edge : Tensor();
        for (int64_t pair = 1; pair <= 6; ++pair) {
            auto& layer = decoder[static_cast<size_t>(6 - pair)];
            auto update = layer->mask_path->forward(rm, layer->mask_path->uses_edge() ? re : Tensor());
            rm = update.mask;
            if (layer->kind == DecoderKind::edge_lram) re = update.edge;
            reverse[static_cast<size_t>(pair)] = update;
            if (trace) record.reverse.push_back(update);
        }
    }

    Tensor d = features[7];
    for (auto& layer : decoder) {
        const auto p = static_cast<size_t>(layer->pair);
        auto enc_conv = layer->skip(features[p]);
        auto dec_conv = layer->deconv(d);
        Tensor out = layer->kind == DecoderKind::plain
                         ? enc_conv + dec_conv
                         : reverse_renormalize(enc_conv, enc_attention[p], dec_conv, reverse[p].attention);
        d = activate(out, layer->norm, slope);
    }

    InpaintOutput result;
    result.raw = torch::tanh(final_layer(d));
    result.composited = composite(result.prediction(), image, mask);
    if (trace) result.trace = std::move(record);
    return result;
}

void InpaintNetImpl::project() {
    for (auto& layer : encoder)
        if (layer->mask_path) layer->mask_path->project();
    for (auto& layer : decoder)
        if (layer->mask_path) layer->mask_path->project();
}

std::vector<std::pair<std::string, Tensor>> InpaintNetImpl::attention_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& item : named_parameters(true))
        if (item.key().find("mask_path") != std::string::npos) out.emplace_back(item.key(), item.value());
    return out;
}

}  // namespace edgelbam
