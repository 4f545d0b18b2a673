#include "edgelbam/inpaint_net.hpp"

#include "tensors.hpp"

#include <gtest/gtest.h>

using namespace edgelbam;
using namespace edgelbam::testing;
namespace F = torch::nn::functional;

namespace {

struct Batch {
    Tensor image, mask, edge;
};

Batch random_batch(int64_t n, int64_t size, uint64_t seed) {
    Batch b;
    b.image = uniform({n, 3, size, size}, seed).to(torch::kFloat32);
    auto m = torch::ones({n, 1, size, size});
    using torch::indexing::Slice;
    m.index_put_({Slice(), Slice(), Slice(size / 4, size / 2), Slice(size / 8, size / 2 + size / 8)}, 0.0);
    b.mask = m * (uniform({n, 1, size, size}, seed + 1) < 0.9).to(torch::kFloat32);
    b.edge = (uniform({n, 1, size, size}, seed + 2) < 0.1).to(torch::kFloat32);
    return b;
}

UNetConfig desk(Variant v) { return UNetConfig::desk(v); }

}  // namespace

TEST(UNetConfig, ResolutionLadder) {
    UNetConfig full;
    EXPECT_EQ(resolution_ladder(full), (std::vector<int64_t>{256, 128, 64, 32, 16, 8, 4, 2}));
    for (int64_t i = 1; i <= 7; ++i) EXPECT_EQ(resolution_ladder(full)[size_t(i)], 256 >> i);
    EXPECT_EQ(resolution_ladder(desk(Variant::EdgeLBAM)), (std::vector<int64_t>{64, 32, 16, 8, 4, 2, 2, 2}));
    const auto schedule = encoder_schedule(desk(Variant::EdgeLBAM));
    EXPECT_EQ(schedule[5].kernel, 3);
    EXPECT_EQ(schedule[5].stride, 1);
}

TEST(UNetConfig, Validation) {
    auto c = desk(Variant::BF);
    c.image_size = 48;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c.image_size = 4;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = desk(Variant::BF);
    c.channels.pop_back();
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Variants, NamesRoundTrip) {
    EXPECT_EQ(all_variants().size(), 10u);
    for (auto v : all_variants()) EXPECT_EQ(parse_variant(to_string(v)), v);
    EXPECT_EQ(to_string(Variant::EdgeLBAM), "Edge-LBAM");
    EXPECT_THROW(parse_variant("LBAM++"), std::invalid_argument);
}

TEST(Variants, EdgeConsumptionLattice) {
    for (auto v : all_variants()) {
        const auto t = variant_traits(v);
        EXPECT_FALSE(t.edge_via_concat && t.edge_via_gate) << to_string(v);
        EXPECT_EQ(t.needs_edge, t.edge_via_concat || t.edge_via_gate) << to_string(v);
    }
    EXPECT_TRUE(variant_traits(Variant::LBAM_E).edge_via_concat);
    EXPECT_TRUE(variant_traits(Variant::EdgeLBAM).edge_via_gate);
    EXPECT_FALSE(variant_traits(Variant::LBAM).needs_edge);

    torch::manual_seed(0);
    InpaintNet concat(desk(Variant::LBAM_E));
    for (const auto& layer : concat->encoder) {
        if (!layer->mask_path) continue;
        const auto kind = layer->mask_path->options().kind;
        EXPECT_EQ(kind == MaskPathKind::learnable_concat_edge, layer->index == 1);
        EXPECT_NE(kind, MaskPathKind::edge_guided);
    }
    for (const auto& layer : concat->decoder)
        EXPECT_EQ(layer->mask_path->options().kind == MaskPathKind::learnable_concat_edge, layer->pair == 1);

    InpaintNet gated(desk(Variant::EdgeLBAM));
    for (const auto& layer : gated->encoder)
        if (layer->mask_path) EXPECT_EQ(layer->mask_path->options().kind, MaskPathKind::edge_guided);
    for (const auto& layer : gated->decoder) EXPECT_EQ(layer->mask_path->options().kind, MaskPathKind::edge_guided);
}

TEST(InpaintNet, EveryVariantRunsAndCompositesExactly) {
    const auto b = random_batch(2, 64, 1);
    for (auto v : all_variants()) {
        torch::manual_seed(1);
        InpaintNet net(desk(v));
        const auto out = net->forward(b.image, b.mask, b.edge);
        EXPECT_EQ(out.raw.sizes(), b.image.sizes()) << to_string(v);
        EXPECT_LE(out.raw.abs().max().item<float>(), 1.0f);
        EXPECT_TRUE(torch::equal(out.composited * b.mask, b.image * b.mask)) << to_string(v);
    }
}

TEST(InpaintNet, FullScaleForward) {
    torch::manual_seed(2);
    InpaintNet net(UNetConfig{});
    const auto b = random_batch(1, 256, 2);
    torch::NoGradGuard guard;
    EXPECT_EQ(net->forward(b.image, b.mask, b.edge).raw.sizes(), (std::vector<int64_t>{1, 3, 256, 256}));
}

TEST(InpaintNet, EdgeFreeVariantsNeedNoEdges) {
    const auto b = random_batch(1, 64, 3);
    torch::manual_seed(3);
    InpaintNet bf(desk(Variant::BF));
    EXPECT_NO_THROW(bf->forward(b.image, b.mask));
    InpaintNet edge(desk(Variant::EdgeLBAM));
    EXPECT_THROW(edge->forward(b.image, b.mask), std::invalid_argument);
}

TEST(InpaintNet, RejectsBadShapes) {
    torch::manual_seed(4);
    InpaintNet net(desk(Variant::BF));
    EXPECT_THROW(net->forward(torch::rand({1, 3, 32, 32}), torch::ones({1, 1, 32, 32})), std::invalid_argument);
    EXPECT_THROW(net->forward(torch::rand({1, 3, 64, 64}), torch::ones({1, 3, 64, 64})), std::invalid_argument);
}

TEST(InpaintNet, HoleContentDoesNotLeakIn) {
    torch::manual_seed(5);
    InpaintNet net(desk(Variant::EdgeLBAM));
    net->eval();
    const auto b = random_batch(1, 64, 5);
    const auto other = b.image * b.mask + (1 - b.mask) * torch::rand_like(b.image);
    torch::NoGradGuard guard;
    EXPECT_TRUE(torch::equal(net->forward(b.image, b.mask, b.edge).raw, net->forward(other, b.mask, b.edge).raw));
}

TEST(InpaintNet, BFEqualsPConvStackWithPlainDecoder) {
    torch::manual_seed(6);
    InpaintNet net(desk(Variant::BF));
    net->to(torch::kFloat64);
    {
        // non-trivial normalisation statistics
        torch::NoGradGuard guard;
        uint64_t seed = 60;
        for (auto& buf : net->named_buffers()) {
            if (buf.key().find("running_mean") != std::string::npos) buf.value().copy_(normal(buf.value().sizes(), seed++, 0.1));
            if (buf.key().find("running_var") != std::string::npos)
                buf.value().copy_(uniform(buf.value().sizes(), seed++, 0.5, 1.5));
        }
    }
    net->eval();
    const auto b = random_batch(2, 64, 7);
    const auto image = b.image.to(torch::kFloat64), mask = b.mask.to(torch::kFloat64);

    auto norm = [](const Tensor& x, const torch::nn::BatchNorm2d& bn) {
        return F::batch_norm(x, bn->running_mean, bn->running_var,
                             F::BatchNormFuncOptions().weight(bn->weight).bias(bn->bias).training(false).eps(1e-5));
    };
    auto leaky = [](const Tensor& x) { return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)); };

    std::vector<Tensor> feats{(2 * image - 1) * mask};
    Tensor m = mask;
    for (int l = 1; l <= 6; ++l) {
        const auto& layer = net->encoder[size_t(l - 1)];
        auto out = pconv_layer(feats.back(), m, layer->conv->weight, layer->spec);
        m = out.mask.mask;
        feats.push_back(leaky(l == 1 ? out.feature : norm(out.feature, layer->norm)));
    }
    const auto& inner = net->encoder[6];
    feats.push_back(leaky(norm(F::conv2d(feats.back(), inner->conv->weight,
                                         F::Conv2dFuncOptions().stride(inner->spec.stride).padding(inner->spec.padding)),
                               inner->norm)));
    Tensor d = feats[7];
    for (const auto& layer : net->decoder) {
        const auto skip = F::conv2d(feats[size_t(layer->pair)], layer->skip->weight, F::Conv2dFuncOptions().padding(1));
        const auto up = F::conv_transpose2d(
            d, layer->deconv->weight,
            F::ConvTranspose2dFuncOptions().stride(layer->up_spec.stride).padding(layer->up_spec.padding));
        d = leaky(norm(skip + up, layer->norm));
    }
    const auto expected = torch::tanh(F::conv_transpose2d(
        d, net->final_layer->weight, F::ConvTranspose2dFuncOptions().stride(2).padding(1)));

    torch::NoGradGuard guard;
    EXPECT_LT(max_abs(net->forward(image, mask).raw, expected), 1e-8);
}

TEST(InpaintNet, AllKnownMaskSaturatesAndReturnsInput) {
    const auto b = random_batch(1, 64, 8);
    const auto ones = torch::ones_like(b.mask);
    for (auto v : {Variant::BF, Variant::EdgeLBAM}) {
        torch::manual_seed(8);
        InpaintNet net(desk(v));
        net->eval();
        torch::NoGradGuard guard;
        const auto out = net->forward(b.image, ones, b.edge, true);
        EXPECT_TRUE(torch::equal(out.composited, b.image)) << to_string(v);
        const auto maps = collect_mask_maps(out);
        using torch::indexing::Slice;
        const auto interior = maps.front().second.index({Slice(), Slice(), Slice(1, -1), Slice(1, -1)});
        if (v == Variant::BF)
            EXPECT_EQ(maps.front().second.min().item<float>(), 1.0f);
        else
            EXPECT_GT(interior.min().item<float>(), 0.99f);
        // Deep maps at desk scale are all border; only maps with an interior
        // are expected to stay open.
        for (size_t i = 0; i < 6; ++i) {
            const auto& m = out.trace->forward[i].mask;
            if (m.size(2) < 8) continue;
            EXPECT_GT(m.index({Slice(), Slice(), Slice(2, -2), Slice(2, -2)}).min().item<float>(), 0.5f) << i;
        }
    }
}

TEST(CollectMaskMaps, EntriesAndNormalisation) {
    const auto b = random_batch(1, 64, 9);
    torch::manual_seed(9);
    InpaintNet net(desk(Variant::EdgeLBAM));
    const auto out = net->forward(b.image, b.mask, b.edge, true);
    const auto maps = collect_mask_maps(out);
    ASSERT_EQ(maps.size(), 12u);
    const std::vector<int> expected{1, 2, 3, 4, 5, 6, 13, 12, 11, 10, 9, 8};
    for (size_t i = 0; i < maps.size(); ++i) {
        EXPECT_EQ(maps[i].first, expected[i]);
        EXPECT_EQ(maps[i].second.size(1), 1);
        EXPECT_LE(maps[i].second.max().item<float>(), 1.0f + 1e-6f);
        EXPECT_GE(maps[i].second.min().item<float>(), 0.0f);
    }
    InpaintNet bf(desk(Variant::BF));
    EXPECT_EQ(collect_mask_maps(bf->forward(b.image, b.mask, {}, true)).size(), 6u);
    EXPECT_THROW(collect_mask_maps(bf->forward(b.image, b.mask)), std::invalid_argument);
}

TEST(InpaintNet, ReverseMasksMatchDecoderResolution) {
    const auto b = random_batch(1, 64, 10);
    torch::manual_seed(10);
    InpaintNet net(desk(Variant::EdgeLBAM));
    const auto out = net->forward(b.image, b.mask, b.edge, true);
    const auto ladder = resolution_ladder(net->config());
    ASSERT_EQ(out.trace->reverse.size(), 6u);
    for (size_t pair = 1; pair <= 6; ++pair) {
        EXPECT_EQ(out.trace->reverse[pair - 1].mask.size(2), ladder[pair]);
        EXPECT_EQ(out.trace->forward[pair - 1].mask.size(2), ladder[pair]);
    }
}

TEST(InpaintNet, OneStepReachesEveryAttentionBlock) {
    const auto b = random_batch(2, 64, 11);
    torch::manual_seed(11);
    InpaintNet net(desk(Variant::EdgeLBAM));
    const auto out = net->forward(b.image, b.mask, b.edge);
    (out.prediction() - b.image).abs().mean().backward();
    std::map<std::string, double> block_norm;
    for (const auto& [name, p] : net->attention_parameters()) {
        const auto block = name.substr(0, name.find("mask_path"));
        ASSERT_TRUE(p.grad().defined()) << name;
        block_norm[block] += p.grad().norm().item<double>();
    }
    EXPECT_EQ(block_norm.size(), 12u);
    for (const auto& [block, norm] : block_norm) EXPECT_GT(norm, 0.0) << block;

    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(1e-3));
    std::vector<Tensor> before;
    for (const auto& [name, p] : net->attention_parameters()) before.push_back(p.detach().clone());
    opt.step();
    net->project();
    size_t i = 0, changed = 0;
    for (const auto& [name, p] : net->attention_parameters()) changed += !torch::equal(before[i++], p);
    EXPECT_GT(changed, 0u);
}

TEST(Composite, Idempotent) {
    const auto b = random_batch(1, 64, 12);
    const auto pred = torch::rand_like(b.image);
    const auto once = composite(pred, b.image, b.mask);
    EXPECT_TRUE(torch::equal(composite(once, b.image, b.mask), once));
}
