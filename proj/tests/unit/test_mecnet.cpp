#include "edgelbam/mecnet.hpp"

#include "tensors.hpp"

#include <gtest/gtest.h>

using namespace edgelbam;
using namespace edgelbam::testing;

namespace {

struct Inputs {
    Tensor image, mask, edges;
};

Inputs random_inputs(int64_t n, int64_t size, uint64_t seed) {
    Inputs in;
    in.image = uniform({n, 3, size, size}, seed).to(torch::kFloat32);
    in.mask = (uniform({n, 1, size, size}, seed + 1) < 0.7).to(torch::kFloat32);
    in.edges = (uniform({n, 1, size, size}, seed + 2) < 0.1).to(torch::kFloat32) * in.mask;
    return in;
}

MECNetConfig small(MECVariant v = MECVariant::full) {
    auto c = MECNetConfig::desk(v);
    c.blocks_per_branch = 2;
    return c;
}

}  // namespace

TEST(MECNet, OutputShapeAndRange) {
    torch::manual_seed(0);
    MECNet net(MECNetConfig::desk());
    const auto in = random_inputs(2, 64, 1);
    const auto out = net->forward(in.image, in.mask, in.edges);
    EXPECT_EQ(out.edge_hat.sizes(), (std::vector<int64_t>{2, 1, 64, 64}));
    EXPECT_GE(out.edge_hat.min().item<float>(), 0.0f);
    EXPECT_LE(out.edge_hat.max().item<float>(), 1.0f);
    EXPECT_TRUE(out.side_outputs.empty());
}

TEST(MECNet, SingleScaleDiffersFromFull) {
    const auto in = random_inputs(1, 64, 2);
    torch::manual_seed(3);
    MECNet full(small());
    torch::manual_seed(3);
    MECNet single(small(MECVariant::single_scale));
    full->eval();
    single->eval();
    torch::NoGradGuard guard;
    EXPECT_EQ(single->config().active_scales(), std::vector<int64_t>{16});
    EXPECT_FALSE(torch::allclose(full->forward(in.image, in.mask, in.edges).edge_hat,
                                 single->forward(in.image, in.mask, in.edges).edge_hat));
}

TEST(MECNet, MultiLossHasOneSideOutputPerScale) {
    torch::manual_seed(4);
    MECNet net(small(MECVariant::multi_loss));
    const auto in = random_inputs(1, 64, 5);
    const auto out = net->forward(in.image, in.mask, in.edges);
    ASSERT_EQ(out.side_outputs.size(), 4u);
    for (const auto& s : out.side_outputs) EXPECT_EQ(s.sizes(), out.edge_hat.sizes());
}

TEST(MECNet, EvaluationIsDeterministic) {
    torch::manual_seed(6);
    MECNet net(small());
    net->eval();
    const auto in = random_inputs(2, 64, 7);
    torch::NoGradGuard guard;
    EXPECT_TRUE(torch::equal(net->forward(in.image, in.mask, in.edges).edge_hat,
                             net->forward(in.image, in.mask, in.edges).edge_hat));
}

TEST(MECNet, HoleContentIsIgnored) {
    torch::manual_seed(8);
    MECNet net(small());
    net->eval();
    auto in = random_inputs(1, 64, 9);
    const auto other = in.image * in.mask + (1 - in.mask) * torch::rand_like(in.image);
    torch::NoGradGuard guard;
    EXPECT_TRUE(torch::equal(net->forward(in.image, in.mask, in.edges).edge_hat,
                             net->forward(other, in.mask, in.edges).edge_hat));
}

TEST(MECNet, EveryParameterReceivesGradient) {
    torch::manual_seed(10);
    MECNet net(small());
    const auto in = random_inputs(2, 64, 11);
    const auto target = (uniform({2, 1, 64, 64}, 12) < 0.2).to(torch::kFloat32);
    torch::binary_cross_entropy(net->forward(in.image, in.mask, in.edges).edge_hat, target).backward();
    for (const auto& p : net->named_parameters()) {
        ASSERT_TRUE(p.value().grad().defined()) << p.key();
        EXPECT_GT(p.value().grad().norm().item<float>(), 0.0f) << p.key();
    }
}

TEST(MECNetConfig, Validation) {
    EXPECT_NO_THROW(MECNetConfig{}.validate());
    EXPECT_NO_THROW(MECNetConfig::desk().validate());
    auto c = MECNetConfig::desk();
    c.scales = {2, 4, 8, 12};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = MECNetConfig::desk();
    c.image_size = 128;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    EXPECT_EQ(parse_mec_variant("ML"), MECVariant::multi_loss);
    EXPECT_EQ(parse_mec_variant("S"), MECVariant::single_scale);
    EXPECT_THROW(parse_mec_variant("bogus"), std::invalid_argument);
}

TEST(PatchDiscriminator, FiveFeaturesAndSmallerScoreMap) {
    torch::manual_seed(13);
    PatchDiscriminator d(PatchDiscriminatorOptions{4, 16});
    const auto in = random_inputs(2, 64, 14);
    const auto feats = d->forward(in.edges, in.image);
    ASSERT_EQ(feats.size(), 5u);
    EXPECT_LT(feats.back().size(2), 64);
    EXPECT_EQ(feats.back().size(1), 1);
}

TEST(PatchDiscriminator, ReceptiveFieldIsSeventy) {
    PatchDiscriminator d;
    EXPECT_EQ(receptive_field(d->geometry()), 70);
}

TEST(ReceptiveField, Arithmetic) {
    EXPECT_EQ(receptive_field({{3, 1}}), 3);
    EXPECT_EQ(receptive_field({{3, 1}, {3, 1}}), 5);
    EXPECT_EQ(receptive_field({{2, 2}, {3, 1}}), 6);
}

TEST(MECLosses, TotalArithmetic) {
    EXPECT_DOUBLE_EQ(mec_total(torch::tensor(2.0), torch::tensor(1.0)).item<double>(), 12.0);
    EXPECT_DOUBLE_EQ(mec_total(torch::tensor(2.0), torch::tensor(1.0), 5.0).item<double>(), 7.0);
}

TEST(MECLosses, ZeroReconstructionForPerfectEdges) {
    torch::manual_seed(15);
    PatchDiscriminator d(PatchDiscriminatorOptions{4, 16});
    EdgeDiscriminatorFn fn = [&](const Tensor& e, const Tensor& i) { return d->forward(e, i); };
    const auto in = random_inputs(2, 64, 16);
    const auto losses = mecnet_losses(in.edges, in.edges, in.image, fn);
    EXPECT_EQ(losses.rec.item<float>(), 0.0f);
    EXPECT_NEAR(losses.total.item<double>(), losses.adv.item<double>(), 1e-6);
}

TEST(MECLosses, ReconstructionIsNonNegative) {
    torch::manual_seed(17);
    PatchDiscriminator d(PatchDiscriminatorOptions{4, 16});
    EdgeDiscriminatorFn fn = [&](const Tensor& e, const Tensor& i) { return d->forward(e, i); };
    for (uint64_t seed = 0; seed < 5; ++seed) {
        const auto in = random_inputs(1, 64, 20 + seed);
        const auto pred = uniform({1, 1, 64, 64}, 30 + seed).to(torch::kFloat32);
        EXPECT_GT(mecnet_losses(pred, in.edges, in.image, fn).rec.item<float>(), 0.0f);
    }
}

TEST(MECLosses, ConstantDiscriminatorGivesNoAdversarialGradient) {
    EdgeDiscriminatorFn constant = [](const Tensor& e, const Tensor&) {
        std::vector<Tensor> feats;
        for (int i = 0; i < 5; ++i) feats.push_back(torch::full({e.size(0), 1, 6, 6}, 0.3) + 0.0 * e.sum());
        return feats;
    };
    const auto in = random_inputs(1, 64, 40);
    auto pred = uniform({1, 1, 64, 64}, 41).to(torch::kFloat32).requires_grad_(true);
    const auto losses = mecnet_losses(pred, in.edges, in.image, constant);
    losses.adv.backward();
    EXPECT_EQ(pred.grad().abs().max().item<float>(), 0.0f);
    const auto again = mecnet_losses(uniform({1, 1, 64, 64}, 42).to(torch::kFloat32), in.edges, in.image, constant);
    EXPECT_FLOAT_EQ(losses.adv.item<float>(), again.adv.item<float>());
}

TEST(MECLosses, DiscriminatorLossDetachesPrediction) {
    torch::manual_seed(43);
    PatchDiscriminator d(PatchDiscriminatorOptions{4, 16});
    EdgeDiscriminatorFn fn = [&](const Tensor& e, const Tensor& i) { return d->forward(e, i); };
    const auto in = random_inputs(1, 64, 44);
    auto pred = uniform({1, 1, 64, 64}, 45).to(torch::kFloat32).requires_grad_(true);
    const auto loss = mecnet_discriminator_loss(pred, in.edges, in.image, fn);
    EXPECT_GT(loss.item<float>(), 0.0f);
    loss.backward();
    EXPECT_FALSE(pred.grad().defined());
}
