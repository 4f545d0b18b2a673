#include "edgelbam/checkpoint.hpp"
#include "edgelbam/config.hpp"

#include "synthetic.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

using namespace edgelbam;
using namespace edgelbam::testing;
namespace fs = std::filesystem;

TEST(TrainConfig, StageDefaults) {
    const auto mec = TrainConfig::defaults(Stage::mecnet);
    EXPECT_EQ(mec.lr, 1e-4);
    EXPECT_EQ(mec.adam_beta1, 0.1);
    const auto inp = TrainConfig::defaults(Stage::inpaint);
    EXPECT_EQ(inp.lr, 2.5e-5);
    EXPECT_EQ(inp.adam_beta1, 0.5);
    EXPECT_EQ(inp.epochs, 400);
    const auto joint = TrainConfig::defaults(Stage::joint);
    EXPECT_EQ(joint.lr, 1e-5);
    EXPECT_EQ(joint.epochs, 100);
    EXPECT_EQ(inp.weights.style, 120.0);
}

TEST(TrainConfig, JsonRoundTrip) {
    auto c = TrainConfig::defaults(Stage::joint);
    c.variant = Variant::LBAM_E;
    c.mec_variant = MECVariant::single_scale;
    c.seed = 42;
    c.iterations = 17;
    c.weights.style = 3.5;
    c.edge_source = EdgeSource::mecnet;
    c.manifest = "data/list.txt";
    const auto back = TrainConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
    EXPECT_EQ(back.stage, Stage::joint);
    EXPECT_EQ(back.variant, Variant::LBAM_E);
}

TEST(TrainConfig, OverridesAndUnknownKeys) {
    auto c = TrainConfig::defaults(Stage::inpaint);
    c.apply_override("lr=0.001");
    c.apply_override("variant=BF");
    c.apply_override("loss_weights.adv=0.5");
    c.apply_override("desk_scale=true");
    c.apply_override("run_name=my run");
    EXPECT_EQ(c.lr, 0.001);
    EXPECT_EQ(c.variant, Variant::BF);
    EXPECT_EQ(c.weights.adv, 0.5);
    EXPECT_TRUE(c.desk_scale);
    EXPECT_EQ(c.run_name, "my run");
    EXPECT_THROW(c.apply_override("learning_rate=1"), std::invalid_argument);
    EXPECT_THROW(c.apply_override("lr"), std::invalid_argument);
    EXPECT_THROW(c.apply_override("lr=-1"), std::invalid_argument);
    EXPECT_THROW(c.apply_override("batch_size=abc"), std::invalid_argument);
    EXPECT_THROW(TrainConfig::from_json(json{{"bogus", 1}}), std::invalid_argument);
}

TEST(TrainConfig, LoadFromFile) {
    const auto dir = scratch_dir("config_load");
    std::ofstream(dir / "c.json") << R"({"stage": "mecnet", "desk_scale": true, "iterations": 5})";
    const auto c = TrainConfig::load(dir / "c.json");
    EXPECT_EQ(c.stage, Stage::mecnet);
    EXPECT_EQ(c.lr, 1e-4);
    EXPECT_EQ(c.image_size(), 64);
    EXPECT_EQ(c.total_iterations(1000), 5);
    std::ofstream(dir / "bad.json") << "{ not json";
    EXPECT_THROW(TrainConfig::load(dir / "bad.json"), std::invalid_argument);
    EXPECT_THROW(TrainConfig::load(dir / "none.json"), std::runtime_error);
}

TEST(TrainConfig, EpochBudget) {
    auto c = TrainConfig::defaults(Stage::inpaint);
    c.batch_size = 8;
    c.epochs = 3;
    EXPECT_EQ(c.total_iterations(17), 9);
}

TEST(TrainConfig, PreprocessingFollowsMode) {
    auto c = TrainConfig::defaults(Stage::inpaint);
    c.desk_scale = true;
    EXPECT_TRUE(c.preprocess(true).random_crop);
    EXPECT_FALSE(c.preprocess(false).flip);
    c.overfit = true;
    EXPECT_FALSE(c.preprocess(true).random_crop);
    EXPECT_EQ(c.preprocess(true).crop, 64);
}

TEST(RunDir, EnvironmentTakesPrecedence) {
    auto c = TrainConfig::defaults(Stage::mecnet);
    c.seed = 3;
    ::unsetenv(kRunRootEnv);
    EXPECT_EQ(resolve_run_dir(c), fs::path("runs") / "mecnet-seed3");
    c.run_root = "/tmp/roots";
    c.run_name = "abc";
    EXPECT_EQ(resolve_run_dir(c), fs::path("/tmp/roots/abc"));
    ::setenv(kRunRootEnv, "/tmp/envroot", 1);
    EXPECT_EQ(resolve_run_dir(c), fs::path("/tmp/envroot/abc"));
    ::unsetenv(kRunRootEnv);
}

TEST(ModelConfigs, JsonRoundTrip) {
    const auto u = UNetConfig::desk(Variant::LBAM);
    EXPECT_EQ(to_json(unet_from_json(to_json(u))), to_json(u));
    const auto m = MECNetConfig::desk(MECVariant::multi_loss);
    EXPECT_EQ(to_json(mecnet_from_json(to_json(m))), to_json(m));
    auto bad = to_json(u);
    bad["image_size"] = 50;
    EXPECT_THROW(unet_from_json(bad), std::invalid_argument);
}

TEST(Checkpoint, RoundTripGivesBitwiseEqualOutputs) {
    const auto dir = scratch_dir("ckpt_roundtrip");
    torch::manual_seed(1);
    InpaintNet net(UNetConfig::desk(Variant::EdgeLBAM));
    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(1e-3));
    const auto image = torch::rand({2, 3, 64, 64});
    auto mask = (torch::rand({2, 1, 64, 64}) > 0.3).to(torch::kFloat32);
    const auto edge = (torch::rand({2, 1, 64, 64}) > 0.9).to(torch::kFloat32);
    // one update so optimizer state and running statistics are populated
    net->forward(image, mask, edge).raw.abs().mean().backward();
    opt.step();

    CheckpointMeta meta;
    meta.kind = "inpaint";
    meta.config = json{{"unet", to_json(net->config())}};
    meta.step = 12;
    meta.rng_state = "state text";
    meta.sampler_order = {3, 1, 2, 0};
    meta.sampler_cursor = 2;
    save_checkpoint(dir / "a.ckpt", meta, {{"inpaint", net.ptr().get()}}, {{"inpaint", &opt}});

    torch::manual_seed(2);
    InpaintNet other(UNetConfig::desk(Variant::EdgeLBAM));
    torch::optim::Adam other_opt(other->parameters(), torch::optim::AdamOptions(1e-3));
    const auto loaded = load_checkpoint(dir / "a.ckpt", {{"inpaint", other.ptr().get()}}, {{"inpaint", &other_opt}});
    EXPECT_EQ(loaded.kind, "inpaint");
    EXPECT_EQ(loaded.step, 12);
    EXPECT_EQ(loaded.rng_state, "state text");
    EXPECT_EQ(loaded.sampler_order, meta.sampler_order);
    EXPECT_EQ(loaded.sampler_cursor, 2);
    EXPECT_EQ(loaded.config, meta.config);

    net->eval();
    other->eval();
    torch::NoGradGuard guard;
    EXPECT_TRUE(torch::equal(net->forward(image, mask, edge).raw, other->forward(image, mask, edge).raw));
    EXPECT_TRUE(checkpoint_has_module(dir / "a.ckpt", "inpaint"));
    EXPECT_FALSE(checkpoint_has_module(dir / "a.ckpt", "mecnet"));
    EXPECT_THROW(load_checkpoint(dir / "a.ckpt", {{"mecnet", other.ptr().get()}}), std::runtime_error);
}

TEST(Checkpoint, RejectsOtherFormatVersions) {
    const auto dir = scratch_dir("ckpt_version");
    torch::serialize::OutputArchive archive;
    archive.write("format_version", torch::tensor(int64_t{kCheckpointVersion + 1}, torch::kInt64));
    archive.save_to((dir / "future.ckpt").string());
    try {
        read_checkpoint_meta(dir / "future.ckpt");
        FAIL() << "expected a version error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
    std::ofstream(dir / "garbage.ckpt") << "garbage";
    EXPECT_THROW(read_checkpoint_meta(dir / "garbage.ckpt"), std::runtime_error);
}
