#include "edgelbam/trainer.hpp"

#include "synthetic.hpp"
#include "tensors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

using namespace edgelbam;
using namespace edgelbam::testing;
namespace fs = std::filesystem;

namespace {

const fs::path& dataset() {
    static const fs::path manifest = write_synthetic_dataset(scratch_dir("trainer_data"), 4, 7, 96);
    return manifest;
}

TrainConfig desk_config(Stage stage, const std::string& name, Variant variant = Variant::BF) {
    auto c = TrainConfig::defaults(stage);
    c.desk_scale = true;
    c.variant = variant;
    c.batch_size = 2;
    c.iterations = 3;
    c.seed = 11;
    c.manifest = dataset().string();
    c.run_root = (fs::temp_directory_path() / "edgelbam_trainer_runs").string();
    c.run_name = name;
    fs::remove_all(resolve_run_dir(c));
    return c;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void expect_same_losses(const std::vector<LossRecord>& a, const std::vector<LossRecord>& b, double tol) {
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].step, b[i].step);
        EXPECT_NEAR(a[i].l1, b[i].l1, tol);
        EXPECT_NEAR(a[i].total, b[i].total, tol);
        EXPECT_NEAR(a[i].disc, b[i].disc, tol);
        EXPECT_NEAR(a[i].gp, b[i].gp, tol);
    }
}

std::vector<Tensor> snapshot(torch::nn::Module& m) {
    std::vector<Tensor> out;
    for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
    return out;
}

bool same_parameters(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (!torch::equal(a[i], b[i])) return false;
    return true;
}

}  // namespace

TEST(EpochSampler, EveryEpochIsAPermutation) {
    EpochSampler s(5, 5);
    std::mt19937_64 rng(1);
    for (int epoch = 0; epoch < 3; ++epoch) {
        auto batch = s.next(rng);
        std::set<size_t> seen(batch.begin(), batch.end());
        EXPECT_EQ(seen.size(), 5u);
    }
    EpochSampler small(3, 10);
    EXPECT_EQ(small.next(rng).size(), 3u);
    EXPECT_THROW(EpochSampler(0, 1), std::invalid_argument);
}

TEST(EpochSampler, RestoreContinuesTheSameStream) {
    EpochSampler a(7, 3);
    std::mt19937_64 ra(4);
    a.next(ra);
    a.next(ra);
    EpochSampler b(7, 3);
    b.restore(a.order(), a.cursor());
    std::mt19937_64 rb = ra;
    for (int i = 0; i < 5; ++i) EXPECT_EQ(a.next(ra), b.next(rb));
    EXPECT_THROW(b.restore({0, 9}, 0), std::invalid_argument);
}

TEST(LossCsv, RoundTrip) {
    const auto dir = scratch_dir("trainer_csv");
    std::vector<LossRecord> rows{{1, 0.5, -0.25, 0.125, 3.0, 4.0, 0.1, 0.2}, {2, 1.0 / 3.0, 0, 0, 0, 1e-17, -2, 0}};
    write_loss_csv(dir / "l.csv", rows);
    EXPECT_EQ(read_file(dir / "l.csv").substr(0, 37), "step,l1,adv,perc,style,total,disc,gp\n");
    const auto back = read_loss_csv(dir / "l.csv");
    expect_same_losses(rows, back, 0.0);
    EXPECT_EQ(back[1].l1, 1.0 / 3.0);
}

TEST(Training, BaselineRunsWithoutEdges) {
    auto cfg = desk_config(Stage::inpaint, "bf");
    const auto out = train_inpaint(cfg, load_training_images(cfg));
    ASSERT_EQ(out.losses.size(), 3u);
    for (const auto& r : out.losses) {
        EXPECT_TRUE(std::isfinite(r.total));
        EXPECT_GE(r.l1, 0.0);
        EXPECT_GE(r.gp, 0.0);
    }
    EXPECT_TRUE(fs::exists(out.run_dir / "config.json"));
    EXPECT_TRUE(fs::exists(out.checkpoint));
    const auto csv = read_loss_csv(out.run_dir / "losses.csv");
    expect_same_losses(csv, out.losses, 0.0);
    const auto net = load_inpaint_net(out.checkpoint);
    EXPECT_EQ(net->config().variant, Variant::BF);
}

TEST(Training, ConfigSnapshotEchoesEveryKey) {
    auto cfg = desk_config(Stage::inpaint, "snapshot");
    cfg.iterations = 1;
    const auto out = train_inpaint(cfg, load_training_images(cfg));
    const auto doc = json::parse(read_file(out.run_dir / "config.json"));
    EXPECT_EQ(doc.at("train"), cfg.to_json());
    EXPECT_TRUE(doc.contains("unet"));
}

TEST(Training, EdgeVariantNeedsAnEdgeSource) {
    auto cfg = desk_config(Stage::inpaint, "no_source", Variant::EdgeLBAM);
    cfg.edge_source = EdgeSource::mecnet;
    const auto images = load_training_images(cfg);
    EXPECT_THROW(train_inpaint(cfg, images), std::invalid_argument);
    auto joint = desk_config(Stage::joint, "no_ckpt", Variant::EdgeLBAM);
    EXPECT_THROW(finetune_joint(joint, images), std::invalid_argument);
    joint.variant = Variant::BF;
    EXPECT_THROW(finetune_joint(joint, images), std::invalid_argument);
}

TEST(Training, SeededRunsRepeatExactly) {
    auto a = desk_config(Stage::inpaint, "repeat_a", Variant::EdgeLBAM);
    auto b = desk_config(Stage::inpaint, "repeat_b", Variant::EdgeLBAM);
    const auto images = load_training_images(a);
    const auto ra = train_inpaint(a, images);
    const auto rb = train_inpaint(b, images);
    expect_same_losses(ra.losses, rb.losses, 1e-6);
    EXPECT_EQ(read_file(ra.run_dir / "losses.csv"), read_file(rb.run_dir / "losses.csv"));
}

TEST(Training, ResumeMatchesUninterruptedRun) {
    auto straight = desk_config(Stage::inpaint, "straight", Variant::EdgeLBAM);
    straight.iterations = 4;
    const auto images = load_training_images(straight);
    const auto full = train_inpaint(straight, images);

    auto first = desk_config(Stage::inpaint, "interrupted", Variant::EdgeLBAM);
    first.iterations = 2;
    const auto half = train_inpaint(first, images);
    auto second = first;
    second.iterations = 4;
    second.resume = half.checkpoint.string();
    const auto resumed = train_inpaint(second, images);
    expect_same_losses(full.losses, resumed.losses, 1e-6);

    auto wrong = desk_config(Stage::inpaint, "wrong_kind", Variant::LBAM);
    wrong.resume = half.checkpoint.string();
    EXPECT_THROW(train_inpaint(wrong, images), std::runtime_error);
}

TEST(Training, MECNetReconstructionDecreases) {
    const auto manifest = write_synthetic_dataset(scratch_dir("trainer_mec_data"), 10, 21, 96);
    auto cfg = desk_config(Stage::mecnet, "mec200");
    cfg.manifest = manifest.string();
    cfg.batch_size = 10;
    cfg.iterations = 200;
    const auto out = train_mecnet(cfg, load_training_images(cfg));
    ASSERT_EQ(out.mec_losses.size(), 200u);
    double tail = 0.0;
    for (size_t i = 190; i < 200; ++i) tail += out.mec_losses[i].rec;
    tail /= 10.0;
    EXPECT_LT(tail, out.mec_losses.front().rec);
    EXPECT_TRUE(fs::exists(out.run_dir / "losses.csv"));
    const auto net = load_mecnet(out.checkpoint);
    EXPECT_EQ(net->config().image_size, 64);
}

class JointStage : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        auto mec = desk_config(Stage::mecnet, "joint_mec");
        mec.iterations = 2;
        images_ = new std::vector<LoadedImage>(load_training_images(mec));
        mecnet_ckpt_ = new fs::path(train_mecnet(mec, *images_).checkpoint);
        auto inp = desk_config(Stage::inpaint, "joint_inp", Variant::EdgeLBAM);
        inp.iterations = 2;
        inpaint_ckpt_ = new fs::path(train_inpaint(inp, *images_).checkpoint);
    }
    static void TearDownTestSuite() {
        delete images_;
        delete mecnet_ckpt_;
        delete inpaint_ckpt_;
    }

    static TrainConfig joint_config(const std::string& name, bool joint) {
        auto c = desk_config(Stage::joint, name, Variant::EdgeLBAM);
        c.iterations = 2;
        c.joint = joint;
        c.mecnet_checkpoint = mecnet_ckpt_->string();
        c.inpaint_checkpoint = inpaint_ckpt_->string();
        return c;
    }

    static std::vector<LoadedImage>* images_;
    static fs::path* mecnet_ckpt_;
    static fs::path* inpaint_ckpt_;
};
std::vector<LoadedImage>* JointStage::images_ = nullptr;
fs::path* JointStage::mecnet_ckpt_ = nullptr;
fs::path* JointStage::inpaint_ckpt_ = nullptr;

TEST_F(JointStage, UpdatesTheEdgeNetwork) {
    const auto before = snapshot(*load_mecnet(*mecnet_ckpt_));
    const auto out = finetune_joint(joint_config("joint_on", true), *images_);
    EXPECT_FALSE(same_parameters(before, snapshot(*load_mecnet(out.mecnet_checkpoint))));
    EXPECT_TRUE(fs::exists(out.inpaint_checkpoint));
    EXPECT_EQ(read_checkpoint_meta(out.checkpoint).kind, "joint");
}

TEST_F(JointStage, FrozenEdgeNetworkEqualsStageTwo) {
    auto cfg = joint_config("joint_off", false);
    const auto joint = finetune_joint(cfg, *images_);
    EXPECT_TRUE(same_parameters(snapshot(*load_mecnet(*mecnet_ckpt_)), snapshot(*load_mecnet(joint.mecnet_checkpoint))));

    auto stage2 = desk_config(Stage::inpaint, "joint_off_stage2", Variant::EdgeLBAM);
    stage2.iterations = cfg.iterations;
    stage2.lr = cfg.lr;
    stage2.critic_lr = cfg.critic_lr;
    stage2.edge_source = EdgeSource::mecnet;
    stage2.mecnet_checkpoint = cfg.mecnet_checkpoint;
    stage2.inpaint_checkpoint = cfg.inpaint_checkpoint;
    const auto plain = train_inpaint(stage2, *images_);
    expect_same_losses(joint.losses, plain.losses, 1e-6);
}

TEST_F(JointStage, ResumeRejectsOtherStage) {
    auto cfg = joint_config("joint_resume_wrong", true);
    cfg.resume = inpaint_ckpt_->string();
    EXPECT_THROW(finetune_joint(cfg, *images_), std::runtime_error);
}

TEST(Evaluate, HoleZeroStubReportsFullHoleError) {
    TrainConfig cfg;
    cfg.manifest = dataset().string();
    cfg.desk_scale = true;
    const auto images = load_training_images(cfg);
    EvalOptions options;
    options.eval_seed = 5;
    options.preprocess = PreprocessOptions::desk();
    const InpaintFn stub = [](const Sample& s) { return s.image_gt * s.mask; };
    const auto report = evaluate(stub, images, options);
    ASSERT_EQ(report.buckets.size(), 4u);

    // independent recomputation of the first bucket's PSNR
    double expected_psnr = 0.0;
    for (const auto& img : images) {
        std::mt19937_64 unused(0);
        auto prep = PreprocessOptions::desk();
        prep.random_crop = prep.flip = false;
        const auto gt = preprocess(img.image, prep, unused).to(torch::kFloat64);
        const auto mask =
            generate_irregular_mask({standard_buckets()[0], eval_mask_seed(img.id, 5, 0)}, 64).to(torch::kFloat64);
        const double mse = ((1 - mask) * gt).square().mean().item<double>();
        expected_psnr += -10.0 * std::log10(mse);
    }
    expected_psnr /= static_cast<double>(images.size());
    for (const auto& b : report.buckets) {
        EXPECT_EQ(b.count, 4);
        EXPECT_TRUE(std::isfinite(b.psnr));
        EXPECT_NEAR(b.l1_pct, 100.0, 1e-4);
        EXPECT_LT(b.ssim, 1.0);
    }
    EXPECT_NEAR(report.buckets[0].psnr, expected_psnr, 1e-4);
}

TEST(Evaluate, EmptyBucketIsLeftOut) {
    TrainConfig cfg;
    cfg.manifest = dataset().string();
    cfg.desk_scale = true;
    EvalOptions options;
    options.preprocess = PreprocessOptions::desk();
    options.preprocess.crop = 4;
    options.preprocess.min_side = 88;
    options.buckets = {RatioBucket{0.1, 0.101}};
    const InpaintFn stub = [](const Sample& s) { return s.image_gt; };
    EXPECT_TRUE(evaluate(stub, load_training_images(cfg), options).buckets.empty());
}

TEST(Evaluate, RepeatedRunsGiveIdenticalReports) {
    torch::manual_seed(3);
    InpaintNet net(UNetConfig::desk(Variant::EdgeLBAM));
    TrainConfig cfg;
    cfg.manifest = dataset().string();
    cfg.desk_scale = true;
    const auto images = load_training_images(cfg);
    EvalOptions options;
    options.preprocess = PreprocessOptions::desk();
    const auto a = evaluate(make_inpaint_fn(net), images, options);
    const auto b = evaluate(make_inpaint_fn(net), images, options);
    EXPECT_EQ(a.to_csv(), b.to_csv());
    EXPECT_EQ(a.to_table(), b.to_table());
}

TEST(Infer, ShapesAndCompositing) {
    torch::manual_seed(4);
    InpaintNet net(UNetConfig::desk(Variant::EdgeLBAM));
    const auto image = image_to_tensor(synthetic_image(1, 64));
    const auto mask = generate_irregular_mask({standard_buckets()[1], 3}, 64);
    const auto r = infer(net, image, mask);
    EXPECT_EQ(r.composited.sizes(), image.sizes());
    EXPECT_EQ(r.edge.sizes(), mask.sizes());
    EXPECT_TRUE(torch::equal(r.composited * mask, image * mask));
    InpaintNet bf(UNetConfig::desk(Variant::BF));
    EXPECT_FALSE(infer(bf, image, mask).edge.defined());
    EXPECT_THROW(infer(net, image, mask.slice(1, 0, 32)), std::invalid_argument);
}

TEST(Visualize, PanelsFilesAndStability) {
    torch::manual_seed(5);
    InpaintNet net(UNetConfig::desk(Variant::EdgeLBAM));
    const auto image = image_to_tensor(synthetic_image(2, 64));
    const auto mask = generate_irregular_mask({standard_buckets()[2], 8}, 64);
    const auto dir_a = scratch_dir("vis_a"), dir_b = scratch_dir("vis_b");
    const auto a = visualize_masks(net, image, mask, {}, dir_a);
    const auto b = visualize_masks(net, image, mask, {}, dir_b);
    ASSERT_EQ(a.panels.size(), 7u);
    EXPECT_EQ(a.panels[1].filename(), "panel_1_forward_1.png");
    EXPECT_EQ(a.panels[6].filename(), "panel_6_reverse_13.png");
    for (size_t i = 0; i < a.panels.size(); ++i) EXPECT_EQ(read_file(a.panels[i]), read_file(b.panels[i]));
    EXPECT_EQ(read_file(a.grid), read_file(b.grid));
    const auto grid = load_mask(a.grid);  // nonzero = 1
    EXPECT_EQ(grid.size(2), 7 * 64 + 6 * 2);
    const auto bar = image_to_tensor(load_image(a.colorbar));
    EXPECT_EQ(bar[0][0][0].item<float>(), 1.0f);
    EXPECT_EQ(bar[0][255][0].item<float>(), 0.0f);
    const auto legend = json::parse(read_file(a.legend));
    EXPECT_EQ(legend.at("panels").size(), 7u);

    InpaintNet bf(UNetConfig::desk(Variant::BF));
    EXPECT_THROW(mask_panels(bf, image, mask, {}), std::invalid_argument);
}

TEST(Visualize, AllKnownInputGivesBrightForwardPanels) {
    torch::manual_seed(6);
    InpaintNet net(UNetConfig::desk(Variant::EdgeLBAM));
    const auto image = image_to_tensor(synthetic_image(3, 64));
    const auto panels = mask_panels(net, image, torch::ones({1, 64, 64}), {});
    using torch::indexing::Slice;
    for (size_t i = 1; i <= 3; ++i) {
        const auto centre = panels[i].map.index({Slice(), Slice(16, 48), Slice(16, 48)});
        EXPECT_GT(centre.min().item<float>(), 0.95f) << panels[i].name;
    }
}

TEST(RegionMeans, SeparatesHoleAndKnownCells) {
    auto mask = torch::ones({1, 1, 8, 8});
    mask.index_put_({0, 0, torch::indexing::Slice(), torch::indexing::Slice(0, 4)}, 0.0);
    auto map = torch::zeros({1, 2, 4, 4}, torch::kFloat64);
    map.index_put_({0, 0, torch::indexing::Slice(), torch::indexing::Slice(0, 2)}, 0.8);
    map.index_put_({0, 1, torch::indexing::Slice(), torch::indexing::Slice(2, 4)}, 0.3);
    const auto r = region_means(map, mask);
    EXPECT_NEAR(r.hole, 0.8, 1e-12);
    EXPECT_NEAR(r.known, 0.3, 1e-12);
    EXPECT_TRUE(std::isnan(region_means(map, torch::ones({1, 1, 8, 8})).hole));
}
