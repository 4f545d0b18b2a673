// edgelbam: command-line front end for training, evaluation and inference.

#include "edgelbam/trainer.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace edgelbam;

namespace {

struct TrainFlags {
    std::string config;
    std::vector<std::string> overrides;
    std::string manifest, run_name, resume, variant, mecnet_ckpt, inpaint_ckpt, edge_source;
    std::optional<uint64_t> seed;
    std::optional<int64_t> iterations;
    bool desk = false;
    bool overfit = false;
};

void add_train_flags(CLI::App* app, TrainFlags& f) {
    app->add_option("-c,--config", f.config, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--set", f.overrides, "override a config key (key=value), repeatable");
    app->add_option("--manifest", f.manifest, "image manifest");
    app->add_option("--run-name", f.run_name, "run directory name under the run root");
    app->add_option("--resume", f.resume, "checkpoint to continue from");
    app->add_option("--variant", f.variant, "inpainting variant (BF ... Edge-LBAM)");
    app->add_option("--mecnet-ckpt", f.mecnet_ckpt, "trained edge network");
    app->add_option("--inpaint-ckpt", f.inpaint_ckpt, "trained inpainting network");
    app->add_option("--edge-source", f.edge_source, "ground_truth or mecnet");
    app->add_option("--seed", f.seed, "random seed");
    app->add_option("--iterations", f.iterations, "iteration budget (replaces epochs)");
    app->add_flag("--desk", f.desk, "64x64 profile");
    app->add_flag("--overfit", f.overfit, "fixed crops and masks");
}

TrainConfig build_config(Stage stage, const TrainFlags& f) {
    TrainConfig cfg = TrainConfig::defaults(stage);
    if (!f.config.empty()) {
        cfg = TrainConfig::load(f.config);
        if (cfg.stage != stage) {
            // Stage-specific defaults follow the subcommand; explicit keys of the file still win.
            std::ifstream in(f.config);
            json doc = json::parse(in);
            doc["stage"] = to_string(stage);
            cfg = TrainConfig::from_json(doc);
        }
    }
    if (!f.manifest.empty()) cfg.manifest = f.manifest;
    if (!f.run_name.empty()) cfg.run_name = f.run_name;
    if (!f.resume.empty()) cfg.resume = f.resume;
    if (!f.variant.empty()) cfg.variant = parse_variant(f.variant);
    if (!f.mecnet_ckpt.empty()) cfg.mecnet_checkpoint = f.mecnet_ckpt;
    if (!f.inpaint_ckpt.empty()) cfg.inpaint_checkpoint = f.inpaint_ckpt;
    if (!f.edge_source.empty()) cfg.edge_source = parse_edge_source(f.edge_source);
    if (f.seed) cfg.seed = *f.seed;
    if (f.iterations) cfg.iterations = *f.iterations;
    if (f.desk) cfg.desk_scale = true;
    if (f.overfit) cfg.overfit = true;
    for (const auto& o : f.overrides) cfg.apply_override(o);
    return cfg;
}

void report_outcome(const TrainOutcome& o) {
    std::cout << "run directory: " << o.run_dir.string() << '\n';
    std::cout << "checkpoint: " << o.checkpoint.string() << '\n';
    if (!o.mecnet_checkpoint.empty() && o.mecnet_checkpoint != o.checkpoint)
        std::cout << "mecnet checkpoint: " << o.mecnet_checkpoint.string() << '\n';
    if (!o.inpaint_checkpoint.empty() && o.inpaint_checkpoint != o.checkpoint)
        std::cout << "inpaint checkpoint: " << o.inpaint_checkpoint.string() << '\n';
}

PreprocessOptions preprocess_for(int64_t image_size) {
    PreprocessOptions o = image_size == 64 ? PreprocessOptions::desk() : PreprocessOptions{};
    o.crop = image_size;
    o.random_crop = false;
    o.flip = false;
    return o;
}

// Predicted edges come from an explicit edge checkpoint, else from a joint
// checkpoint that carries one.
std::optional<MECNet> edge_network(const std::string& explicit_ckpt, const std::string& inpaint_ckpt) {
    if (!explicit_ckpt.empty()) return load_mecnet(explicit_ckpt);
    if (checkpoint_has_module(inpaint_ckpt, "mecnet")) return load_mecnet(inpaint_ckpt);
    return std::nullopt;
}

Tensor resize_to(const Tensor& chw, int64_t size, bool nearest) {
    if (chw.size(1) == size && chw.size(2) == size) return chw;
    namespace F = torch::nn::functional;
    auto opts = F::InterpolateFuncOptions().size(std::vector<int64_t>{size, size});
    if (nearest)
        opts.mode(torch::kNearest);
    else
        opts.mode(torch::kBilinear).align_corners(false);
    return F::interpolate(chw.unsqueeze(0), opts)[0];
}

struct ModelInputs {
    Tensor image, mask, edge;
};

ModelInputs read_inputs(const std::string& image_path, const std::string& mask_path, const std::string& edge_path,
                        int64_t size) {
    ModelInputs in;
    in.image = resize_to(image_to_tensor(load_image(image_path)), size, false).clamp(0.0, 1.0);
    in.mask = (resize_to(load_mask(mask_path), size, true) > 0.5).to(torch::kFloat32);
    if (!edge_path.empty()) in.edge = (resize_to(load_mask(edge_path), size, true) > 0.5).to(torch::kFloat32);
    return in;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Edge-guided bidirectional attention inpainting"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "intra-op threads (1 keeps runs bit-reproducible)");

    TrainFlags mec_flags, inp_flags, joint_flags;
    auto* train_mec = app.add_subcommand("train-mecnet", "train the edge completion network");
    add_train_flags(train_mec, mec_flags);
    auto* train_inp = app.add_subcommand("train-inpaint", "train the inpainting network");
    add_train_flags(train_inp, inp_flags);
    auto* joint = app.add_subcommand("finetune-joint", "finetune both networks together");
    add_train_flags(joint, joint_flags);

    std::string ckpt, mecnet_ckpt, manifest, split, out, image, mask, edge, bucket_label;
    std::vector<std::string> buckets;
    uint64_t eval_seed = 0, mask_seed = 0;
    int64_t count = 10, size = 256;

    auto* eval = app.add_subcommand("eval", "per-bucket metrics on composited outputs");
    eval->add_option("--checkpoint", ckpt, "inpainting or joint checkpoint")->required();
    eval->add_option("--mecnet-ckpt", mecnet_ckpt, "edge network for predicted edges");
    eval->add_option("--manifest", manifest, "image manifest")->required();
    eval->add_option("--split", split, "manifest split tag");
    eval->add_option("--eval-seed", eval_seed, "mask seed shared by all compared models");
    eval->add_option("--buckets", buckets, "hole-ratio buckets such as 10-20%");
    eval->add_option("--out", out, "output prefix; writes <out>.csv and <out>.txt")->required();

    auto* inf = app.add_subcommand("infer", "inpaint one image");
    inf->add_option("--checkpoint", ckpt, "inpainting or joint checkpoint")->required();
    inf->add_option("--mecnet-ckpt", mecnet_ckpt, "edge network for predicted edges");
    inf->add_option("--image", image, "input image")->required()->check(CLI::ExistingFile);
    inf->add_option("--mask", mask, "mask image, nonzero = known")->required()->check(CLI::ExistingFile);
    inf->add_option("--edge", edge, "edge map to use instead of predicted edges");
    inf->add_option("--out", out, "output image")->required();

    auto* vis = app.add_subcommand("visualize-masks", "write forward / reverse mask maps");
    vis->add_option("--checkpoint", ckpt, "inpainting or joint checkpoint")->required();
    vis->add_option("--mecnet-ckpt", mecnet_ckpt, "edge network for predicted edges");
    vis->add_option("--image", image, "input image")->required()->check(CLI::ExistingFile);
    vis->add_option("--mask", mask, "mask image, nonzero = known")->required()->check(CLI::ExistingFile);
    vis->add_option("--edge", edge, "edge map to show and use");
    vis->add_option("--out-dir", out, "output directory")->required();

    auto* gen = app.add_subcommand("gen-masks", "write irregular masks (255 = known)");
    gen->add_option("--bucket", bucket_label, "hole-ratio bucket such as 20-30%")->required();
    gen->add_option("--count", count, "number of masks");
    gen->add_option("--size", size, "mask side length");
    gen->add_option("--seed", mask_seed, "first seed; mask i uses seed + i");
    gen->add_option("--out-dir", out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);
    torch::set_num_threads(threads);

    try {
        if (train_mec->parsed()) {
            const auto cfg = build_config(Stage::mecnet, mec_flags);
            report_outcome(train_mecnet(cfg, load_training_images(cfg)));
        } else if (train_inp->parsed()) {
            const auto cfg = build_config(Stage::inpaint, inp_flags);
            report_outcome(train_inpaint(cfg, load_training_images(cfg)));
        } else if (joint->parsed()) {
            const auto cfg = build_config(Stage::joint, joint_flags);
            report_outcome(finetune_joint(cfg, load_training_images(cfg)));
        } else if (eval->parsed()) {
            auto net = load_inpaint_net(ckpt);
            EvalOptions options;
            options.eval_seed = eval_seed;
            options.preprocess = preprocess_for(net->config().image_size);
            if (!buckets.empty()) {
                options.buckets.clear();
                for (const auto& b : buckets) options.buckets.push_back(parse_bucket(b));
            }
            const auto images = load_images(read_manifest(manifest), options.preprocess, split);
            if (images.empty()) throw std::invalid_argument("manifest '" + manifest + "' lists no usable images");
            const auto report = evaluate(make_inpaint_fn(net, edge_network(mecnet_ckpt, ckpt)), images, options);
            report.write(out + ".csv", out + ".txt");
            std::cout << report.to_table();
        } else if (inf->parsed()) {
            auto net = load_inpaint_net(ckpt);
            const auto in = read_inputs(image, mask, edge, net->config().image_size);
            auto mec = in.edge.defined() ? std::nullopt : edge_network(mecnet_ckpt, ckpt);
            const auto result = infer(net, in.image, in.mask, mec, in.edge);
            save_image(out, result.composited);
            std::cout << "wrote " << out << '\n';
        } else if (vis->parsed()) {
            auto net = load_inpaint_net(ckpt);
            const auto in = read_inputs(image, mask, edge, net->config().image_size);
            Tensor e = in.edge;
            if (!e.defined()) {
                if (auto mec = edge_network(mecnet_ckpt, ckpt)) e = infer(net, in.image, in.mask, mec).edge;
            }
            const auto files = visualize_masks(net, in.image, in.mask, e, out);
            std::cout << "wrote " << files.grid.string() << " (" << files.panels.size() << " panels)\n";
        } else if (gen->parsed()) {
            const RatioBucket bucket = parse_bucket(bucket_label);
            std::vector<std::string> lines{"# " + bucket.label() + " masks, seed " + std::to_string(mask_seed)};
            for (int64_t i = 0; i < count; ++i) {
                std::ostringstream name;
                name << "mask_" << std::setw(5) << std::setfill('0') << i << ".png";
                save_binary_png(fs::path(out) / name.str(),
                                generate_irregular_mask({bucket, mask_seed + static_cast<uint64_t>(i)}, size));
                lines.push_back(name.str());
            }
            write_manifest(fs::path(out) / "masks.txt", lines);
            std::cout << "wrote " << count << " masks to " << out << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
