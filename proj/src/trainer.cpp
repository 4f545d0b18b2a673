#include "edgelbam/trainer.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

namespace edgelbam {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

std::string serialize_rng(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (is.fail()) throw std::runtime_error("checkpoint holds a corrupt random engine state");
}

std::unique_ptr<torch::optim::Adam> make_adam(const std::vector<Tensor>& params, double lr, const TrainConfig& cfg) {
    return std::make_unique<torch::optim::Adam>(
        params, torch::optim::AdamOptions(lr).betas({cfg.adam_beta1, cfg.adam_beta2}));
}

FeatureFn make_features(const TrainConfig& cfg) {
    FeaturePyramidOptions o;
    if (!cfg.desk_scale) o.widths = {64, 128, 256};
    o.imagenet_normalize = !cfg.perceptual_weights.empty();
    FeaturePyramid pyramid(o);
    if (!cfg.perceptual_weights.empty()) pyramid->load_weights(cfg.perceptual_weights);
    pyramid->freeze();
    return as_feature_fn(pyramid);
}

// Training batches. In overfit mode every image keeps one centre crop and one
// mask for the whole run; otherwise crops, flips and masks are redrawn from
// the training engine each time.
class BatchSource {
public:
    BatchSource(const TrainConfig& cfg, const std::vector<LoadedImage>& images, bool gt_edges, bool corrupt_edges)
        : cfg_(cfg), images_(images), options_(cfg.preprocess(true)), gt_edges_(gt_edges),
          corrupt_edges_(corrupt_edges) {}

    struct Batch {
        Tensor image, mask, edge_gt, edge_corrupt;
    };

    Batch make(const std::vector<size_t>& indices, std::mt19937_64& rng) {
        std::vector<Tensor> image, mask, gt, corrupt;
        for (size_t i : indices) {
            const Sample s = cfg_.overfit ? cached(i) : draw(i, rng);
            image.push_back(s.image_gt);
            mask.push_back(s.mask);
            if (gt_edges_) gt.push_back(s.edge_gt);
            if (corrupt_edges_) corrupt.push_back(s.edge_corrupt);
        }
        Batch b;
        b.image = torch::stack(image);
        b.mask = torch::stack(mask);
        if (gt_edges_) b.edge_gt = torch::stack(gt);
        if (corrupt_edges_) b.edge_corrupt = torch::stack(corrupt);
        return b;
    }

private:
    Sample build(const Tensor& image, const Tensor& mask) const {
        Sample s;
        s.image_gt = image;
        s.mask = mask;
        if (gt_edges_) s.edge_gt = ground_truth_edges(image);
        if (corrupt_edges_) s.edge_corrupt = corrupted_edges(image, mask);
        return s;
    }

    Sample cached(size_t i) {
        auto it = cache_.find(i);
        if (it != cache_.end()) return it->second;
        std::mt19937_64 unused(0);
        const Tensor image = preprocess(images_[i].image, options_, unused);
        const size_t bucket = i % standard_buckets().size();
        const Tensor mask = generate_irregular_mask(
            {standard_buckets()[bucket], eval_mask_seed(images_[i].id, cfg_.seed, bucket)}, options_.crop);
        return cache_.emplace(i, build(image, mask)).first->second;
    }

    Sample draw(size_t i, std::mt19937_64& rng) const {
        const Tensor image = preprocess(images_[i].image, options_, rng);
        const auto& buckets = standard_buckets();
        const RatioBucket bucket = buckets[rng() % buckets.size()];
        const uint64_t seed = rng();
        return build(image, generate_irregular_mask({bucket, seed}, options_.crop));
    }

    const TrainConfig& cfg_;
    const std::vector<LoadedImage>& images_;
    PreprocessOptions options_;
    bool gt_edges_;
    bool corrupt_edges_;
    std::map<size_t, Sample> cache_;
};

// ---- CSV --------------------------------------------------------------------------

class CsvLog {
public:
    CsvLog(const fs::path& path, const std::string& header, const std::vector<std::vector<double>>& keep) {
        out_.open(path, std::ios::trunc);
        if (!out_) throw std::runtime_error("cannot write '" + path.string() + "'");
        out_ << header << '\n';
        for (const auto& row : keep) write(row);
    }

    void write(const std::vector<double>& row) {
        out_ << std::setprecision(std::numeric_limits<double>::max_digits10);
        for (size_t i = 0; i < row.size(); ++i) {
            if (i > 0) out_ << ',';
            if (i == 0)
                out_ << static_cast<int64_t>(row[i]);
            else
                out_ << row[i];
        }
        out_ << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

std::vector<std::vector<double>> read_csv_rows(const fs::path& path, size_t columns) {
    std::vector<std::vector<double>> rows;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (row.size() != columns) throw std::runtime_error("malformed row in '" + path.string() + "'");
        rows.push_back(std::move(row));
    }
    return rows;
}

const char* kLossHeader = "step,l1,adv,perc,style,total,disc,gp";
const char* kMecHeader = "step,adv,rec,total,disc";

std::vector<double> to_row(const LossRecord& r) {
    return {static_cast<double>(r.step), r.l1, r.adv, r.perc, r.style, r.total, r.disc, r.gp};
}
std::vector<double> to_row(const MecLossRecord& r) {
    return {static_cast<double>(r.step), r.adv, r.rec, r.total, r.disc};
}

MecLossRecord mec_record(const std::vector<double>& v) {
    return {static_cast<int64_t>(v[0]), v[1], v[2], v[3], v[4]};
}
LossRecord loss_record(const std::vector<double>& v) {
    return {static_cast<int64_t>(v[0]), v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
}

void write_json(const fs::path& path, const json& doc) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << doc.dump(2) << '\n';
}

bool should_log(const TrainConfig& cfg, int64_t step, int64_t total) {
    return step == total || (cfg.log_every > 0 && step % cfg.log_every == 0);
}

bool should_report(int64_t step, int64_t total) { return step == total || step % 100 == 0; }

std::string step_name(int64_t step) {
    std::ostringstream os;
    os << "step_" << std::setw(7) << std::setfill('0') << step << ".ckpt";
    return os.str();
}

void check_model_config(const CheckpointMeta& meta, const char* key, const json& expected, const fs::path& path) {
    if (!meta.config.contains(key) || meta.config.at(key) != expected)
        throw std::runtime_error("checkpoint '" + path.string() + "' was written for a different " + key +
                                 " configuration");
}

std::vector<Tensor> parameters_of(torch::nn::Module& m) { return m.parameters(); }

// ---- stage 1 --------------------------------------------------------------------------

TrainOutcome run_mecnet(const TrainConfig& cfg, const std::vector<LoadedImage>& images) {
    require(!images.empty(), "train_mecnet: no training images");
    TrainOutcome outcome;
    outcome.run_dir = resolve_run_dir(cfg);
    fs::create_directories(outcome.run_dir);

    torch::manual_seed(cfg.seed);
    const MECNetConfig mcfg = cfg.mecnet();
    MECNet mecnet(mcfg);
    PatchDiscriminator disc(PatchDiscriminatorOptions{4, cfg.desk_scale ? 16 : 64});
    auto opt_g = make_adam(parameters_of(*mecnet), cfg.lr, cfg);
    auto opt_d = make_adam(parameters_of(*disc), cfg.critic_lr, cfg);

    json config{{"train", cfg.to_json()}, {"mecnet", to_json(mcfg)}};
    write_json(outcome.run_dir / "config.json", config);

    std::mt19937_64 rng(cfg.seed);
    EpochSampler sampler(images.size(), cfg.batch_size);
    const NamedModules modules{{"mecnet", mecnet.get()}, {"discriminator", disc.get()}};
    const NamedOptimizers optimizers{{"mecnet", opt_g.get()}, {"discriminator", opt_d.get()}};

    int64_t start = 0;
    std::vector<std::vector<double>> kept;
    const fs::path csv = outcome.run_dir / "losses.csv";
    if (!cfg.resume.empty()) {
        // Validate before loading so a mismatched checkpoint fails with a clear message.
        const auto peek = read_checkpoint_meta(cfg.resume);
        if (peek.kind != "mecnet")
            throw std::runtime_error("cannot resume edge training from a '" + peek.kind + "' checkpoint");
        check_model_config(peek, "mecnet", to_json(mcfg), cfg.resume);
        const auto meta = load_checkpoint(cfg.resume, modules, optimizers);
        restore_rng(rng, meta.rng_state);
        sampler.restore(meta.sampler_order, meta.sampler_cursor);
        start = meta.step;
        if (fs::exists(csv))
            for (auto& row : read_csv_rows(csv, 5))
                if (row[0] <= static_cast<double>(start)) kept.push_back(row);
    }
    for (const auto& row : kept) outcome.mec_losses.push_back(mec_record(row));
    CsvLog log(csv, kMecHeader, kept);

    auto save = [&](const fs::path& path, int64_t step) {
        CheckpointMeta meta;
        meta.kind = "mecnet";
        meta.config = config;
        meta.step = step;
        meta.rng_state = serialize_rng(rng);
        meta.sampler_order = sampler.order();
        meta.sampler_cursor = sampler.cursor();
        save_checkpoint(path, meta, modules, optimizers);
    };

    BatchSource source(cfg, images, true, true);
    EdgeDiscriminatorFn disc_fn = [&](const Tensor& e, const Tensor& i) { return disc->forward(e, i); };
    const int64_t total = cfg.total_iterations(images.size());
    mecnet->train();
    disc->train();
    for (int64_t step = start + 1; step <= total; ++step) {
        const auto batch = source.make(sampler.next(rng), rng);
        const auto pred = mecnet->forward(batch.image, batch.mask, batch.edge_corrupt);

        opt_d->zero_grad();
        const Tensor d_loss = mecnet_discriminator_loss(pred.edge_hat, batch.edge_gt, batch.image, disc_fn);
        d_loss.backward();
        opt_d->step();

        opt_g->zero_grad();
        const auto losses = mecnet_losses(pred.edge_hat, batch.edge_gt, batch.image, disc_fn, cfg.alpha_r);
        Tensor g_loss = losses.total;
        for (const auto& side : pred.side_outputs)
            g_loss = g_loss + mecnet_losses(side, batch.edge_gt, batch.image, disc_fn, cfg.alpha_r).total;
        g_loss.backward();
        opt_g->step();

        if (should_log(cfg, step, total)) {
            MecLossRecord r{step, losses.adv.item<double>(), losses.rec.item<double>(), g_loss.item<double>(),
                            d_loss.item<double>()};
            log.write(to_row(r));
            outcome.mec_losses.push_back(r);
        }
        if (should_report(step, total))
            std::cerr << "[mecnet] step " << step << "/" << total << " rec=" << losses.rec.item<double>()
                      << " disc=" << d_loss.item<double>() << '\n';
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != total) {
            save(outcome.run_dir / "checkpoints" / step_name(step), step);
            save(outcome.run_dir / "mecnet.ckpt", step);
        }
    }
    outcome.checkpoint = outcome.run_dir / "mecnet.ckpt";
    save(outcome.checkpoint, std::max(start, total));
    outcome.mecnet_checkpoint = outcome.checkpoint;
    return outcome;
}

// ---- stages 2 and 3 -----------------------------------------------------------------

TrainOutcome run_inpaint(const TrainConfig& cfg, const std::vector<LoadedImage>& images, bool joint_stage) {
    require(!images.empty(), "train_inpaint: no training images");
    const UNetConfig ucfg = cfg.unet();
    const VariantTraits traits = variant_traits(ucfg.variant);
    const bool resuming = !cfg.resume.empty();
    if (joint_stage) {
        if (!traits.needs_edge)
            throw std::invalid_argument("joint finetuning needs an edge-guided variant, got " + to_string(ucfg.variant));
        if (!resuming && (cfg.mecnet_checkpoint.empty() || cfg.inpaint_checkpoint.empty()))
            throw std::invalid_argument("joint finetuning needs both mecnet_checkpoint and inpaint_checkpoint");
    }
    const bool use_mecnet = traits.needs_edge && (joint_stage || cfg.edge_source == EdgeSource::mecnet);
    if (use_mecnet && !resuming && cfg.mecnet_checkpoint.empty())
        throw std::invalid_argument("variant " + to_string(ucfg.variant) +
                                    " takes predicted edges but no mecnet_checkpoint was given");
    const bool train_mecnet = joint_stage && cfg.joint;

    TrainOutcome outcome;
    outcome.run_dir = resolve_run_dir(cfg);
    fs::create_directories(outcome.run_dir);

    torch::manual_seed(cfg.seed);
    InpaintNet net(ucfg);
    TwoColumnCritic critic(TwoColumnCriticOptions{3, cfg.desk_scale ? 16 : 64, ucfg.image_size});
    const FeatureFn features = make_features(cfg);

    json config{{"train", cfg.to_json()}, {"unet", to_json(ucfg)}};
    std::optional<MECNet> mecnet;
    if (use_mecnet) {
        MECNetConfig mcfg = cfg.mecnet();
        if (!resuming) {
            const auto meta = read_checkpoint_meta(cfg.mecnet_checkpoint);
            if (!meta.config.contains("mecnet"))
                throw std::runtime_error("checkpoint '" + cfg.mecnet_checkpoint + "' holds no edge network");
            mcfg = mecnet_from_json(meta.config.at("mecnet"));
        }
        mecnet = MECNet(mcfg);
        config["mecnet"] = to_json(mcfg);
        if (!resuming) load_checkpoint(cfg.mecnet_checkpoint, {{"mecnet", mecnet->get()}});
        if (!train_mecnet)
            for (auto& p : (*mecnet)->parameters()) p.requires_grad_(false);
    }
    if (!resuming && !cfg.inpaint_checkpoint.empty()) {
        const auto meta = read_checkpoint_meta(cfg.inpaint_checkpoint);
        check_model_config(meta, "unet", to_json(ucfg), cfg.inpaint_checkpoint);
        load_checkpoint(cfg.inpaint_checkpoint, {{"inpaint", net.get()}, {"critic", critic.get()}});
    }
    write_json(outcome.run_dir / "config.json", config);

    auto opt_g = make_adam(parameters_of(*net), cfg.lr, cfg);
    auto opt_d = make_adam(parameters_of(*critic), cfg.critic_lr, cfg);
    std::unique_ptr<torch::optim::Adam> opt_m;
    if (train_mecnet) opt_m = make_adam(parameters_of(**mecnet), cfg.lr, cfg);

    NamedModules modules{{"inpaint", net.get()}, {"critic", critic.get()}};
    NamedOptimizers optimizers{{"inpaint", opt_g.get()}, {"critic", opt_d.get()}};
    if (mecnet) modules.emplace_back("mecnet", mecnet->get());
    if (opt_m) optimizers.emplace_back("mecnet", opt_m.get());
    const std::string kind = joint_stage ? "joint" : "inpaint";

    std::mt19937_64 rng(cfg.seed);
    EpochSampler sampler(images.size(), cfg.batch_size);
    int64_t start = 0;
    std::vector<std::vector<double>> kept;
    const fs::path csv = outcome.run_dir / "losses.csv";
    if (resuming) {
        const auto peek = read_checkpoint_meta(cfg.resume);
        if (peek.kind != kind)
            throw std::runtime_error("cannot resume " + kind + " training from a '" + peek.kind + "' checkpoint");
        check_model_config(peek, "unet", to_json(ucfg), cfg.resume);
        if (mecnet) check_model_config(peek, "mecnet", to_json((*mecnet)->config()), cfg.resume);
        const auto meta = load_checkpoint(cfg.resume, modules, optimizers);
        restore_rng(rng, meta.rng_state);
        sampler.restore(meta.sampler_order, meta.sampler_cursor);
        start = meta.step;
        if (fs::exists(csv))
            for (auto& row : read_csv_rows(csv, 8))
                if (row[0] <= static_cast<double>(start)) kept.push_back(row);
    }
    for (const auto& row : kept) outcome.losses.push_back(loss_record(row));
    CsvLog log(csv, kLossHeader, kept);

    auto save = [&](const fs::path& path, int64_t step) {
        CheckpointMeta meta;
        meta.kind = kind;
        meta.config = config;
        meta.step = step;
        meta.rng_state = serialize_rng(rng);
        meta.sampler_order = sampler.order();
        meta.sampler_cursor = sampler.cursor();
        save_checkpoint(path, meta, modules, optimizers);
    };
    const fs::path state_path = outcome.run_dir / (kind + ".ckpt");

    BatchSource source(cfg, images, traits.needs_edge && !use_mecnet, use_mecnet);
    std::uniform_real_distribution<float> uniform(0.0f, 1.0f);
    const int64_t total = cfg.total_iterations(images.size());
    net->train();
    critic->train();
    if (mecnet) (*mecnet)->train(train_mecnet);
    for (int64_t step = start + 1; step <= total; ++step) {
        const auto batch = source.make(sampler.next(rng), rng);
        const int64_t n = batch.image.size(0);

        Tensor edge;
        if (use_mecnet) {
            if (train_mecnet) {
                edge = (*mecnet)->forward(batch.image, batch.mask, batch.edge_corrupt).edge_hat;
            } else {
                torch::NoGradGuard guard;
                edge = (*mecnet)->forward(batch.image, batch.mask, batch.edge_corrupt).edge_hat;
            }
        } else if (traits.needs_edge) {
            edge = batch.edge_gt;
        }
        const Tensor pred = net->forward(batch.image, batch.mask, edge).prediction();
        const CriticFn critic_fn = bind_mask(critic, batch.mask);

        std::vector<float> eps(static_cast<size_t>(n));
        for (auto& e : eps) e = uniform(rng);
        const Tensor epsilon = torch::tensor(eps).view({n, 1, 1, 1});
        opt_d->zero_grad();
        const auto critic_terms = critic_losses(pred, batch.image, critic_fn, epsilon, cfg.lambda_gp);
        critic_terms.disc.backward();
        opt_d->step();

        LossComponents c;
        c.l1 = edgelbam::l1_loss(pred, batch.image);
        c.adv = generator_adversarial_loss(pred, batch.image, critic_fn);
        c.perc = perceptual_loss(pred, batch.image, features);
        c.style = style_loss(pred, batch.image, features, cfg.style_spatial_normalization);
        const Tensor g_loss = total_loss(c, cfg.weights);
        opt_g->zero_grad();
        if (opt_m) opt_m->zero_grad();
        g_loss.backward();
        opt_g->step();
        if (opt_m) opt_m->step();
        net->project();

        if (should_log(cfg, step, total)) {
            LossRecord r{step,
                         c.l1.item<double>(),
                         c.adv.item<double>(),
                         c.perc.item<double>(),
                         c.style.item<double>(),
                         g_loss.item<double>(),
                         critic_terms.disc.item<double>(),
                         critic_terms.gp.item<double>()};
            log.write(to_row(r));
            outcome.losses.push_back(r);
        }
        if (should_report(step, total))
            std::cerr << "[" << kind << "] step " << step << "/" << total << " l1=" << c.l1.item<double>()
                      << " total=" << g_loss.item<double>() << '\n';
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != total) {
            save(outcome.run_dir / "checkpoints" / step_name(step), step);
            save(state_path, step);
        }
    }
    const int64_t final_step = std::max(start, total);
    save(state_path, final_step);
    outcome.checkpoint = state_path;
    if (joint_stage) {
        CheckpointMeta meta;
        meta.kind = "mecnet";
        meta.config = json{{"train", cfg.to_json()}, {"mecnet", config.at("mecnet")}};
        meta.step = final_step;
        outcome.mecnet_checkpoint = outcome.run_dir / "mecnet.ckpt";
        save_checkpoint(outcome.mecnet_checkpoint, meta, {{"mecnet", mecnet->get()}});
        meta.kind = "inpaint";
        meta.config = json{{"train", cfg.to_json()}, {"unet", config.at("unet")}};
        outcome.inpaint_checkpoint = outcome.run_dir / "inpaint.ckpt";
        save_checkpoint(outcome.inpaint_checkpoint, meta, {{"inpaint", net.get()}, {"critic", critic.get()}});
    } else {
        outcome.inpaint_checkpoint = state_path;
    }
    return outcome;
}

Tensor batch_of(const Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; }

Tensor edges_for(InpaintNet& net, std::optional<MECNet>& mecnet, const Tensor& image, const Tensor& mask,
                 const Tensor& edge_corrupt, const Tensor& fallback) {
    if (!net->traits().needs_edge) return {};
    if (mecnet) return (*mecnet)->forward(image, mask, edge_corrupt).edge_hat;
    return fallback;
}

}  // namespace

// ---- public training entry points ------------------------------------------------------

std::vector<LoadedImage> load_training_images(const TrainConfig& config) {
    if (config.manifest.empty()) throw std::invalid_argument("no manifest given");
    const auto entries = read_manifest(config.manifest);
    auto images = load_images(entries, config.preprocess(true), config.split);
    if (images.empty())
        throw std::invalid_argument("manifest '" + config.manifest + "' lists no usable images" +
                                    (config.split.empty() ? "" : " for split '" + config.split + "'"));
    return images;
}

TrainOutcome train_mecnet(const TrainConfig& config, const std::vector<LoadedImage>& images) {
    return run_mecnet(config, images);
}

TrainOutcome train_inpaint(const TrainConfig& config, const std::vector<LoadedImage>& images) {
    return run_inpaint(config, images, false);
}

TrainOutcome finetune_joint(const TrainConfig& config, const std::vector<LoadedImage>& images) {
    return run_inpaint(config, images, true);
}

InpaintNet load_inpaint_net(const fs::path& checkpoint) {
    const auto meta = read_checkpoint_meta(checkpoint);
    if (!meta.config.contains("unet"))
        throw std::runtime_error("checkpoint '" + checkpoint.string() + "' holds no inpainting network");
    InpaintNet net(unet_from_json(meta.config.at("unet")));
    load_checkpoint(checkpoint, {{"inpaint", net.get()}});
    net->eval();
    return net;
}

MECNet load_mecnet(const fs::path& checkpoint) {
    const auto meta = read_checkpoint_meta(checkpoint);
    if (!meta.config.contains("mecnet"))
        throw std::runtime_error("checkpoint '" + checkpoint.string() + "' holds no edge network");
    MECNet net(mecnet_from_json(meta.config.at("mecnet")));
    load_checkpoint(checkpoint, {{"mecnet", net.get()}});
    net->eval();
    return net;
}

EpochSampler::EpochSampler(size_t num_items, int64_t batch_size)
    : n_(num_items), batch_(std::min<int64_t>(batch_size, static_cast<int64_t>(num_items))) {
    require(num_items > 0 && batch_size > 0, "EpochSampler: need items and a positive batch size");
}

std::vector<size_t> EpochSampler::next(std::mt19937_64& rng) {
    std::vector<size_t> batch;
    while (static_cast<int64_t>(batch.size()) < batch_) {
        if (cursor_ >= static_cast<int64_t>(order_.size())) {
            order_.resize(n_);
            std::iota(order_.begin(), order_.end(), 0);
            std::shuffle(order_.begin(), order_.end(), rng);
            cursor_ = 0;
        }
        batch.push_back(static_cast<size_t>(order_[static_cast<size_t>(cursor_++)]));
    }
    return batch;
}

void EpochSampler::restore(std::vector<int64_t> order, int64_t cursor) {
    for (auto i : order) require(i >= 0 && static_cast<size_t>(i) < n_, "EpochSampler: order does not fit dataset");
    order_ = std::move(order);
    cursor_ = cursor;
}

// ---- evaluation ------------------------------------------------------------------------

EvalReport evaluate(const InpaintFn& model, const std::vector<LoadedImage>& images, const EvalOptions& options) {
    FeatureFn extractor = options.extractor;
    if (!extractor) extractor = as_feature_fn(FeaturePyramid());
    PreprocessOptions prep = options.preprocess;
    prep.random_crop = false;
    prep.flip = false;

    EvalReport report;
    torch::NoGradGuard guard;
    for (size_t b = 0; b < options.buckets.size(); ++b) {
        const RatioBucket& bucket = options.buckets[b];
        BucketAccumulator acc(bucket);
        for (const auto& img : images) {
            std::mt19937_64 unused(0);
            const Tensor gt = preprocess(img.image, prep, unused);
            Tensor mask;
            try {
                mask = generate_irregular_mask({bucket, eval_mask_seed(img.id, options.eval_seed, b)}, prep.crop);
            } catch (const std::invalid_argument& e) {
                std::cerr << "warning: no " << bucket.label() << " mask for '" << img.id << "': " << e.what() << '\n';
                continue;
            }
            const Sample sample = make_sample(gt, mask, options.canny);
            const Tensor pred = model(sample).detach().to(torch::kFloat32).clamp(0.0, 1.0);
            const Tensor out = composite(pred, gt, mask);
            const MaskedL1 l1 = masked_l1_pct(out, gt, mask);
            if (l1.undefined) std::cerr << "warning: '" << img.id << "' has no hole content, l1 counted as 0\n";
            acc.add(psnr(out, gt), ssim(out, gt), l1.undefined ? 0.0 : l1.percent,
                    perceptual_distance(out, gt, extractor));
        }
        if (acc.count() == 0) {
            std::cerr << "warning: bucket " << bucket.label() << " has no samples and is left out\n";
            continue;
        }
        report.buckets.push_back(acc.result());
    }
    return report;
}

InpaintFn make_inpaint_fn(InpaintNet net, std::optional<MECNet> mecnet) {
    net->eval();
    if (mecnet) (*mecnet)->eval();
    return [net, mecnet](const Sample& s) mutable {
        torch::NoGradGuard guard;
        const Tensor image = batch_of(s.image_gt);
        const Tensor mask = batch_of(s.mask);
        const Tensor corrupt = s.edge_corrupt.defined() ? batch_of(s.edge_corrupt) : Tensor{};
        const Tensor gt_edge = s.edge_gt.defined() ? batch_of(s.edge_gt) : Tensor{};
        const Tensor edge = edges_for(net, mecnet, image, mask, corrupt, gt_edge);
        return net->forward(image, mask, edge).prediction()[0];
    };
}

// ---- inference and visualisation --------------------------------------------------------

InferResult infer(InpaintNet net, const Tensor& image, const Tensor& mask, std::optional<MECNet> mecnet,
                  const Tensor& edge) {
    require(image.dim() == 3 && image.size(0) == 3, "infer: image must be [3, H, W]");
    require(mask.dim() == 3 && mask.size(0) == 1 && mask.size(1) == image.size(1) && mask.size(2) == image.size(2), "infer: mask must be [1, H, W]");
    torch::NoGradGuard guard;
    net->eval();
    if (mecnet) (*mecnet)->eval();
    const Tensor img = image.unsqueeze(0);
    const Tensor m = mask.unsqueeze(0);
    Tensor e;
    if (net->traits().needs_edge) {
        const Tensor corrupt = corrupted_edges(image, mask).unsqueeze(0);
        if (mecnet)
            e = (*mecnet)->forward(img, m, corrupt).edge_hat;
        else if (edge.defined())
            e = batch_of(edge);
        else
            e = corrupt;
    }
    const auto out = net->forward(img, m, e);
    InferResult r;
    r.prediction = out.prediction()[0];
    r.composited = out.composited[0];
    if (e.defined()) r.edge = e[0];
    return r;
}

std::vector<MaskPanel> mask_panels(InpaintNet net, const Tensor& image, const Tensor& mask, const Tensor& edge) {
    require(image.dim() == 3 && mask.dim() == 3, "mask_panels: expected [C, H, W] image and [1, H, W] mask");
    torch::NoGradGuard guard;
    net->eval();
    const int64_t h = image.size(1), w = image.size(2);
    const Tensor e = edge.defined() ? edge : corrupted_edges(image, mask);
    const auto out = net->forward(image.unsqueeze(0), mask.unsqueeze(0),
                                  net->traits().needs_edge ? batch_of(e) : Tensor{}, true);
    const auto maps = collect_mask_maps(out);
    auto upsample = [&](const Tensor& map) {
        return F::interpolate(batch_of(map).to(torch::kFloat32),
                              F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kNearest))[0];
    };
    std::vector<MaskPanel> panels;
    panels.push_back({"edge", batch_of(e).to(torch::kFloat32)[0].clamp(0.0, 1.0)});
    for (int layer : {1, 2, 3, 11, 12, 13}) {
        auto it = std::find_if(maps.begin(), maps.end(), [&](const auto& p) { return p.first == layer; });
        if (it == maps.end())
            throw std::invalid_argument("variant " + to_string(net->config().variant) + " has no mask map for layer " +
                                        std::to_string(layer));
        const std::string name = (layer <= 3 ? "forward_" : "reverse_") + std::to_string(layer);
        panels.push_back({name, upsample(it->second[0])});
    }
    return panels;
}

VisualizationFiles visualize_masks(InpaintNet net, const Tensor& image, const Tensor& mask, const Tensor& edge,
                                   const fs::path& out_dir) {
    const auto panels = mask_panels(std::move(net), image, mask, edge);
    fs::create_directories(out_dir);
    VisualizationFiles files;
    constexpr int64_t gap = 2;
    std::vector<Tensor> row;
    json names = json::array();
    for (size_t i = 0; i < panels.size(); ++i) {
        const fs::path p = out_dir / ("panel_" + std::to_string(i) + "_" + panels[i].name + ".png");
        save_image(p, panels[i].map);
        files.panels.push_back(p);
        names.push_back(panels[i].name);
        if (i > 0) row.push_back(torch::ones({1, panels[i].map.size(1), gap}));
        row.push_back(panels[i].map);
    }
    files.grid = out_dir / "mask_grid.png";
    save_image(files.grid, torch::cat(row, 2));

    // Vertical bar: top row is 1.0, bottom row 0.0.
    constexpr int64_t bar_h = 256, bar_w = 16;
    const Tensor ramp = torch::linspace(1.0, 0.0, bar_h).view({1, bar_h, 1}).expand({1, bar_h, bar_w}).contiguous();
    files.colorbar = out_dir / "colorbar.png";
    save_image(files.colorbar, ramp);

    files.legend = out_dir / "legend.json";
    write_json(files.legend, json{{"panels", names},
                                  {"grid", files.grid.filename().string()},
                                  {"panel_order", "left to right, separated by white 2-pixel columns"},
                                  {"value_range", {0.0, 1.0}},
                                  {"encoding", "8-bit gray, pixel = round(255 * value)"},
                                  {"colorbar", files.colorbar.filename().string()},
                                  {"colorbar_orientation", "top = 1.0, bottom = 0.0"}});
    return files;
}

RegionMeans region_means(const Tensor& map, const Tensor& mask) {
    require(map.dim() == 4 && mask.dim() == 4, "region_means: expected [N, 1, h, w] map and [N, 1, H, W] mask");
    const Tensor hole = F::adaptive_avg_pool2d(
        1.0 - mask.to(torch::kFloat64), F::AdaptiveAvgPool2dFuncOptions({map.size(2), map.size(3)}));
    const Tensor m = map.to(torch::kFloat64).amax(1, true);
    auto mean_where = [&](const Tensor& sel) {
        return sel.any().item<bool>() ? m.masked_select(sel).mean().item<double>()
                                      : std::numeric_limits<double>::quiet_NaN();
    };
    return {mean_where(hole > 0.5), mean_where(hole < 0.5)};
}

void write_loss_csv(const fs::path& path, const std::vector<LossRecord>& rows) {
    std::vector<std::vector<double>> data;
    for (const auto& r : rows) data.push_back(to_row(r));
    CsvLog log(path, kLossHeader, data);
}

std::vector<LossRecord> read_loss_csv(const fs::path& path) {
    std::vector<LossRecord> rows;
    for (const auto& v : read_csv_rows(path, 8)) rows.push_back(loss_record(v));
    return rows;
}

}  // namespace edgelbam
