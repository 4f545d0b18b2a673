#pragma once

// Training stages, evaluation, mask-map visualisation and inference.

#include "edgelbam/checkpoint.hpp"
#include "edgelbam/metrics.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace edgelbam {

struct LossRecord {
    int64_t step = 0;
    double l1 = 0, adv = 0, perc = 0, style = 0, total = 0, disc = 0, gp = 0;
};

struct MecLossRecord {
    int64_t step = 0;
    double adv = 0, rec = 0, total = 0, disc = 0;
};

struct TrainOutcome {
    std::filesystem::path run_dir;
    std::filesystem::path checkpoint;          // full training state
    std::filesystem::path mecnet_checkpoint;   // joint stage: exported edge network
    std::filesystem::path inpaint_checkpoint;  // joint stage: exported inpainting network
    std::vector<LossRecord> losses;
    std::vector<MecLossRecord> mec_losses;
};

/// Decodes the manifest of `config` (optionally restricted to its split).
/// Throws when nothing usable is listed.
std::vector<LoadedImage> load_training_images(const TrainConfig& config);

/// Stage 1: edge completion network against its patch discriminator.
TrainOutcome train_mecnet(const TrainConfig& config, const std::vector<LoadedImage>& images);
/// Stage 2: inpainting network against the two-column critic, with ground
/// truth edges or edges predicted by a trained edge network.
TrainOutcome train_inpaint(const TrainConfig& config, const std::vector<LoadedImage>& images);
/// Stage 3: both networks; inpainting losses reach the edge network through
/// its prediction. With config.joint == false the edge network stays frozen.
TrainOutcome finetune_joint(const TrainConfig& config, const std::vector<LoadedImage>& images);

InpaintNet load_inpaint_net(const std::filesystem::path& checkpoint);
MECNet load_mecnet(const std::filesystem::path& checkpoint);

/// Keeps full-batch epochs over a dataset in a reproducible order.
class EpochSampler {
public:
    EpochSampler(size_t num_items, int64_t batch_size);
    std::vector<size_t> next(std::mt19937_64& rng);

    [[nodiscard]] const std::vector<int64_t>& order() const { return order_; }
    [[nodiscard]] int64_t cursor() const { return cursor_; }
    void restore(std::vector<int64_t> order, int64_t cursor);

private:
    size_t n_;
    int64_t batch_;
    std::vector<int64_t> order_;
    int64_t cursor_ = 0;
};

// ---- evaluation ------------------------------------------------------------

/// Produces the [3, H, W] prediction in [0, 1] for one sample; only the hole
/// content matters, the evaluator composites with the known pixels.
using InpaintFn = std::function<Tensor(const Sample& sample)>;

struct EvalOptions {
    uint64_t eval_seed = 0;
    std::vector<RatioBucket> buckets = standard_buckets();
    PreprocessOptions preprocess{};  // centre crops, no flips
    CannyParams canny{};
    FeatureFn extractor;             // defaults to the fixed-seed pyramid
};

/// Every image is evaluated once per bucket with a mask keyed by
/// (image id, eval seed, bucket). Buckets without samples are left out of the
/// report with a warning on stderr.
EvalReport evaluate(const InpaintFn& model, const std::vector<LoadedImage>& images, const EvalOptions& options);

/// Wraps trained networks as an InpaintFn. Edge variants take their edges
/// from `mecnet` when given, else from the ground truth.
InpaintFn make_inpaint_fn(InpaintNet net, std::optional<MECNet> mecnet = std::nullopt);

// ---- inference and visualisation --------------------------------------------

struct InferResult {
    Tensor composited;  // [3, H, W]
    Tensor prediction;  // [3, H, W], raw network output in [0, 1]
    Tensor edge;        // [1, H, W] edge map fed to the network (undefined for edge-free variants)
};

/// `image` [3, H, W] in [0, 1], `mask` [1, H, W]. Edges come from `mecnet`
/// when given, otherwise from `edge` when given, otherwise from the corrupted
/// image itself.
InferResult infer(InpaintNet net, const Tensor& image, const Tensor& mask, std::optional<MECNet> mecnet = std::nullopt,
                  const Tensor& edge = {});

struct MaskPanel {
    std::string name;
    Tensor map;  // [1, H, W] in [0, 1], upsampled to the image size
};

/// Edge panel, forward maps of layers 1..3 and reverse maps of layers 11..13.
std::vector<MaskPanel> mask_panels(InpaintNet net, const Tensor& image, const Tensor& mask, const Tensor& edge);

struct VisualizationFiles {
    std::vector<std::filesystem::path> panels;
    std::filesystem::path grid;
    std::filesystem::path colorbar;
    std::filesystem::path legend;
};

/// Writes each panel, a one-row grid of all panels (8-bit grayscale), a
/// color-bar image and a JSON legend describing value range and panel order.
VisualizationFiles visualize_masks(InpaintNet net, const Tensor& image, const Tensor& mask, const Tensor& edge,
                                   const std::filesystem::path& out_dir);

struct RegionMeans {
    double hole = 0.0;
    double known = 0.0;
};

/// Means of a [N, 1, h, w] map over the cells that are mostly hole / mostly
/// known in the full-resolution `mask`.
RegionMeans region_means(const Tensor& map, const Tensor& mask);

/// Writes loss rows as CSV (step,l1,adv,perc,style,total,disc,gp).
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& rows);
std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path);

}  // namespace edgelbam
