#pragma once

// Run configuration: a JSON document with a fixed key set, plus key=value
// overrides from the command line.

#include "edgelbam/data.hpp"
#include "edgelbam/inpaint_net.hpp"
#include "edgelbam/losses.hpp"
#include "edgelbam/mecnet.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace edgelbam {

using json = nlohmann::json;

enum class Stage { mecnet, inpaint, joint };
enum class EdgeSource { ground_truth, mecnet };

std::string to_string(Stage stage);
Stage parse_stage(const std::string& name);
std::string to_string(EdgeSource source);
EdgeSource parse_edge_source(const std::string& name);

/// Name of the environment variable holding the run root directory.
inline constexpr const char* kRunRootEnv = "EDGELBAM_RUN_ROOT";

struct TrainConfig {
    Stage stage = Stage::inpaint;
    double lr = 2.5e-5;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double critic_lr = 2.5e-5;       // discriminator / critic
    int64_t batch_size = 8;
    int64_t epochs = 400;
    int64_t iterations = 0;          // > 0 replaces the epoch budget
    Variant variant = Variant::EdgeLBAM;
    MECVariant mec_variant = MECVariant::full;
    uint64_t seed = 0;
    bool desk_scale = false;
    EdgeSource edge_source = EdgeSource::ground_truth;
    bool joint = true;               // joint stage: update the edge network too
    bool overfit = false;            // fixed crops and masks, no flips

    std::string manifest;
    std::string split;               // manifest split tag to train on (empty: all)
    std::string run_name;
    std::string run_root;            // overridden by the environment variable
    std::string mecnet_checkpoint;   // edge source / joint stage input
    std::string inpaint_checkpoint;  // initial weights / joint stage input
    std::string resume;              // continue a run from its checkpoint

    int64_t log_every = 1;
    int64_t checkpoint_every = 0;    // 0: final checkpoint only

    LossWeights weights{};
    double lambda_gp = 10.0;
    double alpha_r = 10.0;
    bool style_spatial_normalization = false;  // divide Gram matrices by H*W
    std::string perceptual_weights;  // archive with pretrained pyramid weights

    /// Defaults of a stage (learning rates, betas).
    static TrainConfig defaults(Stage stage);

    [[nodiscard]] json to_json() const;
    /// Starts from `defaults(stage)` (stage taken from the document when
    /// present) and applies every key; unknown keys are rejected.
    static TrainConfig from_json(const json& doc);
    static TrainConfig load(const std::filesystem::path& path);

    /// "key=value"; the value is parsed as JSON when possible, else taken as
    /// a string.
    void apply_override(const std::string& assignment);
    void apply(const json& patch);

    [[nodiscard]] UNetConfig unet() const;
    [[nodiscard]] MECNetConfig mecnet() const;
    [[nodiscard]] PreprocessOptions preprocess(bool training) const;
    [[nodiscard]] int64_t image_size() const { return desk_scale ? 64 : 256; }
    /// Iteration budget for a dataset of `num_images`.
    [[nodiscard]] int64_t total_iterations(size_t num_images) const;
};

json to_json(const UNetConfig& config);
UNetConfig unet_from_json(const json& doc);
json to_json(const MECNetConfig& config);
MECNetConfig mecnet_from_json(const json& doc);

/// Run directory: $EDGELBAM_RUN_ROOT (or config.run_root, or "runs") joined
/// with the run name.
std::filesystem::path resolve_run_dir(const TrainConfig& config);

}  // namespace edgelbam
