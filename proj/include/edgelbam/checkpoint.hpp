#pragma once

// Versioned checkpoint container.
//
// Layout (a torch serialization archive):
//   format_version   int64 tensor
//   kind             string: "mecnet", "inpaint" or "joint"
//   config           string: JSON with the model configuration(s) and the
//                    training configuration
//   step             int64 tensor
//   rng              string: state of the training random engine
//   sampler_order    int64 tensor, sampler_cursor int64 tensor
//   module.<name>    sub-archive with parameters and buffers
//   optim.<name>     sub-archive with optimizer state

#include "edgelbam/config.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace edgelbam {

inline constexpr int64_t kCheckpointVersion = 1;

struct CheckpointMeta {
    int64_t version = kCheckpointVersion;
    std::string kind;
    json config;
    int64_t step = 0;
    std::string rng_state;
    std::vector<int64_t> sampler_order;
    int64_t sampler_cursor = 0;
};

using NamedModules = std::vector<std::pair<std::string, torch::nn::Module*>>;
using NamedOptimizers = std::vector<std::pair<std::string, torch::optim::Optimizer*>>;

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta, const NamedModules& modules,
                     const NamedOptimizers& optimizers = {});

/// Reads the header only. Throws std::runtime_error for unreadable files and
/// for unsupported format versions.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// Restores the named modules (and optimizers) in place; every name must be
/// present in the file.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, const NamedModules& modules,
                               const NamedOptimizers& optimizers = {});

bool checkpoint_has_module(const std::filesystem::path& path, const std::string& name);

}  // namespace edgelbam
