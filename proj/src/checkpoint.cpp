#include "edgelbam/checkpoint.hpp"

namespace edgelbam {

namespace fs = std::filesystem;
using torch::serialize::InputArchive;
using torch::serialize::OutputArchive;

void save_checkpoint(const fs::path& path, const CheckpointMeta& meta, const NamedModules& modules,
                     const NamedOptimizers& optimizers) {
    OutputArchive root;
    root.write("format_version", torch::tensor(kCheckpointVersion, torch::kInt64));
    root.write("kind", c10::IValue(meta.kind));
    root.write("config", c10::IValue(meta.config.dump()));
    root.write("step", torch::tensor(meta.step, torch::kInt64));
    root.write("rng", c10::IValue(meta.rng_state));
    root.write("sampler_order", torch::tensor(meta.sampler_order, torch::kInt64));
    root.write("sampler_cursor", torch::tensor(meta.sampler_cursor, torch::kInt64));
    for (const auto& [name, module] : modules) {
        OutputArchive sub;
        module->save(sub);
        root.write("module." + name, sub);
    }
    for (const auto& [name, optimizer] : optimizers) {
        OutputArchive sub;
        optimizer->save(sub);
        root.write("optim." + name, sub);
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    // Write then rename so an interrupted save never leaves a truncated file.
    const fs::path tmp = path.string() + ".tmp";
    root.save_to(tmp.string());
    fs::rename(tmp, path);
}

namespace {

InputArchive open_archive(const fs::path& path) {
    if (!fs::exists(path)) throw std::runtime_error("checkpoint '" + path.string() + "' does not exist");
    InputArchive archive;
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        throw std::runtime_error("checkpoint '" + path.string() + "' is not a readable archive");
    }
    return archive;
}

CheckpointMeta read_meta(InputArchive& archive, const fs::path& path) {
    CheckpointMeta meta;
    Tensor version;
    if (!archive.try_read("format_version", version))
        throw std::runtime_error("checkpoint '" + path.string() + "' has no format_version field");
    meta.version = version.item<int64_t>();
    if (meta.version != kCheckpointVersion)
        throw std::runtime_error("checkpoint '" + path.string() + "' has format version " +
                                 std::to_string(meta.version) + "; this build reads version " +
                                 std::to_string(kCheckpointVersion));
    c10::IValue value;
    archive.read("kind", value);
    meta.kind = value.toStringRef();
    archive.read("config", value);
    meta.config = json::parse(value.toStringRef());
    archive.read("rng", value);
    meta.rng_state = value.toStringRef();
    Tensor t;
    archive.read("step", t);
    meta.step = t.item<int64_t>();
    archive.read("sampler_order", t);
    t = t.contiguous();
    meta.sampler_order.assign(t.data_ptr<int64_t>(), t.data_ptr<int64_t>() + t.numel());
    archive.read("sampler_cursor", t);
    meta.sampler_cursor = t.item<int64_t>();
    return meta;
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const fs::path& path) {
    auto archive = open_archive(path);
    return read_meta(archive, path);
}

CheckpointMeta load_checkpoint(const fs::path& path, const NamedModules& modules, const NamedOptimizers& optimizers) {
    auto archive = open_archive(path);
    auto meta = read_meta(archive, path);
    for (const auto& [name, module] : modules) {
        InputArchive sub;
        if (!archive.try_read("module." + name, sub))
            throw std::runtime_error("checkpoint '" + path.string() + "' has no module '" + name + "'");
        module->load(sub);
    }
    for (const auto& [name, optimizer] : optimizers) {
        InputArchive sub;
        if (!archive.try_read("optim." + name, sub))
            throw std::runtime_error("checkpoint '" + path.string() + "' has no optimizer state '" + name + "'");
        optimizer->load(sub);
    }
    return meta;
}

bool checkpoint_has_module(const fs::path& path, const std::string& name) {
    auto archive = open_archive(path);
    InputArchive sub;
    return archive.try_read("module." + name, sub);
}

}  // namespace edgelbam
