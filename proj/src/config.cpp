#include "edgelbam/config.hpp"

#include <cstdlib>
#include <fstream>

namespace edgelbam {

namespace fs = std::filesystem;

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::mecnet: return "mecnet";
        case Stage::inpaint: return "inpaint";
        case Stage::joint: return "joint";
    }
    throw std::logic_error("unknown stage");
}

Stage parse_stage(const std::string& name) {
    if (name == "mecnet") return Stage::mecnet;
    if (name == "inpaint") return Stage::inpaint;
    if (name == "joint") return Stage::joint;
    throw std::invalid_argument("unknown stage '" + name + "' (mecnet, inpaint, joint)");
}

std::string to_string(EdgeSource source) {
    return source == EdgeSource::ground_truth ? "ground_truth" : "mecnet";
}

EdgeSource parse_edge_source(const std::string& name) {
    if (name == "ground_truth") return EdgeSource::ground_truth;
    if (name == "mecnet" || name == "mecnet_checkpoint") return EdgeSource::mecnet;
    throw std::invalid_argument("unknown edge source '" + name + "' (ground_truth, mecnet)");
}

TrainConfig TrainConfig::defaults(Stage stage) {
    TrainConfig c;
    c.stage = stage;
    switch (stage) {
        case Stage::mecnet:
            c.lr = 1e-4;
            c.adam_beta1 = 0.1;
            // The PatchGAN has no spectral norm, so at the generator's rate its
            // features (and the feature-matching loss on them) grow without bound.
            c.critic_lr = 5e-6;
            c.epochs = 400;
            break;
        case Stage::inpaint:
            c.lr = 2.5e-5;
            c.adam_beta1 = 0.5;
            c.critic_lr = 2.5e-5;
            c.epochs = 400;
            break;
        case Stage::joint:
            c.lr = 1e-5;
            c.adam_beta1 = 0.5;
            c.critic_lr = 1e-5;
            c.epochs = 100;
            break;
    }
    return c;
}

json TrainConfig::to_json() const {
    return json{
        {"stage", to_string(stage)},
        {"lr", lr},
        {"adam_beta1", adam_beta1},
        {"adam_beta2", adam_beta2},
        {"critic_lr", critic_lr},
        {"batch_size", batch_size},
        {"epochs", epochs},
        {"iterations", iterations},
        {"variant", to_string(variant)},
        {"mec_variant", to_string(mec_variant)},
        {"seed", seed},
        {"desk_scale", desk_scale},
        {"edge_source", to_string(edge_source)},
        {"joint", joint},
        {"overfit", overfit},
        {"manifest", manifest},
        {"split", split},
        {"run_name", run_name},
        {"run_root", run_root},
        {"mecnet_checkpoint", mecnet_checkpoint},
        {"inpaint_checkpoint", inpaint_checkpoint},
        {"resume", resume},
        {"log_every", log_every},
        {"checkpoint_every", checkpoint_every},
        {"loss_weights", {{"l1", weights.l1}, {"adv", weights.adv}, {"perc", weights.perc}, {"style", weights.style}}},
        {"lambda_gp", lambda_gp},
        {"alpha_r", alpha_r},
        {"style_spatial_normalization", style_spatial_normalization},
        {"perceptual_weights", perceptual_weights},
    };
}

void TrainConfig::apply(const json& patch) {
    require(patch.is_object(), "config: expected a JSON object");
    for (const auto& [key, value] : patch.items()) {
        try {
            if (key == "stage") stage = parse_stage(value.get<std::string>());
            else if (key == "lr") lr = value.get<double>();
            else if (key == "adam_beta1") adam_beta1 = value.get<double>();
            else if (key == "adam_beta2") adam_beta2 = value.get<double>();
            else if (key == "critic_lr") critic_lr = value.get<double>();
            else if (key == "batch_size") batch_size = value.get<int64_t>();
            else if (key == "epochs") epochs = value.get<int64_t>();
            else if (key == "iterations") iterations = value.get<int64_t>();
            else if (key == "variant") variant = parse_variant(value.get<std::string>());
            else if (key == "mec_variant") mec_variant = parse_mec_variant(value.get<std::string>());
            else if (key == "seed") seed = value.get<uint64_t>();
            else if (key == "desk_scale") desk_scale = value.get<bool>();
            else if (key == "edge_source") edge_source = parse_edge_source(value.get<std::string>());
            else if (key == "joint") joint = value.get<bool>();
            else if (key == "overfit") overfit = value.get<bool>();
            else if (key == "manifest") manifest = value.get<std::string>();
            else if (key == "split") split = value.get<std::string>();
            else if (key == "run_name") run_name = value.get<std::string>();
            else if (key == "run_root") run_root = value.get<std::string>();
            else if (key == "mecnet_checkpoint") mecnet_checkpoint = value.get<std::string>();
            else if (key == "inpaint_checkpoint") inpaint_checkpoint = value.get<std::string>();
            else if (key == "resume") resume = value.get<std::string>();
            else if (key == "log_every") log_every = value.get<int64_t>();
            else if (key == "checkpoint_every") checkpoint_every = value.get<int64_t>();
            else if (key == "lambda_gp") lambda_gp = value.get<double>();
            else if (key == "alpha_r") alpha_r = value.get<double>();
            else if (key == "style_spatial_normalization") style_spatial_normalization = value.get<bool>();
            else if (key == "perceptual_weights") perceptual_weights = value.get<std::string>();
            else if (key == "loss_weights") {
                require(value.is_object(), "loss_weights must be an object");
                for (const auto& [k, v] : value.items()) {
                    if (k == "l1") weights.l1 = v.get<double>();
                    else if (k == "adv") weights.adv = v.get<double>();
                    else if (k == "perc") weights.perc = v.get<double>();
                    else if (k == "style") weights.style = v.get<double>();
                    else throw std::invalid_argument("unknown loss weight '" + k + "'");
                }
            } else if (key.rfind("loss_weights.", 0) == 0) {
                apply(json{{"loss_weights", {{key.substr(13), value}}}});
            } else {
                throw std::invalid_argument("unknown config key '" + key + "'");
            }
        } catch (const json::exception& e) {
            throw std::invalid_argument("config key '" + key + "': " + e.what());
        }
    }
    require(lr > 0 && critic_lr > 0, "config: learning rates must be positive");
    require(batch_size > 0, "config: batch_size must be positive");
    require(epochs >= 0 && iterations >= 0, "config: negative budget");
    require(log_every > 0, "config: log_every must be positive");
}

TrainConfig TrainConfig::from_json(const json& doc) {
    require(doc.is_object(), "config: expected a JSON object");
    Stage stage = Stage::inpaint;
    if (doc.contains("stage")) stage = parse_stage(doc.at("stage").get<std::string>());
    auto c = defaults(stage);
    c.apply(doc);
    return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config '" + path.string() + "': " + e.what());
    }
}

void TrainConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    require(eq != std::string::npos && eq > 0, "override must look like key=value, got '" + assignment + "'");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (value.is_discarded()) value = text;
    apply(json{{key, value}});
}

UNetConfig TrainConfig::unet() const {
    auto c = desk_scale ? UNetConfig::desk(variant) : UNetConfig{};
    c.variant = variant;
    return c;
}

MECNetConfig TrainConfig::mecnet() const {
    auto c = desk_scale ? MECNetConfig::desk(mec_variant) : MECNetConfig{};
    c.variant = mec_variant;
    return c;
}

PreprocessOptions TrainConfig::preprocess(bool training) const {
    auto o = desk_scale ? PreprocessOptions::desk() : PreprocessOptions{};
    o.random_crop = training && !overfit;
    o.flip = training && !overfit;
    return o;
}

int64_t TrainConfig::total_iterations(size_t num_images) const {
    if (iterations > 0) return iterations;
    const auto n = static_cast<int64_t>(num_images);
    return epochs * ((n + batch_size - 1) / batch_size);
}

json to_json(const UNetConfig& c) {
    return json{{"num_layers", c.num_layers},
                {"channels", c.channels},
                {"image_size", c.image_size},
                {"image_channels", c.image_channels},
                {"variant", to_string(c.variant)},
                {"attention",
                 {{"a", c.attention.a},
                  {"mu", c.attention.mu},
                  {"gamma_l", c.attention.gamma_l},
                  {"gamma_r", c.attention.gamma_r},
                  {"alpha", c.attention.alpha}}},
                {"leaky_slope", c.leaky_slope}};
}

UNetConfig unet_from_json(const json& doc) {
    UNetConfig c;
    c.num_layers = doc.at("num_layers").get<int64_t>();
    c.channels = doc.at("channels").get<std::vector<int64_t>>();
    c.image_size = doc.at("image_size").get<int64_t>();
    c.image_channels = doc.at("image_channels").get<int64_t>();
    c.variant = parse_variant(doc.at("variant").get<std::string>());
    const auto& a = doc.at("attention");
    c.attention = {a.at("a").get<double>(), a.at("mu").get<double>(), a.at("gamma_l").get<double>(),
                   a.at("gamma_r").get<double>(), a.at("alpha").get<double>()};
    c.leaky_slope = doc.at("leaky_slope").get<double>();
    c.validate();
    return c;
}

json to_json(const MECNetConfig& c) {
    return json{{"scales", c.scales},
                {"blocks_per_branch", c.blocks_per_branch},
                {"base_channels", c.base_channels},
                {"image_size", c.image_size},
                {"variant", to_string(c.variant)}};
}

MECNetConfig mecnet_from_json(const json& doc) {
    MECNetConfig c;
    c.scales = doc.at("scales").get<std::vector<int64_t>>();
    c.blocks_per_branch = doc.at("blocks_per_branch").get<int64_t>();
    c.base_channels = doc.at("base_channels").get<int64_t>();
    c.image_size = doc.at("image_size").get<int64_t>();
    c.variant = parse_mec_variant(doc.at("variant").get<std::string>());
    c.validate();
    return c;
}

fs::path resolve_run_dir(const TrainConfig& config) {
    fs::path root = "runs";
    if (!config.run_root.empty()) root = config.run_root;
    if (const char* env = std::getenv(kRunRootEnv); env != nullptr && *env != '\0') root = env;
    const std::string name =
        config.run_name.empty() ? to_string(config.stage) + "-seed" + std::to_string(config.seed) : config.run_name;
    return root / name;
}

}  // namespace edgelbam
