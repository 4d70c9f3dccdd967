// SPDX-License-Identifier: Apache-2.0
#include "osketch/backend.hpp"

#include "osketch/errors.hpp"
#include "osketch/toy_backend.hpp"

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>

namespace osketch {

void BackendDescriptor::validate() const {
    auto positive = [](int value, const char* field) {
        if (value <= 0) throw ValidationError(std::string("backend.") + field, "must be > 0");
    };
    positive(latent_shape.channels, "latent_shape.channels");
    positive(latent_shape.height, "latent_shape.height");
    positive(latent_shape.width, "latent_shape.width");
    positive(image_height, "image_height");
    positive(image_width, "image_width");
    positive(image_channels, "image_channels");
    positive(token_dim, "token_dim");
    positive(joint_dim, "joint_dim");
    positive(max_tokens, "max_tokens");
    positive(num_timesteps, "num_timesteps");
}

std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::caption_init: return "caption_init";
        case Provenance::random_init: return "random_init";
        case Provenance::loaded: return "loaded";
        case Provenance::hybrid: return "hybrid";
    }
    return "unknown";
}

std::string_view to_string(InitMode mode) {
    switch (mode) {
        case InitMode::caption: return "caption";
        case InitMode::fixed: return "fixed";
        case InitMode::random: return "random";
    }
    return "unknown";
}

InitMode parse_init_mode(std::string_view text) {
    if (text == "caption") return InitMode::caption;
    if (text == "fixed") return InitMode::fixed;
    if (text == "random") return InitMode::random;
    throw ValidationError("invert.init", "expected one of caption|fixed|random, got '" + std::string(text) + "'");
}

int InstructionEmbedding::n_learnable() const {
    int count = 0;
    for (bool b : learnable_mask) count += b ? 1 : 0;
    return count;
}

std::vector<int> InstructionEmbedding::learnable_rows() const {
    std::vector<int> rows;
    for (std::size_t i = 0; i < learnable_mask.size(); ++i) {
        if (learnable_mask[i]) rows.push_back(static_cast<int>(i));
    }
    return rows;
}

void InstructionEmbedding::validate(const BackendDescriptor& backend) const {
    if (tokens.cols() != backend.token_dim) {
        throw ShapeError("instruction token width " + std::to_string(tokens.cols()) + " != backend token_dim " +
                         std::to_string(backend.token_dim));
    }
    if (n_tokens() > backend.max_tokens) {
        throw TokenOverflowError("instruction has " + std::to_string(n_tokens()) + " tokens, backend allows " +
                                 std::to_string(backend.max_tokens));
    }
    if (learnable_mask.size() != static_cast<std::size_t>(n_tokens())) {
        throw ShapeError("learnable mask length " + std::to_string(learnable_mask.size()) + " != token count " +
                         std::to_string(n_tokens()));
    }
    const bool needs_slice = provenance == Provenance::caption_init || provenance == Provenance::random_init;
    if (needs_slice && n_learnable() == 0) {
        throw ValidationError("instruction.learnable_mask", "no learnable tokens for a freshly initialized instruction");
    }
    if (!tokens.allFinite()) throw NonFiniteError("instruction tokens contain non-finite values");
}

std::vector<FeatureMap> Backend::perceptual_features(const Image&) const {
    throw UnsupportedError("backend '" + descriptor().name + "' has no perceptual feature adapter");
}

Eigen::VectorXd Backend::distribution_features(const Image&) const {
    throw UnsupportedError("backend '" + descriptor().name + "' has no distribution feature adapter");
}

BackendDescriptor pretrained_descriptor_defaults() {
    BackendDescriptor d;
    d.name = "pretrained";
    d.latent_shape = {4, 64, 64};
    d.image_height = 512;
    d.image_width = 512;
    d.image_channels = 3;
    d.token_dim = 768;
    d.joint_dim = 768;
    d.max_tokens = 77;
    d.num_timesteps = 1000;
    d.deterministic = false;
    return d;
}

namespace {

std::mutex& registry_mutex() {
    static std::mutex m;
    return m;
}

std::map<std::string, BackendFactory>& registry() {
    static std::map<std::string, BackendFactory> factories;
    return factories;
}

}  // namespace

void register_backend_factory(const std::string& name, BackendFactory factory) {
    std::lock_guard lock(registry_mutex());
    registry()[name] = std::move(factory);
}

std::string resolve_checkpoint(const std::string& checkpoint) {
    namespace fs = std::filesystem;
    if (checkpoint.empty()) throw ValidationError("backend.checkpoint", "required for the pretrained backend");
    if (fs::exists(checkpoint)) return checkpoint;
    if (const char* cache = std::getenv("OSS_CACHE"); cache != nullptr && *cache != '\0') {
        const fs::path candidate = fs::path(cache) / checkpoint;
        if (fs::exists(candidate)) return candidate.string();
    }
    throw IoError("checkpoint '" + checkpoint + "' not found (also looked under $OSS_CACHE)");
}

std::shared_ptr<const Backend> make_backend(const BackendSpec& spec) {
    if (spec.name == "toy") {
        ToyBackendOptions options;
        options.seed = spec.seed;
        options.image_size = spec.image_size;
        return std::make_shared<ToyBackend>(options);
    }
    BackendSpec resolved = spec;
    if (spec.name == "pretrained") resolved.checkpoint = resolve_checkpoint(spec.checkpoint);
    BackendFactory factory;
    {
        std::lock_guard lock(registry_mutex());
        if (auto it = registry().find(spec.name); it != registry().end()) factory = it->second;
    }
    if (!factory) {
        throw UnsupportedError("no adapter registered for backend '" + spec.name +
                               "'; register one with register_backend_factory()");
    }
    return factory(resolved);
}

std::vector<std::string> tokenize_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c >= 0x80 || ch == '\'') {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            words.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

}  // namespace osketch
