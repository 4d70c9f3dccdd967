// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "osketch/tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace osketch {

struct BackendDescriptor {
    std::string name;
    LatentShape latent_shape;
    int image_height = 0;
    int image_width = 0;
    int image_channels = 3;
    int token_dim = 0;
    int joint_dim = 0;
    int max_tokens = 0;
    int num_timesteps = 1000;
    bool deterministic = false;

    /// Throws ValidationError if any dimension is not strictly positive.
    void validate() const;
};

/// Vector in the joint image-text embedding space.
struct JointVector {
    Eigen::VectorXd data;
};

using TokenMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Provenance : std::uint8_t { caption_init = 0, random_init = 1, loaded = 2, hybrid = 3 };

std::string_view to_string(Provenance p);

/// The optimization variable: one row per token, with a mask selecting the
/// rows the optimizer may move. Frozen rows never change.
struct InstructionEmbedding {
    TokenMatrix tokens;
    std::vector<bool> learnable_mask;
    Provenance provenance = Provenance::random_init;

    int n_tokens() const { return static_cast<int>(tokens.rows()); }
    int token_dim() const { return static_cast<int>(tokens.cols()); }
    int n_learnable() const;
    std::vector<int> learnable_rows() const;

    /// Structural checks against a backend: width, token budget, mask length,
    /// non-empty learnable slice where provenance requires one, finite values.
    void validate(const BackendDescriptor& backend) const;
};

enum class InitMode { caption, fixed, random };

std::string_view to_string(InitMode mode);
InitMode parse_init_mode(std::string_view text);

struct DecodedImage {
    Image image;
    std::size_t clamped = 0;  // samples pulled back into [0, 1]
};

/// One layer of perceptual features: rows are spatial positions, columns channels.
using FeatureMap = Eigen::MatrixXd;

/// Adapter over every pretrained component the method touches: latent codec,
/// conditional denoiser, joint image-text embedder, text embedding table and
/// the feature extractors used by the metrics. Implementations are immutable
/// after construction and safe to share across threads.
class Backend {
public:
    virtual ~Backend() = default;

    virtual const BackendDescriptor& descriptor() const = 0;

    virtual LatentImage encode_image(const Image& image) const = 0;
    virtual DecodedImage decode_latent(const LatentImage& z) const = 0;

    /// Conditional noise prediction. `drop_text` / `drop_image` null the
    /// instruction and photo conditions for classifier-free guidance.
    virtual LatentImage predict_noise(const LatentImage& z_t, int t, const InstructionEmbedding& c,
                                      const LatentImage& z_p, bool drop_text, bool drop_image) const = 0;

    /// Vector-Jacobian product of predict_noise (text and image conditions
    /// active) with respect to every token row: returns d<upstream, eps_hat>/d tokens.
    virtual TokenMatrix predict_noise_token_vjp(const LatentImage& z_t, int t, const InstructionEmbedding& c,
                                                const LatentImage& z_p,
                                                const Eigen::Ref<const Eigen::VectorXd>& upstream) const = 0;

    /// Unit-norm joint-space embedding of an image.
    virtual JointVector embed_image(const Image& image) const = 0;

    /// Unit-norm joint-space embedding of an instruction.
    virtual JointVector embed_instruction(const InstructionEmbedding& c) const = 0;

    /// d<upstream, embed_instruction(c)>/d tokens.
    virtual TokenMatrix embed_instruction_vjp(const InstructionEmbedding& c,
                                              const Eigen::Ref<const Eigen::VectorXd>& upstream) const = 0;

    virtual InstructionEmbedding init_instruction(const Image& sketch, InitMode mode, int n_learnable,
                                                  std::uint64_t seed) const = 0;

    /// Token rows for free text through the frozen text-embedding table.
    virtual TokenMatrix embed_text(std::string_view text) const = 0;

    /// Multi-layer features for the perceptual distance. The default throws UnsupportedError.
    virtual std::vector<FeatureMap> perceptual_features(const Image& image) const;

    /// Pooled features for the Frechet distance. The default throws UnsupportedError.
    virtual Eigen::VectorXd distribution_features(const Image& image) const;
};

/// Descriptor defaults for a pretrained instruction-following editing model.
BackendDescriptor pretrained_descriptor_defaults();

struct BackendSpec {
    std::string name = "toy";
    std::uint64_t seed = 0;
    std::string checkpoint;
    int image_size = 8;  // toy only
};

using BackendFactory = std::function<std::shared_ptr<const Backend>(const BackendSpec&)>;

/// Registers an adapter under `name`, replacing any previous registration.
void register_backend_factory(const std::string& name, BackendFactory factory);

/// Builds the backend named in `spec`. "toy" is always available; "pretrained"
/// requires a registered adapter and a checkpoint that resolves to a path
/// (directly or under $OSS_CACHE).
std::shared_ptr<const Backend> make_backend(const BackendSpec& spec);

/// Resolves a checkpoint identifier to an existing path; throws IoError otherwise.
std::string resolve_checkpoint(const std::string& checkpoint);

/// Splits free text into lowercase word tokens (whitespace and punctuation separate words).
std::vector<std::string> tokenize_words(std::string_view text);

}  // namespace osketch
