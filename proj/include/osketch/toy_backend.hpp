// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "osketch/backend.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace osketch {

struct ToyBackendOptions {
    std::uint64_t seed = 0;
    int image_size = 8;  // square RGB input, must be even
    int token_dim = 16;
    int joint_dim = 8;
    int max_tokens = 77;
    int num_timesteps = 1000;
    // Zero bias in the instruction projection, making embed_instruction
    // invariant to positive rescaling of the learnable tokens.
    bool homogeneous = false;

    double latent_gain = 0.1;      // spectral scale of the z_t map
    double text_gain = 100.0;      // singular values of the instruction map
    double image_gain = 1.0;       // scale of the photo-latent map
    double bias_level = 4.0;       // RMS per-entry magnitude of the mean timestep bias
    double bias_jitter = 0.05;     // relative per-timestep variation of the bias
    double bias_leak = 0.05;       // RMS per-entry bias component outside the text subspace
    double codec_offset = 0.1;     // std of the codec bias
    double instruction_bias = 0.1; // std of the instruction projection bias
    double image_embed_bias = 0.05; // std of the image embedder bias
};

/// Every parameter of the toy model. Exposed so tests can re-evaluate the
/// model along an independent code path.
struct ToyParameters {
    Eigen::MatrixXd codec;             // n x n, orthonormal
    Eigen::VectorXd codec_bias;        // n
    Eigen::MatrixXd latent_map;        // A: n x n
    Eigen::MatrixXd text_map;          // B: n x token_dim
    Eigen::MatrixXd image_map;         // D: n x n
    Eigen::MatrixXd timestep_bias;     // (T + 1) x n, row t is u_t
    Eigen::MatrixXd image_embed;       // joint_dim x (3 * (s/2)^2)
    Eigen::VectorXd image_embed_bias;  // joint_dim
    Eigen::MatrixXd instruction_embed; // joint_dim x token_dim
    Eigen::VectorXd instruction_bias;  // joint_dim
    std::vector<Eigen::MatrixXd> perceptual;  // per layer: channels x 27 (3x3x3 patch)
};

/// Deterministic affine/linear stand-in for a pretrained editing model.
///
///   codec:      z = Q vec(x) + b,  x = Q^T (z - b)
///   denoiser:   eps_hat = A z_t + B pool(c) + D z_p + u_t   (pool = mean over all token rows)
///   image emb:  normalize(M avgpool2(x) + m)
///   instr. emb: normalize(W mean(learnable rows) + w)
///
/// Latent shape is (12, s/2, s/2), so the codec is square and orthonormal.
class ToyBackend final : public Backend {
public:
    explicit ToyBackend(const ToyBackendOptions& options = {});
    ToyBackend(const ToyBackendOptions& options, ToyParameters parameters);

    const BackendDescriptor& descriptor() const override { return descriptor_; }
    const ToyParameters& parameters() const { return params_; }
    const ToyBackendOptions& options() const { return options_; }

    LatentImage encode_image(const Image& image) const override;
    DecodedImage decode_latent(const LatentImage& z) const override;
    LatentImage predict_noise(const LatentImage& z_t, int t, const InstructionEmbedding& c, const LatentImage& z_p,
                              bool drop_text, bool drop_image) const override;
    TokenMatrix predict_noise_token_vjp(const LatentImage& z_t, int t, const InstructionEmbedding& c,
                                        const LatentImage& z_p,
                                        const Eigen::Ref<const Eigen::VectorXd>& upstream) const override;
    JointVector embed_image(const Image& image) const override;
    JointVector embed_instruction(const InstructionEmbedding& c) const override;
    TokenMatrix embed_instruction_vjp(const InstructionEmbedding& c,
                                      const Eigen::Ref<const Eigen::VectorXd>& upstream) const override;
    InstructionEmbedding init_instruction(const Image& sketch, InitMode mode, int n_learnable,
                                          std::uint64_t seed) const override;
    TokenMatrix embed_text(std::string_view text) const override;
    std::vector<FeatureMap> perceptual_features(const Image& image) const override;
    Eigen::VectorXd distribution_features(const Image& image) const override;

    /// Seeded table row for one word.
    Eigen::RowVectorXd word_embedding(std::string_view word) const;

    /// Phrase used by InitMode::fixed.
    static constexpr std::string_view kFixedInitPhrase = "a black and white pencil sketch of a face";
    static constexpr double kTokenInitStd = 0.02;
    static constexpr int kPerceptualLayers = 3;
    static constexpr int kPerceptualChannels = 8;

    static ToyParameters generate_parameters(const ToyBackendOptions& options);

private:
    void check_image(const Image& image, const char* what) const;
    Eigen::VectorXd instruction_pre_norm(const InstructionEmbedding& c, std::vector<int>& rows) const;

    ToyBackendOptions options_;
    BackendDescriptor descriptor_;
    ToyParameters params_;
};

/// 2x2 average pooling over an HWC image (odd trailing rows/cols averaged over what exists).
Image average_pool2(const Image& image);

/// Flattens an image in its storage (HWC) order.
Eigen::VectorXd vectorize(const Image& image);

}  // namespace osketch
