// SPDX-License-Identifier: Apache-2.0
#include "osketch/toy_backend.hpp"

#include "osketch/errors.hpp"
#include "osketch/rng.hpp"

#include <algorithm>
#include <cmath>

namespace osketch {

namespace {

Eigen::MatrixXd gaussian_matrix(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols, double scale) {
    Rng rng(seed);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
    }
    return m;
}

Eigen::VectorXd gaussian_vector(std::uint64_t seed, Eigen::Index size, double scale) {
    return gaussian_matrix(seed, size, 1, scale).col(0);
}

// Orthonormal columns spanning a seeded random subspace (rows >= cols).
Eigen::MatrixXd orthonormal_columns(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian_matrix(seed, rows, cols, 1.0));
    return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
}

// Image with exactly three channels; grayscale input is replicated.
Image as_rgb(const Image& image) {
    if (image.channels == 3) return image;
    if (image.channels != 1) {
        throw ShapeError("expected a 1- or 3-channel image, got " + std::to_string(image.channels) + " channels");
    }
    Image rgb(image.height, image.width, 3);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        rgb.pixels[3 * i] = rgb.pixels[3 * i + 1] = rgb.pixels[3 * i + 2] = image.pixels[i];
    }
    return rgb;
}

FeatureMap project_patches(const Image& image, const Eigen::MatrixXd& projection) {
    FeatureMap features(static_cast<Eigen::Index>(image.height) * image.width, projection.rows());
    Eigen::VectorXd patch(27);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            int k = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                const int yy = std::clamp(y + dy, 0, image.height - 1);
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = std::clamp(x + dx, 0, image.width - 1);
                    for (int c = 0; c < 3; ++c) patch[k++] = image.at(yy, xx, c) - 0.5;
                }
            }
            features.row(static_cast<Eigen::Index>(y) * image.width + x) =
                (projection * patch).array().tanh().matrix().transpose();
        }
    }
    return features;
}

}  // namespace

Image average_pool2(const Image& image) {
    const int h = (image.height + 1) / 2;
    const int w = (image.width + 1) / 2;
    Image out(h, w, image.channels);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                double sum = 0.0;
                int count = 0;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const int yy = 2 * y + dy;
                        const int xx = 2 * x + dx;
                        if (yy < image.height && xx < image.width) {
                            sum += image.at(yy, xx, c);
                            ++count;
                        }
                    }
                }
                out.at(y, x, c) = sum / count;
            }
        }
    }
    return out;
}

Eigen::VectorXd vectorize(const Image& image) {
    return Eigen::Map<const Eigen::VectorXd>(image.pixels.data(), static_cast<Eigen::Index>(image.pixels.size()));
}

ToyParameters ToyBackend::generate_parameters(const ToyBackendOptions& o) {
    if (o.image_size <= 0 || o.image_size % 2 != 0) {
        throw ValidationError("backend.image_size", "toy backend needs a positive even image size");
    }
    if (o.token_dim <= 0 || o.joint_dim <= 0 || o.max_tokens <= 0 || o.num_timesteps <= 0) {
        throw ValidationError("backend", "toy backend dimensions must be > 0");
    }
    const Eigen::Index n = 3LL * o.image_size * o.image_size;
    const Eigen::Index k = o.token_dim;
    const Eigen::Index pooled = 3LL * (o.image_size / 2) * (o.image_size / 2);
    const Eigen::Index rank = std::min(n, k);
    const auto seed = [&](std::string_view label) { return derive_seed(o.seed, label); };

    ToyParameters p;
    p.codec = orthonormal_columns(seed("codec"), n, n);
    p.codec_bias = gaussian_vector(seed("codec.bias"), n, o.codec_offset);
    p.latent_map = gaussian_matrix(seed("denoiser.latent"), n, n, o.latent_gain / std::sqrt(static_cast<double>(n)));

    // The instruction enters through a rank-min(n, k) subspace with equal
    // singular values; the photo term and most of the timestep bias live in
    // that same subspace, so the learnable tokens can cancel them.
    Eigen::MatrixXd basis;
    if (n >= k) {
        basis = orthonormal_columns(seed("denoiser.text"), n, k);
        p.text_map = o.text_gain * basis;
    } else {
        basis = Eigen::MatrixXd::Identity(n, n);
        p.text_map = o.text_gain * orthonormal_columns(seed("denoiser.text"), k, n).transpose();
    }
    p.image_map = o.image_gain * basis *
                  gaussian_matrix(seed("denoiser.image"), rank, n, 1.0 / std::sqrt(static_cast<double>(n)));

    const double subspace_scale = o.bias_level * std::sqrt(static_cast<double>(n) / static_cast<double>(rank));
    const Eigen::VectorXd mean_bias = basis * gaussian_vector(seed("denoiser.bias.mean"), rank, subspace_scale);
    const Eigen::MatrixXd jitter =
        gaussian_matrix(seed("denoiser.bias.jitter"), o.num_timesteps + 1, rank, o.bias_jitter * subspace_scale);
    const Eigen::MatrixXd leak = gaussian_matrix(seed("denoiser.bias.leak"), o.num_timesteps + 1, n, o.bias_leak);
    p.timestep_bias = (jitter * basis.transpose()).rowwise() + mean_bias.transpose();
    p.timestep_bias += leak;

    p.image_embed =
        gaussian_matrix(seed("embed.image"), o.joint_dim, pooled, 1.0 / std::sqrt(static_cast<double>(pooled)));
    p.image_embed_bias = gaussian_vector(seed("embed.image.bias"), o.joint_dim, o.image_embed_bias);
    p.instruction_embed = gaussian_matrix(seed("embed.instruction"), o.joint_dim, k, 1.0);
    p.instruction_bias = o.homogeneous ? Eigen::VectorXd::Zero(o.joint_dim)
                                       : gaussian_vector(seed("embed.instruction.bias"), o.joint_dim,
                                                         o.instruction_bias);
    for (int layer = 0; layer < kPerceptualLayers; ++layer) {
        p.perceptual.push_back(gaussian_matrix(seed("perceptual." + std::to_string(layer)), kPerceptualChannels, 27,
                                               2.0 / std::sqrt(27.0)));
    }
    return p;
}

ToyBackend::ToyBackend(const ToyBackendOptions& options) : ToyBackend(options, generate_parameters(options)) {}

ToyBackend::ToyBackend(const ToyBackendOptions& options, ToyParameters parameters)
    : options_(options), params_(std::move(parameters)) {
    descriptor_.name = "toy";
    descriptor_.latent_shape = {12, options.image_size / 2, options.image_size / 2};
    descriptor_.image_height = options.image_size;
    descriptor_.image_width = options.image_size;
    descriptor_.image_channels = 3;
    descriptor_.token_dim = options.token_dim;
    descriptor_.joint_dim = options.joint_dim;
    descriptor_.max_tokens = options.max_tokens;
    descriptor_.num_timesteps = options.num_timesteps;
    descriptor_.deterministic = true;
    descriptor_.validate();

    const auto n = static_cast<Eigen::Index>(descriptor_.latent_shape.size());
    const bool ok = params_.codec.rows() == n && params_.codec.cols() == n && params_.codec_bias.size() == n &&
                    params_.latent_map.rows() == n && params_.latent_map.cols() == n &&
                    params_.text_map.rows() == n && params_.text_map.cols() == options.token_dim &&
                    params_.image_map.rows() == n && params_.image_map.cols() == n &&
                    params_.timestep_bias.rows() == options.num_timesteps + 1 && params_.timestep_bias.cols() == n &&
                    params_.image_embed.rows() == options.joint_dim &&
                    params_.image_embed_bias.size() == options.joint_dim &&
                    params_.instruction_embed.rows() == options.joint_dim &&
                    params_.instruction_embed.cols() == options.token_dim &&
                    params_.instruction_bias.size() == options.joint_dim &&
                    static_cast<int>(params_.perceptual.size()) == kPerceptualLayers;
    if (!ok) throw ShapeError("toy backend parameters do not match the descriptor");
}

void ToyBackend::check_image(const Image& image, const char* what) const {
    if (image.height != descriptor_.image_height || image.width != descriptor_.image_width ||
        image.channels != descriptor_.image_channels) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(descriptor_.image_height) + "x" +
                         std::to_string(descriptor_.image_width) + "x" + std::to_string(descriptor_.image_channels) +
                         " image, got " + std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                         std::to_string(image.channels));
    }
    require_finite(image, what);
}

LatentImage ToyBackend::encode_image(const Image& image) const {
    check_image(image, "encode_image");
    return {descriptor_.latent_shape, params_.codec * vectorize(image) + params_.codec_bias};
}

DecodedImage ToyBackend::decode_latent(const LatentImage& z) const {
    require_shape(z, descriptor_.latent_shape, "decode_latent");
    const Eigen::VectorXd x = params_.codec.transpose() * (z.data - params_.codec_bias);
    DecodedImage out{Image(descriptor_.image_height, descriptor_.image_width, descriptor_.image_channels), 0};
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        double v = x[i];
        if (std::isnan(v)) throw NonFiniteError("decode_latent: non-finite latent");
        if (v < 0.0 || v > 1.0) {
            v = std::clamp(v, 0.0, 1.0);
            ++out.clamped;
        }
        out.image.pixels[static_cast<std::size_t>(i)] = v;
    }
    return out;
}

LatentImage ToyBackend::predict_noise(const LatentImage& z_t, int t, const InstructionEmbedding& c,
                                      const LatentImage& z_p, bool drop_text, bool drop_image) const {
    require_shape(z_t, descriptor_.latent_shape, "predict_noise z_t");
    require_shape(z_p, descriptor_.latent_shape, "predict_noise z_p");
    if (t < 0 || t > descriptor_.num_timesteps) {
        throw TimestepError("timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(descriptor_.num_timesteps) + "]");
    }
    Eigen::VectorXd eps = params_.latent_map * z_t.data + params_.timestep_bias.row(t).transpose();
    if (!drop_text) {
        if (c.tokens.cols() != descriptor_.token_dim) throw ShapeError("predict_noise: instruction width mismatch");
        if (c.n_tokens() == 0) throw ShapeError("predict_noise: empty instruction");
        const Eigen::VectorXd pooled = c.tokens.colwise().mean().transpose();
        eps += params_.text_map * pooled;
    }
    if (!drop_image) eps += params_.image_map * z_p.data;
    return {descriptor_.latent_shape, std::move(eps)};
}

TokenMatrix ToyBackend::predict_noise_token_vjp(const LatentImage& z_t, int t, const InstructionEmbedding& c,
                                                const LatentImage& z_p,
                                                const Eigen::Ref<const Eigen::VectorXd>& upstream) const {
    require_shape(z_t, descriptor_.latent_shape, "predict_noise_token_vjp z_t");
    require_shape(z_p, descriptor_.latent_shape, "predict_noise_token_vjp z_p");
    if (t < 0 || t > descriptor_.num_timesteps) throw TimestepError("timestep out of range");
    if (upstream.size() != static_cast<Eigen::Index>(descriptor_.latent_shape.size())) {
        throw ShapeError("predict_noise_token_vjp: upstream size mismatch");
    }
    if (c.n_tokens() == 0) throw ShapeError("predict_noise_token_vjp: empty instruction");
    // eps_hat depends on each row only through the mean, so every row gets B^T g / n.
    const Eigen::RowVectorXd row = (params_.text_map.transpose() * upstream).transpose() / c.n_tokens();
    return row.replicate(c.n_tokens(), 1);
}

JointVector ToyBackend::embed_image(const Image& image) const {
    check_image(image, "embed_image");
    const Eigen::VectorXd v = params_.image_embed * vectorize(average_pool2(image)) + params_.image_embed_bias;
    const double norm = v.norm();
    if (!(norm > 0.0)) throw DegenerateDirectionError("embed_image: zero embedding");
    return {v / norm};
}

Eigen::VectorXd ToyBackend::instruction_pre_norm(const InstructionEmbedding& c, std::vector<int>& rows) const {
    if (c.tokens.cols() != descriptor_.token_dim) throw ShapeError("embed_instruction: instruction width mismatch");
    if (!c.tokens.allFinite()) throw NonFiniteError("embed_instruction: non-finite tokens");
    rows = c.learnable_rows();
    if (rows.empty()) {
        if (c.provenance == Provenance::caption_init || c.provenance == Provenance::random_init) {
            throw ValidationError("instruction.learnable_mask", "embed_instruction needs a learnable slice");
        }
        for (int i = 0; i < c.n_tokens(); ++i) rows.push_back(i);
    }
    if (rows.empty()) throw ShapeError("embed_instruction: empty instruction");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(descriptor_.token_dim);
    for (int r : rows) mean += c.tokens.row(r).transpose();
    mean /= static_cast<double>(rows.size());
    return params_.instruction_embed * mean + params_.instruction_bias;
}

JointVector ToyBackend::embed_instruction(const InstructionEmbedding& c) const {
    std::vector<int> rows;
    const Eigen::VectorXd v = instruction_pre_norm(c, rows);
    const double norm = v.norm();
    if (!(norm > 0.0)) throw DegenerateDirectionError("embed_instruction: zero embedding");
    return {v / norm};
}

TokenMatrix ToyBackend::embed_instruction_vjp(const InstructionEmbedding& c,
                                              const Eigen::Ref<const Eigen::VectorXd>& upstream) const {
    std::vector<int> rows;
    const Eigen::VectorXd v = instruction_pre_norm(c, rows);
    if (upstream.size() != v.size()) throw ShapeError("embed_instruction_vjp: upstream size mismatch");
    const double norm = v.norm();
    if (!(norm > 0.0)) throw DegenerateDirectionError("embed_instruction: zero embedding");
    const Eigen::VectorXd unit = v / norm;
    // Jacobian of v / |v| is (I - u u^T) / |v|.
    const Eigen::VectorXd dv = (upstream - unit * unit.dot(upstream)) / norm;
    const Eigen::RowVectorXd drow =
        (params_.instruction_embed.transpose() * dv).transpose() / static_cast<double>(rows.size());
    TokenMatrix grad = TokenMatrix::Zero(c.n_tokens(), descriptor_.token_dim);
    for (int r : rows) grad.row(r) = drow;
    return grad;
}

Eigen::RowVectorXd ToyBackend::word_embedding(std::string_view word) const {
    Rng rng(derive_seed(options_.seed, "token:" + std::string(word)));
    Eigen::RowVectorXd row(descriptor_.token_dim);
    for (Eigen::Index j = 0; j < row.size(); ++j) row[j] = kTokenInitStd * rng.normal();
    return row;
}

TokenMatrix ToyBackend::embed_text(std::string_view text) const {
    const auto words = tokenize_words(text);
    TokenMatrix rows(static_cast<Eigen::Index>(words.size()), descriptor_.token_dim);
    for (std::size_t i = 0; i < words.size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = word_embedding(words[i]);
    return rows;
}

InstructionEmbedding ToyBackend::init_instruction(const Image& sketch, InitMode mode, int n_learnable,
                                                  std::uint64_t seed) const {
    if (n_learnable < 1) throw ValidationError("invert.n_learnable", "must be >= 1");
    if (n_learnable > descriptor_.max_tokens) {
        throw TokenOverflowError("n_learnable " + std::to_string(n_learnable) + " exceeds max_tokens " +
                                 std::to_string(descriptor_.max_tokens));
    }
    require_finite(sketch, "init_instruction sketch");

    InstructionEmbedding e;
    e.learnable_mask.assign(static_cast<std::size_t>(n_learnable), true);
    switch (mode) {
        case InitMode::caption:
            throw UnsupportedError("caption initialization needs a captioner; the toy backend has none");
        case InitMode::fixed: {
            const TokenMatrix phrase = embed_text(kFixedInitPhrase);
            e.tokens.resize(n_learnable, descriptor_.token_dim);
            for (int i = 0; i < n_learnable; ++i) e.tokens.row(i) = phrase.row(i % phrase.rows());
            e.provenance = Provenance::caption_init;
            break;
        }
        case InitMode::random: {
            Rng rng(derive_seed(seed, "init.random"));
            e.tokens.resize(n_learnable, descriptor_.token_dim);
            for (Eigen::Index i = 0; i < e.tokens.rows(); ++i) {
                for (Eigen::Index j = 0; j < e.tokens.cols(); ++j) e.tokens(i, j) = kTokenInitStd * rng.normal();
            }
            e.provenance = Provenance::random_init;
            break;
        }
    }
    return e;
}

std::vector<FeatureMap> ToyBackend::perceptual_features(const Image& image) const {
    require_finite(image, "perceptual_features");
    if (image.height <= 0 || image.width <= 0) throw ShapeError("perceptual_features: empty image");
    Image level = as_rgb(image);
    std::vector<FeatureMap> layers;
    for (int layer = 0; layer < kPerceptualLayers; ++layer) {
        if (layer > 0) level = average_pool2(level);
        layers.push_back(project_patches(level, params_.perceptual[static_cast<std::size_t>(layer)]));
    }
    return layers;
}

Eigen::VectorXd ToyBackend::distribution_features(const Image& image) const {
    const auto layers = perceptual_features(image);
    Eigen::VectorXd pooled(kPerceptualLayers * kPerceptualChannels);
    for (int layer = 0; layer < kPerceptualLayers; ++layer) {
        pooled.segment(layer * kPerceptualChannels, kPerceptualChannels) =
            layers[static_cast<std::size_t>(layer)].colwise().mean().transpose();
    }
    return pooled;
}

}  // namespace osketch
