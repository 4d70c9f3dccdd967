// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "osketch/backend.hpp"
#include "osketch/diffusion.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace osketch {

/// Direction from the photo to the sketch in the joint embedding space.
/// Not re-normalized; `norm` keeps its magnitude for diagnostics.
struct EditDirection {
    Eigen::VectorXd data;
    double norm = 0.0;
};

inline constexpr double kDegenerateDirectionNorm = 1e-8;

/// `align` minimizes 1 - cos; `paper_literal` minimizes +cos as literally written.
enum class EditSign { align, paper_literal };
enum class RecNorm { l2, l2_squared };

std::string_view to_string(EditSign sign);
std::string_view to_string(RecNorm norm);
EditSign parse_edit_sign(std::string_view text);
RecNorm parse_rec_norm(std::string_view text);

struct LossWeights {
    double lambda_rec = 4.0;
    double lambda_edit = 0.1;
    EditSign edit_sign = EditSign::align;

    void validate() const;
};

struct OptimizeConfig {
    int n_steps = 12000;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    int log_every = 100;
    RecNorm rec_norm = RecNorm::l2_squared;
    double divergence_threshold = 1e6;

    void validate() const;
};

struct TraceRecord {
    int step = 0;
    double loss_total = 0.0;
    double loss_rec = 0.0;
    double loss_edit = 0.0;
    double grad_norm = 0.0;
    double edit_cosine = 0.0;
    double wall_ms = 0.0;
};

struct OptimizationTrace {
    std::vector<TraceRecord> records;
};

/// One JSON object per line, no trailing newline.
std::string to_json_line(const TraceRecord& record);

struct LossAndGrad {
    double loss = 0.0;
    TokenMatrix grad;  // d loss / d tokens, one row per token
};

EditDirection compute_edit_direction(const Backend& backend, const Image& photo, const Image& sketch);

double loss_rec(const Backend& backend, const InstructionEmbedding& c, const LatentImage& z_s, const LatentImage& z_p,
                int t, const LatentImage& eps, const NoiseSchedule& s, RecNorm norm = RecNorm::l2_squared);

LossAndGrad rec_loss_and_grad(const Backend& backend, const InstructionEmbedding& c, const LatentImage& z_s,
                              const LatentImage& z_p, int t, const LatentImage& eps, const NoiseSchedule& s,
                              RecNorm norm = RecNorm::l2_squared);

/// cos(d, embed_instruction(c)) as a normalized inner product.
double edit_cosine(const Backend& backend, const InstructionEmbedding& c, const EditDirection& d);

double loss_edit(const Backend& backend, const InstructionEmbedding& c, const EditDirection& d, const LossWeights& w);

LossAndGrad edit_loss_and_grad(const Backend& backend, const InstructionEmbedding& c, const EditDirection& d,
                               const LossWeights& w);

double total_loss(double rec, double edit, const LossWeights& w);

/// Decoupled-weight-decay Adam restricted to a set of rows.
class AdamW {
public:
    AdamW(Eigen::Index rows, Eigen::Index cols, double lr, double beta1, double beta2, double epsilon,
          double weight_decay);

    void step(TokenMatrix& params, const TokenMatrix& grad, const std::vector<int>& rows);
    int steps_taken() const { return step_; }

private:
    TokenMatrix m_;
    TokenMatrix v_;
    double lr_, beta1_, beta2_, epsilon_, weight_decay_;
    int step_ = 0;
};

/// Timestep and noise for one optimization step, drawn in a fixed order
/// (t first, then the latent noise) from the loop's stream.
struct StepSample {
    int t = 0;
    LatentImage eps;
};

StepSample draw_step_sample(Rng& rng, int T, LatentShape shape);

struct InversionResult {
    InstructionEmbedding embedding;
    OptimizationTrace trace;
    EditDirection direction;
    double wall_s = 0.0;
};

using TraceSink = std::function<void(const TraceRecord&)>;

/// One-shot instruction optimization. The edit direction is computed once;
/// each step samples t ~ U{1..T} and eps ~ N(0, I), evaluates
/// lambda_rec L_rec + lambda_edit L_edit and moves only the learnable rows.
/// Throws DivergenceError on a non-finite loss or one above the threshold;
/// records logged before that point have already been passed to `sink`.
InversionResult optimize_instruction(const Backend& backend, const Image& photo, const Image& sketch,
                                     const InstructionEmbedding& c0, const LossWeights& w, const OptimizeConfig& cfg,
                                     const NoiseSchedule& s, const TraceSink& sink = {});

}  // namespace osketch
