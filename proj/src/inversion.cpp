// SPDX-License-Identifier: Apache-2.0
#include "osketch/inversion.hpp"

#include "osketch/errors.hpp"
#include "osketch/rng.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>

namespace osketch {

std::string_view to_string(EditSign sign) { return sign == EditSign::align ? "align" : "paper_literal"; }
std::string_view to_string(RecNorm norm) { return norm == RecNorm::l2 ? "l2" : "l2_squared"; }

EditSign parse_edit_sign(std::string_view text) {
    if (text == "align") return EditSign::align;
    if (text == "paper_literal") return EditSign::paper_literal;
    throw ValidationError("invert.edit_sign", "expected align|paper_literal, got '" + std::string(text) + "'");
}

RecNorm parse_rec_norm(std::string_view text) {
    if (text == "l2") return RecNorm::l2;
    if (text == "l2_squared") return RecNorm::l2_squared;
    throw ValidationError("invert.rec_norm", "expected l2|l2_squared, got '" + std::string(text) + "'");
}

void LossWeights::validate() const {
    if (!(std::isfinite(lambda_rec) && lambda_rec >= 0.0)) throw ValidationError("invert.lambda_rec", "must be >= 0");
    if (!(std::isfinite(lambda_edit) && lambda_edit >= 0.0)) {
        throw ValidationError("invert.lambda_edit", "must be >= 0");
    }
    if (lambda_rec == 0.0 && lambda_edit == 0.0) {
        throw ValidationError("invert.lambda_rec", "lambda_rec and lambda_edit cannot both be zero");
    }
}

void OptimizeConfig::validate() const {
    if (n_steps < 1) throw ValidationError("invert.steps", "must be >= 1");
    if (!(lr > 0.0 && std::isfinite(lr))) throw ValidationError("invert.lr", "must be > 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ValidationError("invert.adam_beta1", "must be in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ValidationError("invert.adam_beta2", "must be in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw ValidationError("invert.adam_epsilon", "must be > 0");
    if (!(weight_decay >= 0.0 && std::isfinite(weight_decay))) {
        throw ValidationError("invert.weight_decay", "must be >= 0");
    }
    if (log_every < 1) throw ValidationError("invert.log_every", "must be >= 1");
    if (!(divergence_threshold > 0.0)) throw ValidationError("invert.divergence_threshold", "must be > 0");
}

std::string to_json_line(const TraceRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["loss_total"] = r.loss_total;
    j["loss_rec"] = r.loss_rec;
    j["loss_edit"] = r.loss_edit;
    j["grad_norm"] = r.grad_norm;
    j["edit_cosine"] = r.edit_cosine;
    j["wall_ms"] = r.wall_ms;
    return j.dump();
}

EditDirection compute_edit_direction(const Backend& backend, const Image& photo, const Image& sketch) {
    const JointVector e_sketch = backend.embed_image(sketch);
    const JointVector e_photo = backend.embed_image(photo);
    EditDirection d;
    d.data = e_sketch.data - e_photo.data;
    d.norm = d.data.norm();
    if (!(d.norm >= kDegenerateDirectionNorm)) {
        throw DegenerateDirectionError("photo and sketch embed identically (|delta| = " + std::to_string(d.norm) +
                                       "); no edit direction");
    }
    return d;
}

namespace {

Eigen::VectorXd rec_residual(const Backend& backend, const InstructionEmbedding& c, const LatentImage& z_s,
                             const LatentImage& z_p, int t, const LatentImage& eps, const NoiseSchedule& s,
                             LatentImage& z_t) {
    if (t < 1 || t > s.T) {
        throw TimestepError("loss_rec: timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.T) + "]");
    }
    z_t = add_noise(z_s, eps, t, s);
    return eps.data - backend.predict_noise(z_t, t, c, z_p, false, false).data;
}

struct CosineAndGrad {
    double cosine;
    Eigen::VectorXd d_embedding;  // d cos / d e
};

CosineAndGrad cosine_wrt_embedding(const EditDirection& d, const Eigen::VectorXd& e) {
    const double dn = d.data.norm();
    if (!(dn >= kDegenerateDirectionNorm)) throw DegenerateDirectionError("degenerate edit direction");
    const double en = e.norm();
    const double cosine = d.data.dot(e) / (dn * en);
    return {cosine, d.data / (dn * en) - cosine * e / (en * en)};
}

}  // namespace

double loss_rec(const Backend& backend, const InstructionEmbedding& c, const LatentImage& z_s, const LatentImage& z_p,
                int t, const LatentImage& eps, const NoiseSchedule& s, RecNorm norm) {
    LatentImage z_t;
    const Eigen::VectorXd r = rec_residual(backend, c, z_s, z_p, t, eps, s, z_t);
    return norm == RecNorm::l2 ? r.norm() : r.squaredNorm();
}

LossAndGrad rec_loss_and_grad(const Backend& backend, const InstructionEmbedding& c, const LatentImage& z_s,
                              const LatentImage& z_p, int t, const LatentImage& eps, const NoiseSchedule& s,
                              RecNorm norm) {
    LatentImage z_t;
    const Eigen::VectorXd r = rec_residual(backend, c, z_s, z_p, t, eps, s, z_t);
    LossAndGrad out;
    Eigen::VectorXd upstream;
    if (norm == RecNorm::l2_squared) {
        out.loss = r.squaredNorm();
        upstream = -2.0 * r;
    } else {
        out.loss = r.norm();
        upstream = out.loss > 0.0 ? Eigen::VectorXd(-r / out.loss) : Eigen::VectorXd::Zero(r.size());
    }
    out.grad = backend.predict_noise_token_vjp(z_t, t, c, z_p, upstream);
    return out;
}

double edit_cosine(const Backend& backend, const InstructionEmbedding& c, const EditDirection& d) {
    return cosine_wrt_embedding(d, backend.embed_instruction(c).data).cosine;
}

double loss_edit(const Backend& backend, const InstructionEmbedding& c, const EditDirection& d, const LossWeights& w) {
    const double cosine = edit_cosine(backend, c, d);
    return w.edit_sign == EditSign::align ? 1.0 - cosine : cosine;
}

LossAndGrad edit_loss_and_grad(const Backend& backend, const InstructionEmbedding& c, const EditDirection& d,
                               const LossWeights& w) {
    const auto cg = cosine_wrt_embedding(d, backend.embed_instruction(c).data);
    LossAndGrad out;
    if (w.edit_sign == EditSign::align) {
        out.loss = 1.0 - cg.cosine;
        out.grad = backend.embed_instruction_vjp(c, -cg.d_embedding);
    } else {
        out.loss = cg.cosine;
        out.grad = backend.embed_instruction_vjp(c, cg.d_embedding);
    }
    return out;
}

double total_loss(double rec, double edit, const LossWeights& w) {
    if (!std::isfinite(rec) || !std::isfinite(edit)) throw NonFiniteError("total_loss: non-finite component");
    return w.lambda_rec * rec + w.lambda_edit * edit;
}

AdamW::AdamW(Eigen::Index rows, Eigen::Index cols, double lr, double beta1, double beta2, double epsilon,
             double weight_decay)
    : m_(TokenMatrix::Zero(rows, cols)), v_(TokenMatrix::Zero(rows, cols)), lr_(lr), beta1_(beta1), beta2_(beta2),
      epsilon_(epsilon), weight_decay_(weight_decay) {}

void AdamW::step(TokenMatrix& params, const TokenMatrix& grad, const std::vector<int>& rows) {
    if (params.rows() != m_.rows() || params.cols() != m_.cols() || grad.rows() != m_.rows() ||
        grad.cols() != m_.cols()) {
        throw ShapeError("AdamW: parameter shape changed between steps");
    }
    ++step_;
    const double correction1 = 1.0 - std::pow(beta1_, step_);
    const double correction2 = 1.0 - std::pow(beta2_, step_);
    for (int r : rows) {
        for (Eigen::Index j = 0; j < params.cols(); ++j) {
            const double g = grad(r, j);
            double& p = params(r, j);
            if (weight_decay_ != 0.0) p -= lr_ * weight_decay_ * p;
            m_(r, j) = beta1_ * m_(r, j) + (1.0 - beta1_) * g;
            v_(r, j) = beta2_ * v_(r, j) + (1.0 - beta2_) * g * g;
            const double m_hat = m_(r, j) / correction1;
            const double v_hat = v_(r, j) / correction2;
            p -= lr_ * m_hat / (std::sqrt(v_hat) + epsilon_);
        }
    }
}

StepSample draw_step_sample(Rng& rng, int T, LatentShape shape) {
    StepSample sample;
    sample.t = static_cast<int>(rng.uniform_int(1, T));
    sample.eps = gaussian_latent(shape, rng);
    return sample;
}

InversionResult optimize_instruction(const Backend& backend, const Image& photo, const Image& sketch,
                                     const InstructionEmbedding& c0, const LossWeights& w, const OptimizeConfig& cfg,
                                     const NoiseSchedule& s, const TraceSink& sink) {
    using clock = std::chrono::steady_clock;
    w.validate();
    cfg.validate();
    s.validate();
    const auto& desc = backend.descriptor();
    c0.validate(desc);
    const std::vector<int> rows = c0.learnable_rows();
    if (rows.empty()) throw ValidationError("instruction.learnable_mask", "nothing to optimize");
    if (s.T > desc.num_timesteps) {
        throw ValidationError("schedule.T", "exceeds the backend's " + std::to_string(desc.num_timesteps) + " timesteps");
    }

    const auto start = clock::now();
    InversionResult result;
    result.direction = compute_edit_direction(backend, photo, sketch);
    const LatentImage z_p = backend.encode_image(photo);
    const LatentImage z_s = backend.encode_image(sketch);

    InstructionEmbedding c = c0;
    AdamW optimizer(c.tokens.rows(), c.tokens.cols(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon,
                    cfg.weight_decay);
    Rng rng(cfg.seed);
    std::vector<bool> frozen(static_cast<std::size_t>(c.n_tokens()), true);
    for (int r : rows) frozen[static_cast<std::size_t>(r)] = false;

    for (int step = 1; step <= cfg.n_steps; ++step) {
        const StepSample draw = draw_step_sample(rng, s.T, desc.latent_shape);

        TokenMatrix grad = TokenMatrix::Zero(c.tokens.rows(), c.tokens.cols());
        double rec = 0.0;
        if (w.lambda_rec != 0.0) {
            auto lg = rec_loss_and_grad(backend, c, z_s, z_p, draw.t, draw.eps, s, cfg.rec_norm);
            rec = lg.loss;
            grad += w.lambda_rec * lg.grad;
        } else {
            rec = loss_rec(backend, c, z_s, z_p, draw.t, draw.eps, s, cfg.rec_norm);
        }
        const auto cg = cosine_wrt_embedding(result.direction, backend.embed_instruction(c).data);
        const double edit = w.edit_sign == EditSign::align ? 1.0 - cg.cosine : cg.cosine;
        if (w.lambda_edit != 0.0) {
            const Eigen::VectorXd upstream = w.edit_sign == EditSign::align ? Eigen::VectorXd(-cg.d_embedding)
                                                                            : cg.d_embedding;
            grad += w.lambda_edit * backend.embed_instruction_vjp(c, upstream);
        }

        const double loss = w.lambda_rec * rec + w.lambda_edit * edit;
        if (!std::isfinite(loss) || loss > cfg.divergence_threshold) {
            throw DivergenceError("optimization diverged at step " + std::to_string(step) +
                                      " (loss = " + std::to_string(loss) + ", t = " + std::to_string(draw.t) + ")",
                                  step);
        }
        for (std::size_t r = 0; r < frozen.size(); ++r) {
            if (frozen[r]) grad.row(static_cast<Eigen::Index>(r)).setZero();
        }

        if (step == 1 || step % cfg.log_every == 0 || step == cfg.n_steps) {
            TraceRecord record;
            record.step = step;
            record.loss_total = loss;
            record.loss_rec = rec;
            record.loss_edit = edit;
            record.grad_norm = grad.norm();
            record.edit_cosine = cg.cosine;
            record.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
            result.trace.records.push_back(record);
            if (sink) sink(record);
        }
        optimizer.step(c.tokens, grad, rows);
    }
    result.embedding = std::move(c);
    result.wall_s = std::chrono::duration<double>(clock::now() - start).count();
    return result;
}

}  // namespace osketch
