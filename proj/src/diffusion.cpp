// SPDX-License-Identifier: Apache-2.0
#include "osketch/diffusion.hpp"

#include "osketch/errors.hpp"
#include "osketch/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace osketch {

std::string_view to_string(ScheduleKind kind) {
    return kind == ScheduleKind::cosine ? "cosine" : "linear_beta";
}

ScheduleKind parse_schedule_kind(std::string_view text) {
    if (text == "linear_beta") return ScheduleKind::linear_beta;
    if (text == "cosine") return ScheduleKind::cosine;
    throw ValidationError("schedule.kind", "expected linear_beta|cosine, got '" + std::string(text) + "'");
}

void NoiseSchedule::validate() const {
    if (T < 1 || alpha_bar.size() != static_cast<std::size_t>(T) + 1) throw Error("schedule: bad length");
    if (alpha_bar[0] != 1.0) throw Error("schedule: alpha_bar[0] must be 1");
    for (int t = 1; t <= T; ++t) {
        const double a = alpha_bar[static_cast<std::size_t>(t)];
        if (!std::isfinite(a) || a <= 0.0 || a > 1.0) throw Error("schedule: alpha_bar out of (0, 1]");
        if (!(a < alpha_bar[static_cast<std::size_t>(t) - 1])) throw Error("schedule: alpha_bar not strictly decreasing");
    }
}

NoiseSchedule make_schedule(int T, ScheduleKind kind) {
    if (T < 1) throw ValidationError("schedule.T", "must be >= 1");
    NoiseSchedule s;
    s.T = T;
    s.kind = kind;
    s.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
    s.alpha_bar[0] = 1.0;
    if (kind == ScheduleKind::linear_beta) {
        double product = 1.0;
        for (int i = 1; i <= T; ++i) {
            const double frac = T == 1 ? 0.0 : static_cast<double>(i - 1) / static_cast<double>(T - 1);
            const double beta = kLinearBetaStart + (kLinearBetaEnd - kLinearBetaStart) * frac;
            product *= 1.0 - beta;
            s.alpha_bar[static_cast<std::size_t>(i)] = product;
        }
    } else {
        // Cosine schedule with offset 0.008; betas clipped to 0.999 so the last level stays positive.
        constexpr double offset = 0.008;
        auto f = [&](int t) {
            const double x = (static_cast<double>(t) / T + offset) / (1.0 + offset) * std::numbers::pi / 2.0;
            return std::cos(x) * std::cos(x);
        };
        double product = 1.0;
        for (int i = 1; i <= T; ++i) {
            const double beta = std::min(1.0 - f(i) / f(i - 1), 0.999);
            product *= 1.0 - beta;
            s.alpha_bar[static_cast<std::size_t>(i)] = product;
        }
    }
    s.validate();
    return s;
}

void SamplerConfig::validate(const NoiseSchedule& schedule) const {
    if (steps < 1) throw ValidationError("sampler.steps", "must be >= 1");
    if (steps > schedule.T) throw ValidationError("sampler.steps", "must be <= schedule.T");
    if (!std::isfinite(guidance_text)) throw ValidationError("sampler.guidance_text", "must be finite");
    if (!std::isfinite(guidance_image)) throw ValidationError("sampler.guidance_image", "must be finite");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ValidationError("sampler.eta", "must be in [0, 1]");
}

namespace {

void check_same_shape(const LatentImage& a, const LatentImage& b, const char* what) {
    if (!(a.shape == b.shape) || a.data.size() != b.data.size()) {
        throw ShapeError(std::string(what) + ": latent shapes differ " + to_string(a.shape) + " vs " +
                         to_string(b.shape));
    }
}

double alpha_bar_at(const NoiseSchedule& s, int t, const char* what) {
    if (t < 0 || t > s.T) {
        throw TimestepError(std::string(what) + ": timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(s.T) + "]");
    }
    return s.alpha_bar[static_cast<std::size_t>(t)];
}

}  // namespace

LatentImage add_noise(const LatentImage& z0, const LatentImage& eps, int t, const NoiseSchedule& s) {
    check_same_shape(z0, eps, "add_noise");
    const double a = alpha_bar_at(s, t, "add_noise");
    return {z0.shape, std::sqrt(a) * z0.data + std::sqrt(1.0 - a) * eps.data};
}

LatentImage cfg_combine(const LatentImage& eps_null, const LatentImage& eps_img, const LatentImage& eps_full,
                        double s_T, double s_I) {
    check_same_shape(eps_null, eps_img, "cfg_combine");
    check_same_shape(eps_null, eps_full, "cfg_combine");
    if (s_T == 1.0 && s_I == 1.0) return {eps_full.shape, eps_full.data};  // exact telescoping
    return {eps_full.shape, eps_null.data + s_I * (eps_img.data - eps_null.data) + s_T * (eps_full.data - eps_img.data)};
}

LatentImage ddim_step(const LatentImage& z_t, const LatentImage& eps_hat, int t, int t_prev, const NoiseSchedule& s,
                      double eta, const LatentImage& noise) {
    check_same_shape(z_t, eps_hat, "ddim_step");
    if (t <= t_prev) {
        throw TimestepError("ddim_step: t (" + std::to_string(t) + ") must exceed t_prev (" + std::to_string(t_prev) +
                            ")");
    }
    const double a_t = alpha_bar_at(s, t, "ddim_step");
    const double a_prev = alpha_bar_at(s, t_prev, "ddim_step");
    if (!(a_t > 0.0)) throw Error("ddim_step: alpha_bar[t] is zero");

    const Eigen::VectorXd x0 = (z_t.data - std::sqrt(1.0 - a_t) * eps_hat.data) / std::sqrt(a_t);
    double sigma = 0.0;
    if (eta > 0.0) sigma = eta * std::sqrt((1.0 - a_prev) / (1.0 - a_t)) * std::sqrt(1.0 - a_t / a_prev);
    const double direction = std::sqrt(std::max(0.0, 1.0 - a_prev - sigma * sigma));
    Eigen::VectorXd next = std::sqrt(a_prev) * x0 + direction * eps_hat.data;
    if (sigma > 0.0) {
        check_same_shape(z_t, noise, "ddim_step noise");
        next += sigma * noise.data;
    }
    return {z_t.shape, std::move(next)};
}

std::vector<int> sampling_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) throw ValidationError("sampler.steps", "must be in [1, T]");
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(steps));
    for (int k = steps; k >= 1; --k) {
        ts.push_back(static_cast<int>(static_cast<long long>(k) * T / steps));
    }
    return ts;
}

LatentImage gaussian_latent(LatentShape shape, Rng& rng) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(shape.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    return {shape, std::move(v)};
}

SampleResult sample(const Backend& backend, const LatentImage& z_p, const InstructionEmbedding& c,
                    const SamplerConfig& cfg, const NoiseSchedule& s) {
    cfg.validate(s);
    const auto& desc = backend.descriptor();
    require_shape(z_p, desc.latent_shape, "sample z_p");

    Rng rng(cfg.seed);
    LatentImage z = gaussian_latent(desc.latent_shape, rng);
    const bool plain = cfg.guidance_text == 1.0 && cfg.guidance_image == 1.0;
    const LatentImage no_noise = LatentImage::zeros(desc.latent_shape);

    SampleResult result;
    const auto ts = sampling_timesteps(s.T, cfg.steps);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        const LatentImage eps_full = backend.predict_noise(z, t, c, z_p, false, false);
        LatentImage eps_hat;
        if (plain) {
            eps_hat = eps_full;
            result.denoiser_calls += 1;
        } else {
            const LatentImage eps_null = backend.predict_noise(z, t, c, z_p, true, true);
            const LatentImage eps_img = backend.predict_noise(z, t, c, z_p, true, false);
            eps_hat = cfg_combine(eps_null, eps_img, eps_full, cfg.guidance_text, cfg.guidance_image);
            result.denoiser_calls += 3;
        }
        if (cfg.eta > 0.0) {
            const LatentImage noise = gaussian_latent(desc.latent_shape, rng);
            z = ddim_step(z, eps_hat, t, t_prev, s, cfg.eta, noise);
        } else {
            z = ddim_step(z, eps_hat, t, t_prev, s, 0.0, no_noise);
        }
        require_finite(z.data, "sample");
    }
    result.decoded = backend.decode_latent(z);
    result.latent = std::move(z);
    return result;
}

}  // namespace osketch
