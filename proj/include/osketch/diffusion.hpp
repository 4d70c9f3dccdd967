// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "osketch/backend.hpp"
#include "osketch/rng.hpp"
#include "osketch/tensor.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace osketch {

enum class ScheduleKind { linear_beta, cosine };

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view text);

/// Cumulative signal coefficients; alpha_bar[0] = 1 and alpha_bar[T] is the
/// noisiest level.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha_bar;
    ScheduleKind kind = ScheduleKind::linear_beta;

    /// Throws Error if the monotonicity / range invariants fail.
    void validate() const;
};

inline constexpr double kLinearBetaStart = 1e-4;
inline constexpr double kLinearBetaEnd = 2e-2;

NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::linear_beta);

struct SamplerConfig {
    int steps = 50;
    double guidance_text = 7.5;   // s_T
    double guidance_image = 1.5;  // s_I
    double eta = 0.0;
    std::uint64_t seed = 0;

    void validate(const NoiseSchedule& schedule) const;
};

/// z_t = sqrt(alpha_bar[t]) z0 + sqrt(1 - alpha_bar[t]) eps.
LatentImage add_noise(const LatentImage& z0, const LatentImage& eps, int t, const NoiseSchedule& s);

/// Dual classifier-free guidance:
///   eps_null + s_I (eps_img - eps_null) + s_T (eps_full - eps_img).
LatentImage cfg_combine(const LatentImage& eps_null, const LatentImage& eps_img, const LatentImage& eps_full,
                        double s_T, double s_I);

/// One DDIM update from t to t_prev. With eta = 0 the noise argument is ignored.
LatentImage ddim_step(const LatentImage& z_t, const LatentImage& eps_hat, int t, int t_prev, const NoiseSchedule& s,
                      double eta, const LatentImage& noise);

/// Descending timesteps visited by the sampler, starting at T. The step after
/// the last entry goes to 0.
std::vector<int> sampling_timesteps(int T, int steps);

struct SampleResult {
    DecodedImage decoded;
    LatentImage latent;
    int denoiser_calls = 0;
};

/// Runs `cfg.steps` DDIM steps from seeded Gaussian z_T with guidance, then
/// decodes. Bitwise deterministic given (cfg.seed, backend, inputs).
SampleResult sample(const Backend& backend, const LatentImage& z_p, const InstructionEmbedding& c,
                    const SamplerConfig& cfg, const NoiseSchedule& s);

/// Standard normal latent drawn from `rng`.
LatentImage gaussian_latent(LatentShape shape, Rng& rng);

}  // namespace osketch
