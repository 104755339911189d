#pragma once

#include <stdexcept>
#include <string>

namespace trafo {

/// Parameter-free reference distributions F_Z.
enum class Latent { StdNormal, StdLogistic, MinExtremeValue, MaxExtremeValue };

/// Config names: "normal", "logistic", "gompertz" (min EV), "gumbel" (max EV).
[[nodiscard]] Latent latent_from_string(const std::string& name);
[[nodiscard]] std::string to_string(Latent d);

/// F_Z(z); total on the extended reals with cdf(-inf) = 0 and cdf(inf) = 1.
[[nodiscard]] double cdf(Latent d, double z);

/// 1 - F_Z(z), computed without cancellation.
[[nodiscard]] double survival(Latent d, double z);

/// log f_Z(z).
[[nodiscard]] double log_pdf(Latent d, double z);

/// d/dz log f_Z(z).
[[nodiscard]] double dlog_pdf(Latent d, double z);

/// F_Z^{-1}(p) for 0 < p < 1.
[[nodiscard]] double quantile(Latent d, double p);

}  // namespace trafo
