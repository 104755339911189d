#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trafo/dataset.hpp"
#include "trafo/model.hpp"

namespace trafo {

class TimeSeriesError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// "<response>_lag_<j>".
[[nodiscard]] std::string lag_name(const std::string& response, int j);

/// Rows t = p+1..T with lag columns y_lag_1..y_lag_p appended; every other
/// column is carried along aligned at t.
[[nodiscard]] Dataset build_lags(const Dataset& data, const std::string& response, int p);

/// Same from a bare series; `exog` (if nonempty) must have the series length.
[[nodiscard]] Dataset build_lags(std::span<const double> series, int p, const Dataset& exog = {},
                                 const std::string& response = "y");

/// sum_j phi_j * h0(lag_j) with h0(v) = a(v)' theta_intercept.
[[nodiscard]] double atplag_contribution(const CompiledModel& model, std::span<const double> lags,
                                         std::span<const double> phi);

}  // namespace trafo
