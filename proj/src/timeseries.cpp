#include "trafo/timeseries.hpp"

#include <numeric>

namespace trafo {

std::string lag_name(const std::string& response, int j) {
    return response + "_lag_" + std::to_string(j);
}

Dataset build_lags(const Dataset& data, const std::string& response, int p) {
    if (p < 1) throw TimeSeriesError("lag order must be at least 1");
    const Column& y = data.column(response);
    if (y.categorical()) throw TimeSeriesError("lagged response '" + response + "' must be numeric");
    const std::size_t T = data.rows();
    const auto P = static_cast<std::size_t>(p);
    if (P >= T) {
        throw TimeSeriesError("lag order " + std::to_string(p) + " needs more than " +
                              std::to_string(T) + " observations");
    }
    for (int j = 1; j <= p; ++j) {
        if (data.has(lag_name(response, j))) {
            throw TimeSeriesError("column '" + lag_name(response, j) + "' already exists");
        }
    }
    std::vector<std::size_t> keep(T - P);
    std::iota(keep.begin(), keep.end(), P);
    Dataset out = data.subset(keep);
    for (int j = 1; j <= p; ++j) {
        std::vector<double> lag(T - P);
        for (std::size_t t = P; t < T; ++t) lag[t - P] = y.real[t - static_cast<std::size_t>(j)];
        out.add_real(lag_name(response, j), std::move(lag));
    }
    return out;
}

Dataset build_lags(std::span<const double> series, int p, const Dataset& exog, const std::string& response) {
    Dataset d;
    if (exog.cols() > 0) {
        if (exog.rows() != series.size()) throw TimeSeriesError("exogenous columns do not match the series length");
        d = exog;
    }
    d.add_real(response, {series.begin(), series.end()});
    return build_lags(d, response, p);
}

double atplag_contribution(const CompiledModel& model, std::span<const double> lags,
                           std::span<const double> phi) {
    if (lags.size() != phi.size()) throw TimeSeriesError("lag and coefficient counts differ");
    const auto theta = model.theta();
    const std::size_t M = model.basis_dim();
    double s = 0.0;
    for (std::size_t j = 0; j < lags.size(); ++j) {
        BasisEval a;
        try {
            a = model.blueprint().basis.evaluate(lags[j]);
        } catch (const BasisError& e) {
            throw TimeSeriesError(std::string("lag value outside the support: ") + e.what());
        }
        double h0 = 0.0;
        for (std::size_t k = 0; k < M; ++k) h0 += a.value[k] * theta[k];
        s += phi[j] * h0;
    }
    return s;
}

}  // namespace trafo
