#include "trafo/response.hpp"

#include <cmath>

#include "trafo/dataset.hpp"

namespace trafo {

std::string to_string(ResponseType t) {
    switch (t) {
        case ResponseType::Continuous: return "continuous";
        case ResponseType::Survival: return "survival";
        case ResponseType::Interval: return "interval";
        case ResponseType::Count: return "count";
        case ResponseType::Ordinal: return "ordinal";
    }
    return "continuous";
}

ResponseType response_type_from_string(const std::string& s) {
    if (s == "continuous") return ResponseType::Continuous;
    if (s == "survival") return ResponseType::Survival;
    if (s == "interval") return ResponseType::Interval;
    if (s == "count") return ResponseType::Count;
    if (s == "ordinal" || s == "binary") return ResponseType::Ordinal;
    throw ResponseError("unknown response type '" + s + "'");
}

std::string to_string(Censoring c) {
    switch (c) {
        case Censoring::Exact: return "exact";
        case Censoring::Interval: return "interval";
        case Censoring::Left: return "left";
        case Censoring::Right: return "right";
        case Censoring::None: return "none";
    }
    return "exact";
}

ResponseValue encode_continuous(double y) {
    if (!std::isfinite(y)) throw ResponseError("continuous response must be finite");
    return {Censoring::Exact, y, y, y};
}

ResponseValue encode_survival(double time, double event) {
    if (!std::isfinite(time)) throw ResponseError("survival time must be finite");
    if (event == 1.0) return {Censoring::Exact, time, time, time};
    if (event == 0.0) return {Censoring::Right, time, INFINITY, time};
    throw ResponseError("event indicator must be 0 or 1, got " + format_double(event));
}

ResponseValue encode_interval(double lower, double upper) {
    if (std::isnan(lower) || std::isnan(upper)) throw ResponseError("interval bound is NaN");
    if (lower > upper) {
        throw ResponseError("interval lower bound " + format_double(lower) + " exceeds upper " +
                            format_double(upper));
    }
    if (lower == upper) {
        if (!std::isfinite(lower)) throw ResponseError("degenerate infinite interval");
        return {Censoring::Exact, lower, upper, lower};
    }
    const bool lo_inf = std::isinf(lower);
    const bool hi_inf = std::isinf(upper);
    if (lo_inf && hi_inf) return {Censoring::None, lower, upper, lower};
    if (lo_inf) return {Censoring::Left, lower, upper, upper};
    if (hi_inf) return {Censoring::Right, lower, upper, lower};
    return {Censoring::Interval, lower, upper, lower};
}

ResponseValue encode_count(double y) {
    if (!std::isfinite(y)) throw ResponseError("count response must be finite");
    if (y < 0.0) throw ResponseError("negative count " + format_double(y));
    if (y != std::floor(y)) throw ResponseError("count response must be an integer, got " + format_double(y));
    if (y == 0.0) return {Censoring::Left, -INFINITY, 0.0, 0.0};
    return {Censoring::Interval, y - 1.0, y, y};
}

ResponseValue encode_ordinal(int level, int n_levels) {
    if (n_levels < 2) throw ResponseError("ordinal response needs at least two levels");
    if (level < 1 || level > n_levels) {
        throw ResponseError("ordinal level " + std::to_string(level) + " outside 1.." +
                            std::to_string(n_levels));
    }
    const auto k = static_cast<double>(level);
    if (level == 1) return {Censoring::Left, -INFINITY, 1.0, k};
    if (level == n_levels) return {Censoring::Right, k - 1.0, INFINITY, k};
    return {Censoring::Interval, k - 1.0, k, k};
}

ResponseValue encode_response(double raw, ResponseType type, int n_levels) {
    switch (type) {
        case ResponseType::Continuous: return encode_continuous(raw);
        case ResponseType::Count: return encode_count(raw);
        case ResponseType::Ordinal: {
            if (raw != std::floor(raw)) throw ResponseError("ordinal level must be an integer");
            return encode_ordinal(static_cast<int>(raw), n_levels);
        }
        case ResponseType::Survival:
        case ResponseType::Interval:
            throw ResponseError(to_string(type) + " responses need two columns");
    }
    throw ResponseError("unknown response type");
}

}  // namespace trafo
