#pragma once

#include <stdexcept>
#include <string>

namespace trafo {

class ResponseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ResponseType { Continuous, Survival, Interval, Count, Ordinal };

[[nodiscard]] std::string to_string(ResponseType t);
[[nodiscard]] ResponseType response_type_from_string(const std::string& s);

/// None marks an observation carrying no information (both bounds infinite).
enum class Censoring { Exact, Interval, Left, Right, None };

[[nodiscard]] std::string to_string(Censoring c);

/// One observed response. `lower`/`upper` are response values, or cut
/// indices (1-based) for ordinal responses.
struct ResponseValue {
    Censoring status = Censoring::Exact;
    double lower = 0.0;
    double upper = 0.0;
    double raw = 0.0;

    bool operator==(const ResponseValue&) const = default;
};

[[nodiscard]] ResponseValue encode_continuous(double y);
/// `event` must be 0 (censored) or 1 (observed).
[[nodiscard]] ResponseValue encode_survival(double time, double event);
/// General (lower, upper] with infinite bounds allowed.
[[nodiscard]] ResponseValue encode_interval(double lower, double upper);
[[nodiscard]] ResponseValue encode_count(double y);
/// `level` is 1-based among `n_levels`.
[[nodiscard]] ResponseValue encode_ordinal(int level, int n_levels);

/// Single-column dispatch; Survival and Interval need their second column
/// and are rejected here.
[[nodiscard]] ResponseValue encode_response(double raw, ResponseType type, int n_levels = 0);

}  // namespace trafo
