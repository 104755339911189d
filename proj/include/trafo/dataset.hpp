#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trafo {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ColumnType { Real, Categorical };

struct Column {
    std::string name;
    ColumnType type = ColumnType::Real;
    std::vector<double> real;
    std::vector<std::int32_t> codes;  // 0-based index into levels
    std::vector<std::string> levels;

    [[nodiscard]] std::size_t size() const {
        return type == ColumnType::Real ? real.size() : codes.size();
    }
    [[nodiscard]] bool categorical() const { return type == ColumnType::Categorical; }
    /// Label of row i (categorical) or its formatted value (real).
    [[nodiscard]] std::string label(std::size_t i) const;
};

/// Rectangular table of typed columns.
class Dataset {
public:
    [[nodiscard]] std::size_t rows() const { return rows_; }
    [[nodiscard]] std::size_t cols() const { return columns_.size(); }
    [[nodiscard]] bool has(const std::string& name) const;
    [[nodiscard]] const Column& column(const std::string& name) const;
    [[nodiscard]] const std::vector<Column>& columns() const { return columns_; }
    [[nodiscard]] std::vector<std::string> names() const;

    void add_real(std::string name, std::vector<double> values);
    void add_categorical(std::string name, std::vector<std::int32_t> codes,
                         std::vector<std::string> levels);
    void add(Column col);
    void remove(const std::string& name);

    [[nodiscard]] Dataset subset(std::span<const std::size_t> rows) const;

private:
    void check_rows(std::size_t n, const std::string& name);

    std::vector<Column> columns_;
    std::size_t rows_ = 0;
};

struct CsvOptions {
    /// Columns read as categorical; an explicit level list fixes the order.
    std::map<std::string, std::optional<std::vector<std::string>>> categorical;
};

[[nodiscard]] Dataset parse_csv(const std::string& text, const CsvOptions& opts = {});
[[nodiscard]] Dataset read_csv(const std::string& path, const CsvOptions& opts = {});
void write_csv(const std::string& path, const Dataset& data);
[[nodiscard]] std::string to_csv(const Dataset& data);

/// Level order used when none is declared: numeric order if every label
/// parses as a number, lexicographic otherwise.
[[nodiscard]] std::vector<std::string> natural_level_order(std::vector<std::string> labels);

/// Reinterpret a real column as categorical over its distinct values.
[[nodiscard]] Column to_categorical(const Column& col);

/// Shortest round-trip decimal representation.
[[nodiscard]] std::string format_double(double v);

}  // namespace trafo
