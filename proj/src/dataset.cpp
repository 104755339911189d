#include "trafo/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace trafo {

namespace {

bool parse_real(std::string_view s, double& out) {
    if (s == "inf" || s == "Inf" || s == "+inf" || s == "+Inf" || s == "INF") {
        out = INFINITY;
        return true;
    }
    if (s == "-inf" || s == "-Inf" || s == "-INF") {
        out = -INFINITY;
        return true;
    }
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && !std::isnan(out);
}

bool missing_token(std::string_view s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan"; }

// RFC-4180 record splitter over the whole buffer.
class CsvReader {
public:
    explicit CsvReader(const std::string& text) : text_(text) {
        if (text_.size() >= 3 && static_cast<unsigned char>(text_[0]) == 0xEF &&
            static_cast<unsigned char>(text_[1]) == 0xBB &&
            static_cast<unsigned char>(text_[2]) == 0xBF) {
            pos_ = 3;
        }
    }

    // false at end of input; skips blank lines
    bool next(std::vector<std::string>& fields) {
        while (pos_ < text_.size()) {
            fields.clear();
            read_record(fields);
            ++line_;
            if (!(fields.size() == 1 && fields[0].empty())) return true;
        }
        return false;
    }

    [[nodiscard]] std::size_t line() const { return line_; }

private:
    void read_record(std::vector<std::string>& fields) {
        std::string field;
        bool quoted = false;
        while (pos_ < text_.size()) {
            const char c = text_[pos_];
            if (quoted) {
                if (c == '"') {
                    if (pos_ + 1 < text_.size() && text_[pos_ + 1] == '"') {
                        field.push_back('"');
                        pos_ += 2;
                        continue;
                    }
                    quoted = false;
                    ++pos_;
                    continue;
                }
                field.push_back(c);
                ++pos_;
                continue;
            }
            if (c == '"') {
                quoted = true;
                ++pos_;
            } else if (c == ',') {
                fields.push_back(std::move(field));
                field.clear();
                ++pos_;
            } else if (c == '\r' || c == '\n') {
                ++pos_;
                if (c == '\r' && pos_ < text_.size() && text_[pos_] == '\n') ++pos_;
                break;
            } else {
                field.push_back(c);
                ++pos_;
            }
        }
        if (quoted) throw DataError("unterminated quoted field at line " + std::to_string(line_ + 1));
        fields.push_back(std::move(field));
    }

    const std::string& text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 0;
};

std::string quote_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    return out + "\"";
}

}  // namespace

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string Column::label(std::size_t i) const {
    if (type == ColumnType::Categorical) return levels.at(static_cast<std::size_t>(codes.at(i)));
    return format_double(real.at(i));
}

bool Dataset::has(const std::string& name) const {
    return std::any_of(columns_.begin(), columns_.end(),
                       [&](const Column& c) { return c.name == name; });
}

const Column& Dataset::column(const std::string& name) const {
    for (const auto& c : columns_) {
        if (c.name == name) return c;
    }
    throw DataError("missing column '" + name + "'");
}

std::vector<std::string> Dataset::names() const {
    std::vector<std::string> out;
    for (const auto& c : columns_) out.push_back(c.name);
    return out;
}

void Dataset::check_rows(std::size_t n, const std::string& name) {
    if (has(name)) throw DataError("duplicate column '" + name + "'");
    if (!columns_.empty() && n != rows_) {
        throw DataError("column '" + name + "' has " + std::to_string(n) + " rows, expected " +
                        std::to_string(rows_));
    }
    rows_ = n;
}

void Dataset::add_real(std::string name, std::vector<double> values) {
    Column c;
    c.name = std::move(name);
    c.type = ColumnType::Real;
    c.real = std::move(values);
    add(std::move(c));
}

void Dataset::add_categorical(std::string name, std::vector<std::int32_t> codes,
                              std::vector<std::string> levels) {
    Column c;
    c.name = std::move(name);
    c.type = ColumnType::Categorical;
    c.codes = std::move(codes);
    c.levels = std::move(levels);
    add(std::move(c));
}

void Dataset::add(Column col) {
    if (col.categorical()) {
        for (auto code : col.codes) {
            if (code < 0 || static_cast<std::size_t>(code) >= col.levels.size()) {
                throw DataError("column '" + col.name + "' has a level code out of range");
            }
        }
    }
    check_rows(col.size(), col.name);
    columns_.push_back(std::move(col));
}

void Dataset::remove(const std::string& name) {
    std::erase_if(columns_, [&](const Column& c) { return c.name == name; });
    if (columns_.empty()) rows_ = 0;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    Dataset out;
    for (const auto& c : columns_) {
        Column s;
        s.name = c.name;
        s.type = c.type;
        s.levels = c.levels;
        if (c.categorical()) {
            s.codes.reserve(rows.size());
            for (auto r : rows) s.codes.push_back(c.codes.at(r));
        } else {
            s.real.reserve(rows.size());
            for (auto r : rows) s.real.push_back(c.real.at(r));
        }
        out.add(std::move(s));
    }
    if (columns_.empty()) out.rows_ = 0;
    return out;
}

std::vector<std::string> natural_level_order(std::vector<std::string> labels) {
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    std::vector<std::pair<double, std::string>> numeric;
    for (const auto& l : labels) {
        double v = 0.0;
        if (!parse_real(l, v)) return labels;
        numeric.emplace_back(v, l);
    }
    std::stable_sort(numeric.begin(), numeric.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::string> out;
    for (auto& [v, l] : numeric) out.push_back(std::move(l));
    return out;
}

Column to_categorical(const Column& col) {
    if (col.categorical()) return col;
    std::vector<double> distinct(col.real);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    Column out;
    out.name = col.name;
    out.type = ColumnType::Categorical;
    for (double v : distinct) out.levels.push_back(format_double(v));
    out.codes.reserve(col.real.size());
    for (double v : col.real) {
        auto it = std::lower_bound(distinct.begin(), distinct.end(), v);
        out.codes.push_back(static_cast<std::int32_t>(it - distinct.begin()));
    }
    return out;
}

Dataset parse_csv(const std::string& text, const CsvOptions& opts) {
    CsvReader reader(text);
    std::vector<std::string> header;
    if (!reader.next(header)) throw DataError("CSV input is empty (header required)");
    const std::size_t ncol = header.size();
    {
        std::set<std::string> seen;
        for (const auto& h : header) {
            if (h.empty()) throw DataError("CSV header has an empty column name");
            if (!seen.insert(h).second) throw DataError("duplicate CSV column '" + h + "'");
        }
    }
    for (const auto& [name, levels] : opts.categorical) {
        if (std::find(header.begin(), header.end(), name) == header.end()) {
            throw DataError("categorical column '" + name + "' not found in CSV header");
        }
    }

    std::vector<bool> is_cat(ncol, false);
    std::vector<std::vector<double>> reals(ncol);
    std::vector<std::vector<std::int32_t>> codes(ncol);
    std::vector<std::unordered_map<std::string, std::int32_t>> level_index(ncol);
    std::vector<std::vector<std::string>> levels(ncol);
    std::vector<bool> fixed_levels(ncol, false);
    for (std::size_t j = 0; j < ncol; ++j) {
        auto it = opts.categorical.find(header[j]);
        if (it == opts.categorical.end()) continue;
        is_cat[j] = true;
        if (it->second) {
            fixed_levels[j] = true;
            levels[j] = *it->second;
            for (std::size_t k = 0; k < levels[j].size(); ++k) {
                level_index[j].emplace(levels[j][k], static_cast<std::int32_t>(k));
            }
        }
    }

    std::vector<std::string> fields;
    std::size_t row = 0;
    while (reader.next(fields)) {
        ++row;
        if (fields.size() != ncol) {
            throw DataError("CSV line " + std::to_string(reader.line()) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(ncol));
        }
        for (std::size_t j = 0; j < ncol; ++j) {
            const std::string& f = fields[j];
            if (missing_token(f)) {
                throw DataError("missing value in row " + std::to_string(row) + ", column '" +
                                header[j] + "'");
            }
            if (is_cat[j]) {
                auto [it, inserted] =
                    level_index[j].try_emplace(f, static_cast<std::int32_t>(levels[j].size()));
                if (inserted) {
                    if (fixed_levels[j]) {
                        throw DataError("unknown level '" + f + "' in row " + std::to_string(row) +
                                        ", column '" + header[j] + "'");
                    }
                    levels[j].push_back(f);
                }
                codes[j].push_back(it->second);
            } else {
                double v = 0.0;
                if (!parse_real(f, v)) {
                    throw DataError("non-numeric value '" + f + "' in row " + std::to_string(row) +
                                    ", column '" + header[j] +
                                    "' (declare it categorical in the config)");
                }
                reals[j].push_back(v);
            }
        }
    }

    Dataset out;
    for (std::size_t j = 0; j < ncol; ++j) {
        if (!is_cat[j]) {
            out.add_real(header[j], std::move(reals[j]));
            continue;
        }
        if (fixed_levels[j]) {
            out.add_categorical(header[j], std::move(codes[j]), std::move(levels[j]));
            continue;
        }
        // remap first-seen order to natural order
        auto ordered = natural_level_order(levels[j]);
        std::unordered_map<std::string, std::int32_t> rank;
        for (std::size_t k = 0; k < ordered.size(); ++k) {
            rank.emplace(ordered[k], static_cast<std::int32_t>(k));
        }
        std::vector<std::int32_t> remap(levels[j].size());
        for (std::size_t k = 0; k < levels[j].size(); ++k) remap[k] = rank.at(levels[j][k]);
        for (auto& c : codes[j]) c = remap[static_cast<std::size_t>(c)];
        out.add_categorical(header[j], std::move(codes[j]), std::move(ordered));
    }
    return out;
}

Dataset read_csv(const std::string& path, const CsvOptions& opts) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    in.seekg(0, std::ios::end);
    std::string text(static_cast<std::size_t>(in.tellg()), '\0');
    in.seekg(0, std::ios::beg);
    in.read(text.data(), static_cast<std::streamsize>(text.size()));
    if (!in) throw DataError("failed reading '" + path + "'");
    return parse_csv(text, opts);
}

std::string to_csv(const Dataset& data) {
    std::string out;
    const auto& cols = data.columns();
    for (std::size_t j = 0; j < cols.size(); ++j) {
        if (j) out.push_back(',');
        out += quote_field(cols[j].name);
    }
    out.push_back('\n');
    for (std::size_t i = 0; i < data.rows(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) {
            if (j) out.push_back(',');
            out += quote_field(cols[j].label(i));
        }
        out.push_back('\n');
    }
    return out;
}

void write_csv(const std::string& path, const Dataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << to_csv(data);
}

}  // namespace trafo
