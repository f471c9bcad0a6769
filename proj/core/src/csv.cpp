#include "csv.hpp"

#include "epigam/errors.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace epigam::csv {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) {
        ++b;
    }
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) {
        --e;
    }
    return std::string(s.substr(b, e - b));
}

} // namespace

std::vector<std::string> split_line(std::string_view line) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(trim(field));
            field.clear();
        } else {
            field.push_back(ch);
        }
    }
    out.push_back(trim(field));
    return out;
}

Table Table::read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

Table Table::parse(std::string_view text, std::string source) {
    Table t;
    t.source_ = std::move(source);
    // Strip a UTF-8 byte order mark.
    if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
        static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF) {
        text.remove_prefix(3);
    }
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool have_header = false;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            nl = text.size();
        }
        std::string_view line = text.substr(pos, nl - pos);
        ++line_no;
        pos = nl + 1;
        if (trim(line).empty()) {
            if (nl == text.size()) {
                break;
            }
            continue;
        }
        auto fields = split_line(line);
        if (!have_header) {
            t.header_ = std::move(fields);
            have_header = true;
        } else {
            if (fields.size() != t.header_.size()) {
                throw SchemaError(t.source_ + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(t.header_.size()) + " fields, found " +
                                  std::to_string(fields.size()));
            }
            t.rows_.push_back(std::move(fields));
            t.lines_.push_back(line_no);
        }
        if (nl == text.size()) {
            break;
        }
    }
    if (!have_header) {
        throw SchemaError(t.source_ + ": missing header row");
    }
    return t;
}

bool Table::has_column(std::string_view name) const {
    for (const auto& h : header_) {
        if (h == name) {
            return true;
        }
    }
    return false;
}

std::size_t Table::column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i) {
        if (header_[i] == name) {
            return i;
        }
    }
    throw SchemaError(source_ + ":1: missing required column '" + std::string(name) + "'");
}

std::optional<double> Table::number(std::size_t row, std::size_t col) const {
    const std::string& s = rows_[row][col];
    if (s.empty()) {
        return std::nullopt;
    }
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (*first == '+') {
        ++first;
    }
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) {
        throw SchemaError(source_ + ":" + std::to_string(lines_[row]) + ": column '" + header_[col] +
                          "' is not a number: '" + s + "'");
    }
    return v;
}

double Table::required_number(std::size_t row, std::size_t col) const {
    auto v = number(row, col);
    if (!v) {
        throw SchemaError(source_ + ":" + std::to_string(lines_[row]) + ": column '" + header_[col] +
                          "' must not be empty");
    }
    return *v;
}

} // namespace epigam::csv
