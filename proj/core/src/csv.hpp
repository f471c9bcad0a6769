#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace epigam::csv {

/// Header-indexed CSV table. Quoted fields may contain commas; embedded
/// newlines are not supported.
class Table {
public:
    static Table read_file(const std::string& path);
    static Table parse(std::string_view text, std::string source);

    /// Throws SchemaError naming the column when it is absent from the header.
    std::size_t column(std::string_view name) const;
    bool has_column(std::string_view name) const;

    std::size_t rows() const noexcept { return rows_.size(); }
    const std::string& cell(std::size_t row, std::size_t col) const { return rows_[row][col]; }
    /// 1-based line number of a data row (the header is line 1).
    std::size_t line_of(std::size_t row) const { return lines_[row]; }
    const std::string& source() const noexcept { return source_; }

    /// Empty cell -> nullopt; non-numeric cell -> SchemaError with line and column.
    std::optional<double> number(std::size_t row, std::size_t col) const;
    double required_number(std::size_t row, std::size_t col) const;

private:
    std::string source_;
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
    std::vector<std::size_t> lines_;
};

std::vector<std::string> split_line(std::string_view line);

} // namespace epigam::csv
