#pragma once

// Self-describing columnar table file ("rscol").
//
// Layout (all integers little-endian):
//   magic    8 bytes  "RSCOL\0\1\0"
//   u64      header length H
//   H bytes  JSON header {"num_rows": N, "columns": [{"name", "type", "offset", "length"}]}
//   column blocks, offsets relative to the first byte after the header
//
// Column block encodings:
//   int64 / float64 : N fixed-width values
//   bytes / string  : (N+1) u64 offsets, then payload
//   string_list     : (N+1) u64 list offsets into the item table, then
//                     (M+1) u64 item offsets, then payload (M = total items)

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace rsgen::columnar {

enum class ColumnType { Int64, Float64, Bytes, String, StringList };

const char* to_string(ColumnType t);

using Int64Column = std::vector<std::int64_t>;
using Float64Column = std::vector<double>;
using BytesColumn = std::vector<std::vector<std::uint8_t>>;
using StringColumn = std::vector<std::string>;
using StringListColumn = std::vector<std::vector<std::string>>;

using ColumnData =
    std::variant<Int64Column, Float64Column, BytesColumn, StringColumn, StringListColumn>;

struct Column {
    std::string name;
    ColumnData data;

    ColumnType type() const;
    std::size_t size() const;
};

class Table {
public:
    Table() = default;

    // Throws ArgumentError on duplicate name or row-count mismatch.
    void add_column(std::string name, ColumnData data);

    std::size_t num_rows() const { return num_rows_; }
    const std::vector<Column>& columns() const { return columns_; }
    bool has_column(const std::string& name) const;

    // Throws SchemaError when the column is missing or has a different type.
    const Int64Column& int64s(const std::string& name) const;
    const Float64Column& float64s(const std::string& name) const;
    const BytesColumn& bytes(const std::string& name) const;
    const StringColumn& strings(const std::string& name) const;
    const StringListColumn& string_lists(const std::string& name) const;

    friend bool operator==(const Table& a, const Table& b);

private:
    const Column& find(const std::string& name, ColumnType want) const;

    std::vector<Column> columns_;
    std::size_t num_rows_ = 0;
};

// Atomic: on failure no partial file is left at `path`.
void write_table(const std::filesystem::path& path, const Table& table);

// Throws IoError when unreadable, SchemaError when malformed.
Table read_table(const std::filesystem::path& path);

}  // namespace rsgen::columnar
