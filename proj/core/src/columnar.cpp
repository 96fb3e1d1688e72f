#include "rsgen/columnar.hpp"

#include <cstring>
#include <nlohmann/json.hpp>

#include "rsgen/errors.hpp"
#include "rsgen/io.hpp"

namespace rsgen::columnar {

namespace {

constexpr char kMagic[8] = {'R', 'S', 'C', 'O', 'L', '\0', '\1', '\0'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

template <typename Range>
void put_var(std::vector<std::uint8_t>& out, const Range& items) {
    std::uint64_t off = 0;
    put_u64(out, 0);
    for (const auto& it : items) {
        off += it.size();
        put_u64(out, off);
    }
    for (const auto& it : items) {
        out.insert(out.end(), reinterpret_cast<const std::uint8_t*>(it.data()),
                   reinterpret_cast<const std::uint8_t*>(it.data()) + it.size());
    }
}

std::vector<std::uint8_t> encode_column(const ColumnData& data) {
    std::vector<std::uint8_t> out;
    std::visit(
        [&](const auto& col) {
            using T = std::decay_t<decltype(col)>;
            if constexpr (std::is_same_v<T, Int64Column>) {
                for (auto v : col) put_u64(out, static_cast<std::uint64_t>(v));
            } else if constexpr (std::is_same_v<T, Float64Column>) {
                for (double v : col) {
                    std::uint64_t bits;
                    std::memcpy(&bits, &v, sizeof bits);
                    put_u64(out, bits);
                }
            } else if constexpr (std::is_same_v<T, BytesColumn> ||
                                 std::is_same_v<T, StringColumn>) {
                put_var(out, col);
            } else {
                std::uint64_t items = 0;
                put_u64(out, 0);
                for (const auto& list : col) {
                    items += list.size();
                    put_u64(out, items);
                }
                std::vector<std::string_view> flat;
                flat.reserve(items);
                for (const auto& list : col)
                    for (const auto& s : list) flat.emplace_back(s);
                put_var(out, flat);
            }
        },
        data);
    return out;
}

class Reader {
public:
    Reader(const std::uint8_t* p, std::size_t n, std::string where)
        : p_(p), n_(n), where_(std::move(where)) {}

    std::uint64_t u64_at(std::size_t i) const {
        need((i + 1) * 8);
        return get_u64(p_ + i * 8);
    }
    void need(std::size_t bytes) const {
        if (bytes > n_) throw SchemaError("truncated column block: " + where_);
    }
    const std::uint8_t* data() const { return p_; }

    // Reads an offsets table of `count + 1` entries starting at word `first`
    // and returns the slices of the payload that follows it.
    std::vector<std::pair<std::size_t, std::size_t>> slices(std::size_t first,
                                                            std::size_t count) const {
        const std::size_t payload = (first + count + 1) * 8;
        need(payload);
        std::vector<std::pair<std::size_t, std::size_t>> out(count);
        std::uint64_t prev = u64_at(first);
        if (prev != 0) throw SchemaError("bad offset table: " + where_);
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint64_t cur = u64_at(first + i + 1);
            if (cur < prev) throw SchemaError("non-monotone offsets: " + where_);
            out[i] = {payload + prev, cur - prev};
            prev = cur;
        }
        need(payload + prev);
        return out;
    }

private:
    const std::uint8_t* p_;
    std::size_t n_;
    std::string where_;
};

ColumnType parse_type(const std::string& s) {
    if (s == "int64") return ColumnType::Int64;
    if (s == "float64") return ColumnType::Float64;
    if (s == "bytes") return ColumnType::Bytes;
    if (s == "string") return ColumnType::String;
    if (s == "string_list") return ColumnType::StringList;
    throw SchemaError("unknown column type '" + s + "'");
}

ColumnData decode_column(ColumnType type, const Reader& r, std::size_t rows) {
    switch (type) {
        case ColumnType::Int64: {
            Int64Column col(rows);
            for (std::size_t i = 0; i < rows; ++i) col[i] = static_cast<std::int64_t>(r.u64_at(i));
            return col;
        }
        case ColumnType::Float64: {
            Float64Column col(rows);
            for (std::size_t i = 0; i < rows; ++i) {
                const std::uint64_t bits = r.u64_at(i);
                std::memcpy(&col[i], &bits, sizeof bits);
            }
            return col;
        }
        case ColumnType::Bytes: {
            BytesColumn col;
            col.reserve(rows);
            for (auto [off, len] : r.slices(0, rows))
                col.emplace_back(r.data() + off, r.data() + off + len);
            return col;
        }
        case ColumnType::String: {
            StringColumn col;
            col.reserve(rows);
            for (auto [off, len] : r.slices(0, rows))
                col.emplace_back(reinterpret_cast<const char*>(r.data()) + off, len);
            return col;
        }
        case ColumnType::StringList: {
            std::vector<std::uint64_t> list_off(rows + 1);
            for (std::size_t i = 0; i <= rows; ++i) list_off[i] = r.u64_at(i);
            const std::size_t items = list_off[rows];
            for (std::size_t i = 0; i < rows; ++i)
                if (list_off[i + 1] < list_off[i] || list_off[0] != 0)
                    throw SchemaError("bad list offsets");
            const auto sl = r.slices(rows + 1, items);
            StringListColumn col(rows);
            for (std::size_t i = 0; i < rows; ++i) {
                for (std::uint64_t k = list_off[i]; k < list_off[i + 1]; ++k) {
                    col[i].emplace_back(reinterpret_cast<const char*>(r.data()) + sl[k].first,
                                        sl[k].second);
                }
            }
            return col;
        }
    }
    throw SchemaError("unreachable column type");
}

}  // namespace

const char* to_string(ColumnType t) {
    switch (t) {
        case ColumnType::Int64: return "int64";
        case ColumnType::Float64: return "float64";
        case ColumnType::Bytes: return "bytes";
        case ColumnType::String: return "string";
        case ColumnType::StringList: return "string_list";
    }
    return "?";
}

ColumnType Column::type() const { return static_cast<ColumnType>(data.index()); }

std::size_t Column::size() const {
    return std::visit([](const auto& c) { return c.size(); }, data);
}

void Table::add_column(std::string name, ColumnData data) {
    if (has_column(name)) throw ArgumentError("duplicate column '" + name + "'");
    Column col{std::move(name), std::move(data)};
    if (columns_.empty()) {
        num_rows_ = col.size();
    } else if (col.size() != num_rows_) {
        throw ArgumentError("column '" + col.name + "' has " + std::to_string(col.size()) +
                            " rows, table has " + std::to_string(num_rows_));
    }
    columns_.push_back(std::move(col));
}

bool Table::has_column(const std::string& name) const {
    for (const auto& c : columns_)
        if (c.name == name) return true;
    return false;
}

const Column& Table::find(const std::string& name, ColumnType want) const {
    for (const auto& c : columns_) {
        if (c.name != name) continue;
        if (c.type() != want) {
            throw SchemaError("column '" + name + "' has type " + to_string(c.type()) +
                              ", expected " + to_string(want));
        }
        return c;
    }
    throw SchemaError("missing column '" + name + "'");
}

const Int64Column& Table::int64s(const std::string& name) const {
    return std::get<Int64Column>(find(name, ColumnType::Int64).data);
}
const Float64Column& Table::float64s(const std::string& name) const {
    return std::get<Float64Column>(find(name, ColumnType::Float64).data);
}
const BytesColumn& Table::bytes(const std::string& name) const {
    return std::get<BytesColumn>(find(name, ColumnType::Bytes).data);
}
const StringColumn& Table::strings(const std::string& name) const {
    return std::get<StringColumn>(find(name, ColumnType::String).data);
}
const StringListColumn& Table::string_lists(const std::string& name) const {
    return std::get<StringListColumn>(find(name, ColumnType::StringList).data);
}

bool operator==(const Table& a, const Table& b) {
    if (a.num_rows_ != b.num_rows_ || a.columns_.size() != b.columns_.size()) return false;
    for (std::size_t i = 0; i < a.columns_.size(); ++i) {
        if (a.columns_[i].name != b.columns_[i].name || a.columns_[i].data != b.columns_[i].data)
            return false;
    }
    return true;
}

void write_table(const std::filesystem::path& path, const Table& table) {
    nlohmann::ordered_json header;
    header["num_rows"] = table.num_rows();
    header["columns"] = nlohmann::ordered_json::array();
    std::vector<std::vector<std::uint8_t>> blocks;
    std::uint64_t offset = 0;
    for (const auto& col : table.columns()) {
        blocks.push_back(encode_column(col.data));
        header["columns"].push_back({{"name", col.name},
                                     {"type", to_string(col.type())},
                                     {"offset", offset},
                                     {"length", blocks.back().size()}});
        offset += blocks.back().size();
    }
    const std::string h = header.dump();
    std::vector<std::uint8_t> out(kMagic, kMagic + sizeof kMagic);
    put_u64(out, h.size());
    out.insert(out.end(), h.begin(), h.end());
    for (const auto& b : blocks) out.insert(out.end(), b.begin(), b.end());
    write_file_atomic(path, out);
}

Table read_table(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> buf = read_binary(path);
    if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
        throw SchemaError(path.string() + " is not an rscol table");
    }
    const std::uint64_t hlen = get_u64(buf.data() + 8);
    if (16 + hlen > buf.size()) throw SchemaError("truncated header in " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.begin() + 16, buf.begin() + 16 + static_cast<long>(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("bad header in " + path.string() + ": " + e.what());
    }
    const std::size_t body = 16 + hlen;
    Table table;
    try {
        const std::size_t rows = header.at("num_rows").get<std::size_t>();
        for (const auto& c : header.at("columns")) {
            const auto name = c.at("name").get<std::string>();
            const auto off = c.at("offset").get<std::uint64_t>();
            const auto len = c.at("length").get<std::uint64_t>();
            if (body + off + len > buf.size()) throw SchemaError("column '" + name + "' overruns file");
            Reader r(buf.data() + body + off, len, name);
            table.add_column(name, decode_column(parse_type(c.at("type").get<std::string>()), r, rows));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("bad header in " + path.string() + ": " + e.what());
    } catch (const ArgumentError& e) {
        throw SchemaError(e.what());
    }
    return table;
}

}  // namespace rsgen::columnar
