#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sinkflow/errors.hpp"
#include "sinkflow/matrix.hpp"

namespace sinkflow::tab {

enum class ColumnKind { continuous, categorical, label };

inline const char* kind_name(ColumnKind k) {
    switch (k) {
        case ColumnKind::continuous: return "continuous";
        case ColumnKind::categorical: return "categorical";
        case ColumnKind::label: return "label";
    }
    return "?";
}

// One column of a flow table. Continuous columns live in `nums` (NaN marks a
// missing or unparseable cell); categorical and label columns live in `cats`.
struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::continuous;
    std::vector<double> nums;
    std::vector<std::string> cats;

    std::size_t size() const { return kind == ColumnKind::continuous ? nums.size() : cats.size(); }
};

struct Provenance {
    std::string source;
    std::size_t row_count = 0;
    std::size_t parse_failures = 0;
};

// Rows of mixed-type network-flow features plus schema metadata; the dataset
// object threaded through the whole pipeline.
struct FlowTable {
    std::vector<Column> columns;
    Provenance provenance;

    std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
    std::size_t cols() const { return columns.size(); }

    const Column* find(const std::string& name) const {
        for (const auto& c : columns)
            if (c.name == name) return &c;
        return nullptr;
    }
    Column* find(const std::string& name) {
        for (auto& c : columns)
            if (c.name == name) return &c;
        return nullptr;
    }

    int label_index() const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i].kind == ColumnKind::label) return static_cast<int>(i);
        return -1;
    }

    const Column& label_column() const {
        const int idx = label_index();
        if (idx < 0) throw SchemaError("table has no label column");
        return columns[static_cast<std::size_t>(idx)];
    }

    void validate() const {
        std::set<std::string> names;
        int labels = 0;
        for (const auto& c : columns) {
            if (!names.insert(c.name).second) throw SchemaError("duplicate column name: " + c.name);
            if (c.kind == ColumnKind::label) ++labels;
            if (c.size() != rows()) throw SchemaError("column " + c.name + " has inconsistent row count");
        }
        if (labels != 1) throw SchemaError("table must have exactly one label column");
    }

    // Matrix view of the continuous columns, in column order.
    Matrix feature_matrix() const {
        std::vector<const Column*> feats;
        for (const auto& c : columns)
            if (c.kind == ColumnKind::continuous) feats.push_back(&c);
        Matrix out(rows(), feats.size());
        for (std::size_t j = 0; j < feats.size(); ++j)
            for (std::size_t i = 0; i < rows(); ++i) out(i, j) = feats[j]->nums[i];
        return out;
    }

    std::vector<std::string> feature_names() const {
        std::vector<std::string> names;
        for (const auto& c : columns)
            if (c.kind == ColumnKind::continuous) names.push_back(c.name);
        return names;
    }

    FlowTable select_rows(const std::vector<std::size_t>& idx) const {
        FlowTable out;
        out.provenance = provenance;
        out.provenance.row_count = idx.size();
        for (const auto& c : columns) {
            Column nc;
            nc.name = c.name;
            nc.kind = c.kind;
            if (c.kind == ColumnKind::continuous) {
                nc.nums.reserve(idx.size());
                for (std::size_t i : idx) nc.nums.push_back(c.nums[i]);
            } else {
                nc.cats.reserve(idx.size());
                for (std::size_t i : idx) nc.cats.push_back(c.cats[i]);
            }
            out.columns.push_back(std::move(nc));
        }
        return out;
    }

    void append_rows(const FlowTable& other) {
        if (other.cols() != cols()) throw SchemaError("append_rows: column count differs");
        for (std::size_t j = 0; j < columns.size(); ++j) {
            if (columns[j].name != other.columns[j].name || columns[j].kind != other.columns[j].kind)
                throw SchemaError("append_rows: schema differs at column " + columns[j].name);
            if (columns[j].kind == ColumnKind::continuous)
                columns[j].nums.insert(columns[j].nums.end(), other.columns[j].nums.begin(),
                                       other.columns[j].nums.end());
            else
                columns[j].cats.insert(columns[j].cats.end(), other.columns[j].cats.begin(),
                                       other.columns[j].cats.end());
        }
        provenance.row_count = rows();
    }
};

struct SchemaHints {
    std::string label_column = "label";
    std::map<std::string, ColumnKind> kind_overrides;
    // columns with fewer distinct numeric values than this are kinded categorical
    std::size_t min_distinct_continuous = 20;
};

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
    const char* begin = s.data();
    const char* end = begin + s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(*begin))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(end[-1]))) --end;
    if (begin == end) return false;
    auto [ptr, ec] = std::from_chars(begin, end, out);
    return ec == std::errc() && ptr == end;
}

// RFC 4180 CSV reader: quoted fields may contain commas, quotes ("") and
// line breaks. Returns one record per call; false at end of input.
inline bool read_record(std::istream& in, std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    int ch;
    while ((ch = in.get()) != EOF) {
        any = true;
        const char c = static_cast<char>(ch);
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    field.push_back('"');
                    in.get();
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\r') {
            if (in.peek() == '\n') in.get();
            fields.push_back(std::move(field));
            return true;
        } else if (c == '\n') {
            fields.push_back(std::move(field));
            return true;
        } else {
            field.push_back(c);
        }
    }
    if (!any) return false;
    fields.push_back(std::move(field));
    return true;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

inline std::string format_cell(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// Reads a typed FlowTable from an RFC 4180 CSV file with a header row.
// Column kinds are inferred: everything numeric is continuous unless it has
// fewer than hints.min_distinct_continuous distinct values (then
// categorical); non-numeric columns are categorical. Hints override both.
inline FlowTable ingest_csv(const std::string& path, const SchemaHints& hints = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open CSV file: " + path);

    std::vector<std::string> header;
    if (!detail::read_record(in, header) || header.empty() || (header.size() == 1 && header[0].empty()))
        throw SchemaError("CSV file has no header row: " + path);

    std::vector<std::vector<std::string>> raw(header.size());
    std::vector<std::string> fields;
    std::size_t row_number = 1;
    while (detail::read_record(in, fields)) {
        ++row_number;
        if (fields.size() == 1 && fields[0].empty()) continue;  // trailing blank line
        if (fields.size() != header.size())
            throw SchemaError("CSV row " + std::to_string(row_number) + " has " +
                              std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(header.size()));
        for (std::size_t j = 0; j < fields.size(); ++j) raw[j].push_back(std::move(fields[j]));
    }
    if (raw[0].empty()) throw SchemaError("CSV file has a header but no data rows: " + path);

    FlowTable table;
    table.provenance.source = path;
    table.provenance.row_count = raw[0].size();

    for (std::size_t j = 0; j < header.size(); ++j) {
        Column col;
        col.name = header[j];

        std::vector<double> parsed(raw[j].size());
        std::size_t failures = 0, successes = 0;
        std::set<double> distinct;
        for (std::size_t i = 0; i < raw[j].size(); ++i) {
            double v;
            if (raw[j][i].empty()) {
                parsed[i] = std::numeric_limits<double>::quiet_NaN();
            } else if (detail::parse_double(raw[j][i], v) && std::isfinite(v)) {
                parsed[i] = v;
                distinct.insert(v);
                ++successes;
            } else {
                // non-numeric or non-finite ("Infinity" cells in flow dumps)
                parsed[i] = std::numeric_limits<double>::quiet_NaN();
                ++failures;
            }
        }
        const bool numeric = successes > 0 && failures <= successes;

        ColumnKind kind;
        if (col.name == hints.label_column) {
            kind = ColumnKind::label;
        } else if (auto it = hints.kind_overrides.find(col.name); it != hints.kind_overrides.end()) {
            kind = it->second;
        } else if (!numeric) {
            kind = ColumnKind::categorical;
        } else if (distinct.size() < hints.min_distinct_continuous) {
            kind = ColumnKind::categorical;
        } else {
            kind = ColumnKind::continuous;
        }

        col.kind = kind;
        if (kind == ColumnKind::continuous) {
            table.provenance.parse_failures += failures;
            col.nums = std::move(parsed);
        } else {
            col.cats = std::move(raw[j]);
        }
        table.columns.push_back(std::move(col));
    }
    table.validate();
    return table;
}

inline void write_csv(const FlowTable& table, std::ostream& out) {
    for (std::size_t j = 0; j < table.columns.size(); ++j) {
        if (j) out << ',';
        out << detail::csv_escape(table.columns[j].name);
    }
    out << '\n';
    for (std::size_t i = 0; i < table.rows(); ++i) {
        for (std::size_t j = 0; j < table.columns.size(); ++j) {
            if (j) out << ',';
            const Column& c = table.columns[j];
            if (c.kind == ColumnKind::continuous)
                out << detail::format_cell(c.nums[i]);
            else
                out << detail::csv_escape(c.cats[i]);
        }
        out << '\n';
    }
}

inline void write_csv(const FlowTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write CSV file: " + path);
    write_csv(table, out);
    if (!out.good()) throw IoError("failed while writing CSV file: " + path);
}

}  // namespace sinkflow::tab
