#include "can/data/dataset.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "can/error.hpp"

namespace can::data {

namespace {

std::string at_line(std::size_t line_no) {
  return line_no ? "line " + std::to_string(line_no) + ": " : std::string();
}

template <class Int>
bool parse_int(std::string_view text, Int& out) {
  if (text.empty()) return false;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(text.substr(start));
      return parts;
    }
    parts.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace

std::string_view side_name(Side s) { return s == Side::User ? "user" : "item"; }
std::string_view kind_name(Kind k) { return k == Kind::Scalar ? "scalar" : "sequence"; }

Schema::Schema(std::vector<FieldSpec> fields) : fields_(std::move(fields)) {
  std::unordered_set<std::string> names;
  for (const FieldSpec& f : fields_) {
    if (f.name.empty() || f.name.find_first_of("|=, \t") != std::string::npos) {
      throw SchemaError("invalid field name '" + f.name + "'");
    }
    if (!names.insert(f.name).second) throw SchemaError("duplicate field '" + f.name + "'");
    if (f.cardinality < 1) throw SchemaError("field '" + f.name + "' must have cardinality >= 1");
    if (f.kind == Kind::Scalar && f.max_len != 1) throw SchemaError("scalar field '" + f.name + "' must have max_len 1");
    if (f.kind == Kind::Sequence && f.max_len < 1) throw SchemaError("sequence field '" + f.name + "' needs max_len >= 1");
  }
}

std::optional<std::size_t> Schema::find(std::string_view name) const {
  for (std::size_t i = 0; i < fields_.size(); ++i)
    if (fields_[i].name == name) return i;
  return std::nullopt;
}

std::size_t Schema::index(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw SchemaError("unknown field '" + std::string(name) + "'");
}

void validate_example(const Schema& schema, const Example& ex) {
  if (ex.label > 1) throw SchemaError("label must be 0 or 1");
  if (ex.values.size() != schema.size()) {
    throw SchemaError("example has " + std::to_string(ex.values.size()) + " fields, schema has " +
                      std::to_string(schema.size()));
  }
  for (std::size_t f = 0; f < schema.size(); ++f) {
    const FieldSpec& spec = schema[f];
    const auto& vals = ex.values[f];
    if (spec.kind == Kind::Scalar && vals.size() != 1) {
      throw SchemaError("scalar field '" + spec.name + "' needs exactly one id");
    }
    if (static_cast<std::int64_t>(vals.size()) > spec.max_len) {
      throw SchemaError("field '" + spec.name + "' has " + std::to_string(vals.size()) + " ids, max_len is " +
                        std::to_string(spec.max_len));
    }
    for (std::int32_t id : vals) {
      if (id < 0 || id >= spec.cardinality) {
        throw SchemaError("field '" + spec.name + "' id " + std::to_string(id) + " outside [0, " +
                          std::to_string(spec.cardinality) + ")");
      }
    }
  }
}

Schema parse_schema(std::istream& in) {
  std::vector<FieldSpec> fields;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim_cr(line);
    const std::size_t first = view.find_first_not_of(" \t");
    if (first == std::string_view::npos || view[first] == '#') continue;
    std::istringstream ls{std::string(view)};
    std::string name, side, kind, extra;
    std::int64_t card = 0, max_len = 0;
    if (!(ls >> name >> side >> kind >> card >> max_len) || (ls >> extra)) {
      throw ParseError(at_line(line_no) + "expected `name side kind cardinality max_len`");
    }
    FieldSpec f;
    f.name = name;
    if (side == "user") f.side = Side::User;
    else if (side == "item") f.side = Side::Item;
    else throw ParseError(at_line(line_no) + "side must be user or item, got '" + side + "'");
    if (kind == "scalar") f.kind = Kind::Scalar;
    else if (kind == "sequence") f.kind = Kind::Sequence;
    else throw ParseError(at_line(line_no) + "kind must be scalar or sequence, got '" + kind + "'");
    f.cardinality = card;
    f.max_len = max_len;
    fields.push_back(f);
  }
  return Schema(std::move(fields));
}

Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema file '" + path + "'");
  return parse_schema(in);
}

void write_schema(std::ostream& out, const Schema& schema) {
  for (const FieldSpec& f : schema.fields()) {
    out << f.name << ' ' << side_name(f.side) << ' ' << kind_name(f.kind) << ' ' << f.cardinality << ' '
        << f.max_len << '\n';
  }
}

void save_schema(const std::string& path, const Schema& schema) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write schema file '" + path + "'");
  write_schema(out, schema);
  if (!out) throw IoError("failed writing '" + path + "'");
}

Example parse_record(std::string_view line, const Schema& schema, std::size_t line_no) {
  const auto parts = split(line, '|');
  Example ex;
  int label = -1;
  if (!parse_int(parts[0], label) || (label != 0 && label != 1)) {
    throw ParseError(at_line(line_no) + "label must be 0 or 1, got '" + std::string(parts[0]) + "'");
  }
  ex.label = static_cast<std::uint8_t>(label);
  ex.values.resize(schema.size());
  std::vector<bool> seen(schema.size(), false);
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const std::string_view item = parts[p];
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(at_line(line_no) + "expected field=value, got '" + std::string(item) + "'");
    }
    const std::string_view name = item.substr(0, eq);
    const auto idx = schema.find(name);
    if (!idx) throw SchemaError(at_line(line_no) + "unknown field '" + std::string(name) + "'");
    if (seen[*idx]) throw ParseError(at_line(line_no) + "field '" + std::string(name) + "' given twice");
    seen[*idx] = true;
    const std::string_view vals = item.substr(eq + 1);
    auto& out = ex.values[*idx];
    if (!vals.empty()) {
      for (std::string_view v : split(vals, ',')) {
        std::int64_t id = 0;
        if (!parse_int(v, id)) {
          throw ParseError(at_line(line_no) + "field '" + std::string(name) + "' has non-numeric id '" +
                           std::string(v) + "'");
        }
        const FieldSpec& spec = schema[*idx];
        if (id < 0 || id >= spec.cardinality) {
          throw SchemaError(at_line(line_no) + "field '" + spec.name + "' id " + std::to_string(id) +
                            " outside [0, " + std::to_string(spec.cardinality) + ")");
        }
        out.push_back(static_cast<std::int32_t>(id));
      }
    }
  }
  for (std::size_t f = 0; f < schema.size(); ++f) {
    if (!seen[f]) throw SchemaError(at_line(line_no) + "missing field '" + schema[f].name + "'");
  }
  try {
    validate_example(schema, ex);
  } catch (const SchemaError& e) {
    throw SchemaError(at_line(line_no) + e.what());
  }
  return ex;
}

std::string format_record(const Example& ex, const Schema& schema) {
  std::string out = std::to_string(ex.label);
  for (std::size_t f = 0; f < schema.size(); ++f) {
    out += '|';
    out += schema[f].name;
    out += '=';
    const auto& vals = ex.values[f];
    for (std::size_t k = 0; k < vals.size(); ++k) {
      if (k) out += ',';
      out += std::to_string(vals[k]);
    }
  }
  return out;
}

Dataset read_dataset(std::istream& in, const Schema& schema) {
  Dataset ds{schema, {}};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim_cr(line);
    if (view.empty()) continue;
    ds.examples.push_back(parse_record(view, schema, line_no));
  }
  return ds;
}

Dataset load_dataset(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file '" + path + "'");
  return read_dataset(in, schema);
}

void write_dataset(std::ostream& out, const Dataset& ds) {
  for (const Example& ex : ds.examples) out << format_record(ex, ds.schema) << '\n';
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file '" + path + "'");
  write_dataset(out, ds);
  if (!out) throw IoError("failed writing '" + path + "'");
}

Dataset cutoff_sequences(const Dataset& ds, std::size_t max_len) {
  Dataset out = ds;
  for (std::size_t f = 0; f < ds.schema.size(); ++f) {
    if (ds.schema[f].kind != Kind::Sequence) continue;
    for (Example& ex : out.examples) {
      auto& seq = ex.values[f];
      if (seq.size() > max_len) seq.erase(seq.begin(), seq.end() - static_cast<std::ptrdiff_t>(max_len));
    }
  }
  return out;
}

}  // namespace can::data
