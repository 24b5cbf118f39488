#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace can::data {

enum class Side { User, Item };
enum class Kind { Scalar, Sequence };

struct FieldSpec {
  std::string name;
  Side side = Side::User;
  Kind kind = Kind::Scalar;
  std::int64_t cardinality = 1;
  std::int64_t max_len = 1;

  bool operator==(const FieldSpec&) const = default;
};

// Ordered, validated list of fields. Field order is the declaration order and
// is used everywhere a per-field layout is needed.
class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<FieldSpec> fields);

  const std::vector<FieldSpec>& fields() const { return fields_; }
  std::size_t size() const { return fields_.size(); }
  const FieldSpec& operator[](std::size_t i) const { return fields_[i]; }

  std::optional<std::size_t> find(std::string_view name) const;
  // Throws SchemaError naming the field when absent.
  std::size_t index(std::string_view name) const;

  bool operator==(const Schema&) const = default;

 private:
  std::vector<FieldSpec> fields_;
};

struct Example {
  std::uint8_t label = 0;
  // One entry per schema field, in schema order. Scalars hold exactly one id.
  std::vector<std::vector<std::int32_t>> values;

  std::int32_t scalar(std::size_t field) const { return values[field].front(); }
  bool operator==(const Example&) const = default;
};

struct Dataset {
  Schema schema;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

// Checks ids, lengths and label against the schema; throws SchemaError.
void validate_example(const Schema& schema, const Example& ex);

// Schema file: one field per line, `name side kind cardinality max_len`.
// Blank lines and lines starting with '#' are ignored.
Schema parse_schema(std::istream& in);
Schema load_schema(const std::string& path);
void write_schema(std::ostream& out, const Schema& schema);
void save_schema(const std::string& path, const Schema& schema);

// Record format: `label|field=v[,v...]|field=...`, one example per line.
Example parse_record(std::string_view line, const Schema& schema, std::size_t line_no = 0);
std::string format_record(const Example& ex, const Schema& schema);

Dataset load_dataset(const std::string& path, const Schema& schema);
Dataset read_dataset(std::istream& in, const Schema& schema);
void write_dataset(std::ostream& out, const Dataset& ds);
void save_dataset(const std::string& path, const Dataset& ds);

// Keeps the most recent `max_len` entries (the tail) of every sequence field.
Dataset cutoff_sequences(const Dataset& ds, std::size_t max_len);

std::string_view side_name(Side s);
std::string_view kind_name(Kind k);

}  // namespace can::data
