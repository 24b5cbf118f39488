#include "can/data/split.hpp"

#include <unordered_set>

#include "can/error.hpp"

namespace can::data {

GeneralizationSplit split_generalization(const Dataset& train, const Dataset& test, std::string_view user_field,
                                         std::string_view item_field) {
  const std::size_t train_u = train.schema.index(user_field);
  const std::size_t train_m = train.schema.index(item_field);
  const std::size_t test_u = test.schema.index(user_field);
  const std::size_t test_m = test.schema.index(item_field);
  for (std::size_t f : {test_u, test_m}) {
    if (test.schema[f].kind != Kind::Scalar) {
      throw SchemaError("generalization split needs scalar fields, '" + test.schema[f].name + "' is a sequence");
    }
  }
  const auto key = [](std::int32_t a, std::int32_t b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  };
  std::unordered_set<std::uint64_t> pairs;
  pairs.reserve(train.size());
  for (const Example& ex : train.examples) pairs.insert(key(ex.scalar(train_u), ex.scalar(train_m)));

  GeneralizationSplit out{Dataset{test.schema, {}}, Dataset{test.schema, {}}};
  for (const Example& ex : test.examples) {
    auto& dst = pairs.count(key(ex.scalar(test_u), ex.scalar(test_m))) ? out.seen : out.unseen;
    dst.examples.push_back(ex);
  }
  return out;
}

}  // namespace can::data
