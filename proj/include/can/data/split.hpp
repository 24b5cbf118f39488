#pragma once

#include <string_view>

#include "can/data/dataset.hpp"

namespace can::data {

struct GeneralizationSplit {
  Dataset seen;
  Dataset unseen;
};

// Partitions `test` by whether its (user_field, item_field) id pair occurs
// anywhere in `train`. Both fields must be scalar fields of the schema.
GeneralizationSplit split_generalization(const Dataset& train, const Dataset& test, std::string_view user_field,
                                         std::string_view item_field);

}  // namespace can::data
