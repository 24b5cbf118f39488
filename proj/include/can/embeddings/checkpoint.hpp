#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "can/embeddings/embeddings.hpp"

namespace can::emb {

// FNV-1a over the little-endian bytes of the values.
std::uint64_t checksum(std::span<const double> values);

// Writes `<dir>/<name>.bin` per parameter (little-endian doubles, row-major)
// and `<dir>/manifest.txt` with one `name group shape checksum` line each.
void save_checkpoint(const std::string& dir, const ParameterStore& store);

// Loads values into an already-shaped store. Every store parameter must be in
// the manifest with the same shape; checksum mismatches raise IoError.
void load_checkpoint(const std::string& dir, ParameterStore& store);

}  // namespace can::emb
