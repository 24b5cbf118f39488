#include "can/embeddings/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <vector>

#include "can/error.hpp"

namespace can::emb {

namespace {

namespace fs = std::filesystem;

void encode_le(double v, unsigned char* out) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out[b] = static_cast<unsigned char>(bits >> (8 * b));
}

double decode_le(const unsigned char* in) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(in[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

std::string shape_token(const num::Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

struct ManifestEntry {
  std::string group;
  std::string shape;
  std::string checksum;
};

}  // namespace

std::uint64_t checksum(std::span<const double> values) {
  std::uint64_t h = 1469598103934665603ULL;
  unsigned char bytes[8];
  for (double v : values) {
    encode_le(v, bytes);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void save_checkpoint(const std::string& dir, const ParameterStore& store) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory '" + dir + "': " + ec.message());
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw IoError("cannot write manifest in '" + dir + "'");
  std::vector<unsigned char> buf;
  for (const num::Parameter* p : store.all()) {
    const auto values = p->value.data();
    buf.resize(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) encode_le(values[i], buf.data() + 8 * i);
    const fs::path file = fs::path(dir) / (p->name + ".bin");
    std::ofstream out(file, std::ios::binary);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing '" + file.string() + "'");
    manifest << p->name << ' ' << group_name(store.group_of(*p)) << ' ' << shape_token(p->value.shape()) << ' '
             << hex(checksum(values)) << '\n';
  }
  if (!manifest) throw IoError("failed writing manifest in '" + dir + "'");
}

void load_checkpoint(const std::string& dir, ParameterStore& store) {
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw IoError("missing checkpoint manifest in '" + dir + "'");
  std::map<std::string, ManifestEntry> entries;
  std::string name;
  ManifestEntry e;
  while (manifest >> name >> e.group >> e.shape >> e.checksum) entries[name] = e;

  std::vector<unsigned char> buf;
  for (num::Parameter* p : store.all()) {
    const auto it = entries.find(p->name);
    if (it == entries.end()) throw IoError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second.shape != shape_token(p->value.shape())) {
      throw IoError("checkpoint shape " + it->second.shape + " for '" + p->name + "' does not match " +
                    shape_token(p->value.shape()));
    }
    const fs::path file = fs::path(dir) / (p->name + ".bin");
    std::ifstream in(file, std::ios::binary);
    buf.assign(p->value.size() * 8, 0);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in || in.peek() != std::char_traits<char>::eof()) {
      throw IoError("'" + file.string() + "' has the wrong size");
    }
    auto values = p->value.data();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = decode_le(buf.data() + 8 * i);
    if (hex(checksum(values)) != it->second.checksum) throw IoError("checksum mismatch for '" + p->name + "'");
  }
}

}  // namespace can::emb
