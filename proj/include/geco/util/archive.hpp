#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace geco::util {

// Self-describing binary container used for checkpoints.
//
// Layout (little-endian):
//   8 bytes  magic "GECOARC1"
//   u32      format version
//   u64      header length L
//   L bytes  UTF-8 JSON header {kind, meta, arrays: [{name, dtype, shape, offset, nbytes}]}
//   payload  raw array bytes, offsets relative to payload start
class Archive {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string kind;
  nlohmann::json meta = nlohmann::json::object();

  void put(const std::string& name, const std::vector<std::int64_t>& shape, std::span<const float> values);
  void put(const std::string& name, const std::vector<std::int64_t>& shape, std::span<const double> values);

  bool has(const std::string& name) const { return arrays_.count(name) != 0; }
  std::vector<float> get_f32(const std::string& name) const;
  std::vector<double> get_f64(const std::string& name) const;
  const std::vector<std::int64_t>& shape(const std::string& name) const;
  std::vector<std::string> names() const;

  // Atomic: writes a sibling temp file then renames it over the target.
  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

 private:
  struct Entry {
    std::string dtype;
    std::vector<std::int64_t> shape;
    std::vector<unsigned char> bytes;
  };
  const Entry& entry(const std::string& name) const;
  std::map<std::string, Entry> arrays_;
};

}  // namespace geco::util
