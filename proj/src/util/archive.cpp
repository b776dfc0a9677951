#include "geco/util/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace geco::util {

static_assert(std::endian::native == std::endian::little, "archive format assumes little-endian");

namespace {
constexpr char kMagic[8] = {'G', 'E', 'C', 'O', 'A', 'R', 'C', '1'};

template <class T>
std::vector<unsigned char> to_bytes(std::span<const T> v) {
  std::vector<unsigned char> b(v.size_bytes());
  if (!v.empty()) std::memcpy(b.data(), v.data(), b.size());
  return b;
}

template <class T>
std::vector<T> from_bytes(const std::vector<unsigned char>& b) {
  std::vector<T> v(b.size() / sizeof(T));
  if (!v.empty()) std::memcpy(v.data(), b.data(), b.size());
  return v;
}

std::int64_t count_of(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}
}  // namespace

void Archive::put(const std::string& name, const std::vector<std::int64_t>& shape,
                  std::span<const float> values) {
  if (count_of(shape) != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("archive: shape/value mismatch for " + name);
  arrays_[name] = Entry{"f32", shape, to_bytes(values)};
}

void Archive::put(const std::string& name, const std::vector<std::int64_t>& shape,
                  std::span<const double> values) {
  if (count_of(shape) != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument("archive: shape/value mismatch for " + name);
  arrays_[name] = Entry{"f64", shape, to_bytes(values)};
}

const Archive::Entry& Archive::entry(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw std::out_of_range("archive: missing array " + name);
  return it->second;
}

std::vector<float> Archive::get_f32(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != "f32") throw std::runtime_error("archive: " + name + " is " + e.dtype + ", not f32");
  return from_bytes<float>(e.bytes);
}

std::vector<double> Archive::get_f64(const std::string& name) const {
  const auto& e = entry(name);
  if (e.dtype != "f64") throw std::runtime_error("archive: " + name + " is " + e.dtype + ", not f64");
  return from_bytes<double>(e.bytes);
}

const std::vector<std::int64_t>& Archive::shape(const std::string& name) const { return entry(name).shape; }

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : arrays_) out.push_back(k);
  return out;
}

void Archive::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["kind"] = kind;
  header["format_version"] = kFormatVersion;
  header["meta"] = meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : arrays_) {
    header["arrays"].push_back(
        {{"name", name}, {"dtype", e.dtype}, {"shape", e.shape}, {"offset", offset}, {"nbytes", e.bytes.size()}});
    offset += e.bytes.size();
  }
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("archive: cannot write " + tmp.string());
    const std::uint32_t version = kFormatVersion;
    const std::uint64_t len = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [_, e] : arrays_)
      out.write(reinterpret_cast<const char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
    if (!out) throw std::runtime_error("archive: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("archive: cannot open " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("archive: " + path.string() + " is not a checkpoint archive");
  if (version != kFormatVersion)
    throw std::runtime_error("archive: unsupported format version " + std::to_string(version));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);

  Archive a;
  a.kind = header.at("kind").get<std::string>();
  a.meta = header.at("meta");
  for (const auto& rec : header.at("arrays")) {
    Entry e;
    e.dtype = rec.at("dtype").get<std::string>();
    e.shape = rec.at("shape").get<std::vector<std::int64_t>>();
    e.bytes.resize(rec.at("nbytes").get<std::size_t>());
    in.read(reinterpret_cast<char*>(e.bytes.data()), static_cast<std::streamsize>(e.bytes.size()));
    if (!in) throw std::runtime_error("archive: truncated payload in " + path.string());
    a.arrays_[rec.at("name").get<std::string>()] = std::move(e);
  }
  return a;
}

}  // namespace geco::util
