#include "geco/data/manifest.hpp"

#include <fstream>
#include <sstream>
#include <tuple>

#include "geco/util/hash.hpp"

namespace geco::data {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

void register_item(std::map<std::string, ItemRecord>& items, const std::string& id, Category cat,
                   const std::filesystem::path& path, const std::string& where) {
  using K = ManifestError::Kind;
  if (id.empty()) throw ManifestError(K::integrity, where, "missing " + std::string(to_string(cat)) + " id");
  if (path.empty()) throw ManifestError(K::integrity, where, "missing image path for item " + id);
  auto [it, inserted] = items.emplace(id, ItemRecord{cat, path});
  if (inserted) return;
  if (it->second.category != cat)
    throw ManifestError(K::integrity, where,
                        "category mismatch: item " + id + " is a " + std::string(to_string(it->second.category)) +
                            " but is referenced as a " + std::string(to_string(cat)));
  if (it->second.image_path != path)
    throw ManifestError(K::integrity, where, "item " + id + " listed with two different image paths");
}

}  // namespace

PairManifest PairManifest::build(std::vector<PairRecord> pairs, std::map<std::string, ItemRecord> items,
                                 std::filesystem::path root, const std::vector<std::string>& locations) {
  using K = ManifestError::Kind;
  auto where = [&](std::size_t i) { return i < locations.size() ? locations[i] : "pair #" + std::to_string(i); };

  PairManifest m;
  std::set<std::tuple<Split, std::string, std::string>> seen;
  std::set<std::string> pair_ids;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (p.pair_id.empty()) throw ManifestError(K::integrity, where(i), "missing pair_id");
    if (!pair_ids.insert(p.pair_id).second)
      throw ManifestError(K::integrity, where(i), "duplicate pair_id " + p.pair_id);
    for (auto [id, cat] : {std::pair{&p.top_id, Category::top}, std::pair{&p.bottom_id, Category::bottom}}) {
      auto it = items.find(*id);
      if (id->empty() || it == items.end())
        throw ManifestError(K::integrity, where(i), "missing item '" + *id + "'");
      if (it->second.category != cat)
        throw ManifestError(K::integrity, where(i),
                            "category mismatch: " + *id + " is a " + std::string(to_string(it->second.category)) +
                                ", expected " + std::string(to_string(cat)));
    }
    if (!seen.emplace(p.split, p.top_id, p.bottom_id).second)
      throw ManifestError(K::integrity, where(i),
                          "duplicate pair (" + p.top_id + ", " + p.bottom_id + ") in split " +
                              std::string(to_string(p.split)));
    m.positives_[p.top_id].insert(p.bottom_id);
  }
  m.pairs_ = std::move(pairs);
  m.items_ = std::move(items);
  m.root_ = std::move(root);
  return m;
}

bool PairManifest::is_positive(const std::string& top_id, const std::string& bottom_id) const {
  auto it = positives_.find(top_id);
  return it != positives_.end() && it->second.count(bottom_id) != 0;
}

const std::set<std::string>& PairManifest::positives_of(const std::string& top_id) const {
  static const std::set<std::string> kEmpty;
  auto it = positives_.find(top_id);
  return it == positives_.end() ? kEmpty : it->second;
}

std::vector<std::size_t> PairManifest::split_indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pairs_.size(); ++i)
    if (pairs_[i].split == split) out.push_back(i);
  return out;
}

std::vector<std::string> PairManifest::item_ids(Category category) const {
  std::vector<std::string> out;
  for (const auto& [id, rec] : items_)
    if (rec.category == category) out.push_back(id);
  return out;
}

std::vector<std::string> PairManifest::item_ids(Category category, Split split) const {
  std::set<std::string> ids;
  for (const auto& p : pairs_)
    if (p.split == split) ids.insert(category == Category::top ? p.top_id : p.bottom_id);
  return {ids.begin(), ids.end()};
}

std::size_t PairManifest::count(Category category) const {
  std::size_t n = 0;
  for (const auto& [_, rec] : items_) n += rec.category == category;
  return n;
}

std::filesystem::path PairManifest::image_path(const std::string& item_id) const {
  auto it = items_.find(item_id);
  if (it == items_.end()) throw std::out_of_range("unknown item " + item_id);
  return root_ / it->second.image_path;
}

std::string PairManifest::to_tsv() const {
  std::ostringstream os;
  os << kManifestHeader << '\n';
  for (const auto& p : pairs_) {
    os << p.pair_id << '\t' << p.top_id << '\t' << items_.at(p.top_id).image_path.generic_string() << '\t'
       << p.bottom_id << '\t' << items_.at(p.bottom_id).image_path.generic_string() << '\t' << to_string(p.split)
       << '\n';
  }
  return os.str();
}

std::string PairManifest::digest() const { return util::sha256_hex(to_tsv()); }

PairManifest load_manifest(const std::filesystem::path& path) {
  using K = ManifestError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError(K::parse, path.string(), "cannot open manifest");

  std::string line;
  std::size_t lineno = 0;
  auto loc = [&] { return path.string() + ":" + std::to_string(lineno); };
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line()) throw ManifestError(K::parse, path.string() + ":1", "empty manifest, header row required");
  if (lineno == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  if (line != kManifestHeader)
    throw ManifestError(K::parse, loc(), "bad header; expected '" + std::string(kManifestHeader) + "'");

  std::vector<PairRecord> pairs;
  std::vector<std::string> locations;
  std::map<std::string, ItemRecord> items;
  while (next_line()) {
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 6)
      throw ManifestError(K::parse, loc(), "expected 6 tab-separated fields, got " + std::to_string(f.size()));
    PairRecord rec;
    rec.pair_id = f[0];
    rec.top_id = f[1];
    rec.bottom_id = f[3];
    try {
      rec.split = parse_split(f[5]);
    } catch (const std::invalid_argument& e) {
      throw ManifestError(K::parse, loc(), e.what());
    }
    register_item(items, f[1], Category::top, f[2], loc());
    register_item(items, f[3], Category::bottom, f[4], loc());
    pairs.push_back(std::move(rec));
    locations.push_back(loc());
  }
  return PairManifest::build(std::move(pairs), std::move(items), path.parent_path(), locations);
}

void write_manifest(const PairManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << manifest.to_tsv();
  if (!out) throw std::runtime_error("write failed for manifest " + path.string());
}

}  // namespace geco::data
