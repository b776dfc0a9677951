#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "geco/data/image.hpp"

namespace geco::data {

enum class Split { train, val, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct PairRecord {
  std::string pair_id;
  std::string top_id;
  std::string bottom_id;
  Split split = Split::train;
};

struct ItemRecord {
  Category category = Category::top;
  std::filesystem::path image_path;  // relative to the manifest root
};

class ManifestError : public std::runtime_error {
 public:
  enum class Kind { parse, integrity };
  ManifestError(Kind kind, std::string location, const std::string& message)
      : std::runtime_error(location + ": " + message), kind_(kind), location_(std::move(location)) {}
  Kind kind() const { return kind_; }
  const std::string& location() const { return location_; }

 private:
  Kind kind_;
  std::string location_;
};

// Compatible (top, bottom) pairs with split assignments. Immutable once built; every
// listed pair is a positive, every other top/bottom combination a negative.
class PairManifest {
 public:
  // Validates categories, duplicate pairs within a split and path consistency.
  // `locations` (optional, parallel to pairs) label records in error messages.
  static PairManifest build(std::vector<PairRecord> pairs, std::map<std::string, ItemRecord> items,
                            std::filesystem::path root, const std::vector<std::string>& locations = {});

  const std::vector<PairRecord>& pairs() const { return pairs_; }
  const std::map<std::string, ItemRecord>& items() const { return items_; }
  const std::filesystem::path& root() const { return root_; }

  bool is_positive(const std::string& top_id, const std::string& bottom_id) const;
  const std::set<std::string>& positives_of(const std::string& top_id) const;

  std::vector<std::size_t> split_indices(Split split) const;
  // Sorted, unique ids. Without a split every item of the category is returned.
  std::vector<std::string> item_ids(Category category) const;
  std::vector<std::string> item_ids(Category category, Split split) const;
  std::size_t count(Category category) const;

  std::filesystem::path image_path(const std::string& item_id) const;

  // SHA-256 of the canonical TSV serialisation.
  std::string digest() const;
  std::string to_tsv() const;

 private:
  std::vector<PairRecord> pairs_;
  std::map<std::string, ItemRecord> items_;
  std::filesystem::path root_;
  std::map<std::string, std::set<std::string>> positives_;
};

// Tab-separated, header row required:
//   pair_id  top_id  top_path  bottom_id  bottom_path  split
// Paths are relative to the manifest's directory.
PairManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const PairManifest& manifest, const std::filesystem::path& path);

inline constexpr std::string_view kManifestHeader = "pair_id\ttop_id\ttop_path\tbottom_id\tbottom_path\tsplit";

}  // namespace geco::data
