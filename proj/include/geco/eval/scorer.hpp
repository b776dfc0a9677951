#pragma once

#include <span>
#include <string>
#include <vector>

namespace geco::eval {

// Compatibility scorer: higher means more compatible.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual std::string name() const = 0;
  virtual std::string checkpoint_hash() const { return {}; }
  // One score per bottom id, in the given order.
  virtual std::vector<double> score(const std::string& top_id, std::span<const std::string> bottom_ids) = 0;
};

}  // namespace geco::eval
