#pragma once

#include <string>

#include "geco/nn/adam.hpp"
#include "geco/nn/parameters.hpp"
#include "geco/util/archive.hpp"

namespace geco::nn {

// Arrays are stored under "<prefix>/<param name>".
void save_params(util::Archive& ar, const std::string& prefix, const ParameterSet<float>& params);
// Every parameter must be present with a matching shape.
void load_params(const util::Archive& ar, const std::string& prefix, ParameterSet<float>& params);

// Moments under "<prefix>/m/<name>", "<prefix>/v/<name>"; step count and lr in ar.meta[prefix].
void save_adam(util::Archive& ar, const std::string& prefix, const Adam& opt);
void load_adam(const util::Archive& ar, const std::string& prefix, Adam& opt);

}  // namespace geco::nn
