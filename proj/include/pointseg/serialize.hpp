#pragma once

#include <string>

#include "pointseg/nn.hpp"

namespace pointseg {

// Flat named-tensor archive: magic + JSON manifest (name, shape, dtype,
// byte offset) followed by raw little-endian float64 payloads.
void save_params(const ParamStore& params, const std::string& path);

// Loads into an already-registered store; names and shapes must match.
void load_params(ParamStore& params, const std::string& path);

}  // namespace pointseg
