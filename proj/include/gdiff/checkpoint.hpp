#pragma once

#include <string>

#include "gdiff/adam.hpp"

namespace gdiff {

// Binary parameter container: magic, version byte, a verbatim config-text
// echo, then named tensors. Round-trips bit-exactly; loading validates each
// tensor's shape by name against what the caller expects.
struct Checkpoint {
  std::string config_text;
  ParamMap tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Throws ConfigError when `loaded` lacks a name from `expected` or has a
// tensor of a different shape (extra names are also rejected).
void validate_shapes(const ParamMap& loaded, const ParamMap& expected);

}  // namespace gdiff
