#pragma once

#include <string>
#include <utility>
#include <vector>

#include "opq/nn.hpp"

namespace opq {

// Checkpoint layout: 8-byte magic "OPQCKPT1", uint64 little-endian manifest
// byte length, JSON manifest {"dtype":"f32","params":[{"name","shape"}...]},
// then raw little-endian float32 blobs in manifest order. Round-trips
// bit-exactly.
void save_checkpoint(const std::string& path, const ParamSet& ps);

// Strict load: the file must contain exactly the registered parameters, with
// matching shapes (matched by name, any order).
void load_checkpoint(const std::string& path, ParamSet& ps);

// Raw read, for tools that do not build a model.
std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::string& path);

}  // namespace opq
