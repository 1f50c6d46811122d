#pragma once

#include <string>
#include <vector>

#include "csta/model.hpp"

namespace csta {

// Binary parameter manifest: 8-byte magic "CSTACKP1", u64 little-endian JSON
// index length, the index itself (name, shape, payload offset in doubles,
// trainable flag per entry), then the raw little-endian f64 payload.
// Round trips are bit-exact.
std::string checkpoint_bytes(const Model& model, const std::vector<std::string>& names);

void save_checkpoint(const Model& model, const std::string& path);  // every parameter

// Restores values and trainable flags into an already-built model. Every
// stored name must exist with a matching shape and vice versa.
void load_checkpoint(Model& model, const std::string& path);

}  // namespace csta
