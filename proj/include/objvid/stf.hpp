#pragma once

#include <string>

#include "objvid/tensor.hpp"

namespace objvid {

// Binary tensor container: magic "STF1", u32 rank, rank u64 dims,
// little-endian f64 payload in row-major order.
void stf_write(const std::string& path, const Tensor& t);

// Reads a full container. Raises FormatError on bad magic, truncation, or
// trailing bytes.
Tensor stf_read(const std::string& path);

}  // namespace objvid
