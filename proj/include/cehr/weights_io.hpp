#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "cehr/optim.hpp"

namespace cehr {

/// Binary weight file, little-endian:
///   "CEHRW" | version u32 | count u32 |
///   count x (name_len u16 | name | rank u8 | extents u32[rank] | f32[numel])
inline constexpr std::uint32_t kWeightFormatVersion = 1;

void write_weights(std::ostream& out, const ParameterSet& params);
void save_weights(const std::string& path, const ParameterSet& params);

/// Reads every record as a fresh trainable leaf (values widened to double).
ParameterSet read_weights(std::istream& in);
ParameterSet load_weights(const std::string& path);

/// Copies values of same-named, same-shaped tensors from src into dst.
/// Throws if a name in dst is missing from src or its shape differs.
void assign_weights(ParameterSet& dst, const ParameterSet& src);

}  // namespace cehr
