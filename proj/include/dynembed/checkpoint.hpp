#pragma once

// Versioned binary container for a trained model.
//
// Layout (little-endian):
//   magic "DYNEMBCK", u32 version
//   encoder config: i32 dim, heads, layers, ff_dim, max_seq; f64 dropout, norm_eps
//   i32 vocabulary node count
//   u32 graph count, then per graph: u32 length + UTF-8 bytes
//   u32 tensor count, then per tensor: u32 name length + name, u64 rows, u64 cols,
//   rows * cols f64 values in column-major order

#include "dynembed/trainer.hpp"

#include <filesystem>
#include <iosfwd>

namespace dynembed {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(std::ostream& out, const Model& model);
void save_checkpoint(const std::filesystem::path& path, const Model& model);

/// Throws FormatError on a bad magic/version or a truncated file, and
/// ValidationError when tensor names or shapes disagree with the stored config.
Model load_checkpoint(std::istream& in, const std::string& source_name);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace dynembed
