#pragma once

#include <filesystem>
#include <ostream>

#include "stereosed/features.hpp"

namespace stereosed {

/// Binary feature container, all integers little-endian:
///
///   "SEDF"  u32 version (=1)  u32 frame_count  u32 block_count
///   block_count x { u32 name_length, name bytes, u32 width }
///   frame_count x width float32, row-major
///
/// Block families are recovered from the name prefix ("mel.left" -> mel).
void write_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_feature_matrix(const std::filesystem::path& path);

/// Header row of block-qualified column names, then one row per frame.
void write_feature_csv(std::ostream& out, const FeatureMatrix& features);

}  // namespace stereosed
