#include "stereosed/feature_io.hpp"

#include <iomanip>

#include "binary_io.hpp"

namespace stereosed {

namespace {
constexpr std::uint32_t kFeatureVersion = 1;

FeatureFamily family_of_block(const std::string& name, const std::string& source) {
  const std::string base = name.substr(0, name.find('.'));
  for (auto f : {FeatureFamily::Mel, FeatureFamily::Pitch, FeatureFamily::Pitch3,
                 FeatureFamily::Tdoa, FeatureFamily::Tdoa3})
    if (family_name(f) == base) return f;
  throw DataError(source + ": unknown feature block '" + name + "'");
}
}  // namespace

void write_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& features) {
  if (features.layout.width() != features.width())
    throw UsageError("feature matrix width does not match its layout");
  detail::ByteWriter w;
  w.raw("SEDF");
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(features.frame_count()));
  w.u32(static_cast<std::uint32_t>(features.layout.blocks.size()));
  for (const auto& b : features.layout.blocks) {
    w.str(b.name);
    w.u32(static_cast<std::uint32_t>(b.width));
  }
  for (Eigen::Index t = 0; t < features.values.rows(); ++t)
    for (Eigen::Index c = 0; c < features.values.cols(); ++c)
      w.f32(static_cast<float>(features.values(t, c)));
  detail::write_file_atomic(path, w.bytes());
}

FeatureMatrix read_feature_matrix(const std::filesystem::path& path) {
  detail::ByteReader r(detail::read_file_bytes(path), path.string());
  r.expect_magic("SEDF");
  if (const auto v = r.u32(); v != kFeatureVersion)
    throw DataError(path.string() + ": unsupported feature container version " + std::to_string(v));
  const std::uint32_t frames = r.u32();
  const std::uint32_t blocks = r.u32();
  FeatureMatrix out;
  for (std::uint32_t i = 0; i < blocks; ++i) {
    FeatureBlock b;
    b.name = r.str();
    b.width = static_cast<int>(r.u32());
    b.family = family_of_block(b.name, path.string());
    out.layout.blocks.push_back(b);
  }
  out.values.resize(frames, out.layout.width());
  for (Eigen::Index t = 0; t < out.values.rows(); ++t)
    for (Eigen::Index c = 0; c < out.values.cols(); ++c) out.values(t, c) = r.f32();
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after feature data");
  return out;
}

void write_feature_csv(std::ostream& out, const FeatureMatrix& features) {
  bool first = true;
  for (const auto& b : features.layout.blocks) {
    for (int i = 0; i < b.width; ++i) {
      out << (first ? "" : ",") << b.name << '[' << i << ']';
      first = false;
    }
  }
  out << '\n' << std::setprecision(9);
  for (Eigen::Index t = 0; t < features.values.rows(); ++t) {
    for (Eigen::Index c = 0; c < features.values.cols(); ++c)
      out << (c ? "," : "") << static_cast<float>(features.values(t, c));
    out << '\n';
  }
}

}  // namespace stereosed
