#include "stereosed/checkpoint.hpp"

#include "binary_io.hpp"

namespace stereosed {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_vector(detail::ByteWriter& w, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) w.f64(v(i));
}

Eigen::VectorXd get_vector(detail::ByteReader& r, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = r.f64();
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto& sizes = ck.params.layer_sizes();
  if (sizes.empty()) throw UsageError("write_checkpoint: empty network");
  if (ck.scaler.mean.size() != sizes.front() || ck.scaler.std.size() != sizes.front())
    throw UsageError("write_checkpoint: scaler width does not match the network input");
  detail::ByteWriter w;
  w.raw("SEDM");
  w.u32(kCheckpointVersion);
  w.str(ck.combination);
  w.str(ck.extraction);
  w.u32(static_cast<std::uint32_t>(ck.layout.blocks.size()));
  for (const auto& b : ck.layout.blocks) {
    w.str(b.name);
    w.u32(static_cast<std::uint32_t>(b.width));
  }
  w.u32(static_cast<std::uint32_t>(ck.class_order.size()));
  for (const auto& c : ck.class_order) w.str(c);
  w.u32(static_cast<std::uint32_t>(sizes.size()));
  for (int s : sizes) w.u32(static_cast<std::uint32_t>(s));
  w.u32(static_cast<std::uint32_t>(ck.scaler.mean.size()));
  put_vector(w, ck.scaler.mean);
  put_vector(w, ck.scaler.std);
  w.u64(static_cast<std::uint64_t>(ck.params.size()));
  put_vector(w, ck.params.flat());
  w.u8(ck.train_state ? 1 : 0);
  if (ck.train_state) {
    const TrainState& s = *ck.train_state;
    if (s.params.size() != ck.params.size()) throw UsageError("write_checkpoint: training state shape mismatch");
    put_vector(w, s.params.flat());
    w.u64(static_cast<std::uint64_t>(s.adam.step));
    const bool moments = s.adam.m.size() == ck.params.size();
    w.u8(moments ? 1 : 0);
    if (moments) {
      put_vector(w, s.adam.m);
      put_vector(w, s.adam.v);
    }
    w.u32(static_cast<std::uint32_t>(s.epoch));
    w.u32(static_cast<std::uint32_t>(s.best_epoch));
    w.f64(s.best_er);
    w.u32(static_cast<std::uint32_t>(s.epochs_since_improvement));
    w.str(s.rng_state);
  }
  detail::write_file_atomic(path, w.bytes());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  detail::ByteReader r(detail::read_file_bytes(path), path.string());
  r.expect_magic("SEDM");
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  Checkpoint ck;
  ck.combination = r.str();
  ck.extraction = r.str();
  const auto blocks = r.u32();
  for (std::uint32_t i = 0; i < blocks; ++i) {
    FeatureBlock b;
    b.name = r.str();
    b.width = static_cast<int>(r.u32());
    ck.layout.blocks.push_back(b);
  }
  // Families come from the combination, which is the source of truth for names.
  try {
    const auto expected = layout_for(ck.combination);
    for (std::size_t i = 0; i < ck.layout.blocks.size() && i < expected.blocks.size(); ++i)
      ck.layout.blocks[i].family = expected.blocks[i].family;
  } catch (const UsageError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  const auto classes = r.u32();
  for (std::uint32_t i = 0; i < classes; ++i) ck.class_order.push_back(r.str());
  std::vector<int> sizes(r.u32());
  for (auto& s : sizes) s = static_cast<int>(r.u32());
  try {
    ck.params = NetworkParams(sizes);
  } catch (const UsageError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  const auto dims = static_cast<Eigen::Index>(r.u32());
  if (dims != sizes.front()) throw DataError(path.string() + ": scaler width does not match the network");
  ck.scaler.mean = get_vector(r, dims);
  ck.scaler.std = get_vector(r, dims);
  const auto count = static_cast<Eigen::Index>(r.u64());
  if (count != ck.params.size()) throw DataError(path.string() + ": parameter count does not match the shape");
  ck.params.flat() = get_vector(r, count);
  if (static_cast<std::size_t>(sizes.back()) != ck.class_order.size())
    throw DataError(path.string() + ": class count does not match the network output");
  if (r.u8()) {
    TrainState s;
    s.params = NetworkParams(sizes);
    s.params.flat() = get_vector(r, count);
    s.best_params = ck.params;
    s.adam.step = static_cast<long long>(r.u64());
    if (r.u8()) {
      s.adam.m = get_vector(r, count);
      s.adam.v = get_vector(r, count);
    }
    s.epoch = static_cast<int>(r.u32());
    s.best_epoch = static_cast<int>(r.u32());
    s.best_er = r.f64();
    s.epochs_since_improvement = static_cast<int>(r.u32());
    s.rng_state = r.str();
    ck.train_state = std::move(s);
  }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes in checkpoint");
  return ck;
}

}  // namespace stereosed
