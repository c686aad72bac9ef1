#include "stereosed/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace stereosed {

namespace {

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
  return (1.0 + (-z.array()).exp()).inverse().matrix();
}

}  // namespace

// ---------------------------------------------------------------------------
// NetworkParams

void NetworkParams::validate_shape(const std::vector<int>& layer_sizes) {
  if (layer_sizes.size() < 3) throw UsageError("network needs input, at least one hidden layer, and output sizes");
  for (int s : layer_sizes)
    if (s < 1) throw UsageError("network layer sizes must be positive");
}

NetworkParams::NetworkParams(std::vector<int> layer_sizes) : layer_sizes_(std::move(layer_sizes)) {
  validate_shape(layer_sizes_);
  Eigen::Index pos = 0;
  for (int l = 0; l < hidden_layers(); ++l) {
    const Eigen::Index in = layer_sizes_[static_cast<std::size_t>(l)];
    const Eigen::Index h = layer_sizes_[static_cast<std::size_t>(l) + 1];
    Offsets o{};
    o.wx = pos;
    pos += 4 * h * in;
    o.wh = pos;
    pos += 4 * h * h;
    o.b = pos;
    pos += 4 * h;
    offsets_.push_back(o);
  }
  const Eigen::Index last = layer_sizes_[layer_sizes_.size() - 2];
  out_w_ = pos;
  pos += output_size() * last;
  out_b_ = pos;
  pos += output_size();
  flat_ = Eigen::VectorXd::Zero(pos);
}

NetworkParams NetworkParams::random(std::vector<int> layer_sizes, std::mt19937_64& rng) {
  NetworkParams p(std::move(layer_sizes));
  const auto fill = [&](auto&& m, double fan_in) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
  };
  for (int l = 0; l < p.hidden_layers(); ++l) {
    const int h = p.hidden_size(l);
    fill(p.input_weights(l), p.layer_sizes_[static_cast<std::size_t>(l)]);
    fill(p.recurrent_weights(l), h);
    p.bias(l).segment(h, h).setOnes();
  }
  fill(p.output_weights(), p.layer_sizes_[p.layer_sizes_.size() - 2]);
  return p;
}

NetworkParams::MatrixMap NetworkParams::input_weights(int l) {
  const auto& o = offsets_[static_cast<std::size_t>(l)];
  return {flat_.data() + o.wx, 4 * hidden_size(l), layer_sizes_[static_cast<std::size_t>(l)]};
}
NetworkParams::MatrixMap NetworkParams::recurrent_weights(int l) {
  const auto& o = offsets_[static_cast<std::size_t>(l)];
  return {flat_.data() + o.wh, 4 * hidden_size(l), hidden_size(l)};
}
NetworkParams::VectorMap NetworkParams::bias(int l) {
  return {flat_.data() + offsets_[static_cast<std::size_t>(l)].b, 4 * hidden_size(l)};
}
NetworkParams::MatrixMap NetworkParams::output_weights() {
  return {flat_.data() + out_w_, output_size(), layer_sizes_[layer_sizes_.size() - 2]};
}
NetworkParams::VectorMap NetworkParams::output_bias() { return {flat_.data() + out_b_, output_size()}; }

NetworkParams::ConstMatrixMap NetworkParams::input_weights(int l) const {
  const auto& o = offsets_[static_cast<std::size_t>(l)];
  return {flat_.data() + o.wx, 4 * hidden_size(l), layer_sizes_[static_cast<std::size_t>(l)]};
}
NetworkParams::ConstMatrixMap NetworkParams::recurrent_weights(int l) const {
  const auto& o = offsets_[static_cast<std::size_t>(l)];
  return {flat_.data() + o.wh, 4 * hidden_size(l), hidden_size(l)};
}
NetworkParams::ConstVectorMap NetworkParams::bias(int l) const {
  return {flat_.data() + offsets_[static_cast<std::size_t>(l)].b, 4 * hidden_size(l)};
}
NetworkParams::ConstMatrixMap NetworkParams::output_weights() const {
  return {flat_.data() + out_w_, output_size(), layer_sizes_[layer_sizes_.size() - 2]};
}
NetworkParams::ConstVectorMap NetworkParams::output_bias() const {
  return {flat_.data() + out_b_, output_size()};
}

// ---------------------------------------------------------------------------
// Scaler

Scaler fit_scaler(std::span<const FeatureMatrix> train) {
  Eigen::Index frames = 0;
  Eigen::Index dims = -1;
  for (const auto& f : train) {
    if (dims >= 0 && f.values.cols() != dims) throw DataError("fit_scaler: feature widths differ");
    dims = f.values.cols();
    frames += f.values.rows();
  }
  if (frames == 0 || dims <= 0) throw DataError("fit_scaler: no training frames");
  Scaler s;
  s.mean = Eigen::VectorXd::Zero(dims);
  for (const auto& f : train) s.mean += f.values.colwise().sum().transpose();
  s.mean /= static_cast<double>(frames);
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dims);
  for (const auto& f : train)
    var += (f.values.rowwise() - s.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  var /= static_cast<double>(frames);
  s.std = var.cwiseSqrt();
  for (Eigen::Index d = 0; d < dims; ++d)
    if (!(s.std(d) > 1e-12)) s.std(d) = 1.0;
  return s;
}

Matrix apply_scaler(const Scaler& scaler, const Matrix& values) {
  if (values.cols() != scaler.mean.size()) throw DataError("apply_scaler: feature width mismatch");
  return ((values.rowwise() - scaler.mean.transpose()).array().rowwise() / scaler.std.transpose().array())
      .matrix();
}

FeatureMatrix apply_scaler(const Scaler& scaler, const FeatureMatrix& features) {
  return {apply_scaler(scaler, features.values), features.layout};
}

// ---------------------------------------------------------------------------
// Sequences

std::vector<Sequence> split_sequences(const Matrix& features, const EventRoll* roll, int length) {
  if (length < 1) throw UsageError("sequence length must be positive");
  const Eigen::Index frames = features.rows();
  const Eigen::Index dims = features.cols();
  const Eigen::Index classes = roll ? static_cast<Eigen::Index>(roll->class_count()) : 0;
  if (roll && roll->activity.rows() < frames) throw DataError("split_sequences: roll shorter than features");
  std::vector<Sequence> out;
  for (Eigen::Index start = 0; start < frames; start += length) {
    const Eigen::Index n = std::min<Eigen::Index>(length, frames - start);
    Sequence s;
    s.inputs = Eigen::MatrixXd::Zero(dims, length);
    s.targets = Eigen::MatrixXd::Zero(classes, length);
    s.mask = Eigen::VectorXd::Zero(length);
    s.inputs.leftCols(n) = features.middleRows(start, n).transpose();
    if (roll) s.targets.leftCols(n) = roll->activity.middleRows(start, n).cast<double>().transpose();
    s.mask.head(n).setOnes();
    out.push_back(std::move(s));
  }
  return out;
}

Matrix join_sequences(std::span<const Sequence> sequences, std::size_t frame_count) {
  if (sequences.empty()) return Matrix(0, 0);
  Matrix out(static_cast<Eigen::Index>(frame_count), sequences.front().inputs.rows());
  Eigen::Index t = 0;
  for (const auto& s : sequences)
    for (Eigen::Index j = 0; j < s.inputs.cols() && t < out.rows(); ++j)
      if (s.mask(j) > 0.0) out.row(t++) = s.inputs.col(j).transpose();
  if (t != out.rows()) throw DataError("join_sequences: not enough valid frames");
  return out;
}

SequenceBatch make_batch(std::span<const Sequence* const> sequences) {
  SequenceBatch batch;
  if (sequences.empty()) return batch;
  const auto steps = sequences.front()->inputs.cols();
  const auto dims = sequences.front()->inputs.rows();
  const auto classes = sequences.front()->targets.rows();
  const auto count = static_cast<Eigen::Index>(sequences.size());
  batch.inputs.assign(static_cast<std::size_t>(steps), Eigen::MatrixXd(dims, count));
  batch.targets.assign(static_cast<std::size_t>(steps), Eigen::MatrixXd(classes, count));
  batch.mask.resize(steps, count);
  for (Eigen::Index s = 0; s < count; ++s) {
    const Sequence& q = *sequences[static_cast<std::size_t>(s)];
    if (q.inputs.cols() != steps || q.inputs.rows() != dims || q.targets.rows() != classes)
      throw DataError("make_batch: sequences differ in shape");
    for (Eigen::Index t = 0; t < steps; ++t) {
      batch.inputs[static_cast<std::size_t>(t)].col(s) = q.inputs.col(t);
      batch.targets[static_cast<std::size_t>(t)].col(s) = q.targets.col(t);
    }
    batch.mask.col(s) = q.mask;
  }
  return batch;
}

SequenceBatch make_batch(std::span<const Sequence> sequences) {
  std::vector<const Sequence*> ptrs;
  for (const auto& s : sequences) ptrs.push_back(&s);
  return make_batch(std::span<const Sequence* const>(ptrs));
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

struct LayerCache {
  std::vector<Eigen::MatrixXd> input;  // x_t fed to the layer
  std::vector<Eigen::MatrixXd> gates;  // 4H x S activations: i, f, g, o
  std::vector<Eigen::MatrixXd> cell;   // c_t
  std::vector<Eigen::MatrixXd> cell_tanh;
  std::vector<Eigen::MatrixXd> hidden;  // h_t
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::vector<Eigen::MatrixXd> posteriors;
};

ForwardCache run_forward(const NetworkParams& params, const SequenceBatch& batch, bool keep) {
  if (batch.steps() == 0) return {};
  if (batch.inputs.front().rows() != params.input_size())
    throw DataError("network expects " + std::to_string(params.input_size()) + " inputs, got " +
                    std::to_string(batch.inputs.front().rows()));
  const int steps = batch.steps();
  const Eigen::Index count = batch.sequences();
  ForwardCache cache;
  std::vector<Eigen::MatrixXd> layer_in = batch.inputs;
  for (int l = 0; l < params.hidden_layers(); ++l) {
    const Eigen::Index h = params.hidden_size(l);
    const auto wx = params.input_weights(l);
    const auto wh = params.recurrent_weights(l);
    const auto b = params.bias(l);
    LayerCache lc;
    Eigen::MatrixXd hp = Eigen::MatrixXd::Zero(h, count);
    Eigen::MatrixXd cp = Eigen::MatrixXd::Zero(h, count);
    std::vector<Eigen::MatrixXd> layer_out(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) {
      const auto& x = layer_in[static_cast<std::size_t>(t)];
      Eigen::MatrixXd z = wx * x + wh * hp;
      z.colwise() += b;
      Eigen::MatrixXd a(4 * h, count);
      a.topRows(2 * h) = sigmoid(z.topRows(2 * h));
      a.middleRows(2 * h, h) = z.middleRows(2 * h, h).array().tanh().matrix();
      a.bottomRows(h) = sigmoid(z.bottomRows(h));
      Eigen::MatrixXd c = (a.middleRows(h, h).array() * cp.array() +
                           a.topRows(h).array() * a.middleRows(2 * h, h).array())
                              .matrix();
      Eigen::MatrixXd ct = c.array().tanh().matrix();
      Eigen::MatrixXd hn = (a.bottomRows(h).array() * ct.array()).matrix();
      if (keep) {
        lc.input.push_back(x);
        lc.gates.push_back(std::move(a));
        lc.cell.push_back(c);
        lc.cell_tanh.push_back(std::move(ct));
        lc.hidden.push_back(hn);
      }
      layer_out[static_cast<std::size_t>(t)] = hn;
      hp = std::move(hn);
      cp = std::move(c);
    }
    if (keep) cache.layers.push_back(std::move(lc));
    layer_in = std::move(layer_out);
  }
  const auto wy = params.output_weights();
  const auto by = params.output_bias();
  for (int t = 0; t < steps; ++t) {
    Eigen::MatrixXd logits = wy * layer_in[static_cast<std::size_t>(t)];
    logits.colwise() += by;
    cache.posteriors.push_back(sigmoid(logits));
  }
  return cache;
}

double valid_cells(const Eigen::MatrixXd& mask, Eigen::Index classes) {
  return mask.sum() * static_cast<double>(classes);
}

}  // namespace

std::vector<Eigen::MatrixXd> forward(const NetworkParams& params, const SequenceBatch& batch) {
  return run_forward(params, batch, false).posteriors;
}

double bce_loss(const std::vector<Eigen::MatrixXd>& posteriors,
                const std::vector<Eigen::MatrixXd>& targets, const Eigen::MatrixXd& mask,
                Reduction reduction) {
  if (posteriors.size() != targets.size() || static_cast<Eigen::Index>(posteriors.size()) != mask.rows())
    throw DataError("bce_loss: shape mismatch");
  double total = 0.0;
  Eigen::Index classes = 0;
  for (std::size_t t = 0; t < posteriors.size(); ++t) {
    const auto& p = posteriors[t];
    const auto& y = targets[t];
    if (p.rows() != y.rows() || p.cols() != y.cols() || p.cols() != mask.cols())
      throw DataError("bce_loss: shape mismatch");
    classes = p.rows();
    for (Eigen::Index s = 0; s < p.cols(); ++s) {
      const double m = mask(static_cast<Eigen::Index>(t), s);
      if (m == 0.0) continue;
      for (Eigen::Index c = 0; c < p.rows(); ++c) {
        const double q = std::clamp(p(c, s), kProbabilityClamp, 1.0 - kProbabilityClamp);
        total -= m * (y(c, s) * std::log(q) + (1.0 - y(c, s)) * std::log(1.0 - q));
      }
    }
  }
  if (reduction == Reduction::Sum) return total;
  const double cells = valid_cells(mask, classes);
  return cells > 0.0 ? total / cells : 0.0;
}

LossAndGradient backward(const NetworkParams& params, const SequenceBatch& batch, Reduction reduction) {
  LossAndGradient out;
  NetworkParams grad(params.layer_sizes());
  if (batch.steps() == 0) {
    out.gradient = grad.flat();
    return out;
  }
  ForwardCache cache = run_forward(params, batch, true);
  out.loss = bce_loss(cache.posteriors, batch.targets, batch.mask, reduction);
  const int steps = batch.steps();
  const Eigen::Index count = batch.sequences();
  const Eigen::Index classes = params.output_size();
  double norm = 1.0;
  if (reduction == Reduction::Mean) {
    const double cells = valid_cells(batch.mask, classes);
    norm = cells > 0.0 ? 1.0 / cells : 0.0;
  }

  // Output layer: dL/dlogit = mask * (p - y) where p is unclamped, else 0.
  const auto wy = params.output_weights();
  auto gwy = grad.output_weights();
  auto gby = grad.output_bias();
  std::vector<Eigen::MatrixXd> dh_above(static_cast<std::size_t>(steps));
  const auto& top_hidden = cache.layers.back().hidden;
  for (int t = 0; t < steps; ++t) {
    const auto& p = cache.posteriors[static_cast<std::size_t>(t)];
    const auto& y = batch.targets[static_cast<std::size_t>(t)];
    Eigen::MatrixXd dlogit(classes, count);
    for (Eigen::Index s = 0; s < count; ++s) {
      const double m = batch.mask(t, s) * norm;
      for (Eigen::Index c = 0; c < classes; ++c) {
        const double q = p(c, s);
        const bool clamped = q < kProbabilityClamp || q > 1.0 - kProbabilityClamp;
        dlogit(c, s) = (m == 0.0 || clamped) ? 0.0 : m * (q - y(c, s));
      }
    }
    gwy.noalias() += dlogit * top_hidden[static_cast<std::size_t>(t)].transpose();
    gby += dlogit.rowwise().sum();
    dh_above[static_cast<std::size_t>(t)] = wy.transpose() * dlogit;
  }

  for (int l = params.hidden_layers() - 1; l >= 0; --l) {
    const Eigen::Index h = params.hidden_size(l);
    const auto wx = params.input_weights(l);
    const auto wh = params.recurrent_weights(l);
    auto gwx = grad.input_weights(l);
    auto gwh = grad.recurrent_weights(l);
    auto gb = grad.bias(l);
    const LayerCache& lc = cache.layers[static_cast<std::size_t>(l)];
    Eigen::MatrixXd dh_next = Eigen::MatrixXd::Zero(h, count);
    Eigen::MatrixXd dc_next = Eigen::MatrixXd::Zero(h, count);
    std::vector<Eigen::MatrixXd> dx(static_cast<std::size_t>(steps));
    for (int t = steps - 1; t >= 0; --t) {
      const auto ts = static_cast<std::size_t>(t);
      const auto& a = lc.gates[ts];
      const auto i = a.topRows(h).array();
      const auto f = a.middleRows(h, h).array();
      const auto g = a.middleRows(2 * h, h).array();
      const auto o = a.bottomRows(h).array();
      const auto ct = lc.cell_tanh[ts].array();
      const Eigen::MatrixXd c_prev = t > 0 ? lc.cell[ts - 1] : Eigen::MatrixXd::Zero(h, count);
      const Eigen::MatrixXd h_prev = t > 0 ? lc.hidden[ts - 1] : Eigen::MatrixXd::Zero(h, count);

      const Eigen::ArrayXXd dh = (dh_above[ts] + dh_next).array();
      const Eigen::ArrayXXd dc = dh * o * (1.0 - ct.square()) + dc_next.array();
      Eigen::MatrixXd dz(4 * h, count);
      dz.topRows(h) = (dc * g * i * (1.0 - i)).matrix();
      dz.middleRows(h, h) = (dc * c_prev.array() * f * (1.0 - f)).matrix();
      dz.middleRows(2 * h, h) = (dc * i * (1.0 - g.square())).matrix();
      dz.bottomRows(h) = (dh * ct * o * (1.0 - o)).matrix();

      gwx.noalias() += dz * lc.input[ts].transpose();
      gwh.noalias() += dz * h_prev.transpose();
      gb += dz.rowwise().sum();
      dh_next.noalias() = wh.transpose() * dz;
      dc_next = (dc * f).matrix();
      if (l > 0) dx[ts].noalias() = wx.transpose() * dz;
    }
    if (l > 0) dh_above = std::move(dx);
  }
  out.gradient = std::move(grad.flat());
  return out;
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(Eigen::VectorXd& params, AdamState& state, const Eigen::VectorXd& gradient,
               const AdamConfig& config) {
  if (gradient.size() != params.size()) throw UsageError("adam_step: gradient size mismatch");
  if (state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw UsageError("adam_step: moment size mismatch");
  state.step += 1;
  state.m = config.beta1 * state.m + (1.0 - config.beta1) * gradient;
  state.v = config.beta2 * state.v + (1.0 - config.beta2) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  params.array() -= config.learning_rate * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + config.epsilon);
}

// ---------------------------------------------------------------------------
// Block mixing

Sequence mix_sequences(const Sequence& a, const Sequence& b, const FeatureLayout& layout) {
  if (a.inputs.rows() != layout.width() || b.inputs.rows() != layout.width() ||
      a.inputs.cols() != b.inputs.cols() || a.targets.rows() != b.targets.rows())
    throw DataError("block mixing: sequences do not share a layout");
  Sequence m;
  m.inputs.resize(a.inputs.rows(), a.inputs.cols());
  for (std::size_t i = 0; i < layout.blocks.size(); ++i) {
    const Eigen::Index off = layout.offset(i);
    const Eigen::Index w = layout.blocks[i].width;
    const auto xa = a.inputs.middleRows(off, w).array();
    const auto xb = b.inputs.middleRows(off, w).array();
    if (layout.blocks[i].family == FeatureFamily::Mel) {
      // log(e^a + e^b), computed stably.
      const Eigen::ArrayXXd hi = xa.max(xb);
      m.inputs.middleRows(off, w) = (hi + ((xa - hi).exp() + (xb - hi).exp()).log()).matrix();
    } else {
      m.inputs.middleRows(off, w) = xa.max(xb).matrix();
    }
  }
  m.targets = a.targets.cwiseMax(b.targets);
  m.mask = a.mask.cwiseMin(b.mask);
  return m;
}

std::vector<Sequence> block_mix(const std::vector<Sequence>& sequences, const FeatureLayout& layout,
                                double ratio, std::mt19937_64& rng) {
  if (sequences.size() < 2) throw DataError("block mixing needs at least two sequences");
  std::vector<Sequence> out = sequences;
  const auto mixes = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(sequences.size())));
  std::uniform_int_distribution<std::size_t> pick(0, sequences.size() - 1);
  for (std::size_t k = 0; k < mixes; ++k) {
    const std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    while (j == i) j = pick(rng);
    out.push_back(mix_sequences(sequences[i], sequences[j], layout));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inference

Matrix predict_posteriors(const NetworkParams& params, const Scaler& scaler, const Matrix& features) {
  if (features.cols() != params.input_size())
    throw DataError("detect: features have width " + std::to_string(features.cols()) +
                    ", network expects " + std::to_string(params.input_size()));
  const auto seqs = split_sequences(apply_scaler(scaler, features), nullptr);
  Matrix out(features.rows(), params.output_size());
  if (seqs.empty()) return out;
  const auto post = forward(params, make_batch(seqs));
  for (Eigen::Index t = 0; t < features.rows(); ++t) {
    const auto s = t / kSequenceLength;
    out.row(t) = post[static_cast<std::size_t>(t % kSequenceLength)].col(s).transpose();
  }
  return out;
}

EventRoll threshold_posteriors(const Matrix& posteriors, const std::vector<std::string>& class_order,
                               double threshold) {
  if (static_cast<std::size_t>(posteriors.cols()) != class_order.size())
    throw DataError("detect: class count does not match the network output");
  EventRoll roll;
  roll.class_order = class_order;
  roll.activity = (posteriors.array() > threshold).cast<std::uint8_t>().matrix();
  return roll;
}

EventRoll detect(const NetworkParams& params, const Scaler& scaler, const FeatureMatrix& features,
                 const std::vector<std::string>& class_order, double threshold) {
  return threshold_posteriors(predict_posteriors(params, scaler, features.values), class_order, threshold);
}

// ---------------------------------------------------------------------------
// Training

Trainer::Trainer(std::vector<LabelledRecording> train, std::vector<LabelledRecording> validation,
                 TrainConfig config)
    : train_(std::move(train)), validation_(std::move(validation)), config_(std::move(config)) {
  if (train_.empty()) throw DataError("training set is empty");
  if (config_.hidden.empty()) throw UsageError("network needs at least one hidden layer");
  if (config_.batch_size < 1) throw UsageError("batch size must be positive");
  if (config_.patience < 0 || config_.max_epochs < 1) throw UsageError("invalid patience or epoch limit");
  if (validation_.empty()) validation_ = train_;
  layout_ = train_.front().features.layout;
  class_order_ = train_.front().roll.class_order;
  for (const auto* set : {&train_, &validation_}) {
    for (const auto& r : *set) {
      if (!(r.features.layout == layout_)) throw DataError(r.id + ": feature layout differs from the training set");
      if (r.roll.class_order != class_order_) throw DataError(r.id + ": class order differs from the training set");
      if (r.roll.frame_count() < r.features.frame_count())
        throw DataError(r.id + ": event roll shorter than the features");
    }
  }
  std::vector<FeatureMatrix> feats;
  for (const auto& r : train_) feats.push_back(r.features);
  scaler_ = fit_scaler(feats);
  for (const auto& r : train_) {
    auto seqs = split_sequences(r.features.values, &r.roll);
    raw_sequences_.insert(raw_sequences_.end(), std::make_move_iterator(seqs.begin()),
                          std::make_move_iterator(seqs.end()));
  }

  rng_.seed(config_.seed);
  std::vector<int> sizes{layout_.width()};
  sizes.insert(sizes.end(), config_.hidden.begin(), config_.hidden.end());
  sizes.push_back(static_cast<int>(class_order_.size()));
  state_.params = NetworkParams::random(sizes, rng_);
  state_.best_params = state_.params;
  state_.best_er = std::numeric_limits<double>::infinity();
  std::ostringstream rs;
  rs << rng_;
  state_.rng_state = rs.str();
}

SegmentCounts Trainer::evaluate(const NetworkParams& params, std::span<const LabelledRecording> data) const {
  SegmentCounts total;
  for (const auto& r : data) {
    auto sys = detect(params, scaler_, r.features, class_order_, config_.threshold);
    EventRoll ref = r.roll;
    ref.activity.conservativeResize(static_cast<Eigen::Index>(r.features.frame_count()), Eigen::NoChange);
    total += score(ref, sys, config_.frames_per_segment);
  }
  return total;
}

EpochLog Trainer::run_epoch() {
  std::vector<Sequence> epoch_seqs =
      config_.mix_ratio > 0.0 && raw_sequences_.size() >= 2
          ? block_mix(raw_sequences_, layout_, config_.mix_ratio, rng_)
          : raw_sequences_;
  const Eigen::ArrayXd inv_std = scaler_.std.array().inverse();
  for (auto& s : epoch_seqs)
    s.inputs = ((s.inputs.colwise() - scaler_.mean).array().colwise() * inv_std).matrix();

  std::vector<std::size_t> order(epoch_seqs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng_);

  double loss_sum = 0.0, cell_sum = 0.0;
  std::vector<const Sequence*> members;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch_size)) {
    members.clear();
    for (std::size_t k = start; k < std::min(order.size(), start + config_.batch_size); ++k)
      members.push_back(&epoch_seqs[order[k]]);
    const SequenceBatch batch = make_batch(members);
    LossAndGradient lg = backward(state_.params, batch);
    if (!std::isfinite(lg.loss) || !lg.gradient.allFinite())
      throw TrainingError("training diverged at epoch " + std::to_string(state_.epoch + 1) +
                          " (non-finite loss or gradient)");
    if (config_.grad_clip > 0.0) {
      const double n = lg.gradient.norm();
      if (n > config_.grad_clip) lg.gradient *= config_.grad_clip / n;
    }
    adam_step(state_.params.flat(), state_.adam, lg.gradient, config_.adam);
    const double cells = batch.mask.sum() * static_cast<double>(class_order_.size());
    loss_sum += lg.loss * cells;
    cell_sum += cells;
  }

  const SegmentCounts counts = evaluate(state_.params, validation_);
  EpochLog entry;
  entry.epoch = ++state_.epoch;
  entry.train_loss = cell_sum > 0.0 ? loss_sum / cell_sum : 0.0;
  entry.validation_er = counts.error_rate();
  entry.validation_f = counts.f_score();
  entry.improved = entry.validation_er < state_.best_er;
  if (entry.improved) {
    state_.best_er = entry.validation_er;
    state_.best_epoch = entry.epoch;
    state_.best_params = state_.params;
    state_.epochs_since_improvement = 0;
  } else {
    state_.epochs_since_improvement += 1;
  }
  std::ostringstream rs;
  rs << rng_;
  state_.rng_state = rs.str();
  log_.push_back(entry);
  return entry;
}

bool Trainer::finished() const {
  if (state_.epoch >= config_.max_epochs) return true;
  return state_.epochs_since_improvement > 0 && state_.epochs_since_improvement >= config_.patience;
}

void Trainer::run(const std::function<void(const EpochLog&)>& on_epoch) {
  while (!finished()) {
    const EpochLog e = run_epoch();
    if (on_epoch) on_epoch(e);
  }
}

void Trainer::restore(const TrainState& state) {
  if (state.params.layer_sizes() != state_.params.layer_sizes())
    throw DataError("restore: network shape differs from the trainer's");
  state_ = state;
  std::istringstream rs(state.rng_state);
  rs >> rng_;
  if (rs.fail()) throw DataError("restore: corrupt RNG state");
  log_.clear();
}

std::string format_training_log(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,train_loss,validation_er,validation_f\n";
  out.precision(17);
  for (const auto& e : log)
    out << e.epoch << ',' << e.train_loss << ',' << e.validation_er << ',' << e.validation_f << '\n';
  return out.str();
}

}  // namespace stereosed
