#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stereosed/dataset.hpp"
#include "stereosed/features.hpp"
#include "stereosed/metrics.hpp"

namespace stereosed {

// ---------------------------------------------------------------------------
// Parameters

/// Weights of a stacked LSTM with a sigmoid output layer, stored in one flat
/// vector so the optimiser and checkpoints can treat them uniformly.
///
/// layer_sizes = [input, hidden_1, ..., hidden_L, classes]. Gates are stacked
/// in the order input, forget, cell candidate, output.
class NetworkParams {
 public:
  using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;
  using VectorMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

  NetworkParams() = default;
  /// All-zero parameters of the given shape.
  explicit NetworkParams(std::vector<int> layer_sizes);

  /// Uniform in +-1/sqrt(fan_in) per weight matrix, zero biases except the
  /// forget gate (+1).
  static NetworkParams random(std::vector<int> layer_sizes, std::mt19937_64& rng);

  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  int input_size() const { return layer_sizes_.front(); }
  int output_size() const { return layer_sizes_.back(); }
  int hidden_layers() const { return static_cast<int>(layer_sizes_.size()) - 2; }
  int hidden_size(int layer) const { return layer_sizes_[static_cast<std::size_t>(layer) + 1]; }

  Eigen::VectorXd& flat() { return flat_; }
  const Eigen::VectorXd& flat() const { return flat_; }
  Eigen::Index size() const { return flat_.size(); }

  MatrixMap input_weights(int layer);       // 4H x in
  MatrixMap recurrent_weights(int layer);   // 4H x H
  VectorMap bias(int layer);                // 4H
  MatrixMap output_weights();               // C x H_last
  VectorMap output_bias();                  // C
  ConstMatrixMap input_weights(int layer) const;
  ConstMatrixMap recurrent_weights(int layer) const;
  ConstVectorMap bias(int layer) const;
  ConstMatrixMap output_weights() const;
  ConstVectorMap output_bias() const;

  /// Throws UsageError when the shape is inconsistent.
  static void validate_shape(const std::vector<int>& layer_sizes);

 private:
  struct Offsets {
    Eigen::Index wx, wh, b;
  };
  std::vector<int> layer_sizes_;
  std::vector<Offsets> offsets_;
  Eigen::Index out_w_ = 0, out_b_ = 0;
  Eigen::VectorXd flat_;
};

// ---------------------------------------------------------------------------
// Normalisation

struct Scaler {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;  // zero-variance dimensions get 1
};

Scaler fit_scaler(std::span<const FeatureMatrix> train);
Matrix apply_scaler(const Scaler& scaler, const Matrix& values);
FeatureMatrix apply_scaler(const Scaler& scaler, const FeatureMatrix& features);

// ---------------------------------------------------------------------------
// Sequences

inline constexpr int kSequenceLength = 25;

/// One fixed-length training sequence, column per time step.
struct Sequence {
  Eigen::MatrixXd inputs;   // D x T
  Eigen::MatrixXd targets;  // C x T, binary
  Eigen::VectorXd mask;     // T, 1 for real frames, 0 for padding
};

/// Non-overlapping sequences; the last one is zero-padded and masked.
/// `roll` may be null for inference.
std::vector<Sequence> split_sequences(const Matrix& features, const EventRoll* roll,
                                      int length = kSequenceLength);

/// Inverse of split_sequences for the input features.
Matrix join_sequences(std::span<const Sequence> sequences, std::size_t frame_count);

/// Time-major batch: inputs[t] is D x S, targets[t] is C x S.
struct SequenceBatch {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> targets;
  Eigen::MatrixXd mask;  // T x S

  int steps() const { return static_cast<int>(inputs.size()); }
  int sequences() const { return inputs.empty() ? 0 : static_cast<int>(inputs.front().cols()); }
};

SequenceBatch make_batch(std::span<const Sequence* const> sequences);
SequenceBatch make_batch(std::span<const Sequence> sequences);

// ---------------------------------------------------------------------------
// Forward / loss / backward

/// Per-step class posteriors, C x S each.
std::vector<Eigen::MatrixXd> forward(const NetworkParams& params, const SequenceBatch& batch);

enum class Reduction { Mean, Sum };

inline constexpr double kProbabilityClamp = 1e-7;

/// Masked binary cross-entropy with p clamped to [1e-7, 1 - 1e-7]. Mean
/// reduction divides by the number of valid (frame, class) cells.
double bce_loss(const std::vector<Eigen::MatrixXd>& posteriors,
                const std::vector<Eigen::MatrixXd>& targets, const Eigen::MatrixXd& mask,
                Reduction reduction = Reduction::Mean);

struct LossAndGradient {
  double loss = 0.0;
  Eigen::VectorXd gradient;  // same layout as NetworkParams::flat()
};

/// Exact gradient of bce_loss by backpropagation through time.
LossAndGradient backward(const NetworkParams& params, const SequenceBatch& batch,
                         Reduction reduction = Reduction::Mean);

// ---------------------------------------------------------------------------
// Optimiser

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long long step = 0;
};

/// Bias-corrected Adam update of `params` in place.
void adam_step(Eigen::VectorXd& params, AdamState& state, const Eigen::VectorXd& gradient,
               const AdamConfig& config = {});

// ---------------------------------------------------------------------------
// Augmentation

/// Mixes two raw (unscaled) sequences: mel blocks add in linear energy,
/// pitch and TDOA blocks take the element-wise max, targets are OR-ed and the
/// mask is the intersection.
Sequence mix_sequences(const Sequence& a, const Sequence& b, const FeatureLayout& layout);

/// Originals followed by round(ratio * n) mixes of random distinct pairs.
std::vector<Sequence> block_mix(const std::vector<Sequence>& sequences, const FeatureLayout& layout,
                                double ratio, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Inference

/// frames x classes posteriors for a whole recording (scaled internally).
Matrix predict_posteriors(const NetworkParams& params, const Scaler& scaler, const Matrix& features);

/// Active iff posterior > threshold.
EventRoll threshold_posteriors(const Matrix& posteriors, const std::vector<std::string>& class_order,
                               double threshold = 0.5);

EventRoll detect(const NetworkParams& params, const Scaler& scaler, const FeatureMatrix& features,
                 const std::vector<std::string>& class_order, double threshold = 0.5);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::vector<int> hidden{32, 32};
  AdamConfig adam;
  double grad_clip = 5.0;  // global L2 norm; <= 0 disables
  int batch_size = 32;
  int max_epochs = 2000;
  int patience = 100;
  double mix_ratio = 0.5;
  double threshold = 0.5;
  int frames_per_segment = 50;
  std::uint64_t seed = 1;
};

struct LabelledRecording {
  std::string id;
  FeatureMatrix features;  // unscaled
  EventRoll roll;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_er = 0.0;
  double validation_f = 0.0;
  bool improved = false;
};

/// Everything needed to resume training bit-exactly.
struct TrainState {
  NetworkParams params;
  NetworkParams best_params;
  AdamState adam;
  int epoch = 0;
  int best_epoch = 0;
  double best_er = 0.0;  // +inf before the first epoch
  int epochs_since_improvement = 0;
  std::string rng_state;  // textual std::mt19937_64 state
};

/// Epoch loop with validation-ER early stopping. Stops once `patience`
/// consecutive epochs fail to lower the best validation ER (at least one such
/// epoch must occur), or at max_epochs.
class Trainer {
 public:
  Trainer(std::vector<LabelledRecording> train, std::vector<LabelledRecording> validation,
          TrainConfig config);

  EpochLog run_epoch();
  bool finished() const;
  /// Runs epochs until finished; `on_epoch` sees each log line.
  void run(const std::function<void(const EpochLog&)>& on_epoch = {});

  const TrainState& state() const { return state_; }
  void restore(const TrainState& state);
  const Scaler& scaler() const { return scaler_; }
  const std::vector<EpochLog>& log() const { return log_; }
  const TrainConfig& config() const { return config_; }
  const std::vector<std::string>& class_order() const { return class_order_; }
  const FeatureLayout& layout() const { return layout_; }

  /// Segment counts of `params` over a set of recordings.
  SegmentCounts evaluate(const NetworkParams& params, std::span<const LabelledRecording> data) const;

 private:
  std::vector<LabelledRecording> train_;
  std::vector<LabelledRecording> validation_;
  TrainConfig config_;
  Scaler scaler_;
  FeatureLayout layout_;
  std::vector<std::string> class_order_;
  std::vector<Sequence> raw_sequences_;
  TrainState state_;
  std::mt19937_64 rng_;
  std::vector<EpochLog> log_;
};

std::string format_training_log(const std::vector<EpochLog>& log);

}  // namespace stereosed
