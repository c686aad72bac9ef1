#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "stereosed/model.hpp"
#include "test_util.hpp"

using namespace stereosed;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Sequence random_sequence(int d, int c, int t, std::mt19937_64& rng, int valid = -1) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::bernoulli_distribution b(0.4);
  Sequence s;
  s.inputs = Eigen::MatrixXd::NullaryExpr(d, t, [&] { return n(rng); });
  s.targets = Eigen::MatrixXd::NullaryExpr(c, t, [&] { return b(rng) ? 1.0 : 0.0; });
  s.mask = Eigen::VectorXd::Ones(t);
  if (valid >= 0) s.mask.tail(t - valid).setZero();
  return s;
}

FeatureLayout mel_tdoa_layout(int mel, int tdoa) {
  return FeatureLayout{{{"mel.mono", FeatureFamily::Mel, mel}, {"tdoa", FeatureFamily::Tdoa, tdoa}}};
}

// Two well-separated classes: class c is active when feature c is high.
std::vector<LabelledRecording> toy_recordings(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<LabelledRecording> out;
  for (int r = 0; r < count; ++r) {
    LabelledRecording rec;
    rec.id = "toy" + std::to_string(r);
    const int frames = 300;
    rec.features.layout = mel_tdoa_layout(2, 1);
    rec.features.values = Matrix::Zero(frames, 3);
    rec.roll.class_order = {"a", "b"};
    rec.roll.activity = RollMatrix::Zero(frames, 2);
    for (int t = 0; t < frames; ++t) {
      const bool a = (t / 60 + r) % 2 == 0, b = (t / 45 + r) % 3 == 0;
      rec.roll.activity(t, 0) = a;
      rec.roll.activity(t, 1) = b;
      rec.features.values(t, 0) = (a ? 1.0 : -1.0) + noise(rng);
      rec.features.values(t, 1) = (b ? 1.0 : -1.0) + noise(rng);
      rec.features.values(t, 2) = noise(rng);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

TEST_CASE("parameter layout") {
  NetworkParams p({5, 4, 3, 2});
  CHECK(p.hidden_layers() == 2);
  CHECK(p.size() == (16 * 5 + 16 * 4 + 16) + (12 * 4 + 12 * 3 + 12) + (2 * 3 + 2));
  CHECK(p.input_weights(1).rows() == 12);
  CHECK(p.input_weights(1).cols() == 4);
  CHECK(p.output_weights().cols() == 3);
  CHECK_THROWS_AS(NetworkParams({3}), UsageError);
  CHECK_THROWS_AS(NetworkParams({3, 0, 2}), UsageError);

  std::mt19937_64 rng(1);
  const auto r = NetworkParams::random({5, 4, 2}, rng);
  CHECK(r.input_weights(0).cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(5.0));
  CHECK(r.recurrent_weights(0).cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(4.0));
  CHECK(r.bias(0).segment(4, 4) == Eigen::VectorXd::Ones(4));
  CHECK(r.bias(0).segment(0, 4).isZero());
}

TEST_CASE("scaler") {
  FeatureMatrix a{Matrix(2, 2), {}};
  a.values << 1, 5, 3, 5;
  const std::vector<FeatureMatrix> set{a};
  const auto s = fit_scaler(set);
  CHECK(s.mean(0) == 2.0);
  CHECK(s.std(0) == 1.0);
  CHECK(s.std(1) == 1.0);
  const auto scaled = apply_scaler(s, a.values);
  CHECK(scaled(0, 0) == -1.0);
  CHECK(scaled(1, 0) == 1.0);
  CHECK(scaled.col(1).isZero());
  CHECK_THROWS_AS(fit_scaler(std::vector<FeatureMatrix>{}), DataError);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(3.0, 2.0);
  FeatureMatrix big{Matrix::NullaryExpr(500, 6, [&] { return n(rng); }), {}};
  const std::vector<FeatureMatrix> one{big};
  const auto z = apply_scaler(fit_scaler(one), big.values);
  CHECK(z.colwise().mean().cwiseAbs().maxCoeff() < 1e-6);
  CHECK(((z.array().square().colwise().mean()) - 1.0).abs().maxCoeff() < 1e-9);
}

TEST_CASE("split and join sequences") {
  Matrix f = Matrix::Random(63, 4);
  EventRoll roll{RollMatrix::Ones(63, 2), {"a", "b"}};
  const auto seqs = split_sequences(f, &roll);
  REQUIRE(seqs.size() == 3);
  CHECK(seqs[2].mask.sum() == 13);
  CHECK(seqs[2].inputs.rightCols(12).isZero());
  CHECK(seqs[2].targets.rightCols(12).isZero());
  CHECK(join_sequences(seqs, 63) == f);
  CHECK(split_sequences(f, nullptr).size() == 3);
}

TEST_CASE("zero network outputs one half") {
  NetworkParams p({3, 4, 4, 2});
  std::mt19937_64 rng(2);
  std::vector<Sequence> seqs{random_sequence(3, 2, 25, rng), random_sequence(3, 2, 25, rng)};
  const auto out = forward(p, make_batch(seqs));
  for (const auto& m : out) CHECK((m.array() == 0.5).all());
}

TEST_CASE("hand-unrolled tiny network") {
  // D = 2, one layer of 2 units, C = 1.
  NetworkParams p({2, 2, 1});
  auto wx = p.input_weights(0);
  auto wh = p.recurrent_weights(0);
  auto b = p.bias(0);
  for (int r = 0; r < 8; ++r) {
    b(r) = 0.05 * (r - 3);
    for (int c = 0; c < 2; ++c) {
      wx(r, c) = 0.1 * (r + 1) * (c == 0 ? 1.0 : -0.5);
      wh(r, c) = 0.07 * (r - c) - 0.1;
    }
  }
  p.output_weights() << 0.8, -1.2;
  p.output_bias() << 0.3;

  const double x[3][2] = {{0.5, -1.0}, {1.5, 0.25}, {-0.75, 2.0}};
  double h[2] = {0, 0}, c[2] = {0, 0};
  std::vector<double> expected;
  for (const auto& xt : x) {
    double z[8];
    for (int r = 0; r < 8; ++r)
      z[r] = wx(r, 0) * xt[0] + wx(r, 1) * xt[1] + wh(r, 0) * h[0] + wh(r, 1) * h[1] + b(r);
    double hn[2];
    for (int u = 0; u < 2; ++u) {
      const double ig = sigm(z[u]), fg = sigm(z[2 + u]), gg = std::tanh(z[4 + u]), og = sigm(z[6 + u]);
      c[u] = fg * c[u] + ig * gg;
      hn[u] = og * std::tanh(c[u]);
    }
    h[0] = hn[0];
    h[1] = hn[1];
    expected.push_back(sigm(0.8 * h[0] - 1.2 * h[1] + 0.3));
  }
  Sequence s;
  s.inputs.resize(2, 3);
  for (int t = 0; t < 3; ++t) s.inputs.col(t) << x[t][0], x[t][1];
  s.targets = Eigen::MatrixXd::Zero(1, 3);
  s.mask = Eigen::VectorXd::Ones(3);
  const auto out = forward(p, make_batch(std::vector<Sequence>{s}));
  for (int t = 0; t < 3; ++t) CHECK(std::abs(out[std::size_t(t)](0, 0) - expected[std::size_t(t)]) < 1e-10);
}

TEST_CASE("posteriors stay in (0, 1)") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = NetworkParams::random({4, 6, 3}, rng);
    p.flat() *= 5.0;
    std::vector<Sequence> seqs{random_sequence(4, 3, 10, rng)};
    seqs[0].inputs *= 10.0;
    for (const auto& m : forward(p, make_batch(seqs))) {
      CHECK(m.minCoeff() >= 0.0);
      CHECK(m.maxCoeff() <= 1.0);
      CHECK(m.allFinite());
    }
  }
}

TEST_CASE("binary cross-entropy values") {
  Eigen::MatrixXd mask = Eigen::MatrixXd::Ones(1, 1);
  std::vector<Eigen::MatrixXd> p{Eigen::MatrixXd::Constant(1, 1, 0.8)}, y{Eigen::MatrixXd::Ones(1, 1)};
  CHECK(bce_loss(p, y, mask) == doctest::Approx(-std::log(0.8)).epsilon(1e-12));
  std::vector<Eigen::MatrixXd> half(3, Eigen::MatrixXd::Constant(2, 4, 0.5)), ys(3, Eigen::MatrixXd::Zero(2, 4));
  Eigen::MatrixXd m3 = Eigen::MatrixXd::Ones(3, 4);
  CHECK(bce_loss(half, ys, m3) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  std::vector<Eigen::MatrixXd> exact{Eigen::MatrixXd::Ones(1, 1)};
  CHECK(bce_loss(exact, y, mask) < 1e-6);
  // Padded frames contribute nothing.
  Eigen::MatrixXd partial = Eigen::MatrixXd::Ones(3, 4);
  partial.row(2).setZero();
  half[2].setConstant(0.01);
  CHECK(bce_loss(half, ys, partial) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("gradient matches central differences") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const auto params = NetworkParams::random({3, 4, 3, 2}, rng);
    std::vector<Sequence> seqs{random_sequence(3, 2, 5, rng), random_sequence(3, 2, 5, rng, 3)};
    const auto batch = make_batch(seqs);
    const auto lg = backward(params, batch);
    CHECK(lg.loss == doctest::Approx(bce_loss(forward(params, batch), batch.targets, batch.mask)).epsilon(1e-12));
    NetworkParams probe = params;
    const auto loss_at = [&](Eigen::Index i, double x) {
      probe.flat()(i) = x;
      const double v = bce_loss(forward(probe, batch), batch.targets, batch.mask);
      probe.flat()(i) = params.flat()(i);
      return v;
    };
    double worst = 0.0, worst_quad = 0.0;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      // Central differences at h and h/2, Richardson-extrapolated to O(h^4).
      const double x = params.flat()(i), h = 1e-3;
      const auto central = [&](double step) { return (loss_at(i, x + step) - loss_at(i, x - step)) / (2 * step); };
      const double numeric = (4.0 * central(h / 2) - central(h)) / 3.0;
      const double analytic = lg.gradient(i);
      worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12}));
      worst_quad = std::max(worst_quad, oracle::relative_error(analytic, oracle::lstm_gradient(params, batch, Reduction::Mean, long(i))));
    }
    CHECK(worst < 1e-4);
    CHECK(worst_quad < 1e-8);
    CHECK(double(oracle::lstm_loss(params, batch, Reduction::Mean)) == doctest::Approx(lg.loss).epsilon(1e-13));
  }
}

TEST_CASE("gradient edge cases") {
  std::mt19937_64 rng(12);
  const auto params = NetworkParams::random({3, 4, 2}, rng);
  auto s = random_sequence(3, 2, 6, rng);
  s.mask.setZero();
  const auto zero = backward(params, make_batch(std::vector<Sequence>{s}));
  CHECK(zero.gradient.isZero());
  CHECK(zero.loss == 0.0);

  // The single-sequence gradient comes from a two-column batch whose partner is
  // masked out, so both batches take the same matrix-product path.
  const auto t = random_sequence(3, 2, 6, rng);
  auto silent = random_sequence(3, 2, 6, rng);
  silent.mask.setZero();
  const auto single = backward(params, make_batch(std::vector<Sequence>{t, silent}), Reduction::Sum);
  const auto twice = backward(params, make_batch(std::vector<Sequence>{t, t}), Reduction::Sum);
  CHECK(twice.gradient == 2.0 * single.gradient);
  CHECK(twice.loss == doctest::Approx(2.0 * single.loss).epsilon(1e-14));
  const auto alone = backward(params, make_batch(std::vector<Sequence>{t}), Reduction::Sum);
  CHECK((alone.gradient - single.gradient).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("adam") {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(1);
  AdamState st;
  adam_step(w, st, Eigen::VectorXd::Ones(1));
  CHECK(w(0) == doctest::Approx(-0.001).epsilon(1e-6));
  CHECK(st.step == 1);

  Eigen::VectorXd still = Eigen::VectorXd::LinSpaced(5, -1, 1);
  const Eigen::VectorXd orig = still;
  AdamState st2;
  for (int i = 0; i < 50; ++i) adam_step(still, st2, Eigen::VectorXd::Zero(5));
  CHECK(still == orig);

  std::mt19937_64 r1(3), r2(3);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(4), b = a;
  AdamState sa, sb;
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    adam_step(a, sa, Eigen::VectorXd::NullaryExpr(4, [&] { return n(r1); }));
    adam_step(b, sb, Eigen::VectorXd::NullaryExpr(4, [&] { return n(r2); }));
  }
  CHECK(a == b);
}

TEST_CASE("block mixing") {
  const auto layout = mel_tdoa_layout(2, 1);
  Sequence a, silent;
  a.inputs.resize(3, 4);
  a.inputs << 0.0, 1.0, 2.0, -1.0,  //
      3.0, 1.0, 0.0, 0.0,           //
      -4.0, 2.0, 5.0, 1.0;
  a.targets.resize(2, 4);
  a.targets << 1, 0, 1, 0,  //
      0, 0, 1, 1;
  a.mask = Eigen::VectorXd::Ones(4);
  silent.inputs = Eigen::MatrixXd::Constant(3, 4, std::log(1e-10));
  silent.inputs.row(2).setConstant(-100.0);
  silent.targets = Eigen::MatrixXd::Zero(2, 4);
  silent.mask = Eigen::VectorXd::Ones(4);
  silent.mask(3) = 0.0;

  const auto m = mix_sequences(a, silent, layout);
  CHECK(m.targets == a.targets);
  CHECK(m.mask(3) == 0.0);
  CHECK(m.inputs(0, 1) == doctest::Approx(std::log(std::exp(1.0) + 1e-10)).epsilon(1e-14));
  CHECK(m.inputs.row(2) == a.inputs.row(2));

  Sequence b = a;
  b.targets << 0, 1, 0, 0,  //
      1, 0, 0, 0;
  b.inputs.row(2) << 0.0, 3.0, 4.0, 4.0;
  const auto ab = mix_sequences(a, b, layout);
  Eigen::MatrixXd expected(2, 4);
  expected << 1, 1, 1, 0,  //
      1, 0, 1, 1;
  CHECK(ab.targets == expected);
  Eigen::RowVectorXd mx(4);
  mx << 0.0, 3.0, 5.0, 4.0;
  CHECK(ab.inputs.row(2) == mx);
  CHECK(ab.inputs(0, 0) == doctest::Approx(std::log(2.0)));

  std::mt19937_64 rng(5);
  std::vector<Sequence> pool;
  for (int i = 0; i < 10; ++i) pool.push_back(random_sequence(3, 2, 4, rng));
  const auto mixed = block_mix(pool, layout, 0.5, rng);
  REQUIRE(mixed.size() == 15);
  for (int i = 0; i < 10; ++i) CHECK(mixed[std::size_t(i)].inputs == pool[std::size_t(i)].inputs);
  for (std::size_t i = 10; i < 15; ++i) {
    // Some pair of originals must explain the OR-ed targets.
    bool explained = false;
    for (const auto& x : pool)
      for (const auto& y : pool)
        if (&x != &y && mixed[i].targets == x.targets.cwiseMax(y.targets)) explained = true;
    CHECK(explained);
  }
  CHECK_THROWS(block_mix({pool[0]}, layout, 0.5, rng));
  CHECK_THROWS(mix_sequences(a, random_sequence(4, 2, 4, rng), layout));
}

TEST_CASE("thresholding is strict") {
  Matrix post(2, 2);
  post << 0.5, 0.9, 0.50000001, 0.1;
  const auto roll = threshold_posteriors(post, {"a", "b"});
  CHECK(roll.activity(0, 0) == 0);
  CHECK(roll.activity(0, 1) == 1);
  CHECK(roll.activity(1, 0) == 1);
  CHECK(roll.activity(1, 1) == 0);

  NetworkParams zero({3, 4, 2});
  Scaler s{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3)};
  FeatureMatrix fm{Matrix::Random(60, 3), mel_tdoa_layout(2, 1)};
  CHECK(detect(zero, s, fm, {"a", "b"}).activity.isZero());
  CHECK_THROWS(detect(zero, s, FeatureMatrix{Matrix::Random(60, 4), {}}, {"a", "b"}));
}

TEST_CASE("batch order does not change posteriors") {
  std::mt19937_64 rng(8);
  const auto p = NetworkParams::random({3, 5, 2}, rng);
  std::vector<Sequence> seqs;
  for (int i = 0; i < 4; ++i) seqs.push_back(random_sequence(3, 2, 7, rng));
  const auto fwd = forward(p, make_batch(seqs));
  std::vector<Sequence> rev(seqs.rbegin(), seqs.rend());
  const auto bwd = forward(p, make_batch(rev));
  for (std::size_t t = 0; t < fwd.size(); ++t)
    for (int s = 0; s < 4; ++s) CHECK(fwd[t].col(s) == bwd[t].col(3 - s));
}

TEST_CASE("training loss decreases on a separable toy problem") {
  TrainConfig cfg;
  cfg.hidden = {8};
  cfg.mix_ratio = 0.0;
  cfg.batch_size = 1000;
  cfg.adam.learning_rate = 1e-3;
  cfg.max_epochs = 10;
  Trainer tr(toy_recordings(3, 1), {}, cfg);
  tr.run();
  REQUIRE(tr.log().size() == 10);
  for (std::size_t i = 1; i < 10; ++i) CHECK(tr.log()[i].train_loss <= tr.log()[i - 1].train_loss);
}

TEST_CASE("patience zero stops after the first non-improving epoch") {
  TrainConfig cfg;
  cfg.hidden = {4};
  cfg.patience = 0;
  cfg.max_epochs = 500;
  Trainer tr(toy_recordings(3, 2), {}, cfg);
  tr.run();
  const auto& log = tr.log();
  REQUIRE(!log.empty());
  CHECK(!log.back().improved);
  for (std::size_t i = 0; i + 1 < log.size(); ++i) CHECK(log[i].improved);
}

TEST_CASE("early stopping keeps the best parameters and honours patience") {
  TrainConfig cfg;
  cfg.hidden = {6};
  cfg.patience = 5;
  cfg.max_epochs = 300;
  const auto data = toy_recordings(4, 3);
  Trainer tr({data[0], data[1]}, {data[2]}, cfg);
  tr.run();
  int since = 0, worst_run = 0;
  double best = 1e300;
  int best_epoch = 0;
  for (const auto& e : tr.log()) {
    if (e.validation_er < best) best = e.validation_er, best_epoch = e.epoch;
    since = e.improved ? 0 : since + 1;
    worst_run = std::max(worst_run, since);
  }
  CHECK(worst_run <= 5);
  CHECK(tr.state().best_epoch == best_epoch);
  CHECK(tr.state().best_er == best);
  CHECK(tr.evaluate(tr.state().best_params, std::vector<LabelledRecording>{data[2]}).error_rate() == best);
}

TEST_CASE("training is deterministic and resumable") {
  TrainConfig cfg;
  cfg.hidden = {5};
  cfg.max_epochs = 8;
  const auto data = toy_recordings(3, 4);
  Trainer a(data, {}, cfg), b(data, {}, cfg);
  a.run();
  b.run();
  CHECK(a.state().params.flat() == b.state().params.flat());
  CHECK(format_training_log(a.log()) == format_training_log(b.log()));

  TrainConfig half = cfg;
  half.max_epochs = 4;
  Trainer first(data, {}, half);
  first.run();
  Trainer resumed(data, {}, cfg);
  resumed.restore(first.state());
  resumed.run();
  CHECK(resumed.state().params.flat() == a.state().params.flat());
  CHECK(resumed.log().back().train_loss == a.log().back().train_loss);
}

TEST_CASE("training rejects bad inputs") {
  TrainConfig cfg;
  CHECK_THROWS_AS(Trainer({}, {}, cfg), DataError);
  auto data = toy_recordings(2, 1);
  data[1].roll.class_order = {"b", "a"};
  CHECK_THROWS_AS(Trainer(data, {}, cfg), DataError);
}
