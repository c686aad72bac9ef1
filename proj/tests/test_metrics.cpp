#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "stereosed/metrics.hpp"

using namespace stereosed;

namespace {

EventRoll roll_of(RollMatrix m) {
  EventRoll r;
  r.activity = std::move(m);
  for (Eigen::Index c = 0; c < r.activity.cols(); ++c) r.class_order.push_back("c" + std::to_string(c));
  return r;
}

EventRoll random_roll(Eigen::Index frames, Eigen::Index classes, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  return roll_of(RollMatrix::NullaryExpr(frames, classes, [&] { return std::uint8_t(b(rng)); }));
}

}  // namespace

TEST_CASE("segments") {
  CHECK(frames_per_segment(FrameGrid{}) == 50);
  auto r = roll_of(RollMatrix::Zero(120, 2));
  CHECK(segmentize(r, 50).rows() == 3);
  CHECK(segmentize(r, 50).isZero());
  r.activity(77, 1) = 1;
  const auto seg = segmentize(r, 50);
  CHECK(seg.cast<int>().sum() == 1);
  CHECK(seg(1, 1) == 1);
}

TEST_CASE("score examples") {
  std::mt19937_64 rng(1);
  const auto ref = random_roll(500, 4, 0.05, rng);
  const auto perfect = score(ref, ref);
  CHECK(perfect.error_rate() == 0.0);
  CHECK(perfect.f_score() == 100.0);

  const auto silent = score(ref, roll_of(RollMatrix::Zero(500, 4)));
  CHECK(silent.reference > 0);
  CHECK(silent.error_rate() == 1.0);
  CHECK(silent.f_score() == 0.0);

  RollMatrix r = RollMatrix::Zero(50, 3), s = RollMatrix::Zero(50, 3);
  r(10, 0) = r(20, 1) = 1;
  s(5, 1) = s(40, 2) = 1;
  const auto c = score(roll_of(r), roll_of(s));
  CHECK(c.tp == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(c.substitutions == 1);
  CHECK(c.deletions == 0);
  CHECK(c.insertions == 0);
  CHECK(c.error_rate() == 0.5);

  CHECK(SegmentCounts{}.error_rate() == 0.0);
  CHECK(SegmentCounts{}.f_score() == 0.0);
  CHECK_THROWS_AS(score(roll_of(r), roll_of(RollMatrix::Zero(49, 3))), DataError);
  auto renamed = roll_of(s);
  renamed.class_order[0] = "other";
  CHECK_THROWS_AS(score(roll_of(r), renamed), DataError);
}

TEST_CASE("score matches the brute-force oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index frames = std::uniform_int_distribution<Eigen::Index>(1, 400)(rng);
    const Eigen::Index classes = std::uniform_int_distribution<Eigen::Index>(1, 6)(rng);
    const auto a = random_roll(frames, classes, 0.02, rng);
    const auto b = random_roll(frames, classes, 0.03, rng);
    CHECK(score(a, b) == oracle::brute_force_score(a, b, 50));
  }
}

TEST_CASE("metric invariants") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_roll(300, 5, 0.02, rng);
    const auto b = random_roll(300, 5, 0.02, rng);
    const auto base = score(a, b);
    // Class permutation.
    std::vector<Eigen::Index> perm{3, 0, 4, 1, 2};
    auto pa = a, pb = b;
    for (Eigen::Index c = 0; c < 5; ++c) {
      pa.activity.col(c) = a.activity.col(perm[std::size_t(c)]);
      pb.activity.col(c) = b.activity.col(perm[std::size_t(c)]);
    }
    CHECK(score(pa, pb).error_rate() == base.error_rate());
    CHECK(score(pa, pb).f_score() == base.f_score());
    // An extra silent segment on both sides.
    auto ea = a, eb = b;
    ea.activity.conservativeResize(350, Eigen::NoChange);
    eb.activity.conservativeResize(350, Eigen::NoChange);
    ea.activity.bottomRows(50).setZero();
    eb.activity.bottomRows(50).setZero();
    CHECK(score(ea, eb).error_rate() == base.error_rate());
    CHECK(score(ea, eb).f_score() == base.f_score());
    // Breaking a correct segment never lowers ER.
    const auto seg_a = segmentize(a, 50), seg_b = segmentize(b, 50);
    for (Eigen::Index s = 0; s < seg_a.rows(); ++s)
      for (Eigen::Index c = 0; c < 5; ++c) {
        if (seg_a(s, c) != seg_b(s, c)) continue;
        auto flipped = b;
        const auto rows = std::min<Eigen::Index>(50, 300 - s * 50);
        flipped.activity.block(s * 50, c, rows, 1).setConstant(seg_b(s, c) ? 0 : 1);
        CHECK(score(a, flipped).error_rate() >= base.error_rate());
      }
    CHECK(score(a, a).error_rate() == 0.0);
  }
}

TEST_CASE("fold combination") {
  SegmentCounts a, b;
  a.reference = 4;
  a.substitutions = 1;
  a.deletions = 1;
  a.tp = 2;
  a.fn = 2;
  a.fp = 1;
  b.reference = 1;
  b.insertions = 1;
  b.tp = 1;
  b.fp = 1;
  CHECK(a.error_rate() == 0.5);
  CHECK(b.error_rate() == 1.0);
  CHECK(combine_folds({a, b}).error_rate == doctest::Approx(0.6));
  CHECK(combine_folds({a, b}, Aggregation::Macro).error_rate == doctest::Approx(0.75));
  CHECK(combine_folds({a}).error_rate == make_report(a).error_rate);
  CHECK(combine_folds({a}).f_score == make_report(a).f_score);
  CHECK(combine_folds({a, a}).error_rate == a.error_rate());
  CHECK(combine_folds({a, a}).f_score == doctest::Approx(a.f_score()));
  CHECK_THROWS(combine_folds({}));
}

TEST_CASE("report tables") {
  SegmentCounts a;
  a.reference = 10;
  a.deletions = 3;
  a.tp = 7;
  a.fn = 3;
  EvaluationRow row;
  row.combination = "mel_2;tdoa";
  row.contexts = {{"home", make_report(a)}, {"residential_area", make_report(SegmentCounts{})}};
  row.compute_average();
  CHECK(row.average_error_rate == doctest::Approx(0.15));
  EvaluationRow failed;
  failed.combination = "mel_1";
  failed.error = "boom, \"quoted\"";
  const auto table = format_table({row, failed});
  CHECK(table.find("home") != std::string::npos);
  CHECK(table.find("Average") != std::string::npos);
  CHECK(table.find("0.30") != std::string::npos);
  CHECK(table.find("82.4") != std::string::npos);
  const auto csv = format_csv({row, failed});
  CHECK(csv.find("mel_2;tdoa") != std::string::npos);
  CHECK(csv.find("\"boom, \"\"quoted\"\"\"") != std::string::npos);
}
