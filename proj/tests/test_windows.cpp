#include <doctest.h>

#include "flowlab/errors.hpp"
#include "flowlab/flow.hpp"
#include "flowlab/rng.hpp"
#include "flowlab/windows.hpp"

using namespace flowlab;

namespace {
std::vector<int> starts(const std::vector<WindowSpec>& ws) {
  std::vector<int> s;
  for (const auto& w : ws) s.push_back(w.start);
  return s;
}
}  // namespace

TEST_CASE("enumerate_windows: stated index sets") {
  CHECK(starts(enumerate_windows(20, 5, 5)) == std::vector<int>{0, 5, 10, 15});
  CHECK(starts(enumerate_windows(12, 5, 5)) == std::vector<int>{0, 5, 7});
  CHECK(starts(enumerate_windows(5, 5, 1)) == std::vector<int>{0});
  CHECK_THROWS_AS(enumerate_windows(4, 5, 1), InputError);
  CHECK_THROWS_AS(enumerate_windows(20, 5, 6), InputError);
  CHECK_THROWS_AS(enumerate_windows(20, 1, 1), InputError);
}

TEST_CASE("enumerate_windows: count is ceil(T/L) at stride L and frames are covered") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int length = 2 + static_cast<int>(rng.uniform_index(10));
    const int t_long = length + static_cast<int>(rng.uniform_index(50));
    const auto ws = enumerate_windows(t_long, length, length);
    CHECK(static_cast<int>(ws.size()) == (t_long + length - 1) / length);

    std::vector<bool> covered(static_cast<std::size_t>(t_long), false);
    for (const auto& w : ws) {
      CHECK(w.start + w.length <= t_long);
      for (int f = w.start; f < w.start + w.length; ++f) covered[static_cast<std::size_t>(f)] = true;
    }
    for (bool c : covered) CHECK(c);
  }
}

TEST_CASE("crop: slicing and scaling linearity") {
  Mat seq(10, 1);
  for (int i = 0; i < 10; ++i) seq(i, 0) = i;
  const Mat got = crop(seq, {3, 4, 1});
  CHECK(got(0, 0) == 3);
  CHECK(got(3, 0) == 6);
  CHECK(crop(seq, {0, 10, 1}) == seq);
  CHECK_THROWS_AS(crop(seq, {8, 4, 1}), InputError);

  Rng rng(2);
  const Mat x = rng.normal_matrix(8, 3);
  const WindowSpec w{2, 4, 1};
  CHECK(Mat(2.5 * crop(x, w)) == crop(Mat(2.5 * x), w));
}

TEST_CASE("crop/noise commutation holds exactly for random inputs") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const Mat x0 = rng.normal_matrix(12, 2);
    const Mat z = rng.normal_matrix(12, 2);
    const double t = rng.uniform();
    const WindowSpec w{static_cast<int>(rng.uniform_index(8)), 4, 1};
    CHECK(crop_noise_commutes(x0, z, t, w));
    CHECK(crop_noise_commutes(x0, z, 0.0, w));
    CHECK(crop_noise_commutes(x0, z, 1.0, w));
  }
}

TEST_CASE("boundary_fix: worked example") {
  Mat frames(4, 1);
  frames << 1, 3, 2, 5;
  const LatentSequence seq = encode(frames);
  const FixedWindow fixed = boundary_fix(seq, {2, 2, 2});
  Mat expect(3, 1);
  expect << 3, -1, 3;
  CHECK(fixed.latents == expect);
  CHECK(fixed.kinds[0] == LatentKind::kAbsolute);
  CHECK(fixed.kinds[1] == LatentKind::kDelta);
  CHECK(fixed.loss_mask == std::vector<bool>{false, true, true});

  LatentSequence tw;
  tw.latents = fixed.latents;
  tw.kinds = fixed.kinds;
  Mat dec_expect(3, 1);
  dec_expect << 3, 2, 5;
  CHECK(decode(tw) == dec_expect);
}

TEST_CASE("boundary_fix: decoded fixed window reproduces ground truth frames") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const int t_long = 16;
    const Mat frames = rng.normal_matrix(t_long, 2);
    const LatentSequence seq = encode(frames);
    const int length = 4;
    const int k = 1 + static_cast<int>(rng.uniform_index(t_long - length - 1));
    const FixedWindow fixed = boundary_fix(seq, {k, length, length});

    LatentSequence tw;
    tw.latents = fixed.latents;
    tw.kinds = fixed.kinds;
    const Mat dec = decode(tw);
    CHECK((dec - frames.middleRows(k - 1, length + 1)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(fixed.loss_mask[0] == false);
    for (std::size_t i = 1; i < fixed.loss_mask.size(); ++i) CHECK(fixed.loss_mask[i] == true);
  }
}

TEST_CASE("boundary_fix: k = 0 fast path and malformed input") {
  Rng rng(5);
  const Mat frames = rng.normal_matrix(8, 2);
  LatentSequence seq = encode(frames);
  const FixedWindow fixed = boundary_fix(seq, {0, 4, 4});
  CHECK(fixed.latents == crop(seq.latents, {0, 4, 4}));
  CHECK(fixed.loss_mask == std::vector<bool>(4, true));

  seq.kinds[0] = LatentKind::kDelta;
  CHECK_THROWS_AS(boundary_fix(seq, {2, 4, 4}), InputError);
}
