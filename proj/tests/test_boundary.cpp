#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "ddsm/boundary.hpp"
#include "ddsm/io.hpp"
#include "ddsm/rng.hpp"

#include "boundary_reference.hpp"

using namespace ddsm;
using ddsm::test::brute_force;
using ddsm::test::random_blobs;

namespace {

LabelMap split_map(std::size_t size, std::size_t column) {
  LabelMap m{size, size, std::vector<int>(size * size, 0)};
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = column; x < size; ++x) m.labels[y * size + x] = 1;
  return m;
}

}  // namespace

TEST_CASE("identical masks score one at every threshold") {
  Rng rng(1);
  const LabelMap m = random_blobs(rng, 32, 4);
  const BoundaryEvalResult r = evaluate_boundaries(m, m);
  REQUIRE(r.per_threshold.size() == 4);
  for (const auto& s : r.per_threshold) {
    CHECK(s.precision == 1.0);
    CHECK(s.recall == 1.0);
    CHECK(s.f_score == 1.0);
  }
  CHECK(r.mean_f == 1.0);
}

TEST_CASE("boundary shifted by five pixels") {
  const LabelMap gt = split_map(32, 16), pred = split_map(32, 21);
  const BoundaryScore at3 = boundary_f_score(pred, gt, 3.0);
  const BoundaryScore at9 = boundary_f_score(pred, gt, 9.0);
  CHECK(at3.f_score == 0.0);
  CHECK(at9.f_score == 1.0);
  CHECK(brute_force(pred, gt, 3.0).f_score == 0.0);
  CHECK(brute_force(pred, gt, 9.0).f_score == 1.0);
}

TEST_CASE("random pairs agree with the all-pairs reference and are monotone and symmetric") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const LabelMap a = random_blobs(rng, 32, 4), b = random_blobs(rng, 32, 4);
    const BoundaryEvalResult r = evaluate_boundaries(a, b);
    double prev = -1.0;
    for (const auto& s : r.per_threshold) {
      const BoundaryScore ref = brute_force(a, b, s.threshold_px);
      CHECK(std::abs(s.precision - ref.precision) < 1e-15);
      CHECK(std::abs(s.recall - ref.recall) < 1e-15);
      CHECK(s.f_score >= prev);
      CHECK(s.f_score >= 0.0);
      CHECK(s.f_score <= 1.0);
      prev = s.f_score;
      const BoundaryScore swapped = boundary_f_score(b, a, s.threshold_px);
      CHECK(swapped.precision == s.recall);
      CHECK(swapped.recall == s.precision);
      CHECK(std::abs(swapped.f_score - s.f_score) < 1e-15);
    }
  }
}

TEST_CASE("exact distance transform") {
  Rng rng(3);
  const std::size_t h = 13, w = 17;
  std::vector<bool> seeds(h * w, false);
  for (int i = 0; i < 6; ++i) seeds[rng.below(h * w)] = true;
  const auto d = distance_transform(seeds, h, w);
  for (std::size_t p = 0; p < h * w; ++p) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < h * w; ++s)
      if (seeds[s]) best = std::min(best, std::hypot(double(p / w) - double(s / w), double(p % w) - double(s % w)));
    CHECK(std::abs(d[p] - best) < 1e-12);
  }
  const auto none = distance_transform(std::vector<bool>(6, false), 2, 3);
  CHECK(std::isinf(none[0]));
}

TEST_CASE("shape mismatch and empty threshold lists are rejected") {
  CHECK_THROWS(boundary_f_score(split_map(8, 4), split_map(9, 4), 3.0));
  CHECK_THROWS(evaluate_boundaries(split_map(8, 4), split_map(8, 4), {}));
}

TEST_CASE("label PGM round trip and CSV") {
  Rng rng(4);
  const LabelMap m = random_blobs(rng, 12, 5);
  const auto path = std::filesystem::temp_directory_path() / "ddsm_test_labels.pgm";
  write_pgm_labels(path, m);
  const LabelMap back = read_pgm(path);
  CHECK(back.height == 12);
  CHECK(back.labels == m.labels);
  std::filesystem::remove(path);
  const std::string csv = evaluate_boundaries(m, m).to_csv();
  CHECK(csv.rfind("threshold_px,precision,recall,f_score\n", 0) == 0);
  CHECK(csv.find("\nmean,") != std::string::npos);
}
