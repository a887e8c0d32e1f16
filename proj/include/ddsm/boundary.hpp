#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ddsm/io.hpp"

namespace ddsm {

inline const std::vector<double> kDefaultThresholds = {3.0, 5.0, 9.0, 12.0};

struct BoundaryScore {
  double threshold_px = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
};

struct BoundaryEvalResult {
  std::vector<BoundaryScore> per_threshold;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double mean_f = 0.0;

  // threshold_px,precision,recall,f_score rows, then a "mean" row.
  std::string to_csv() const;
};

// Pixels of class `label` with a 4-neighbour of another label; neighbours
// beyond the image border are not tested.
std::vector<bool> class_boundary(const LabelMap& map, int label);

// Exact Euclidean distance from every pixel to the nearest seed (two-pass
// lower-envelope transform). Infinity when there are no seeds.
std::vector<double> distance_transform(const std::vector<bool>& seeds, std::size_t height, std::size_t width);

// Boundary precision/recall/F within `threshold_px`, computed per class and
// micro-averaged over the classes present in either map. An empty predicted
// (ground-truth) boundary set gives precision (recall) 1.
BoundaryScore boundary_f_score(const LabelMap& pred, const LabelMap& gt, double threshold_px);

BoundaryEvalResult evaluate_boundaries(const LabelMap& pred, const LabelMap& gt,
                                       const std::vector<double>& thresholds = kDefaultThresholds);

}  // namespace ddsm
