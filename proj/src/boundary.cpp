#include "ddsm/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ddsm {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Squared distance transform of a sampled function along one line.
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const std::size_t n = f.size();
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (!any) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      any = true;
      continue;
    }
    const double fq = f[q] + static_cast<double>(q * q);
    double s = 0.0;
    while (true) {
      const std::size_t p = v[k];
      s = (fq - (f[p] + static_cast<double>(p * p))) / (2.0 * (static_cast<double>(q) - static_cast<double>(p)));
      if (s > z[k]) break;
      --k;  // z[0] = -inf stops this at k = 0
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (!any) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = diff * diff + f[v[k]];
  }
}

void expect_same_extent(const LabelMap& a, const LabelMap& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("boundary_f_score: mask extents differ (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
}

}  // namespace

std::vector<bool> class_boundary(const LabelMap& map, int label) {
  std::vector<bool> out(map.labels.size(), false);
  for (std::size_t y = 0; y < map.height; ++y)
    for (std::size_t x = 0; x < map.width; ++x) {
      if (map.at(y, x) != label) continue;
      const bool edge = (y > 0 && map.at(y - 1, x) != label) || (y + 1 < map.height && map.at(y + 1, x) != label) ||
                        (x > 0 && map.at(y, x - 1) != label) || (x + 1 < map.width && map.at(y, x + 1) != label);
      out[y * map.width + x] = edge;
    }
  return out;
}

std::vector<double> distance_transform(const std::vector<bool>& seeds, std::size_t height, std::size_t width) {
  std::vector<double> sq(height * width);
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = seeds[i] ? 0.0 : kInf;
  std::vector<double> f(height), d(height);
  for (std::size_t x = 0; x < width; ++x) {
    for (std::size_t y = 0; y < height; ++y) f[y] = sq[y * width + x];
    edt_1d(f, d);
    for (std::size_t y = 0; y < height; ++y) sq[y * width + x] = d[y];
  }
  f.resize(width);
  d.resize(width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) f[x] = sq[y * width + x];
    edt_1d(f, d);
    for (std::size_t x = 0; x < width; ++x) sq[y * width + x] = std::sqrt(d[x]);
  }
  return sq;
}

BoundaryScore boundary_f_score(const LabelMap& pred, const LabelMap& gt, double threshold_px) {
  expect_same_extent(pred, gt);
  std::set<int> classes(pred.labels.begin(), pred.labels.end());
  classes.insert(gt.labels.begin(), gt.labels.end());

  std::size_t pred_total = 0, pred_hit = 0, gt_total = 0, gt_hit = 0;
  for (int label : classes) {
    const auto pb = class_boundary(pred, label);
    const auto gb = class_boundary(gt, label);
    const auto dist_to_gt = distance_transform(gb, gt.height, gt.width);
    const auto dist_to_pred = distance_transform(pb, pred.height, pred.width);
    for (std::size_t i = 0; i < pb.size(); ++i) {
      if (pb[i]) {
        ++pred_total;
        if (dist_to_gt[i] <= threshold_px) ++pred_hit;
      }
      if (gb[i]) {
        ++gt_total;
        if (dist_to_pred[i] <= threshold_px) ++gt_hit;
      }
    }
  }
  BoundaryScore s;
  s.threshold_px = threshold_px;
  s.precision = pred_total ? static_cast<double>(pred_hit) / static_cast<double>(pred_total) : 1.0;
  s.recall = gt_total ? static_cast<double>(gt_hit) / static_cast<double>(gt_total) : 1.0;
  s.f_score = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

BoundaryEvalResult evaluate_boundaries(const LabelMap& pred, const LabelMap& gt, const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw std::invalid_argument("evaluate_boundaries: no thresholds");
  BoundaryEvalResult r;
  for (double t : thresholds) {
    r.per_threshold.push_back(boundary_f_score(pred, gt, t));
    r.mean_precision += r.per_threshold.back().precision;
    r.mean_recall += r.per_threshold.back().recall;
    r.mean_f += r.per_threshold.back().f_score;
  }
  const double n = static_cast<double>(thresholds.size());
  r.mean_precision /= n;
  r.mean_recall /= n;
  r.mean_f /= n;
  return r;
}

std::string BoundaryEvalResult::to_csv() const {
  std::ostringstream os;
  os << "threshold_px,precision,recall,f_score\n";
  for (const auto& s : per_threshold)
    os << format_real(s.threshold_px) << ',' << format_real(s.precision) << ',' << format_real(s.recall) << ','
       << format_real(s.f_score) << '\n';
  os << "mean," << format_real(mean_precision) << ',' << format_real(mean_recall) << ',' << format_real(mean_f) << '\n';
  return os.str();
}

}  // namespace ddsm
