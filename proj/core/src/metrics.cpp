#include "regatta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "regatta/errors.hpp"

namespace regatta {
namespace {

constexpr double kCenterMatchTol = 1e-4;

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });

  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

AlignedProfiles align_profiles(const SegmentProfile& pred, const SegmentProfile& truth) {
  AlignedProfiles out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!pred.present[i]) continue;
    while (j < truth.size() && truth.center_m[j] < pred.center_m[i] - kCenterMatchTol) ++j;
    if (j >= truth.size()) break;
    if (std::abs(truth.center_m[j] - pred.center_m[i]) > kCenterMatchTol) continue;
    if (!truth.present[j]) continue;
    out.center_m.push_back(pred.center_m[i]);
    out.pred.push_back(pred.value[i]);
    out.truth.push_back(truth.value[j]);
  }
  if (out.size() == 0) {
    throw Error(ErrorCode::NoOverlap, "profiles share no non-missing segment");
  }
  return out;
}

std::pair<double, double> rmse_rrmse(const SegmentProfile& pred, const SegmentProfile& truth) {
  const AlignedProfiles a = align_profiles(pred, truth);
  double sq = 0.0, abs_truth = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.pred[i] - a.truth[i];
    sq += d * d;
    abs_truth += std::abs(a.truth[i]);
  }
  const double rmse = std::sqrt(sq / a.size());
  const double rrmse = rmse / (abs_truth / a.size());
  return {rmse, rrmse};
}

double spearman(const SegmentProfile& pred, const SegmentProfile& truth) {
  const AlignedProfiles a = align_profiles(pred, truth);
  if (a.size() < 3) {
    throw Error(ErrorCode::NoOverlap, "rank correlation needs at least 3 shared segments");
  }
  const auto constant = [](const std::vector<double>& v) {
    for (double x : v) {
      if (x != v.front()) return false;
    }
    return true;
  };
  if (constant(a.pred) || constant(a.truth)) {
    throw Error(ErrorCode::DegenerateRanks, "rank correlation undefined for constant input");
  }
  return pearson(average_ranks(a.pred), average_ranks(a.truth));
}

BlandAltman bland_altman(const SegmentProfile& pred, const SegmentProfile& truth,
                         double sd_factor) {
  const AlignedProfiles a = align_profiles(pred, truth);
  const std::size_t n = a.size();
  if (n < 2) {
    throw Error(ErrorCode::NoOverlap, "agreement limits need at least 2 shared segments");
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a.pred[i] - a.truth[i];
  mean /= n;
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.pred[i] - a.truth[i] - mean;
    var += d * d;
  }
  const double sd = std::sqrt(var / (n - 1));
  return {mean, mean - sd_factor * sd, mean + sd_factor * sd};
}

AgreementReport agreement_report(const SegmentProfile& pred, const SegmentProfile& truth) {
  AgreementReport report;
  const AlignedProfiles a = align_profiles(pred, truth);
  report.shared_segments = static_cast<int>(a.size());
  report.center_m = a.center_m;
  report.error.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) report.error[i] = a.pred[i] - a.truth[i];

  std::tie(report.rmse, report.rrmse) = rmse_rrmse(pred, truth);
  try {
    report.spearman_rho = spearman(pred, truth);
    report.spearman_defined = true;
  } catch (const Error&) {
    report.spearman_defined = false;
  }
  if (a.size() >= 2) {
    const BlandAltman ba = bland_altman(pred, truth);
    report.ba_mean = ba.mean_diff;
    report.ba_lo = ba.lo;
    report.ba_hi = ba.hi;
  }
  return report;
}

double offset_consistency(const OffsetCalibration& a, const OffsetCalibration& b) {
  if (a.seat_count() != b.seat_count() || a.seat_count() == 0) {
    throw Error(ErrorCode::ClassMismatch,
                "calibrations cover " + std::to_string(a.seat_count()) + " and " +
                    std::to_string(b.seat_count()) + " seats");
  }
  double acc = 0.0;
  for (int k = 0; k < a.seat_count(); ++k) {
    const double dx = a.offsets[k].x - b.offsets[k].x;
    const double dy = a.offsets[k].y - b.offsets[k].y;
    const double sx = a.offsets[k].x + b.offsets[k].x;
    const double sy = a.offsets[k].y + b.offsets[k].y;
    acc += std::hypot(dx, dy) / (std::hypot(sx, sy) / 2.0);
  }
  return acc / a.seat_count();
}

SpacingReport spacing_error(const std::vector<std::vector<WorldPoint>>& frame_seats,
                            const std::vector<WorldPoint>& frame_positions,
                            const OffsetCalibration& cal, const CourseSpec& spec) {
  const int n_seats = cal.seat_count();
  if (n_seats < 2) {
    throw Error(ErrorCode::SingleAthleteClass,
                "athlete spacing is undefined for single-seat boats");
  }
  if (frame_seats.size() != frame_positions.size()) {
    throw Error(ErrorCode::DimensionMismatch, "seat frames and positions differ in count");
  }

  const std::vector<double> centers = segment_centers(spec);
  std::vector<std::vector<double>> bins(centers.size());
  double total = 0.0;
  long total_count = 0;

  const double pair_count = n_seats * (n_seats - 1) / 2.0;
  for (std::size_t f = 0; f < frame_seats.size(); ++f) {
    const auto& seats = frame_seats[f];
    if (static_cast<int>(seats.size()) != n_seats) {
      throw Error(ErrorCode::DimensionMismatch,
                  "frame " + std::to_string(f) + " does not carry all seats");
    }
    double err = 0.0;
    for (int a = 0; a < n_seats; ++a) {
      for (int b = a + 1; b < n_seats; ++b) {
        const double observed = std::hypot(seats[b].x - seats[a].x, seats[b].y - seats[a].y);
        const double model = std::hypot(cal.offsets[b].x - cal.offsets[a].x,
                                        cal.offsets[b].y - cal.offsets[a].y);
        err += observed - model;
      }
    }
    err /= pair_count;
    total += err;
    ++total_count;

    const double rel = frame_positions[f].x + spec.race_distance_m;
    if (rel < 0.0) continue;
    const auto bin = static_cast<std::size_t>(rel / spec.segment_spacing_m);
    if (bin < bins.size()) bins[bin].push_back(err);
  }

  SpacingReport report;
  report.overall_mean = total_count > 0 ? total / total_count : 0.0;
  for (std::size_t s = 0; s < centers.size(); ++s) {
    auto& b = bins[s];
    if (b.empty()) continue;
    std::sort(b.begin(), b.end());
    const double median = b.size() % 2 == 1
                              ? b[b.size() / 2]
                              : (b[b.size() / 2 - 1] + b[b.size() / 2]) / 2.0;
    double mean = 0.0;
    for (double e : b) mean += e;
    mean /= b.size();
    double var = 0.0;
    for (double e : b) var += (e - mean) * (e - mean);
    const double sd = b.size() > 1 ? std::sqrt(var / (b.size() - 1)) : 0.0;
    report.center_m.push_back(centers[s]);
    report.median.push_back(median);
    report.sd.push_back(sd);
    report.count.push_back(static_cast<int>(b.size()));
  }
  return report;
}

}  // namespace regatta
