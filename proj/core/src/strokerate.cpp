#include "regatta/strokerate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "regatta/errors.hpp"

namespace regatta {
namespace {

// Fills unobserved samples by straight lines between observed neighbours;
// runs before filtering so the filter sees a complete signal.
void interpolate_gaps(std::vector<double>& v, const std::vector<bool>& observed) {
  const std::size_t n = v.size();
  std::size_t prev = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (!observed[i]) continue;
    if (prev == n) {
      for (std::size_t j = 0; j < i; ++j) v[j] = v[i];
    } else {
      for (std::size_t j = prev + 1; j < i; ++j) {
        const double w = static_cast<double>(j - prev) / static_cast<double>(i - prev);
        v[j] = v[prev] + w * (v[i] - v[prev]);
      }
    }
    prev = i;
  }
  if (prev != n) {
    for (std::size_t j = prev + 1; j < n; ++j) v[j] = v[prev];
  }
}

}  // namespace

MotionSignal motion_signal_pose(const std::vector<double>& t,
                                const std::vector<std::optional<PoseKeypoints>>& keypoints,
                                const std::vector<double>& bbox_widths) {
  if (t.size() != keypoints.size() || t.size() != bbox_widths.size()) {
    throw Error(ErrorCode::DimensionMismatch, "pose signal input sizes differ");
  }
  MotionSignal signal;
  signal.source = MotionSource::PoseDistance;
  signal.series.t = t;
  signal.series.v.assign(t.size(), 0.0);
  signal.observed.assign(t.size(), false);

  std::size_t observed = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!keypoints[i] || bbox_widths[i] <= 0.0) continue;
    const double du = keypoints[i]->shoulder.u - keypoints[i]->wrist.u;
    const double dv = keypoints[i]->shoulder.v - keypoints[i]->wrist.v;
    signal.series.v[i] = std::hypot(du, dv) / bbox_widths[i];
    signal.observed[i] = true;
    ++observed;
  }
  if (observed * 2 < t.size()) {
    throw Error(ErrorCode::TooSparse,
                "keypoints present in " + std::to_string(observed) + " of " +
                    std::to_string(t.size()) + " frames (need at least half)");
  }
  interpolate_gaps(signal.series.v, signal.observed);
  return signal;
}

namespace {

// Mean of the box-blurred raster over [left, right) x [top, bottom).
// Blur window samples replicate at raster borders.
double blurred_region_mean(const Raster& raster, int left, int top, int right, int bottom) {
  constexpr int kR = 5;  // 11x11 box
  double acc = 0.0;
  long count = 0;
  for (int y = top; y < bottom; ++y) {
    for (int x = left; x < right; ++x) {
      double s = 0.0;
      for (int dy = -kR; dy <= kR; ++dy) {
        const int yy = std::clamp(y + dy, 0, raster.height - 1);
        for (int dx = -kR; dx <= kR; ++dx) {
          const int xx = std::clamp(x + dx, 0, raster.width - 1);
          s += raster.at(xx, yy);
        }
      }
      acc += s / ((2 * kR + 1) * (2 * kR + 1));
      ++count;
    }
  }
  return count > 0 ? acc / count : 0.0;
}

}  // namespace

MotionSignal motion_signal_bbox(const std::vector<double>& t,
                                const std::vector<std::optional<Detection>>& boxes,
                                RasterProvider& rasters, int first_frame) {
  if (t.size() != boxes.size()) {
    throw Error(ErrorCode::DimensionMismatch, "bbox signal input sizes differ");
  }
  MotionSignal signal;
  signal.source = MotionSource::BboxBrightness;
  signal.series.t = t;
  signal.series.v.assign(t.size(), 0.0);
  signal.observed.assign(t.size(), false);

  std::size_t observed = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!boxes[i]) continue;
    const int frame = first_frame + static_cast<int>(i);
    if (frame < 0 || frame >= rasters.frame_count()) {
      throw Error(ErrorCode::MissingRaster, "no raster for frame " + std::to_string(frame));
    }
    const Raster* raster = rasters.frame(frame);
    const Detection& d = *boxes[i];
    // Lower-left corner of the bbox in image coordinates: minimum u,
    // maximum v.
    const int left = std::clamp(static_cast<int>(std::floor(d.left)), 0, raster->width - 1);
    const int right = std::clamp(static_cast<int>(std::ceil(d.left + 0.2 * d.width)), left + 1,
                                 raster->width);
    const int bottom =
        std::clamp(static_cast<int>(std::ceil(d.top + d.height)), 1, raster->height);
    const int top = std::clamp(static_cast<int>(std::floor(d.top + 0.8 * d.height)), 0,
                               bottom - 1);
    signal.series.v[i] = blurred_region_mean(*raster, left, top, right, bottom);
    signal.observed[i] = true;
    ++observed;
  }
  if (observed == 0) {
    throw Error(ErrorCode::TooSparse, "no frame provides an athlete bbox");
  }
  interpolate_gaps(signal.series.v, signal.observed);
  return signal;
}

std::vector<int> select_athlete(const std::vector<std::vector<SeatSample>>& seats) {
  std::vector<int> choice(seats.size(), -1);
  for (std::size_t i = 0; i < seats.size(); ++i) {
    for (std::size_t k = 0; k < seats[i].size(); ++k) {
      if (seats[i][k].present && seats[i][k].source == ObservationSource::Detected) {
        choice[i] = static_cast<int>(k) + 1;
        break;
      }
    }
  }
  return choice;
}

namespace {

std::vector<double> savgol_coefficients(int window, int order) {
  const int m = (window - 1) / 2;
  Eigen::MatrixXd a(window, order + 1);
  for (int i = -m; i <= m; ++i) {
    double p = 1.0;
    for (int j = 0; j <= order; ++j) {
      a(i + m, j) = p;
      p *= i;
    }
  }
  // Row of the projection matrix that evaluates the fit at the centre.
  const Eigen::MatrixXd ata = a.transpose() * a;
  const Eigen::VectorXd e0 = Eigen::VectorXd::Unit(order + 1, 0);
  const Eigen::VectorXd beta = ata.ldlt().solve(e0);
  const Eigen::VectorXd c = a * beta;
  return {c.data(), c.data() + window};
}

double padded_even(const std::vector<double>& x, long i) {
  const long n = static_cast<long>(x.size());
  if (i < 0) return 2.0 * x[0] - x[std::min(-i, n - 1)];
  if (i >= n) return 2.0 * x[n - 1] - x[std::max(n - 1 - (i - (n - 1)), 0L)];
  return x[i];
}

}  // namespace

TimeSeries savitzky_golay(const TimeSeries& x, int window, int order) {
  if (window < 3 || window % 2 == 0 || order < 0 || order >= window) {
    throw Error(ErrorCode::BadTaps, "Savitzky-Golay needs odd window > order");
  }
  const std::vector<double> c = savgol_coefficients(window, order);
  const long m = (window - 1) / 2;
  TimeSeries out;
  out.t = x.t;
  out.v.resize(x.v.size());
  for (long i = 0; i < static_cast<long>(x.v.size()); ++i) {
    double acc = 0.0;
    for (long k = -m; k <= m; ++k) {
      acc += c[k + m] * padded_even(x.v, i + k);
    }
    out.v[i] = acc;
  }
  return out;
}

double merge_tolerance_s(Discipline discipline) {
  return discipline == Discipline::Canoe ? 0.6 : 0.3;
}

StrokePeaks detect_and_merge_peaks(const MotionSignal& r, Discipline discipline,
                                   int sg_window, int sg_order) {
  const std::size_t n = r.series.size();
  if (n < 3) {
    throw Error(ErrorCode::NoPeaks, "motion signal too short for peak detection");
  }
  double mean = 0.0;
  for (double v : r.series.v) mean += v;
  mean /= n;
  TimeSeries centered;
  centered.t = r.series.t;
  centered.v.resize(n);
  for (std::size_t i = 0; i < n; ++i) centered.v[i] = r.series.v[i] - mean;

  const TimeSeries smooth = savitzky_golay(centered, sg_window, sg_order);

  std::vector<double> peaks;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (smooth.v[i] > smooth.v[i - 1] && smooth.v[i] > smooth.v[i + 1]) {
      peaks.push_back(smooth.t[i]);
    }
  }
  if (peaks.empty()) {
    throw Error(ErrorCode::NoPeaks, "no local maxima in the motion signal");
  }

  // Closest pair first; ties resolved toward the earliest pair. Peaks stay
  // sorted because a merged timestamp lies between its parents.
  const double tol = merge_tolerance_s(discipline);
  int merged = 0;
  for (;;) {
    double best_gap = std::numeric_limits<double>::infinity();
    std::size_t best = peaks.size();
    for (std::size_t i = 0; i + 1 < peaks.size(); ++i) {
      const double gap = peaks[i + 1] - peaks[i];
      if (gap <= tol && gap < best_gap) {
        best_gap = gap;
        best = i;
      }
    }
    if (best == peaks.size()) break;
    const double t_merged = (peaks[best] + peaks[best + 1]) / 2.0;
    peaks[best] = t_merged;
    peaks.erase(peaks.begin() + best + 1);
    ++merged;
  }

  StrokePeaks out;
  out.t = std::move(peaks);
  out.merged_count = merged;
  return out;
}

TimeSeries rate_from_peaks(const StrokePeaks& peaks, double fps) {
  if (peaks.t.size() < 2) {
    throw Error(ErrorCode::TooFewPeaks, "rate needs at least 2 stroke peaks");
  }
  const std::size_t m = peaks.t.size() - 1;  // interval count
  std::vector<double> mid(m), rate(m);
  for (std::size_t j = 0; j < m; ++j) {
    mid[j] = (peaks.t[j] + peaks.t[j + 1]) / 2.0;
    double acc = 0.0;
    int cnt = 0;
    for (long k = static_cast<long>(j) - 2; k <= static_cast<long>(j) + 2; ++k) {
      if (k < 0 || k >= static_cast<long>(m)) continue;
      acc += peaks.t[k + 1] - peaks.t[k];
      ++cnt;
    }
    rate[j] = 60.0 / (acc / cnt);
  }

  // Resample onto the uniform frame grid spanned by the interval midpoints.
  TimeSeries out;
  const double dt = 1.0 / fps;
  const long i0 = static_cast<long>(std::ceil(mid.front() / dt - 1e-9));
  const long i1 = static_cast<long>(std::floor(mid.back() / dt + 1e-9));
  std::size_t j = 0;
  for (long i = i0; i <= i1; ++i) {
    const double t = i * dt;
    while (j + 1 < m && mid[j + 1] < t) ++j;
    double v;
    if (m == 1 || t <= mid[j]) {
      v = rate[j];
    } else {
      const double w = (t - mid[j]) / (mid[j + 1] - mid[j]);
      v = rate[j] + w * (rate[j + 1] - rate[j]);
    }
    out.t.push_back(t);
    out.v.push_back(v);
  }
  if (out.t.empty()) {
    // Midpoints narrower than one frame step: emit the nearest grid sample.
    const double t = std::round(mid.front() / dt) * dt;
    out.t.push_back(t);
    out.v.push_back(rate.front());
  }
  return out;
}

SegmentProfile stroke_profile(const TimeSeries& rate, const BoatTrack& track,
                              const CourseSpec& spec) {
  if (rate.size() == 0 || track.frame_count() == 0) {
    throw Error(ErrorCode::NoOverlap, "empty rate signal or track");
  }
  // Boat along-course position at each rate timestamp, interpolated
  // between frames.
  TimeSeries x;
  x.t = rate.t;
  x.v.resize(rate.size());
  const int n = track.frame_count();
  for (std::size_t i = 0; i < rate.size(); ++i) {
    const double ft = (rate.t[i] - track.t.front()) * track.fps;
    if (ft <= 0.0) {
      x.v[i] = track.position.front().x;
    } else if (ft >= n - 1) {
      x.v[i] = track.position.back().x;
    } else {
      const int f = static_cast<int>(ft);
      const double w = ft - f;
      x.v[i] = track.position[f].x * (1.0 - w) + track.position[f + 1].x * w;
    }
  }
  return segment_profile(rate, x, spec);
}

}  // namespace regatta
