#include "regatta/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "regatta/errors.hpp"

namespace regatta {

double TimeSeries::dt() const {
  if (t.size() < 2) {
    throw Error(ErrorCode::TooShort, "time series needs at least 2 samples");
  }
  return t[1] - t[0];
}

void TimeSeries::validate() const {
  if (t.size() != v.size()) {
    throw Error(ErrorCode::DimensionMismatch, "timestamp/value count mismatch");
  }
  if (t.size() < 2) return;
  const double step = t[1] - t[0];
  if (step <= 0.0) {
    throw Error(ErrorCode::TooShort, "timestamps not strictly increasing");
  }
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (std::abs((t[i] - t[i - 1]) - step) > 1e-9) {
      throw Error(ErrorCode::DimensionMismatch, "timestamps not uniformly spaced");
    }
  }
}

std::vector<double> design_lowpass_fir(int taps, double cutoff_hz, double sample_hz) {
  if (taps < 1 || taps % 2 == 0) {
    throw Error(ErrorCode::BadTaps, "tap count must be odd and positive");
  }
  if (cutoff_hz <= 0.0 || cutoff_hz >= sample_hz / 2.0) {
    throw Error(ErrorCode::BadTaps, "cutoff must lie inside (0, Nyquist)");
  }
  const int m = (taps - 1) / 2;
  const double fc = cutoff_hz / sample_hz;  // normalized cutoff
  std::vector<double> h(taps);
  double sum = 0.0;
  for (int k = 0; k < taps; ++k) {
    const int n = k - m;
    const double sinc = n == 0 ? 2.0 * fc
                               : std::sin(2.0 * std::numbers::pi * fc * n) /
                                     (std::numbers::pi * n);
    const double hamming =
        0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * k / (taps - 1));
    h[k] = sinc * hamming;
    sum += h[k];
  }
  for (double& c : h) c /= sum;
  return h;
}

namespace {

void check_taps(const std::vector<double>& taps) {
  if (taps.empty() || taps.size() % 2 == 0) {
    throw Error(ErrorCode::BadTaps, "tap count must be odd");
  }
  double sum = 0.0;
  for (double c : taps) sum += c;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::BadTaps, "taps must sum to 1");
  }
}

// Point-mirrored sample: reflections about the first/last value preserve
// linear trends at the boundaries.
double padded(const std::vector<double>& x, long i) {
  const long n = static_cast<long>(x.size());
  if (i < 0) return 2.0 * x[0] - x[std::min(-i, n - 1)];
  if (i >= n) return 2.0 * x[n - 1] - x[std::max(n - 1 - (i - (n - 1)), 0L)];
  return x[i];
}

std::vector<double> convolve_zero_phase(const std::vector<double>& x,
                                        const std::vector<double>& taps) {
  const long r = static_cast<long>(taps.size() - 1) / 2;
  std::vector<double> out(x.size());
  for (long i = 0; i < static_cast<long>(x.size()); ++i) {
    double acc = 0.0;
    for (long k = -r; k <= r; ++k) {
      acc += taps[k + r] * padded(x, i + k);
    }
    out[i] = acc;
  }
  return out;
}

}  // namespace

TimeSeries smooth_fir(const TimeSeries& x, const std::vector<double>& taps) {
  check_taps(taps);
  TimeSeries out;
  out.t = x.t;
  out.v = convolve_zero_phase(x.v, taps);
  return out;
}

TimeSeries2 smooth_fir(const TimeSeries2& x, const std::vector<double>& taps) {
  check_taps(taps);
  std::vector<double> xs(x.size()), ys(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xs[i] = x.p[i].x;
    ys[i] = x.p[i].y;
  }
  xs = convolve_zero_phase(xs, taps);
  ys = convolve_zero_phase(ys, taps);
  TimeSeries2 out;
  out.t = x.t;
  out.p.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out.p[i] = {xs[i], ys[i]};
  return out;
}

namespace {

std::vector<double> central_difference(const std::vector<double>& x, double dt) {
  const std::size_t n = x.size();
  std::vector<double> v(n);
  v[0] = (-3.0 * x[0] + 4.0 * x[1] - x[2]) / (2.0 * dt);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    v[i] = (x[i + 1] - x[i - 1]) / (2.0 * dt);
  }
  v[n - 1] = (3.0 * x[n - 1] - 4.0 * x[n - 2] + x[n - 3]) / (2.0 * dt);
  return v;
}

}  // namespace

TimeSeries velocity(const TimeSeries& x) {
  if (x.size() < 3) {
    throw Error(ErrorCode::TooShort, "derivative needs at least 3 samples");
  }
  TimeSeries out;
  out.t = x.t;
  out.v = central_difference(x.v, x.dt());
  return out;
}

TimeSeries velocity(const TimeSeries2& x) {
  if (x.size() < 3) {
    throw Error(ErrorCode::TooShort, "derivative needs at least 3 samples");
  }
  const double dt = x.t[1] - x.t[0];
  std::vector<double> xs(x.size()), ys(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xs[i] = x.p[i].x;
    ys[i] = x.p[i].y;
  }
  const std::vector<double> vx = central_difference(xs, dt);
  const std::vector<double> vy = central_difference(ys, dt);
  TimeSeries out;
  out.t = x.t;
  out.v.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.v[i] = std::hypot(vx[i], vy[i]);
  }
  return out;
}

SegmentProfile segment_profile(const TimeSeries& v, const TimeSeries& x_along,
                               const CourseSpec& spec) {
  if (v.size() != x_along.size()) {
    throw Error(ErrorCode::DimensionMismatch, "velocity/position sample counts differ");
  }
  const std::vector<double> centers = segment_centers(spec);

  SegmentProfile profile;
  profile.center_m = centers;
  profile.value.assign(centers.size(), std::numeric_limits<double>::quiet_NaN());
  profile.present.assign(centers.size(), false);

  std::vector<double> sums(centers.size(), 0.0);
  std::vector<int> counts(centers.size(), 0);
  const double origin = -spec.race_distance_m;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double rel = x_along.v[i] - origin;
    if (rel < 0.0) continue;
    // Floor division puts a sample at exactly [center - s/2, center + s/2),
    // half-open toward the finish.
    const auto bin = static_cast<std::size_t>(rel / spec.segment_spacing_m);
    if (bin >= centers.size()) continue;
    sums[bin] += v.v[i];
    counts[bin] += 1;
  }

  bool any = false;
  for (std::size_t s = 0; s < centers.size(); ++s) {
    if (counts[s] > 0) {
      profile.value[s] = sums[s] / counts[s];
      profile.present[s] = true;
      any = true;
    }
  }
  if (!any) {
    throw Error(ErrorCode::NoOverlap, "no samples fall inside the course segments");
  }
  return profile;
}

void write_profile_csv(const SegmentProfile& profile, const std::filesystem::path& path,
                       const std::string& value_column) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  }
  out << "segment_center_m," << value_column << "\n";
  out.precision(10);
  for (std::size_t i = 0; i < profile.size(); ++i) {
    if (!profile.present[i]) continue;
    out << profile.center_m[i] << "," << profile.value[i] << "\n";
  }
}

SegmentProfile read_profile_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line) || line.rfind("segment_center_m,", 0) != 0) {
    throw Error(ErrorCode::ParseError, path.string() + ": missing profile CSV header");
  }
  SegmentProfile profile;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b;
    if (!std::getline(row, a, ',') || !std::getline(row, b)) {
      throw Error(ErrorCode::ParseError,
                  path.string() + ":" + std::to_string(line_no) + ": expected 2 columns");
    }
    try {
      profile.center_m.push_back(std::stod(a));
      profile.value.push_back(std::stod(b));
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError,
                  path.string() + ":" + std::to_string(line_no) + ": non-numeric cell");
    }
    profile.present.push_back(true);
  }
  return profile;
}

}  // namespace regatta
