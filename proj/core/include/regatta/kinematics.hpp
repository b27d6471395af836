#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "regatta/course.hpp"

namespace regatta {

// Uniformly sampled scalar signal. dt is implied by the timestamps and
// must be constant within 1e-9 s.
struct TimeSeries {
  std::vector<double> t;
  std::vector<double> v;

  std::size_t size() const { return t.size(); }
  double dt() const;        // throws TooShort on < 2 samples
  void validate() const;    // uniformity + monotonicity
};

// Uniformly sampled planar positions (boat world track).
struct TimeSeries2 {
  std::vector<double> t;
  std::vector<WorldPoint> p;

  std::size_t size() const { return t.size(); }
};

// Windowed-sinc low-pass, normalized to unit DC gain. Odd tap count.
std::vector<double> design_lowpass_fir(int taps = 25, double cutoff_hz = 1.5,
                                       double sample_hz = 25.0);

// Zero-phase FIR smoothing, output length = input length. Edges use
// point-mirrored padding about the boundary sample, which keeps constants
// and linear ramps exact all the way to the ends. Throws BadTaps when the
// tap count is even or the taps do not sum to 1 within 1e-9.
TimeSeries smooth_fir(const TimeSeries& x, const std::vector<double>& taps);
TimeSeries2 smooth_fir(const TimeSeries2& x, const std::vector<double>& taps);

// Central-difference derivative, second-order one-sided stencils at the
// boundaries. Throws TooShort on fewer than 3 samples.
TimeSeries velocity(const TimeSeries& x);
// Magnitude of the planar derivative.
TimeSeries velocity(const TimeSeries2& x);

// Per-segment aggregate over race distance. Missing segments carry NaN and
// present=false.
struct SegmentProfile {
  std::vector<double> center_m;
  std::vector<double> value;
  std::vector<bool> present;

  std::size_t size() const { return center_m.size(); }
};

// Mean of v over the samples whose along-course position falls in
// [center - spacing/2, center + spacing/2). Throws NoOverlap when no sample
// lands in any segment.
SegmentProfile segment_profile(const TimeSeries& v, const TimeSeries& x_along,
                               const CourseSpec& spec);

// CSV round trip. Header is "segment_center_m,<value_column>"; only present
// segments are written.
void write_profile_csv(const SegmentProfile& profile, const std::filesystem::path& path,
                       const std::string& value_column);
SegmentProfile read_profile_csv(const std::filesystem::path& path);

}  // namespace regatta
