#pragma once

#include <string>
#include <vector>

#include "regatta/course.hpp"
#include "regatta/kinematics.hpp"
#include "regatta/localization.hpp"

namespace regatta {

inline constexpr double kAgreementSdFactor = 1.97;

// rrmse normalizes rmse by the mean absolute ground-truth value; the
// definition string is carried so every emitted report states it.
struct AgreementReport {
  double rmse = 0.0;
  double rrmse = 0.0;
  double spearman_rho = 0.0;
  bool spearman_defined = false;
  double ba_mean = 0.0;
  double ba_lo = 0.0;
  double ba_hi = 0.0;
  int shared_segments = 0;
  std::vector<double> center_m;
  std::vector<double> error;  // pred - truth per shared segment
  std::string rrmse_definition = "rrmse = rmse / mean(|truth|)";
};

// Segment pairs present on both sides, matched by center. Used by all
// profile metrics; throws NoOverlap when empty.
struct AlignedProfiles {
  std::vector<double> center_m;
  std::vector<double> pred;
  std::vector<double> truth;

  std::size_t size() const { return center_m.size(); }
};

AlignedProfiles align_profiles(const SegmentProfile& pred, const SegmentProfile& truth);

std::pair<double, double> rmse_rrmse(const SegmentProfile& pred, const SegmentProfile& truth);

// Rank correlation with average ranks on ties. Throws DegenerateRanks when
// either side is constant, NoOverlap on fewer than 3 shared segments.
double spearman(const SegmentProfile& pred, const SegmentProfile& truth);

struct BlandAltman {
  double mean_diff = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

BlandAltman bland_altman(const SegmentProfile& pred, const SegmentProfile& truth,
                         double sd_factor = kAgreementSdFactor);

// Full report; spearman is skipped (spearman_defined = false) when ranks
// are degenerate.
AgreementReport agreement_report(const SegmentProfile& pred, const SegmentProfile& truth);

// Mean relative difference of per-seat offsets between two calibrations of
// the same boat class. Throws ClassMismatch.
double offset_consistency(const OffsetCalibration& a, const OffsetCalibration& b);

struct SpacingReport {
  std::vector<double> center_m;
  std::vector<double> median;
  std::vector<double> sd;
  std::vector<int> count;
  double overall_mean = 0.0;
};

// Per complete frame, mean over athlete pairs of (observed spacing -
// calibrated spacing), binned per segment by the frame's boat position.
// Throws SingleAthleteClass for crews of one.
SpacingReport spacing_error(const std::vector<std::vector<WorldPoint>>& frame_seats,
                            const std::vector<WorldPoint>& frame_positions,
                            const OffsetCalibration& cal, const CourseSpec& spec);

}  // namespace regatta
