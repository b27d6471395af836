#pragma once

#include <optional>
#include <vector>

#include "regatta/detections.hpp"
#include "regatta/kinematics.hpp"
#include "regatta/localization.hpp"
#include "regatta/raster.hpp"

namespace regatta {

enum class MotionSource { PoseDistance, BboxBrightness };

// One scalar per frame whose oscillation encodes paddle strokes. Frames
// without an observation are linearly interpolated and flagged.
struct MotionSignal {
  TimeSeries series;
  MotionSource source = MotionSource::PoseDistance;
  std::vector<bool> observed;
};

struct StrokePeaks {
  std::vector<double> t;  // sorted, pairwise gaps > merge tolerance
  int merged_count = 0;   // raw maxima consumed by merging
};

// Wrist-to-shoulder distance normalized by bbox width, per frame. Throws
// TooSparse when fewer than half the frames carry keypoints.
MotionSignal motion_signal_pose(const std::vector<double>& t,
                                const std::vector<std::optional<PoseKeypoints>>& keypoints,
                                const std::vector<double>& bbox_widths);

// Mean brightness of the lower-left (0.2 w x 0.2 h) corner of the athlete
// bbox after an 11x11 box blur of the raster. frame index of entry i is
// first_frame + i. Throws MissingRaster.
MotionSignal motion_signal_bbox(const std::vector<double>& t,
                                const std::vector<std::optional<Detection>>& boxes,
                                RasterProvider& rasters, int first_frame);

// Per frame: the detected athlete with the smallest seat index (the front
// athlete when present), -1 when no seat was detected.
std::vector<int> select_athlete(const std::vector<std::vector<SeatSample>>& seats);

// Least-squares polynomial smoothing (central coefficients, point-mirrored
// edges). window odd, order < window.
TimeSeries savitzky_golay(const TimeSeries& x, int window = 11, int order = 3);

// Mean-subtract, Savitzky-Golay smooth, strict local maxima, then
// iteratively merge the closest pair within tolerance (600 ms canoe,
// 300 ms kayak) to its mean timestamp. Throws NoPeaks.
StrokePeaks detect_and_merge_peaks(const MotionSignal& r, Discipline discipline,
                                   int sg_window = 11, int sg_order = 3);

double merge_tolerance_s(Discipline discipline);

// Inter-peak intervals averaged with up to 2 neighbours on each side
// (truncated at the ends), converted to strokes/min at the interval
// midpoints, then linearly interpolated onto the uniform 1/fps grid.
// Throws TooFewPeaks on fewer than 2 peaks.
TimeSeries rate_from_peaks(const StrokePeaks& peaks, double fps);

// Rate resampled onto race distance through the boat track and aggregated
// per segment. Throws NoOverlap.
SegmentProfile stroke_profile(const TimeSeries& rate, const BoatTrack& track,
                              const CourseSpec& spec);

}  // namespace regatta
