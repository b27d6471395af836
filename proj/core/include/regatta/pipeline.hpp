#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "regatta/course.hpp"
#include "regatta/detections.hpp"
#include "regatta/kinematics.hpp"
#include "regatta/localization.hpp"
#include "regatta/raster.hpp"
#include "regatta/strokerate.hpp"
#include "regatta/tracking.hpp"

namespace regatta {

struct AnchorFile {
  std::vector<Correspondence> anchors;
  int frame = -1;  // -1 = locate the frame whose buoy detections match best
};

// Either {"frame": n, "anchors": [...]} or a bare annotation array; the bare
// form leaves frame unresolved and the pipeline finds it from the stream.
AnchorFile parse_anchors_json(const std::string& text);
AnchorFile load_anchors(const std::filesystem::path& path);

// Frame whose buoy detection set agrees with the anchor image points at the
// given radius. Throws AnchorFitFailed when no frame matches at least 4.
int locate_anchor_frame(const std::vector<Correspondence>& anchors,
                        const std::vector<std::vector<PixelPoint>>& buoy_centers_per_frame,
                        double radius_px);

struct PipelineOptions {
  FillMode mode = FillMode::Linear;
  PositionPolicy policy = PositionPolicy::Default;
  MotionSource stroke_source = MotionSource::PoseDistance;
  std::uint64_t seed = 0;
  double order_radius_px = 80.0;   // seat re-association gate on partial frames
  int calibration_frames = 5;
  int max_identity_gap_frames = 250;
  PropagateParams prop;
  // Carrier tracking of athlete points across detection gaps: single pyramid
  // level and a tight window, so that buoys passing the boat stay outside the
  // integration support and cannot capture the carried point. Frame-to-frame
  // athlete motion is small when the camera follows the field, so no coarse
  // levels are needed, and any larger jump is a capture, not motion.
  LucasKanadeParams fill_lk{.pyramid_levels = 1, .window_radius = 6,
                            .max_displacement_px = 8.0};
};

struct LaneResult {
  int lane = 1;
  BoatClass boat_class;
  OffsetCalibration calibration;
  BoatTrack track;  // gap-filled
  int complete_frames = 0;

  TimeSeries speed;  // |v|(t) from FIR-smoothed positions
  SegmentProfile velocity_profile;

  StrokePeaks peaks;
  TimeSeries rate;
  SegmentProfile stroke_profile;
  bool stroke_valid = false;
  std::string stroke_note;
};

struct PipelineResult {
  HomographySequence homographies;
  std::map<int, LaneResult> lanes;
  double fps = 25.0;
  int width = 0;
  int height = 0;
  std::vector<std::string> notes;  // skipped lanes and other degradations
};

// Full reconstruction: homography propagation, lane and seat assignment,
// offset calibration, gap fill, velocity and stroke-rate profiles.
// rasters may be null; the homography carrier then runs on detections alone
// and flow fill modes or the brightness stroke source become unavailable.
PipelineResult run_pipeline(const CourseSpec& spec, const std::vector<DetectionFrame>& stream,
                            const AnchorFile& anchors, RasterProvider* rasters,
                            const PipelineOptions& opt = {});

// velocity_lane<j>.csv, stroke_lane<j>.csv, matching SVG charts, report.json.
void write_pipeline_outputs(const PipelineResult& result,
                            const std::filesystem::path& dir);

}  // namespace regatta
