#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "regatta/course.hpp"
#include "regatta/detections.hpp"
#include "regatta/geometry.hpp"
#include "regatta/kinematics.hpp"
#include "regatta/raster.hpp"

namespace regatta {

// Scripted pacing for one boat. Speed follows
//   v(t, d) = v_peak * (1 - exp(-t_active / rise_s)) - fade_per_100m * d / 100
// where t_active starts at start_stagger_s and d is distance traveled from
// the boat's start position, race_distance + runup_m behind the finish line.
struct LaneScript {
  int lane = 1;
  std::string boat_class = "K1";
  double v_peak = 4.5;
  double rise_s = 3.0;
  double fade_per_100m = 0.0;
  std::vector<std::pair<double, double>> stroke_rate = {{0.0, 100.0}};  // (d, spm)
  double seat_spacing_m = 1.8;
  double start_stagger_s = 0.0;
  double runup_m = 0.0;
  double surge_amp_m = 0.02;
};

// Rail camera: position slides along x with the field between rail_min/max,
// aims at the field midpoint, zooms so a feature_height_m feature at the aim
// distance spans target_feature_px, backing off until every boat fits with
// margin_px to spare.
struct CameraScript {
  double x_offset_m = 0.0;
  double y_m = -60.0;
  double z_m = 12.0;
  double rail_min_m = 0.0;  // rail_min >= rail_max means an unbounded rail
  double rail_max_m = 0.0;
  double target_feature_px = 40.0;
  double feature_height_m = 1.4;
  double margin_px = 60.0;
};

struct OcclusionWindow {
  int lane = 1;
  std::vector<int> seats;  // empty = every seat
  double from_m = 0.0;     // interval in distance traveled
  double to_m = 0.0;
};

struct NoiseModel {
  double jitter_px = 0.0;
  double tip_jitter_px = 0.0;
  double athlete_dropout = 0.0;
  double buoy_dropout = 0.0;
  double shimmer = 0.0;  // animated water texture amplitude, 0 disables
  std::vector<OcclusionWindow> occlusions;
};

struct RaceScript {
  CourseSpec course;
  std::vector<LaneScript> lanes;
  CameraScript camera;
  NoiseModel noise;
  double fps = 25.0;
  int image_width = 960;
  int image_height = 540;
  std::uint64_t seed = 0;
  double duration_s = 0.0;   // 0 = run until every boat finishes, plus slack
  double tip_window_s = 2.0;  // tips attach only this close to the anchor frame

  void validate() const;  // throws Error(InvalidScript)
};

RaceScript parse_race_script_json(const std::string& text);
RaceScript load_race_script(const std::filesystem::path& path);

struct LaneTruth {
  std::vector<double> t;
  std::vector<double> x;  // smooth position, surge excluded
  std::vector<double> v;  // scripted pacing
};

struct GroundTruth {
  double fps = 25.0;
  int anchor_frame = 0;
  std::vector<Homography> world_to_image;          // per frame
  std::vector<std::map<int, WorldPoint>> tips;     // rendered tip per lane per frame
  std::map<int, LaneTruth> tracks;
  std::map<int, std::vector<double>> peaks;        // stroke peak times
  std::map<int, std::vector<std::pair<double, double>>> rate_schedules;
  std::map<int, double> start_x;                   // -race_distance - runup

  int frame_count() const { return static_cast<int>(world_to_image.size()); }
};

void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& path);
GroundTruth load_ground_truth(const std::filesystem::path& path);

struct TruthProfiles {
  SegmentProfile velocity;
  SegmentProfile stroke;
};

// Segment means of the scripted pacing and stroke-rate schedule. Velocity is
// averaged in the distance domain, (1/L) * integral of v dx over the segment.
TruthProfiles truth_profiles(const GroundTruth& gt, const CourseSpec& spec, int lane);

struct SimulationResult {
  std::vector<DetectionFrame> stream;
  GroundTruth truth;
  std::vector<Correspondence> anchors;
  CourseSpec course;  // input course with scripted lane classes filled in
  int width = 0;
  int height = 0;
  double fps = 25.0;
  std::shared_ptr<RasterProvider> rasters;  // deterministic on-demand renderer

  int frame_count() const { return static_cast<int>(stream.size()); }
};

SimulationResult simulate(const RaceScript& script);

// stream.jsonl, course.json, anchors.json, truth.json, optional rasters/.
void write_simulation(const SimulationResult& sim, const std::filesystem::path& dir,
                      bool write_rasters);

std::string anchors_json(const std::vector<Correspondence>& anchors, int anchor_frame);

}  // namespace regatta
