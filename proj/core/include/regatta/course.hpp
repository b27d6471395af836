#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace regatta {

// Point on the water plane. x runs along the travel direction with the
// finish line at 0 and the start at -race_distance; y runs across lanes.
struct WorldPoint {
  double x = 0.0;
  double y = 0.0;
};

struct WorldVec {
  double x = 0.0;
  double y = 0.0;
};

inline WorldPoint operator+(WorldPoint p, WorldVec v) { return {p.x + v.x, p.y + v.y}; }
inline WorldVec operator-(WorldPoint a, WorldPoint b) { return {a.x - b.x, a.y - b.y}; }

struct LaneId {
  int index = 1;  // 1-based lane number

  friend bool operator==(LaneId a, LaneId b) { return a.index == b.index; }
};

// Standardized regatta course geometry. Lane j occupies the half-open
// strip [(j-1)*lane_width, j*lane_width) in y; lane boundary B_i sits at
// y = i*lane_width. Buoy rows repeat every segment_spacing metres along x.
struct CourseSpec {
  double race_distance_m = 500.0;
  int lane_count = 9;
  double lane_width_m = 9.0;
  double segment_spacing_m = 12.5;
  std::vector<int> buoy_boundaries;  // boundary indices carrying buoys, in [0, lane_count]
  std::map<int, std::string> boat_classes;  // lane -> class name; absent lanes default to K1

  // Class name for a lane, "K1" when the lane has no entry.
  std::string boat_class_name(int lane) const;

  // Throws Error(InvalidCourse) on violated invariants.
  void validate() const;

  int segment_rows() const;  // floor(distance / spacing) + 1
  int segment_count() const;  // number of 12.5 m reporting segments

  double course_width() const { return lane_count * lane_width_m; }
};

struct BuoyRef {
  WorldPoint position;
  int boundary = 0;  // lane boundary index B_i
  int segment = 0;   // segment row index S_j, 0 at the start line
};

// All buoy positions of the course grid, boundary-major then segment.
std::vector<BuoyRef> buoy_world_positions(const CourseSpec& spec);

// Lane containing p, or nullopt when p lies outside the course strip.
std::optional<LaneId> assign_lane(const CourseSpec& spec, WorldPoint p);

// Centers of the 12.5 m reporting segments, from the start toward the finish.
std::vector<double> segment_centers(const CourseSpec& spec);

CourseSpec load_course(const std::string& path);
CourseSpec parse_course_json(const std::string& text);
std::string course_json(const CourseSpec& spec);

}  // namespace regatta
