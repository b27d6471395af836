#include "regatta/course.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "regatta/errors.hpp"

namespace regatta {

void CourseSpec::validate() const {
  if (!(race_distance_m > 0.0))
    throw Error(ErrorCode::InvalidCourse, "race_distance_m must be > 0");
  if (lane_count < 1)
    throw Error(ErrorCode::InvalidCourse, "lane_count must be >= 1");
  if (!(lane_width_m > 0.0))
    throw Error(ErrorCode::InvalidCourse, "lane_width_m must be > 0");
  if (!(segment_spacing_m > 0.0))
    throw Error(ErrorCode::InvalidCourse, "segment_spacing_m must be > 0");
  for (int b : buoy_boundaries) {
    if (b < 0 || b > lane_count)
      throw Error(ErrorCode::InvalidCourse,
                  "buoy boundary " + std::to_string(b) + " outside [0, lane_count]");
  }
}

std::string CourseSpec::boat_class_name(int lane) const {
  auto it = boat_classes.find(lane);
  return it == boat_classes.end() ? "K1" : it->second;
}

int CourseSpec::segment_rows() const {
  return static_cast<int>(std::floor(race_distance_m / segment_spacing_m)) + 1;
}

int CourseSpec::segment_count() const {
  return static_cast<int>(std::floor(race_distance_m / segment_spacing_m));
}

std::vector<BuoyRef> buoy_world_positions(const CourseSpec& spec) {
  spec.validate();
  const int rows = spec.segment_rows();
  std::vector<BuoyRef> out;
  out.reserve(spec.buoy_boundaries.size() * rows);
  for (int boundary : spec.buoy_boundaries) {
    const double y = boundary * spec.lane_width_m;
    for (int s = 0; s < rows; ++s) {
      const double x = -spec.race_distance_m + s * spec.segment_spacing_m;
      out.push_back(BuoyRef{WorldPoint{x, y}, boundary, s});
    }
  }
  return out;
}

std::optional<LaneId> assign_lane(const CourseSpec& spec, WorldPoint p) {
  if (p.y < 0.0 || p.y >= spec.course_width()) return std::nullopt;
  int j = static_cast<int>(std::floor(p.y / spec.lane_width_m)) + 1;
  // floor can land on lane_count+1 when y == course_width under rounding
  j = std::min(j, spec.lane_count);
  return LaneId{j};
}

std::vector<double> segment_centers(const CourseSpec& spec) {
  const int n = spec.segment_count();
  std::vector<double> centers(n);
  for (int s = 0; s < n; ++s)
    centers[s] = -spec.race_distance_m + (s + 0.5) * spec.segment_spacing_m;
  return centers;
}

CourseSpec parse_course_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("course config: ") + e.what());
  }
  CourseSpec spec;
  try {
    spec.race_distance_m = j.at("race_distance_m").get<double>();
    spec.lane_count = j.at("lane_count").get<int>();
    spec.lane_width_m = j.at("lane_width_m").get<double>();
    spec.segment_spacing_m = j.at("segment_spacing_m").get<double>();
    spec.buoy_boundaries = j.at("buoy_boundaries").get<std::vector<int>>();
    if (j.contains("boat_classes")) {
      for (const auto& [key, val] : j.at("boat_classes").items()) {
        const int lane = std::stoi(key);
        if (lane < 1 || lane > spec.lane_count)
          throw Error(ErrorCode::ParseError,
                      "course config: boat_classes lane " + key + " out of range");
        spec.boat_classes[lane] = val.get<std::string>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("course config: ") + e.what());
  }
  // deterministic buoy enumeration regardless of config order
  std::sort(spec.buoy_boundaries.begin(), spec.buoy_boundaries.end());
  spec.buoy_boundaries.erase(
      std::unique(spec.buoy_boundaries.begin(), spec.buoy_boundaries.end()),
      spec.buoy_boundaries.end());
  spec.validate();
  return spec;
}

std::string course_json(const CourseSpec& spec) {
  nlohmann::json j;
  j["race_distance_m"] = spec.race_distance_m;
  j["lane_count"] = spec.lane_count;
  j["lane_width_m"] = spec.lane_width_m;
  j["segment_spacing_m"] = spec.segment_spacing_m;
  j["buoy_boundaries"] = spec.buoy_boundaries;
  if (!spec.boat_classes.empty()) {
    nlohmann::json bc = nlohmann::json::object();
    for (const auto& [lane, name] : spec.boat_classes) bc[std::to_string(lane)] = name;
    j["boat_classes"] = bc;
  }
  return j.dump(2) + "\n";
}

CourseSpec load_course(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open course config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_course_json(ss.str());
}

}  // namespace regatta
