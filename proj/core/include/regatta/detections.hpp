#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "regatta/geometry.hpp"

namespace regatta {

enum class DetectionClass { Buoy, Athlete };

struct PoseKeypoints {
  PixelPoint shoulder;
  PixelPoint wrist;
};

struct Detection {
  DetectionClass cls = DetectionClass::Buoy;
  double left = 0.0, top = 0.0, width = 0.0, height = 0.0;
  double confidence = 1.0;
  std::optional<PoseKeypoints> keypoints;
  std::optional<PixelPoint> tip;
  int frame_index = -1;

  PixelPoint bbox_center() const { return {left + width / 2.0, top + height / 2.0}; }
  // Athlete anchor point: centre of the bbox bottom edge.
  PixelPoint bottom_center() const { return {left + width / 2.0, top + height}; }
};

struct DetectionFrame {
  int frame = 0;
  double t_s = 0.0;
  std::vector<Detection> detections;
};

// JSON-Lines stream, one frame object per line:
// {"frame": i, "t_s": t, "detections": [{"class": "buoy"|"athlete",
//   "bbox": [l,t,w,h], "conf": c, "keypoints": {"shoulder": [u,v],
//   "wrist": [u,v]}, "tip": [u,v]}]}
// keypoints and tip are optional per detection. Parse errors carry the
// 1-based line number. Frames must arrive in increasing frame order.
std::vector<DetectionFrame> read_detection_stream(const std::filesystem::path& path);
std::vector<DetectionFrame> parse_detection_stream(const std::string& text,
                                                   const std::string& origin);
void write_detection_stream(const std::vector<DetectionFrame>& frames,
                            const std::filesystem::path& path);

// Clamps bboxes to raster bounds in place (ingest invariant when the raster
// size is known).
void clamp_to_raster(std::vector<DetectionFrame>& frames, int width, int height);

}  // namespace regatta
