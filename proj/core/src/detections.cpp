#include "regatta/detections.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "regatta/errors.hpp"

namespace regatta {

using json = nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& origin, int line, const std::string& what) {
  throw Error(ErrorCode::ParseError,
              origin + ":" + std::to_string(line) + ": " + what);
}

PixelPoint parse_point(const json& arr, const std::string& origin, int line,
                       const char* field) {
  if (!arr.is_array() || arr.size() != 2 || !arr[0].is_number() || !arr[1].is_number()) {
    fail(origin, line, std::string(field) + " must be a [u, v] number pair");
  }
  return {arr[0].get<double>(), arr[1].get<double>()};
}

Detection parse_detection(const json& d, const std::string& origin, int line,
                          int frame_index) {
  Detection det;
  det.frame_index = frame_index;

  const auto cls_it = d.find("class");
  if (cls_it == d.end() || !cls_it->is_string()) {
    fail(origin, line, "detection missing string field 'class'");
  }
  const std::string cls = cls_it->get<std::string>();
  if (cls == "buoy") {
    det.cls = DetectionClass::Buoy;
  } else if (cls == "athlete") {
    det.cls = DetectionClass::Athlete;
  } else {
    fail(origin, line, "unknown detection class '" + cls + "'");
  }

  const auto bbox_it = d.find("bbox");
  if (bbox_it == d.end() || !bbox_it->is_array() || bbox_it->size() != 4) {
    fail(origin, line, "detection missing 4-element 'bbox'");
  }
  for (const auto& v : *bbox_it) {
    if (!v.is_number()) fail(origin, line, "'bbox' entries must be numbers");
  }
  det.left = (*bbox_it)[0].get<double>();
  det.top = (*bbox_it)[1].get<double>();
  det.width = (*bbox_it)[2].get<double>();
  det.height = (*bbox_it)[3].get<double>();
  if (det.width <= 0.0 || det.height <= 0.0) {
    fail(origin, line, "bbox width and height must be positive");
  }

  if (const auto it = d.find("conf"); it != d.end()) {
    if (!it->is_number()) fail(origin, line, "'conf' must be a number");
    det.confidence = it->get<double>();
  }
  if (const auto it = d.find("keypoints"); it != d.end() && !it->is_null()) {
    if (!it->is_object()) fail(origin, line, "'keypoints' must be an object");
    PoseKeypoints kp;
    const auto s = it->find("shoulder");
    const auto w = it->find("wrist");
    if (s == it->end() || w == it->end()) {
      fail(origin, line, "'keypoints' needs 'shoulder' and 'wrist'");
    }
    kp.shoulder = parse_point(*s, origin, line, "shoulder");
    kp.wrist = parse_point(*w, origin, line, "wrist");
    det.keypoints = kp;
  }
  if (const auto it = d.find("tip"); it != d.end() && !it->is_null()) {
    det.tip = parse_point(*it, origin, line, "tip");
  }
  return det;
}

}  // namespace

std::vector<DetectionFrame> parse_detection_stream(const std::string& text,
                                                   const std::string& origin) {
  std::vector<DetectionFrame> frames;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  int last_frame = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;

    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(origin, line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) fail(origin, line_no, "frame line must be a JSON object");

    DetectionFrame frame;
    const auto f_it = j.find("frame");
    if (f_it == j.end() || !f_it->is_number_integer()) {
      fail(origin, line_no, "missing integer field 'frame'");
    }
    frame.frame = f_it->get<int>();
    if (frame.frame <= last_frame) {
      fail(origin, line_no, "frame indices must be strictly increasing");
    }
    last_frame = frame.frame;

    const auto t_it = j.find("t_s");
    if (t_it == j.end() || !t_it->is_number()) {
      fail(origin, line_no, "missing numeric field 't_s'");
    }
    frame.t_s = t_it->get<double>();

    const auto dets_it = j.find("detections");
    if (dets_it == j.end() || !dets_it->is_array()) {
      fail(origin, line_no, "missing array field 'detections'");
    }
    for (const auto& d : *dets_it) {
      if (!d.is_object()) fail(origin, line_no, "detections entries must be objects");
      frame.detections.push_back(parse_detection(d, origin, line_no, frame.frame));
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::vector<DetectionFrame> read_detection_stream(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_detection_stream(buf.str(), path.string());
}

namespace {

json point_json(PixelPoint p) { return json::array({p.u, p.v}); }

}  // namespace

void write_detection_stream(const std::vector<DetectionFrame>& frames,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  }
  for (const DetectionFrame& frame : frames) {
    json dets = json::array();
    for (const Detection& d : frame.detections) {
      json jd;
      jd["class"] = d.cls == DetectionClass::Buoy ? "buoy" : "athlete";
      jd["bbox"] = json::array({d.left, d.top, d.width, d.height});
      jd["conf"] = d.confidence;
      if (d.keypoints) {
        jd["keypoints"] = {{"shoulder", point_json(d.keypoints->shoulder)},
                           {"wrist", point_json(d.keypoints->wrist)}};
      }
      if (d.tip) {
        jd["tip"] = point_json(*d.tip);
      }
      dets.push_back(std::move(jd));
    }
    json line = {{"frame", frame.frame}, {"t_s", frame.t_s}, {"detections", std::move(dets)}};
    out << line.dump() << "\n";
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "short write to " + path.string());
  }
}

void clamp_to_raster(std::vector<DetectionFrame>& frames, int width, int height) {
  for (DetectionFrame& frame : frames) {
    for (Detection& d : frame.detections) {
      const double right = std::min(d.left + d.width, static_cast<double>(width));
      const double bottom = std::min(d.top + d.height, static_cast<double>(height));
      d.left = std::clamp(d.left, 0.0, static_cast<double>(width));
      d.top = std::clamp(d.top, 0.0, static_cast<double>(height));
      d.width = std::max(right - d.left, 0.0);
      d.height = std::max(bottom - d.top, 0.0);
    }
  }
}

}  // namespace regatta
