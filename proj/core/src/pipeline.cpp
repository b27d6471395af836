#include "regatta/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "regatta/errors.hpp"
#include "regatta/geometry.hpp"
#include "regatta/svg.hpp"

namespace regatta {
namespace {

struct Candidate {
  Detection det;
  WorldPoint world;
  PixelPoint image;
};

std::string lane_key(int lane) { return std::to_string(lane); }

}  // namespace

AnchorFile parse_anchors_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("anchors: ") + e.what());
  }
  AnchorFile af;
  af.frame = -1;  // resolved against the stream when no frame is given
  try {
    const nlohmann::json* list = &j;
    if (j.is_object()) {
      af.frame = j.value("frame", -1);
      list = &j.at("anchors");
    }
    for (const auto& e : *list) {
      Correspondence c;
      c.image = {e.at("image").at(0).get<double>(), e.at("image").at(1).get<double>()};
      c.world = {e.at("world").at(0).get<double>(), e.at("world").at(1).get<double>()};
      af.anchors.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("anchors: ") + e.what());
  }
  if (af.anchors.size() < 4)
    throw Error(ErrorCode::AnchorFitFailed, "at least 4 anchor correspondences required");
  return af;
}

AnchorFile load_anchors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open anchors: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_anchors_json(ss.str());
}

int locate_anchor_frame(const std::vector<Correspondence>& anchors,
                        const std::vector<std::vector<PixelPoint>>& buoy_centers_per_frame,
                        double radius_px) {
  int best_frame = -1;
  int best_count = 0;
  const double r2 = radius_px * radius_px;
  for (std::size_t f = 0; f < buoy_centers_per_frame.size(); ++f) {
    int count = 0;
    for (const Correspondence& a : anchors) {
      for (const PixelPoint& p : buoy_centers_per_frame[f]) {
        const double du = a.image.u - p.u;
        const double dv = a.image.v - p.v;
        if (du * du + dv * dv <= r2) {
          ++count;
          break;
        }
      }
    }
    if (count > best_count) {
      best_count = count;
      best_frame = static_cast<int>(f);
    }
  }
  if (best_frame < 0 || best_count < 4)
    throw Error(ErrorCode::AnchorFitFailed,
                "no frame's buoy detections match the anchor annotations");
  return best_frame;
}

PipelineResult run_pipeline(const CourseSpec& spec, const std::vector<DetectionFrame>& stream,
                            const AnchorFile& anchors, RasterProvider* rasters,
                            const PipelineOptions& opt) {
  spec.validate();
  if (stream.empty()) throw Error(ErrorCode::ParseError, "empty detection stream");

  const int frames = stream.back().frame + 1;
  double fps = 25.0;
  if (stream.size() >= 2) {
    const double span_t = stream.back().t_s - stream.front().t_s;
    const int span_f = stream.back().frame - stream.front().frame;
    if (span_t > 0.0 && span_f > 0) fps = span_f / span_t;
  }
  const double t0 = stream.front().t_s - stream.front().frame / fps;

  PipelineResult result;
  result.fps = fps;

  // dense frame arrays
  std::vector<const DetectionFrame*> dense(frames, nullptr);
  for (const DetectionFrame& df : stream) {
    if (df.frame < 0) throw Error(ErrorCode::ParseError, "negative frame index");
    dense[df.frame] = &df;
  }

  int width = 0, height = 0;
  if (rasters) {
    if (rasters->frame_count() != frames)
      throw Error(ErrorCode::MissingRaster,
                  "raster sequence has " + std::to_string(rasters->frame_count()) +
                      " frames, stream has " + std::to_string(frames));
    const Raster* r0 = rasters->frame(0);
    width = r0->width;
    height = r0->height;
  } else {
    double w = 0.0, h = 0.0;
    for (const DetectionFrame& df : stream) {
      for (const Detection& d : df.detections) {
        w = std::max(w, d.left + d.width);
        h = std::max(h, d.top + d.height);
      }
    }
    width = static_cast<int>(std::ceil(w)) + 2;
    height = static_cast<int>(std::ceil(h)) + 2;
  }
  result.width = width;
  result.height = height;

  std::vector<std::vector<PixelPoint>> buoy_centers(frames);
  for (int f = 0; f < frames; ++f) {
    if (!dense[f]) continue;
    for (const Detection& d : dense[f]->detections) {
      if (d.cls == DetectionClass::Buoy) buoy_centers[f].push_back(d.bbox_center());
    }
  }

  PropagateParams prop = opt.prop;
  prop.ransac.seed = opt.seed;
  const int anchor_frame =
      anchors.frame >= 0 ? anchors.frame
                         : locate_anchor_frame(anchors.anchors, buoy_centers, prop.snap_radius_px);
  result.homographies =
      rasters ? propagate(*rasters, anchor_frame, anchors.anchors, spec, buoy_centers, prop)
              : propagate_by_detections(frames, width, height, anchor_frame, anchors.anchors,
                                        spec, buoy_centers, prop);
  const HomographySequence& seq = result.homographies;

  std::vector<std::optional<Homography>> hinv(frames);
  for (int f = 0; f < frames; ++f) {
    try {
      hinv[f] = invert(seq.world_to_image[f]);
    } catch (const Error&) {
      hinv[f] = std::nullopt;
    }
  }

  // lane bucketing of athlete detections through the per-frame inverse map;
  // inherited homographies are stale copies, so their world mapping is not
  // trusted and those frames contribute no observations
  std::map<int, std::vector<std::vector<Candidate>>> buckets;
  for (int f = 0; f < frames; ++f) {
    if (!dense[f] || !hinv[f]) continue;
    if (seq.status[f] == FrameStatus::Inherited) continue;
    for (const Detection& d : dense[f]->detections) {
      if (d.cls != DetectionClass::Athlete) continue;
      const PixelPoint p = athlete_image_position(d);
      WorldPoint w;
      try {
        w = apply(*hinv[f], p);
      } catch (const Error&) {
        continue;
      }
      const auto lane = assign_lane(spec, w);
      if (!lane) continue;
      auto& lane_frames = buckets[lane->index];
      if (lane_frames.empty()) lane_frames.resize(frames);
      lane_frames[f].push_back({d, w, p});
    }
  }

  std::vector<double> t_axis(frames);
  for (int f = 0; f < frames; ++f) t_axis[f] = t0 + f / fps;

  const int presence_threshold = std::max(10, frames / 20);

  for (auto& [lane, lane_frames] : buckets) {
    int present_frames = 0;
    for (const auto& c : lane_frames) present_frames += c.empty() ? 0 : 1;
    if (present_frames < presence_threshold) {
      result.notes.push_back("lane " + lane_key(lane) + " ignored: detections in only " +
                             std::to_string(present_frames) + " frames");
      continue;
    }

    const BoatClass cls = BoatClass::from_name(spec.boat_class_name(lane));
    const int n_seats = cls.athletes;

    BoatTrack pre;
    pre.lane = {lane};
    pre.boat_class = cls;
    pre.fps = fps;
    pre.first_frame = 0;
    pre.resize_frames(frames);
    pre.t = t_axis;

    std::vector<std::vector<std::optional<Detection>>> seat_dets(
        frames, std::vector<std::optional<Detection>>(n_seats));
    std::vector<std::optional<PixelPoint>> last_img(n_seats);
    std::vector<int> last_seen(n_seats, -(1 << 30));

    for (int f = 0; f < frames; ++f) {
      std::vector<Candidate> cand = lane_frames[f];
      std::sort(cand.begin(), cand.end(),
                [](const Candidate& a, const Candidate& b) { return a.world.x > b.world.x; });

      std::vector<int> assignment(n_seats, -1);
      if (static_cast<int>(cand.size()) >= n_seats) {
        // complete view: most advanced athlete is seat 1
        for (int k = 0; k < n_seats; ++k) assignment[k] = k;
      } else if (!cand.empty()) {
        std::vector<std::optional<PixelPoint>> predicted(n_seats);
        for (int k = 0; k < n_seats; ++k) {
          if (last_img[k] && f - last_seen[k] <= opt.max_identity_gap_frames)
            predicted[k] = last_img[k];
        }
        std::vector<PixelPoint> centers;
        centers.reserve(cand.size());
        for (const Candidate& c : cand) centers.push_back(c.image);
        assignment = order_athletes(predicted, centers, opt.order_radius_px);
      }
      for (int k = 0; k < n_seats; ++k) {
        if (assignment[k] < 0) continue;
        const Candidate& c = cand[assignment[k]];
        pre.seats[f][k] = {true, c.image, c.world, ObservationSource::Detected, 0};
        seat_dets[f][k] = c.det;
        last_img[k] = c.image;
        last_seen[k] = f;
      }
      bool complete = true;
      for (int k = 0; k < n_seats; ++k) complete = complete && pre.seats[f][k].present;
      pre.complete[f] = complete;
    }

    int complete_frames = 0;
    for (int f = 0; f < frames; ++f) complete_frames += pre.complete[f] ? 1 : 0;
    if (complete_frames == 0) {
      result.notes.push_back("lane " + lane_key(lane) + " skipped: no complete frames");
      continue;
    }

    // tip observations on complete frames, gated by the search window around
    // the pre-calibration tip estimate
    std::vector<CalibrationFrame> tip_frames;
    std::vector<int> complete_list;
    for (int f = 0; f < frames; ++f) {
      if (!pre.complete[f]) continue;
      complete_list.push_back(f);
      std::optional<PixelPoint> tip_px;
      for (const Candidate& c : lane_frames[f]) {
        if (c.det.tip) {
          tip_px = c.det.tip;
          break;
        }
      }
      if (!tip_px || !hinv[f]) continue;
      std::vector<WorldPoint> worlds(n_seats);
      for (int k = 0; k < n_seats; ++k) worlds[k] = pre.seats[f][k].world;
      ImageRect roi;
      try {
        roi = tip_roi(seq.world_to_image[f], initial_tip_estimate(worlds, cls), width, height);
      } catch (const Error&) {
        continue;
      }
      if (tip_px->u < roi.left || tip_px->u >= roi.left + roi.width || tip_px->v < roi.top ||
          tip_px->v >= roi.top + roi.height)
        continue;
      WorldPoint tip_world;
      try {
        tip_world = apply(*hinv[f], *tip_px);
      } catch (const Error&) {
        continue;
      }
      CalibrationFrame cf;
      cf.frame_index = f;
      cf.seats = worlds;
      cf.tip = tip_world;
      tip_frames.push_back(std::move(cf));
    }

    auto by_anchor_distance = [&](int fa, int fb) {
      const int da = std::abs(fa - anchor_frame);
      const int db = std::abs(fb - anchor_frame);
      return da != db ? da < db : fa < fb;
    };

    LaneResult lr;
    lr.lane = lane;
    lr.boat_class = cls;
    lr.complete_frames = complete_frames;

    if (static_cast<int>(tip_frames.size()) >= opt.calibration_frames) {
      std::sort(tip_frames.begin(), tip_frames.end(),
                [&](const CalibrationFrame& a, const CalibrationFrame& b) {
                  return by_anchor_distance(a.frame_index, b.frame_index);
                });
      tip_frames.resize(opt.calibration_frames);
      lr.calibration = calibrate_offsets(tip_frames, cls);
    } else {
      std::sort(complete_list.begin(), complete_list.end(), by_anchor_distance);
      const int take = std::min<int>(opt.calibration_frames, complete_list.size());
      std::vector<CalibrationFrame> fallback;
      for (int i = 0; i < take; ++i) {
        const int f = complete_list[i];
        CalibrationFrame cf;
        cf.frame_index = f;
        cf.seats.resize(n_seats);
        for (int k = 0; k < n_seats; ++k) cf.seats[k] = pre.seats[f][k].world;
        fallback.push_back(std::move(cf));
      }
      lr.calibration = calibrate_offsets_from_default(fallback, cls);
    }

    for (int f = 0; f < frames; ++f) {
      if (!pre.complete[f]) continue;
      std::vector<AthleteObservation> obs(n_seats);
      for (int k = 0; k < n_seats; ++k) {
        obs[k] = {pre.seats[f][k].image, pre.seats[f][k].world, {lane}, k + 1,
                  ObservationSource::Detected};
      }
      pre.position[f] = boat_position(obs, lr.calibration);
      pre.has_position[f] = true;
      pre.position_source[f] = ObservationSource::Detected;
    }

    lr.track = fill_track(pre, opt.mode, lr.calibration, rasters, &seq, opt.fill_lk, opt.policy);

    // kinematics: zero-phase low-pass on positions, then |dx/dt|. Boundary
    // extrapolation is held out of the chain: smoothing would bleed the
    // fabricated velocities into measured samples, and profiles aggregate
    // measurements only. Flagged frames carry the hold velocity instead.
    int mbegin = 0, mend = lr.track.frame_count();
    while (mbegin < mend && lr.track.extrapolated[mbegin]) ++mbegin;
    while (mend > mbegin && lr.track.extrapolated[mend - 1]) --mend;
    if (mend - mbegin < 3) {
      mbegin = 0;
      mend = lr.track.frame_count();
    }
    TimeSeries2 pos;
    pos.t.assign(lr.track.t.begin() + mbegin, lr.track.t.begin() + mend);
    pos.p.assign(lr.track.position.begin() + mbegin, lr.track.position.begin() + mend);
    const std::vector<double> taps = design_lowpass_fir(25, 1.5, fps);
    const TimeSeries2 smoothed = smooth_fir(pos, taps);
    const TimeSeries measured = velocity(smoothed);
    lr.speed.t = lr.track.t;
    lr.speed.v.assign(lr.track.t.size(), 0.0);
    for (int f = mbegin; f < mend; ++f) lr.speed.v[f] = measured.v[f - mbegin];
    const auto hold_speed = [&](int from, int to) {
      const double dt = lr.track.t[to] - lr.track.t[from];
      const double dx = lr.track.position[to].x - lr.track.position[from].x;
      const double dy = lr.track.position[to].y - lr.track.position[from].y;
      return dt > 0.0 ? std::hypot(dx, dy) / dt : 0.0;
    };
    if (mbegin > 0) {
      const double v0 = hold_speed(0, mbegin);
      for (int f = 0; f < mbegin; ++f) lr.speed.v[f] = v0;
    }
    if (mend < lr.track.frame_count()) {
      const double v1 = hold_speed(mend - 1, lr.track.frame_count() - 1);
      for (int f = mend; f < lr.track.frame_count(); ++f) lr.speed.v[f] = v1;
    }
    TimeSeries x_along;
    x_along.t = measured.t;
    x_along.v.reserve(smoothed.p.size());
    for (const WorldPoint& p : smoothed.p) x_along.v.push_back(p.x);
    try {
      lr.velocity_profile = segment_profile(measured, x_along, spec);
    } catch (const Error& e) {
      result.notes.push_back("lane " + lane_key(lane) +
                             " velocity profile unavailable: " + e.what());
    }

    // stroke rate from the lead detected athlete
    try {
      const std::vector<int> sel = select_athlete(pre.seats);
      MotionSignal sig;
      if (opt.stroke_source == MotionSource::PoseDistance) {
        std::vector<std::optional<PoseKeypoints>> kps(frames);
        std::vector<double> widths(frames, 0.0);
        for (int f = 0; f < frames; ++f) {
          if (sel[f] < 1 || !seat_dets[f][sel[f] - 1]) continue;
          const Detection& d = *seat_dets[f][sel[f] - 1];
          if (!d.keypoints) continue;
          kps[f] = d.keypoints;
          widths[f] = d.width;
        }
        sig = motion_signal_pose(t_axis, kps, widths);
      } else {
        if (!rasters)
          throw Error(ErrorCode::MissingRaster, "brightness stroke source requires rasters");
        std::vector<std::optional<Detection>> boxes(frames);
        for (int f = 0; f < frames; ++f) {
          if (sel[f] >= 1) boxes[f] = seat_dets[f][sel[f] - 1];
        }
        sig = motion_signal_bbox(t_axis, boxes, *rasters, 0);
      }
      lr.peaks = detect_and_merge_peaks(sig, cls.discipline);
      lr.rate = rate_from_peaks(lr.peaks, fps);
      // Profile rate only where the boat position is measured; extrapolated
      // boundary positions would bin the rate at fabricated distances.
      TimeSeries rate_measured;
      for (std::size_t i = 0; i < lr.rate.size(); ++i) {
        if (lr.rate.t[i] < lr.track.t[mbegin] || lr.rate.t[i] > lr.track.t[mend - 1]) continue;
        rate_measured.t.push_back(lr.rate.t[i]);
        rate_measured.v.push_back(lr.rate.v[i]);
      }
      lr.stroke_profile = stroke_profile(rate_measured, lr.track, spec);
      lr.stroke_valid = true;
    } catch (const Error& e) {
      lr.stroke_valid = false;
      lr.stroke_note = e.what();
    }

    result.lanes.emplace(lane, std::move(lr));
  }

  if (result.lanes.empty())
    throw Error(ErrorCode::NoCompleteFrames, "no lane could be reconstructed");
  return result;
}

void write_pipeline_outputs(const PipelineResult& result,
                            const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  nlohmann::json report;
  report["fps"] = result.fps;
  report["width"] = result.width;
  report["height"] = result.height;
  report["frames"] = result.homographies.frame_count();
  report["anchor_frame"] = result.homographies.anchor_frame;
  int flagged = 0;
  for (int f = 0; f < result.homographies.frame_count(); ++f)
    flagged += result.homographies.flagged(f) ? 1 : 0;
  report["flagged_frames"] = flagged;
  report["notes"] = result.notes;

  nlohmann::json lanes = nlohmann::json::object();
  for (const auto& [lane, lr] : result.lanes) {
    const std::string key = lane_key(lane);
    write_profile_csv(lr.velocity_profile, dir / ("velocity_lane" + key + ".csv"),
                      "velocity_mps");
    SvgChart vchart;
    vchart.title = "Lane " + key + " velocity";
    vchart.x_label = "segment center (m)";
    vchart.y_label = "velocity (m/s)";
    SvgSeries vs;
    for (std::size_t i = 0; i < lr.velocity_profile.size(); ++i) {
      if (!lr.velocity_profile.present[i]) continue;
      vs.x.push_back(lr.velocity_profile.center_m[i]);
      vs.y.push_back(lr.velocity_profile.value[i]);
    }
    vchart.series.push_back(std::move(vs));
    write_svg_chart(vchart, dir / ("velocity_lane" + key + ".svg"));

    if (lr.stroke_valid) {
      write_profile_csv(lr.stroke_profile, dir / ("stroke_lane" + key + ".csv"), "stroke_rate_spm");
      SvgChart schart;
      schart.title = "Lane " + key + " stroke rate";
      schart.x_label = "segment center (m)";
      schart.y_label = "stroke rate (spm)";
      SvgSeries ss;
      ss.color = "#d62728";
      for (std::size_t i = 0; i < lr.stroke_profile.size(); ++i) {
        if (!lr.stroke_profile.present[i]) continue;
        ss.x.push_back(lr.stroke_profile.center_m[i]);
        ss.y.push_back(lr.stroke_profile.value[i]);
      }
      schart.series.push_back(std::move(ss));
      write_svg_chart(schart, dir / ("stroke_lane" + key + ".svg"));
    }

    nlohmann::json lj;
    lj["class"] = lr.boat_class.name;
    lj["complete_frames"] = lr.complete_frames;
    lj["calibration_from_default"] = lr.calibration.from_default;
    nlohmann::json offs = nlohmann::json::array();
    for (const WorldVec& o : lr.calibration.offsets)
      offs.push_back(std::vector<double>{o.x, o.y});
    lj["offsets"] = offs;
    lj["stroke_valid"] = lr.stroke_valid;
    if (!lr.stroke_note.empty()) lj["stroke_note"] = lr.stroke_note;
    lj["peak_count"] = static_cast<int>(lr.peaks.t.size());
    lj["merged_peaks"] = lr.peaks.merged_count;
    lanes[key] = std::move(lj);
  }
  report["lanes"] = std::move(lanes);

  std::ofstream out(dir / "report.json", std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write report.json");
  out << report.dump(2) << "\n";
}

}  // namespace regatta
