#include "regatta/localization.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>

#include "regatta/errors.hpp"

namespace regatta {

namespace {
constexpr int kMaxCarrierGapFrames = 250;
}

BoatClass BoatClass::from_name(const std::string& name) {
  BoatClass c;
  c.name = name;
  if (name == "K1") {
    c.athletes = 1;
    c.default_offset = {2.4, 0.0};
    c.discipline = Discipline::Kayak;
  } else if (name == "C1") {
    c.athletes = 1;
    c.default_offset = {2.4, 0.0};
    c.discipline = Discipline::Canoe;
  } else if (name == "K2") {
    c.athletes = 2;
    c.default_offset = {3.0, 0.0};
    c.discipline = Discipline::Kayak;
  } else if (name == "C2") {
    c.athletes = 2;
    c.default_offset = {3.0, 0.0};
    c.discipline = Discipline::Canoe;
  } else if (name == "K4") {
    c.athletes = 4;
    c.default_offset = {4.0, 0.0};
    c.discipline = Discipline::Kayak;
  } else {
    throw Error(ErrorCode::ParseError, "unknown boat class '" + name + "'");
  }
  return c;
}

PixelPoint athlete_image_position(const Detection& d) {
  if (d.cls != DetectionClass::Athlete) {
    throw Error(ErrorCode::WrongClass, "athlete anchor point requested for a buoy box");
  }
  return d.bottom_center();
}

WorldPoint initial_tip_estimate(const std::vector<WorldPoint>& athletes,
                                const BoatClass& cls) {
  if (static_cast<int>(athletes.size()) != cls.athletes) {
    throw Error(ErrorCode::WrongCount,
                cls.name + " needs " + std::to_string(cls.athletes) +
                    " athlete positions, got " + std::to_string(athletes.size()));
  }
  double mx = 0.0, my = 0.0;
  for (const WorldPoint& a : athletes) {
    mx += a.x;
    my += a.y;
  }
  mx /= athletes.size();
  my /= athletes.size();
  return {mx + cls.default_offset.x, my + cls.default_offset.y};
}

ImageRect tip_roi(const Homography& world_to_image, WorldPoint estimate, int raster_width,
                  int raster_height, int size) {
  const PixelPoint c = project(world_to_image, estimate);
  if (c.u < 0.0 || c.v < 0.0 || c.u >= raster_width || c.v >= raster_height) {
    throw Error(ErrorCode::OutOfFrame, "tip estimate reprojects outside the raster");
  }
  ImageRect rect;
  rect.width = std::min(size, raster_width);
  rect.height = std::min(size, raster_height);
  rect.left = static_cast<int>(std::lround(c.u)) - size / 2;
  rect.top = static_cast<int>(std::lround(c.v)) - size / 2;
  rect.left = std::clamp(rect.left, 0, raster_width - rect.width);
  rect.top = std::clamp(rect.top, 0, raster_height - rect.height);
  return rect;
}

namespace {

void check_calibration_frames(const std::vector<CalibrationFrame>& frames,
                              const BoatClass& cls, bool require_five) {
  if (require_five && frames.size() != 5) {
    throw Error(ErrorCode::IncompleteFrame,
                "offset calibration averages exactly 5 complete frames, got " +
                    std::to_string(frames.size()));
  }
  if (frames.empty()) {
    throw Error(ErrorCode::IncompleteFrame, "offset calibration needs complete frames");
  }
  for (const CalibrationFrame& f : frames) {
    if (static_cast<int>(f.seats.size()) != cls.athletes) {
      throw Error(ErrorCode::IncompleteFrame,
                  "frame " + std::to_string(f.frame_index) + " has " +
                      std::to_string(f.seats.size()) + " seats, expected " +
                      std::to_string(cls.athletes));
    }
  }
}

}  // namespace

OffsetCalibration calibrate_offsets(const std::vector<CalibrationFrame>& frames,
                                    const BoatClass& cls) {
  check_calibration_frames(frames, cls, true);
  OffsetCalibration cal;
  cal.offsets.assign(cls.athletes, WorldVec{0.0, 0.0});
  for (const CalibrationFrame& f : frames) {
    if (!f.tip) {
      throw Error(ErrorCode::MissingTip,
                  "frame " + std::to_string(f.frame_index) + " has no tip observation");
    }
    cal.source_frames.push_back(f.frame_index);
    cal.tips.push_back(*f.tip);
    for (int k = 0; k < cls.athletes; ++k) {
      cal.offsets[k].x += f.tip->x - f.seats[k].x;
      cal.offsets[k].y += f.tip->y - f.seats[k].y;
    }
  }
  for (WorldVec& o : cal.offsets) {
    o.x /= frames.size();
    o.y /= frames.size();
  }
  return cal;
}

OffsetCalibration calibrate_offsets_from_default(const std::vector<CalibrationFrame>& frames,
                                                 const BoatClass& cls) {
  check_calibration_frames(frames, cls, false);
  OffsetCalibration cal;
  cal.from_default = true;
  cal.offsets.assign(cls.athletes, WorldVec{0.0, 0.0});
  for (const CalibrationFrame& f : frames) {
    double cx = 0.0, cy = 0.0;
    for (const WorldPoint& s : f.seats) {
      cx += s.x;
      cy += s.y;
    }
    cx /= f.seats.size();
    cy /= f.seats.size();
    const WorldPoint tip{cx + cls.default_offset.x, cy + cls.default_offset.y};
    cal.source_frames.push_back(f.frame_index);
    cal.tips.push_back(tip);
    for (int k = 0; k < cls.athletes; ++k) {
      cal.offsets[k].x += tip.x - f.seats[k].x;
      cal.offsets[k].y += tip.y - f.seats[k].y;
    }
  }
  for (WorldVec& o : cal.offsets) {
    o.x /= frames.size();
    o.y /= frames.size();
  }
  return cal;
}

WorldPoint boat_position(const std::vector<AthleteObservation>& athletes,
                         const OffsetCalibration& cal) {
  if (athletes.empty()) {
    throw Error(ErrorCode::WrongCount, "boat position needs at least one athlete");
  }
  double mx = 0.0, my = 0.0;
  for (const AthleteObservation& a : athletes) {
    if (a.seat < 1 || a.seat > cal.seat_count()) {
      throw Error(ErrorCode::UnknownSeat,
                  "seat " + std::to_string(a.seat) + " outside calibrated range [1, " +
                      std::to_string(cal.seat_count()) + "]");
    }
    mx += a.world_pos.x + cal.offsets[a.seat - 1].x;
    my += a.world_pos.y + cal.offsets[a.seat - 1].y;
  }
  return {mx / athletes.size(), my / athletes.size()};
}

std::vector<int> order_athletes(const std::vector<std::optional<PixelPoint>>& predicted,
                                const std::vector<PixelPoint>& detections,
                                double radius_px) {
  std::vector<PixelPoint> pts;
  std::vector<std::size_t> seat_of;
  for (std::size_t k = 0; k < predicted.size(); ++k) {
    if (predicted[k]) {
      pts.push_back(*predicted[k]);
      seat_of.push_back(k);
    }
  }
  const SnapResult snap = snap_to_detections(pts, detections, radius_px);
  std::vector<int> out(predicted.size(), -1);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out[seat_of[i]] = snap.matched_detection[i];
  }
  return out;
}

void BoatTrack::resize_frames(int n) {
  t.assign(n, 0.0);
  position.assign(n, WorldPoint{});
  has_position.assign(n, false);
  complete.assign(n, false);
  extrapolated.assign(n, false);
  position_source.assign(n, ObservationSource::Detected);
  seats.assign(n, std::vector<SeatSample>(boat_class.athletes));
}

namespace {

bool detected(const SeatSample& s) {
  return s.present && s.source == ObservationSource::Detected;
}

// One directional seat-filling pass: carries each seat's image point through
// frames where it was not detected. Every frame re-locates the point against
// its SEED frame's appearance, starting from the previous estimate, so
// per-frame errors cannot compound into a drifting walk and passing clutter
// cannot keep a capture — the point must go on matching the seed patch.
std::vector<std::vector<std::optional<SeatSample>>> flow_fill_pass(
    const BoatTrack& track, int dir, RasterProvider& rasters,
    const LucasKanadeParams& lk) {
  const int n = track.frame_count();
  const int seat_count = track.boat_class.athletes;
  std::vector<std::vector<std::optional<SeatSample>>> out(
      n, std::vector<std::optional<SeatSample>>(seat_count));

  struct Carrier {
    bool active = false;
    PixelPoint seed{};   // anchor point in the seed frame
    PixelPoint p{};      // current estimate of the same point
    int seed_frame = 0;  // global index of the seeding detection's frame
    int gap = 0;
  };
  std::vector<Carrier> carriers(seat_count);
  std::map<int, Pyramid> seed_pyrs;

  const auto seed_pyramid = [&](int global) -> const Pyramid& {
    auto it = seed_pyrs.find(global);
    if (it == seed_pyrs.end()) {
      it = seed_pyrs
               .emplace(global, build_pyramid(*rasters.frame(global), lk.pyramid_levels))
               .first;
    }
    return it->second;
  };

  const int start = dir > 0 ? 0 : n - 1;
  for (int i = start; i >= 0 && i < n; i += dir) {
    const int global = track.first_frame + i;

    bool any_active = false;
    for (const Carrier& c : carriers) any_active |= c.active;

    if (any_active) {
      const Pyramid cur = build_pyramid(*rasters.frame(global), lk.pyramid_levels);
      for (int k = 0; k < seat_count; ++k) {
        Carrier& c = carriers[k];
        if (!c.active) continue;
        const std::vector<FlowVector> flow =
            track_points_from(seed_pyramid(c.seed_frame), cur, {c.seed},
                              {{c.p.u - c.seed.u, c.p.v - c.seed.v}}, lk);
        if (!flow[0].valid) {
          c.active = false;
          continue;
        }
        c.p = {c.seed.u + flow[0].delta.u, c.seed.v + flow[0].delta.v};
        c.gap += 1;
        if (c.gap > kMaxCarrierGapFrames) c.active = false;
      }
    }

    for (int k = 0; k < seat_count; ++k) {
      if (!detected(track.seats[i][k]) && carriers[k].active) {
        SeatSample s;
        s.present = true;
        s.image = carriers[k].p;
        s.source = ObservationSource::FlowPredicted;
        s.gap_frames = carriers[k].gap;
        out[i][k] = s;
      }
    }

    for (int k = 0; k < seat_count; ++k) {
      if (detected(track.seats[i][k])) {
        const PixelPoint a = track.seats[i][k].image;
        carriers[k] = {true, a, a, global, 0};
      }
    }
    // Only pyramids still referenced by a live carrier are kept.
    std::erase_if(seed_pyrs, [&](const auto& e) {
      for (const Carrier& c : carriers) {
        if (c.active && c.seed_frame == e.first) return false;
      }
      return true;
    });
  }
  return out;
}

WorldPoint image_to_world(const Homography& inv, PixelPoint p) { return apply(inv, p); }

}  // namespace

BoatTrack fill_track(const BoatTrack& input, FillMode mode, const OffsetCalibration& cal,
                     RasterProvider* rasters, const HomographySequence* hseq,
                     const LucasKanadeParams& lk, PositionPolicy policy) {
  BoatTrack track = input;
  const int n = track.frame_count();
  const int seat_count = track.boat_class.athletes;
  if (policy == PositionPolicy::Default) {
    policy = mode == FillMode::Linear ? PositionPolicy::CompleteOnly
                                      : PositionPolicy::AvailableSeats;
  }

  if (mode != FillMode::Linear) {
    if (rasters == nullptr || hseq == nullptr) {
      throw Error(ErrorCode::MissingRaster, "flow fill needs rasters and homographies");
    }
    std::vector<Homography> inverted(n);
    std::vector<bool> have_inverted(n, false);
    const auto inv_of = [&](int i) -> const Homography& {
      if (!have_inverted[i]) {
        inverted[i] = invert(hseq->world_to_image.at(track.first_frame + i));
        have_inverted[i] = true;
      }
      return inverted[i];
    };

    auto fw = flow_fill_pass(track, +1, *rasters, lk);
    std::vector<std::vector<std::optional<SeatSample>>> bw;
    if (mode == FillMode::FlowNoncausal) {
      bw = flow_fill_pass(track, -1, *rasters, lk);
    }

    // A carried point that stops moving in world coordinates has latched onto
    // station-keeping structure near the hull — a buoy or water texture — not
    // the boat: no boat is near-stationary inside the race window. Truncate
    // the carried run from the first frame its windowed world speed collapses.
    const auto gate_runs = [&](std::vector<std::vector<std::optional<SeatSample>>>& pass,
                               int dir) {
      constexpr double kMinCarrySpeed = 1.0;  // m/s
      constexpr double kSpeedWindowSec = 0.5;
      constexpr int kMinCheckpoints = 6;
      for (int k = 0; k < seat_count; ++k) {
        std::deque<std::pair<double, WorldPoint>> hist;
        bool killing = false;
        const int start = dir > 0 ? 0 : n - 1;
        for (int i = start; i >= 0 && i < n; i += dir) {
          std::optional<SeatSample>& cell = pass[i][k];
          if (!cell) {
            hist.clear();
            killing = false;
            continue;
          }
          if (killing) {
            cell.reset();
            continue;
          }
          if (hseq->status.at(track.first_frame + i) == FrameStatus::Inherited) continue;
          const WorldPoint wp = image_to_world(inv_of(i), cell->image);
          const double t = track.t[i];
          hist.emplace_back(t, wp);
          while (std::abs(t - hist.front().first) > kSpeedWindowSec) hist.pop_front();
          if (static_cast<int>(hist.size()) >= kMinCheckpoints) {
            const double dt = std::abs(t - hist.front().first);
            const double d = std::hypot(wp.x - hist.front().second.x,
                                        wp.y - hist.front().second.y);
            if (dt > 0.0 && d / dt < kMinCarrySpeed) {
              killing = true;
              cell.reset();
            }
          }
        }
      }
    };
    gate_runs(fw, +1);
    if (mode == FillMode::FlowNoncausal) gate_runs(bw, -1);

    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < seat_count; ++k) {
        if (detected(track.seats[i][k])) continue;
        std::optional<SeatSample> pick;
        if (mode == FillMode::FlowCausal) {
          pick = fw[i][k];
        } else {
          const auto& f = fw[i][k];
          const auto& b = bw[i][k];
          if (f && b) {
            // Both directions supply an estimate: weight by inverse gap
            // distance so the nearer detection dominates.
            const double wf = 1.0 / f->gap_frames;
            const double wb = 1.0 / b->gap_frames;
            SeatSample s = *f;
            s.image = {(wf * f->image.u + wb * b->image.u) / (wf + wb),
                       (wf * f->image.v + wb * b->image.v) / (wf + wb)};
            s.gap_frames = std::min(f->gap_frames, b->gap_frames);
            pick = s;
          } else if (f) {
            pick = f;
          } else if (b) {
            pick = b;
          }
        }
        if (pick) {
          // Inherited homographies are stale copies; image estimates on such
          // frames have no trusted world mapping and stay gaps.
          if (hseq->status.at(track.first_frame + i) == FrameStatus::Inherited) continue;
          pick->world = image_to_world(inv_of(i), pick->image);
          track.seats[i][k] = *pick;
        }
      }
    }
  }

  // Direct boat positions from seat evidence. Frames without any seat data
  // keep whatever position the caller supplied.
  for (int i = 0; i < n; ++i) {
    std::vector<AthleteObservation> obs;
    bool all_detected = seat_count > 0;
    for (int k = 0; k < seat_count; ++k) {
      const SeatSample& s = track.seats[i][k];
      if (!s.present) {
        all_detected = false;
        continue;
      }
      all_detected &= s.source == ObservationSource::Detected;
      AthleteObservation a;
      a.image_pos = s.image;
      a.world_pos = s.world;
      a.lane = track.lane;
      a.seat = k + 1;
      a.source = s.source;
      obs.push_back(a);
    }
    if (obs.empty()) continue;
    track.complete[i] = all_detected && static_cast<int>(obs.size()) == seat_count;
    const bool eligible = policy == PositionPolicy::CompleteOnly
                              ? track.complete[i]
                              : !obs.empty();
    if (eligible) {
      track.position[i] = boat_position(obs, cal);
      track.has_position[i] = true;
      bool any_detected = false;
      for (const AthleteObservation& a : obs) {
        any_detected |= a.source == ObservationSource::Detected;
      }
      track.position_source[i] = any_detected ? ObservationSource::Detected
                                              : ObservationSource::FlowPredicted;
    } else {
      track.has_position[i] = false;
    }
  }

  std::vector<int> positioned;
  for (int i = 0; i < n; ++i) {
    if (track.has_position[i]) positioned.push_back(i);
  }
  if (positioned.empty()) {
    throw Error(ErrorCode::NoCompleteFrames,
                "no frame provides a boat position under the requested policy");
  }

  // Interior gaps: straight line between the bracketing positioned frames.
  for (std::size_t g = 0; g + 1 < positioned.size(); ++g) {
    const int l = positioned[g];
    const int m = positioned[g + 1];
    for (int i = l + 1; i < m; ++i) {
      const double w = (track.t[i] - track.t[l]) / (track.t[m] - track.t[l]);
      track.position[i] = {track.position[l].x + w * (track.position[m].x - track.position[l].x),
                           track.position[l].y + w * (track.position[m].y - track.position[l].y)};
      track.has_position[i] = true;
      track.position_source[i] = ObservationSource::Interpolated;
    }
  }

  // Boundary frames: extend the nearest positioned segment's velocity.
  // The slope is fit over a batch of positioned frames; a single adjacent
  // pair would amplify detection jitter by 1/dt, and a fixed short window
  // can catch only the systematic wobble right at the coverage boundary.
  const int first = positioned.front();
  const int last = positioned.back();
  constexpr int kSlopeMinSamples = 12;
  constexpr double kSlopeWindowCapSec = 3.0;
  const auto slope_at = [&](bool head) -> WorldVec {
    const double t0 = head ? track.t[first] : track.t[last];
    double st = 0.0, sx = 0.0, sy = 0.0, stt = 0.0, stx = 0.0, sty = 0.0;
    int m = 0;
    const int psz = static_cast<int>(positioned.size());
    for (int idx = 0; idx < psz && m < kSlopeMinSamples; ++idx) {
      const int f = positioned[head ? idx : psz - 1 - idx];
      const double t = track.t[f] - t0;
      if (std::abs(t) > kSlopeWindowCapSec) break;
      st += t;
      sx += track.position[f].x;
      sy += track.position[f].y;
      stt += t * t;
      stx += t * track.position[f].x;
      sty += t * track.position[f].y;
      ++m;
    }
    const double det = m * stt - st * st;
    if (m < 2 || det <= 0.0) return {0.0, 0.0};
    return {(m * stx - st * sx) / det, (m * sty - st * sy) / det};
  };
  WorldVec v_head{0.0, 0.0}, v_tail{0.0, 0.0};
  if (positioned.size() >= 2) {
    v_head = slope_at(true);
    v_tail = slope_at(false);
  }
  for (int i = 0; i < first; ++i) {
    const double dt = track.t[i] - track.t[first];
    track.position[i] = {track.position[first].x + v_head.x * dt,
                         track.position[first].y + v_head.y * dt};
    track.has_position[i] = true;
    track.extrapolated[i] = true;
    track.position_source[i] = ObservationSource::Interpolated;
  }
  for (int i = last + 1; i < n; ++i) {
    const double dt = track.t[i] - track.t[last];
    track.position[i] = {track.position[last].x + v_tail.x * dt,
                         track.position[last].y + v_tail.y * dt};
    track.has_position[i] = true;
    track.extrapolated[i] = true;
    track.position_source[i] = ObservationSource::Interpolated;
  }
  return track;
}

}  // namespace regatta
