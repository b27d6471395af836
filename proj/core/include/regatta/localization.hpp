#pragma once

#include <optional>
#include <string>
#include <vector>

#include "regatta/course.hpp"
#include "regatta/detections.hpp"
#include "regatta/geometry.hpp"
#include "regatta/tracking.hpp"

namespace regatta {

enum class ObservationSource { Detected, FlowPredicted, Interpolated };

enum class Discipline { Kayak, Canoe };

// Boat class fixes crew size, discipline (peak-merge tolerance), and the
// default tip offset used to seed the tip search before calibration.
struct BoatClass {
  std::string name = "K1";
  int athletes = 1;
  WorldVec default_offset{2.4, 0.0};
  Discipline discipline = Discipline::Kayak;

  static BoatClass from_name(const std::string& name);  // K1 C1 K2 C2 K4
};

struct AthleteObservation {
  PixelPoint image_pos;
  WorldPoint world_pos;
  LaneId lane{1};
  int seat = 0;  // 1..N along travel direction, 0 = unknown
  ObservationSource source = ObservationSource::Detected;
};

// Per-seat world vectors from athlete anchor point to the boat tip.
struct OffsetCalibration {
  std::vector<WorldVec> offsets;     // index 0 = seat 1
  std::vector<int> source_frames;    // the five frames averaged over
  std::vector<WorldPoint> tips;      // tip world positions in those frames
  bool from_default = false;         // true when no tip observations existed

  int seat_count() const { return static_cast<int>(offsets.size()); }
};

struct ImageRect {
  int left = 0;
  int top = 0;
  int width = 0;
  int height = 0;
};

// Centre of the bbox bottom edge. Throws WrongClass on buoys.
PixelPoint athlete_image_position(const Detection& d);

// Class default offset added to the mean athlete world position. Requires
// exactly N positions; throws WrongCount.
WorldPoint initial_tip_estimate(const std::vector<WorldPoint>& athletes,
                                const BoatClass& cls);

// size x size rectangle centred on the reprojected estimate, shifted to
// stay inside the raster. Throws OutOfFrame when the centre projects
// outside the raster.
ImageRect tip_roi(const Homography& world_to_image, WorldPoint estimate, int raster_width,
                  int raster_height, int size = 150);

struct CalibrationFrame {
  int frame_index = -1;
  std::vector<WorldPoint> seats;        // size N, seat order
  std::optional<WorldPoint> tip;        // world tip observation
};

// Per-seat offset = tip - seat position, averaged over exactly five
// complete frames. Throws IncompleteFrame / MissingTip.
OffsetCalibration calibrate_offsets(const std::vector<CalibrationFrame>& frames,
                                    const BoatClass& cls);

// Fallback when the stream carries no tip observations: the class default
// offset is applied to the seat centroid, and per-seat offsets are derived
// from the seats' mean geometry over the given frames.
OffsetCalibration calibrate_offsets_from_default(const std::vector<CalibrationFrame>& frames,
                                                 const BoatClass& cls);

// Mean over the provided seats of seat position + calibrated offset. With
// all N seats this is the full boat model; with a subset it is the relaxed
// estimate used when detections are missing. Throws UnknownSeat.
WorldPoint boat_position(const std::vector<AthleteObservation>& athletes,
                         const OffsetCalibration& cal);

// Seat-indexed matching: predicted[k] is seat k+1's flow-predicted image
// point (absent seats excluded via nullopt). Each detection is used at most
// once; unmatched seats come back nullopt, unmatched detections are
// dropped. Returns per-seat matched detection index (-1 when unmatched).
std::vector<int> order_athletes(const std::vector<std::optional<PixelPoint>>& predicted,
                                const std::vector<PixelPoint>& detections, double radius_px);

struct SeatSample {
  bool present = false;
  PixelPoint image{};
  WorldPoint world{};
  ObservationSource source = ObservationSource::Detected;
  int gap_frames = 0;  // distance to the detection this estimate stems from
};

struct BoatTrack {
  LaneId lane{1};
  BoatClass boat_class;
  double fps = 25.0;
  int first_frame = 0;  // global frame index of entry 0

  std::vector<double> t;
  std::vector<WorldPoint> position;
  std::vector<bool> has_position;
  std::vector<bool> complete;      // all N seats detected this frame
  std::vector<bool> extrapolated;  // filled outside the observed span
  std::vector<ObservationSource> position_source;
  std::vector<std::vector<SeatSample>> seats;  // [frame][seat index 0..N-1]

  int frame_count() const { return static_cast<int>(t.size()); }
  void resize_frames(int n);
};

enum class FillMode { Linear, FlowCausal, FlowNoncausal };

// Which frames contribute direct boat positions before gap filling:
// complete frames only (the strict model) or every frame with at least one
// seat estimate (the relaxed model used by the ordering and flow methods).
enum class PositionPolicy { Default, CompleteOnly, AvailableSeats };

// Completes a gappy track. Linear interpolates positions between
// positioned frames; the flow modes first fill missing seats by tracking
// their image points through the rasters (forward, or forward + backward
// merged by inverse gap distance), then apply the boat model per frame, and
// interpolate whatever frames still lack seats. Boundary frames outside the
// positioned span extend the nearest positioned segment's velocity and are
// flagged extrapolated. Default policy: CompleteOnly for Linear,
// AvailableSeats for the flow modes.
// Throws NoCompleteFrames when no frame qualifies under the policy;
// MissingRaster when a flow mode is invoked without rasters.
BoatTrack fill_track(const BoatTrack& track, FillMode mode, const OffsetCalibration& cal,
                     RasterProvider* rasters, const HomographySequence* hseq,
                     const LucasKanadeParams& lk = {},
                     PositionPolicy policy = PositionPolicy::Default);

}  // namespace regatta
