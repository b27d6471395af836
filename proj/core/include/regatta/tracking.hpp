#pragma once

#include <vector>

#include "regatta/course.hpp"
#include "regatta/geometry.hpp"
#include "regatta/raster.hpp"

namespace regatta {

struct FlowVector {
  PixelPoint origin;
  PixelPoint delta;
  bool valid = false;
};

struct LucasKanadeParams {
  int pyramid_levels = 3;
  int window_radius = 10;  // 21x21 window
  int max_iterations = 30;
  double epsilon_px = 0.01;
  double min_eigenvalue = 1e-4;
  double max_displacement_px = 64.0;
};

// Coarse-to-fine image stack. Level 0 is the input; each level above is
// binomially smoothed and subsampled by 2.
struct Pyramid {
  std::vector<Raster> levels;
};

Pyramid build_pyramid(const Raster& raster, int levels);

// Sparse iterative Lucas-Kanade. A point comes back valid=false when the
// iteration diverges, the window leaves the raster, or the local gradient
// matrix is ill-conditioned. Throws DimensionMismatch on unequal rasters.
std::vector<FlowVector> track_points(const Raster& prev, const Raster& next,
                                     const std::vector<PixelPoint>& points,
                                     const LucasKanadeParams& params = {});

// Same, reusing prebuilt pyramids (sequential callers keep the previous
// frame's pyramid instead of rebuilding it).
std::vector<FlowVector> track_points(const Pyramid& prev, const Pyramid& next,
                                     const std::vector<PixelPoint>& points,
                                     const LucasKanadeParams& params = {});

// As above, but each point's iteration starts from a caller-supplied
// displacement, and max_displacement_px bounds the change from that start
// rather than the total. Lets a caller track against a fixed reference frame
// across many steps — the reference appearance cannot drift — while still
// rejecting per-step jumps.
std::vector<FlowVector> track_points_from(const Pyramid& reference, const Pyramid& next,
                                          const std::vector<PixelPoint>& points,
                                          const std::vector<PixelPoint>& initial_deltas,
                                          const LucasKanadeParams& params = {});

// Greedy closest-pair-first matching of predictions to detections within
// radius; each detection is used at most once. matched_detection[i] is the
// detection index for prediction i, or -1 when unmatched. snapped[i] is the
// matched detection center, or the raw prediction as fallback.
struct SnapResult {
  std::vector<int> matched_detection;
  std::vector<PixelPoint> snapped;

  int matched_count() const {
    int n = 0;
    for (int d : matched_detection) n += d >= 0 ? 1 : 0;
    return n;
  }
};

SnapResult snap_to_detections(const std::vector<PixelPoint>& predicted,
                              const std::vector<PixelPoint>& detections, double radius_px);

// How each frame's homography was obtained. Fit frames were constrained by
// at least one snapped detection; FlowOnly frames were refit purely from
// flow-tracked points; Inherited frames copy the nearest successful fit.
enum class FrameStatus { Fit, FlowOnly, Inherited };

struct HomographySequence {
  std::vector<Homography> world_to_image;
  std::vector<FitReport> reports;
  std::vector<std::vector<Correspondence>> correspondences;
  std::vector<FrameStatus> status;
  int anchor_frame = 0;

  int frame_count() const { return static_cast<int>(world_to_image.size()); }
  bool flagged(int frame) const { return status.at(frame) != FrameStatus::Fit; }
};

struct PropagateParams {
  LucasKanadeParams lk;
  RansacParams ransac;
  double snap_radius_px = 8.0;
  // Claim radius when matching projected course buoys to detections; wider
  // than the snap radius because it must absorb projection error of the
  // current fit, not just one frame of drift.
  double acquire_radius_px = 12.0;
  // A refit only counts with this much support; smaller sets fit trivially.
  int min_refit_inliers = 6;
  // A refit's inliers must also span this many distinct buoy rows: points on
  // two parallel course lines leave a projective mapping under-determined
  // along the course axis, so such a fit cannot be trusted off the buoy band.
  int min_support_rows = 3;
  // Below this state size the frame is re-matched from scratch against the
  // projected course grid, discarding tracked identities.
  int rescue_floor = 12;
  // Correspondences are re-acquired by projecting course buoys and claiming
  // detections within the acquire radius; projections closer than this
  // margin to the border are skipped so the flow window stays inside the
  // raster.
  double acquire_margin_px = 40.0;
};

// Fit the anchor frame from user-supplied correspondences, then walk the
// sequence in both directions: track the buoy points with optical flow,
// snap to that frame's buoy detections, refit robustly, and top the set up
// with newly visible course buoys. A walk whose point set runs low is
// re-matched against the projected course grid before a starved fit can
// lock in. Frames whose refit fails inherit the nearest successful
// homography and are flagged.
// buoy_centers_per_frame[i] holds the buoy detection centers of frame i.
// Throws AnchorFitFailed when the anchor correspondences do not fit.
HomographySequence propagate(RasterProvider& frames, int anchor_frame,
                             const std::vector<Correspondence>& anchor_corrs,
                             const CourseSpec& spec,
                             const std::vector<std::vector<PixelPoint>>& buoy_centers_per_frame,
                             const PropagateParams& params = {});

// Raster-free variant for streams without imagery: each frame's predictions
// are the previous frame's buoy points, so the carrier is the detection
// sequence itself. Valid while inter-frame buoy motion stays within the
// snap radius; frames where fewer than 4 buoys re-associate inherit.
HomographySequence propagate_by_detections(
    int frame_count, int width, int height, int anchor_frame,
    const std::vector<Correspondence>& anchor_corrs, const CourseSpec& spec,
    const std::vector<std::vector<PixelPoint>>& buoy_centers_per_frame,
    const PropagateParams& params = {});

}  // namespace regatta
