#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "regatta/course.hpp"

namespace regatta {

struct PixelPoint {
  double u = 0.0;
  double v = 0.0;
};

// 3x3 projective map between the water plane and the image plane.
// Estimation stores the world->image direction; invert() gives image->world.
// The matrix is kept normalized so m(2,2) == 1 whenever that entry is nonzero.
struct Homography {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  int frame_index = -1;

  static Homography from_matrix(const Eigen::Matrix3d& m, int frame_index = -1);
};

struct Correspondence {
  PixelPoint image;
  WorldPoint world;
};

struct FitReport {
  std::vector<bool> inlier_mask;
  double rms_reprojection_px = 0.0;
  int iterations = 0;

  int inlier_count() const {
    int n = 0;
    for (bool b : inlier_mask) n += b ? 1 : 0;
    return n;
  }
};

struct RansacParams {
  double threshold_px = 3.0;
  int max_iters = 2000;
  std::uint64_t seed = 0;
};

// Direct linear transform on >= 4 correspondences, Hartley-normalized.
// Returns the world->image homography. Throws DegenerateConfiguration when
// the design matrix is rank-deficient (e.g. collinear points).
Homography estimate_dlt(const std::vector<Correspondence>& corrs);

// Robust fit: maximize the inlier count under the reprojection threshold,
// then refit with estimate_dlt on all inliers. Deterministic per seed.
// Throws InsufficientInliers when the best consensus set is smaller than 4.
std::pair<Homography, FitReport> estimate_ransac(const std::vector<Correspondence>& corrs,
                                                 const RansacParams& params = {});

// Projective application of h.m to a pixel point: callers pass an
// image->world homography to land in world metres. Throws PointAtInfinity
// when the homogeneous scale vanishes at p.
WorldPoint apply(const Homography& h, PixelPoint p);

// Same map in the world->image direction.
PixelPoint project(const Homography& h, WorldPoint p);

Homography invert(const Homography& h);  // throws SingularMatrix

double reprojection_error_px(const Homography& world_to_image, const Correspondence& c);

}  // namespace regatta
