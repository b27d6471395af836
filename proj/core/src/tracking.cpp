#include "regatta/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <tuple>

#include "regatta/errors.hpp"

namespace regatta {
namespace {

float sample_clamped(const Raster& r, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(r.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(r.height - 1));
  const int x0 = std::min(static_cast<int>(x), r.width - 2 >= 0 ? r.width - 2 : 0);
  const int y0 = std::min(static_cast<int>(y), r.height - 2 >= 0 ? r.height - 2 : 0);
  const int x1 = std::min(x0 + 1, r.width - 1);
  const int y1 = std::min(y0 + 1, r.height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = r.at(x0, y0) * (1.0 - fx) + r.at(x1, y0) * fx;
  const double bot = r.at(x0, y1) * (1.0 - fx) + r.at(x1, y1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

// Separable binomial smoothing followed by 2x subsampling.
Raster downsample(const Raster& src) {
  static constexpr double kTaps[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  const int w = src.width, h = src.height;
  Raster tmp(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -2; k <= 2; ++k) {
        const int xx = std::clamp(x + k, 0, w - 1);
        acc += kTaps[k + 2] * src.at(xx, y);
      }
      tmp.at(x, y) = static_cast<float>(acc);
    }
  }
  const int ow = (w + 1) / 2, oh = (h + 1) / 2;
  Raster out(ow, oh, 0.0f, src.frame_index);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = -2; k <= 2; ++k) {
        const int yy = std::clamp(2 * y + k, 0, h - 1);
        acc += kTaps[k + 2] * tmp.at(2 * x, yy);
      }
      out.at(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

struct LevelResult {
  Eigen::Vector2d flow;
  bool ok = false;
};

// One Lucas-Kanade solve at a single pyramid level. `point` and `guess`
// are in this level's coordinates.
LevelResult solve_level(const Raster& prev, const Raster& next, Eigen::Vector2d point,
                        Eigen::Vector2d guess, const LucasKanadeParams& params) {
  const int r = params.window_radius;
  const int n_side = 2 * r + 1;
  const int n_pix = n_side * n_side;

  std::vector<float> patch(n_pix), gx(n_pix), gy(n_pix);
  double gxx = 0.0, gxy = 0.0, gyy = 0.0;
  int k = 0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx, ++k) {
      const double qx = point.x() + dx;
      const double qy = point.y() + dy;
      patch[k] = sample_clamped(prev, qx, qy);
      gx[k] = 0.5f * (sample_clamped(prev, qx + 1, qy) - sample_clamped(prev, qx - 1, qy));
      gy[k] = 0.5f * (sample_clamped(prev, qx, qy + 1) - sample_clamped(prev, qx, qy - 1));
      gxx += double(gx[k]) * gx[k];
      gxy += double(gx[k]) * gy[k];
      gyy += double(gy[k]) * gy[k];
    }
  }

  // Minimum eigenvalue of the gradient matrix, per window pixel, decides
  // whether the patch has enough structure to track.
  const double tr = gxx + gyy;
  const double det = gxx * gyy - gxy * gxy;
  const double disc = std::sqrt(std::max(tr * tr - 4.0 * det, 0.0));
  const double lambda_min = 0.5 * (tr - disc) / n_pix;
  if (lambda_min < params.min_eigenvalue) return {};

  const double inv_det = 1.0 / det;
  Eigen::Vector2d nu = Eigen::Vector2d::Zero();
  for (int iter = 0; iter < params.max_iterations; ++iter) {
    double bx = 0.0, by = 0.0;
    k = 0;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx, ++k) {
        const double qx = point.x() + guess.x() + nu.x() + dx;
        const double qy = point.y() + guess.y() + nu.y() + dy;
        const double diff = patch[k] - sample_clamped(next, qx, qy);
        bx += diff * gx[k];
        by += diff * gy[k];
      }
    }
    const Eigen::Vector2d eta((gyy * bx - gxy * by) * inv_det,
                              (gxx * by - gxy * bx) * inv_det);
    nu += eta;
    if (nu.norm() > 2.0 * n_side) return {};  // diverged
    if (eta.norm() < params.epsilon_px) break;
  }
  return {guess + nu, true};
}

FlowVector track_one(const Pyramid& prev, const Pyramid& next, PixelPoint p,
                     Eigen::Vector2d init, const LucasKanadeParams& params) {
  FlowVector fv;
  fv.origin = p;

  const int top = static_cast<int>(prev.levels.size()) - 1;
  Eigen::Vector2d guess = init / static_cast<double>(1 << top);
  for (int level = top; level >= 0; --level) {
    const double scale = static_cast<double>(1 << level);
    const Eigen::Vector2d pt(p.u / scale, p.v / scale);
    LevelResult res = solve_level(prev.levels[level], next.levels[level], pt, guess, params);
    if (!res.ok) return fv;
    guess = level > 0 ? Eigen::Vector2d(2.0 * res.flow) : res.flow;
  }

  const Raster& base = next.levels[0];
  const double qx = p.u + guess.x();
  const double qy = p.v + guess.y();
  const double margin = params.window_radius;
  if (qx < margin || qy < margin || qx > base.width - 1 - margin ||
      qy > base.height - 1 - margin) {
    return fv;  // tracked point left the raster
  }
  if ((guess - init).norm() > params.max_displacement_px) return fv;

  fv.delta = {guess.x(), guess.y()};
  fv.valid = true;
  return fv;
}

}  // namespace

Pyramid build_pyramid(const Raster& raster, int levels) {
  Pyramid pyr;
  pyr.levels.reserve(levels);
  pyr.levels.push_back(raster);
  for (int l = 1; l < levels; ++l) {
    const Raster& up = pyr.levels.back();
    if (up.width < 8 || up.height < 8) break;
    pyr.levels.push_back(downsample(up));
  }
  return pyr;
}

std::vector<FlowVector> track_points(const Pyramid& prev, const Pyramid& next,
                                     const std::vector<PixelPoint>& points,
                                     const LucasKanadeParams& params) {
  if (prev.levels.empty() || next.levels.empty() ||
      prev.levels[0].width != next.levels[0].width ||
      prev.levels[0].height != next.levels[0].height) {
    throw Error(ErrorCode::DimensionMismatch, "flow rasters differ in size");
  }
  std::vector<FlowVector> out;
  out.reserve(points.size());
  for (const PixelPoint& p : points) {
    out.push_back(track_one(prev, next, p, Eigen::Vector2d::Zero(), params));
  }
  return out;
}

std::vector<FlowVector> track_points_from(const Pyramid& reference, const Pyramid& next,
                                          const std::vector<PixelPoint>& points,
                                          const std::vector<PixelPoint>& initial_deltas,
                                          const LucasKanadeParams& params) {
  if (reference.levels.empty() || next.levels.empty() ||
      reference.levels[0].width != next.levels[0].width ||
      reference.levels[0].height != next.levels[0].height) {
    throw Error(ErrorCode::DimensionMismatch, "flow rasters differ in size");
  }
  if (initial_deltas.size() != points.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one initial delta per point required");
  }
  std::vector<FlowVector> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    out.push_back(track_one(reference, next, points[i],
                            {initial_deltas[i].u, initial_deltas[i].v}, params));
  }
  return out;
}

std::vector<FlowVector> track_points(const Raster& prev, const Raster& next,
                                     const std::vector<PixelPoint>& points,
                                     const LucasKanadeParams& params) {
  if (prev.width != next.width || prev.height != next.height) {
    throw Error(ErrorCode::DimensionMismatch, "flow rasters differ in size");
  }
  return track_points(build_pyramid(prev, params.pyramid_levels),
                      build_pyramid(next, params.pyramid_levels), points, params);
}

SnapResult snap_to_detections(const std::vector<PixelPoint>& predicted,
                              const std::vector<PixelPoint>& detections, double radius_px) {
  SnapResult result;
  result.matched_detection.assign(predicted.size(), -1);
  result.snapped = predicted;

  struct Pair {
    double dist;
    int det;
    int pred;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    for (std::size_t j = 0; j < detections.size(); ++j) {
      const double du = predicted[i].u - detections[j].u;
      const double dv = predicted[i].v - detections[j].v;
      const double d = std::sqrt(du * du + dv * dv);
      if (d <= radius_px) {
        pairs.push_back({d, static_cast<int>(j), static_cast<int>(i)});
      }
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.dist, a.det, a.pred) < std::tie(b.dist, b.det, b.pred);
  });

  std::vector<bool> det_used(detections.size(), false);
  for (const Pair& p : pairs) {
    if (det_used[p.det] || result.matched_detection[p.pred] >= 0) continue;
    det_used[p.det] = true;
    result.matched_detection[p.pred] = p.det;
    result.snapped[p.pred] = detections[p.det];
  }
  return result;
}

namespace {

struct TrackedBuoy {
  int buoy_id;  // index into the course buoy grid, or -1 for a free anchor point
  WorldPoint world;
  PixelPoint image;
};

// Distinct course rows among the inlier correspondences. Free anchor points
// carry no row identity and do not count.
int inlier_row_span(const std::vector<TrackedBuoy>& pts, const std::vector<bool>& mask,
                    const std::vector<BuoyRef>& buoys) {
  std::set<int> rows;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    if (!mask[k] || pts[k].buoy_id < 0) continue;
    rows.insert(buoys[static_cast<std::size_t>(pts[k].buoy_id)].segment);
  }
  return static_cast<int>(rows.size());
}

// Claims unmatched detections for course buoys that project inside the
// frame, keeping the correspondence set populated as the camera pans.
void acquire_buoys(std::vector<TrackedBuoy>& state, const Homography& world_to_image,
                   const std::vector<BuoyRef>& buoys,
                   const std::vector<PixelPoint>& detections, std::vector<bool>& det_used,
                   int width, int height, const PropagateParams& params) {
  std::vector<bool> have(buoys.size(), false);
  for (const TrackedBuoy& t : state) {
    if (t.buoy_id >= 0) have[t.buoy_id] = true;
  }
  const double m = params.acquire_margin_px;
  for (std::size_t b = 0; b < buoys.size(); ++b) {
    if (have[b]) continue;
    PixelPoint proj;
    try {
      proj = project(world_to_image, buoys[b].position);
    } catch (const Error&) {
      continue;
    }
    if (proj.u < m || proj.v < m || proj.u > width - 1 - m || proj.v > height - 1 - m) {
      continue;
    }
    int best = -1;
    double best_d = params.acquire_radius_px;
    for (std::size_t j = 0; j < detections.size(); ++j) {
      if (det_used[j]) continue;
      const double du = proj.u - detections[j].u;
      const double dv = proj.v - detections[j].v;
      const double d = std::sqrt(du * du + dv * dv);
      if (d <= best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) {
      det_used[best] = true;
      state.push_back({static_cast<int>(b), buoys[b].position, detections[best]});
    }
  }
}

// Rebuilds the state by matching the full course grid against this frame's
// detections under the given mapping, then refitting. Installs the refit and
// returns true only when it has enough support; tracked identities are not
// kept, which is the point — a starved state may carry corrupted labels.
bool rescue_refit(std::vector<TrackedBuoy>& state, Homography& h_io, FitReport& report_out,
                  const std::vector<BuoyRef>& buoys, const std::vector<PixelPoint>& dets,
                  int width, int height, int frame, const PropagateParams& params) {
  std::vector<TrackedBuoy> claims;
  std::vector<bool> det_used(dets.size(), false);
  const double m = params.acquire_margin_px;
  for (std::size_t b = 0; b < buoys.size(); ++b) {
    PixelPoint proj;
    try {
      proj = project(h_io, buoys[b].position);
    } catch (const Error&) {
      continue;
    }
    if (proj.u < m || proj.v < m || proj.u > width - 1 - m || proj.v > height - 1 - m) {
      continue;
    }
    int best = -1;
    double best_d = params.acquire_radius_px;
    for (std::size_t j = 0; j < dets.size(); ++j) {
      if (det_used[j]) continue;
      const double du = proj.u - dets[j].u;
      const double dv = proj.v - dets[j].v;
      const double d = std::sqrt(du * du + dv * dv);
      if (d <= best_d) {
        best_d = d;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) {
      det_used[best] = true;
      claims.push_back({static_cast<int>(b), buoys[b].position, dets[best]});
    }
  }
  if (static_cast<int>(claims.size()) < params.min_refit_inliers) return false;
  std::vector<Correspondence> corrs;
  corrs.reserve(claims.size());
  for (const TrackedBuoy& t : claims) corrs.push_back({t.image, t.world});
  try {
    RansacParams rp = params.ransac;
    rp.seed = params.ransac.seed + static_cast<std::uint64_t>(frame);
    auto [h, report] = estimate_ransac(corrs, rp);
    if (report.inlier_count() < params.min_refit_inliers ||
        !std::isfinite(report.rms_reprojection_px) ||
        inlier_row_span(claims, report.inlier_mask, buoys) < params.min_support_rows) {
      return false;
    }
    h.frame_index = frame;
    std::vector<TrackedBuoy> inliers;
    for (std::size_t k = 0; k < claims.size(); ++k) {
      if (report.inlier_mask[k]) inliers.push_back(claims[k]);
    }
    state = std::move(inliers);
    h_io = h;
    report_out = std::move(report);
    return true;
  } catch (const Error&) {
    return false;
  }
}

int nearest_buoy_id(const std::vector<BuoyRef>& buoys, WorldPoint w) {
  for (std::size_t b = 0; b < buoys.size(); ++b) {
    const double dx = buoys[b].position.x - w.x;
    const double dy = buoys[b].position.y - w.y;
    if (dx * dx + dy * dy < 1e-12) return static_cast<int>(b);
  }
  return -1;
}

}  // namespace

HomographySequence propagate(RasterProvider& frames, int anchor_frame,
                             const std::vector<Correspondence>& anchor_corrs,
                             const CourseSpec& spec,
                             const std::vector<std::vector<PixelPoint>>& buoy_centers_per_frame,
                             const PropagateParams& params) {
  const int n = frames.frame_count();
  if (static_cast<int>(buoy_centers_per_frame.size()) != n) {
    throw Error(ErrorCode::DimensionMismatch,
                "detection stream covers " + std::to_string(buoy_centers_per_frame.size()) +
                    " frames, raster sequence has " + std::to_string(n));
  }
  if (anchor_frame < 0 || anchor_frame >= n) {
    throw Error(ErrorCode::AnchorFitFailed,
                "anchor frame " + std::to_string(anchor_frame) + " outside sequence");
  }

  Homography anchor_h;
  FitReport anchor_report;
  try {
    RansacParams rp = params.ransac;
    rp.seed = params.ransac.seed + static_cast<std::uint64_t>(anchor_frame);
    std::tie(anchor_h, anchor_report) = estimate_ransac(anchor_corrs, rp);
  } catch (const Error& e) {
    throw Error(ErrorCode::AnchorFitFailed,
                std::string("anchor correspondences do not fit: ") + e.what());
  }
  anchor_h.frame_index = anchor_frame;

  const std::vector<BuoyRef> buoys = buoy_world_positions(spec);

  HomographySequence seq;
  seq.anchor_frame = anchor_frame;
  seq.world_to_image.assign(n, Homography{});
  seq.reports.assign(n, FitReport{});
  seq.correspondences.assign(n, {});
  seq.status.assign(n, FrameStatus::Inherited);

  // Anchor state: inlier correspondences, identified with grid buoys where
  // the world point matches one.
  std::vector<TrackedBuoy> anchor_state;
  std::vector<Correspondence> anchor_inliers;
  for (std::size_t i = 0; i < anchor_corrs.size(); ++i) {
    if (!anchor_report.inlier_mask[i]) continue;
    anchor_inliers.push_back(anchor_corrs[i]);
    anchor_state.push_back({nearest_buoy_id(buoys, anchor_corrs[i].world),
                            anchor_corrs[i].world, anchor_corrs[i].image});
  }
  {
    const Raster* anchor_raster = frames.frame(anchor_frame);
    std::vector<bool> det_used(buoy_centers_per_frame[anchor_frame].size(), false);
    // Detections already represented in the anchor set must not be claimed twice.
    for (const TrackedBuoy& t : anchor_state) {
      for (std::size_t j = 0; j < buoy_centers_per_frame[anchor_frame].size(); ++j) {
        const double du = t.image.u - buoy_centers_per_frame[anchor_frame][j].u;
        const double dv = t.image.v - buoy_centers_per_frame[anchor_frame][j].v;
        if (du * du + dv * dv <= params.snap_radius_px * params.snap_radius_px) {
          det_used[j] = true;
          break;
        }
      }
    }
    acquire_buoys(anchor_state, anchor_h, buoys, buoy_centers_per_frame[anchor_frame],
                  det_used, anchor_raster->width, anchor_raster->height, params);
  }

  seq.world_to_image[anchor_frame] = anchor_h;
  seq.reports[anchor_frame] = anchor_report;
  seq.correspondences[anchor_frame] = anchor_inliers;
  seq.status[anchor_frame] = FrameStatus::Fit;

  for (const int dir : {+1, -1}) {
    std::vector<TrackedBuoy> state = anchor_state;
    Homography last_h = anchor_h;
    Pyramid prev_pyr = build_pyramid(*frames.frame(anchor_frame), params.lk.pyramid_levels);

    for (int i = anchor_frame + dir; i >= 0 && i < n; i += dir) {
      const Raster* raster = frames.frame(i);
      Pyramid next_pyr = build_pyramid(*raster, params.lk.pyramid_levels);

      std::vector<PixelPoint> pts;
      pts.reserve(state.size());
      for (const TrackedBuoy& t : state) pts.push_back(t.image);
      const std::vector<FlowVector> flow = track_points(prev_pyr, next_pyr, pts, params.lk);

      std::vector<TrackedBuoy> survivors;
      std::vector<PixelPoint> predicted;
      for (std::size_t k = 0; k < state.size(); ++k) {
        if (!flow[k].valid) continue;
        TrackedBuoy t = state[k];
        t.image = {flow[k].origin.u + flow[k].delta.u, flow[k].origin.v + flow[k].delta.v};
        predicted.push_back(t.image);
        survivors.push_back(t);
      }

      const std::vector<PixelPoint>& dets = buoy_centers_per_frame[i];
      const SnapResult snap = snap_to_detections(predicted, dets, params.snap_radius_px);
      std::vector<bool> det_used(dets.size(), false);
      for (int d : snap.matched_detection) {
        if (d >= 0) det_used[d] = true;
      }

      std::vector<Correspondence> corrs;
      corrs.reserve(survivors.size());
      for (std::size_t k = 0; k < survivors.size(); ++k) {
        survivors[k].image = snap.snapped[k];
        corrs.push_back({survivors[k].image, survivors[k].world});
      }

      bool fitted = false;
      if (corrs.size() >= static_cast<std::size_t>(params.min_refit_inliers)) {
        try {
          RansacParams rp = params.ransac;
          rp.seed = params.ransac.seed + static_cast<std::uint64_t>(i);
          auto [h, report] = estimate_ransac(corrs, rp);
          if (report.inlier_count() >= params.min_refit_inliers &&
              std::isfinite(report.rms_reprojection_px) &&
              inlier_row_span(survivors, report.inlier_mask, buoys) >=
                  params.min_support_rows) {
            h.frame_index = i;
            std::vector<TrackedBuoy> inlier_state;
            for (std::size_t k = 0; k < survivors.size(); ++k) {
              if (report.inlier_mask[k]) inlier_state.push_back(survivors[k]);
            }
            state = std::move(inlier_state);
            last_h = h;
            seq.world_to_image[i] = h;
            seq.reports[i] = std::move(report);
            seq.status[i] = snap.matched_count() > 0 ? FrameStatus::Fit : FrameStatus::FlowOnly;
            fitted = true;
          }
        } catch (const Error&) {
          fitted = false;
        }
      }
      if (!fitted) {
        // Keep the last good mapping and the flow-predicted points so the
        // track can recover once detections return.
        state = std::move(survivors);
        Homography inherited = last_h;
        inherited.frame_index = i;
        seq.world_to_image[i] = inherited;
        seq.status[i] = FrameStatus::Inherited;
      }

      acquire_buoys(state, seq.world_to_image[i], buoys, dets, det_used, raster->width,
                    raster->height, params);
      if (static_cast<int>(state.size()) < params.rescue_floor || seq.flagged(i)) {
        Homography h = seq.world_to_image[i];
        FitReport report;
        if (rescue_refit(state, h, report, buoys, dets, raster->width, raster->height, i,
                         params)) {
          last_h = h;
          seq.world_to_image[i] = h;
          seq.reports[i] = std::move(report);
          seq.status[i] = FrameStatus::Fit;
        }
      }
      seq.correspondences[i].clear();
      for (const TrackedBuoy& t : state) {
        seq.correspondences[i].push_back({t.image, t.world});
      }
      prev_pyr = std::move(next_pyr);
    }
  }
  return seq;
}

HomographySequence propagate_by_detections(
    int frame_count, int width, int height, int anchor_frame,
    const std::vector<Correspondence>& anchor_corrs, const CourseSpec& spec,
    const std::vector<std::vector<PixelPoint>>& buoy_centers_per_frame,
    const PropagateParams& params) {
  const int n = frame_count;
  if (static_cast<int>(buoy_centers_per_frame.size()) != n) {
    throw Error(ErrorCode::DimensionMismatch,
                "detection stream covers " + std::to_string(buoy_centers_per_frame.size()) +
                    " frames, sequence has " + std::to_string(n));
  }
  if (anchor_frame < 0 || anchor_frame >= n) {
    throw Error(ErrorCode::AnchorFitFailed,
                "anchor frame " + std::to_string(anchor_frame) + " outside sequence");
  }

  Homography anchor_h;
  FitReport anchor_report;
  try {
    RansacParams rp = params.ransac;
    rp.seed = params.ransac.seed + static_cast<std::uint64_t>(anchor_frame);
    std::tie(anchor_h, anchor_report) = estimate_ransac(anchor_corrs, rp);
  } catch (const Error& e) {
    throw Error(ErrorCode::AnchorFitFailed,
                std::string("anchor correspondences do not fit: ") + e.what());
  }
  anchor_h.frame_index = anchor_frame;

  const std::vector<BuoyRef> buoys = buoy_world_positions(spec);

  HomographySequence seq;
  seq.anchor_frame = anchor_frame;
  seq.world_to_image.assign(n, Homography{});
  seq.reports.assign(n, FitReport{});
  seq.correspondences.assign(n, {});
  seq.status.assign(n, FrameStatus::Inherited);

  std::vector<TrackedBuoy> anchor_state;
  std::vector<Correspondence> anchor_inliers;
  for (std::size_t i = 0; i < anchor_corrs.size(); ++i) {
    if (!anchor_report.inlier_mask[i]) continue;
    anchor_inliers.push_back(anchor_corrs[i]);
    anchor_state.push_back({nearest_buoy_id(buoys, anchor_corrs[i].world),
                            anchor_corrs[i].world, anchor_corrs[i].image});
  }
  {
    std::vector<bool> det_used(buoy_centers_per_frame[anchor_frame].size(), false);
    for (const TrackedBuoy& t : anchor_state) {
      for (std::size_t j = 0; j < buoy_centers_per_frame[anchor_frame].size(); ++j) {
        const double du = t.image.u - buoy_centers_per_frame[anchor_frame][j].u;
        const double dv = t.image.v - buoy_centers_per_frame[anchor_frame][j].v;
        if (du * du + dv * dv <= params.snap_radius_px * params.snap_radius_px) {
          det_used[j] = true;
          break;
        }
      }
    }
    acquire_buoys(anchor_state, anchor_h, buoys, buoy_centers_per_frame[anchor_frame],
                  det_used, width, height, params);
  }

  seq.world_to_image[anchor_frame] = anchor_h;
  seq.reports[anchor_frame] = anchor_report;
  seq.correspondences[anchor_frame] = anchor_inliers;
  seq.status[anchor_frame] = FrameStatus::Fit;

  for (const int dir : {+1, -1}) {
    std::vector<TrackedBuoy> state = anchor_state;
    Homography last_h = anchor_h;

    for (int i = anchor_frame + dir; i >= 0 && i < n; i += dir) {
      std::vector<PixelPoint> predicted;
      predicted.reserve(state.size());
      for (const TrackedBuoy& t : state) predicted.push_back(t.image);

      const std::vector<PixelPoint>& dets = buoy_centers_per_frame[i];
      const SnapResult snap = snap_to_detections(predicted, dets, params.snap_radius_px);
      std::vector<bool> det_used(dets.size(), false);
      for (int d : snap.matched_detection) {
        if (d >= 0) det_used[d] = true;
      }

      std::vector<TrackedBuoy> matched;
      std::vector<Correspondence> corrs;
      for (std::size_t k = 0; k < state.size(); ++k) {
        if (snap.matched_detection[k] < 0) continue;
        TrackedBuoy t = state[k];
        t.image = snap.snapped[k];
        corrs.push_back({t.image, t.world});
        matched.push_back(t);
      }

      bool fitted = false;
      if (corrs.size() >= static_cast<std::size_t>(params.min_refit_inliers)) {
        try {
          RansacParams rp = params.ransac;
          rp.seed = params.ransac.seed + static_cast<std::uint64_t>(i);
          auto [h, report] = estimate_ransac(corrs, rp);
          if (report.inlier_count() >= params.min_refit_inliers &&
              std::isfinite(report.rms_reprojection_px) &&
              inlier_row_span(matched, report.inlier_mask, buoys) >=
                  params.min_support_rows) {
            h.frame_index = i;
            std::vector<TrackedBuoy> inlier_state;
            for (std::size_t k = 0; k < matched.size(); ++k) {
              if (report.inlier_mask[k]) inlier_state.push_back(matched[k]);
            }
            state = std::move(inlier_state);
            last_h = h;
            seq.world_to_image[i] = h;
            seq.reports[i] = std::move(report);
            seq.status[i] = FrameStatus::Fit;
            fitted = true;
          }
        } catch (const Error&) {
          fitted = false;
        }
      }
      if (!fitted) {
        // stale points persist so the walk can re-associate after an outage
        Homography inherited = last_h;
        inherited.frame_index = i;
        seq.world_to_image[i] = inherited;
        seq.status[i] = FrameStatus::Inherited;
      }

      acquire_buoys(state, seq.world_to_image[i], buoys, dets, det_used, width, height,
                    params);
      if (static_cast<int>(state.size()) < params.rescue_floor || seq.flagged(i)) {
        Homography h = seq.world_to_image[i];
        FitReport report;
        if (rescue_refit(state, h, report, buoys, dets, width, height, i, params)) {
          last_h = h;
          seq.world_to_image[i] = h;
          seq.reports[i] = std::move(report);
          seq.status[i] = FrameStatus::Fit;
        }
      }
      seq.correspondences[i].clear();
      for (const TrackedBuoy& t : state) {
        seq.correspondences[i].push_back({t.image, t.world});
      }
    }
  }
  return seq;
}

}  // namespace regatta
