#include "regatta/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "regatta/errors.hpp"

namespace regatta {
namespace {

constexpr double kInfinityEps = 1e-12;

struct Normalization {
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
};

// Similarity moving the centroid to the origin and the mean distance to
// sqrt(2). Keeps the DLT design matrix well conditioned.
Normalization normalize_points(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());

  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());

  double scale = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
  Normalization n;
  n.t << scale, 0, -scale * centroid.x(), 0, scale, -scale * centroid.y(), 0, 0, 1;
  return n;
}

Eigen::Vector3d to_h(PixelPoint p) { return {p.u, p.v, 1.0}; }
Eigen::Vector3d to_h(WorldPoint p) { return {p.x, p.y, 1.0}; }

// xorshift-based generator with a fixed layout so RANSAC draws are identical
// across platforms and standard libraries.
struct Sampler {
  std::uint64_t state;

  explicit Sampler(std::uint64_t seed) : state(seed ^ 0x9e3779b97f4a7c15ULL) {
    next();
    next();
  }

  std::uint64_t next() {
    state ^= state << 13;
    state ^= state >> 7;
    state ^= state << 17;
    return state;
  }

  // Unbiased bounded draw (rejection on the top remainder).
  std::size_t below(std::size_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = next();
    while (x >= limit) x = next();
    return static_cast<std::size_t>(x % bound);
  }
};

}  // namespace

Homography Homography::from_matrix(const Eigen::Matrix3d& m, int frame_index) {
  Homography h;
  h.m = m;
  h.frame_index = frame_index;
  if (std::abs(h.m(2, 2)) > kInfinityEps) h.m /= h.m(2, 2);
  return h;
}

Homography estimate_dlt(const std::vector<Correspondence>& corrs) {
  const std::size_t n = corrs.size();
  if (n < 4) {
    throw Error(ErrorCode::DegenerateConfiguration,
                "homography estimation needs at least 4 correspondences, got " +
                    std::to_string(n));
  }

  std::vector<Eigen::Vector2d> img(n), wld(n);
  for (std::size_t i = 0; i < n; ++i) {
    img[i] = {corrs[i].image.u, corrs[i].image.v};
    wld[i] = {corrs[i].world.x, corrs[i].world.y};
  }
  const Normalization ni = normalize_points(img);
  const Normalization nw = normalize_points(wld);

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d w = nw.t * Eigen::Vector3d(wld[i].x(), wld[i].y(), 1.0);
    const Eigen::Vector3d p = ni.t * Eigen::Vector3d(img[i].x(), img[i].y(), 1.0);
    const double x = w.x(), y = w.y(), u = p.x(), v = p.y();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // With 8 meaningful singular values, a vanishing 8th signals a
  // configuration (collinear or repeated points) with no unique solution.
  if (sv(0) <= 0.0 || sv(7) / sv(0) < 1e-9) {
    throw Error(ErrorCode::DegenerateConfiguration,
                "correspondences do not determine a unique homography");
  }

  Eigen::Matrix3d hn;
  const Eigen::VectorXd h = svd.matrixV().col(8);
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);

  Eigen::Matrix3d m = ni.t.inverse() * hn * nw.t;
  if (std::abs(m(2, 2)) < kInfinityEps) {
    throw Error(ErrorCode::DegenerateConfiguration,
                "estimated homography has a vanishing scale entry");
  }
  return Homography::from_matrix(m);
}

double reprojection_error_px(const Homography& world_to_image, const Correspondence& c) {
  const Eigen::Vector3d p = world_to_image.m * to_h(c.world);
  if (std::abs(p.z()) < kInfinityEps) return std::numeric_limits<double>::infinity();
  const double du = p.x() / p.z() - c.image.u;
  const double dv = p.y() / p.z() - c.image.v;
  return std::sqrt(du * du + dv * dv);
}

std::pair<Homography, FitReport> estimate_ransac(const std::vector<Correspondence>& corrs,
                                                 const RansacParams& params) {
  const std::size_t n = corrs.size();
  if (n < 4) {
    throw Error(ErrorCode::InsufficientInliers,
                "robust fit needs at least 4 correspondences, got " + std::to_string(n));
  }

  Sampler sampler(params.seed);
  std::vector<std::size_t> idx(4);
  std::vector<bool> best_mask(n, false);
  int best_count = 0;
  double best_err = std::numeric_limits<double>::infinity();

  int iters_needed = params.max_iters;
  int it = 0;
  for (; it < iters_needed && it < params.max_iters; ++it) {
    // Sample 4 distinct indices.
    for (int k = 0; k < 4;) {
      const std::size_t cand = sampler.below(n);
      bool dup = false;
      for (int j = 0; j < k; ++j) dup |= idx[j] == cand;
      if (!dup) idx[k++] = cand;
    }

    std::vector<Correspondence> sample = {corrs[idx[0]], corrs[idx[1]], corrs[idx[2]],
                                          corrs[idx[3]]};
    Homography h;
    try {
      h = estimate_dlt(sample);
    } catch (const Error&) {
      continue;  // degenerate minimal sample, draw again
    }

    std::vector<bool> mask(n, false);
    int count = 0;
    double err_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = reprojection_error_px(h, corrs[i]);
      if (e <= params.threshold_px) {
        mask[i] = true;
        ++count;
        err_sum += e * e;
      }
    }
    if (count > best_count || (count == best_count && err_sum < best_err)) {
      best_count = count;
      best_err = err_sum;
      best_mask = std::move(mask);

      // Standard adaptive bound: stop once enough iterations have run to
      // see an all-inlier sample with 99% confidence.
      const double w = static_cast<double>(count) / static_cast<double>(n);
      const double p_good = std::pow(w, 4);
      if (p_good >= 1.0 - 1e-12) {
        iters_needed = it + 1;
      } else if (p_good > 0.0) {
        const double need = std::log(0.01) / std::log(1.0 - p_good);
        iters_needed = std::min(params.max_iters,
                                static_cast<int>(std::ceil(need)));
      }
    }
  }

  if (best_count < 4) {
    throw Error(ErrorCode::InsufficientInliers,
                "consensus set of " + std::to_string(best_count) +
                    " is too small to fit a homography");
  }

  std::vector<Correspondence> inliers;
  inliers.reserve(best_count);
  for (std::size_t i = 0; i < n; ++i) {
    if (best_mask[i]) inliers.push_back(corrs[i]);
  }
  Homography refit = estimate_dlt(inliers);

  FitReport report;
  report.inlier_mask = std::move(best_mask);
  report.iterations = it;
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (report.inlier_mask[i]) {
      const double e = reprojection_error_px(refit, corrs[i]);
      sq += e * e;
    }
  }
  report.rms_reprojection_px = std::sqrt(sq / static_cast<double>(best_count));
  return {refit, report};
}

WorldPoint apply(const Homography& h, PixelPoint p) {
  const Eigen::Vector3d q = h.m * to_h(p);
  if (std::abs(q.z()) < kInfinityEps) {
    throw Error(ErrorCode::PointAtInfinity,
                "point maps to infinity under the homography");
  }
  return {q.x() / q.z(), q.y() / q.z()};
}

PixelPoint project(const Homography& h, WorldPoint p) {
  const Eigen::Vector3d q = h.m * to_h(p);
  if (std::abs(q.z()) < kInfinityEps) {
    throw Error(ErrorCode::PointAtInfinity,
                "point maps to infinity under the homography");
  }
  return {q.x() / q.z(), q.y() / q.z()};
}

Homography invert(const Homography& h) {
  const double det = h.m.determinant();
  if (std::abs(det) < 1e-15) {
    throw Error(ErrorCode::SingularMatrix, "homography matrix is not invertible");
  }
  Homography inv = Homography::from_matrix(h.m.inverse(), h.frame_index);
  return inv;
}

}  // namespace regatta
