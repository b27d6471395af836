#include "regatta/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <list>
#include <sstream>
#include <unordered_map>

#include <Eigen/Dense>
#include <json.hpp>

#include "regatta/errors.hpp"
#include "regatta/localization.hpp"

namespace regatta {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kIntegrationStep = 0.005;  // RK4 step, seconds
constexpr double kTipToFirstSeat = 2.4;     // hull model, metres behind the tip
constexpr double kConditionLimit = 1e8;

// --- deterministic keyed noise ------------------------------------------

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t sim_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                      std::uint64_t c) {
  return mix64(mix64(mix64(mix64(seed) ^ a) ^ b) ^ c);
}

// uniform in (0, 1), never exactly 0
double sim_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                   std::uint64_t c) {
  return (static_cast<double>(sim_key(seed, a, b, c) >> 11) + 0.5) * 0x1.0p-53;
}

double sim_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                  std::uint64_t c) {
  const double u1 = sim_uniform(seed, a, b, c);
  const double u2 = sim_uniform(seed, a, b, c + 64);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

// noise purpose channels
enum : std::uint64_t {
  kBuoyDrop = 1,
  kBuoyJitterU = 2,
  kBuoyJitterV = 3,
  kBuoyConf = 4,
  kAthleteDrop = 5,
  kAthleteJitterU = 6,
  kAthleteJitterV = 7,
  kAthleteConf = 8,
  kShoulderU = 9,
  kShoulderV = 10,
  kWristU = 11,
  kWristV = 12,
  kTipU = 13,
  kTipV = 14,
  kBuoyLook = 15,
  kBuoyLook2 = 16,
  kCellPresent = 20,
  kCellSigma = 21,
  kCellBase = 22,
  kCellPhase = 23,
};

std::uint64_t buoy_entity(int buoy_index) { return 1000000ULL + buoy_index; }
std::uint64_t athlete_entity(int lane, int seat) { return lane * 100ULL + seat; }

// --- pacing --------------------------------------------------------------

double lane_speed(const LaneScript& l, double t, double d) {
  const double ta = t - l.start_stagger_s;
  if (ta <= 0.0) return 0.0;
  const double rise = l.rise_s > 0.0 ? 1.0 - std::exp(-ta / l.rise_s) : 1.0;
  return std::max(0.0, l.v_peak * rise - l.fade_per_100m * std::max(0.0, d) / 100.0);
}

// schedule value at distance d, constant beyond the control range
double lane_rate(const LaneScript& l, double d) {
  const auto& s = l.stroke_rate;
  if (d <= s.front().first) return s.front().second;
  if (d >= s.back().first) return s.back().second;
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (d <= s[i].first) {
      const double span = s[i].first - s[i - 1].first;
      if (span <= 0.0) return s[i].second;
      const double w = (d - s[i - 1].first) / span;
      return s[i - 1].second + w * (s[i].second - s[i - 1].second);
    }
  }
  return s.back().second;
}

double phase_rate(const LaneScript& l, double t, double d) {
  if (t < l.start_stagger_s) return 0.0;
  return lane_rate(l, std::max(0.0, d)) / 60.0;
}

struct LaneFrameState {
  double x_smooth = 0.0;
  double v = 0.0;
  double phi = 0.0;
};

// joint RK4 on (x, phi); calls on_frame at every multiple of the frame period
void integrate_lane(const LaneScript& l, double start_x, double fps, int frames,
                    std::vector<LaneFrameState>* out, std::vector<double>* peaks) {
  const int sub = std::max(1, static_cast<int>(std::lround(1.0 / (fps * kIntegrationStep))));
  const double h = 1.0 / (fps * sub);
  double x = start_x;
  double phi = 0.0;
  double next_peak = 0.25;
  out->resize(frames);
  for (int f = 0; f < frames; ++f) {
    const double tf = f / fps;
    (*out)[f] = {x, lane_speed(l, tf, x - start_x), phi};
    if (f + 1 == frames) break;
    for (int s = 0; s < sub; ++s) {
      const double t = tf + s * h;
      const double k1x = lane_speed(l, t, x - start_x);
      const double k1p = phase_rate(l, t, x - start_x);
      const double k2x = lane_speed(l, t + h / 2, x + h / 2 * k1x - start_x);
      const double k2p = phase_rate(l, t + h / 2, x + h / 2 * k1x - start_x);
      const double k3x = lane_speed(l, t + h / 2, x + h / 2 * k2x - start_x);
      const double k3p = phase_rate(l, t + h / 2, x + h / 2 * k2x - start_x);
      const double k4x = lane_speed(l, t + h, x + h * k3x - start_x);
      const double k4p = phase_rate(l, t + h, x + h * k3x - start_x);
      x += h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x);
      const double phi1 = phi + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p);
      while (phi1 >= next_peak) {
        const double w = (next_peak - phi) / std::max(1e-12, phi1 - phi);
        if (peaks) peaks->push_back(t + w * h);
        next_peak += 1.0;
      }
      phi = phi1;
    }
  }
}

// time for the boat to cross the finish line, integrating up to t_cap
double finish_time(const LaneScript& l, double start_x, double t_cap) {
  const double h = kIntegrationStep;
  double x = start_x;
  for (double t = 0.0; t < t_cap; t += h) {
    const double k1 = lane_speed(l, t, x - start_x);
    const double k2 = lane_speed(l, t + h / 2, x + h / 2 * k1 - start_x);
    const double k3 = lane_speed(l, t + h / 2, x + h / 2 * k2 - start_x);
    const double k4 = lane_speed(l, t + h, x + h * k3 - start_x);
    x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    if (x >= 0.0) return t + h;
  }
  return -1.0;
}

// --- camera ---------------------------------------------------------------

struct Camera {
  Eigen::Matrix3d rot;  // rows: right, down, forward
  Eigen::Vector3d center;
  double f = 1000.0;
  double cx = 0.0;
  double cy = 0.0;

  PixelPoint project(const Eigen::Vector3d& p) const {
    const Eigen::Vector3d q = rot * (p - center);
    return {f * q.x() / q.z() + cx, f * q.y() / q.z() + cy};
  }
  double depth(const Eigen::Vector3d& p) const { return (rot * (p - center)).z(); }
  double scale_at(const Eigen::Vector3d& p) const { return f / depth(p); }

  Eigen::Matrix3d plane_homography() const {
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = f;
    k(1, 1) = f;
    k(0, 2) = cx;
    k(1, 2) = cy;
    Eigen::Matrix3d m;
    m.col(0) = rot.col(0);
    m.col(1) = rot.col(1);
    m.col(2) = -rot * center;
    return k * m;
  }
};

struct BoatGeometry {
  int seats = 1;
  std::vector<double> seat_offsets;  // tip to seat, metres
  double length = 5.0;
  double lane_y = 0.0;
};

struct LaneRender {
  double x_render = 0.0;  // tip x with surge
  double x_smooth = 0.0;
  double m = 0.0;  // stroke oscillation, sin(2 pi phi)
};

struct FrameState {
  Camera cam;
  Homography h;
  std::vector<LaneRender> lanes;
  double t = 0.0;
};

struct SimWorld {
  RaceScript script;
  std::vector<BoatGeometry> geoms;       // parallel to script.lanes
  std::vector<FrameState> frames;
  std::vector<BuoyRef> buoys;
  int width = 0;
  int height = 0;
};

Camera solve_camera(const RaceScript& sc, const std::vector<BoatGeometry>& geoms,
                    const std::vector<LaneRender>& lanes, int width, int height) {
  const CameraScript& cs = sc.camera;
  double lo = 1e30, hi = -1e30, ysum = 0.0;
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    hi = std::max(hi, lanes[i].x_smooth + 0.5);
    lo = std::min(lo, lanes[i].x_smooth - geoms[i].length);
    ysum += geoms[i].lane_y;
  }
  const double aim_x = 0.5 * (lo + hi);
  const double aim_y = ysum / std::max<std::size_t>(1, lanes.size());

  double cam_x = aim_x + cs.x_offset_m;
  if (cs.rail_min_m < cs.rail_max_m)
    cam_x = std::clamp(cam_x, cs.rail_min_m, cs.rail_max_m);

  Camera cam;
  cam.center = Eigen::Vector3d(cam_x, cs.y_m, cs.z_m);
  const Eigen::Vector3d aim(aim_x, aim_y, 0.0);
  const Eigen::Vector3d fwd = (aim - cam.center).normalized();
  const Eigen::Vector3d right = fwd.cross(Eigen::Vector3d::UnitZ()).normalized();
  const Eigen::Vector3d down = fwd.cross(right);
  cam.rot.row(0) = right;
  cam.rot.row(1) = down;
  cam.rot.row(2) = fwd;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;

  double f = cs.target_feature_px * (aim - cam.center).norm() / cs.feature_height_m;
  const double half_w = width / 2.0 - cs.margin_px;
  const double half_h = height / 2.0 - cs.margin_px;
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const double y = geoms[i].lane_y;
    const Eigen::Vector3d pts[4] = {
        {lanes[i].x_smooth + 2.0, y, 0.0},
        {lanes[i].x_smooth - geoms[i].length - 2.0, y, 0.0},
        {lanes[i].x_smooth + 2.0, y, 1.8},
        {lanes[i].x_smooth - geoms[i].length - 2.0, y, 1.8},
    };
    for (const auto& p : pts) {
      const Eigen::Vector3d q = cam.rot * (p - cam.center);
      if (q.z() < 1.0) continue;
      const double ax = std::abs(q.x() / q.z());
      const double ay = std::abs(q.y() / q.z());
      if (ax > 1e-9) f = std::min(f, half_w / ax);
      if (ay > 1e-9) f = std::min(f, half_h / ay);
    }
  }
  cam.f = std::max(f, 50.0);
  return cam;
}

// --- rendering -------------------------------------------------------------

struct Splat {
  double u, v, sigma, a;
};

void add_boat_splats(const SimWorld& w, const FrameState& fs, std::size_t li,
                     std::vector<Splat>* out) {
  const BoatGeometry& g = w.geoms[li];
  const LaneRender& lr = fs.lanes[li];
  const double y = g.lane_y;
  auto push = [&](double wx, double wz, double sigma_m, double a) {
    const Eigen::Vector3d p(wx, y, wz);
    const double z = fs.cam.depth(p);
    if (z < 2.0) return;
    const PixelPoint px = fs.cam.project(p);
    out->push_back({px.u, px.v, std::min(40.0, sigma_m * fs.cam.f / z), a});
  };
  push(lr.x_render, 0.12, 0.14, 0.95);  // bright tip marker
  const int hull = static_cast<int>(std::ceil(g.length / 0.5));
  for (int j = 1; j <= hull; ++j) push(lr.x_render - j * 0.5, 0.08, 0.22, 0.4);
  for (int k = 0; k < g.seats; ++k) {
    const double ax = lr.x_render - g.seat_offsets[k];
    push(ax, 0.85, 0.28, 0.7);   // torso
    push(ax, 1.3, 0.11, 0.85);   // head
    push(ax - 0.28, 0.1, 0.13, 0.5 + 0.4 * lr.m);  // paddle blade dips with the stroke
  }
}

void add_shimmer_splats(const SimWorld& w, const FrameState& fs,
                        std::vector<Splat>* out) {
  const double amp = w.script.noise.shimmer;
  if (amp <= 0.0) return;
  // visible water rectangle from unprojected image corners
  Homography hinv;
  try {
    hinv = invert(fs.h);
  } catch (const Error&) {
    return;
  }
  double xlo = 1e30, xhi = -1e30, ylo = 1e30, yhi = -1e30;
  const double corners[8][2] = {{0, 0},
                                {w.width / 2.0, 0},
                                {w.width - 1.0, 0},
                                {0, w.height / 2.0},
                                {w.width - 1.0, w.height / 2.0},
                                {0, w.height - 1.0},
                                {w.width / 2.0, w.height - 1.0},
                                {w.width - 1.0, w.height - 1.0}};
  for (const auto& c : corners) {
    const Eigen::Vector3d q = hinv.m * Eigen::Vector3d(c[0], c[1], 1.0);
    if (std::abs(q.z()) < 1e-9) continue;
    const double wx = q.x() / q.z();
    const double wy = q.y() / q.z();
    if (q.z() * fs.h.m(2, 2) < 0.0) continue;  // beyond the horizon
    xlo = std::min(xlo, wx);
    xhi = std::max(xhi, wx);
    ylo = std::min(ylo, wy);
    yhi = std::max(yhi, wy);
  }
  const CourseSpec& cs = w.script.course;
  xlo = std::max(xlo, -cs.race_distance_m - 40.0);
  xhi = std::min(xhi, 40.0);
  ylo = std::max(ylo, -12.0);
  yhi = std::min(yhi, cs.course_width() + 12.0);
  if (!(xlo < xhi && ylo < yhi)) return;
  const std::uint64_t seed = w.script.seed;
  const double cell = 2.0;
  for (int gx = static_cast<int>(std::floor(xlo / cell));
       gx <= static_cast<int>(std::ceil(xhi / cell)); ++gx) {
    for (int gy = static_cast<int>(std::floor(ylo / cell));
         gy <= static_cast<int>(std::ceil(yhi / cell)); ++gy) {
      const std::uint64_t a = static_cast<std::uint64_t>(gx + (1 << 20));
      const std::uint64_t b = static_cast<std::uint64_t>(gy + (1 << 20));
      if (sim_uniform(seed, a, b, kCellPresent) > 0.45) continue;
      const WorldPoint wp{gx * cell + cell * sim_uniform(seed, a, b, kCellSigma),
                          gy * cell + cell * sim_uniform(seed, a, b, kCellBase)};
      const PixelPoint px = project(fs.h, wp);
      if (px.u < -20 || px.u > w.width + 20 || px.v < -20 || px.v > w.height + 20)
        continue;
      const double phase0 = sim_uniform(seed, a, b, kCellPhase);
      const double twinkle = 0.5 + 0.5 * std::sin(2.0 * kPi * (phase0 + 0.8 * fs.t));
      const double sigma = 1.2 + 2.0 * sim_uniform(seed, a, b, kCellSigma + 7);
      const double inten = amp * (0.08 + 0.3 * sim_uniform(seed, a, b, kCellBase + 7));
      out->push_back({px.u, px.v, sigma, inten * twinkle});
    }
  }
}

Raster render_frame(const SimWorld& w, int frame) {
  const FrameState& fs = w.frames[frame];
  Raster img;
  img.width = w.width;
  img.height = w.height;
  img.frame_index = frame;
  img.intensity.assign(static_cast<std::size_t>(w.width) * w.height, 0.18f);

  std::vector<Splat> splats;
  splats.reserve(64);
  add_shimmer_splats(w, fs, &splats);
  for (std::size_t b = 0; b < w.buoys.size(); ++b) {
    const PixelPoint px = project(fs.h, w.buoys[b].position);
    if (px.u < -10 || px.u >= w.width + 10 || px.v < -10 || px.v >= w.height + 10)
      continue;
    const double look = sim_uniform(w.script.seed, 0, buoy_entity(static_cast<int>(b)), kBuoyLook);
    const double sig = 1.8 + 0.5 * sim_uniform(w.script.seed, 0, buoy_entity(static_cast<int>(b)), kBuoyLook2);
    splats.push_back({px.u, px.v, sig, 0.5 + 0.4 * look});
  }
  for (std::size_t li = 0; li < w.geoms.size(); ++li) add_boat_splats(w, fs, li, &splats);

  std::vector<double> row_w, col_w;
  for (const Splat& s : splats) {
    const int r = std::min(60, static_cast<int>(std::ceil(3.0 * s.sigma)));
    const int u0 = std::max(0, static_cast<int>(std::floor(s.u)) - r);
    const int u1 = std::min(w.width - 1, static_cast<int>(std::ceil(s.u)) + r);
    const int v0 = std::max(0, static_cast<int>(std::floor(s.v)) - r);
    const int v1 = std::min(w.height - 1, static_cast<int>(std::ceil(s.v)) + r);
    if (u0 > u1 || v0 > v1) continue;
    const double inv = 1.0 / (2.0 * s.sigma * s.sigma);
    col_w.resize(u1 - u0 + 1);
    row_w.resize(v1 - v0 + 1);
    for (int u = u0; u <= u1; ++u) col_w[u - u0] = std::exp(-(u - s.u) * (u - s.u) * inv);
    for (int v = v0; v <= v1; ++v) row_w[v - v0] = std::exp(-(v - s.v) * (v - s.v) * inv);
    for (int v = v0; v <= v1; ++v) {
      float* line = img.intensity.data() + static_cast<std::size_t>(v) * w.width;
      const double rv = s.a * row_w[v - v0];
      for (int u = u0; u <= u1; ++u) line[u] += static_cast<float>(rv * col_w[u - u0]);
    }
  }
  for (float& p : img.intensity) p = std::clamp(p, 0.0f, 1.0f);
  return img;
}

class SimulatedRasterProvider : public RasterProvider {
 public:
  SimulatedRasterProvider(std::shared_ptr<const SimWorld> world, int capacity)
      : world_(std::move(world)), capacity_(capacity) {}

  int frame_count() const override { return static_cast<int>(world_->frames.size()); }

  const Raster* frame(int index) override {
    if (index < 0 || index >= frame_count())
      throw Error(ErrorCode::MissingRaster, "frame " + std::to_string(index) + " out of range");
    auto it = lookup_.find(index);
    if (it != lookup_.end()) {
      cache_.splice(cache_.begin(), cache_, it->second);
      return &cache_.front().second;
    }
    cache_.emplace_front(index, render_frame(*world_, index));
    lookup_[index] = cache_.begin();
    if (static_cast<int>(cache_.size()) > capacity_) {
      lookup_.erase(cache_.back().first);
      cache_.pop_back();
    }
    return &cache_.front().second;
  }

 private:
  std::shared_ptr<const SimWorld> world_;
  int capacity_;
  std::list<std::pair<int, Raster>> cache_;
  std::unordered_map<int, std::list<std::pair<int, Raster>>::iterator> lookup_;
};

// --- script parsing ---------------------------------------------------------

void script_fail(const std::string& what) { throw Error(ErrorCode::InvalidScript, what); }

}  // namespace

void RaceScript::validate() const {
  course.validate();
  if (!(fps > 0.0 && fps <= 240.0)) script_fail("fps out of range");
  if (image_width < 64 || image_height < 64 || image_width > 8192 || image_height > 8192)
    script_fail("image size out of range");
  if (lanes.empty()) script_fail("no lanes scripted");
  if (!(camera.z_m >= 2.0)) script_fail("camera height must be >= 2 m");
  if (!(camera.target_feature_px > 4.0)) script_fail("target_feature_px too small");
  if (!(camera.feature_height_m > 0.0)) script_fail("feature_height_m must be > 0");
  if (camera.margin_px < 0.0) script_fail("margin_px must be >= 0");
  if (duration_s < 0.0 || tip_window_s < 0.0) script_fail("negative duration");
  std::vector<int> seen;
  for (const LaneScript& l : lanes) {
    if (l.lane < 1 || l.lane > course.lane_count)
      script_fail("lane " + std::to_string(l.lane) + " outside the course");
    if (std::find(seen.begin(), seen.end(), l.lane) != seen.end())
      script_fail("lane " + std::to_string(l.lane) + " scripted twice");
    seen.push_back(l.lane);
    try {
      BoatClass::from_name(l.boat_class);
    } catch (const Error&) {
      script_fail("unknown boat class " + l.boat_class);
    }
    if (!(l.v_peak > 2.0 && l.v_peak < 8.0))
      script_fail("v_peak must lie in (2, 8) m/s");
    if (l.rise_s < 0.0 || l.fade_per_100m < 0.0 || l.runup_m < 0.0 || l.start_stagger_s < 0.0)
      script_fail("negative pacing parameter");
    if (!(l.seat_spacing_m > 0.5 && l.seat_spacing_m < 5.0))
      script_fail("seat_spacing_m out of range");
    if (l.surge_amp_m < 0.0 || l.surge_amp_m > 0.5) script_fail("surge_amp_m out of range");
    if (l.stroke_rate.empty()) script_fail("empty stroke_rate schedule");
    for (std::size_t i = 0; i < l.stroke_rate.size(); ++i) {
      if (!(l.stroke_rate[i].second > 20.0 && l.stroke_rate[i].second < 200.0))
        script_fail("stroke rate outside (20, 200) spm");
      if (i > 0 && l.stroke_rate[i].first < l.stroke_rate[i - 1].first)
        script_fail("stroke_rate distances must be nondecreasing");
    }
    const double total = course.race_distance_m + l.runup_m + 20.0;
    if (l.v_peak - l.fade_per_100m * total / 100.0 < 0.3)
      script_fail("pacing stalls before the finish");
  }
  for (const OcclusionWindow& o : noise.occlusions) {
    if (!(o.from_m < o.to_m)) script_fail("occlusion window must have from < to");
    if (std::find(seen.begin(), seen.end(), o.lane) == seen.end())
      script_fail("occlusion references unscripted lane");
  }
  if (noise.jitter_px < 0 || noise.tip_jitter_px < 0 || noise.shimmer < 0 ||
      noise.athlete_dropout < 0 || noise.athlete_dropout > 1 ||
      noise.buoy_dropout < 0 || noise.buoy_dropout > 1)
    script_fail("noise parameter out of range");
}

RaceScript parse_race_script_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("race script: ") + e.what());
  }
  RaceScript sc;
  try {
    if (j.contains("course")) {
      // Scripts may leave the buoy rows implicit: every lane boundary.
      nlohmann::json cj = j.at("course");
      if (cj.is_object() && !cj.contains("buoy_boundaries"))
        cj["buoy_boundaries"] = nlohmann::json::array();
      sc.course = parse_course_json(cj.dump());
    }
    if (sc.course.buoy_boundaries.empty()) {
      for (int b = 0; b <= sc.course.lane_count; ++b) sc.course.buoy_boundaries.push_back(b);
    }
    sc.fps = j.value("fps", sc.fps);
    sc.seed = j.value("seed", sc.seed);
    sc.duration_s = j.value("duration_s", sc.duration_s);
    sc.tip_window_s = j.value("tip_window_s", sc.tip_window_s);
    if (j.contains("image")) {
      sc.image_width = j.at("image").at(0).get<int>();
      sc.image_height = j.at("image").at(1).get<int>();
    }
    if (j.contains("camera")) {
      const auto& c = j.at("camera");
      sc.camera.x_offset_m = c.value("x_offset_m", sc.camera.x_offset_m);
      sc.camera.y_m = c.value("y_m", sc.camera.y_m);
      sc.camera.z_m = c.value("z_m", sc.camera.z_m);
      if (c.contains("rail")) {
        sc.camera.rail_min_m = c.at("rail").at(0).get<double>();
        sc.camera.rail_max_m = c.at("rail").at(1).get<double>();
      }
      sc.camera.target_feature_px = c.value("target_feature_px", sc.camera.target_feature_px);
      sc.camera.feature_height_m = c.value("feature_height_m", sc.camera.feature_height_m);
      sc.camera.margin_px = c.value("margin_px", sc.camera.margin_px);
    }
    for (const auto& lj : j.value("lanes", nlohmann::json::array())) {
      LaneScript l;
      l.lane = lj.at("lane").get<int>();
      l.boat_class = lj.value("class", l.boat_class);
      l.v_peak = lj.value("v_peak", l.v_peak);
      l.rise_s = lj.value("rise_s", l.rise_s);
      l.fade_per_100m = lj.value("fade_per_100m", l.fade_per_100m);
      l.seat_spacing_m = lj.value("seat_spacing_m", l.seat_spacing_m);
      l.start_stagger_s = lj.value("start_stagger_s", l.start_stagger_s);
      l.runup_m = lj.value("runup_m", l.runup_m);
      l.surge_amp_m = lj.value("surge_amp_m", l.surge_amp_m);
      if (lj.contains("stroke_rate")) {
        l.stroke_rate.clear();
        for (const auto& p : lj.at("stroke_rate"))
          l.stroke_rate.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      }
      sc.lanes.push_back(std::move(l));
    }
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      sc.noise.jitter_px = n.value("jitter_px", 0.0);
      sc.noise.tip_jitter_px = n.value("tip_jitter_px", 0.0);
      sc.noise.athlete_dropout = n.value("athlete_dropout", 0.0);
      sc.noise.buoy_dropout = n.value("buoy_dropout", 0.0);
      sc.noise.shimmer = n.value("shimmer", 0.0);
      for (const auto& oj : n.value("occlusions", nlohmann::json::array())) {
        OcclusionWindow o;
        o.lane = oj.at("lane").get<int>();
        o.seats = oj.value("seats", std::vector<int>{});
        o.from_m = oj.at("from_m").get<double>();
        o.to_m = oj.at("to_m").get<double>();
        sc.noise.occlusions.push_back(std::move(o));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidScript, std::string("race script: ") + e.what());
  }
  sc.validate();
  return sc;
}

RaceScript load_race_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open race script: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_race_script_json(ss.str());
}

// --- simulation --------------------------------------------------------------

SimulationResult simulate(const RaceScript& script_in) {
  RaceScript sc = script_in;
  sc.validate();
  const CourseSpec& course = sc.course;

  auto world = std::make_shared<SimWorld>();
  world->script = sc;
  world->width = sc.image_width;
  world->height = sc.image_height;
  world->buoys = buoy_world_positions(course);

  for (const LaneScript& l : sc.lanes) {
    const BoatClass bc = BoatClass::from_name(l.boat_class);
    BoatGeometry g;
    g.seats = bc.athletes;
    for (int k = 0; k < g.seats; ++k)
      g.seat_offsets.push_back(kTipToFirstSeat + k * l.seat_spacing_m);
    g.length = g.seat_offsets.back() + 1.2;
    g.lane_y = (l.lane - 0.5) * course.lane_width_m;
    world->geoms.push_back(std::move(g));
  }

  double duration = sc.duration_s;
  if (duration <= 0.0) {
    for (const LaneScript& l : sc.lanes) {
      const double ft = finish_time(l, -course.race_distance_m - l.runup_m, 3600.0);
      if (ft < 0.0) script_fail("lane " + std::to_string(l.lane) + " never finishes");
      duration = std::max(duration, ft + 0.6);
    }
  }
  const int frames = static_cast<int>(std::llround(duration * sc.fps)) + 1;

  GroundTruth gt;
  gt.fps = sc.fps;
  std::vector<std::vector<LaneFrameState>> states(sc.lanes.size());
  for (std::size_t i = 0; i < sc.lanes.size(); ++i) {
    const LaneScript& l = sc.lanes[i];
    const double start_x = -course.race_distance_m - l.runup_m;
    std::vector<double> peaks;
    integrate_lane(l, start_x, sc.fps, frames, &states[i], &peaks);
    gt.peaks[l.lane] = std::move(peaks);
    gt.start_x[l.lane] = start_x;
    gt.rate_schedules[l.lane] = l.stroke_rate;
    LaneTruth& lt = gt.tracks[l.lane];
    lt.t.resize(frames);
    lt.x.resize(frames);
    lt.v.resize(frames);
    for (int f = 0; f < frames; ++f) {
      lt.t[f] = f / sc.fps;
      lt.x[f] = states[i][f].x_smooth;
      lt.v[f] = states[i][f].v;
    }
  }

  world->frames.resize(frames);
  gt.world_to_image.resize(frames);
  gt.tips.resize(frames);
  for (int f = 0; f < frames; ++f) {
    FrameState& fs = world->frames[f];
    fs.t = f / sc.fps;
    fs.lanes.resize(sc.lanes.size());
    for (std::size_t i = 0; i < sc.lanes.size(); ++i) {
      const LaneFrameState& s = states[i][f];
      LaneRender& lr = fs.lanes[i];
      lr.x_smooth = s.x_smooth;
      lr.m = std::sin(2.0 * kPi * s.phi);
      lr.x_render = s.x_smooth + sc.lanes[i].surge_amp_m * lr.m;
    }
    fs.cam = solve_camera(sc, world->geoms, fs.lanes, world->width, world->height);
    const Eigen::Matrix3d hm = fs.cam.plane_homography();
    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(hm);
    const double cond = svd.singularValues()(0) / std::max(1e-300, svd.singularValues()(2));
    if (!(cond < kConditionLimit))
      script_fail("camera geometry degenerate at frame " + std::to_string(f));
    fs.h = Homography::from_matrix(hm, f);
    gt.world_to_image[f] = fs.h;
    for (std::size_t i = 0; i < sc.lanes.size(); ++i)
      gt.tips[f][sc.lanes[i].lane] = WorldPoint{fs.lanes[i].x_render, world->geoms[i].lane_y};
  }

  // anchor: middle of the most camera-perpendicular stretch
  double best = 1e30;
  for (int f = 0; f < frames; ++f)
    best = std::min(best, std::abs(world->frames[f].cam.rot(2, 0)));
  int run_lo = -1, run_hi = -1;
  for (int f = 0; f < frames; ++f) {
    if (std::abs(world->frames[f].cam.rot(2, 0)) <= best + 1e-9) {
      if (run_lo < 0) run_lo = f;
      run_hi = f;
    }
  }
  gt.anchor_frame = (run_lo + run_hi) / 2;

  SimulationResult out;
  out.course = course;
  for (const LaneScript& l : sc.lanes) out.course.boat_classes[l.lane] = l.boat_class;
  out.width = world->width;
  out.height = world->height;
  out.fps = sc.fps;

  // anchor correspondences: exact buoy projections in the anchor frame
  const FrameState& af = world->frames[gt.anchor_frame];
  for (const BuoyRef& b : world->buoys) {
    const PixelPoint px = project(af.h, b.position);
    if (px.u < 12 || px.u > world->width - 12 || px.v < 12 || px.v > world->height - 12)
      continue;
    out.anchors.push_back({px, b.position});
  }
  if (out.anchors.size() < 4) script_fail("fewer than 4 buoys visible at the anchor frame");

  // detection stream
  const NoiseModel& nm = sc.noise;
  const int tip_lo = gt.anchor_frame - static_cast<int>(std::lround(sc.tip_window_s * sc.fps));
  const int tip_hi = gt.anchor_frame + static_cast<int>(std::lround(sc.tip_window_s * sc.fps));
  out.stream.resize(frames);
  for (int f = 0; f < frames; ++f) {
    DetectionFrame& df = out.stream[f];
    df.frame = f;
    df.t_s = f / sc.fps;
    const FrameState& fs = world->frames[f];

    for (std::size_t b = 0; b < world->buoys.size(); ++b) {
      const PixelPoint px = project(fs.h, world->buoys[b].position);
      if (px.u < 6 || px.u > world->width - 7 || px.v < 6 || px.v > world->height - 7)
        continue;
      const std::uint64_t ent = buoy_entity(static_cast<int>(b));
      if (sim_uniform(sc.seed, f, ent, kBuoyDrop) < nm.buoy_dropout) continue;
      const double ju = nm.jitter_px * sim_normal(sc.seed, f, ent, kBuoyJitterU);
      const double jv = nm.jitter_px * sim_normal(sc.seed, f, ent, kBuoyJitterV);
      Detection d;
      d.cls = DetectionClass::Buoy;
      d.left = px.u + ju - 4.5;
      d.top = px.v + jv - 4.5;
      d.width = 9.0;
      d.height = 9.0;
      d.confidence = 0.7 + 0.3 * sim_uniform(sc.seed, f, ent, kBuoyConf);
      d.frame_index = f;
      df.detections.push_back(d);
    }

    for (std::size_t i = 0; i < sc.lanes.size(); ++i) {
      const LaneScript& l = sc.lanes[i];
      const BoatGeometry& g = world->geoms[i];
      const LaneRender& lr = fs.lanes[i];
      const double d_traveled = lr.x_smooth - gt.start_x.at(l.lane);
      int tip_det = -1;
      for (int k = 0; k < g.seats; ++k) {
        bool occluded = false;
        for (const OcclusionWindow& o : nm.occlusions) {
          if (o.lane != l.lane) continue;
          if (d_traveled < o.from_m || d_traveled > o.to_m) continue;
          if (o.seats.empty() ||
              std::find(o.seats.begin(), o.seats.end(), k + 1) != o.seats.end()) {
            occluded = true;
            break;
          }
        }
        if (occluded) continue;
        const std::uint64_t ent = athlete_entity(l.lane, k + 1);
        if (sim_uniform(sc.seed, f, ent, kAthleteDrop) < nm.athlete_dropout) continue;

        const double ax = lr.x_render - g.seat_offsets[k];
        const Eigen::Vector3d base(ax, g.lane_y, 0.0);
        if (fs.cam.depth(base) < 2.0) continue;
        const PixelPoint bc = fs.cam.project(base);
        const PixelPoint top = fs.cam.project({ax, g.lane_y, 1.55});
        const PixelPoint aft = fs.cam.project({ax - 0.35, g.lane_y, 0.0});
        const PixelPoint fore = fs.cam.project({ax + 0.35, g.lane_y, 0.0});
        const double wpx = std::abs(fore.u - aft.u);
        const double hpx = std::abs(bc.v - top.v);
        if (wpx < 2.0 || hpx < 2.0) continue;
        const double ju = nm.jitter_px * sim_normal(sc.seed, f, ent, kAthleteJitterU);
        const double jv = nm.jitter_px * sim_normal(sc.seed, f, ent, kAthleteJitterV);
        Detection d;
        d.cls = DetectionClass::Athlete;
        d.left = bc.u + ju - wpx / 2.0;
        d.top = bc.v + jv - hpx;
        d.width = wpx;
        d.height = hpx;
        if (d.left < 0 || d.top < 0 || d.left + d.width > world->width ||
            d.top + d.height > world->height)
          continue;
        d.confidence = 0.7 + 0.3 * sim_uniform(sc.seed, f, ent, kAthleteConf);
        d.frame_index = f;
        PoseKeypoints kp;
        const PixelPoint sh = fs.cam.project({ax, g.lane_y, 1.1});
        const double wrist_z = 1.1 - (0.42 + 0.22 * lr.m);
        const PixelPoint wr = fs.cam.project({ax, g.lane_y, wrist_z});
        kp.shoulder = {sh.u + nm.jitter_px * 0.7 * sim_normal(sc.seed, f, ent, kShoulderU),
                       sh.v + nm.jitter_px * 0.7 * sim_normal(sc.seed, f, ent, kShoulderV)};
        kp.wrist = {wr.u + nm.jitter_px * 0.7 * sim_normal(sc.seed, f, ent, kWristU),
                    wr.v + nm.jitter_px * 0.7 * sim_normal(sc.seed, f, ent, kWristV)};
        d.keypoints = kp;
        if (tip_det < 0) tip_det = static_cast<int>(df.detections.size());
        df.detections.push_back(d);
      }
      if (tip_det >= 0 && f >= tip_lo && f <= tip_hi) {
        const PixelPoint tp = fs.cam.project({lr.x_render, g.lane_y, 0.0});
        df.detections[tip_det].tip =
            PixelPoint{tp.u + nm.tip_jitter_px * sim_normal(sc.seed, f, l.lane, kTipU),
                       tp.v + nm.tip_jitter_px * sim_normal(sc.seed, f, l.lane, kTipV)};
      }
    }
  }

  out.truth = std::move(gt);
  out.rasters = std::make_shared<SimulatedRasterProvider>(world, 6);
  return out;
}

// --- ground truth serialization ----------------------------------------------

void write_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
  nlohmann::json j;
  j["fps"] = gt.fps;
  j["anchor_frame"] = gt.anchor_frame;
  nlohmann::json frames = nlohmann::json::array();
  for (int f = 0; f < gt.frame_count(); ++f) {
    nlohmann::json fj;
    std::vector<double> h(9);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) h[r * 3 + c] = gt.world_to_image[f].m(r, c);
    fj["H"] = h;
    nlohmann::json tips = nlohmann::json::object();
    for (const auto& [lane, p] : gt.tips[f])
      tips[std::to_string(lane)] = std::vector<double>{p.x, p.y};
    fj["tips"] = tips;
    frames.push_back(std::move(fj));
  }
  j["frames"] = std::move(frames);
  nlohmann::json tracks = nlohmann::json::object();
  for (const auto& [lane, lt] : gt.tracks) {
    nlohmann::json tj;
    tj["t"] = lt.t;
    tj["x"] = lt.x;
    tj["v"] = lt.v;
    tracks[std::to_string(lane)] = std::move(tj);
  }
  j["tracks"] = std::move(tracks);
  nlohmann::json peaks = nlohmann::json::object();
  for (const auto& [lane, p] : gt.peaks) peaks[std::to_string(lane)] = p;
  j["peaks"] = std::move(peaks);
  nlohmann::json sched = nlohmann::json::object();
  for (const auto& [lane, s] : gt.rate_schedules) {
    nlohmann::json sj = nlohmann::json::array();
    for (const auto& [d, r] : s) sj.push_back(std::vector<double>{d, r});
    sched[std::to_string(lane)] = std::move(sj);
  }
  j["rate_schedules"] = std::move(sched);
  nlohmann::json sx = nlohmann::json::object();
  for (const auto& [lane, x] : gt.start_x) sx[std::to_string(lane)] = x;
  j["start_x"] = std::move(sx);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump() << "\n";
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  GroundTruth gt;
  try {
    gt.fps = j.at("fps").get<double>();
    gt.anchor_frame = j.at("anchor_frame").get<int>();
    for (const auto& fj : j.at("frames")) {
      const auto h = fj.at("H").get<std::vector<double>>();
      if (h.size() != 9)
        throw Error(ErrorCode::ParseError, path.string() + ": H must have 9 entries");
      Eigen::Matrix3d m;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m(r, c) = h[r * 3 + c];
      gt.world_to_image.push_back(
          Homography::from_matrix(m, static_cast<int>(gt.world_to_image.size())));
      std::map<int, WorldPoint> tips;
      for (const auto& [key, val] : fj.at("tips").items())
        tips[std::stoi(key)] = WorldPoint{val.at(0).get<double>(), val.at(1).get<double>()};
      gt.tips.push_back(std::move(tips));
    }
    for (const auto& [key, val] : j.at("tracks").items()) {
      LaneTruth lt;
      lt.t = val.at("t").get<std::vector<double>>();
      lt.x = val.at("x").get<std::vector<double>>();
      lt.v = val.at("v").get<std::vector<double>>();
      gt.tracks[std::stoi(key)] = std::move(lt);
    }
    for (const auto& [key, val] : j.at("peaks").items())
      gt.peaks[std::stoi(key)] = val.get<std::vector<double>>();
    for (const auto& [key, val] : j.value("rate_schedules", nlohmann::json::object()).items()) {
      std::vector<std::pair<double, double>> s;
      for (const auto& p : val) s.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      gt.rate_schedules[std::stoi(key)] = std::move(s);
    }
    for (const auto& [key, val] : j.value("start_x", nlohmann::json::object()).items())
      gt.start_x[std::stoi(key)] = val.get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return gt;
}

// --- truth profiles -----------------------------------------------------------

TruthProfiles truth_profiles(const GroundTruth& gt, const CourseSpec& spec, int lane) {
  auto it = gt.tracks.find(lane);
  if (it == gt.tracks.end())
    throw Error(ErrorCode::NoOverlap, "no ground truth for lane " + std::to_string(lane));
  const LaneTruth& lt = it->second;
  const int n = spec.segment_count();
  const double d0 = -spec.race_distance_m;
  const double sp = spec.segment_spacing_m;

  std::vector<double> num(n, 0.0), den(n, 0.0);
  for (std::size_t i = 0; i + 1 < lt.x.size(); ++i) {
    double x0 = lt.x[i], x1 = lt.x[i + 1];
    double v0 = lt.v[i], v1 = lt.v[i + 1];
    if (x1 <= x0) continue;
    // split the step at every segment edge it crosses
    double a = x0;
    while (a < x1) {
      const double rel = a - d0;
      const int bin = static_cast<int>(std::floor(rel / sp + 1e-12));
      const double edge = d0 + (bin + 1) * sp;
      const double b = std::min(x1, edge);
      if (bin >= 0 && bin < n && b > a) {
        const double va = v0 + (v1 - v0) * (a - x0) / (x1 - x0);
        const double vb = v0 + (v1 - v0) * (b - x0) / (x1 - x0);
        num[bin] += 0.5 * (va + vb) * (b - a);
        den[bin] += b - a;
      }
      if (b >= x1) break;
      a = std::max(b, a + 1e-12);
    }
  }

  TruthProfiles out;
  const std::vector<double> centers = segment_centers(spec);
  out.velocity.center_m = centers;
  out.velocity.value.assign(n, std::numeric_limits<double>::quiet_NaN());
  out.velocity.present.assign(n, false);
  for (int k = 0; k < n; ++k) {
    if (den[k] > 0.5 * sp) {
      out.velocity.value[k] = num[k] / den[k];
      out.velocity.present[k] = true;
    }
  }

  // stroke truth: analytic mean of the piecewise-linear schedule over each bin
  auto sit = gt.rate_schedules.find(lane);
  auto xit = gt.start_x.find(lane);
  if (sit == gt.rate_schedules.end() || xit == gt.start_x.end())
    throw Error(ErrorCode::NoOverlap, "no rate schedule for lane " + std::to_string(lane));
  const auto& sched = sit->second;
  const double start_x = xit->second;
  LaneScript probe;  // reuse the clamped piecewise evaluation
  probe.stroke_rate = sched;
  auto mean_rate = [&](double dlo, double dhi) {
    // integrate the clamped piecewise-linear schedule over [dlo, dhi]
    std::vector<double> knots{dlo, dhi};
    for (const auto& [d, r] : sched)
      if (d > dlo && d < dhi) knots.push_back(d);
    std::sort(knots.begin(), knots.end());
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
      const double a = knots[i], b = knots[i + 1];
      acc += 0.5 * (lane_rate(probe, a) + lane_rate(probe, b)) * (b - a);
    }
    return acc / std::max(1e-12, dhi - dlo);
  };
  out.stroke.center_m = centers;
  out.stroke.value.assign(n, std::numeric_limits<double>::quiet_NaN());
  out.stroke.present.assign(n, false);
  for (int k = 0; k < n; ++k) {
    if (!out.velocity.present[k]) continue;
    const double xlo = d0 + k * sp;
    const double xhi = xlo + sp;
    out.stroke.value[k] = mean_rate(xlo - start_x, xhi - start_x);
    out.stroke.present[k] = true;
  }
  return out;
}

// --- output -------------------------------------------------------------------

std::string anchors_json(const std::vector<Correspondence>& anchors, int anchor_frame) {
  nlohmann::json j;
  j["frame"] = anchor_frame;
  nlohmann::json list = nlohmann::json::array();
  for (const Correspondence& c : anchors) {
    nlohmann::json e;
    e["image"] = std::vector<double>{c.image.u, c.image.v};
    e["world"] = std::vector<double>{c.world.x, c.world.y};
    list.push_back(std::move(e));
  }
  j["anchors"] = std::move(list);
  return j.dump(2) + "\n";
}

void write_simulation(const SimulationResult& sim, const std::filesystem::path& dir,
                      bool write_rasters) {
  std::filesystem::create_directories(dir);
  write_detection_stream(sim.stream, dir / "stream.jsonl");
  {
    std::ofstream out(dir / "course.json", std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write course.json");
    out << course_json(sim.course);
  }
  {
    std::ofstream out(dir / "anchors.json", std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write anchors.json");
    out << anchors_json(sim.anchors, sim.truth.anchor_frame);
  }
  write_ground_truth(sim.truth, dir / "truth.json");
  if (write_rasters) {
    const std::filesystem::path rdir = dir / "rasters";
    std::filesystem::create_directories(rdir);
    for (int f = 0; f < sim.frame_count(); ++f)
      write_pgm(*sim.rasters->frame(f), rdir / frame_file_name(f));
  }
}

}  // namespace regatta
