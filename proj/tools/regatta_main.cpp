// Command-line front end: reconstruction, simulation, evaluation, ablation.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "regatta/course.hpp"
#include "regatta/detections.hpp"
#include "regatta/errors.hpp"
#include "regatta/kinematics.hpp"
#include "regatta/metrics.hpp"
#include "regatta/pipeline.hpp"
#include "regatta/raster.hpp"
#include "regatta/simulator.hpp"
#include "regatta/svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDataError = 3;
constexpr int kNumericError = 4;

struct CliFailure {
  int code;
};

// A failing config file is a configuration error regardless of the cause;
// everywhere else the error code decides between data and numeric failure.
int classify(const regatta::Error& e, int fallback) {
  switch (e.code()) {
    case regatta::ErrorCode::InvalidCourse:
    case regatta::ErrorCode::InvalidScript:
      return kConfigError;
    case regatta::ErrorCode::ParseError:
    case regatta::ErrorCode::IoError:
    case regatta::ErrorCode::MissingRaster:
    case regatta::ErrorCode::DimensionMismatch:
      return kDataError;
    default:
      return fallback;
  }
}

template <typename Fn>
auto config_phase(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    throw CliFailure{kConfigError};
  }
}

template <typename Fn>
auto data_phase(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    throw CliFailure{kDataError};
  }
}

template <typename Fn>
auto run_phase(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const regatta::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    throw CliFailure{classify(e, kNumericError)};
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    throw CliFailure{kNumericError};
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw regatta::Error(regatta::ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw regatta::Error(regatta::ErrorCode::IoError, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// recon

struct ReconArgs {
  std::string course, stream, anchors, rasters, out;
  std::string mode = "linear";
  std::string stroke = "pose";
};

regatta::PipelineOptions recon_options(const ReconArgs& a) {
  regatta::PipelineOptions opt;
  if (a.mode == "linear") {
    opt.mode = regatta::FillMode::Linear;
  } else if (a.mode == "flow-causal") {
    opt.mode = regatta::FillMode::FlowCausal;
  } else {
    opt.mode = regatta::FillMode::FlowNoncausal;
  }
  opt.policy = regatta::PositionPolicy::Default;
  opt.stroke_source = a.stroke == "bbox" ? regatta::MotionSource::BboxBrightness
                                         : regatta::MotionSource::PoseDistance;
  return opt;
}

int cmd_recon(const ReconArgs& a) {
  regatta::CourseSpec spec = config_phase([&] { return regatta::load_course(a.course); });
  auto stream = data_phase([&] { return regatta::read_detection_stream(a.stream); });
  regatta::AnchorFile anchors = data_phase([&] { return regatta::load_anchors(a.anchors); });
  std::unique_ptr<regatta::RasterProvider> rasters;
  if (!a.rasters.empty())
    rasters = data_phase([&] {
      return std::make_unique<regatta::DirectoryRasterProvider>(fs::path(a.rasters));
    });

  regatta::PipelineResult result = run_phase([&] {
    return regatta::run_pipeline(spec, stream, anchors, rasters.get(), recon_options(a));
  });
  run_phase([&] {
    fs::create_directories(a.out);
    regatta::write_pipeline_outputs(result, a.out);
    return 0;
  });

  for (const std::string& note : result.notes) std::cerr << "note: " << note << "\n";
  int flagged = 0;
  for (int f = 0; f < result.homographies.frame_count(); ++f)
    flagged += result.homographies.flagged(f) ? 1 : 0;
  std::cout << "anchor frame " << result.homographies.anchor_frame << ", "
            << result.homographies.frame_count() << " frames, " << flagged << " flagged\n";
  for (const auto& [lane, lr] : result.lanes) {
    int segs = 0;
    for (bool p : lr.velocity_profile.present) segs += p ? 1 : 0;
    std::cout << "lane " << lane << " " << lr.boat_class.name << ": " << lr.complete_frames
              << " complete frames, " << segs << "/" << lr.velocity_profile.size()
              << " velocity segments, stroke "
              << (lr.stroke_valid ? std::to_string(lr.peaks.t.size()) + " peaks"
                                  : "unavailable (" + lr.stroke_note + ")")
              << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string script, out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool no_rasters = false;
};

int cmd_simulate(const SimulateArgs& a) {
  regatta::RaceScript script = config_phase([&] { return regatta::load_race_script(a.script); });
  if (a.seed_given) script.seed = a.seed;

  regatta::SimulationResult sim = run_phase([&] { return regatta::simulate(script); });
  run_phase([&] {
    fs::create_directories(a.out);
    regatta::write_simulation(sim, a.out, !a.no_rasters);
    for (const auto& [lane, track] : sim.truth.tracks) {
      (void)track;
      regatta::TruthProfiles tp = regatta::truth_profiles(sim.truth, sim.course, lane);
      const std::string suffix = "_lane" + std::to_string(lane) + ".csv";
      regatta::write_profile_csv(tp.velocity, fs::path(a.out) / ("truth_velocity" + suffix),
                                 "velocity_mps");
      regatta::write_profile_csv(tp.stroke, fs::path(a.out) / ("truth_stroke" + suffix),
                                 "stroke_rate_spm");
    }
    return 0;
  });

  std::cout << sim.frame_count() << " frames at " << sim.fps << " fps, " << sim.width << "x"
            << sim.height << ", anchor frame " << sim.truth.anchor_frame << ", "
            << sim.truth.tracks.size() << " lanes, seed " << script.seed << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string pred, truth, out;
};

json agreement_json(const regatta::AgreementReport& rep) {
  json j;
  j["rmse"] = rep.rmse;
  j["rrmse"] = rep.rrmse;
  j["rrmse_definition"] = rep.rrmse_definition;
  j["spearman_defined"] = rep.spearman_defined;
  if (rep.spearman_defined)
    j["spearman_rho"] = rep.spearman_rho;
  else
    j["spearman_rho"] = nullptr;
  j["bland_altman"] = {{"mean", rep.ba_mean}, {"lo", rep.ba_lo}, {"hi", rep.ba_hi}};
  j["shared_segments"] = rep.shared_segments;
  return j;
}

void write_agreement_svg(const regatta::AgreementReport& rep, const fs::path& path) {
  regatta::SvgChart chart;
  chart.title = "prediction - reference agreement";
  chart.x_label = "segment center (m)";
  chart.y_label = "error";
  regatta::SvgSeries pts;
  pts.x = rep.center_m;
  pts.y = rep.error;
  pts.points_only = true;
  pts.label = "per-segment error";
  chart.series.push_back(std::move(pts));
  chart.hlines = {rep.ba_lo, rep.ba_mean, rep.ba_hi};
  regatta::write_svg_chart(chart, path);
}

int cmd_evaluate(const EvaluateArgs& a) {
  regatta::SegmentProfile pred = data_phase([&] { return regatta::read_profile_csv(a.pred); });
  regatta::SegmentProfile truth = data_phase([&] { return regatta::read_profile_csv(a.truth); });
  regatta::AgreementReport rep =
      run_phase([&] { return regatta::agreement_report(pred, truth); });
  run_phase([&] {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "metrics.json", agreement_json(rep).dump(2) + "\n");
    write_agreement_svg(rep, fs::path(a.out) / "agreement.svg");
    return 0;
  });

  std::cout << "rmse " << rep.rmse << ", rrmse " << rep.rrmse << ", spearman "
            << (rep.spearman_defined ? std::to_string(rep.spearman_rho) : "n/a")
            << ", limits [" << rep.ba_lo << ", " << rep.ba_hi << "] over "
            << rep.shared_segments << " segments\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
  std::string scenario, out;
};

struct AblationArm {
  const char* name;
  regatta::FillMode mode;
  regatta::PositionPolicy policy;
};

constexpr AblationArm kArms[] = {
    {"linear", regatta::FillMode::Linear, regatta::PositionPolicy::CompleteOnly},
    {"ordering", regatta::FillMode::Linear, regatta::PositionPolicy::AvailableSeats},
    {"flow-causal", regatta::FillMode::FlowCausal, regatta::PositionPolicy::Default},
    {"flow-noncausal", regatta::FillMode::FlowNoncausal, regatta::PositionPolicy::Default},
};

int cmd_ablate(const AblateArgs& a) {
  regatta::RaceScript script =
      config_phase([&] { return regatta::load_race_script(a.scenario); });
  regatta::SimulationResult sim = run_phase([&] { return regatta::simulate(script); });
  regatta::AnchorFile anchors{sim.anchors, sim.truth.anchor_frame};

  json comparison;
  std::string csv = "mode,lane,rmse_mps,rrmse,shared_segments\n";
  std::cout << "mode            lane  rmse_mps   rrmse\n";
  for (const AblationArm& arm : kArms) {
    regatta::PipelineOptions opt;
    opt.mode = arm.mode;
    opt.policy = arm.policy;
    opt.seed = script.seed;
    regatta::PipelineResult result = run_phase([&] {
      return regatta::run_pipeline(sim.course, sim.stream, anchors, sim.rasters.get(), opt);
    });
    run_phase([&] {
      fs::create_directories(fs::path(a.out) / arm.name);
      regatta::write_pipeline_outputs(result, fs::path(a.out) / arm.name);
      return 0;
    });
    for (const auto& [lane, lr] : result.lanes) {
      // Only scripted lanes have truth; stray clutter lanes are not scored.
      if (!sim.truth.tracks.count(lane)) continue;
      auto row = run_phase([&] {
        regatta::TruthProfiles tp = regatta::truth_profiles(sim.truth, sim.course, lane);
        regatta::AgreementReport rep = regatta::agreement_report(lr.velocity_profile, tp.velocity);
        return rep;
      });
      comparison[arm.name]["lane" + std::to_string(lane)] = {
          {"rmse_mps", row.rmse}, {"rrmse", row.rrmse}, {"shared_segments", row.shared_segments}};
      char line[160];
      std::snprintf(line, sizeof line, "%s,%d,%.10g,%.10g,%d\n", arm.name, lane, row.rmse,
                    row.rrmse, row.shared_segments);
      csv += line;
      std::snprintf(line, sizeof line, "%-15s %4d  %8.4f  %6.4f\n", arm.name, lane, row.rmse,
                    row.rrmse);
      std::cout << line;
    }
  }
  run_phase([&] {
    write_text(fs::path(a.out) / "comparison.json", comparison.dump(2) + "\n");
    write_text(fs::path(a.out) / "comparison.csv", csv);
    return 0;
  });
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Race reconstruction from detection streams of panned regatta video"};
  app.require_subcommand(1);

  ReconArgs recon_args;
  CLI::App* recon = app.add_subcommand("recon", "Reconstruct trajectories and profiles");
  recon->add_option("--course", recon_args.course, "course configuration JSON")->required();
  recon->add_option("--stream", recon_args.stream, "detection stream JSONL")->required();
  recon->add_option("--anchors", recon_args.anchors, "anchor correspondences JSON")->required();
  recon->add_option("--rasters", recon_args.rasters, "directory of frame_%06d.pgm frames");
  recon->add_option("--mode", recon_args.mode, "gap fill mode")
      ->check(CLI::IsMember({"linear", "flow-causal", "flow-noncausal"}));
  recon->add_option("--stroke", recon_args.stroke, "stroke-rate signal source")
      ->check(CLI::IsMember({"pose", "bbox"}));
  recon->add_option("--out", recon_args.out, "output directory")->required();

  SimulateArgs sim_args;
  CLI::App* simulate = app.add_subcommand("simulate", "Render a scripted race");
  simulate->add_option("--script", sim_args.script, "race script JSON")->required();
  simulate->add_option("--out", sim_args.out, "output directory")->required();
  CLI::Option* seed_opt = simulate->add_option("--seed", sim_args.seed, "override script seed");
  simulate->add_flag("--no-rasters", sim_args.no_rasters, "skip writing PGM frames");

  EvaluateArgs eval_args;
  CLI::App* evaluate = app.add_subcommand("evaluate", "Compare two segment profile CSVs");
  evaluate->add_option("--pred", eval_args.pred, "predicted profile CSV")->required();
  evaluate->add_option("--truth", eval_args.truth, "reference profile CSV")->required();
  evaluate->add_option("--out", eval_args.out, "output directory")->required();

  AblateArgs ablate_args;
  CLI::App* ablate = app.add_subcommand("ablate", "Compare gap fill modes on one scenario");
  ablate->add_option("--scenario", ablate_args.scenario, "race script JSON")->required();
  ablate->add_option("--out", ablate_args.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }
  sim_args.seed_given = seed_opt->count() > 0;

  try {
    if (*recon) return cmd_recon(recon_args);
    if (*simulate) return cmd_simulate(sim_args);
    if (*evaluate) return cmd_evaluate(eval_args);
    if (*ablate) return cmd_ablate(ablate_args);
  } catch (const CliFailure& f) {
    return f.code;
  }
  return kConfigError;
}
