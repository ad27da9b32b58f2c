#include "cem/cli.hpp"

#include <glob.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cem/degradations.hpp"
#include "cem/engine.hpp"
#include "cem/error.hpp"
#include "cem/hash.hpp"
#include "cem/imaging.hpp"
#include "cem/library.hpp"
#include "cem/model.hpp"
#include "cem/reporting.hpp"

namespace cem::cli {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::vector<int> parse_ints(const std::string& text, std::size_t count, const char* what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw UsageError(std::string("bad ") + what + " '" + text + "'");
    }
  }
  if (out.size() != count)
    throw UsageError(std::string(what) + " needs " + std::to_string(count) +
                     " comma-separated integers, got '" + text + "'");
  return out;
}

Range parse_range(const std::string& text, const char* what) {
  const auto comma = text.find(',');
  try {
    if (comma == std::string::npos) {
      const double v = std::stod(text);
      return {v, v};
    }
    return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
  } catch (const std::logic_error&) {
    throw UsageError(std::string("bad ") + what + " range '" + text + "'");
  }
}

std::string iso_utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string join_args(const std::vector<std::string>& args) {
  std::string out;
  for (const auto& a : args) {
    if (!out.empty()) out += ' ';
    out += a.find_first_of(" \t\"'") == std::string::npos ? a : "'" + a + "'";
  }
  return out;
}

void write_json(const ojson& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

ojson run_manifest(const std::vector<std::string>& args, ojson config, ojson hashes,
                   std::uint64_t inferences, double elapsed_s, const std::string& started) {
  ojson m;
  m["tool"] = "cem";
  m["tool_version"] = kToolVersion;
  m["command_line"] = join_args(args);
  m["config"] = std::move(config);
  m["hashes"] = std::move(hashes);
  m["started_at"] = started;
  m["wall_clock_seconds"] = elapsed_s;
  m["inferences"] = inferences;
  return m;
}

std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_value) {
  if (opt->count() > 0) return flag_value;
  if (const char* env = std::getenv("CEM_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      return v;
    } catch (const std::logic_error&) {
      throw UsageError(std::string("CEM_SEED='") + env + "' is not an unsigned integer");
    }
  }
  return 0;
}

struct DegradationFlags {
  std::string task;
  int scale = 4;
  double sigma = 50.0;
  RainParams rain;
  std::string rain_length = "20,40", rain_width = "1,2", rain_angle = "70,110",
              rain_intensity = "0.2,0.5";

  void add_to(CLI::App* app) {
    app->add_option("--task", task, "Degradation task: sr | dn | dr")->required();
    app->add_option("--scale", scale, "SR downsampling factor")->capture_default_str();
    app->add_option("--sigma", sigma, "DN noise level on the 8-bit scale")->capture_default_str();
    app->add_option("--rain-density", rain.density_per_megapixel, "DR streaks per megapixel")
        ->capture_default_str();
    app->add_option("--rain-length", rain_length, "DR streak length range LO,HI (px)")
        ->capture_default_str();
    app->add_option("--rain-width", rain_width, "DR streak width range LO,HI (px)")
        ->capture_default_str();
    app->add_option("--rain-angle", rain_angle, "DR angle range LO,HI (deg from horizontal)")
        ->capture_default_str();
    app->add_option("--rain-intensity", rain_intensity, "DR additive intensity range LO,HI")
        ->capture_default_str();
  }

  DegradationSpec resolve() {
    DegradationSpec spec;
    try {
      spec.task = parse_task(task);
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
    spec.scale = scale;
    spec.sigma = sigma;
    spec.rain = rain;
    spec.rain.length_px = parse_range(rain_length, "rain length");
    spec.rain.width_px = parse_range(rain_width, "rain width");
    spec.rain.angle_deg = parse_range(rain_angle, "rain angle");
    spec.rain.intensity = parse_range(rain_intensity, "rain intensity");
    try {
      spec.validate();
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
    return spec;
  }
};

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal effect maps for image-restoration models", "cem"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  // library build
  auto* library = app.add_subcommand("library", "Intervention library commands");
  library->require_subcommand(1);
  auto* build = library->add_subcommand("build", "Build an intervention library");
  std::string images_dir, lib_out;
  DegradationFlags lib_deg;
  int lib_patch = 8;
  std::size_t pool = 20000;
  std::uint64_t lib_seed = 0;
  build->add_option("--images", images_dir, "Directory of clean natural PNG images")->required();
  lib_deg.add_to(build);
  build->add_option("--patch-size", lib_patch, "Patch size in pixels")->capture_default_str();
  build->add_option("--pool", pool, "Number of pooled patches")->capture_default_str();
  auto* lib_seed_opt = build->add_option("--seed", lib_seed, "Build seed (default $CEM_SEED or 0)");
  build->add_option("--out", lib_out, "Output library directory")->required();

  // degrade
  auto* degrade_cmd = app.add_subcommand("degrade", "Degrade a clean image");
  std::string deg_in, deg_out;
  DegradationFlags deg_flags;
  std::uint64_t deg_seed = 0;
  std::uint32_t deg_stream = 0;
  degrade_cmd->add_option("--input", deg_in, "Clean PNG")->required();
  deg_flags.add_to(degrade_cmd);
  auto* deg_seed_opt = degrade_cmd->add_option("--seed", deg_seed, "Seed (default $CEM_SEED or 0)");
  degrade_cmd->add_option("--stream", deg_stream, "Per-image stream id")->capture_default_str();
  degrade_cmd->add_option("--out", deg_out, "Degraded PNG")->required();

  // run
  auto* run = app.add_subcommand("run", "Compute a causal effect map");
  std::string model_ref, input_path, gt_path, roi_text, lib_path, run_out;
  std::string mode = "fast", sampling = "density", coarse_sampling, metric = "rgb";
  EngineConfig cfg;
  double epsilon = -1.0;
  bool crop_to_multiple = false;
  double handshake_s = 30.0;
  std::uint64_t run_seed = 0;
  int display = 4;
  run->add_option("--model", model_ref,
                  "builtin:NAME | subprocess:\"CMD\" | onnx:FILE")->required();
  run->add_option("--input", input_path, "Degraded input PNG")->required();
  run->add_option("--gt", gt_path, "Ground-truth PNG (input size x model scale)")->required();
  run->add_option("--roi", roi_text, "ROI X,Y,W,H in output coordinates")->required();
  run->add_option("--library", lib_path, "Intervention library directory")->required();
  run->add_option("--mode", mode, "full | fast")->capture_default_str();
  run->add_option("--T", cfg.T, "Interventions per patch (full)")->capture_default_str();
  run->add_option("--C", cfg.C, "Coarse interventions (fast)")->capture_default_str();
  run->add_option("--F", cfg.F, "Fine interventions (fast)")->capture_default_str();
  run->add_option("--tau", cfg.tau, "Coarse tolerance in dB")->capture_default_str();
  run->add_option("--sampling", sampling, "density | uniform")->capture_default_str();
  run->add_option("--coarse-sampling", coarse_sampling, "Coarse-stage sampling (default: --sampling)");
  run->add_option("--patch-size", cfg.patch_size, "Patch size in pixels")->capture_default_str();
  run->add_option("--metric", metric, "PSNR channels: rgb | luma")->capture_default_str();
  run->add_option("--epsilon", epsilon, "None-class threshold in dB (default: tau)");
  auto* run_seed_opt = run->add_option("--seed", run_seed, "Seed (default $CEM_SEED or 0)");
  run->add_option("--workers", cfg.workers, "Worker threads (0 = all cores)")->capture_default_str();
  run->add_flag("--crop-to-multiple", crop_to_multiple,
                "Crop input (and GT correspondingly) to a multiple of the patch size");
  run->add_option("--handshake-timeout", handshake_s, "Subprocess handshake timeout (s)")
      ->capture_default_str();
  run->add_option("--display-factor", display, "Heatmap display upscale")->capture_default_str();
  run->add_option("--out", run_out, "Output directory")->required();

  // compare
  auto* compare = app.add_subcommand("compare", "Similarity score of two CEMs");
  std::string cmp_a, cmp_b;
  compare->add_option("--a", cmp_a, "Reference CEM")->required();
  compare->add_option("--b", cmp_b, "Candidate CEM")->required();

  // render
  auto* render = app.add_subcommand("render", "Render a CEM overlay");
  std::string render_cem, render_input, render_out;
  int render_display = 4;
  render->add_option("--cem", render_cem, "CEM JSON")->required();
  render->add_option("--input", render_input, "Input PNG the CEM was computed on")->required();
  render->add_option("--out", render_out, "Output PNG")->required();
  render->add_option("--display-factor", render_display, "Display upscale")->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "Tabulate effect statistics");
  std::string pattern, report_out, format = "csv", reference;
  report->add_option("--glob", pattern, "Glob of CEM JSON files")->required();
  report->add_option("--out", report_out, "Output file")->required();
  report->add_option("--format", format, "csv | json")->capture_default_str();
  report->add_option("--reference", reference, "Reference CEM for the similarity column");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << kToolVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  std::vector<std::string> full_args{"cem"};
  full_args.insert(full_args.end(), args.begin(), args.end());

  try {
    const std::string started = iso_utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    if (build->parsed()) {
      const DegradationSpec spec = lib_deg.resolve();
      LibraryBuildOptions opts;
      opts.patch_size = lib_patch;
      opts.pool_size = pool;
      opts.seed = resolve_seed(lib_seed_opt, lib_seed);
      if (lib_patch < 2) throw UsageError("--patch-size must be >= 2");
      if (pool == 0) throw UsageError("--pool must be positive");
      const InterventionLibrary lib = build_library(images_dir, spec, opts);
      save_library(lib, lib_out);
      ojson config;
      config["degradation"] = ojson::parse(nlohmann::json(spec).dump());
      config["patch_size"] = lib_patch;
      config["pool"] = pool;
      config["seed"] = opts.seed;
      ojson hashes;
      for (const auto& s : lib.sources) hashes[s.path] = s.sha256;
      write_json(run_manifest(full_args, config, hashes, 0, elapsed(), started),
                 fs::path(lib_out) / "run_manifest.json");
      out << "library: " << lib.size() << " patches from " << lib.sources.size()
          << " images -> " << lib_out << '\n';
      return 0;
    }

    if (degrade_cmd->parsed()) {
      const DegradationSpec spec = deg_flags.resolve();
      const std::uint64_t seed = resolve_seed(deg_seed_opt, deg_seed);
      ImageBuffer clean = read_image(deg_in);
      if (spec.task == Task::sr && (clean.height() % spec.scale || clean.width() % spec.scale))
        throw UsageError("input size is not divisible by --scale " + std::to_string(spec.scale));
      write_image(degrade(clean, spec, seed, deg_stream), deg_out);
      ojson config;
      config["degradation"] = ojson::parse(nlohmann::json(spec).dump());
      config["seed"] = seed;
      config["stream"] = deg_stream;
      write_json(run_manifest(full_args, config, {{"input", sha256_file(deg_in)}}, 0,
                              elapsed(), started),
                 fs::path(deg_out).string() + ".manifest.json");
      out << "wrote " << deg_out << '\n';
      return 0;
    }

    if (run->parsed()) {
      try {
        cfg.mode = parse_mode(mode);
        cfg.sampling = parse_sampling(sampling);
        if (!coarse_sampling.empty()) cfg.coarse_sampling = parse_sampling(coarse_sampling);
        if (metric == "rgb")
          cfg.metric = ChannelMode::rgb;
        else if (metric == "luma")
          cfg.metric = ChannelMode::luma;
        else
          throw UsageError("--metric must be rgb or luma");
        if (epsilon >= 0.0) cfg.epsilon_classify = epsilon;
        cfg.seed = resolve_seed(run_seed_opt, run_seed);
        cfg.validate();
      } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
      }
      const auto roi_v = parse_ints(roi_text, 4, "--roi");
      const RoiRect roi{roi_v[0], roi_v[1], roi_v[2], roi_v[3]};

      ImageBuffer input = read_image(input_path);
      ImageBuffer gt = read_image(gt_path);
      InterventionLibrary lib = load_library(lib_path);
      if (lib.patch_size != cfg.patch_size)
        throw UsageError("library patch size " + std::to_string(lib.patch_size) +
                         " differs from --patch-size " + std::to_string(cfg.patch_size));
      if (lib.channels != input.channels()) {
        if (lib.channels == 3) {
          input = to_rgb(input);
          gt = to_rgb(gt);
        } else {
          input = to_gray(input);
          gt = to_gray(gt);
        }
      }

      SubprocessOptions sp;
      sp.handshake_timeout = std::chrono::milliseconds(std::int64_t(handshake_s * 1000));
      sp.pool_size = cfg.resolved_workers();
      ModelHandle model = open_model(model_ref, sp);
      const int scale = model->info().scale;

      const int p = cfg.patch_size;
      if (input.height() % p != 0 || input.width() % p != 0) {
        if (!crop_to_multiple)
          throw UsageError("input size " + std::to_string(input.width()) + "x" +
                           std::to_string(input.height()) +
                           " is not divisible by patch size " + std::to_string(p) +
                           "; pass --crop-to-multiple to crop input and GT");
        input = cem::crop_to_multiple(input, p);
      }
      if (crop_to_multiple) {
        const RoiRect gt_rect{0, 0, input.width() * scale, input.height() * scale};
        if (gt.width() < gt_rect.w || gt.height() < gt_rect.h)
          throw UsageError("ground truth is smaller than the input times the model scale");
        gt = crop_region(gt, gt_rect);
      }
      if (gt.height() != input.height() * scale || gt.width() != input.width() * scale)
        throw UsageError("ground truth is " + std::to_string(gt.width()) + "x" +
                         std::to_string(gt.height()) + ", expected input size x" +
                         std::to_string(scale) + " = " + std::to_string(input.width() * scale) +
                         "x" + std::to_string(input.height() * scale));
      try {
        check_inside(roi, gt.height(), gt.width());
      } catch (const DimensionError& e) {
        throw UsageError(std::string("--roi: ") + e.what());
      }
      if (!model->info().deterministic)
        err << "warning: model is not deterministic; the CEM is reproducible in "
               "distribution only\n";

      CemProblem problem(model, input, gt, roi, p, cfg.metric);
      const GradientDensity density = estimate_density(lib, cfg.density_bins);
      CausalEffectMap cem = compute_cem(problem, lib, density, cfg);
      cem.input_path = input_path;
      cem.input_hash = sha256_file(input_path);
      cem.gt_path = gt_path;
      cem.gt_hash = sha256_file(gt_path);

      fs::create_directories(run_out);
      write_cem_json(cem, fs::path(run_out) / "cem.json");
      HeatmapOptions hopts;
      hopts.display_factor = display;
      render_heatmap(cem, input, fs::path(run_out) / "heatmap.png", hopts);

      ojson config;
      const auto doc = cem_to_json(cem);
      config = doc["config"];
      config["patch_size"] = p;
      config["workers"] = cfg.resolved_workers();
      config["metric"] = metric;
      config["epsilon"] = cfg.epsilon();
      config["model"] = model_ref;
      config["roi"] = doc["roi"];
      config["reproducibility"] = model->info().deterministic ? "bitwise" : "in-distribution";
      ojson hashes{{"input", cem.input_hash},
                   {"gt", cem.gt_hash},
                   {"library_pool", sha256_file(fs::path(lib_path) / "pool.bin")},
                   {"library_manifest", sha256_file(fs::path(lib_path) / "manifest.json")}};
      write_json(run_manifest(full_args, config, hashes, cem.inference_count, elapsed(), started),
                 fs::path(run_out) / "manifest.json");
      const EffectStats s = classify_effects(cem, cfg.epsilon());
      out << std::fixed << std::setprecision(2) << "baseline " << cem.baseline_db
          << " dB, inferences " << cem.inference_count << ", positive " << s.positive_pct
          << "%, negative " << s.negative_pct << "%, none " << s.none_pct << "% -> "
          << run_out << '\n';
      return 0;
    }

    if (compare->parsed()) {
      const CausalEffectMap a = read_cem_json(cmp_a);
      const CausalEffectMap b = read_cem_json(cmp_b);
      out << "similarity: " << std::fixed << std::setprecision(2) << similarity_score(a, b)
          << "%\n";
      return 0;
    }

    if (render->parsed()) {
      const CausalEffectMap cem = read_cem_json(render_cem);
      HeatmapOptions hopts;
      hopts.display_factor = render_display;
      ImageBuffer input = read_image(render_input);
      render_heatmap(cem, input, render_out, hopts);
      write_json(run_manifest(full_args, {{"display_factor", render_display}},
                              {{"cem", sha256_file(render_cem)},
                               {"input", sha256_file(render_input)}},
                              0, elapsed(), started),
                 render_out + ".manifest.json");
      out << "wrote " << render_out << '\n';
      return 0;
    }

    if (report->parsed()) {
      glob_t g{};
      const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
      std::vector<fs::path> files;
      if (rc == 0)
        for (std::size_t i = 0; i < g.gl_pathc; ++i) files.emplace_back(g.gl_pathv[i]);
      globfree(&g);
      if (files.empty()) throw UsageError("--glob '" + pattern + "' matched no files");
      std::sort(files.begin(), files.end());
      std::optional<fs::path> ref;
      if (!reference.empty()) ref = reference;
      ReportFormat fmt;
      try {
        fmt = parse_report_format(format);
      } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
      }
      export_report(files, report_out, fmt, ref);
      ojson hashes;
      for (const auto& f : files) hashes[f.string()] = sha256_file(f);
      write_json(run_manifest(full_args, {{"format", format}, {"glob", pattern}}, hashes, 0,
                              elapsed(), started),
                 report_out + ".manifest.json");
      out << "report: " << files.size() << " CEMs + aggregate -> " << report_out << '\n';
      return 0;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace cem::cli
