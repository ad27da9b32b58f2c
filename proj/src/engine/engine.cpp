#include "cem/engine.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "cem/error.hpp"
#include "parallel.hpp"

namespace cem {
namespace {

void check_library(const CemProblem& problem, const InterventionLibrary& library,
                   const GradientDensity& density) {
  if (library.pool.empty()) throw InvalidArgument("intervention library is empty");
  if (library.patch_size != problem.grid().patch_size)
    throw DimensionError("library patch size " + std::to_string(library.patch_size) +
                         " does not match grid patch size " +
                         std::to_string(problem.grid().patch_size));
  if (library.channels != problem.input().channels())
    throw DimensionError("library has " + std::to_string(library.channels) +
                         " channels, input has " +
                         std::to_string(problem.input().channels()));
  std::size_t members = 0;
  for (const auto& m : density.members) members += m.size();
  if (members != library.size())
    throw InvalidArgument("gradient density was estimated from a different library");
}

void check_outside(const CemProblem& problem, int patch_index) {
  if (patch_index < 0 || patch_index >= problem.grid().count())
    throw InvalidArgument("patch index " + std::to_string(patch_index) + " out of range");
  if (problem.footprint().is_inside[patch_index])
    throw InvalidArgument("patch " + std::to_string(patch_index) +
                          " overlaps the ROI footprint and cannot be intervened");
}

// Copies the original content of `rect` from `source` back into `scratch`.
void restore_cell(ImageBuffer& scratch, const ImageBuffer& source, const RoiRect& rect) {
  const std::size_t row = std::size_t(rect.w) * source.channels();
  const auto src = source.data();
  auto dst = scratch.mutable_data();
  for (int y = rect.y; y < rect.y + rect.h; ++y) {
    const std::size_t off = source.index(y, rect.x);
    std::copy(src.begin() + off, src.begin() + off + row, dst.begin() + off);
  }
}

std::uint32_t draw_index(const InterventionLibrary& library, const GradientDensity& density,
                         Draw draw, CounterRng& rng, int t) {
  switch (draw) {
    case Draw::density: return sample_index(library, density, SamplingMode::density, rng);
    case Draw::uniform: return sample_index(library, density, SamplingMode::uniform, rng);
    case Draw::enumerate: return std::uint32_t(t);
  }
  return 0;
}

// Fills out[0..n) with post-intervention scores; `scratch` must equal the
// input on entry and is restored on exit.
void score_patch(const CemProblem& problem, const InterventionLibrary& library,
                 const GradientDensity& density, int patch_index, int n, Draw draw,
                 StreamAddress stream, ImageBuffer& scratch, double* out) {
  if (draw == Draw::enumerate && std::size_t(n) > library.size())
    throw InvalidArgument("enumeration needs n <= pool size");
  const RoiRect cell = problem.grid().cell(patch_index);
  for (int t = 0; t < n; ++t) {
    CounterRng rng(stream.seed, stream.stage, std::uint32_t(patch_index), std::uint32_t(t));
    const std::uint32_t pick = draw_index(library, density, draw, rng, t);
    paste_patch_into(scratch, cell, library.pool[pick]);
    out[t] = problem.measure(scratch);
  }
  restore_cell(scratch, problem.input(), cell);
}

// Averaging the per-intervention drops (rather than subtracting the mean score)
// keeps an effect exactly zero when every intervention reproduces the baseline.
double mean_drop(double base, const double* v, int n) {
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += base - v[i];
  return sum / n;
}

CausalEffectMap empty_map(const CemProblem& problem, const EngineConfig& config,
                          const InterventionLibrary& library) {
  CausalEffectMap cem;
  cem.grid = problem.grid();
  cem.effects.assign(cem.grid.count(), 0.0);
  cem.intervention_counts.assign(cem.grid.count(), 0);
  for (int i : problem.footprint().inside) cem.effects[i] = kRoiSentinel;
  cem.baseline_db = problem.baseline_db();
  cem.roi = problem.roi();
  cem.model = problem.model().info();
  cem.degradation = library.degradation;
  cem.config = config;
  return cem;
}

struct Workspace {
  explicit Workspace(const CemProblem& problem, int workers)
      : scratch(std::size_t(workers), problem.input()) {}
  std::vector<ImageBuffer> scratch;
};

void check_config(const CemProblem& problem, const EngineConfig& config) {
  config.validate();
  if (config.patch_size != problem.grid().patch_size)
    throw InvalidArgument("config patch size does not match the problem grid");
}

void check_count(const CausalEffectMap& cem, std::uint64_t used) {
  // The run's own tally must agree with the closed-form budget.
  const std::uint64_t expected =
      inference_count(cem.config, std::uint64_t(cem.grid.count()) -
                                      std::uint64_t(std::count(cem.effects.begin(),
                                                               cem.effects.end(),
                                                               kRoiSentinel)),
                      std::uint64_t(cem.sensitive_count));
  if (used != expected)
    throw std::logic_error("inference tally " + std::to_string(used) +
                           " disagrees with budget " + std::to_string(expected));
}

}  // namespace

std::string to_string(RunMode mode) { return mode == RunMode::full ? "full" : "fast"; }

RunMode parse_mode(const std::string& name) {
  if (name == "full") return RunMode::full;
  if (name == "fast") return RunMode::fast;
  throw InvalidArgument("unknown mode '" + name + "' (full|fast)");
}

void EngineConfig::validate() const {
  if (!(1 <= C && C <= F && F <= T))
    throw InvalidArgument("intervention counts must satisfy 1 <= C <= F <= T (got C=" +
                          std::to_string(C) + ", F=" + std::to_string(F) +
                          ", T=" + std::to_string(T) + ")");
  if (!(tau > 0.0)) throw InvalidArgument("tau must be > 0");
  if (patch_size < 2) throw InvalidArgument("patch size must be >= 2");
  if (workers < 0) throw InvalidArgument("workers must be >= 0");
  if (epsilon_classify && !(*epsilon_classify >= 0.0))
    throw InvalidArgument("classification epsilon must be >= 0");
}

int EngineConfig::resolved_workers() const {
  if (workers > 0) return workers;
  return std::max(1u, std::thread::hardware_concurrency());
}

double baseline_metric(const Model& model, const ImageBuffer& input,
                       const ImageBuffer& gt, const RoiRect& roi, ChannelMode metric) {
  const int s = model.info().scale;
  if (gt.height() != input.height() * s || gt.width() != input.width() * s ||
      gt.channels() != input.channels())
    throw DimensionError("ground truth must be the input size times the model scale " +
                         std::to_string(s));
  check_inside(roi, gt.height(), gt.width());
  return psnr(model.infer_region(input, roi), crop_region(gt, roi),
              {0, 0, roi.w, roi.h}, metric);
}

CemProblem::CemProblem(ModelHandle model, ImageBuffer input, ImageBuffer gt,
                       RoiRect roi, int patch_size, ChannelMode metric)
    : model_(std::move(model)), input_(std::move(input)), gt_(std::move(gt)),
      roi_(roi), metric_(metric) {
  if (!model_) throw InvalidArgument("model handle is null");
  grid_ = build_patch_grid(input_.height(), input_.width(), patch_size);
  const int s = model_->info().scale;
  if (gt_.height() != input_.height() * s || gt_.width() != input_.width() * s ||
      gt_.channels() != input_.channels())
    throw DimensionError("ground truth is " + std::to_string(gt_.height()) + "x" +
                         std::to_string(gt_.width()) + "x" +
                         std::to_string(gt_.channels()) + ", expected input size x" +
                         std::to_string(s));
  footprint_ = roi_input_footprint(roi_, s, grid_);
  gt_roi_ = crop_region(gt_, roi_);
  if (!model_->info().concurrent_safe) gate_ = std::make_shared<std::mutex>();
  baseline_db_ = measure(input_);
}

std::vector<int> CemProblem::outside_patches() const {
  std::vector<int> out;
  for (int i = 0; i < grid_.count(); ++i)
    if (!footprint_.is_inside[i]) out.push_back(i);
  return out;
}

double CemProblem::measure(const ImageBuffer& candidate) const {
  inferences_.fetch_add(1);
  ImageBuffer region;
  if (gate_) {
    std::lock_guard lock(*gate_);
    region = model_->infer_region(candidate, roi_);
  } else {
    region = model_->infer_region(candidate, roi_);
  }
  return psnr(region, gt_roi_, {0, 0, roi_.w, roi_.h}, metric_);
}

ImageBuffer intervene(const CemProblem& problem, int patch_index, const ImageBuffer& patch) {
  check_outside(problem, patch_index);
  if (patch.height() != problem.grid().patch_size || patch.width() != problem.grid().patch_size)
    throw DimensionError("intervention patch does not match the grid patch size");
  return paste_patch(problem.input(), problem.grid().cell(patch_index), patch);
}

Draw to_draw(SamplingMode mode) {
  return mode == SamplingMode::density ? Draw::density : Draw::uniform;
}

std::vector<double> intervention_scores(const CemProblem& problem,
                                        const InterventionLibrary& library,
                                        const GradientDensity& density, int patch_index,
                                        int n, Draw draw, StreamAddress stream) {
  check_library(problem, library, density);
  check_outside(problem, patch_index);
  if (n < 1) throw InvalidArgument("need at least one intervention");
  std::vector<double> scores(static_cast<std::size_t>(n));
  ImageBuffer scratch = problem.input();
  score_patch(problem, library, density, patch_index, n, draw, stream, scratch,
              scores.data());
  return scores;
}

double ate_for_patch(const CemProblem& problem, const InterventionLibrary& library,
                     const GradientDensity& density, int patch_index, int n, Draw draw,
                     StreamAddress stream) {
  const auto scores =
      intervention_scores(problem, library, density, patch_index, n, draw, stream);
  return mean_drop(problem.baseline_db(), scores.data(), n);
}

std::vector<double> convergence_trace(const CemProblem& problem,
                                      const InterventionLibrary& library,
                                      const GradientDensity& density, int patch_index,
                                      int T, Draw draw, StreamAddress stream) {
  if (T < 2) throw InvalidArgument("convergence trace needs T >= 2");
  const auto scores =
      intervention_scores(problem, library, density, patch_index, T, draw, stream);
  std::vector<double> trace(static_cast<std::size_t>(T));
  double sum = 0.0;
  for (int k = 0; k < T; ++k) {
    sum += problem.baseline_db() - scores[k];
    trace[k] = sum / (k + 1);
  }
  return trace;
}

CoarsePartition coarse_partition(const CemProblem& problem,
                                 const InterventionLibrary& library,
                                 const GradientDensity& density,
                                 const EngineConfig& config) {
  check_config(problem, config);
  check_library(problem, library, density);
  const std::vector<int> outside = problem.outside_patches();
  const int C = config.C;
  CoarsePartition part;
  part.coarse_scores.resize(problem.grid().count());
  for (int i : outside) part.coarse_scores[i].resize(C);

  const int workers = config.resolved_workers();
  Workspace ws(problem, std::min<int>(workers, std::max<std::size_t>(1, outside.size())));
  detail::parallel_for(outside.size(), int(ws.scratch.size()), [&](std::size_t k, int w) {
    const int i = outside[k];
    score_patch(problem, library, density, i, C, to_draw(config.coarse_mode()),
                {config.seed, Stage::coarse}, ws.scratch[w], part.coarse_scores[i].data());
  });

  const double base = problem.baseline_db();
  for (int i : outside) {
    double worst = 0.0;
    for (double s : part.coarse_scores[i]) worst = std::max(worst, std::fabs(base - s));
    (worst < config.tau ? part.unrelated : part.sensitive).push_back(i);
  }
  return part;
}

CausalEffectMap compute_cem_full(const CemProblem& problem,
                                 const InterventionLibrary& library,
                                 const GradientDensity& density,
                                 const EngineConfig& config) {
  check_config(problem, config);
  if (config.mode != RunMode::full) throw InvalidArgument("compute_cem_full needs mode=full");
  check_library(problem, library, density);
  const std::uint64_t before = problem.inferences();

  CausalEffectMap cem = empty_map(problem, config, library);
  const std::vector<int> outside = problem.outside_patches();
  const int T = config.T;
  const int workers = std::min<int>(config.resolved_workers(),
                                    std::max<std::size_t>(1, outside.size()));
  Workspace ws(problem, workers);
  detail::parallel_for(outside.size(), workers, [&](std::size_t k, int w) {
    const int i = outside[k];
    std::vector<double> scores(static_cast<std::size_t>(T));
    score_patch(problem, library, density, i, T, to_draw(config.sampling),
                {config.seed, Stage::full}, ws.scratch[w], scores.data());
    cem.effects[i] = mean_drop(problem.baseline_db(), scores.data(), T);
    cem.intervention_counts[i] = T;
  });
  cem.unrelated_count = 0;
  cem.sensitive_count = 0;
  cem.inference_count = 1 + (problem.inferences() - before);
  check_count(cem, cem.inference_count);
  return cem;
}

CausalEffectMap compute_cem_fast(const CemProblem& problem,
                                 const InterventionLibrary& library,
                                 const GradientDensity& density,
                                 const EngineConfig& config) {
  check_config(problem, config);
  if (config.mode != RunMode::fast) throw InvalidArgument("compute_cem_fast needs mode=fast");
  const std::uint64_t before = problem.inferences();

  CoarsePartition part = coarse_partition(problem, library, density, config);
  CausalEffectMap cem = empty_map(problem, config, library);
  const double base = problem.baseline_db();
  for (int u : part.unrelated) {
    cem.effects[u] = mean_drop(base, part.coarse_scores[u].data(), config.C);
    cem.intervention_counts[u] = config.C;
  }

  const int F = config.F;
  const int workers = std::min<int>(config.resolved_workers(),
                                    std::max<std::size_t>(1, part.sensitive.size()));
  Workspace ws(problem, workers);
  detail::parallel_for(part.sensitive.size(), workers, [&](std::size_t k, int w) {
    const int s = part.sensitive[k];
    std::vector<double> scores(static_cast<std::size_t>(F));
    score_patch(problem, library, density, s, F, to_draw(config.sampling),
                {config.seed, Stage::fine}, ws.scratch[w], scores.data());
    cem.effects[s] = mean_drop(base, scores.data(), F);
    cem.intervention_counts[s] = config.C + F;
  });
  cem.unrelated_count = int(part.unrelated.size());
  cem.sensitive_count = int(part.sensitive.size());
  cem.inference_count = 1 + (problem.inferences() - before);
  check_count(cem, cem.inference_count);
  return cem;
}

CausalEffectMap compute_cem(const CemProblem& problem, const InterventionLibrary& library,
                            const GradientDensity& density, const EngineConfig& config) {
  return config.mode == RunMode::full ? compute_cem_full(problem, library, density, config)
                                      : compute_cem_fast(problem, library, density, config);
}

double similarity_score(const std::vector<double>& reference,
                        const std::vector<double>& candidate) {
  if (reference.size() != candidate.size())
    throw DimensionError("effect vectors differ in length");
  double diff = 0.0, norm = 0.0, cand_norm = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const bool ref_roi = std::isinf(reference[i]);
    const bool cand_roi = std::isinf(candidate[i]);
    if (ref_roi != cand_roi) throw InvalidArgument("effect maps disagree on ROI patches");
    if (ref_roi) continue;
    diff += std::fabs(candidate[i] - reference[i]);
    norm += std::fabs(reference[i]);
    cand_norm += std::fabs(candidate[i]);
  }
  if (norm == 0.0) return cand_norm == 0.0 ? 100.0 : 0.0;
  return 100.0 * (1.0 - diff / norm);
}

double similarity_score(const CausalEffectMap& reference, const CausalEffectMap& candidate) {
  if (!(reference.grid == candidate.grid))
    throw DimensionError("cannot compare effect maps on different grids");
  if (!(reference.roi == candidate.roi))
    throw InvalidArgument("cannot compare effect maps with different ROIs");
  return similarity_score(reference.effects, candidate.effects);
}

std::uint64_t inference_count(const EngineConfig& config, std::uint64_t n_outside,
                              std::uint64_t sensitive_count) {
  if (config.mode == RunMode::full) return 1 + n_outside * std::uint64_t(config.T);
  return 1 + n_outside * std::uint64_t(config.C) + sensitive_count * std::uint64_t(config.F);
}

}  // namespace cem
