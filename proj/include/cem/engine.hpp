#pragma once

#include <atomic>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cem/geometry.hpp"
#include "cem/image.hpp"
#include "cem/imaging.hpp"
#include "cem/library.hpp"
#include "cem/model.hpp"

namespace cem {

enum class RunMode { full, fast };

std::string to_string(RunMode mode);
RunMode parse_mode(const std::string& name);

struct EngineConfig {
  int T = 500;  // interventions per patch, full mode
  int C = 3;    // coarse interventions, fast mode
  int F = 50;   // fine interventions for sensitive patches
  double tau = 0.01;  // dB
  int patch_size = 8;
  RunMode mode = RunMode::fast;
  SamplingMode sampling = SamplingMode::density;
  /// Coarse-stage draws; unset means same as `sampling`.
  std::optional<SamplingMode> coarse_sampling;
  std::uint64_t seed = 0;
  /// 0 = one per hardware thread.
  int workers = 1;
  /// None-class threshold for reporting; unset means tau.
  std::optional<double> epsilon_classify;
  ChannelMode metric = ChannelMode::rgb;
  std::size_t density_bins = kDefaultDensityBins;

  void validate() const;
  SamplingMode coarse_mode() const { return coarse_sampling.value_or(sampling); }
  double epsilon() const { return epsilon_classify.value_or(tau); }
  int resolved_workers() const;
};

/// ROI PSNR of F(input) against gt. Exactly one inference.
double baseline_metric(const Model& model, const ImageBuffer& input,
                       const ImageBuffer& gt, const RoiRect& roi,
                       ChannelMode metric = ChannelMode::rgb);

/// Immutable setup shared by every stage of one CEM run: the model, the
/// degraded input, ground truth, the ROI and its patch footprint, and the
/// baseline metric (computed once on construction).
class CemProblem {
 public:
  CemProblem(ModelHandle model, ImageBuffer input, ImageBuffer gt, RoiRect roi,
             int patch_size, ChannelMode metric = ChannelMode::rgb);

  const Model& model() const { return *model_; }
  const ModelHandle& model_handle() const { return model_; }
  const ImageBuffer& input() const { return input_; }
  const ImageBuffer& gt() const { return gt_; }
  const RoiRect& roi() const { return roi_; }
  const PatchGrid& grid() const { return grid_; }
  const RoiFootprint& footprint() const { return footprint_; }
  double baseline_db() const { return baseline_db_; }
  ChannelMode metric() const { return metric_; }

  /// Indices of patches outside the ROI footprint, ascending.
  std::vector<int> outside_patches() const;

  /// ROI PSNR of the model applied to `candidate` (one inference).
  double measure(const ImageBuffer& candidate) const;

  /// Inferences issued through this problem so far, baseline included.
  std::uint64_t inferences() const { return inferences_.load(); }

 private:
  ModelHandle model_;
  ImageBuffer input_;
  ImageBuffer gt_;
  ImageBuffer gt_roi_;
  RoiRect roi_;
  PatchGrid grid_;
  RoiFootprint footprint_;
  ChannelMode metric_;
  double baseline_db_ = 0.0;
  std::shared_ptr<std::mutex> gate_;  // set for non-concurrent models
  mutable std::atomic<std::uint64_t> inferences_{0};
};

/// Replaces grid cell `patch_index` with `patch`. Rejects cells inside the
/// ROI footprint.
ImageBuffer intervene(const CemProblem& problem, int patch_index,
                      const ImageBuffer& patch);

/// How the t-th intervention of a patch picks its library entry.
enum class Draw {
  density,
  uniform,
  /// t-th intervention uses pool entry t (without replacement).
  enumerate,
};

Draw to_draw(SamplingMode mode);

/// Addresses the random stream of one stage; intervention t of patch i
/// draws from CounterRng(seed, stage, i, t).
struct StreamAddress {
  std::uint64_t seed = 0;
  Stage stage = Stage::full;
};

/// Post-intervention ROI PSNRs of `n` interventions on one patch.
std::vector<double> intervention_scores(const CemProblem& problem,
                                        const InterventionLibrary& library,
                                        const GradientDensity& density,
                                        int patch_index, int n, Draw draw,
                                        StreamAddress stream);

/// Baseline minus the mean post-intervention ROI PSNR over n interventions.
double ate_for_patch(const CemProblem& problem, const InterventionLibrary& library,
                     const GradientDensity& density, int patch_index, int n,
                     Draw draw, StreamAddress stream);

/// Element k-1 is the ATE after the first k interventions; the last element
/// equals ate_for_patch on the same stream bit-exact.
std::vector<double> convergence_trace(const CemProblem& problem,
                                      const InterventionLibrary& library,
                                      const GradientDensity& density,
                                      int patch_index, int T, Draw draw,
                                      StreamAddress stream);

inline constexpr double kRoiSentinel = std::numeric_limits<double>::infinity();

struct CausalEffectMap {
  PatchGrid grid;
  std::vector<double> effects;  // dB, row-major; +inf inside the ROI
  double baseline_db = 0.0;
  RoiRect roi;
  ModelInfo model;
  std::optional<DegradationSpec> degradation;
  EngineConfig config;
  std::uint64_t inference_count = 0;
  std::vector<int> intervention_counts;  // per patch; 0 inside the ROI
  int sensitive_count = 0;
  int unrelated_count = 0;

  // Provenance, filled in by callers that know the files.
  std::string input_path;
  std::string input_hash;
  std::string gt_path;
  std::string gt_hash;

  bool is_roi(int i) const { return effects[i] == kRoiSentinel; }
};

struct CoarsePartition {
  std::vector<int> unrelated;
  std::vector<int> sensitive;
  /// C post-intervention PSNRs per patch; empty for ROI patches.
  std::vector<std::vector<double>> coarse_scores;
};

/// C interventions per outside patch; a patch is unrelated when every
/// |baseline - score| is strictly below tau.
CoarsePartition coarse_partition(const CemProblem& problem,
                                 const InterventionLibrary& library,
                                 const GradientDensity& density,
                                 const EngineConfig& config);

CausalEffectMap compute_cem_full(const CemProblem& problem,
                                 const InterventionLibrary& library,
                                 const GradientDensity& density,
                                 const EngineConfig& config);

/// Coarse-to-fine: unrelated patches reuse their C coarse scores, sensitive
/// patches get F fresh interventions.
CausalEffectMap compute_cem_fast(const CemProblem& problem,
                                 const InterventionLibrary& library,
                                 const GradientDensity& density,
                                 const EngineConfig& config);

/// Dispatches on config.mode.
CausalEffectMap compute_cem(const CemProblem& problem,
                            const InterventionLibrary& library,
                            const GradientDensity& density,
                            const EngineConfig& config);

/// 100 * (1 - |cand - ref|_1 / |ref|_1) over non-ROI patches, in percent.
double similarity_score(const CausalEffectMap& reference,
                        const CausalEffectMap& candidate);

/// Similarity on raw effect vectors (+inf entries are skipped).
double similarity_score(const std::vector<double>& reference,
                        const std::vector<double>& candidate);

/// Baseline included: full 1 + N*T, fast 1 + N*C + S*F.
std::uint64_t inference_count(const EngineConfig& config, std::uint64_t n_outside,
                              std::uint64_t sensitive_count);

}  // namespace cem
