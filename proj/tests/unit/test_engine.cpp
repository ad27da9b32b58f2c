#include <algorithm>
#include <cmath>
#include <set>

#include <doctest.h>

#include "cem/engine.hpp"
#include "cem/error.hpp"
#include "cem/library.hpp"
#include "cem/reporting.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cem;
using cem::test::random_image;

namespace {

InterventionLibrary toy_library(int n, int channels, std::uint64_t seed, float lo = 0.0f,
                                float hi = 1.0f, int p = 8) {
  std::vector<ImageBuffer> pool;
  for (int i = 0; i < n; ++i) pool.push_back(random_image(p, p, channels, seed * 1000 + i, lo, hi));
  return make_library(pool, DegradationSpec::denoising(), seed);
}

EngineConfig config(RunMode mode, int T = 500, std::uint64_t seed = 0, int workers = 1) {
  EngineConfig c;
  c.mode = mode;
  c.T = T;
  c.C = std::min(3, T);
  c.F = std::min(50, T);
  c.seed = seed;
  c.workers = workers;
  return c;
}

// Scale-1 model with a declared task of "other" that injects a fixed pixel
// offset into the ROI output whenever the top-left input sample exceeds a
// threshold. Used to craft exact coarse differences.
struct ThresholdModel final : Model {
  ThresholdModel() : Model({.name = "threshold", .task = Task::other}) {}
  ImageBuffer run(const ImageBuffer& in) const override {
    ImageBuffer out = in;
    if (in.at(0, 0, 0) > 0.5f)
      for (float& v : out.mutable_data()) v = std::min(1.0f, v + 0.25f);
    return out;
  }
};

}  // namespace

TEST_CASE("config defaults and validation") {
  const EngineConfig c;
  CHECK(c.T == 500);
  CHECK(c.C == 3);
  CHECK(c.F == 50);
  CHECK(c.tau == 0.01);
  CHECK(c.patch_size == 8);
  CHECK(c.epsilon() == 0.01);
  CHECK(c.coarse_mode() == SamplingMode::density);
  EngineConfig bad = c;
  bad.C = 60;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = c;
  bad.tau = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = c;
  bad.patch_size = 1;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("baseline closed forms") {
  const auto id = make_builtin("identity");
  const ImageBuffer img = random_image(32, 32, 3, 1, 0.1f, 0.8f);
  CHECK(baseline_metric(*id, img, img, {0, 0, 8, 8}) == kPsnrCap);
  ImageBuffer gt = img;
  for (float& v : gt.mutable_data()) v += 1.0f / 255;
  CHECK(std::fabs(baseline_metric(*id, img, gt, {0, 0, 32, 32}) - 20 * std::log10(255.0)) < 1e-3);
  CHECK_THROWS_AS(baseline_metric(*make_builtin("bicubic_up(2)"), img, gt, {0, 0, 8, 8}),
                  DimensionError);
  CHECK_THROWS_AS(CemProblem(id, img, random_image(16, 16, 3, 2), {0, 0, 8, 8}, 8),
                  DimensionError);
}

TEST_CASE("intervene") {
  const ImageBuffer img = random_image(32, 32, 3, 3);
  CemProblem prob(make_builtin("identity"), img, img, {0, 0, 8, 8}, 8);
  const RoiRect cell = prob.grid().cell(5);
  CHECK(intervene(prob, 5, crop_region(img, cell)) == img);
  const ImageBuffer patch = random_image(8, 8, 3, 4);
  const ImageBuffer out = intervene(prob, 5, patch);
  int differ = 0;
  for (std::size_t i = 0; i < img.size(); ++i) differ += out.data()[i] != img.data()[i];
  CHECK(differ <= 8 * 8 * 3);
  CHECK_THROWS_AS(intervene(prob, 0, patch), InvalidArgument);
  CHECK_THROWS_AS(intervene(prob, 5, random_image(4, 4, 3, 1)), DimensionError);
}

TEST_CASE("identity model gives exactly zero effects") {
  const ImageBuffer img = random_image(64, 64, 3, 5);
  const auto lib = toy_library(40, 3, 1);
  const auto dens = estimate_density(lib);
  CemProblem prob(make_builtin("identity"), img, img, {16, 16, 8, 8}, 8);
  for (int n : {1, 7, 40})
    CHECK(ate_for_patch(prob, lib, dens, 0, n, Draw::density, {1, Stage::full}) == 0.0);

  for (RunMode mode : {RunMode::full, RunMode::fast}) {
    const auto cem = compute_cem(prob, lib, dens, config(mode, 60));
    for (int i = 0; i < cem.grid.count(); ++i) {
      if (cem.is_roi(i)) continue;
      CHECK(cem.effects[i] == 0.0);
    }
    CHECK(cem.sensitive_count == 0);
    if (mode == RunMode::fast) {
      CHECK(cem.unrelated_count == 63);
      CHECK(cem.inference_count == 1 + 63 * 3);
    } else {
      CHECK(cem.inference_count == 1 + 63 * 60);
    }
  }
  const auto trace = convergence_trace(prob, lib, dens, 3, 30, Draw::uniform, {2, Stage::full});
  for (double v : trace) CHECK(v == 0.0);
}

TEST_CASE("roi sentinel and partition completeness") {
  const ImageBuffer img = random_image(64, 64, 3, 6);
  const auto lib = toy_library(30, 3, 2);
  const auto dens = estimate_density(lib);
  CemProblem prob(make_builtin("local_window(2)"), img, random_image(64, 64, 3, 7),
                  {20, 20, 12, 12}, 8);
  const auto cfg = config(RunMode::fast, 60);
  const auto part = coarse_partition(prob, lib, dens, cfg);
  std::vector<int> all = part.unrelated;
  all.insert(all.end(), part.sensitive.begin(), part.sensitive.end());
  all.insert(all.end(), prob.footprint().inside.begin(), prob.footprint().inside.end());
  std::sort(all.begin(), all.end());
  std::vector<int> expect(64);
  for (int i = 0; i < 64; ++i) expect[i] = i;
  CHECK(all == expect);
  CHECK(prob.footprint().inside.size() == 4);

  const auto cem = compute_cem(prob, lib, dens, cfg);
  for (int i = 0; i < 64; ++i)
    CHECK(cem.is_roi(i) == bool(prob.footprint().is_inside[i]));
}

TEST_CASE("local_window: distant patches are exactly zero") {
  const ImageBuffer img = random_image(64, 64, 3, 8);
  const auto lib = toy_library(30, 3, 3);
  const auto dens = estimate_density(lib);
  const RoiRect roi{24, 24, 8, 8};
  CemProblem prob(make_builtin("local_window(4)"), img, random_image(64, 64, 3, 9), roi, 8);
  const auto cem = compute_cem(prob, lib, dens, config(RunMode::full, 50));
  bool near_nonzero = false;
  const RoiRect fp = prob.footprint().input_rect;
  for (int i = 0; i < cem.grid.count(); ++i) {
    if (cem.is_roi(i)) continue;
    const int gap = chebyshev_gap(cem.grid.cell(i), fp);
    if (gap > 4) CHECK(cem.effects[i] == 0.0);
    if (gap == 1 && cem.effects[i] != 0.0) near_nonzero = true;
  }
  CHECK(near_nonzero);

  const auto part = coarse_partition(prob, lib, dens, config(RunMode::fast, 50));
  for (int s : part.sensitive) CHECK(chebyshev_gap(cem.grid.cell(s), fp) <= 4);
}

TEST_CASE("global_bias: enumeration equals the closed-form effect") {
  const int H = 64;
  const double k = 8;
  const ImageBuffer img = random_image(H, H, 3, 10, 0.3f, 0.7f);
  const ImageBuffer gt = random_image(H, H, 3, 11, 0.3f, 0.7f);
  const auto lib = toy_library(16, 3, 4, 0.2f, 0.8f);
  const auto dens = estimate_density(lib);
  const RoiRect roi{24, 24, 8, 8};
  CemProblem prob(make_builtin("global_bias(8)"), img, gt, roi, 8);
  // The model emits float samples, so agreement is at float resolution.
  CHECK(std::fabs(prob.baseline_db() - oracle::global_bias_psnr(img, gt, roi, k, {0, 0, 8, 8},
                                                                oracle::sum_of(img, {0, 0, 8, 8}))) <
        1e-5);
  for (int i : prob.outside_patches()) {
    const double engine = ate_for_patch(prob, lib, dens, i, 16, Draw::enumerate, {0, Stage::full});
    const double ref = oracle::global_bias_exhaustive_effect(img, gt, roi, k, prob.grid().cell(i),
                                                             lib.pool);
    CHECK(std::fabs(engine - ref) < 1e-6);
  }
  CHECK_THROWS_AS(ate_for_patch(prob, lib, dens, 0, 17, Draw::enumerate, {0, Stage::full}),
                  InvalidArgument);
}

TEST_CASE("global_bias: sampled running mean converges at the 1/sqrt(k) rate") {
  const ImageBuffer img = random_image(32, 32, 3, 12, 0.3f, 0.7f);
  const ImageBuffer gt = random_image(32, 32, 3, 13, 0.3f, 0.7f);
  const auto lib = toy_library(16, 3, 5, 0.2f, 0.8f);
  const auto dens = estimate_density(lib);
  const RoiRect roi{8, 8, 8, 8};
  CemProblem prob(make_builtin("global_bias(8)"), img, gt, roi, 8);
  const int patch = 0;
  const double exact =
      oracle::global_bias_exhaustive_effect(img, gt, roi, 8, prob.grid().cell(patch), lib.pool);
  const int seeds = 100, T = 400;
  double err25 = 0, err400 = 0;
  for (int s = 0; s < seeds; ++s) {
    const auto tr = convergence_trace(prob, lib, dens, patch, T, Draw::uniform,
                                      {std::uint64_t(s), Stage::full});
    err25 += std::pow(tr[24] - exact, 2);
    err400 += std::pow(tr[T - 1] - exact, 2);
    CHECK(tr.back() ==
          ate_for_patch(prob, lib, dens, patch, T, Draw::uniform, {std::uint64_t(s), Stage::full}));
  }
  const double ratio = std::sqrt(err400 / err25);
  // 1/sqrt(16) = 0.25; accept within a factor of two either way.
  CHECK(ratio < 0.5);
  CHECK(ratio > 0.125);
}

TEST_CASE("coarse boundary: a difference exactly equal to tau is sensitive") {
  const ImageBuffer img(16, 16, 1, 0.4f);
  // One patch that trips the threshold when pasted into cell 0, one that does not.
  std::vector<ImageBuffer> pool{ImageBuffer(8, 8, 1, 0.9f)};
  const auto lib = make_library(pool, DegradationSpec::denoising());
  const auto dens = estimate_density(lib);
  const RoiRect roi{8, 8, 8, 8};
  CemProblem prob(std::make_shared<ThresholdModel>(), img, ImageBuffer(16, 16, 1, 0.5f), roi, 8);
  EngineConfig cfg = config(RunMode::fast, 4);
  cfg.C = 1;
  cfg.F = 2;
  const auto scores = intervention_scores(prob, lib, dens, 0, 1, Draw::density, {0, Stage::coarse});
  const double d = std::fabs(prob.baseline_db() - scores[0]);
  REQUIRE(d > 0);
  cfg.tau = d;
  auto part = coarse_partition(prob, lib, dens, cfg);
  CHECK(std::count(part.sensitive.begin(), part.sensitive.end(), 0) == 1);
  cfg.tau = std::nextafter(d, 1e9);
  part = coarse_partition(prob, lib, dens, cfg);
  CHECK(std::count(part.unrelated.begin(), part.unrelated.end(), 0) == 1);
}

TEST_CASE("fast mode reuses coarse samples for unrelated patches") {
  const ImageBuffer img = random_image(64, 64, 3, 14);
  const auto lib = toy_library(30, 3, 6);
  const auto dens = estimate_density(lib);
  CemProblem prob(make_builtin("local_window(4)"), img, random_image(64, 64, 3, 15),
                  {24, 24, 8, 8}, 8);
  EngineConfig cfg = config(RunMode::fast);
  cfg.tau = 0.02;
  const auto cem = compute_cem(prob, lib, dens, cfg);
  const auto part = coarse_partition(prob, lib, dens, cfg);
  CHECK(int(part.unrelated.size()) == cem.unrelated_count);
  CHECK(int(part.sensitive.size()) == cem.sensitive_count);
  for (int u : part.unrelated) {
    double acc = 0;
    for (double s : part.coarse_scores[u]) acc += prob.baseline_db() - s;
    CHECK(cem.effects[u] == acc / cfg.C);
    CHECK(cem.intervention_counts[u] == 3);
  }
  for (int s : part.sensitive) {
    CHECK(cem.effects[s] == ate_for_patch(prob, lib, dens, s, cfg.F, Draw::density,
                                          {cfg.seed, Stage::fine}));
    CHECK(cem.intervention_counts[s] == 53);
  }
  CHECK(cem.inference_count ==
        oracle::fast_budget(63, std::uint64_t(cem.sensitive_count), 3, 50));
}

TEST_CASE("inference budget formula") {
  EngineConfig full = config(RunMode::full);
  CHECK(inference_count(full, 1024, 0) == 512001);
  CHECK(inference_count(full, 1024, 0) - 1 == 32ull * 32 * 500);
  EngineConfig fast = config(RunMode::fast);
  CHECK(inference_count(fast, 0, 0) == 1);
  CHECK(inference_count(fast, 1020, 40) == 5061);
  CHECK(inference_count(fast, 1020, 40) == oracle::fast_budget(1020, 40, 3, 50));
}

TEST_CASE("similarity score hand cases") {
  const std::vector<double> phi{1.0, 1.0};
  CHECK(similarity_score(phi, phi) == 100.0);
  CHECK(similarity_score(phi, std::vector<double>{0.0, 0.0}) == 0.0);
  CHECK(std::fabs(similarity_score(phi, std::vector<double>{1.0, 0.5}) - 75.0) < 1e-9);
  CHECK(similarity_score(std::vector<double>{0, 0}, std::vector<double>{0, 0}) == 100.0);
  CHECK(similarity_score(std::vector<double>{0, 0}, std::vector<double>{0, 1}) == 0.0);
  const double inf = kRoiSentinel;
  CHECK(similarity_score(std::vector<double>{inf, 2.0}, std::vector<double>{inf, 1.0}) == 50.0);
  CHECK_THROWS(similarity_score(std::vector<double>{inf, 2.0}, std::vector<double>{1.0, 1.0}));
  CHECK_THROWS(similarity_score(std::vector<double>{1.0}, std::vector<double>{1.0, 1.0}));
  CounterRng rng(3, Stage::testing);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(20), b(20);
    for (int i = 0; i < 20; ++i) {
      a[i] = rng.uniform(-1, 1);
      b[i] = rng.uniform(-1, 1);
    }
    CHECK(similarity_score(a, b) == doctest::Approx(oracle::similarity(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("determinism across worker counts") {
  const ImageBuffer img = random_image(64, 64, 3, 16);
  const ImageBuffer gt = random_image(64, 64, 3, 17);
  const auto lib = toy_library(50, 3, 7);
  const auto dens = estimate_density(lib);
  for (const char* spec : {"identity", "local_window(4)", "global_bias(8)", "box_denoise(1)"}) {
    for (RunMode mode : {RunMode::fast, RunMode::full}) {
      std::string first;
      for (int w : {1, 2, 8}) {
        CemProblem prob(make_builtin(spec), img, gt, {24, 16, 8, 16}, 8);
        const auto cem = compute_cem(prob, lib, dens, config(mode, 60, 42, w));
        const std::string dumped = cem_to_json(cem).dump();
        if (first.empty()) first = dumped;
        CHECK(dumped == first);
      }
    }
  }
}

TEST_CASE("different seeds give different samples") {
  const ImageBuffer img = random_image(32, 32, 3, 18);
  const auto lib = toy_library(50, 3, 8);
  const auto dens = estimate_density(lib);
  CemProblem prob(make_builtin("local_window(4)"), img, random_image(32, 32, 3, 19),
                  {8, 8, 8, 8}, 8);
  const auto a = compute_cem(prob, lib, dens, config(RunMode::full, 20, 1));
  const auto b = compute_cem(prob, lib, dens, config(RunMode::full, 20, 2));
  CHECK_FALSE(a.effects == b.effects);
}

TEST_CASE("sr model: ROI in output coordinates") {
  const ImageBuffer img = random_image(32, 32, 3, 20);
  const ImageBuffer gt = make_builtin("bicubic_up(4)")->infer(img);
  const auto lib = toy_library(20, 3, 9);
  const auto dens = estimate_density(lib);
  CemProblem prob(make_builtin("bicubic_up(4)"), img, gt, {64, 64, 32, 32}, 8);
  CHECK(prob.footprint().inside == std::vector<int>{prob.grid().index(2, 2)});
  CHECK(prob.baseline_db() == kPsnrCap);
  const auto cem = compute_cem(prob, lib, dens, config(RunMode::fast));
  CHECK(cem.inference_count == oracle::fast_budget(15, std::uint64_t(cem.sensitive_count), 3, 50));
}

TEST_CASE("engine rejects mismatched libraries") {
  const ImageBuffer img = random_image(32, 32, 3, 21);
  CemProblem prob(make_builtin("identity"), img, img, {0, 0, 8, 8}, 8);
  const auto gray = toy_library(5, 1, 10);
  CHECK_THROWS_AS(compute_cem(prob, gray, estimate_density(gray), config(RunMode::fast)),
                  DimensionError);
  const auto small = toy_library(5, 3, 10, 0, 1, 4);
  CHECK_THROWS_AS(compute_cem(prob, small, estimate_density(small), config(RunMode::fast)),
                  DimensionError);
}

TEST_CASE("engine works through a subprocess model") {
  const ImageBuffer img = random_image(32, 32, 3, 22);
  const auto lib = toy_library(10, 3, 11);
  SubprocessOptions o;
  o.pool_size = 2;
  CemProblem prob(spawn_subprocess_model(CEM_ECHO_BRIDGE, o), img, img, {8, 8, 8, 8}, 8);
  const auto cem = compute_cem(prob, lib, estimate_density(lib), config(RunMode::fast, 500, 0, 2));
  for (int i = 0; i < cem.grid.count(); ++i)
    if (!cem.is_roi(i)) CHECK(cem.effects[i] == 0.0);
  CHECK(cem.inference_count == 1 + 15 * 3);
  CHECK(cem.model.backend == Backend::subprocess);
}
