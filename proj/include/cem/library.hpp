#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cem/degradations.hpp"
#include "cem/image.hpp"
#include "cem/random.hpp"

namespace cem {

struct LibrarySource {
  std::string path;
  std::string sha256;
  bool operator==(const LibrarySource&) const = default;
};

/// Pool of degraded natural-image patches used as intervention values.
///
/// Every patch is a crop of a source image degraded with `degradation`, so
/// pasting it into a degraded input keeps the input in the same degradation
/// distribution.
struct InterventionLibrary {
  int patch_size = 8;
  int channels = 3;
  std::vector<ImageBuffer> pool;
  std::vector<double> g_values;
  DegradationSpec degradation;
  std::vector<LibrarySource> sources;  // sorted by hash
  std::uint64_t seed = 0;

  std::size_t size() const { return pool.size(); }
  bool operator==(const InterventionLibrary&) const = default;
};

/// Sampling distribution over the pool derived from gradient magnitudes.
struct GradientDensity {
  std::vector<double> lower_edges;  // ascending; bin b covers [edge_b, edge_b+1)
  std::vector<double> masses;
  std::vector<std::vector<std::uint32_t>> members;

  std::size_t bins() const { return masses.size(); }
  /// Bin containing gradient value g.
  std::size_t bin_of(double g) const;
};

enum class SamplingMode { density, uniform };

std::string to_string(SamplingMode mode);
SamplingMode parse_sampling(const std::string& name);

struct LibraryBuildOptions {
  int patch_size = 8;
  std::size_t pool_size = 20000;
  std::uint64_t seed = 0;
  /// 0 = infer (1 when every source is grayscale, else 3).
  int channels = 0;
};

/// Builds from images already decoded in memory; `sources` names them.
/// Sources are reordered by content hash before any draw.
InterventionLibrary build_library(std::vector<std::pair<LibrarySource, ImageBuffer>> images,
                                  const DegradationSpec& degradation,
                                  const LibraryBuildOptions& options);

/// Builds from every PNG in `image_dir` (non-recursive).
InterventionLibrary build_library(const std::filesystem::path& image_dir,
                                  const DegradationSpec& degradation,
                                  const LibraryBuildOptions& options);

/// Creates a library from explicit patches (no source images). Used for
/// synthetic and test pools.
InterventionLibrary make_library(std::vector<ImageBuffer> patches,
                                 const DegradationSpec& degradation,
                                 std::uint64_t seed = 0);

inline constexpr std::size_t kDefaultDensityBins = 32;

/// Equal-population quantile histogram of the pool's gradient magnitudes.
/// Duplicate quantile edges merge, so a constant pool yields one bin.
GradientDensity estimate_density(const InterventionLibrary& library,
                                 std::size_t bins = kDefaultDensityBins);

/// Draws a pool index. Density mode picks a bin by mass, then a member
/// uniformly; uniform mode picks an index uniformly.
std::uint32_t sample_index(const InterventionLibrary& library,
                           const GradientDensity& density, SamplingMode mode,
                           CounterRng& rng);

std::pair<std::uint32_t, const ImageBuffer*> sample_patch(
    const InterventionLibrary& library, const GradientDensity& density,
    SamplingMode mode, CounterRng& rng);

inline constexpr int kLibraryFormatVersion = 1;

/// Writes manifest.json, pool.bin and g.bin into `dir` (created if needed).
void save_library(const InterventionLibrary& library,
                  const std::filesystem::path& dir);

/// Verifies version and checksums; throws FormatError on mismatch.
InterventionLibrary load_library(const std::filesystem::path& dir);

}  // namespace cem
