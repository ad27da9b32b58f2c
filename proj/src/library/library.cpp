#include "cem/library.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>

#include <nlohmann/json.hpp>

#include "cem/error.hpp"
#include "cem/hash.hpp"
#include "cem/imaging.hpp"

namespace cem {
namespace {

ImageBuffer match_channels(const ImageBuffer& image, int channels) {
  if (image.channels() == channels) return image;
  return channels == 3 ? to_rgb(image) : to_gray(image);
}

InterventionLibrary build_from(std::vector<LibrarySource> sources,
                               const std::vector<int>& source_channels,
                               const std::function<ImageBuffer(std::size_t)>& load,
                               const DegradationSpec& degradation,
                               const LibraryBuildOptions& options) {
  if (sources.empty()) throw InvalidArgument("library needs at least one source image");
  if (options.pool_size == 0) throw InvalidArgument("pool size must be positive");
  if (options.patch_size < 2) throw InvalidArgument("patch size must be >= 2");
  degradation.validate();

  // Content-hash order makes the build independent of directory listing.
  std::vector<std::size_t> order(sources.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sources[a].sha256 != sources[b].sha256) return sources[a].sha256 < sources[b].sha256;
    return sources[a].path < sources[b].path;
  });

  InterventionLibrary lib;
  lib.patch_size = options.patch_size;
  lib.degradation = degradation;
  lib.seed = options.seed;
  lib.channels = options.channels;
  if (lib.channels == 0) {
    lib.channels = std::all_of(source_channels.begin(), source_channels.end(),
                               [](int c) { return c == 1; })
                       ? 1
                       : 3;
  }
  if (lib.channels != 1 && lib.channels != 3)
    throw InvalidArgument("library channels must be 1 or 3");
  for (std::size_t i : order) lib.sources.push_back(sources[i]);

  const std::size_t n_sources = order.size();
  std::vector<std::vector<std::uint32_t>> assigned(n_sources);
  for (std::size_t j = 0; j < options.pool_size; ++j) {
    CounterRng pick(options.seed, Stage::library_pick, std::uint32_t(j),
                    std::uint32_t(j >> 32));
    assigned[pick.below(n_sources)].push_back(std::uint32_t(j));
  }

  lib.pool.resize(options.pool_size);
  lib.g_values.resize(options.pool_size);
  const int p = options.patch_size;
  for (std::size_t s = 0; s < n_sources; ++s) {
    if (assigned[s].empty()) continue;
    ImageBuffer clean = match_channels(load(order[s]), lib.channels);
    if (degradation.task == Task::sr) clean = crop_to_multiple(clean, degradation.scale);
    const ImageBuffer degraded =
        degrade(clean, degradation, options.seed, std::uint32_t(s));
    if (degraded.height() < p || degraded.width() < p)
      throw DimensionError("source '" + lib.sources[s].path +
                           "' is smaller than one patch after degradation");
    for (std::uint32_t j : assigned[s]) {
      CounterRng crop(options.seed, Stage::library_crop, j);
      const int y = int(crop.below(std::uint64_t(degraded.height() - p + 1)));
      const int x = int(crop.below(std::uint64_t(degraded.width() - p + 1)));
      lib.pool[j] = crop_region(degraded, {x, y, p, p});
      lib.g_values[j] = gradient_magnitude(lib.pool[j]);
    }
  }
  return lib;
}

template <typename T>
void write_le(std::ofstream& out, T value) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T read_le(const std::vector<unsigned char>& buf, std::size_t offset) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), buf.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

std::string to_string(SamplingMode mode) {
  return mode == SamplingMode::density ? "density" : "uniform";
}

SamplingMode parse_sampling(const std::string& name) {
  if (name == "density") return SamplingMode::density;
  if (name == "uniform") return SamplingMode::uniform;
  throw InvalidArgument("unknown sampling mode '" + name + "' (density|uniform)");
}

InterventionLibrary build_library(std::vector<std::pair<LibrarySource, ImageBuffer>> images,
                                  const DegradationSpec& degradation,
                                  const LibraryBuildOptions& options) {
  std::vector<LibrarySource> sources;
  std::vector<int> channels;
  for (const auto& [src, img] : images) {
    sources.push_back(src);
    channels.push_back(img.channels());
  }
  return build_from(std::move(sources), channels,
                    [&](std::size_t i) { return images[i].second; }, degradation,
                    options);
}

InterventionLibrary build_library(const std::filesystem::path& image_dir,
                                  const DegradationSpec& degradation,
                                  const LibraryBuildOptions& options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(image_dir))
    throw IoError("'" + image_dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(image_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(entry.path());
  }
  if (files.empty())
    throw InvalidArgument("no PNG images found in '" + image_dir.string() + "'");

  std::vector<LibrarySource> sources;
  std::vector<int> channels;
  for (const auto& f : files) {
    sources.push_back({f.filename().string(), sha256_file(f)});
    // Channel layout needs a decode; the pixels are re-read during cropping
    // so only one source is resident at a time.
    channels.push_back(read_image(f).channels());
  }
  return build_from(std::move(sources), channels,
                    [&](std::size_t i) { return read_image(files[i]); },
                    degradation, options);
}

InterventionLibrary make_library(std::vector<ImageBuffer> patches,
                                 const DegradationSpec& degradation,
                                 std::uint64_t seed) {
  if (patches.empty()) throw InvalidArgument("library needs at least one patch");
  InterventionLibrary lib;
  lib.patch_size = patches.front().height();
  lib.channels = patches.front().channels();
  lib.degradation = degradation;
  lib.seed = seed;
  for (const auto& p : patches) {
    if (p.height() != lib.patch_size || p.width() != lib.patch_size ||
        p.channels() != lib.channels)
      throw DimensionError("library patches must share one square shape");
    lib.g_values.push_back(gradient_magnitude(p));
  }
  lib.pool = std::move(patches);
  return lib;
}

std::size_t GradientDensity::bin_of(double g) const {
  auto it = std::upper_bound(lower_edges.begin(), lower_edges.end(), g);
  return it == lower_edges.begin() ? 0 : std::size_t(it - lower_edges.begin()) - 1;
}

GradientDensity estimate_density(const InterventionLibrary& library,
                                 std::size_t bins) {
  if (library.g_values.empty()) throw InvalidArgument("library pool is empty");
  if (bins == 0) throw InvalidArgument("density needs at least one bin");
  std::vector<double> sorted = library.g_values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();

  GradientDensity d;
  d.lower_edges.push_back(sorted.front());
  for (std::size_t b = 1; b < bins; ++b) {
    const double edge = sorted[b * n / bins];
    if (edge > d.lower_edges.back()) d.lower_edges.push_back(edge);
  }
  d.members.resize(d.lower_edges.size());
  for (std::size_t i = 0; i < n; ++i)
    d.members[d.bin_of(library.g_values[i])].push_back(std::uint32_t(i));
  for (const auto& m : d.members) d.masses.push_back(double(m.size()) / double(n));
  return d;
}

std::uint32_t sample_index(const InterventionLibrary& library,
                           const GradientDensity& density, SamplingMode mode,
                           CounterRng& rng) {
  const std::size_t n = library.size();
  if (n == 0) throw InvalidArgument("library pool is empty");
  if (mode == SamplingMode::uniform) return std::uint32_t(rng.below(n));

  // Bin mass is member count / n, so drawing a rank below n and locating its
  // bin picks bins with exactly their mass.
  std::uint64_t rank = rng.below(n);
  std::size_t bin = 0;
  while (rank >= density.members[bin].size()) {
    rank -= density.members[bin].size();
    ++bin;
  }
  const auto& members = density.members[bin];
  return members[rng.below(members.size())];
}

std::pair<std::uint32_t, const ImageBuffer*> sample_patch(
    const InterventionLibrary& library, const GradientDensity& density,
    SamplingMode mode, CounterRng& rng) {
  const std::uint32_t i = sample_index(library, density, mode, rng);
  return {i, &library.pool[i]};
}

void save_library(const InterventionLibrary& library,
                  const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (library.pool.empty() || library.pool.size() != library.g_values.size())
    throw InvalidArgument("library pool and gradient table are inconsistent");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

  {
    std::ofstream pool(dir / "pool.bin", std::ios::binary);
    if (!pool) throw IoError("cannot write '" + (dir / "pool.bin").string() + "'");
    for (const auto& patch : library.pool)
      for (float v : patch.data()) write_le(pool, v);
    std::ofstream g(dir / "g.bin", std::ios::binary);
    if (!g) throw IoError("cannot write '" + (dir / "g.bin").string() + "'");
    for (double v : library.g_values) write_le(g, v);
    if (!pool || !g) throw IoError("short write in '" + dir.string() + "'");
  }

  const GradientDensity density = estimate_density(library);
  nlohmann::json manifest;
  manifest["version"] = kLibraryFormatVersion;
  manifest["patch_size"] = library.patch_size;
  manifest["channels"] = library.channels;
  manifest["count"] = library.pool.size();
  manifest["degradation"] = library.degradation;
  manifest["seed"] = library.seed;
  manifest["bins"] = {{"lower_edges", density.lower_edges}, {"masses", density.masses}};
  manifest["sources"] = nlohmann::json::array();
  for (const auto& s : library.sources)
    manifest["sources"].push_back({{"path", s.path}, {"sha256", s.sha256}});
  manifest["files"] = {{"pool.bin", sha256_file(dir / "pool.bin")},
                       {"g.bin", sha256_file(dir / "g.bin")}};
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("cannot write '" + (dir / "manifest.json").string() + "'");
}

InterventionLibrary load_library(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot read '" + (dir / "manifest.json").string() + "'");
    try {
      manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed library manifest: " + std::string(e.what()));
    }
  }
  try {
    const int version = manifest.at("version").get<int>();
    if (version != kLibraryFormatVersion)
      throw FormatError("library format version " + std::to_string(version) +
                        " is not supported (expected " +
                        std::to_string(kLibraryFormatVersion) + ")");

    InterventionLibrary lib;
    lib.patch_size = manifest.at("patch_size").get<int>();
    lib.channels = manifest.at("channels").get<int>();
    lib.seed = manifest.at("seed").get<std::uint64_t>();
    lib.degradation = manifest.at("degradation").get<DegradationSpec>();
    for (const auto& s : manifest.at("sources"))
      lib.sources.push_back({s.at("path").get<std::string>(),
                             s.at("sha256").get<std::string>()});
    const std::size_t count = manifest.at("count").get<std::size_t>();

    const auto pool_bytes = slurp(dir / "pool.bin");
    const auto g_bytes = slurp(dir / "g.bin");
    if (sha256_hex(pool_bytes) != manifest.at("files").at("pool.bin").get<std::string>())
      throw FormatError("pool.bin checksum mismatch (corrupted or truncated)");
    if (sha256_hex(g_bytes) != manifest.at("files").at("g.bin").get<std::string>())
      throw FormatError("g.bin checksum mismatch (corrupted or truncated)");

    const std::size_t per_patch =
        std::size_t(lib.patch_size) * lib.patch_size * lib.channels;
    if (pool_bytes.size() != count * per_patch * sizeof(float) ||
        g_bytes.size() != count * sizeof(double))
      throw FormatError("library blob sizes do not match manifest count");

    lib.pool.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::vector<float> samples(per_patch);
      for (std::size_t k = 0; k < per_patch; ++k)
        samples[k] = read_le<float>(pool_bytes, (i * per_patch + k) * sizeof(float));
      lib.pool.emplace_back(lib.patch_size, lib.patch_size, lib.channels,
                            std::move(samples));
      lib.g_values.push_back(read_le<double>(g_bytes, i * sizeof(double)));
    }
    return lib;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed library manifest: " + std::string(e.what()));
  }
}

}  // namespace cem
