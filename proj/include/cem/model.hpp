#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <string>

#include "cem/degradations.hpp"
#include "cem/geometry.hpp"
#include "cem/image.hpp"

namespace cem {

enum class Backend { builtin, subprocess, onnx_file };

std::string to_string(Backend backend);

struct ModelInfo {
  std::string name;
  Task task = Task::other;
  int scale = 1;
  /// 0 accepts any channel count.
  int channels = 0;
  bool deterministic = true;
  bool concurrent_safe = true;
  Backend backend = Backend::builtin;
};

/// A restoration network treated as a black box F: degraded -> restored.
///
/// infer() validates the reply against the declared scale: output dims must
/// be input dims times scale with the same channel count, and samples are
/// clamped to [0, 1].
class Model {
 public:
  explicit Model(ModelInfo info);
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelInfo& info() const { return info_; }

  ImageBuffer infer(const ImageBuffer& input) const;

  /// The output restricted to `region` (output coordinates). Equal to
  /// crop_region(infer(input), region) bit-exact; builtins override the hook
  /// to evaluate only the requested pixels.
  ImageBuffer infer_region(const ImageBuffer& input, const RoiRect& region) const;

 protected:
  virtual ImageBuffer run(const ImageBuffer& input) const = 0;
  virtual ImageBuffer run_region(const ImageBuffer& input, const RoiRect& region) const;

 private:
  void check_input(const ImageBuffer& input) const;
  ModelInfo info_;
};

using ModelHandle = std::shared_ptr<const Model>;

/// Builtin analytic models, addressed as "name" or "name(param)":
///   identity, bicubic_up(scale), box_denoise(radius), median(radius),
///   local_window(radius), global_bias(k).
ModelHandle make_builtin(const std::string& spec);

struct SubprocessOptions {
  std::map<std::string, std::string> env;
  std::chrono::milliseconds handshake_timeout{30000};
  /// Children spawned for a concurrent-safe model.
  int pool_size = 1;
  /// Reported in ModelInfo; onnx:FILE references set onnx_file.
  Backend backend = Backend::subprocess;
};

/// Spawns `command` through /bin/sh and speaks the framed JSON protocol
/// over its stdin/stdout.
ModelHandle spawn_subprocess_model(const std::string& command,
                                   const SubprocessOptions& options = {});

/// Number of requests that were in flight simultaneously at peak, for
/// subprocess models (0 for other backends).
int peak_in_flight(const Model& model);

/// Resolves builtin:NAME, subprocess:CMD and onnx:FILE model references.
/// onnx:FILE runs the command in $CEM_ONNX_BRIDGE (default
/// "python3 -m cem_bridge") with "--checkpoint FILE" appended.
ModelHandle open_model(const std::string& reference,
                       const SubprocessOptions& options = {});

}  // namespace cem
