#include "cem/model.hpp"

#include <cstdlib>

#include "cem/error.hpp"
#include "cem/imaging.hpp"

namespace cem {

std::string to_string(Backend backend) {
  switch (backend) {
    case Backend::builtin: return "builtin";
    case Backend::subprocess: return "subprocess";
    case Backend::onnx_file: return "onnx-file";
  }
  return "builtin";
}

Model::Model(ModelInfo info) : info_(std::move(info)) {
  if (info_.scale < 1) throw InvalidArgument("model scale must be >= 1");
  if (info_.scale > 1 && info_.task != Task::sr)
    throw InvalidArgument("only SR models may declare scale > 1");
}

void Model::check_input(const ImageBuffer& input) const {
  if (input.empty()) throw DimensionError("model input is empty");
  if (info_.channels != 0 && input.channels() != info_.channels)
    throw DimensionError("model '" + info_.name + "' expects " +
                         std::to_string(info_.channels) + " channels, got " +
                         std::to_string(input.channels()));
}

ImageBuffer Model::infer(const ImageBuffer& input) const {
  check_input(input);
  ImageBuffer out = run(input);
  const int s = info_.scale;
  if (out.height() != input.height() * s || out.width() != input.width() * s ||
      out.channels() != input.channels())
    throw DimensionError(
        "model '" + info_.name + "' violated its dimension contract: input " +
        std::to_string(input.height()) + "x" + std::to_string(input.width()) +
        "x" + std::to_string(input.channels()) + " with scale " +
        std::to_string(s) + " produced " + std::to_string(out.height()) + "x" +
        std::to_string(out.width()) + "x" + std::to_string(out.channels()));
  out.clamp();
  return out;
}

ImageBuffer Model::infer_region(const ImageBuffer& input,
                                const RoiRect& region) const {
  check_input(input);
  check_inside(region, input.height() * info_.scale, input.width() * info_.scale);
  ImageBuffer out = run_region(input, region);
  if (out.height() != region.h || out.width() != region.w ||
      out.channels() != input.channels())
    throw DimensionError("model '" + info_.name + "' returned a region of the wrong size");
  out.clamp();
  return out;
}

ImageBuffer Model::run_region(const ImageBuffer& input, const RoiRect& region) const {
  return crop_region(infer(input), region);
}

ModelHandle open_model(const std::string& reference,
                       const SubprocessOptions& options) {
  const auto colon = reference.find(':');
  if (colon == std::string::npos)
    throw InvalidArgument("model reference '" + reference +
                          "' must be builtin:NAME, subprocess:CMD or onnx:FILE");
  const std::string kind = reference.substr(0, colon);
  const std::string rest = reference.substr(colon + 1);
  if (rest.empty()) throw InvalidArgument("empty model reference after '" + kind + ":'");
  if (kind == "builtin") return make_builtin(rest);
  if (kind == "subprocess") return spawn_subprocess_model(rest, options);
  if (kind == "onnx") {
    const char* bridge = std::getenv("CEM_ONNX_BRIDGE");
    std::string cmd = bridge && *bridge ? bridge : "python3 -m cem_bridge";
    cmd += " --checkpoint '" + rest + "'";
    SubprocessOptions onnx = options;
    onnx.backend = Backend::onnx_file;
    return spawn_subprocess_model(cmd, onnx);
  }
  throw InvalidArgument("unknown model backend '" + kind + "'");
}

}  // namespace cem
