#include "vocmix/manifest.hpp"

#include <fstream>

#include "vocmix/digest.hpp"
#include "vocmix/errors.hpp"

namespace vocmix {

void RunManifest::add_input(const std::filesystem::path& path) {
  input_digests[path.string()] = "sha256:" + sha256_file(path);
}

void RunManifest::add_output(const std::filesystem::path& path) {
  output_digests[path.string()] = "sha256:" + sha256_file(path);
}

nlohmann::json RunManifest::to_json() const {
  return nlohmann::json{{"schema", "vocmix.manifest/1"},
                        {"command", command},
                        {"argv", argv},
                        {"config", resolved_config},
                        {"inputs", input_digests},
                        {"outputs", output_digests},
                        {"version", toolkit_version},
                        {"wall_seconds", wall_seconds}};
}

void RunManifest::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write manifest: " + path.string());
  }
  out << to_json().dump(2) << '\n';
  if (!out) {
    throw IoError("write failure on manifest: " + path.string());
  }
}

}  // namespace vocmix
