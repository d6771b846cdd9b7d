// Command-line entry point and layered configuration.
//
// A config document has three optional top-level keys: "model" (ModelConfig
// fields), "train" (TrainConfig fields) and "seed". Layers are applied in the
// order file, TGAVC_* environment, flags; unknown keys fail at every layer.
//
//   TGAVC_SEED=7  TGAVC_TRAIN__LR_A=0.001  TGAVC_MODEL__D_MODEL=32
//   --set train.max_steps=500

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tgavc/models.hpp"
#include "tgavc/training.hpp"

namespace tgavc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

struct ResolvedConfig {
  models::ModelConfig model;
  training::TrainConfig train;
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> origin;  // "train.lr_a" -> "file" | "env" | "flag"

  /// Snapshot written beside every run's outputs.
  std::string to_json() const;
};

/// TGAVC_* variables of the current process.
std::map<std::string, std::string> project_environment();

/// Applies file < env < `sets` ("section.key=value") over the defaults for
/// `num_speakers`. Throws ConfigError on unknown keys or invalid values.
ResolvedConfig resolve_config(int num_speakers, const std::optional<std::filesystem::path>& file,
                              const std::map<std::string, std::string>& env, const std::vector<std::string>& sets);

/// Dispatches a subcommand; returns the process exit code.
int run(int argc, char** argv);

}  // namespace tgavc::cli
