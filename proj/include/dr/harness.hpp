#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dr/config.hpp"
#include "dr/models.hpp"
#include "dr/scenarios.hpp"

namespace dr {

using LogFn = std::function<void(const std::string&)>;

/// Data, stream and model resolved from a config. image_shape is the
/// per-example [H, W] when the data is image-like; buffer export needs it.
struct BuiltScenario {
  Stream stream;
  ModelSpec model;
  std::optional<Shape> image_shape;
  std::string data_note;  // where the digits came from: generated, cache, or real files
};

/// Resolves the dataset (generating and caching a stand-in when image data
/// is configured but absent), applies downscale/subsample/validation split,
/// and builds the experience stream plus the model spec sized to it.
BuiltScenario build_scenario(const RunConfig& cfg);

/// Dataset directory: $DR_DATA_DIR when set, else "data".
std::string data_dir();

/// Explicit cfg.id, else "run-" + 8 hex digits of FNV-1a over the config
/// bytes, so unnamed runs land in distinct, reproducible directories.
std::string resolve_run_id(const RunConfig& cfg, const std::string& config_text);

/// Canonical INI rendering of a config; parse_config(render_config(c))
/// reproduces c. Used for derived runs whose config exists only in memory.
std::string render_config(const RunConfig& cfg);

/// One accuracy-matrix cell in the long-form results table.
struct ResultRow {
  std::string run_id;
  Strategy strategy;
  std::uint64_t seed = 0;
  std::size_t trained_through_experience = 0;
  std::size_t evaluated_experience = 0;
  double accuracy = 0.0;
};

/// Header plus one line per row; floats use shortest round-trip form so the
/// bytes are a pure function of the values.
std::string format_csv(const std::vector<ResultRow>& rows);

struct RunArtifacts {
  std::string run_id;
  std::string dir;  // out_dir/run_id
  std::vector<ResultRow> rows;
};

/// The full experiment: every configured (strategy, seed) pair over the
/// stream. Writes results.csv, summary.json, timings.json, config.ini and
/// the stored buffers under out_dir/<run_id>/.
RunArtifacts exec_run(const RunConfig& cfg, const std::string& config_text,
                      const LogFn& log);

/// Two distillation arms differing in exactly (loss_mode, lr_mode):
/// (sum_all_steps, fixed) against (last_step_only, learned), same seeds and
/// same R/S. Emits both full runs plus a paired per-seed A_t table.
struct AblationArtifacts {
  RunArtifacts sum_fixed;
  RunArtifacts last_learned;
  std::string dir;  // paired outputs
};
AblationArtifacts exec_ablation(const RunConfig& cfg,
                                const std::string& config_text,
                                const LogFn& log);

struct TimingRow {
  std::string axis;  // "S" or "R"
  std::size_t value = 0;
  double mean_seconds = 0.0;
  double std_seconds = 0.0;
};

/// Distillation wall time on the first experience over the configured
/// S-grid (at timing.fixed_r) and R-grid (at timing.fixed_s): one discarded
/// warmup, then timing.repeats timed runs per grid point.
std::vector<TimingRow> run_timing_grid(const RunConfig& cfg, const LogFn& log);

/// Writes each stored sample as an 8-bit PGM named
/// exp<experience>_class<label>_<k>.pgm. Returns the paths written.
std::vector<std::string> export_memory_pgms(const std::string& memory_path,
                                            const std::string& out_dir);

// CLI entry points. These throw (FormatError, IoError, ContractError,
// NumericError); main maps exception type to exit code.
void cmd_run(const std::string& config_path, const LogFn& log);
void cmd_ablation(const std::string& config_path, const LogFn& log);
void cmd_timing(const std::string& config_path, const LogFn& log);
void cmd_distill(const std::string& config_path, std::size_t experience,
                 const LogFn& log);
void cmd_export_buffer(const std::string& memory_path,
                       const std::string& out_dir, const LogFn& log);
/// Parse + validate only; returns the problem list (empty = valid).
std::vector<std::string> cmd_validate(const std::string& config_path,
                                      const LogFn& log);

}  // namespace dr
