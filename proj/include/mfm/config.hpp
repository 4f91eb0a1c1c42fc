#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>

#include "mfm/driver.hpp"

namespace mfm {

enum class RunMode { Mfm, Atsmc, FmOracle, Diagnose };

struct ExperimentConfig {
  std::string preset = "gmm4";
  RunMode mode = RunMode::Mfm;
  MfmConfig mfm;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = "out";
  std::size_t diagnostic_samples = 2048;
  std::uint64_t target_seed = 0;  // fixes random target structure (gmm16 variances, lgcp counts)
  bool divergence_set = false;
  // lgcp
  int lgcp_side = 40;
  std::filesystem::path lgcp_counts;
  // field system
  int field_dim = 64;
};

/// Preset defaults; throws ConfigError for an unknown name.
ExperimentConfig preset_config(const std::string& name);

/// Applies one flat `key = value` setting. Errors name the key.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Reads a flat key/value file (`#` starts a comment) into raw settings,
/// in file order.
std::vector<std::pair<std::string, std::string>> read_settings(const std::filesystem::path& path);

/// Checks cross-field constraints, fills dimension-dependent defaults.
void finalize_config(ExperimentConfig& cfg);

/// Canonical key/value dump; hashing it identifies the run.
std::string canonical_config(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

std::string mode_name(RunMode mode);
RunMode parse_mode(const std::string& s);

/// Base, target and initial distribution for the configured preset.
Problem build_problem(const ExperimentConfig& cfg);

/// Exact target draws used as the MMD reference (empty when no sampler).
Matrix reference_samples(const Problem& problem, const ExperimentConfig& cfg);

/// Runs the configured mode and writes artifacts into cfg.out.
void run_experiment(const ExperimentConfig& cfg, std::ostream& log);

/// Reads a counts CSV (one integer per cell, any comma/newline layout).
std::vector<int> read_counts_csv(const std::filesystem::path& path);
void write_counts_csv(const std::filesystem::path& path, const std::vector<int>& counts,
                      int side);

/// Samples CSV: comment line, header x_1..x_d, one sample per row.
void write_samples_csv(const std::filesystem::path& path, const Matrix& samples,
                       const std::string& comment);
Matrix read_samples_csv(const std::filesystem::path& path);

}  // namespace mfm
