// Command-line driver: mfm --preset gmm4 --seed 1 --out runs/gmm4
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "mfm/config.hpp"

namespace {

int fail(const char* kind, const std::string& message) {
  nlohmann::json err{{"error", kind}, {"message", message}};
  std::cerr << err.dump() << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Markovian flow matching sampler"};
  std::string config_path, preset, out, mode, divergence;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<long> kq, iters;
  std::optional<int> particles;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "flat key = value config file")->check(CLI::ExistingFile);
  app.add_option("--preset", preset, "gmm4 | gmm16 | many_well | field | lgcp | normal1d");
  app.add_option("--seed", seed, "root seed (required)");
  app.add_option("--out", out, "output directory");
  app.add_option("--workers", workers, "worker threads (default: available cores)");
  app.add_option("--mode", mode, "mfm | atsmc | fm-oracle | diagnose");
  app.add_option("--kq", kq, "local steps per flow step");
  app.add_option("--iters", iters, "iterations K");
  app.add_option("--particles", particles, "particles N");
  app.add_option("--divergence", divergence, "exact | hutchinson:N");
  app.add_option("--set", sets, "extra key=value override, repeatable");
  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<std::pair<std::string, std::string>> settings;
    if (!config_path.empty()) settings = mfm::read_settings(config_path);
    std::string chosen = "gmm4";
    for (const auto& [k, v] : settings)
      if (k == "preset") chosen = v;
    if (!preset.empty()) chosen = preset;

    mfm::ExperimentConfig cfg = mfm::preset_config(chosen);
    cfg.mfm.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    for (const auto& [k, v] : settings)
      if (k != "preset") mfm::apply_setting(cfg, k, v);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw mfm::ConfigError("--set expects key=value, got '" + s + "'");
      mfm::apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    if (!out.empty()) mfm::apply_setting(cfg, "out", out);
    if (workers) mfm::apply_setting(cfg, "workers", std::to_string(*workers));
    if (!mode.empty()) mfm::apply_setting(cfg, "mode", mode);
    if (kq) mfm::apply_setting(cfg, "kq", std::to_string(*kq));
    if (iters) mfm::apply_setting(cfg, "iterations", std::to_string(*iters));
    if (particles) mfm::apply_setting(cfg, "particles", std::to_string(*particles));
    if (!divergence.empty()) mfm::apply_setting(cfg, "divergence", divergence);
    if (cfg.mode == mfm::RunMode::Diagnose && !cfg.seed) cfg.seed = 0;  // taken from the checkpoint
    mfm::finalize_config(cfg);
    mfm::run_experiment(cfg, std::cerr);
  } catch (const mfm::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("IoError", std::string("malformed checkpoint metadata: ") + e.what());
  } catch (const std::exception& e) {
    return fail("Error", e.what());
  }
  return 0;
}
