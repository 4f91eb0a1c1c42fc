#include "mfm/config.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace mfm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& why) {
  throw ConfigError("config field '" + key + "': " + why + " (got '" + value + "')");
}

template <class T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const auto* first = value.data();
  const auto* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) bad_value(key, value, "expected an integer");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(key, value, "expected a number");
  }
  if (used != value.size() || !std::isfinite(out)) bad_value(key, value, "expected a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "expected true or false");
}

template <class T>
T positive(const std::string& key, const std::string& value, T v) {
  if (!(v > T(0))) bad_value(key, value, "must be positive");
  return v;
}

std::string nonlocal_name(NonlocalKernel k) {
  switch (k) {
    case NonlocalKernel::Rwmh: return "rwmh";
    case NonlocalKernel::Imh: return "imh";
    case NonlocalKernel::Cis: return "cis";
  }
  return "rwmh";
}

int problem_dim(const ExperimentConfig& cfg) {
  if (cfg.preset == "gmm4" || cfg.preset == "gmm16") return 2;
  if (cfg.preset == "many_well") return 32;
  if (cfg.preset == "field") return cfg.field_dim;
  if (cfg.preset == "lgcp") return cfg.lgcp_side * cfg.lgcp_side;
  if (cfg.preset == "normal1d") return 1;
  throw ConfigError("config field 'preset': unknown preset '" + cfg.preset + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::Mfm: return "mfm";
    case RunMode::Atsmc: return "atsmc";
    case RunMode::FmOracle: return "fm-oracle";
    case RunMode::Diagnose: return "diagnose";
  }
  return "mfm";
}

RunMode parse_mode(const std::string& s) {
  if (s == "mfm") return RunMode::Mfm;
  if (s == "atsmc") return RunMode::Atsmc;
  if (s == "fm-oracle") return RunMode::FmOracle;
  if (s == "diagnose") return RunMode::Diagnose;
  bad_value("mode", s, "expected one of mfm, atsmc, fm-oracle, diagnose");
}

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig cfg;
  cfg.preset = name;
  MfmConfig& m = cfg.mfm;
  m.particles = 128;
  m.hidden = 128;
  m.iterations = 5000;
  m.k_q = 10;
  if (name == "gmm4") {
    m.mala.tau = 0.2;
  } else if (name == "gmm16") {
    m.mala.tau = 0.2;
    m.k_q = 100;
  } else if (name == "many_well") {
    m.mala.tau = 0.1;
  } else if (name == "field") {
    m.particles = 1024;
    m.hidden = 256;
    m.mala.tau = 1e-4;
    m.iterations = 10000;
    m.k_q = 1000;
    m.ode.divergence = DivergenceMode::Hutchinson;
    cfg.divergence_set = true;
    cfg.diagnostic_samples = 1024;
  } else if (name == "lgcp") {
    m.hidden = 1024;
    m.mala.tau = 0.01;
    cfg.diagnostic_samples = 256;
  } else if (name == "normal1d") {
    m.particles = 4096;
    m.hidden = 32;
    m.mala.tau = 0.2;
    m.iterations = 500;
  } else {
    throw ConfigError("config field 'preset': unknown preset '" + name + "'");
  }
  return cfg;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  MfmConfig& m = cfg.mfm;
  if (key == "preset") {
    if (value != cfg.preset) bad_value(key, value, "preset must be chosen before other settings");
  } else if (key == "mode") {
    cfg.mode = parse_mode(value);
  } else if (key == "seed") {
    cfg.seed = parse_integer<std::uint64_t>(key, value);
  } else if (key == "out") {
    if (value.empty()) bad_value(key, value, "empty path");
    cfg.out = value;
  } else if (key == "workers") {
    m.workers = positive(key, value, parse_integer<int>(key, value));
  } else if (key == "iterations") {
    m.iterations = positive(key, value, parse_integer<long>(key, value));
  } else if (key == "particles") {
    m.particles = positive(key, value, parse_integer<int>(key, value));
  } else if (key == "kq") {
    m.k_q = positive(key, value, parse_integer<long>(key, value));
  } else if (key == "alpha_target") {
    m.alpha_target = parse_double(key, value);
    if (!(m.alpha_target > 0.0 && m.alpha_target < 1.0)) bad_value(key, value, "must lie in (0, 1)");
  } else if (key == "mala.tau") {
    m.mala.tau = positive(key, value, parse_double(key, value));
  } else if (key == "ode.steps") {
    m.ode.n_steps = positive(key, value, parse_integer<int>(key, value));
  } else if (key == "divergence") {
    if (value == "exact") {
      m.ode.divergence = DivergenceMode::Exact;
      m.ode.n_probes = 1;
    } else if (value.rfind("hutchinson", 0) == 0) {
      m.ode.divergence = DivergenceMode::Hutchinson;
      m.ode.n_probes = 1;
      if (value.size() > 10) {
        if (value[10] != ':') bad_value(key, value, "expected exact or hutchinson:N");
        m.ode.n_probes = positive(key, value, parse_integer<int>(key, value.substr(11)));
      }
    } else {
      bad_value(key, value, "expected exact or hutchinson:N");
    }
    cfg.divergence_set = true;
  } else if (key == "ot.sigma_min") {
    m.ot.sigma_min = parse_double(key, value);
    if (!(m.ot.sigma_min > 0.0 && m.ot.sigma_min < 1.0)) bad_value(key, value, "must lie in (0, 1)");
  } else if (key == "nonlocal") {
    if (value == "rwmh") m.nonlocal = NonlocalKernel::Rwmh;
    else if (value == "imh") m.nonlocal = NonlocalKernel::Imh;
    else if (value == "cis") m.nonlocal = NonlocalKernel::Cis;
    else bad_value(key, value, "expected rwmh, imh or cis");
  } else if (key == "cis.candidates") {
    m.cis_candidates = positive(key, value, parse_integer<int>(key, value));
  } else if (key == "hidden") {
    m.hidden = positive(key, value, parse_integer<int>(key, value));
  } else if (key == "fourier.frequencies") {
    m.fourier.n_frequencies = positive(key, value, parse_integer<int>(key, value));
  } else if (key == "learning_rate") {
    m.learning_rate = positive(key, value, parse_double(key, value));
  } else if (key == "anneal") {
    m.anneal = parse_bool(key, value);
  } else if (key == "smc.mala_steps") {
    m.smc_mala_steps = positive(key, value, parse_integer<int>(key, value));
  } else if (key == "diagnostics.samples") {
    cfg.diagnostic_samples = positive(key, value, parse_integer<std::size_t>(key, value));
  } else if (key == "target.seed") {
    cfg.target_seed = parse_integer<std::uint64_t>(key, value);
  } else if (key == "lgcp.grid_side") {
    cfg.lgcp_side = positive(key, value, parse_integer<int>(key, value));
  } else if (key == "lgcp.counts") {
    cfg.lgcp_counts = value;
  } else if (key == "field.d") {
    cfg.field_dim = parse_integer<int>(key, value);
    if (cfg.field_dim < 2) bad_value(key, value, "must be at least 2");
  } else {
    throw ConfigError("config field '" + key + "': unknown field");
  }
}

std::vector<std::pair<std::string, std::string>> read_settings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

void finalize_config(ExperimentConfig& cfg) {
  if (!cfg.seed) throw ConfigError("config field 'seed': a seed is required");
  cfg.mfm.seed = *cfg.seed;
  const int d = problem_dim(cfg);
  if (!cfg.divergence_set) {
    cfg.mfm.ode.divergence = d <= 64 ? DivergenceMode::Exact : DivergenceMode::Hutchinson;
    cfg.mfm.ode.n_probes = 1;
  }
  if (cfg.mode == RunMode::FmOracle && (cfg.preset == "lgcp" || cfg.preset == "field"))
    throw ConfigError("config field 'mode': fm-oracle needs exact samples, unavailable for '" +
                      cfg.preset + "'");
  try {
    cfg.mfm.validate();
  } catch (const PreconditionError& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
}

std::string canonical_config(const ExperimentConfig& cfg) {
  const MfmConfig& m = cfg.mfm;
  std::ostringstream os;
  os << "preset=" << cfg.preset << '\n'
     << "mode=" << mode_name(cfg.mode) << '\n'
     << "seed=" << (cfg.seed ? *cfg.seed : m.seed) << '\n'
     << "iterations=" << m.iterations << '\n'
     << "particles=" << m.particles << '\n'
     << "kq=" << m.k_q << '\n'
     << "alpha_target=" << fmt(m.alpha_target) << '\n'
     << "mala.tau=" << fmt(m.mala.tau) << '\n'
     << "ode.steps=" << m.ode.n_steps << '\n'
     << "divergence="
     << (m.ode.divergence == DivergenceMode::Exact ? std::string("exact")
                                                   : "hutchinson:" + std::to_string(m.ode.n_probes))
     << '\n'
     << "ot.sigma_min=" << fmt(m.ot.sigma_min) << '\n'
     << "nonlocal=" << nonlocal_name(m.nonlocal) << '\n'
     << "cis.candidates=" << m.cis_candidates << '\n'
     << "hidden=" << m.hidden << '\n'
     << "fourier.frequencies=" << m.fourier.n_frequencies << '\n'
     << "learning_rate=" << fmt(m.learning_rate) << '\n'
     << "anneal=" << (m.anneal ? "true" : "false") << '\n'
     << "smc.mala_steps=" << m.smc_mala_steps << '\n'
     << "diagnostics.samples=" << cfg.diagnostic_samples << '\n'
     << "target.seed=" << cfg.target_seed << '\n';
  if (cfg.preset == "lgcp")
    os << "lgcp.grid_side=" << cfg.lgcp_side << '\n'
       << "lgcp.counts=" << cfg.lgcp_counts.string() << '\n';
  if (cfg.preset == "field") os << "field.d=" << cfg.field_dim << '\n';
  return os.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : canonical_config(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------

Problem build_problem(const ExperimentConfig& cfg) {
  const int d = problem_dim(cfg);
  const TargetDensity base = make_standard_normal(d);
  if (cfg.preset == "gmm4") return {base, make_gmm4(), std::nullopt};
  if (cfg.preset == "gmm16") {
    Vector corner = Vector::Constant(2, -14.0);
    return {base, make_gmm16(cfg.target_seed), make_isotropic_gaussian(corner, 0.5)};
  }
  if (cfg.preset == "many_well") return {base, make_many_well(), std::nullopt};
  if (cfg.preset == "field") {
    FieldSystemSpec spec;
    spec.d = cfg.field_dim;
    return {base, make_field_system(spec), std::nullopt};
  }
  if (cfg.preset == "lgcp") {
    LgcpSpec spec;
    spec.grid_side = cfg.lgcp_side;
    const std::vector<int> counts = cfg.lgcp_counts.empty()
                                        ? sample_lgcp_counts(spec, cfg.target_seed)
                                        : read_counts_csv(cfg.lgcp_counts);
    return {base, make_lgcp(spec, counts), std::nullopt};
  }
  // normal1d: N(0,1) target from a N(0,3^2) base
  return {make_isotropic_gaussian(Vector::Zero(1), 3.0), make_standard_normal(1), std::nullopt};
}

Matrix reference_samples(const Problem& problem, const ExperimentConfig& cfg) {
  if (!problem.target.has_sampler()) return Matrix(problem.target.dim(), 0);
  Rng rng = stream_rng(cfg.mfm.seed, Stream::Diagnostics, 0, 0);
  return problem.target.sample_columns(cfg.diagnostic_samples, rng);
}

// ---------------------------------------------------------------------------

std::vector<int> read_counts_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open counts file " + path.string());
  std::vector<int> counts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell = trim(cell);
      if (cell.empty()) continue;
      int v = 0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || v < 0)
        throw IoError(path.string() + ":" + std::to_string(lineno) +
                      ": expected a non-negative integer count, got '" + cell + "'");
      counts.push_back(v);
    }
  }
  return counts;
}

void write_counts_csv(const std::filesystem::path& path, const std::vector<int>& counts,
                      int side) {
  require(side > 0 && counts.size() == std::size_t(side) * std::size_t(side),
          "counts must fill a side x side grid");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# LGCP cell counts, " << side << "x" << side << " grid, row-major\n";
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) out << (c ? "," : "") << counts[std::size_t(r) * side + c];
    out << '\n';
  }
}

void write_samples_csv(const std::filesystem::path& path, const Matrix& samples,
                       const std::string& comment) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# " << comment << '\n';
  for (Eigen::Index j = 0; j < samples.rows(); ++j) out << (j ? "," : "") << "x_" << j + 1;
  out << '\n';
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < samples.cols(); ++i) {
    for (Eigen::Index j = 0; j < samples.rows(); ++j) out << (j ? "," : "") << samples(j, i);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Matrix read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::vector<std::vector<double>> rows;
  bool header = false;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!header) {
      header = true;
      width = cells.size();
      continue;
    }
    if (cells.size() != width) throw IoError("ragged row in " + path.string());
    std::vector<double> row;
    for (const auto& c : cells) row.push_back(parse_double("sample", c));
    rows.push_back(std::move(row));
  }
  Matrix out(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < width; ++j) out(j, i) = rows[i][j];
  return out;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json diagnostics_json(const DiagnosticsReport& rep, double acc_local, double acc_flow,
                                std::size_t beta_trace_len) {
  auto num = [](double v) -> nlohmann::json {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
  };
  return {
      {"mmd2", rep.mmd2_unbiased ? num(*rep.mmd2_unbiased) : nlohmann::json(nullptr)},
      {"ksd_u", num(rep.ksd_u)},
      {"ksd_v", num(rep.ksd_v)},
      {"mean_logpi", num(rep.mean_logpi)},
      {"wall_seconds", rep.wall_seconds},
      {"acceptance_local", num(acc_local)},
      {"acceptance_flow", num(acc_flow)},
      {"beta_trace_len", beta_trace_len},
  };
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_run_log(const std::filesystem::path& path, const std::vector<RunLogRow>& rows,
                   const std::string& comment) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# " << comment << '\n';
  out << "iteration,beta,loss,acceptance_local,acceptance_flow\n";
  out << std::setprecision(17);
  auto cell = [&](double v) {
    if (std::isfinite(v)) out << v;
    else out << "nan";
  };
  for (const auto& r : rows) {
    out << r.iteration << ',';
    cell(r.beta);
    out << ',';
    cell(r.loss);
    out << ',';
    cell(r.acceptance_local);
    out << ',';
    cell(r.acceptance_flow);
    out << '\n';
  }
}

void append_results_row(const std::filesystem::path& path, const ExperimentConfig& cfg,
                        const nlohmann::json& diag) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  if (fresh)
    out << "preset,mode,seed,config_hash,mmd2,ksd_u,ksd_v,mean_logpi,wall_seconds,"
           "acceptance_local,acceptance_flow,beta_trace_len\n";
  auto cell = [&](const char* key) {
    const auto& v = diag.at(key);
    if (v.is_null()) out << "nan";
    else out << std::setprecision(17) << v.get<double>();
  };
  out << cfg.preset << ',' << mode_name(cfg.mode) << ',' << cfg.mfm.seed << ','
      << config_hash(cfg);
  for (const char* k : {"mmd2", "ksd_u", "ksd_v", "mean_logpi", "wall_seconds",
                        "acceptance_local", "acceptance_flow"}) {
    out << ',';
    cell(k);
  }
  out << ',' << diag.at("beta_trace_len").get<std::size_t>() << '\n';
}

std::vector<std::pair<std::string, std::string>> canonical_pairs(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(canonical_config(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return out;
}

// Too few surviving flow draws leave the statistics undefined; they are
// reported as NaN instead of failing the run.
DiagnosticsReport evaluate_flow_samples(const Problem& problem, const ExperimentConfig& cfg,
                                        const Matrix& samples, std::ostream& log) {
  if (samples.cols() < 2) {
    log << "warning: fewer than two flow samples survived, diagnostics are undefined\n";
    const double nan = std::numeric_limits<double>::quiet_NaN();
    DiagnosticsReport rep;
    rep.ksd_u = rep.ksd_v = rep.mean_logpi = nan;
    if (problem.target.has_sampler()) rep.mmd2_unbiased = nan;
    return rep;
  }
  const Matrix ref = reference_samples(problem, cfg);
  return evaluate_samples(problem.target, samples, ref.leftCols(std::min(ref.cols(), samples.cols())),
                          {}, cfg.mfm.workers);
}

DiagnosticsReport flow_diagnostics(const FlowParams& flow, const Problem& problem,
                                   const ExperimentConfig& cfg, std::ostream& log) {
  std::size_t failures = 0;
  const Matrix samples = sample_flow(flow, problem.target, cfg.diagnostic_samples,
                                     cfg.mfm.seed, cfg.mfm.ode, cfg.mfm.workers, &failures);
  if (failures) log << "warning: " << failures << " flow samples diverged and were dropped\n";
  return evaluate_flow_samples(problem, cfg, samples, log);
}

}  // namespace

void run_experiment(const ExperimentConfig& cfg_in, std::ostream& log) {
  ExperimentConfig cfg = cfg_in;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  std::filesystem::create_directories(cfg.out);
  const std::filesystem::path ckpt = cfg.out / "flow.ckpt";

  if (cfg.mode == RunMode::Diagnose) {
    const auto [flow, meta] = load_flow(ckpt);
    ExperimentConfig stored = preset_config(meta.at("config").at("preset").get<std::string>());
    for (const auto& [k, v] : meta.at("config").items()) {
      if (k == "preset" || k == "mode") continue;
      apply_setting(stored, k, v.get<std::string>());
    }
    stored.mode = parse_mode(meta.at("config").at("mode").get<std::string>());
    stored.mfm.workers = cfg.mfm.workers;
    stored.out = cfg.out;
    finalize_config(stored);
    const Problem problem = build_problem(stored);
    DiagnosticsReport rep = flow_diagnostics(flow, problem, stored, log);
    rep.wall_seconds = elapsed();
    const nlohmann::json diag =
        diagnostics_json(rep, std::numeric_limits<double>::quiet_NaN(),
                         std::numeric_limits<double>::quiet_NaN(),
                         meta.at("beta_trace_len").get<std::size_t>());
    nlohmann::json fixed = diag;
    fixed["acceptance_local"] = meta.at("acceptance_local");
    fixed["acceptance_flow"] = meta.at("acceptance_flow");
    write_json(cfg.out / "diagnostics.diagnose.json", fixed);
    log << "diagnose: wrote " << (cfg.out / "diagnostics.diagnose.json").string() << '\n';
    return;
  }

  const Problem problem = build_problem(cfg);
  const std::string comment =
      "config_hash=" + config_hash(cfg) + " seed=" + std::to_string(cfg.mfm.seed);
  log << "preset " << cfg.preset << ", mode " << mode_name(cfg.mode) << ", dim "
      << problem.target.dim() << ", " << comment << '\n';

  nlohmann::json config_json = nlohmann::json::object();
  for (const auto& [k, v] : canonical_pairs(cfg)) config_json[k] = v;

  nlohmann::json diag;
  if (cfg.mode == RunMode::Mfm || cfg.mode == RunMode::FmOracle) {
    FlowParams flow;
    double acc_local = std::numeric_limits<double>::quiet_NaN();
    double acc_flow = std::numeric_limits<double>::quiet_NaN();
    std::size_t trace_len = 0;
    if (cfg.mode == RunMode::Mfm) {
      RunArtifacts art = run_mfm(problem, cfg.mfm);
      acc_local = art.ensemble.counters.local_rate();
      acc_flow = art.ensemble.counters.flow_rate();
      trace_len = art.ensemble.temper.history.size();
      write_run_log(cfg.out / "run_log.csv", art.log, comment);
      write_samples_csv(cfg.out / "chains.csv", art.ensemble.positions, comment);
      flow = std::move(art.flow);
    } else {
      flow = run_fm_oracle(problem.target, cfg.mfm);
    }
    std::size_t failures = 0;
    const Matrix samples = sample_flow(flow, problem.target, cfg.diagnostic_samples,
                                       cfg.mfm.seed, cfg.mfm.ode, cfg.mfm.workers, &failures);
    if (failures) log << "warning: " << failures << " flow samples diverged and were dropped\n";
    write_samples_csv(cfg.out / "samples.csv", samples, comment);
    DiagnosticsReport rep = evaluate_flow_samples(problem, cfg, samples, log);
    rep.wall_seconds = elapsed();
    diag = diagnostics_json(rep, acc_local, acc_flow, trace_len);
    nlohmann::json meta{{"config", config_json},
                        {"acceptance_local", diag["acceptance_local"]},
                        {"acceptance_flow", diag["acceptance_flow"]},
                        {"beta_trace_len", trace_len}};
    save_flow(ckpt, flow, meta);
  } else {
    const SmcResult res = run_atsmc(problem, cfg.mfm);
    write_samples_csv(cfg.out / "samples.csv", res.ensemble.positions, comment);
    std::vector<RunLogRow> rows;
    const auto& hist = res.ensemble.temper.history;
    for (std::size_t i = 1; i < hist.size(); ++i)
      rows.push_back({static_cast<long>(i), hist[i], std::numeric_limits<double>::quiet_NaN(),
                      res.ensemble.counters.local_rate(), std::numeric_limits<double>::quiet_NaN()});
    write_run_log(cfg.out / "run_log.csv", rows, comment);
    DiagnosticsReport rep =
        evaluate_samples(problem.target, res.ensemble.positions,
                         problem.target.has_sampler()
                             ? reference_samples(problem, [&] {
                                 ExperimentConfig c = cfg;
                                 c.diagnostic_samples = res.ensemble.positions.cols();
                                 return c;
                               }())
                             : Matrix(problem.target.dim(), 0),
                         {}, cfg.mfm.workers);
    rep.wall_seconds = elapsed();
    diag = diagnostics_json(rep, res.ensemble.counters.local_rate(),
                            std::numeric_limits<double>::quiet_NaN(), hist.size());
  }
  write_json(cfg.out / "diagnostics.json", diag);
  append_results_row(cfg.out / "results.csv", cfg, diag);
  log << "done in " << std::fixed << std::setprecision(2) << elapsed() << " s\n";
}

}  // namespace mfm
