#include "mfm/flow.hpp"

#include <cmath>

namespace mfm {

Vector FlowParams::flatten() const {
  Vector flat(size());
  flat << net_x.theta(), net_t.theta(), net_scale.theta();
  return flat;
}

void FlowParams::assign(const Vector& flat) {
  if (flat.size() != size())
    throw ShapeMismatch("flat flow parameter vector has the wrong length");
  net_x.theta() = flat.head(net_x.size());
  net_t.theta() = flat.segment(net_x.size(), net_t.size());
  net_scale.theta() = flat.tail(net_scale.size());
}

bool FlowParams::all_finite() const {
  return net_x.theta().allFinite() && net_t.theta().allFinite() &&
         net_scale.theta().allFinite();
}

FlowParams init_flow(int dim, int hidden, const FourierFeatures& ff, Rng& rng) {
  require(dim > 0 && hidden > 0, "flow dimension and width must be positive");
  FlowParams p;
  p.dim = dim;
  p.fourier = ff;
  p.net_x = init_mlp({dim + ff.size(), hidden, hidden, dim}, rng, true);
  p.net_t = init_mlp({ff.size(), hidden, hidden, dim}, rng, true);
  p.net_scale = init_mlp({ff.size(), hidden, hidden, 1}, rng);
  return p;
}

FlowParams zero_flow(int dim, int hidden, const FourierFeatures& ff) {
  FlowParams p;
  p.dim = dim;
  p.fourier = ff;
  p.net_x = MlpParams({dim + ff.size(), hidden, hidden, dim});
  p.net_t = MlpParams({ff.size(), hidden, hidden, dim});
  p.net_scale = MlpParams({ff.size(), hidden, hidden, 1});
  return p;
}

namespace {

double softplus(double u) {
  return u > 30.0 ? u : std::log1p(std::exp(u));
}
double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

}  // namespace

double scale_from_raw(double u) { return kScaleFloor + softplus(u); }

double raw_for_scale(double scale) {
  require(scale > kScaleFloor, "flow scale must exceed the floor");
  return std::log(std::expm1(scale - kScaleFloor));
}

void OdeConfig::validate() const {
  if (n_steps < 1) throw PreconditionError("ODE needs at least one step");
  if (divergence == DivergenceMode::Hutchinson && n_probes < 1)
    throw PreconditionError("Hutchinson divergence needs at least one probe");
}

// ---------------------------------------------------------------------------

namespace {

struct TimeTerms {
  Vector ff;
  Vector score_weight;  // net_t(ff(t))
  double scale = 1.0;
};

TimeTerms time_terms(const FlowParams& p, double t) {
  TimeTerms tt;
  tt.ff = p.fourier.embed(t);
  tt.score_weight = mlp_forward(p.net_t, tt.ff);
  tt.scale = scale_from_raw(mlp_forward(p.net_scale, tt.ff)[0]);
  return tt;
}

struct StageOut {
  Matrix v;
  Vector div;
};

// One vector-field evaluation at a shared time t over the columns of xs.
// Columns already marked bad are skipped; columns whose score overflows are
// marked bad.
StageOut eval_stage(const FlowParams& p, const TargetDensity& target, double t,
                    const Matrix& xs, std::vector<bool>& ok, bool want_div,
                    const OdeConfig& cfg, const std::vector<Matrix>* probes) {
  const int d = p.dim;
  const Eigen::Index B = xs.cols();
  const TimeTerms tt = time_terms(p, t);

  Matrix input(d + p.fourier.size(), B);
  Matrix scores = Matrix::Zero(d, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    if (ok[b]) {
      Vector s = target.grad_log_density(xs.col(b));
      if (s.allFinite()) {
        scores.col(b) = s;
        input.col(b).head(d) = xs.col(b);
      } else {
        ok[b] = false;
      }
    }
    if (!ok[b]) input.col(b).head(d).setZero();
    input.col(b).tail(p.fourier.size()) = tt.ff;
  }
  const MlpTape tape = mlp_forward_tape(p.net_x, input);

  StageOut out;
  out.v = (tape.output() + (scores.array().colwise() * tt.score_weight.array()).matrix()) /
          tt.scale;
  if (!want_div) return out;

  out.div = Vector::Zero(B);
  if (cfg.divergence == DivergenceMode::Exact) {
    Matrix basis = Matrix::Zero(d + p.fourier.size(), d);
    basis.topRows(d).setIdentity();
    for (Eigen::Index b = 0; b < B; ++b) {
      if (!ok[b]) continue;
      const Matrix jac = mlp_jvp_probes(p.net_x, tape, b, basis);
      double tr = jac.trace();
      const Vector x = xs.col(b);
      Vector e = Vector::Zero(d);
      for (int i = 0; i < d; ++i) {
        e[i] = 1.0;
        tr += tt.score_weight[i] * target.hvp_log_density(x, e)[i];
        e[i] = 0.0;
      }
      out.div[b] = tr / tt.scale;
    }
  } else {
    const auto n_probes = static_cast<double>(probes->size());
    for (const Matrix& eps : *probes) {
      Matrix tangents = Matrix::Zero(d + p.fourier.size(), B);
      tangents.topRows(d) = eps;
      const Matrix je = mlp_jvp_batch(p.net_x, tape, tangents);
      for (Eigen::Index b = 0; b < B; ++b) {
        if (!ok[b]) continue;
        const Vector hv = target.hvp_log_density(xs.col(b), eps.col(b));
        const double quad =
            eps.col(b).dot(je.col(b)) +
            (tt.score_weight.array() * eps.col(b).array() * hv.array()).sum();
        out.div[b] += quad / (tt.scale * n_probes);
      }
    }
  }
  return out;
}

}  // namespace

BatchFlowResult integrate_columns(const FlowParams& p,
                                  const TargetDensity& target, const Matrix& xs,
                                  double t_start, double t_end,
                                  const OdeConfig& cfg, std::vector<Rng>* rngs,
                                  bool track_divergence) {
  cfg.validate();
  if (xs.rows() != p.dim || target.dim() != p.dim)
    throw DimensionMismatch("flow, target and state dimensions must agree");
  const Eigen::Index B = xs.cols();
  const bool hutch =
      track_divergence && cfg.divergence == DivergenceMode::Hutchinson;
  if (hutch && (!rngs || static_cast<Eigen::Index>(rngs->size()) != B))
    throw PreconditionError("Hutchinson divergence needs one generator per column");

  BatchFlowResult res;
  res.x = xs;
  res.delta_logp = Vector::Zero(B);
  res.ok.assign(B, true);
  for (Eigen::Index b = 0; b < B; ++b) res.ok[b] = xs.col(b).allFinite();

  const double h = (t_end - t_start) / cfg.n_steps;
  std::vector<Matrix> probes;
  for (int k = 0; k < cfg.n_steps; ++k) {
    const double t = t_start + k * h;
    if (hutch) {
      probes.assign(cfg.n_probes, Matrix(p.dim, B));
      for (Eigen::Index b = 0; b < B; ++b)
        for (auto& eps : probes) {
          Vector col(p.dim);
          (*rngs)[b].fill_rademacher(col);
          eps.col(b) = col;
        }
    }
    const Matrix& x = res.x;
    const StageOut s1 = eval_stage(p, target, t, x, res.ok, track_divergence, cfg, &probes);
    const StageOut s2 = eval_stage(p, target, t + 0.5 * h, x + 0.5 * h * s1.v, res.ok,
                                   track_divergence, cfg, &probes);
    const StageOut s3 = eval_stage(p, target, t + 0.5 * h, x + 0.5 * h * s2.v, res.ok,
                                   track_divergence, cfg, &probes);
    const StageOut s4 = eval_stage(p, target, t + h, x + h * s3.v, res.ok,
                                   track_divergence, cfg, &probes);
    res.x += (h / 6.0) * (s1.v + 2.0 * s2.v + 2.0 * s3.v + s4.v);
    if (track_divergence)
      res.delta_logp -= (h / 6.0) * (s1.div + 2.0 * s2.div + 2.0 * s3.div + s4.div);
    for (Eigen::Index b = 0; b < B; ++b) {
      if (res.ok[b] && !(res.x.col(b).allFinite() && std::isfinite(res.delta_logp[b])))
        res.ok[b] = false;
      if (!res.ok[b]) res.x.col(b).setZero();
    }
  }
  for (Eigen::Index b = 0; b < B; ++b) {
    if (!res.ok[b]) {
      res.x.col(b).setConstant(std::numeric_limits<double>::quiet_NaN());
      res.delta_logp[b] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return res;
}

// ---------------------------------------------------------------------------

Vector vector_field(const FlowParams& p, const TargetDensity& target, double t,
                    const Vector& x) {
  require(t >= 0.0 && t <= 1.0, "vector field time must lie in [0, 1]");
  if (x.size() != p.dim) throw DimensionMismatch("vector_field: wrong state size");
  std::vector<bool> ok{true};
  OdeConfig cfg;
  StageOut s = eval_stage(p, target, t, x, ok, false, cfg, nullptr);
  if (!ok[0]) throw NonFiniteScore("target score is not finite");
  return s.v.col(0);
}

double divergence(const FlowParams& p, const TargetDensity& target, double t,
                  const Vector& x, const OdeConfig& cfg, Rng* rng) {
  require(t >= 0.0 && t <= 1.0, "divergence time must lie in [0, 1]");
  if (x.size() != p.dim) throw DimensionMismatch("divergence: wrong state size");
  cfg.validate();
  std::vector<Matrix> probes;
  if (cfg.divergence == DivergenceMode::Hutchinson) {
    require(rng != nullptr, "Hutchinson divergence needs a generator");
    for (int j = 0; j < cfg.n_probes; ++j) {
      Vector eps(p.dim);
      rng->fill_rademacher(eps);
      probes.emplace_back(eps);
    }
  }
  std::vector<bool> ok{true};
  StageOut s = eval_stage(p, target, t, x, ok, true, cfg, &probes);
  if (!ok[0]) throw NonFiniteScore("target score is not finite");
  return s.div[0];
}

namespace {

AugmentedState integrate_single(const FlowParams& p, const TargetDensity& target,
                                const AugmentedState& s0, double t_start,
                                double t_end, const OdeConfig& cfg, Rng* rng) {
  require(s0.delta_logp == 0.0, "integration must start with delta_logp = 0");
  std::vector<Rng> rngs;
  if (rng) rngs.push_back(*rng);
  BatchFlowResult r = integrate_columns(p, target, s0.x, t_start, t_end, cfg,
                                        rng ? &rngs : nullptr);
  if (rng) *rng = rngs.front();
  if (!r.ok[0]) throw NonFiniteState("flow ODE state became non-finite");
  return {r.x.col(0), r.delta_logp[0]};
}

}  // namespace

AugmentedState integrate_forward(const FlowParams& p, const TargetDensity& target,
                                 const AugmentedState& s0, const OdeConfig& cfg,
                                 Rng* rng) {
  return integrate_single(p, target, s0, 0.0, 1.0, cfg, rng);
}

AugmentedState integrate_backward(const FlowParams& p, const TargetDensity& target,
                                  const AugmentedState& s1, const OdeConfig& cfg,
                                  Rng* rng) {
  return integrate_single(p, target, s1, 1.0, 0.0, cfg, rng);
}

double pullback_log_density(const FlowParams& p, const TargetDensity& target,
                            const Vector& x, const OdeConfig& cfg, Rng* rng) {
  require(x.allFinite(), "pullback needs a finite point");
  const AugmentedState y = integrate_forward(p, target, {x, 0.0}, cfg, rng);
  return target.log_density(y.x) - y.delta_logp;
}

std::vector<AugmentedState> integrate_forward_batch(
    const FlowParams& p, const TargetDensity& target,
    const std::vector<AugmentedState>& rows, const OdeConfig& cfg,
    std::vector<Rng>* rngs) {
  std::vector<AugmentedState> out;
  if (rows.empty()) return out;
  Matrix xs(p.dim, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i].delta_logp == 0.0, "integration must start with delta_logp = 0");
    if (rows[i].x.size() != p.dim) throw DimensionMismatch("batch row has the wrong size");
    if (!rows[i].x.allFinite())
      throw PreconditionError("batch row " + std::to_string(i) + " is not finite");
    xs.col(i) = rows[i].x;
  }
  BatchFlowResult r = integrate_columns(p, target, xs, 0.0, 1.0, cfg, rngs);
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!r.ok[i])
      throw NonFiniteState("flow ODE state became non-finite at row " + std::to_string(i));
    out.push_back({r.x.col(i), r.delta_logp[i]});
  }
  return out;
}

// ---------------------------------------------------------------------------

FieldTape field_forward(const FlowParams& p, const TargetDensity& target,
                        const Vector& ts, const Matrix& xs) {
  const int d = p.dim;
  const Eigen::Index B = xs.cols();
  if (xs.rows() != d || ts.size() != B)
    throw ShapeMismatch("field_forward: inconsistent batch shapes");
  Matrix ff(p.fourier.size(), B);
  for (Eigen::Index b = 0; b < B; ++b) ff.col(b) = p.fourier.embed(ts[b]);
  Matrix input(d + p.fourier.size(), B);
  input.topRows(d) = xs;
  input.bottomRows(p.fourier.size()) = ff;

  FieldTape tape;
  tape.x_tape = mlp_forward_tape(p.net_x, input);
  tape.t_tape = mlp_forward_tape(p.net_t, ff);
  tape.scale_tape = mlp_forward_tape(p.net_scale, ff);
  tape.scores.resize(d, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    Vector s = target.grad_log_density(xs.col(b));
    if (!s.allFinite()) throw NonFiniteScore("target score is not finite");
    tape.scores.col(b) = s;
  }
  tape.numerator = tape.x_tape.output() +
                   (tape.t_tape.output().array() * tape.scores.array()).matrix();
  tape.scale.resize(B);
  for (Eigen::Index b = 0; b < B; ++b)
    tape.scale[b] = scale_from_raw(tape.scale_tape.output()(0, b));
  tape.value = tape.numerator * tape.scale.cwiseInverse().asDiagonal();
  return tape;
}

void field_backward(const FlowParams& p, const FieldTape& tape,
                    const Matrix& cot, Vector& grad) {
  if (grad.size() != p.size()) throw ShapeMismatch("flow gradient has the wrong length");
  const Eigen::Index B = cot.cols();
  const Matrix d_num = cot * tape.scale.cwiseInverse().asDiagonal();
  Matrix d_raw(1, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const double d_scale = -cot.col(b).dot(tape.value.col(b)) / tape.scale[b];
    d_raw(0, b) = d_scale * sigmoid(tape.scale_tape.output()(0, b));
  }
  const Matrix d_weight = (d_num.array() * tape.scores.array()).matrix();
  double* g = grad.data();
  mlp_backward(p.net_x, tape.x_tape, d_num, g, nullptr);
  mlp_backward(p.net_t, tape.t_tape, d_weight, g + p.net_x.size(), nullptr);
  mlp_backward(p.net_scale, tape.scale_tape, d_raw, g + p.net_x.size() + p.net_t.size(),
               nullptr);
}

// ---------------------------------------------------------------------------

void save_flow(const std::filesystem::path& path, const FlowParams& p,
               const nlohmann::json& meta) {
  nlohmann::json header{
      {"format", "mfm-flow"},
      {"dim", p.dim},
      {"fourier", {{"n_frequencies", p.fourier.n_frequencies}, {"scale", p.fourier.scale}}},
      {"net_x", mlp_shape_json(p.net_x)},
      {"net_t", mlp_shape_json(p.net_t)},
      {"net_scale", mlp_shape_json(p.net_scale)},
      {"meta", meta},
  };
  write_blob(path, header, p.flatten());
}

std::pair<FlowParams, nlohmann::json> load_flow(const std::filesystem::path& path) {
  auto [header, payload] = read_blob(path);
  if (header.value("format", "") != "mfm-flow")
    throw IoError(path.string() + " is not a flow checkpoint");
  FlowParams p;
  p.dim = header.at("dim").get<int>();
  p.fourier.n_frequencies = header.at("fourier").at("n_frequencies").get<int>();
  p.fourier.scale = header.at("fourier").at("scale").get<double>();
  p.net_x = MlpParams(header.at("net_x").at("widths").get<std::vector<int>>());
  p.net_t = MlpParams(header.at("net_t").at("widths").get<std::vector<int>>());
  p.net_scale = MlpParams(header.at("net_scale").at("widths").get<std::vector<int>>());
  p.assign(payload);
  return {p, header.value("meta", nlohmann::json::object())};
}

}  // namespace mfm
