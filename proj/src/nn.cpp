#include "mfm/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace mfm {

double FourierFeatures::max_frequency() const {
  return scale * std::ldexp(1.0, n_frequencies - 1);
}

Vector FourierFeatures::embed(double t) const {
  Vector out(size());
  double f = scale;
  for (int j = 0; j < n_frequencies; ++j) {
    out[j] = std::sin(f * t);
    out[n_frequencies + j] = std::cos(f * t);
    f *= 2.0;
  }
  return out;
}

// ---------------------------------------------------------------------------

MlpParams::MlpParams(std::vector<int> widths) : widths_(std::move(widths)) {
  require(widths_.size() >= 2, "an MLP needs at least input and output widths");
  Eigen::Index off = 0;
  for (int l = 0; l < n_layers(); ++l) {
    require(widths_[l] > 0 && widths_[l + 1] > 0, "MLP widths must be positive");
    offsets_.push_back(off);
    off += Eigen::Index(widths_[l + 1]) * widths_[l] + widths_[l + 1];
  }
  theta_ = Vector::Zero(off);
}

Eigen::Map<Matrix> MlpParams::weight(int l) {
  return {theta_.data() + offsets_[l], widths_[l + 1], widths_[l]};
}
Eigen::Map<const Matrix> MlpParams::weight(int l) const {
  return {theta_.data() + offsets_[l], widths_[l + 1], widths_[l]};
}
Eigen::Map<Vector> MlpParams::bias(int l) {
  return {theta_.data() + offsets_[l] + Eigen::Index(widths_[l + 1]) * widths_[l],
          widths_[l + 1]};
}
Eigen::Map<const Vector> MlpParams::bias(int l) const {
  return {theta_.data() + offsets_[l] + Eigen::Index(widths_[l + 1]) * widths_[l],
          widths_[l + 1]};
}

MlpParams init_mlp(const std::vector<int>& widths, Rng& rng, bool zero_last) {
  MlpParams p(widths);
  for (int l = 0; l < p.n_layers(); ++l) {
    if (zero_last && l + 1 == p.n_layers()) continue;
    const double bound = 1.0 / std::sqrt(double(widths[l]));
    auto w = p.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        w(i, j) = bound * (2.0 * rng.uniform() - 1.0);
  }
  return p;
}

// ---------------------------------------------------------------------------

namespace {

void check_input(const MlpParams& p, Eigen::Index rows) {
  if (rows != p.input_size())
    throw ShapeMismatch("MLP expects input of size " + std::to_string(p.input_size()) +
                        ", got " + std::to_string(rows));
}

}  // namespace

MlpTape mlp_forward_tape(const MlpParams& p, const Matrix& inputs) {
  check_input(p, inputs.rows());
  MlpTape tape;
  tape.h.reserve(p.n_layers() + 1);
  tape.h.push_back(inputs);
  for (int l = 0; l < p.n_layers(); ++l) {
    Matrix z = p.weight(l) * tape.h.back();
    z.colwise() += p.bias(l);
    if (l + 1 < p.n_layers()) z = z.array().tanh();
    tape.h.push_back(std::move(z));
  }
  return tape;
}

Matrix mlp_forward_batch(const MlpParams& p, const Matrix& inputs) {
  return mlp_forward_tape(p, inputs).output();
}

Vector mlp_forward(const MlpParams& p, const Vector& input) {
  return mlp_forward_batch(p, input);
}

void mlp_backward(const MlpParams& p, const MlpTape& tape,
                  const Matrix& cotangents, double* grad_theta,
                  Matrix* grad_input) {
  if (cotangents.rows() != p.output_size() ||
      cotangents.cols() != tape.output().cols())
    throw ShapeMismatch("MLP cotangent shape does not match the output");
  Matrix g = cotangents;
  for (int l = p.n_layers() - 1; l >= 0; --l) {
    const Matrix& h_in = tape.h[l];
    if (grad_theta) {
      const Eigen::Index w_off =
          p.weight(l).data() - p.theta().data();
      Eigen::Map<Matrix> dw(grad_theta + w_off, p.widths()[l + 1],
                            p.widths()[l]);
      Eigen::Map<Vector> db(grad_theta + w_off + dw.size(),
                            p.widths()[l + 1]);
      dw.noalias() += g * h_in.transpose();
      db += g.rowwise().sum();
    }
    if (l > 0) {
      Matrix prev = p.weight(l).transpose() * g;
      prev.array() *= 1.0 - h_in.array().square();
      g = std::move(prev);
    } else if (grad_input) {
      *grad_input = p.weight(0).transpose() * g;
    }
  }
}

MlpParams mlp_param_gradient(const MlpParams& p, const Vector& input,
                             const Vector& cotangent) {
  const MlpTape tape = mlp_forward_tape(p, input);
  MlpParams grad(p.widths());
  mlp_backward(p, tape, cotangent, grad.theta().data(), nullptr);
  return grad;
}

Vector mlp_input_vjp(const MlpParams& p, const Vector& input,
                     const Vector& cotangent) {
  const MlpTape tape = mlp_forward_tape(p, input);
  Matrix gi;
  mlp_backward(p, tape, cotangent, nullptr, &gi);
  return gi.col(0);
}

Matrix mlp_jvp_batch(const MlpParams& p, const MlpTape& tape,
                     const Matrix& tangents) {
  if (tangents.rows() != p.input_size() ||
      tangents.cols() != tape.h.front().cols())
    throw ShapeMismatch("MLP tangent shape does not match the input batch");
  Matrix t = tangents;
  for (int l = 0; l < p.n_layers(); ++l) {
    Matrix next = p.weight(l) * t;
    if (l + 1 < p.n_layers()) next.array() *= 1.0 - tape.h[l + 1].array().square();
    t = std::move(next);
  }
  return t;
}

Matrix mlp_jvp_probes(const MlpParams& p, const MlpTape& tape, Eigen::Index col,
                      const Matrix& tangents) {
  if (tangents.rows() != p.input_size())
    throw ShapeMismatch("MLP probe rows must match the input size");
  Matrix t = tangents;
  for (int l = 0; l < p.n_layers(); ++l) {
    Matrix next = p.weight(l) * t;
    if (l + 1 < p.n_layers()) {
      const Vector deriv = 1.0 - tape.h[l + 1].col(col).array().square();
      next.array().colwise() *= deriv.array();
    }
    t = std::move(next);
  }
  return t;
}

Vector mlp_input_jvp(const MlpParams& p, const Vector& input,
                     const Vector& tangent) {
  check_input(p, tangent.size());
  const MlpTape tape = mlp_forward_tape(p, input);
  return mlp_jvp_batch(p, tape, tangent);
}

// ---------------------------------------------------------------------------

AdamState::AdamState(Eigen::Index n_params, double initial_step_, long total)
    : initial_step(initial_step_),
      total_steps(total),
      m(Vector::Zero(n_params)),
      v(Vector::Zero(n_params)) {
  require(total_steps >= 1, "Adam schedule needs at least one step");
  require(initial_step >= 0.0, "Adam step size must be non-negative");
}

double AdamState::step_size(long k) const {
  return std::max(0.0, initial_step * (1.0 - double(k) / double(total_steps)));
}

void adam_step(AdamState& s, Vector& params, const Vector& gradient) {
  if (params.size() != gradient.size() || s.m.size() != params.size())
    throw ShapeMismatch("Adam state, parameters and gradient must share a size");
  if (!gradient.allFinite())
    throw NonFiniteGradient("Adam received a non-finite gradient");
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * gradient;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * gradient.cwiseAbs2();
  const double lr = s.step_size(s.step);
  if (lr == 0.0) return;
  const double c1 = 1.0 - std::pow(s.beta1, double(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, double(s.step));
  params.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'F', 'M', 'B', 'L', 'O', 'B', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated blob");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_blob(const std::filesystem::path& path, const nlohmann::json& header,
                const Vector& payload) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  nlohmann::json h = header;
  h["payload_doubles"] = payload.size();
  const std::string text = h.dump();
  os.write(kMagic, sizeof kMagic);
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (Eigen::Index i = 0; i < payload.size(); ++i)
    put_u64(os, std::bit_cast<std::uint64_t>(payload[i]));
  if (!os) throw IoError("failed writing " + path.string());
}

std::pair<nlohmann::json, Vector> read_blob(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError(path.string() + " is not a checkpoint blob");
  const std::uint64_t len = get_u64(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len)))
    throw IoError("truncated blob header in " + path.string());
  nlohmann::json header = nlohmann::json::parse(text);
  const auto n = header.at("payload_doubles").get<Eigen::Index>();
  Vector payload(n);
  for (Eigen::Index i = 0; i < n; ++i)
    payload[i] = std::bit_cast<double>(get_u64(is));
  return {header, payload};
}

nlohmann::json mlp_shape_json(const MlpParams& p) {
  return nlohmann::json{{"widths", p.widths()}, {"activation", "tanh"}};
}

}  // namespace mfm
