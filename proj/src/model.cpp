#include "sdeid/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace sdeid {

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.front().size();
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (rows[i].size() != c) throw StructuralError("ragged matrix rows");
    for (std::size_t j = 0; j < c; ++j) m(i, j) = rows[i][j];
  }
  return m;
}

std::vector<std::vector<double>> Matrix::to_rows() const {
  std::vector<std::vector<double>> out(rows_, std::vector<double>(cols_));
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) out[i][j] = (*this)(i, j);
  return out;
}

bool Matrix::all_finite() const { return sdeid::all_finite(data_); }

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

DiffusionParams DiffusionParams::zeros(std::size_t d, bool affine) {
  DiffusionParams p;
  p.b = Matrix(d, d);
  if (affine) p.bias = std::vector<double>(d, 0.0);
  return p;
}

SdeModel::SdeModel(DriftParams drift, DiffusionParams diffusion)
    : drift_(std::move(drift)), diffusion_(std::move(diffusion)) {
  const std::size_t d = drift_.a1.rows();
  if (d == 0) throw StructuralError("model dimension must be positive");
  if (!drift_.a1.is_square(d) || !drift_.a2.is_square(d) || !drift_.a3.is_square(d))
    throw StructuralError("drift matrices must all be d x d");
  if (!diffusion_.b.is_square(d)) throw StructuralError("diffusion matrix must be d x d");
  if (diffusion_.bias && diffusion_.bias->size() != d)
    throw StructuralError("diffusion bias must have length d");
  if (!(diffusion_.variance_floor > 0.0) || !std::isfinite(diffusion_.variance_floor))
    throw StructuralError("variance floor must be positive and finite");
  if (!drift_.a1.all_finite() || !drift_.a2.all_finite() || !drift_.a3.all_finite() ||
      !diffusion_.b.all_finite() || (diffusion_.bias && !all_finite(*diffusion_.bias)))
    throw StructuralError("model parameters must be finite");
}

SdeModel SdeModel::zeros(std::size_t d, bool affine) {
  return SdeModel(DriftParams::zeros(d), DiffusionParams::zeros(d, affine));
}

namespace {

void check_dim(const SdeModel& model, std::span<const double> x) {
  if (x.size() != model.dim())
    throw StructuralError("state has dimension " + std::to_string(x.size()) + ", model expects " +
                          std::to_string(model.dim()));
}

}  // namespace

StateVector drift_eval(const SdeModel& model, std::span<const double> x) {
  check_dim(model, x);
  const auto& p = model.drift();
  StateVector f(model.dim());
  for (std::size_t i = 0; i < f.size(); ++i)
    f[i] = dot(p.a1.row(i), x) + dot(p.a2.row(i), x) * dot(p.a3.row(i), x);
  return f;
}

std::vector<double> diffusion_eval(const SdeModel& model, std::span<const double> x) {
  check_dim(model, x);
  const auto& p = model.diffusion();
  std::vector<double> l(model.dim());
  for (std::size_t i = 0; i < l.size(); ++i) {
    l[i] = dot(p.b.row(i), x);
    if (p.bias) l[i] += (*p.bias)[i];
  }
  return l;
}

GaussianTransition transition_density(const SdeModel& model, std::span<const double> x,
                                      double tau) {
  if (!(tau > 0.0)) throw StructuralError("tau must be positive");
  const StateVector f = drift_eval(model, x);
  const std::vector<double> l = diffusion_eval(model, x);
  const double eps = model.diffusion().variance_floor;
  GaussianTransition g;
  g.mean.resize(x.size());
  g.variance.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    g.mean[i] = x[i] + tau * f[i];
    g.variance[i] = tau * (l[i] * l[i] + eps);
  }
  return g;
}

std::size_t EffectiveCoefficients::pair_index(std::size_t d, std::size_t j, std::size_t k) {
  if (j > k) std::swap(j, k);
  // rows 0..j-1 contribute d, d-1, ..., d-j+1 pairs
  return j * d - j * (j - 1) / 2 + (k - j);
}

EffectiveCoefficients effective_coefficients(const SdeModel& model) {
  const std::size_t d = model.dim();
  const auto& p = model.drift();
  EffectiveCoefficients c;
  c.dim = d;
  c.linear = p.a1;
  c.quadratic.assign(d, std::vector<double>(EffectiveCoefficients::pair_count(d), 0.0));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      c.quadratic[i][EffectiveCoefficients::pair_index(d, j, j)] = p.a2(i, j) * p.a3(i, j);
      for (std::size_t k = j + 1; k < d; ++k)
        c.quadratic[i][EffectiveCoefficients::pair_index(d, j, k)] =
            p.a2(i, j) * p.a3(i, k) + p.a2(i, k) * p.a3(i, j);
    }
  }

  const auto& diff = model.diffusion();
  c.diffusion_linear = diff.b;
  if (diff.bias) c.diffusion_bias = diff.bias;
  for (std::size_t i = 0; i < d; ++i) {
    double first = 0.0;
    for (double v : diff.b.row(i)) {
      if (v != 0.0) {
        first = v;
        break;
      }
    }
    if (first == 0.0 && diff.bias) first = (*diff.bias)[i];
    if (first < 0.0) {
      for (double& v : c.diffusion_linear.row(i)) v = -v;
      if (c.diffusion_bias) (*c.diffusion_bias)[i] = -(*c.diffusion_bias)[i];
    }
  }
  return c;
}

nlohmann::json model_to_json(const SdeModel& model) {
  nlohmann::json j;
  j["dim"] = model.dim();
  j["a1"] = model.drift().a1.to_rows();
  j["a2"] = model.drift().a2.to_rows();
  j["a3"] = model.drift().a3.to_rows();
  j["b"] = model.diffusion().b.to_rows();
  if (model.diffusion().bias) j["bias"] = *model.diffusion().bias;
  j["variance_floor"] = model.diffusion().variance_floor;
  return j;
}

SdeModel model_from_json(const nlohmann::json& j) {
  try {
    const auto d = j.at("dim").get<std::size_t>();
    auto read = [&](const char* key) {
      Matrix m = Matrix::from_rows(j.at(key).get<std::vector<std::vector<double>>>());
      if (!m.is_square(d)) throw StructuralError(std::string("field '") + key + "' is not dim x dim");
      return m;
    };
    DriftParams drift{read("a1"), read("a2"), read("a3")};
    DiffusionParams diffusion;
    diffusion.b = read("b");
    if (j.contains("bias") && !j.at("bias").is_null())
      diffusion.bias = j.at("bias").get<std::vector<double>>();
    diffusion.variance_floor =
        j.value("variance_floor", DiffusionParams::kDefaultVarianceFloor);
    return SdeModel(std::move(drift), std::move(diffusion));
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("malformed model JSON: ") + e.what());
  }
}

void save_model(const SdeModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  // nlohmann emits the shortest round-trip representation of each double.
  out << model_to_json(model).dump(2) << '\n';
}

SdeModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError("malformed model file " + path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace sdeid
