#include "nftl/losses.hpp"

#include <algorithm>
#include <cmath>

#include "nftl/csv.hpp"
#include "nftl/error.hpp"

namespace nftl {

namespace {

constexpr double kProbEps = 1e-7;

// Clamp applies inside log/division terms only; raw probabilities elsewhere.
double clamp_prob(double p) { return std::clamp(p, kProbEps, 1.0 - kProbEps); }

// Max-subtracted softmax of one row, in double.
std::vector<double> softmax_row(const float* z, std::size_t c) {
  double zmax = z[0];
  for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, double(z[j]));
  std::vector<double> p(c);
  double sum = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    p[j] = std::exp(double(z[j]) - zmax);
    sum += p[j];
  }
  for (std::size_t j = 0; j < c; ++j) p[j] /= sum;
  return p;
}

void check_batch(const Tensor& t, const char* what) {
  if (t.shape.size() != 2 || t.rows() == 0 || t.cols() == 0) {
    throw Error(std::string(what) + " must be a non-empty 2-D batch tensor");
  }
  check_finite(t, what);
}

// Returns the single hot index per row; rejects anything but exact one-hot rows.
std::size_t hot_index(const Tensor& y, std::size_t row) {
  std::size_t hot = y.cols();
  for (std::size_t j = 0; j < y.cols(); ++j) {
    float v = y.at(row, j);
    if (v == 1.0f) {
      if (hot != y.cols()) throw Error("labels are not one-hot: row has two hot entries");
      hot = j;
    } else if (v != 0.0f) {
      throw Error("labels are not one-hot: entries must be exactly 0 or 1");
    }
  }
  if (hot == y.cols()) throw Error("labels are not one-hot: row has no hot entry");
  return hot;
}

void check_label_shape(const Tensor& z, const Tensor& y) {
  if (y.shape != z.shape) throw Error("labels shape does not match logits shape");
}

}  // namespace

ProbVector softmax(const std::vector<float>& logits) {
  if (logits.empty()) throw Error("softmax of empty vector");
  check_finite(logits, "softmax input");
  std::vector<double> p = softmax_row(logits.data(), logits.size());
  ProbVector out;
  out.p.resize(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) out.p[j] = static_cast<float>(p[j]);
  return out;
}

LossEval ce(const Tensor& logits, const Tensor& onehot) {
  check_batch(logits, "ce logits");
  check_label_shape(logits, onehot);
  std::size_t b = logits.rows(), c = logits.cols();
  double inv_b = 1.0 / double(b);
  LossEval out;
  out.grad = zeros(logits.shape);
  double value = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    std::size_t t = hot_index(onehot, r);
    std::vector<double> p = softmax_row(logits.data.data() + r * c, c);
    value -= std::log(clamp_prob(p[t]));
    for (std::size_t j = 0; j < c; ++j) {
      double y = (j == t) ? 1.0 : 0.0;
      out.grad.at(r, j) = static_cast<float>((p[j] - y) * inv_b);
    }
  }
  out.value = static_cast<float>(value * inv_b);
  return out;
}

LossEval ice(const Tensor& logits, const Tensor& onehot) {
  check_batch(logits, "ice logits");
  check_label_shape(logits, onehot);
  std::size_t b = logits.rows(), c = logits.cols();
  double inv_b = 1.0 / double(b);
  LossEval out;
  out.grad = zeros(logits.shape);
  double value = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    std::size_t t = hot_index(onehot, r);
    std::vector<double> p = softmax_row(logits.data.data() + r * c, c);
    double pt = clamp_prob(p[t]);
    value -= std::log(1.0 - pt);
    for (std::size_t j = 0; j < c; ++j) {
      double g = (j == t) ? p[t] : -p[j] * pt / (1.0 - pt);
      out.grad.at(r, j) = static_cast<float>(g * inv_b);
    }
  }
  out.value = static_cast<float>(value * inv_b);
  return out;
}

LossEval klu(const Tensor& logits) {
  check_batch(logits, "klu logits");
  std::size_t b = logits.rows(), c = logits.cols();
  double inv_b = 1.0 / double(b);
  double inv_c = 1.0 / double(c);
  LossEval out;
  out.grad = zeros(logits.shape);
  double value = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    std::vector<double> p = softmax_row(logits.data.data() + r * c, c);
    for (std::size_t j = 0; j < c; ++j) {
      value -= inv_c * std::log(double(c) * clamp_prob(p[j]));
      out.grad.at(r, j) = static_cast<float>((p[j] - inv_c) * inv_b);
    }
  }
  out.value = static_cast<float>(value * inv_b);
  return out;
}

LossEval mse(const Tensor& pred, const Tensor& target) {
  check_batch(pred, "mse prediction");
  check_batch(target, "mse target");
  if (pred.shape != target.shape) throw Error("mse prediction/target shape mismatch");
  std::size_t b = pred.rows();
  double inv_b = 1.0 / double(b);
  LossEval out;
  out.grad = zeros(pred.shape);
  double value = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double e = double(pred.data[i]) - double(target.data[i]);
    value += e * e;
    out.grad.data[i] = static_cast<float>(2.0 * e * inv_b);
  }
  out.value = static_cast<float>(value * inv_b);
  return out;
}

LossEval dos(const Tensor& pred) {
  check_batch(pred, "dos prediction");
  std::size_t b = pred.rows();
  double inv_b = 1.0 / double(b);
  LossEval out;
  out.grad = zeros(pred.shape);
  double value = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double e = double(pred.data[i]);
    value += e * e;
    out.grad.data[i] = static_cast<float>(2.0 * e * inv_b);
  }
  out.value = static_cast<float>(value * inv_b);
  return out;
}

std::string loss_id_name(LossId id) {
  switch (id) {
    case LossId::ce: return "ce";
    case LossId::ice: return "ice";
    case LossId::klu: return "klu";
    case LossId::mse: return "mse";
    case LossId::dos: return "dos";
  }
  throw Error("unknown loss id");
}

LossId loss_id_from_name(const std::string& name) {
  if (name == "ce") return LossId::ce;
  if (name == "ice") return LossId::ice;
  if (name == "klu") return LossId::klu;
  if (name == "mse") return LossId::mse;
  if (name == "dos") return LossId::dos;
  throw Error("unknown loss id '" + name + "'");
}

namespace {

double grad_norm(const Tensor& g) {
  double acc = 0.0;
  for (float v : g.data) acc += double(v) * double(v);
  return std::sqrt(acc);
}

// Logits whose softmax reproduces the given probability row.
Tensor logits_for(const std::vector<double>& p) {
  Tensor z = zeros({1, p.size()});
  for (std::size_t j = 0; j < p.size(); ++j) {
    z.data[j] = static_cast<float>(std::log(p[j]));
  }
  return z;
}

std::vector<double> prob_path_point(double p_true, std::size_t c) {
  std::vector<double> p(c, (1.0 - p_true) / double(c - 1));
  p[0] = p_true;
  return p;
}

}  // namespace

std::vector<ProbePoint> stability_probe(LossId id, std::size_t points, std::size_t classes,
                                        std::size_t dim) {
  if (points < 2) throw Error("stability_probe needs at least 2 points");
  if (classes < 2) throw Error("stability_probe needs at least 2 classes");
  std::vector<ProbePoint> series;
  series.reserve(points);

  if (id == LossId::ce || id == LossId::ice || id == LossId::klu) {
    Tensor y = zeros({1, classes});
    y.data[0] = 1.0f;
    double p_hi = 0.9;
    // klu worsens toward its own target, the uniform distribution; ce/ice
    // worsen toward zero true-class probability.
    double p_lo = (id == LossId::klu) ? 1.0 / double(classes) : 1e-6;
    for (std::size_t k = 0; k < points; ++k) {
      double f = double(k) / double(points - 1);
      double p_true = (id == LossId::klu)
                          ? p_hi + (p_lo - p_hi) * f
                          : p_hi * std::pow(p_lo / p_hi, f);
      Tensor z = logits_for(prob_path_point(p_true, classes));
      LossEval ev;
      if (id == LossId::ce) ev = ce(z, y);
      else if (id == LossId::ice) ev = ice(z, y);
      else ev = klu(z);
      series.push_back(ProbePoint{p_true, grad_norm(ev.grad)});
    }
    return series;
  }

  // Generation path: prediction s*u against fixed target -u, scale s: 1 -> 0.
  Tensor u = zeros({1, dim});
  for (std::size_t j = 0; j < dim; ++j) u.data[j] = static_cast<float>(1.0 / std::sqrt(double(dim)));
  Tensor target = u;
  for (float& v : target.data) v = -v;
  for (std::size_t k = 0; k < points; ++k) {
    double s = 1.0 - double(k) / double(points - 1);
    Tensor pred = u;
    for (float& v : pred.data) v = static_cast<float>(double(v) * s);
    LossEval ev = (id == LossId::dos) ? dos(pred) : mse(pred, target);
    series.push_back(ProbePoint{s, grad_norm(ev.grad)});
  }
  return series;
}

void write_probe_csv(std::ostream& out, const std::vector<LossId>& ids, std::size_t points,
                     std::size_t classes, std::size_t dim) {
  out << "loss_id,path_param,grad_norm\n";
  for (LossId id : ids) {
    for (const ProbePoint& pt : stability_probe(id, points, classes, dim)) {
      out << loss_id_name(id) << ',' << csv_num(pt.path_param) << ',' << csv_num(pt.grad_norm)
          << '\n';
    }
  }
}

}  // namespace nftl
