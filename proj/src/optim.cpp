#include "nftl/optim.hpp"

#include <cmath>

#include "nftl/error.hpp"
#include "nftl/tensor.hpp"

namespace nftl {

std::string opt_kind_name(OptKind kind) {
  switch (kind) {
    case OptKind::sgd: return "sgd";
    case OptKind::momentum: return "momentum";
    case OptKind::nesterov: return "nesterov";
    case OptKind::adagrad: return "adagrad";
    case OptKind::adadelta: return "adadelta";
    case OptKind::adam: return "adam";
  }
  throw Error("unknown optimizer kind");
}

OptKind opt_kind_from_name(const std::string& name) {
  if (name == "sgd") return OptKind::sgd;
  if (name == "momentum") return OptKind::momentum;
  if (name == "nesterov") return OptKind::nesterov;
  if (name == "adagrad") return OptKind::adagrad;
  if (name == "adadelta") return OptKind::adadelta;
  if (name == "adam") return OptKind::adam;
  throw Error("unknown optimizer kind '" + name + "'");
}

void validate_spec(const OptimizerSpec& spec) {
  // lr = 0 is allowed: a no-op step, used by degenerate-configuration checks.
  if (!(spec.lr >= 0.0f)) throw Error("optimizer lr must be >= 0");
  if (!(spec.eps > 0.0f)) throw Error("optimizer eps must be > 0");
  auto coeff_ok = [](float v) { return v >= 0.0f && v < 1.0f; };
  if (!coeff_ok(spec.momentum)) throw Error("momentum coefficient must be in [0, 1)");
  if (!coeff_ok(spec.beta1) || !coeff_ok(spec.beta2)) throw Error("betas must be in [0, 1)");
  if (!coeff_ok(spec.rho)) throw Error("rho must be in [0, 1)");
  if (spec.weight_decay < 0.0f) throw Error("weight_decay must be >= 0");
}

OptimizerState init_optimizer(const OptimizerSpec& spec, std::size_t param_len) {
  validate_spec(spec);
  if (param_len == 0) throw Error("init_optimizer needs param_len > 0");
  OptimizerState st;
  st.kind = spec.kind;
  st.step_count = 0;
  switch (spec.kind) {
    case OptKind::sgd:
      break;
    case OptKind::momentum:
    case OptKind::nesterov:
    case OptKind::adagrad:
      st.acc1.assign(param_len, 0.0f);
      break;
    case OptKind::adadelta:
    case OptKind::adam:
      st.acc1.assign(param_len, 0.0f);
      st.acc2.assign(param_len, 0.0f);
      break;
  }
  return st;
}

std::pair<std::vector<float>, OptimizerState> step(const OptimizerSpec& spec,
                                                   const OptimizerState& state,
                                                   std::span<const float> params,
                                                   std::span<const float> grads) {
  validate_spec(spec);
  if (state.kind != spec.kind) throw Error("optimizer state kind does not match spec");
  if (params.size() != grads.size()) throw Error("params/grads length mismatch");
  std::size_t n = params.size();
  if (!state.acc1.empty() && state.acc1.size() != n) {
    throw Error("optimizer state length does not match params");
  }
  for (float g : grads) {
    if (!std::isfinite(g)) throw NumericError("optimizer step: non-finite gradient");
  }

  std::vector<float> out(params.begin(), params.end());
  OptimizerState st = state;
  st.step_count = state.step_count + 1;

  const double lr = spec.lr;
  const double wd = spec.weight_decay;
  const double eps = spec.eps;

  switch (spec.kind) {
    case OptKind::sgd: {
      for (std::size_t i = 0; i < n; ++i) {
        double g = double(grads[i]) + wd * double(params[i]);
        out[i] = static_cast<float>(double(params[i]) - lr * g);
      }
      break;
    }
    case OptKind::momentum: {
      const double mu = spec.momentum;
      for (std::size_t i = 0; i < n; ++i) {
        double g = double(grads[i]) + wd * double(params[i]);
        double v = mu * double(state.acc1[i]) + g;
        st.acc1[i] = static_cast<float>(v);
        out[i] = static_cast<float>(double(params[i]) - lr * v);
      }
      break;
    }
    case OptKind::nesterov: {
      const double mu = spec.momentum;
      for (std::size_t i = 0; i < n; ++i) {
        double g = double(grads[i]) + wd * double(params[i]);
        double v = mu * double(state.acc1[i]) + g;
        st.acc1[i] = static_cast<float>(v);
        out[i] = static_cast<float>(double(params[i]) - lr * (g + mu * v));
      }
      break;
    }
    case OptKind::adagrad: {
      for (std::size_t i = 0; i < n; ++i) {
        double g = double(grads[i]) + wd * double(params[i]);
        double acc = double(state.acc1[i]) + g * g;
        st.acc1[i] = static_cast<float>(acc);
        out[i] = static_cast<float>(double(params[i]) - lr * g / (std::sqrt(acc) + eps));
      }
      break;
    }
    case OptKind::adadelta: {
      const double rho = spec.rho;
      for (std::size_t i = 0; i < n; ++i) {
        double g = double(grads[i]) + wd * double(params[i]);
        double acc_g = rho * double(state.acc1[i]) + (1.0 - rho) * g * g;
        double delta = -std::sqrt(double(state.acc2[i]) + eps) / std::sqrt(acc_g + eps) * g;
        double acc_d = rho * double(state.acc2[i]) + (1.0 - rho) * delta * delta;
        st.acc1[i] = static_cast<float>(acc_g);
        st.acc2[i] = static_cast<float>(acc_d);
        out[i] = static_cast<float>(double(params[i]) + lr * delta);
      }
      break;
    }
    case OptKind::adam: {
      const double b1 = spec.beta1;
      const double b2 = spec.beta2;
      const double t = static_cast<double>(st.step_count);
      const double bc1 = 1.0 - std::pow(b1, t);
      const double bc2 = 1.0 - std::pow(b2, t);
      for (std::size_t i = 0; i < n; ++i) {
        double g = double(grads[i]) + wd * double(params[i]);
        double m = b1 * double(state.acc1[i]) + (1.0 - b1) * g;
        double v = b2 * double(state.acc2[i]) + (1.0 - b2) * g * g;
        st.acc1[i] = static_cast<float>(m);
        st.acc2[i] = static_cast<float>(v);
        double mhat = m / bc1;
        double vhat = v / bc2;
        out[i] = static_cast<float>(double(params[i]) - lr * mhat / (std::sqrt(vhat) + eps));
      }
      break;
    }
  }
  return {std::move(out), std::move(st)};
}

std::vector<double> reference_trajectory(const OptimizerSpec& spec, const QuadraticProblem& prob,
                                         std::size_t steps) {
  if (prob.diag.size() != prob.theta0.size()) throw Error("quadratic diag/theta0 length mismatch");
  for (float a : prob.diag) {
    if (!(a > 0.0f)) throw Error("quadratic diagonal must be positive definite");
  }
  auto loss_of = [&](const std::vector<float>& theta) {
    double acc = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      acc += 0.5 * double(prob.diag[i]) * double(theta[i]) * double(theta[i]);
    }
    return acc;
  };

  std::vector<float> theta = prob.theta0;
  OptimizerState st = init_optimizer(spec, theta.size());
  std::vector<double> series;
  series.reserve(steps + 1);
  series.push_back(loss_of(theta));
  std::vector<float> grad(theta.size(), 0.0f);
  for (std::size_t k = 0; k < steps; ++k) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      grad[i] = static_cast<float>(double(prob.diag[i]) * double(theta[i]));
    }
    auto [next, nst] = step(spec, st, theta, grad);
    theta = std::move(next);
    st = std::move(nst);
    series.push_back(loss_of(theta));
  }
  return series;
}

}  // namespace nftl
