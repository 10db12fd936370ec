#include "nftl/gradcheck.hpp"

#include <cmath>
#include <vector>

#include "nftl/csv.hpp"
#include "nftl/error.hpp"
#include "nftl/model.hpp"
#include "nftl/rng.hpp"
#include "nftl/tensor.hpp"

namespace nftl {

namespace {

// ---- Reference implementations, straight-line double precision. Kept
// ---- deliberately separate from the production float32 code paths.

std::vector<double> ref_softmax(const std::vector<double>& z) {
  double zmax = z[0];
  for (double v : z) zmax = std::max(zmax, v);
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    p[j] = std::exp(z[j] - zmax);
    sum += p[j];
  }
  for (double& v : p) v /= sum;
  return p;
}

// Batch values; z is row-major b x c, hot holds the true index per row.
double ref_ce(const std::vector<double>& z, std::size_t b, std::size_t c,
              const std::vector<std::size_t>& hot) {
  double acc = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    std::vector<double> p = ref_softmax({z.begin() + r * c, z.begin() + (r + 1) * c});
    acc -= std::log(p[hot[r]]);
  }
  return acc / double(b);
}

double ref_ice(const std::vector<double>& z, std::size_t b, std::size_t c,
               const std::vector<std::size_t>& hot) {
  double acc = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    std::vector<double> p = ref_softmax({z.begin() + r * c, z.begin() + (r + 1) * c});
    acc -= std::log(1.0 - p[hot[r]]);
  }
  return acc / double(b);
}

double ref_klu(const std::vector<double>& z, std::size_t b, std::size_t c) {
  double acc = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    std::vector<double> p = ref_softmax({z.begin() + r * c, z.begin() + (r + 1) * c});
    for (std::size_t j = 0; j < c; ++j) acc -= std::log(double(c) * p[j]) / double(c);
  }
  return acc / double(b);
}

double ref_mse(const std::vector<double>& pred, const std::vector<double>& target,
               std::size_t b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double e = pred[i] - target[i];
    acc += e * e;
  }
  return acc / double(b);
}

double ref_dos(const std::vector<double>& pred, std::size_t b) {
  double acc = 0.0;
  for (double v : pred) acc += v * v;
  return acc / double(b);
}

double guarded_rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace

FdReport fd_check_loss(LossId id, std::size_t cases, std::uint64_t seed) {
  Rng rng(mix64(seed, hash64("fd-loss-" + loss_id_name(id))));
  const double h = 1e-4;
  const double floor = 1e-3;
  FdReport report{cases, 0.0};

  for (std::size_t cs = 0; cs < cases; ++cs) {
    bool classification = (id == LossId::ce || id == LossId::ice || id == LossId::klu);
    std::size_t b = 1 + rng.index(4);
    std::size_t c = classification ? 2 + rng.index(7) : 2 + rng.index(31);

    Tensor z = zeros({b, c});
    for (float& v : z.data) v = static_cast<float>(rng.uniform(-3.0, 3.0));
    Tensor y = zeros({b, c});
    std::vector<std::size_t> hot(b);
    for (std::size_t r = 0; r < b; ++r) {
      hot[r] = rng.index(c);
      y.at(r, hot[r]) = 1.0f;
    }
    Tensor target = zeros({b, c});
    for (float& v : target.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));

    LossEval ev;
    switch (id) {
      case LossId::ce: ev = ce(z, y); break;
      case LossId::ice: ev = ice(z, y); break;
      case LossId::klu: ev = klu(z); break;
      case LossId::mse: ev = mse(z, target); break;
      case LossId::dos: ev = dos(z); break;
    }

    // Differentiate the reference at exactly the float-rounded inputs.
    std::vector<double> zd(z.size()), td(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      zd[i] = double(z.data[i]);
      td[i] = double(target.data[i]);
    }
    auto ref_at = [&](const std::vector<double>& x) {
      switch (id) {
        case LossId::ce: return ref_ce(x, b, c, hot);
        case LossId::ice: return ref_ice(x, b, c, hot);
        case LossId::klu: return ref_klu(x, b, c);
        case LossId::mse: return ref_mse(x, td, b);
        case LossId::dos: return ref_dos(x, b);
      }
      throw Error("unknown loss id");
    };

    for (std::size_t i = 0; i < z.size(); ++i) {
      std::vector<double> plus = zd, minus = zd;
      plus[i] += h;
      minus[i] -= h;
      double fd = (ref_at(plus) - ref_at(minus)) / (2.0 * h);
      double rel = guarded_rel_err(double(ev.grad.data[i]), fd, floor);
      report.max_rel_err = std::max(report.max_rel_err, rel);
    }
  }
  return report;
}

FdReport fd_check_softmax(std::size_t cases, std::uint64_t seed) {
  Rng rng(mix64(seed, hash64("fd-softmax")));
  const double h = 1e-4;
  const double floor = 1e-3;
  FdReport report{cases, 0.0};

  for (std::size_t cs = 0; cs < cases; ++cs) {
    std::size_t c = 2 + rng.index(7);
    std::vector<float> z(c);
    for (float& v : z) v = static_cast<float>(rng.uniform(-3.0, 3.0));
    ProbVector p = softmax(z);

    std::vector<double> zd(c);
    for (std::size_t j = 0; j < c; ++j) zd[j] = double(z[j]);
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        double jac = (i == j) ? double(p.p[i]) * (1.0 - double(p.p[i]))
                              : -double(p.p[i]) * double(p.p[j]);
        std::vector<double> plus = zd, minus = zd;
        plus[j] += h;
        minus[j] -= h;
        double fd = (ref_softmax(plus)[i] - ref_softmax(minus)[i]) / (2.0 * h);
        report.max_rel_err = std::max(report.max_rel_err, guarded_rel_err(jac, fd, floor));
      }
    }
  }
  return report;
}

namespace {

// Reference double forward pass over the same parameter layout as Model.
std::vector<double> ref_forward(const std::vector<LayerSpec>& arch,
                                const std::vector<double>& params,
                                const std::vector<double>& input, std::size_t rows) {
  std::vector<std::size_t> offs = layer_offsets(arch);
  std::vector<double> cur = input;
  for (std::size_t li = 0; li < arch.size(); ++li) {
    const LayerSpec& s = arch[li];
    if (s.kind == LayerKind::affine) {
      std::vector<double> next(rows * s.out_dim, 0.0);
      const double* w = params.data() + offs[li];
      const double* bias = w + s.in_dim * s.out_dim;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < s.out_dim; ++o) {
          double acc = bias[o];
          for (std::size_t i = 0; i < s.in_dim; ++i) {
            acc += w[o * s.in_dim + i] * cur[r * s.in_dim + i];
          }
          next[r * s.out_dim + o] = acc;
        }
      }
      cur = std::move(next);
    } else if (s.kind == LayerKind::relu) {
      for (double& v : cur) v = v > 0.0 ? v : 0.0;
    } else {
      for (double& v : cur) v = std::tanh(v);
    }
  }
  return cur;
}

}  // namespace

FdReport fd_check_model(std::size_t cases, std::uint64_t seed) {
  Rng rng(mix64(seed, hash64("fd-model")));
  const double h = 1e-3;
  const double floor = 1e-2;
  FdReport report{cases, 0.0};

  for (std::size_t cs = 0; cs < cases; ++cs) {
    std::size_t depth = 1 + rng.index(3);
    std::vector<std::size_t> dims(depth + 1);
    for (std::size_t& v : dims) v = 2 + rng.index(5);
    LayerKind act = rng.index(2) == 0 ? LayerKind::relu : LayerKind::tanh;
    std::vector<LayerSpec> arch = mlp_arch(dims, act);
    std::size_t rows = 1 + rng.index(4);

    // Redraw cases whose relu inputs sit near the kink: a finite-difference
    // step across it diverges from the subgradient by design, not by bug.
    Model model;
    Tensor batch;
    Tensor out;
    ForwardCache cache;
    for (int attempt = 0; attempt < 200; ++attempt) {
      Rng init = rng.fork(mix64(cs, attempt));
      model = make_model(arch, init);
      batch = zeros({rows, dims.front()});
      for (float& v : batch.data) v = static_cast<float>(rng.uniform(-1.5, 1.5));
      auto fwd = forward(model, batch);
      out = std::move(fwd.first);
      cache = std::move(fwd.second);
      float min_pre = 1.0f;
      for (std::size_t li = 0; li < arch.size(); ++li) {
        if (arch[li].kind != LayerKind::relu) continue;
        for (float v : cache.acts[li].data) min_pre = std::min(min_pre, std::abs(v));
      }
      if (min_pre > 0.02f) break;
    }

    // Loss: half squared norm of the outputs, so grad_output = outputs.
    std::vector<float> impl_grad = backward(model, cache, out);

    std::vector<double> pd(model.params.size());
    for (std::size_t i = 0; i < pd.size(); ++i) pd[i] = double(model.params[i]);
    std::vector<double> in(batch.size());
    for (std::size_t i = 0; i < in.size(); ++i) in[i] = double(batch.data[i]);
    auto ref_loss = [&](const std::vector<double>& p) {
      std::vector<double> y = ref_forward(arch, p, in, rows);
      double acc = 0.0;
      for (double v : y) acc += 0.5 * v * v;
      return acc;
    };

    for (std::size_t i = 0; i < pd.size(); ++i) {
      std::vector<double> plus = pd, minus = pd;
      plus[i] += h;
      minus[i] -= h;
      double fd = (ref_loss(plus) - ref_loss(minus)) / (2.0 * h);
      report.max_rel_err =
          std::max(report.max_rel_err, guarded_rel_err(double(impl_grad[i]), fd, floor));
    }
  }
  return report;
}

namespace {

bool strictly_increasing(const std::vector<ProbePoint>& s) {
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (!(s[i].grad_norm > s[i - 1].grad_norm)) return false;
  }
  return true;
}

bool strictly_decreasing(const std::vector<ProbePoint>& s) {
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (!(s[i].grad_norm < s[i - 1].grad_norm)) return false;
  }
  return true;
}

}  // namespace

ProbeVerdict check_stability_dichotomy(std::size_t points) {
  ProbeVerdict v;
  auto fail = [&](const std::string& msg) {
    v.ok = false;
    if (!v.detail.empty()) v.detail += "; ";
    v.detail += msg;
  };

  std::vector<ProbePoint> s_ce = stability_probe(LossId::ce, points);
  std::vector<ProbePoint> s_ice = stability_probe(LossId::ice, points);
  std::vector<ProbePoint> s_klu = stability_probe(LossId::klu, points);
  std::vector<ProbePoint> s_dos = stability_probe(LossId::dos, points);
  std::vector<ProbePoint> s_mse = stability_probe(LossId::mse, points);

  if (!strictly_increasing(s_ce)) fail("ce magnitude not pointwise increasing");
  if (!strictly_decreasing(s_ice)) fail("ice magnitude not pointwise decreasing");
  if (!(s_ice.back().grad_norm < 1e-5)) fail("ice terminal magnitude >= 1e-5");
  if (!strictly_decreasing(s_klu)) fail("klu magnitude not pointwise decreasing");
  if (!(s_klu.back().grad_norm < 1e-5)) fail("klu terminal magnitude >= 1e-5");
  if (!strictly_decreasing(s_dos)) fail("dos magnitude not pointwise decreasing");
  if (!(s_dos.back().grad_norm < 1e-9)) fail("dos terminal magnitude not ~0");
  double mse_min = s_mse.front().grad_norm;
  for (const ProbePoint& p : s_mse) mse_min = std::min(mse_min, p.grad_norm);
  if (!(mse_min > 0.5)) fail("mse magnitude not bounded away from 0");

  if (v.ok) {
    v.detail = "ce rises to " + csv_num(s_ce.back().grad_norm) + ", ice ends " +
               csv_num(s_ice.back().grad_norm) + ", klu ends " + csv_num(s_klu.back().grad_norm) +
               ", dos ends " + csv_num(s_dos.back().grad_norm) + ", mse min " + csv_num(mse_min);
  }
  return v;
}

void write_gradcheck_csv(std::ostream& out, std::size_t cases, std::uint64_t seed) {
  out << "check,cases,max_rel_err,tolerance,pass\n";
  auto row = [&](const std::string& name, const FdReport& r, double tol) {
    out << name << ',' << r.cases << ',' << csv_num(r.max_rel_err) << ',' << csv_num(tol) << ','
        << (r.max_rel_err < tol ? 1 : 0) << '\n';
  };
  for (LossId id : {LossId::ce, LossId::ice, LossId::klu, LossId::mse, LossId::dos}) {
    row("fd_" + loss_id_name(id), fd_check_loss(id, cases, seed), 1e-4);
  }
  row("fd_softmax", fd_check_softmax(cases, seed), 1e-4);
  row("fd_model", fd_check_model(50, seed), 1e-3);
}

}  // namespace nftl
