#include "nftl/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include <json.hpp>

#include "nftl/adversary.hpp"
#include "nftl/error.hpp"
#include "nftl/rng.hpp"
#include "nftl/version.hpp"

namespace nftl {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw Error("config: " + path + " " + what);
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw Error("config: unknown key '" + join(path, it.key()) + "'");
  }
}

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

std::uint64_t as_u64(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  fail(path, "must be a non-negative integer");
}

double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "must be a number");
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "must be a string");
  return v.get<std::string>();
}

void maybe_u64(const json& obj, const std::string& path, const char* key, std::size_t& out) {
  if (const json* v = find(obj, key)) out = static_cast<std::size_t>(as_u64(*v, join(path, key)));
}

void maybe_double(const json& obj, const std::string& path, const char* key, double& out) {
  if (const json* v = find(obj, key)) out = as_double(*v, join(path, key));
}

void maybe_float(const json& obj, const std::string& path, const char* key, float& out) {
  if (const json* v = find(obj, key)) out = static_cast<float>(as_double(*v, join(path, key)));
}

void maybe_string(const json& obj, const std::string& path, const char* key, std::string& out) {
  if (const json* v = find(obj, key)) out = as_string(*v, join(path, key));
}

OptimizerSpec parse_optimizer(const json& v, const std::string& path, OptimizerSpec base) {
  if (!v.is_object()) fail(path, "must be an object");
  check_keys(v, path, {"kind", "lr", "momentum", "beta1", "beta2", "rho", "eps", "weight_decay"});
  if (const json* kind = find(v, "kind")) {
    try {
      base.kind = opt_kind_from_name(as_string(*kind, join(path, "kind")));
    } catch (const Error& e) {
      fail(join(path, "kind"), e.what());
    }
  }
  maybe_float(v, path, "lr", base.lr);
  maybe_float(v, path, "momentum", base.momentum);
  maybe_float(v, path, "beta1", base.beta1);
  maybe_float(v, path, "beta2", base.beta2);
  maybe_float(v, path, "rho", base.rho);
  maybe_float(v, path, "eps", base.eps);
  maybe_float(v, path, "weight_decay", base.weight_decay);
  try {
    validate_spec(base);
  } catch (const Error& e) {
    fail(path, e.what());
  }
  return base;
}

json optimizer_to_json(const OptimizerSpec& spec) {
  return json{{"kind", opt_kind_name(spec.kind)}, {"lr", spec.lr},
              {"momentum", spec.momentum},        {"beta1", spec.beta1},
              {"beta2", spec.beta2},              {"rho", spec.rho},
              {"eps", spec.eps},                  {"weight_decay", spec.weight_decay}};
}

}  // namespace

ExperimentConfig desk_profile(TaskMode mode) {
  ExperimentConfig cfg;
  cfg.task_mode = mode;
  cfg.seeds = {1, 2, 3, 4, 5};
  cfg.out_dir = "out";

  cfg.data.samples = 1000;

  cfg.pretrain.optimizer.kind = OptKind::adam;
  cfg.pretrain.optimizer.lr = 3e-3f;

  // Suppression strength (alpha * l_fts) and repair strength (beta * l_ntr)
  // are balanced so the restricted domain stays trapped at the full attack
  // budget while the original-domain loss rise stays under lambda_tol.
  cfg.sophon.alpha = 1.3e-2f;
  cfg.sophon.beta = 1.5e-2f;
  cfg.sophon.iters = 100;
  cfg.sophon.k_rounds = 10;
  cfg.sophon.n_tasks = 2;
  cfg.sophon.l_fts = 5;
  cfg.sophon.l_ntr = 9;
  cfg.sophon.gamma_mode = GammaMode::uniform;
  cfg.sophon.lambda_tol = 0.5f;
  cfg.sophon.ft_lr_grid = {3e-3f, 1e-2f, 3e-2f};
  cfg.sophon.ft_bs_grid = {16, 32};
  cfg.ntr_batch_size = 64;

  // Budget chosen where the scratch baseline has plateaued on the restricted
  // adversary half; series are recorded sparsely to keep CSVs small.
  cfg.attack.epochs = 250;
  cfg.attack.batch_size = 50;
  cfg.attack.eval_every = 160;
  cfg.attack.optimizer.kind = OptKind::momentum;
  cfg.attack.optimizer.lr = 1e-4f;
  cfg.attack.optimizer.weight_decay = 1e-4f;

  if (mode == TaskMode::generation) {
    cfg.data.samples = 2000;
    cfg.data.classes = 0;
    cfg.data.input_dim = 64;
    cfg.arch.hidden_dims = {64, 64};
    cfg.pretrain.epochs = 40;
    cfg.pretrain.optimizer.lr = 2e-3f;
    cfg.sophon.loss_alpha = LossId::dos;
    cfg.sophon.loss_beta = LossId::mse;
    cfg.sophon.lambda_tol = 3.0f;
    cfg.attack.eval_every = 32;
    cfg.attack.optimizer = OptimizerSpec{};
    cfg.attack.optimizer.kind = OptKind::adam;
    cfg.attack.optimizer.lr = 1e-3f;
  }
  return cfg;
}

ExperimentConfig paper_profile(TaskMode mode) {
  ExperimentConfig cfg = desk_profile(mode);
  cfg.data.samples = 5000;
  cfg.pretrain.epochs = 50;
  cfg.pretrain.batch_size = 50;

  cfg.sophon.alpha = 3e-4f;
  cfg.sophon.beta = 5e-4f;
  cfg.sophon.iters = 800;
  cfg.sophon.k_rounds = 50;
  cfg.sophon.n_tasks = 2;
  cfg.sophon.ft_lr_grid = {1e-6f, 1e-5f, 1e-4f, 1e-3f, 1e-2f};
  cfg.sophon.ft_bs_grid = {50, 100, 150, 200, 250};
  cfg.ntr_batch_size = 100;

  cfg.attack.epochs = 20;
  cfg.attack.batch_size = 250;
  cfg.attack.eval_every = 50;
  return cfg;
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.seeds.empty()) fail("seeds", "must list at least one seed");
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    for (std::size_t j = i + 1; j < cfg.seeds.size(); ++j) {
      if (cfg.seeds[i] == cfg.seeds[j]) fail("seeds", "must not repeat");
    }
  }
  if (cfg.out_dir.empty()) fail("out_dir", "must not be empty");
  if (cfg.data.original_id == cfg.data.restricted_id) {
    fail("data", "original_id and restricted_id must differ");
  }
  if (cfg.data.samples < 20) fail("data.samples", "must be at least 20");
  if (!(cfg.data.test_fraction > 0.0 && cfg.data.test_fraction < 1.0)) {
    fail("data.test_fraction", "must be strictly between 0 and 1");
  }
  if (cfg.data.input_dim < 1) fail("data.input_dim", "must be >= 1");
  if (cfg.task_mode == TaskMode::classification) {
    if (cfg.data.classes < 2) fail("data.classes", "must be >= 2 for classification");
  } else {
    std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(
        static_cast<double>(cfg.data.input_dim))));
    if (side * side != cfg.data.input_dim) {
      fail("data.input_dim", "must be a perfect square for generation");
    }
    if (cfg.diffusion.timesteps < 1) fail("diffusion.timesteps", "must be >= 1");
    if (!(cfg.diffusion.beta_start >= 0.0f) ||
        !(cfg.diffusion.beta_end >= cfg.diffusion.beta_start) ||
        !(cfg.diffusion.beta_end < 1.0f)) {
      fail("diffusion", "needs 0 <= beta_start <= beta_end < 1");
    }
  }
  if (cfg.arch.hidden_dims.empty()) fail("arch.hidden_dims", "must list at least one width");
  for (std::size_t w : cfg.arch.hidden_dims) {
    if (w < 1) fail("arch.hidden_dims", "widths must be >= 1");
  }
  if (cfg.pretrain.epochs < 1) fail("pretrain.epochs", "must be >= 1");
  if (cfg.pretrain.batch_size < 1) fail("pretrain.batch_size", "must be >= 1");
  if (cfg.pretrain.eval_every < 1) fail("pretrain.eval_every", "must be >= 1");
  try {
    validate_spec(cfg.pretrain.optimizer);
  } catch (const Error& e) {
    fail("pretrain.optimizer", e.what());
  }
  try {
    validate_sophon_config(cfg.sophon, cfg.task_mode);
  } catch (const Error& e) {
    fail("sophon", e.what());
  }
  if (cfg.ntr_batch_size < 1) fail("sophon.ntr_batch_size", "must be >= 1");
  if (cfg.attack.epochs < 1) fail("attack.epochs", "must be >= 1");
  if (cfg.attack.batch_size < 1) fail("attack.batch_size", "must be >= 1");
  if (cfg.attack.eval_every < 1) fail("attack.eval_every", "must be >= 1");
  if (cfg.attack.strategies.empty()) fail("attack.strategies", "must list at least one strategy");
  for (const std::string& name : cfg.attack.strategies) {
    try {
      make_named_strategy(name, cfg.attack.optimizer);
    } catch (const Error& e) {
      fail("attack.strategies", e.what());
    }
  }
  try {
    validate_spec(cfg.attack.optimizer);
  } catch (const Error& e) {
    fail("attack.optimizer", e.what());
  }
}

ExperimentConfig parse_config_json(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(origin + ": " + e.what());
  }
  if (!root.is_object()) throw Error(origin + ": top level must be an object");
  check_keys(root, "",
             {"task_mode", "seeds", "out_dir", "data", "arch", "pretrain", "sophon", "attack",
              "diffusion"});

  const json& mode_v = [&]() -> const json& {
    const json* v = find(root, "task_mode");
    if (v == nullptr) fail("task_mode", "is required");
    return *v;
  }();
  TaskMode mode;
  try {
    mode = task_mode_from_name(as_string(mode_v, "task_mode"));
  } catch (const Error& e) {
    fail("task_mode", e.what());
  }

  ExperimentConfig cfg = desk_profile(mode);

  const json* seeds_v = find(root, "seeds");
  if (seeds_v == nullptr) fail("seeds", "is required (seeds are always explicit)");
  if (!seeds_v->is_array() || seeds_v->empty()) fail("seeds", "must be a non-empty array");
  cfg.seeds.clear();
  for (std::size_t i = 0; i < seeds_v->size(); ++i) {
    cfg.seeds.push_back(as_u64((*seeds_v)[i], "seeds[" + std::to_string(i) + "]"));
  }

  maybe_string(root, "", "out_dir", cfg.out_dir);

  if (const json* data = find(root, "data")) {
    if (!data->is_object()) fail("data", "must be an object");
    check_keys(*data, "data",
               {"original_id", "restricted_id", "samples", "classes", "input_dim",
                "test_fraction"});
    if (mode == TaskMode::generation && find(*data, "classes") != nullptr) {
      fail("data.classes", "does not apply to generation");
    }
    maybe_string(*data, "data", "original_id", cfg.data.original_id);
    maybe_string(*data, "data", "restricted_id", cfg.data.restricted_id);
    maybe_u64(*data, "data", "samples", cfg.data.samples);
    maybe_u64(*data, "data", "classes", cfg.data.classes);
    maybe_u64(*data, "data", "input_dim", cfg.data.input_dim);
    maybe_double(*data, "data", "test_fraction", cfg.data.test_fraction);
  }

  if (const json* arch = find(root, "arch")) {
    if (!arch->is_object()) fail("arch", "must be an object");
    check_keys(*arch, "arch", {"hidden_dims", "activation"});
    if (const json* dims = find(*arch, "hidden_dims")) {
      if (!dims->is_array() || dims->empty()) fail("arch.hidden_dims", "must be a non-empty array");
      cfg.arch.hidden_dims.clear();
      for (std::size_t i = 0; i < dims->size(); ++i) {
        cfg.arch.hidden_dims.push_back(static_cast<std::size_t>(
            as_u64((*dims)[i], "arch.hidden_dims[" + std::to_string(i) + "]")));
      }
    }
    if (const json* act = find(*arch, "activation")) {
      std::string name = as_string(*act, "arch.activation");
      if (name == "relu") {
        cfg.arch.activation = LayerKind::relu;
      } else if (name == "tanh") {
        cfg.arch.activation = LayerKind::tanh;
      } else {
        fail("arch.activation", "must be 'relu' or 'tanh'");
      }
    }
  }

  if (const json* pre = find(root, "pretrain")) {
    if (!pre->is_object()) fail("pretrain", "must be an object");
    check_keys(*pre, "pretrain", {"epochs", "batch_size", "eval_every", "optimizer"});
    maybe_u64(*pre, "pretrain", "epochs", cfg.pretrain.epochs);
    maybe_u64(*pre, "pretrain", "batch_size", cfg.pretrain.batch_size);
    maybe_u64(*pre, "pretrain", "eval_every", cfg.pretrain.eval_every);
    if (const json* opt = find(*pre, "optimizer")) {
      cfg.pretrain.optimizer = parse_optimizer(*opt, "pretrain.optimizer", cfg.pretrain.optimizer);
    }
  }

  if (const json* so = find(root, "sophon")) {
    if (!so->is_object()) fail("sophon", "must be an object");
    check_keys(*so, "sophon",
               {"alpha", "beta", "iters", "k_rounds", "n_tasks", "l_fts", "l_ntr", "gamma_mode",
                "gamma_weights", "lambda_tol", "loss_alpha", "loss_beta", "ft_lr_grid",
                "ft_bs_grid", "ntr_batch_size"});
    maybe_float(*so, "sophon", "alpha", cfg.sophon.alpha);
    maybe_float(*so, "sophon", "beta", cfg.sophon.beta);
    maybe_u64(*so, "sophon", "iters", cfg.sophon.iters);
    maybe_u64(*so, "sophon", "k_rounds", cfg.sophon.k_rounds);
    maybe_u64(*so, "sophon", "n_tasks", cfg.sophon.n_tasks);
    maybe_u64(*so, "sophon", "l_fts", cfg.sophon.l_fts);
    maybe_u64(*so, "sophon", "l_ntr", cfg.sophon.l_ntr);
    if (const json* gm = find(*so, "gamma_mode")) {
      try {
        cfg.sophon.gamma_mode = gamma_mode_from_name(as_string(*gm, "sophon.gamma_mode"));
      } catch (const Error& e) {
        fail("sophon.gamma_mode", e.what());
      }
    }
    if (const json* gw = find(*so, "gamma_weights")) {
      if (!gw->is_array()) fail("sophon.gamma_weights", "must be an array");
      cfg.sophon.gamma_weights.clear();
      for (std::size_t i = 0; i < gw->size(); ++i) {
        cfg.sophon.gamma_weights.push_back(static_cast<float>(
            as_double((*gw)[i], "sophon.gamma_weights[" + std::to_string(i) + "]")));
      }
    }
    maybe_float(*so, "sophon", "lambda_tol", cfg.sophon.lambda_tol);
    if (const json* la = find(*so, "loss_alpha")) {
      try {
        cfg.sophon.loss_alpha = loss_id_from_name(as_string(*la, "sophon.loss_alpha"));
      } catch (const Error& e) {
        fail("sophon.loss_alpha", e.what());
      }
    }
    if (const json* lb = find(*so, "loss_beta")) {
      try {
        cfg.sophon.loss_beta = loss_id_from_name(as_string(*lb, "sophon.loss_beta"));
      } catch (const Error& e) {
        fail("sophon.loss_beta", e.what());
      }
    }
    if (const json* grid = find(*so, "ft_lr_grid")) {
      if (!grid->is_array() || grid->empty()) fail("sophon.ft_lr_grid", "must be a non-empty array");
      cfg.sophon.ft_lr_grid.clear();
      for (std::size_t i = 0; i < grid->size(); ++i) {
        cfg.sophon.ft_lr_grid.push_back(static_cast<float>(
            as_double((*grid)[i], "sophon.ft_lr_grid[" + std::to_string(i) + "]")));
      }
    }
    if (const json* grid = find(*so, "ft_bs_grid")) {
      if (!grid->is_array() || grid->empty()) fail("sophon.ft_bs_grid", "must be a non-empty array");
      cfg.sophon.ft_bs_grid.clear();
      for (std::size_t i = 0; i < grid->size(); ++i) {
        cfg.sophon.ft_bs_grid.push_back(static_cast<std::size_t>(
            as_u64((*grid)[i], "sophon.ft_bs_grid[" + std::to_string(i) + "]")));
      }
    }
    maybe_u64(*so, "sophon", "ntr_batch_size", cfg.ntr_batch_size);
  }

  if (const json* at = find(root, "attack")) {
    if (!at->is_object()) fail("attack", "must be an object");
    check_keys(*at, "attack",
               {"epochs", "batch_size", "eval_every", "strategies", "optimizer",
                "extended_epochs"});
    maybe_u64(*at, "attack", "epochs", cfg.attack.epochs);
    maybe_u64(*at, "attack", "batch_size", cfg.attack.batch_size);
    maybe_u64(*at, "attack", "eval_every", cfg.attack.eval_every);
    if (const json* st = find(*at, "strategies")) {
      if (!st->is_array() || st->empty()) fail("attack.strategies", "must be a non-empty array");
      cfg.attack.strategies.clear();
      for (std::size_t i = 0; i < st->size(); ++i) {
        cfg.attack.strategies.push_back(
            as_string((*st)[i], "attack.strategies[" + std::to_string(i) + "]"));
      }
    }
    if (const json* opt = find(*at, "optimizer")) {
      cfg.attack.optimizer = parse_optimizer(*opt, "attack.optimizer", cfg.attack.optimizer);
    }
    maybe_u64(*at, "attack", "extended_epochs", cfg.attack.extended_epochs);
  }

  if (const json* diff = find(root, "diffusion")) {
    if (mode == TaskMode::classification) {
      fail("diffusion", "does not apply to classification");
    }
    if (!diff->is_object()) fail("diffusion", "must be an object");
    check_keys(*diff, "diffusion", {"timesteps", "beta_start", "beta_end"});
    maybe_u64(*diff, "diffusion", "timesteps", cfg.diffusion.timesteps);
    maybe_float(*diff, "diffusion", "beta_start", cfg.diffusion.beta_start);
    maybe_float(*diff, "diffusion", "beta_end", cfg.diffusion.beta_end);
  }

  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_json(buf.str(), path);
}

std::string canonical_config_json(const ExperimentConfig& cfg) {
  json j;
  j["task_mode"] = task_mode_name(cfg.task_mode);
  j["seeds"] = cfg.seeds;
  j["out_dir"] = cfg.out_dir;
  // Only fields that are live for the task mode are dumped, so the canonical
  // form is always re-loadable through the strict parser.
  j["data"] = json{{"original_id", cfg.data.original_id},
                   {"restricted_id", cfg.data.restricted_id},
                   {"samples", cfg.data.samples},
                   {"input_dim", cfg.data.input_dim},
                   {"test_fraction", cfg.data.test_fraction}};
  if (cfg.task_mode == TaskMode::classification) j["data"]["classes"] = cfg.data.classes;
  std::string act = cfg.arch.activation == LayerKind::relu ? "relu" : "tanh";
  j["arch"] = json{{"hidden_dims", cfg.arch.hidden_dims}, {"activation", act}};
  j["pretrain"] = json{{"epochs", cfg.pretrain.epochs},
                       {"batch_size", cfg.pretrain.batch_size},
                       {"eval_every", cfg.pretrain.eval_every},
                       {"optimizer", optimizer_to_json(cfg.pretrain.optimizer)}};
  j["sophon"] = json{{"alpha", cfg.sophon.alpha},
                     {"beta", cfg.sophon.beta},
                     {"iters", cfg.sophon.iters},
                     {"k_rounds", cfg.sophon.k_rounds},
                     {"n_tasks", cfg.sophon.n_tasks},
                     {"l_fts", cfg.sophon.l_fts},
                     {"l_ntr", cfg.sophon.l_ntr},
                     {"gamma_mode", gamma_mode_name(cfg.sophon.gamma_mode)},
                     {"gamma_weights", cfg.sophon.gamma_weights},
                     {"lambda_tol", cfg.sophon.lambda_tol},
                     {"loss_alpha", loss_id_name(cfg.sophon.loss_alpha)},
                     {"loss_beta", loss_id_name(cfg.sophon.loss_beta)},
                     {"ft_lr_grid", cfg.sophon.ft_lr_grid},
                     {"ft_bs_grid", cfg.sophon.ft_bs_grid},
                     {"ntr_batch_size", cfg.ntr_batch_size}};
  j["attack"] = json{{"epochs", cfg.attack.epochs},
                     {"batch_size", cfg.attack.batch_size},
                     {"eval_every", cfg.attack.eval_every},
                     {"strategies", cfg.attack.strategies},
                     {"optimizer", optimizer_to_json(cfg.attack.optimizer)},
                     {"extended_epochs", cfg.attack.extended_epochs}};
  if (cfg.task_mode == TaskMode::generation) {
    j["diffusion"] = json{{"timesteps", cfg.diffusion.timesteps},
                          {"beta_start", cfg.diffusion.beta_start},
                          {"beta_end", cfg.diffusion.beta_end}};
  }
  return j.dump(2);
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
  std::string blob = canonical_config_json(cfg) + NFTL_VERSION;
  std::uint64_t h = hash64(blob);
  std::ostringstream out;
  out << std::hex << std::nouppercase;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

std::vector<LayerSpec> config_arch(const ExperimentConfig& cfg) {
  std::vector<std::size_t> dims;
  if (cfg.task_mode == TaskMode::classification) {
    dims.push_back(cfg.data.input_dim);
    dims.insert(dims.end(), cfg.arch.hidden_dims.begin(), cfg.arch.hidden_dims.end());
    dims.push_back(cfg.data.classes);
  } else {
    dims.push_back(cfg.data.input_dim + 1);  // appended time feature
    dims.insert(dims.end(), cfg.arch.hidden_dims.begin(), cfg.arch.hidden_dims.end());
    dims.push_back(cfg.data.input_dim);
  }
  return mlp_arch(dims, cfg.arch.activation);
}

}  // namespace nftl
