#include "nftl/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "nftl/error.hpp"

namespace nftl {

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::affine: return "affine";
    case LayerKind::relu: return "relu";
    case LayerKind::tanh: return "tanh";
  }
  throw Error("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "affine") return LayerKind::affine;
  if (name == "relu") return LayerKind::relu;
  if (name == "tanh") return LayerKind::tanh;
  throw Error("unknown layer kind '" + name + "'");
}

std::size_t layer_param_count(const LayerSpec& spec) {
  if (spec.kind == LayerKind::affine) return spec.in_dim * spec.out_dim + spec.out_dim;
  return 0;
}

namespace {
std::string layer_label(const LayerSpec& spec, std::size_t index) {
  return "layer " + std::to_string(index) + " (" + layer_kind_name(spec.kind) + " " +
         std::to_string(spec.in_dim) + "->" + std::to_string(spec.out_dim) + ")";
}
}  // namespace

void validate_arch(const std::vector<LayerSpec>& arch) {
  if (arch.empty()) throw Error("architecture has no layers");
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const LayerSpec& s = arch[i];
    if (s.in_dim == 0 || s.out_dim == 0) {
      throw Error(layer_label(s, i) + ": zero dimension");
    }
    if (s.kind != LayerKind::affine && s.in_dim != s.out_dim) {
      throw Error(layer_label(s, i) + ": activation must preserve width");
    }
    if (i > 0 && s.in_dim != arch[i - 1].out_dim) {
      throw Error(layer_label(s, i) + ": in_dim does not match previous out_dim " +
                  std::to_string(arch[i - 1].out_dim));
    }
  }
}

std::size_t total_param_count(const std::vector<LayerSpec>& arch) {
  std::size_t n = 0;
  for (const LayerSpec& s : arch) n += layer_param_count(s);
  return n;
}

std::vector<std::size_t> layer_offsets(const std::vector<LayerSpec>& arch) {
  std::vector<std::size_t> offs(arch.size(), 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < arch.size(); ++i) {
    offs[i] = off;
    off += layer_param_count(arch[i]);
  }
  return offs;
}

ParamRange head_range_of(const std::vector<LayerSpec>& arch) {
  std::vector<std::size_t> offs = layer_offsets(arch);
  for (std::size_t i = arch.size(); i-- > 0;) {
    if (arch[i].kind == LayerKind::affine) {
      return ParamRange{offs[i], offs[i] + layer_param_count(arch[i])};
    }
  }
  return ParamRange{0, 0};
}

Model make_model(const std::vector<LayerSpec>& arch, Rng& rng) {
  validate_arch(arch);
  std::vector<float> params(total_param_count(arch), 0.0f);
  std::size_t off = 0;
  for (const LayerSpec& s : arch) {
    if (s.kind != LayerKind::affine) continue;
    double bound = std::sqrt(6.0 / static_cast<double>(s.in_dim + s.out_dim));
    for (std::size_t j = 0; j < s.in_dim * s.out_dim; ++j) {
      params[off + j] = static_cast<float>(rng.uniform(-bound, bound));
    }
    // Biases stay zero.
    off += layer_param_count(s);
  }
  return Model{arch, std::move(params), head_range_of(arch)};
}

Model make_model_with_params(const std::vector<LayerSpec>& arch, std::vector<float> params) {
  validate_arch(arch);
  if (params.size() != total_param_count(arch)) {
    throw Error("parameter vector has " + std::to_string(params.size()) +
                " values, architecture wants " + std::to_string(total_param_count(arch)));
  }
  return Model{arch, std::move(params), head_range_of(arch)};
}

std::vector<LayerSpec> mlp_arch(const std::vector<std::size_t>& dims, LayerKind activation) {
  if (dims.size() < 2) throw Error("mlp_arch needs at least input and output dims");
  std::vector<LayerSpec> arch;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    arch.push_back(LayerSpec{LayerKind::affine, dims[i], dims[i + 1]});
    if (i + 2 < dims.size()) arch.push_back(LayerSpec{activation, dims[i + 1], dims[i + 1]});
  }
  return arch;
}

std::pair<Tensor, ForwardCache> forward(const Model& model, const Tensor& batch) {
  validate_arch(model.arch);
  if (batch.shape.size() != 2) throw Error("forward expects a 2-D batch tensor");
  if (batch.cols() != model.input_dim()) {
    throw Error("batch width " + std::to_string(batch.cols()) + " does not match " +
                layer_label(model.arch.front(), 0));
  }
  std::vector<std::size_t> offs = layer_offsets(model.arch);
  ForwardCache cache;
  cache.arch = model.arch;
  cache.acts.reserve(model.arch.size() + 1);
  cache.acts.push_back(batch);

  std::size_t rows = batch.rows();
  for (std::size_t li = 0; li < model.arch.size(); ++li) {
    const LayerSpec& s = model.arch[li];
    const Tensor& x = cache.acts.back();
    Tensor y = zeros({rows, s.out_dim});
    if (s.kind == LayerKind::affine) {
      const float* w = model.params.data() + offs[li];
      const float* b = w + s.in_dim * s.out_dim;
      for (std::size_t r = 0; r < rows; ++r) {
        const float* xr = x.data.data() + r * s.in_dim;
        for (std::size_t o = 0; o < s.out_dim; ++o) {
          const float* wo = w + o * s.in_dim;
          double acc = b[o];
          for (std::size_t i = 0; i < s.in_dim; ++i) acc += double(wo[i]) * double(xr[i]);
          y.at(r, o) = static_cast<float>(acc);
        }
      }
    } else if (s.kind == LayerKind::relu) {
      for (std::size_t j = 0; j < y.size(); ++j) y.data[j] = x.data[j] > 0.0f ? x.data[j] : 0.0f;
    } else {
      for (std::size_t j = 0; j < y.size(); ++j) y.data[j] = std::tanh(x.data[j]);
    }
    cache.acts.push_back(std::move(y));
  }
  return {cache.acts.back(), cache};
}

std::vector<float> backward(const Model& model, const ForwardCache& cache,
                            const Tensor& grad_output) {
  if (cache.arch != model.arch || cache.acts.size() != model.arch.size() + 1) {
    throw Error("forward cache does not match this model");
  }
  std::size_t rows = cache.acts.front().rows();
  if (grad_output.rows() != rows || grad_output.cols() != model.output_dim()) {
    throw Error("grad_output shape does not match cached forward output");
  }
  std::vector<std::size_t> offs = layer_offsets(model.arch);
  std::vector<float> grad(model.params.size(), 0.0f);

  Tensor d_cur = grad_output;
  for (std::size_t li = model.arch.size(); li-- > 0;) {
    const LayerSpec& s = model.arch[li];
    const Tensor& x = cache.acts[li];
    if (s.kind == LayerKind::affine) {
      const float* w = model.params.data() + offs[li];
      float* gw = grad.data() + offs[li];
      float* gb = gw + s.in_dim * s.out_dim;
      for (std::size_t o = 0; o < s.out_dim; ++o) {
        float* gwo = gw + o * s.in_dim;
        double gb_acc = 0.0;
        for (std::size_t i = 0; i < s.in_dim; ++i) {
          double acc = 0.0;
          for (std::size_t r = 0; r < rows; ++r) {
            acc += double(d_cur.at(r, o)) * double(x.at(r, i));
          }
          gwo[i] = static_cast<float>(acc);
        }
        for (std::size_t r = 0; r < rows; ++r) gb_acc += double(d_cur.at(r, o));
        gb[o] = static_cast<float>(gb_acc);
      }
      if (li > 0) {
        Tensor d_prev = zeros({rows, s.in_dim});
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t i = 0; i < s.in_dim; ++i) {
            double acc = 0.0;
            for (std::size_t o = 0; o < s.out_dim; ++o) {
              acc += double(d_cur.at(r, o)) * double(w[o * s.in_dim + i]);
            }
            d_prev.at(r, i) = static_cast<float>(acc);
          }
        }
        d_cur = std::move(d_prev);
      }
    } else if (s.kind == LayerKind::relu) {
      Tensor d_prev = d_cur;
      for (std::size_t j = 0; j < d_prev.size(); ++j) {
        if (x.data[j] <= 0.0f) d_prev.data[j] = 0.0f;
      }
      d_cur = std::move(d_prev);
    } else {
      const Tensor& y = cache.acts[li + 1];
      Tensor d_prev = d_cur;
      for (std::size_t j = 0; j < d_prev.size(); ++j) {
        d_prev.data[j] = static_cast<float>(double(d_prev.data[j]) *
                                            (1.0 - double(y.data[j]) * double(y.data[j])));
      }
      d_cur = std::move(d_prev);
    }
  }
  return grad;
}

namespace {

constexpr char kMagic[4] = {'N', 'F', 'T', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t off) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(in[off])) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + 1])) << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + 2])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + 3])) << 24);
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
  validate_arch(model.arch);
  nlohmann::json arch = nlohmann::json::array();
  for (const LayerSpec& s : model.arch) {
    arch.push_back({{"kind", layer_kind_name(s.kind)},
                    {"in_dim", s.in_dim},
                    {"out_dim", s.out_dim}});
  }
  std::string arch_bytes = arch.dump();

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(arch_bytes.size()));
  out += arch_bytes;
  for (float p : model.params) {
    put_u32(out, std::bit_cast<std::uint32_t>(p));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("write to '" + path + "' failed");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < 12) throw Error("checkpoint '" + path + "' is truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error("checkpoint '" + path + "' has bad magic");
  }
  std::uint32_t version = get_u32(bytes, 4);
  if (version != kVersion) {
    throw Error("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  }
  std::uint32_t arch_len = get_u32(bytes, 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(arch_len)) {
    throw Error("checkpoint '" + path + "' is truncated inside the architecture block");
  }

  nlohmann::json arch_json;
  try {
    arch_json = nlohmann::json::parse(bytes.substr(12, arch_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint '" + path + "' has a malformed architecture block: " + e.what());
  }
  if (!arch_json.is_array()) throw Error("checkpoint '" + path + "' architecture is not a list");
  std::vector<LayerSpec> arch;
  for (const auto& item : arch_json) {
    LayerSpec s;
    s.kind = layer_kind_from_name(item.at("kind").get<std::string>());
    s.in_dim = item.at("in_dim").get<std::size_t>();
    s.out_dim = item.at("out_dim").get<std::size_t>();
    arch.push_back(s);
  }
  validate_arch(arch);

  std::size_t blob_off = 12 + arch_len;
  std::size_t want = total_param_count(arch);
  if (bytes.size() != blob_off + want * 4) {
    throw Error("checkpoint '" + path + "' parameter blob holds " +
                std::to_string((bytes.size() - blob_off) / 4) + " floats, architecture wants " +
                std::to_string(want));
  }
  std::vector<float> params(want, 0.0f);
  for (std::size_t i = 0; i < want; ++i) {
    params[i] = std::bit_cast<float>(get_u32(bytes, blob_off + i * 4));
  }
  return make_model_with_params(arch, std::move(params));
}

}  // namespace nftl
