#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nftl/rng.hpp"
#include "nftl/tensor.hpp"

namespace nftl {

enum class LayerKind { affine, relu, tanh };

struct LayerSpec {
  LayerKind kind;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;

  bool operator==(const LayerSpec&) const = default;
};

std::string layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

// Affine layers own out*in weights followed by out biases; activations own none.
std::size_t layer_param_count(const LayerSpec& spec);

// Half-open span [begin, end) into a flat parameter vector.
struct ParamRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }
  bool operator==(const ParamRange&) const = default;
};

// Feed-forward net over a flat float32 parameter vector. head_range spans the
// parameters of the last affine layer.
struct Model {
  std::vector<LayerSpec> arch;
  std::vector<float> params;
  ParamRange head_range;

  std::size_t input_dim() const { return arch.empty() ? 0 : arch.front().in_dim; }
  std::size_t output_dim() const { return arch.empty() ? 0 : arch.back().out_dim; }
};

// Throws Error naming the offending layer if dims are inconsistent or an
// activation changes width.
void validate_arch(const std::vector<LayerSpec>& arch);

std::size_t total_param_count(const std::vector<LayerSpec>& arch);

// Flat offset of each layer's first parameter.
std::vector<std::size_t> layer_offsets(const std::vector<LayerSpec>& arch);

ParamRange head_range_of(const std::vector<LayerSpec>& arch);

// Affine weights uniform in +-sqrt(6/(in_dim+out_dim)), biases zero.
Model make_model(const std::vector<LayerSpec>& arch, Rng& rng);

Model make_model_with_params(const std::vector<LayerSpec>& arch, std::vector<float> params);

// Convenience: affine(d0,d1), act, affine(d1,d2), act, ..., affine(dn-1,dn).
std::vector<LayerSpec> mlp_arch(const std::vector<std::size_t>& dims, LayerKind activation);

// Per-layer activations captured by forward: acts[0] is the input batch,
// acts[i+1] the output of layer i. backward() consumes them.
struct ForwardCache {
  std::vector<LayerSpec> arch;
  std::vector<Tensor> acts;
};

// Returns raw outputs (logits / predictions, shape batch x out_dim) plus the
// cache. Probability mapping lives with the losses.
std::pair<Tensor, ForwardCache> forward(const Model& model, const Tensor& batch);

// Output-side gradient (batch x out_dim) -> flat parameter gradient.
// Accumulation order is fixed, so results are bit-identical across runs.
// Throws Error when the cache does not match the model or grad shape.
std::vector<float> backward(const Model& model, const ForwardCache& cache,
                            const Tensor& grad_output);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace nftl
