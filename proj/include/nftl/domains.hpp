#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nftl/rng.hpp"
#include "nftl/tensor.hpp"

namespace nftl {

// Generated sample table. Regenerating with the same (domain_id, seed, n)
// reproduces it bit for bit.
struct Dataset {
  Tensor inputs;                 // n x d
  std::optional<Tensor> labels;  // n x C one-hot (classification only)
  std::string domain_id;
  std::uint64_t seed = 0;

  std::size_t size() const { return inputs.rows(); }
  std::size_t dim() const { return inputs.cols(); }
  std::size_t num_classes() const { return labels ? labels->cols() : 0; }
};

// Disjoint halves of the training portion plus a held-out test set.
// The defender half feeds protection; the adversary half feeds fine-tuning.
struct DomainSplit {
  Dataset defender_half;
  Dataset adversary_half;
  Dataset test;
};

// Gaussian mixture with C well-separated classes. Domains generated with the
// same seed share most of their class-mean geometry (so representations
// transfer between ids), while each id translates its mixture into its own
// input region (so the distributions stay distinct).
Dataset gen_classification_domain(const std::string& domain_id, std::size_t n, std::size_t c,
                                  std::size_t d, std::uint64_t seed);

// Smooth blob images on a sqrt(d) x sqrt(d) grid, pixel values in [0,1].
// The blob-center region depends on domain_id, so mean images differ across ids.
Dataset gen_generation_domain(const std::string& domain_id, std::size_t n, std::size_t d,
                              std::uint64_t seed);

DomainSplit split(const Dataset& dataset, double test_fraction, std::uint64_t seed);

// Deterministic shuffled minibatches; every epoch is one full permutation and
// the final short batch is kept.
class BatchIterator {
 public:
  struct Batch {
    Tensor inputs;
    std::optional<Tensor> labels;
  };

  BatchIterator(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed);

  Batch next();
  std::size_t batches_per_epoch() const;

 private:
  void reshuffle();

  const Dataset& dataset_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Binary table: u32 n, u32 d, u32 C (0 when label-free), n*d float32 row-major,
// then n u32 label indices when C > 0. All little-endian.
void export_dataset(const Dataset& dataset, const std::string& path);
Dataset import_dataset(const std::string& path, const std::string& domain_id = "imported",
                       std::uint64_t seed = 0);

}  // namespace nftl
