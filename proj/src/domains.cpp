#include "nftl/domains.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nftl/error.hpp"

namespace nftl {

namespace {

// Mixture geometry. Mean radius, class noise, and the minimum pairwise mean
// distance keep the Bayes accuracy of the mixture above 95%.
constexpr double kMeanRadius = 3.0;
constexpr double kClassSigma = 0.75;
constexpr double kMinMeanDist = 3.3;
// Fraction of each class mean drawn from the id-specific direction; the rest
// comes from seed-shared geometry so same-seed domains overlap. Kept small so
// a body trained on one domain stays linearly informative for the other:
// warm-started fine-tuning then beats matched-budget scratch training on every
// transfer strategy, which is the regime the attack orderings assume.
constexpr double kIdBlend = 0.1;
// Each id also translates its whole mixture along an id-specific direction.
// Same-seed domains then share class geometry (differences of class means)
// while occupying disjoint input regions, so features can respond to one
// domain without firing on the other.
constexpr double kDomainOffset = 3.0;

std::vector<double> unit_vector(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = rng.normal();
      norm += v[j] * v[j];
    }
    norm = std::sqrt(norm);
  } while (norm < 1e-9);
  for (double& x : v) x /= norm;
  return v;
}

double dist(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    double e = a[j] - b[j];
    acc += e * e;
  }
  return std::sqrt(acc);
}

bool well_separated(const std::vector<std::vector<double>>& means, double min_dist) {
  for (std::size_t a = 0; a < means.size(); ++a) {
    for (std::size_t b = a + 1; b < means.size(); ++b) {
      if (dist(means[a], means[b]) < min_dist) return false;
    }
  }
  return true;
}

// Seed-shared base directions, greedily spread out: each class takes the best
// of up to 64 candidates by minimum pairwise distance. Driven by seed alone,
// so every domain id sees the same base set.
std::vector<std::vector<double>> base_directions(std::size_t c, std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> base;
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> best;
    double best_score = -1.0;
    for (int cand = 0; cand < 64; ++cand) {
      std::vector<double> v = unit_vector(rng, d);
      double score = 2.0;
      for (const auto& b : base) score = std::min(score, dist(v, b));
      if (score > best_score) {
        best_score = score;
        best = std::move(v);
      }
      if (best_score >= 1.6) break;
    }
    base.push_back(std::move(best));
  }
  return base;
}

// Class means: blend of seed-shared base directions and id-specific ones,
// redrawn (bounded, deterministic) until pairwise separation holds.
std::vector<std::vector<double>> class_means(const std::string& domain_id, std::size_t c,
                                             std::size_t d, std::uint64_t seed) {
  Rng base_rng(mix64(seed, hash64("class-means-base")));
  Rng id_rng(mix64(mix64(seed, hash64(domain_id)), hash64("class-means-id")));
  std::vector<std::vector<double>> base = base_directions(c, d, base_rng);

  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<std::vector<double>> means(c);
    for (std::size_t k = 0; k < c; ++k) {
      std::vector<double> u = unit_vector(id_rng, d);
      std::vector<double> m(d);
      double norm = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        m[j] = (1.0 - kIdBlend) * base[k][j] + kIdBlend * u[j];
        norm += m[j] * m[j];
      }
      norm = std::sqrt(norm);
      for (double& x : m) x = x / norm * kMeanRadius;
      means[k] = std::move(m);
    }
    if (well_separated(means, kMinMeanDist)) {
      // Pairwise distances are translation-invariant, so the offset never
      // disturbs the separation just established.
      Rng offset_rng(mix64(mix64(seed, hash64(domain_id)), hash64("domain-offset")));
      std::vector<double> shift = unit_vector(offset_rng, d);
      for (auto& m : means) {
        for (std::size_t j = 0; j < d; ++j) m[j] += kDomainOffset * shift[j];
      }
      return means;
    }
  }
  throw Error("could not place separated class means for domain '" + domain_id + "'");
}

void shuffle(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = rng.index(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

void put_u32(std::ofstream& f, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  f.write(b, 4);
}

std::uint32_t get_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace

Dataset gen_classification_domain(const std::string& domain_id, std::size_t n, std::size_t c,
                                  std::size_t d, std::uint64_t seed) {
  if (c < 2) throw Error("classification domain needs at least 2 classes");
  if (d < 2) throw Error("classification domain needs at least 2 dims");
  if (n < c) throw Error("classification domain needs n >= C");

  std::vector<std::vector<double>> means = class_means(domain_id, c, d, seed);

  // Balanced labels: floor(n/C) per class, remainder spread over low classes.
  std::vector<std::size_t> row_class(n);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t cnt = n / c + (k < n % c ? 1 : 0);
    for (std::size_t i = 0; i < cnt; ++i) row_class[pos++] = k;
  }

  Rng order_rng(mix64(mix64(seed, hash64(domain_id)), hash64("row-order")));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, order_rng);

  Rng data_rng(mix64(mix64(seed, hash64(domain_id)), hash64("class-data")));
  Dataset ds;
  ds.inputs = zeros({n, d});
  ds.labels = zeros({n, c});
  ds.domain_id = domain_id;
  ds.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = row_class[order[i]];
    for (std::size_t j = 0; j < d; ++j) {
      ds.inputs.at(i, j) = static_cast<float>(means[k][j] + kClassSigma * data_rng.normal());
    }
    ds.labels->at(i, k) = 1.0f;
  }
  return ds;
}

Dataset gen_generation_domain(const std::string& domain_id, std::size_t n, std::size_t d,
                              std::uint64_t seed) {
  if (n < 1) throw Error("generation domain needs n >= 1");
  std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(double(d))));
  if (side * side != d || side < 2) {
    throw Error("generation domain dim must be a perfect square >= 4");
  }

  // Each image is an id-specific sinusoidal grating with a bright blob on
  // top. The grating orientation and the blob window are placed by the id
  // alone (no seed), so a given id means the same visual style at every seed
  // and distinct ids look different in every pixel; the blob position, blob
  // shape, and grating phase vary per sample. A full-field style matters for
  // denoising: it keeps the domain identity visible in all coordinates, not
  // just inside the blob window.
  constexpr double kPi = 3.14159265358979323846;
  Rng style_rng(mix64(hash64(domain_id), hash64("blob-window")));
  double s = double(side);
  double theta = style_rng.next_double() * 2.0 * kPi;
  double wx = 0.5 * (s - 1.0) + 0.28 * s * std::cos(theta);
  double wy = 0.5 * (s - 1.0) + 0.28 * s * std::sin(theta);
  double half_span = 0.12 * s;
  Rng wave_rng(mix64(hash64(domain_id), hash64("wave-style")));
  double grating_angle = wave_rng.next_double() * kPi;
  double grating_freq = (0.75 + 0.5 * wave_rng.next_double()) * 2.0 * kPi / s;
  double gx = grating_freq * std::cos(grating_angle);
  double gy = grating_freq * std::sin(grating_angle);

  // Beneath the wave and blob, every id also stamps a fixed +/- pedestal on
  // each pixel. Across ids the pedestals differ on about half the pixels, so
  // the two image families sit far apart in input space along a direction no
  // diffusion noise level can wash out; without it, heavily noised samples
  // from any two domains are indistinguishable and their denoising functions
  // collapse into one.
  constexpr double kMarkAmp = 2.5;
  Rng mark_rng(mix64(hash64(domain_id), hash64("pixel-mark")));
  std::vector<double> mark(d);
  for (std::size_t j = 0; j < d; ++j) {
    mark[j] = (mark_rng.next_u64() & 1u) ? kMarkAmp : -kMarkAmp;
  }

  Rng data_rng(mix64(mix64(seed, hash64(domain_id)), hash64("blob-data")));
  Dataset ds;
  ds.inputs = zeros({n, d});
  ds.domain_id = domain_id;
  ds.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    double cx = wx + (2.0 * data_rng.next_double() - 1.0) * half_span;
    double cy = wy + (2.0 * data_rng.next_double() - 1.0) * half_span;
    double width = (0.10 + 0.08 * data_rng.next_double()) * s;
    double amp = 0.35 * (0.7 + 0.3 * data_rng.next_double());
    double phase = data_rng.next_double() * 2.0 * kPi;
    for (std::size_t py = 0; py < side; ++py) {
      for (std::size_t px = 0; px < side; ++px) {
        double dx = double(px) - cx;
        double dy = double(py) - cy;
        double blob = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * width * width));
        double wave = 0.35 + 0.30 * std::sin(gx * double(px) + gy * double(py) + phase);
        ds.inputs.at(i, py * side + px) = static_cast<float>(wave + blob + mark[py * side + px]);
      }
    }
  }
  return ds;
}

DomainSplit split(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error("test_fraction must be in (0, 1)");
  }
  std::size_t n = dataset.size();
  std::size_t n_test = static_cast<std::size_t>(std::lround(double(n) * test_fraction));
  std::size_t rest = n - n_test;
  std::size_t n_def = (rest + 1) / 2;
  std::size_t n_adv = rest - n_def;
  if (n_test < 1 || n_def < 1 || n_adv < 1) {
    throw Error("dataset of " + std::to_string(n) + " rows is too small to split");
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix64(seed, hash64("split")));
  shuffle(order, rng);

  auto take = [&](std::size_t begin, std::size_t count, std::string_view tag) {
    Dataset part;
    part.inputs = zeros({count, dataset.dim()});
    if (dataset.labels) part.labels = zeros({count, dataset.num_classes()});
    part.domain_id = dataset.domain_id;
    part.seed = mix64(dataset.seed, hash64(tag));
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t src = order[begin + i];
      for (std::size_t j = 0; j < dataset.dim(); ++j) {
        part.inputs.at(i, j) = dataset.inputs.at(src, j);
      }
      if (dataset.labels) {
        for (std::size_t j = 0; j < dataset.num_classes(); ++j) {
          part.labels->at(i, j) = dataset.labels->at(src, j);
        }
      }
    }
    return part;
  };

  DomainSplit out;
  out.defender_half = take(0, n_def, "defender");
  out.adversary_half = take(n_def, n_adv, "adversary");
  out.test = take(n_def + n_adv, n_test, "test");
  return out;
}

BatchIterator::BatchIterator(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed)
    : dataset_(dataset), batch_size_(batch_size), rng_(mix64(seed, hash64("batches"))) {
  if (batch_size_ < 1) throw Error("batch_size must be >= 1");
  if (dataset.size() == 0) throw Error("cannot iterate an empty dataset");
  order_.resize(dataset.size());
  reshuffle();
}

void BatchIterator::reshuffle() {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  shuffle(order_, rng_);
  cursor_ = 0;
}

std::size_t BatchIterator::batches_per_epoch() const {
  return (dataset_.size() + batch_size_ - 1) / batch_size_;
}

BatchIterator::Batch BatchIterator::next() {
  if (cursor_ >= order_.size()) reshuffle();
  std::size_t count = std::min(batch_size_, order_.size() - cursor_);
  Batch b;
  b.inputs = zeros({count, dataset_.dim()});
  if (dataset_.labels) b.labels = zeros({count, dataset_.num_classes()});
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t src = order_[cursor_ + i];
    for (std::size_t j = 0; j < dataset_.dim(); ++j) {
      b.inputs.at(i, j) = dataset_.inputs.at(src, j);
    }
    if (dataset_.labels) {
      for (std::size_t j = 0; j < dataset_.num_classes(); ++j) {
        b.labels->at(i, j) = dataset_.labels->at(src, j);
      }
    }
  }
  cursor_ += count;
  return b;
}

void export_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  std::size_t n = dataset.size(), d = dataset.dim(), c = dataset.num_classes();
  put_u32(f, static_cast<std::uint32_t>(n));
  put_u32(f, static_cast<std::uint32_t>(d));
  put_u32(f, static_cast<std::uint32_t>(c));
  for (float v : dataset.inputs.data) put_u32(f, std::bit_cast<std::uint32_t>(v));
  if (c > 0) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t hot = 0;
      for (std::size_t j = 0; j < c; ++j) {
        if (dataset.labels->at(i, j) == 1.0f) hot = static_cast<std::uint32_t>(j);
      }
      put_u32(f, hot);
    }
  }
  if (!f) throw Error("write to '" + path + "' failed");
}

Dataset import_dataset(const std::string& path, const std::string& domain_id,
                       std::uint64_t seed) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  std::uint32_t n = get_u32(f), d = get_u32(f), c = get_u32(f);
  if (!f || n == 0 || d == 0) throw Error("dataset file '" + path + "' has a bad header");
  Dataset ds;
  ds.inputs = zeros({n, d});
  ds.domain_id = domain_id;
  ds.seed = seed;
  for (float& v : ds.inputs.data) v = std::bit_cast<float>(get_u32(f));
  if (c > 0) {
    ds.labels = zeros({n, c});
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t hot = get_u32(f);
      if (hot >= c) throw Error("dataset file '" + path + "' has a label out of range");
      ds.labels->at(i, hot) = 1.0f;
    }
  }
  if (!f) throw Error("dataset file '" + path + "' is truncated");
  return ds;
}

}  // namespace nftl
