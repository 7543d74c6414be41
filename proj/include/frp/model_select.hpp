#pragma once

// Budgeted two-phase model selection over a synthetic model space.
//
// Filter: regularized evolution proposes genomes, a cheap proxy scorer ranks
// them, the top K form the candidate set. Refine: successive halving with
// cumulative training, keeping ceil(n / eta) models per round. plan_budget
// sizes both phases so the simulated cost never exceeds the budget T.

#include <cstdint>
#include <optional>
#include <vector>

#include "frp/circular_buffer.hpp"
#include "frp/rng.hpp"

namespace frp::selection {

struct ModelGenome {
  std::uint64_t id = 0;  // mixed-radix index of params
  std::vector<std::uint32_t> params;

  friend bool operator==(const ModelGenome&, const ModelGenome&) = default;
};

/// Synthetic architecture space. Each dimension d takes values [0, bounds[d]).
/// Ground-truth quality a_final is a smooth seed-dependent landscape plus a
/// hash jitter; the curve time constant tau falls linearly from tau_max to
/// tau_min as a_final rises. Both are reachable only through Scorer, Trainer
/// and Oracle.
class ModelSpace {
 public:
  ModelSpace(std::vector<std::uint32_t> bounds, std::uint64_t seed, double tau_min = 1.0, double tau_max = 3.0);

  std::size_t dims() const noexcept { return bounds_.size(); }
  const std::vector<std::uint32_t>& bounds() const noexcept { return bounds_; }
  std::uint64_t size() const noexcept { return size_; }
  std::uint64_t seed() const noexcept { return seed_; }

  ModelGenome genome(std::uint64_t id) const;
  /// Throws invalid_argument when params are out of bounds.
  std::uint64_t id_of(const std::vector<std::uint32_t>& params) const;
  ModelGenome random(Rng& rng) const;

 private:
  friend class Scorer;
  friend class Trainer;
  friend class Oracle;

  double a_final(std::uint64_t id) const;
  double tau(std::uint64_t id) const;

  std::vector<std::uint32_t> bounds_;
  std::uint64_t size_ = 1;
  std::uint64_t seed_;
  double tau_min_;
  double tau_max_;
  std::vector<double> centers_;
  std::vector<double> weights_;
};

struct ScorerParams {
  double rho = 0.8;    // correlation weight on true quality
  double sigma = 0.1;  // proxy noise
  double cost = 1.0;   // simulated time per call
  std::uint64_t seed = 1;
};

/// Training-free proxy: mean of an expressivity-like and a trainability-like
/// proxy, each rho * a_final + (1 - rho) * sigma * z with hash-seeded z.
class Scorer {
 public:
  Scorer(const ModelSpace& space, ScorerParams params);
  double score(const ModelGenome& g) const;
  const ScorerParams& params() const noexcept { return params_; }

 private:
  const ModelSpace* space_;
  ScorerParams params_;
};

struct TrainerParams {
  double epoch_cost = 10.0;  // simulated time per (model, epoch)
  double noise = 0.0;        // evaluation noise on accuracy
  std::uint64_t seed = 1;
};

/// Unit of data handed to the trainer through the feed.
struct DataBatch {
  std::uint64_t seq = 0;
  std::uint64_t checksum = 0;
};

DataBatch make_batch(std::uint64_t seq, std::uint64_t seed) noexcept;

/// Learning curve acc(g, u) = a_final * (1 - exp(-u / tau)) + noise.
class Trainer {
 public:
  Trainer(const ModelSpace& space, TrainerParams params);

  double accuracy(const ModelGenome& g, std::uint64_t epochs) const;

  /// Charges `epochs` epochs to `g`, pulling one batch per epoch from the
  /// feed when one is attached.
  void train(const ModelGenome& g, std::uint64_t epochs);

  /// Batches must arrive in order; a gap or early end of stream throws.
  void attach_feed(CircularBuffer<DataBatch>* feed) noexcept {
    feed_ = feed;
    feed_seq_ = 0;
  }

  std::uint64_t epochs_charged() const noexcept { return epochs_; }
  std::uint64_t batches_consumed() const noexcept { return batches_; }
  const TrainerParams& params() const noexcept { return params_; }

 private:
  const ModelSpace* space_;
  TrainerParams params_;
  CircularBuffer<DataBatch>* feed_ = nullptr;
  std::uint64_t feed_seq_ = 0;
  std::uint64_t epochs_ = 0;
  std::uint64_t batches_ = 0;
};

/// Brute-force ground truth over an enumerable space.
class Oracle {
 public:
  static constexpr std::uint64_t kMaxSpace = 1u << 22;

  explicit Oracle(const ModelSpace& space);
  const ModelGenome& best() const noexcept { return best_; }
  double best_value() const noexcept { return best_value_; }
  double value(const ModelGenome& g) const;
  double regret(const ModelGenome& g) const { return best_value_ - value(g); }

 private:
  const ModelSpace* space_;
  ModelGenome best_;
  double best_value_ = 0;
};

struct SelectionPlan {
  double budget = 0;  // T
  double score_cost = 0;
  double epoch_cost = 0;
  std::uint64_t n = 0;  // models to score
  std::uint64_t k = 0;  // candidate set size, a power of eta
  std::uint32_t u_init = 1;
  std::uint32_t eta = 2;
  double phi = 0.2;

  /// Halving rounds; a single candidate still gets one round.
  std::uint32_t rounds() const noexcept;
  std::uint64_t refine_epochs() const noexcept { return k * u_init * rounds(); }
  double filter_cost() const noexcept { return static_cast<double>(n) * score_cost; }
  double refine_cost() const noexcept { return static_cast<double>(refine_epochs()) * epoch_cost; }
  double total_cost() const noexcept { return filter_cost() + refine_cost(); }
};

/// N = floor(phi * T / c_score); K = largest power of eta with
/// K * U_init * max(1, log_eta K) * c_epoch <= (1 - phi) * T and K <= N.
/// Throws infeasible_budget when N or K would be zero.
SelectionPlan plan_budget(double budget, double score_cost, double epoch_cost, std::uint32_t eta = 2,
                          double phi = 0.2, std::uint32_t u_init = 1);

struct ScoredModel {
  ModelGenome genome;
  double score = 0;
};

struct EvolutionParams {
  std::size_t population = 16;  // p
  std::size_t sample = 4;       // s
  /// Children proposed per dispatch to the workers. Fixed independently of
  /// the worker count, so the scored sequence does not depend on W.
  std::size_t batch = 8;
};

/// Regularized evolution with a shared work queue of W scoring workers.
/// Returns min(N, |space|) distinct genomes in scoring order.
std::vector<ScoredModel> explore_and_score(const ModelSpace& space, const Scorer& scorer, std::uint64_t n,
                                           std::size_t workers, Rng& rng, const EvolutionParams& params = {});

/// The K highest scores, ties to the lower genome id. Throws if |scored| < K.
std::vector<ModelGenome> take_candidates(const std::vector<ScoredModel>& scored, std::uint64_t k);

struct RefineReport {
  ModelGenome winner;
  double winner_accuracy = 0;
  std::vector<std::size_t> survivors;  // set size entering each round, then 1
  std::vector<std::uint64_t> round_epochs;  // U_r per round
  std::uint64_t epochs = 0;  // sum over rounds of survivors_r * U_r
};

/// Successive halving with cumulative training. Throws invalid_argument on an
/// empty candidate set or eta < 2.
RefineReport refine(const std::vector<ModelGenome>& candidates, std::uint32_t u_init, std::uint32_t eta,
                    Trainer& trainer);

struct SelectOptions {
  std::uint32_t eta = 2;
  double phi = 0.2;
  std::uint32_t u_init = 1;
  std::size_t workers = 1;
  EvolutionParams evolution;
  /// Batches buffered between the feed producer and the trainer; 0 = no feed.
  std::size_t feed_capacity = 0;
  std::uint64_t seed = 1;
};

struct SelectionResult {
  ModelGenome genome;
  SelectionPlan plan;
  std::uint64_t scored = 0;
  std::uint64_t candidates = 0;
  RefineReport refine;
  double filter_cost = 0;
  double refine_cost = 0;
  double elapsed = 0;
  std::uint64_t batches_consumed = 0;
};

/// plan_budget, explore_and_score, take_candidates, refine. If the space holds
/// fewer than K genomes, K drops to the largest power of eta that fits.
SelectionResult select(const ModelSpace& space, const Scorer& scorer, Trainer& trainer, double budget,
                       const SelectOptions& options = {});

}  // namespace frp::selection
