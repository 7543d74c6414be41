#include "frp/model_select.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>
#include <unordered_set>

#include "frp/error.hpp"

namespace frp::selection {

namespace {

std::uint64_t hash3(std::uint64_t a, std::uint64_t b, std::uint64_t c) noexcept {
  return mix64(mix64(mix64(a) ^ b) ^ c);
}

constexpr std::uint64_t kMaxIds = std::uint64_t{1} << 62;

}  // namespace

ModelSpace::ModelSpace(std::vector<std::uint32_t> bounds, std::uint64_t seed, double tau_min, double tau_max)
    : bounds_(std::move(bounds)), seed_(seed), tau_min_(tau_min), tau_max_(tau_max) {
  if (bounds_.empty()) throw Error(ErrorKind::invalid_argument, "model space: at least one dimension required");
  for (auto b : bounds_) {
    if (b == 0) throw Error(ErrorKind::invalid_argument, "model space: every dimension needs >= 1 value");
    if (size_ > kMaxIds / b) throw Error(ErrorKind::invalid_argument, "model space: too many genomes");
    size_ *= b;
  }
  if (!(tau_min_ > 0) || tau_max_ < tau_min_)
    throw Error(ErrorKind::invalid_argument, "model space: need 0 < tau_min <= tau_max");
  Rng rng = Rng::derive(seed_, "model-space");
  for (std::size_t d = 0; d < bounds_.size(); ++d) {
    centers_.push_back(rng.uniform());
    weights_.push_back(rng.uniform(0.5, 1.5));
  }
}

ModelGenome ModelSpace::genome(std::uint64_t id) const {
  if (id >= size_) throw Error(ErrorKind::invalid_argument, "model space: genome id out of range");
  ModelGenome g;
  g.id = id;
  g.params.resize(bounds_.size());
  for (std::size_t d = 0; d < bounds_.size(); ++d) {
    g.params[d] = static_cast<std::uint32_t>(id % bounds_[d]);
    id /= bounds_[d];
  }
  return g;
}

std::uint64_t ModelSpace::id_of(const std::vector<std::uint32_t>& params) const {
  if (params.size() != bounds_.size()) throw Error(ErrorKind::invalid_argument, "model space: wrong genome length");
  std::uint64_t id = 0;
  for (std::size_t d = bounds_.size(); d-- > 0;) {
    if (params[d] >= bounds_[d]) throw Error(ErrorKind::invalid_argument, "model space: param out of bounds");
    id = id * bounds_[d] + params[d];
  }
  return id;
}

ModelGenome ModelSpace::random(Rng& rng) const { return genome(rng.below(size_)); }

double ModelSpace::a_final(std::uint64_t id) const {
  const ModelGenome g = genome(id);
  double num = 0;
  double den = 0;
  for (std::size_t d = 0; d < bounds_.size(); ++d) {
    const double x = bounds_[d] > 1 ? static_cast<double>(g.params[d]) / (bounds_[d] - 1) : 0.0;
    const double dx = x - centers_[d];
    num += weights_[d] * (1.0 - dx * dx);
    den += weights_[d];
  }
  const double jitter = 2.0 * unit_from_bits(hash3(seed_, hash_label("a-final"), id)) - 1.0;
  return std::clamp(0.2 + 0.6 * (num / den) + 0.1 * jitter, 0.0, 1.0);
}

double ModelSpace::tau(std::uint64_t id) const {
  // Better models converge faster, so noiseless curves never cross.
  return tau_min_ + (tau_max_ - tau_min_) * (1.0 - a_final(id));
}

Scorer::Scorer(const ModelSpace& space, ScorerParams params) : space_(&space), params_(params) {
  if (params_.rho < 0 || params_.rho > 1) throw Error(ErrorKind::invalid_argument, "scorer: rho must be in [0,1]");
  if (params_.sigma < 0) throw Error(ErrorKind::invalid_argument, "scorer: sigma must be >= 0");
  if (!(params_.cost > 0)) throw Error(ErrorKind::invalid_argument, "scorer: cost must be > 0");
}

double Scorer::score(const ModelGenome& g) const {
  const double a = space_->a_final(g.id);
  const double z1 = normal_from_bits(hash3(params_.seed, hash_label("proxy-expressivity"), g.id));
  const double z2 = normal_from_bits(hash3(params_.seed, hash_label("proxy-trainability"), g.id));
  const double p1 = params_.rho * a + (1 - params_.rho) * params_.sigma * z1;
  const double p2 = params_.rho * a + (1 - params_.rho) * params_.sigma * z2;
  return 0.5 * p1 + 0.5 * p2;
}

DataBatch make_batch(std::uint64_t seq, std::uint64_t seed) noexcept { return {seq, hash3(seed, 0xba7c, seq)}; }

Trainer::Trainer(const ModelSpace& space, TrainerParams params) : space_(&space), params_(params) {
  if (!(params_.epoch_cost > 0)) throw Error(ErrorKind::invalid_argument, "trainer: epoch cost must be > 0");
  if (params_.noise < 0) throw Error(ErrorKind::invalid_argument, "trainer: noise must be >= 0");
}

double Trainer::accuracy(const ModelGenome& g, std::uint64_t epochs) const {
  const double a = space_->a_final(g.id);
  const double curve = a * (1.0 - std::exp(-static_cast<double>(epochs) / space_->tau(g.id)));
  if (params_.noise == 0) return curve;
  return curve + params_.noise * normal_from_bits(hash3(params_.seed, g.id, epochs));
}

void Trainer::train(const ModelGenome&, std::uint64_t epochs) {
  for (std::uint64_t e = 0; e < epochs; ++e) {
    if (feed_ != nullptr) {
      const std::optional<DataBatch> batch = feed_->consume();
      if (!batch) throw Error(ErrorKind::invalid_argument, "trainer: data feed ended early");
      if (batch->seq != feed_seq_) throw Error(ErrorKind::invalid_argument, "trainer: data feed out of order");
      ++feed_seq_;
      ++batches_;
    }
    ++epochs_;
  }
}

Oracle::Oracle(const ModelSpace& space) : space_(&space) {
  if (space.size() > kMaxSpace) throw Error(ErrorKind::invalid_argument, "oracle: space too large to enumerate");
  best_value_ = -1;
  std::uint64_t best_id = 0;
  for (std::uint64_t id = 0; id < space.size(); ++id) {
    const double v = space.a_final(id);
    if (v > best_value_) {
      best_value_ = v;
      best_id = id;
    }
  }
  best_ = space.genome(best_id);
}

double Oracle::value(const ModelGenome& g) const { return space_->a_final(g.id); }

std::uint32_t SelectionPlan::rounds() const noexcept {
  std::uint32_t r = 0;
  for (std::uint64_t x = k; x > 1; x /= eta) ++r;
  return std::max<std::uint32_t>(r, 1);
}

SelectionPlan plan_budget(double budget, double score_cost, double epoch_cost, std::uint32_t eta, double phi,
                          std::uint32_t u_init) {
  if (!(budget > 0)) throw Error(ErrorKind::invalid_argument, "plan_budget: T must be > 0");
  if (!(score_cost > 0) || !(epoch_cost > 0)) throw Error(ErrorKind::invalid_argument, "plan_budget: costs must be > 0");
  if (eta < 2) throw Error(ErrorKind::invalid_argument, "plan_budget: eta must be >= 2");
  if (!(phi > 0) || !(phi < 1)) throw Error(ErrorKind::invalid_argument, "plan_budget: phi must be in (0,1)");
  if (u_init == 0) throw Error(ErrorKind::invalid_argument, "plan_budget: U_init must be >= 1");

  SelectionPlan plan;
  plan.budget = budget;
  plan.score_cost = score_cost;
  plan.epoch_cost = epoch_cost;
  plan.eta = eta;
  plan.phi = phi;
  plan.u_init = u_init;
  const double n = std::floor(phi * budget / score_cost);
  plan.n = n >= 1 ? static_cast<std::uint64_t>(std::min(n, 1e15)) : 0;
  if (plan.n == 0) throw Error(ErrorKind::infeasible_budget, "plan_budget: budget cannot cover one score");

  const double refine_budget = (1 - phi) * budget;
  std::uint64_t k = 1;
  std::uint32_t j = 0;
  bool any = false;
  while (true) {
    const double cost = static_cast<double>(k) * u_init * std::max<std::uint32_t>(j, 1) * epoch_cost;
    if (cost > refine_budget || k > plan.n) break;
    plan.k = k;
    any = true;
    if (k > std::numeric_limits<std::uint64_t>::max() / eta) break;
    k *= eta;
    ++j;
  }
  if (!any) throw Error(ErrorKind::infeasible_budget, "plan_budget: budget cannot cover one training round");
  return plan;
}

namespace {

/// Scores jobs with up to `workers` threads pulling from a shared index.
/// Results land in job order regardless of which worker scored them.
std::vector<double> score_jobs(const Scorer& scorer, const std::vector<ModelGenome>& jobs, std::size_t workers) {
  std::vector<double> out(jobs.size());
  const std::size_t threads = std::min(workers, jobs.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) out[i] = scorer.score(jobs[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) out[i] = scorer.score(jobs[i]);
    });
  }
  for (auto& th : pool) th.join();
  return out;
}

class UnseenPicker {
 public:
  UnseenPicker(const ModelSpace& space, std::unordered_set<std::uint64_t>& seen) : space_(space), seen_(seen) {}

  /// Random genome not yet seen. Falls back to a scan once rejection stalls.
  ModelGenome pick(Rng& rng) {
    for (int attempt = 0; attempt < 32; ++attempt) {
      const std::uint64_t id = rng.below(space_.size());
      if (!seen_.count(id)) return space_.genome(id);
    }
    const std::uint64_t start = rng.below(space_.size());
    for (std::uint64_t i = 0; i < space_.size(); ++i) {
      const std::uint64_t id = (start + i) % space_.size();
      if (!seen_.count(id)) return space_.genome(id);
    }
    throw Error(ErrorKind::invalid_argument, "explore: space exhausted");
  }

 private:
  const ModelSpace& space_;
  std::unordered_set<std::uint64_t>& seen_;
};

ModelGenome mutate_one(const ModelSpace& space, const ModelGenome& parent, Rng& rng) {
  std::vector<std::size_t> free_dims;
  for (std::size_t d = 0; d < space.dims(); ++d)
    if (space.bounds()[d] > 1) free_dims.push_back(d);
  if (free_dims.empty()) return parent;
  const std::size_t d = free_dims[rng.below(free_dims.size())];
  std::vector<std::uint32_t> p = parent.params;
  const auto shift = static_cast<std::uint32_t>(1 + rng.below(space.bounds()[d] - 1));
  p[d] = (p[d] + shift) % space.bounds()[d];
  return space.genome(space.id_of(p));
}

}  // namespace

std::vector<ScoredModel> explore_and_score(const ModelSpace& space, const Scorer& scorer, std::uint64_t n,
                                           std::size_t workers, Rng& rng, const EvolutionParams& params) {
  if (n == 0) throw Error(ErrorKind::invalid_argument, "explore: N must be >= 1");
  if (workers == 0) throw Error(ErrorKind::invalid_argument, "explore: W must be >= 1");
  if (params.population == 0 || params.sample == 0 || params.batch == 0)
    throw Error(ErrorKind::invalid_argument, "explore: population, sample and batch must be >= 1");
  const std::uint64_t target = std::min(n, space.size());

  std::vector<ScoredModel> scored;
  scored.reserve(target);
  std::unordered_set<std::uint64_t> seen;
  UnseenPicker picker(space, seen);
  std::vector<ScoredModel> population;  // front = oldest

  const auto dispatch = [&](std::vector<ModelGenome> jobs) {
    const std::vector<double> scores = score_jobs(scorer, jobs, workers);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      ScoredModel m{std::move(jobs[i]), scores[i]};
      scored.push_back(m);
      population.push_back(std::move(m));
      if (population.size() > params.population) population.erase(population.begin());
    }
  };

  // Initial population: random distinct genomes.
  {
    std::vector<ModelGenome> jobs;
    while (jobs.size() < std::min<std::uint64_t>(params.population, target)) {
      ModelGenome g = picker.pick(rng);
      seen.insert(g.id);
      jobs.push_back(std::move(g));
    }
    dispatch(std::move(jobs));
  }

  while (scored.size() < target) {
    const std::size_t batch = static_cast<std::size_t>(std::min<std::uint64_t>(params.batch, target - scored.size()));
    std::vector<ModelGenome> jobs;
    while (jobs.size() < batch) {
      // Tournament of s members sampled with replacement; best score wins,
      // ties to the lower id.
      const ScoredModel* parent = nullptr;
      for (std::size_t i = 0; i < params.sample; ++i) {
        const ScoredModel& c = population[rng.below(population.size())];
        if (!parent || c.score > parent->score || (c.score == parent->score && c.genome.id < parent->genome.id))
          parent = &c;
      }
      std::optional<ModelGenome> child;
      for (int attempt = 0; attempt < 8 && !child; ++attempt) {
        ModelGenome g = mutate_one(space, parent->genome, rng);
        if (!seen.count(g.id)) child = std::move(g);
      }
      if (!child) child = picker.pick(rng);
      seen.insert(child->id);
      jobs.push_back(std::move(*child));
    }
    dispatch(std::move(jobs));
  }
  return scored;
}

std::vector<ModelGenome> take_candidates(const std::vector<ScoredModel>& scored, std::uint64_t k) {
  if (k == 0) throw Error(ErrorKind::invalid_argument, "take_candidates: K must be >= 1");
  if (scored.size() < k) throw Error(ErrorKind::invalid_argument, "take_candidates: fewer scored models than K");
  std::vector<const ScoredModel*> order;
  order.reserve(scored.size());
  for (const auto& s : scored) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(), [](const ScoredModel* a, const ScoredModel* b) {
    if (a->score != b->score) return a->score > b->score;
    return a->genome.id < b->genome.id;
  });
  std::vector<ModelGenome> out;
  out.reserve(k);
  for (std::uint64_t i = 0; i < k; ++i) out.push_back(order[i]->genome);
  return out;
}

RefineReport refine(const std::vector<ModelGenome>& candidates, std::uint32_t u_init, std::uint32_t eta,
                    Trainer& trainer) {
  if (candidates.empty()) throw Error(ErrorKind::invalid_argument, "refine: empty candidate set");
  if (eta < 2) throw Error(ErrorKind::invalid_argument, "refine: eta must be >= 2");
  if (u_init == 0) throw Error(ErrorKind::invalid_argument, "refine: U_init must be >= 1");

  struct Member {
    ModelGenome genome;
    std::uint64_t epochs = 0;
    double acc = 0;
  };
  std::vector<Member> alive;
  for (const auto& g : candidates) alive.push_back({g, 0, 0});

  RefineReport report;
  std::uint64_t u = u_init;
  while (true) {
    report.survivors.push_back(alive.size());
    report.round_epochs.push_back(u);
    for (auto& m : alive) {
      trainer.train(m.genome, u);
      m.epochs += u;
      m.acc = trainer.accuracy(m.genome, m.epochs);
      report.epochs += u;
    }
    if (alive.size() == 1) break;
    const std::size_t keep = (alive.size() + eta - 1) / eta;
    std::stable_sort(alive.begin(), alive.end(), [](const Member& a, const Member& b) {
      if (a.acc != b.acc) return a.acc > b.acc;
      return a.genome.id < b.genome.id;
    });
    alive.resize(keep);
    if (alive.size() == 1) break;
    u *= eta;
  }
  if (report.survivors.back() != 1) report.survivors.push_back(1);
  report.winner = alive.front().genome;
  report.winner_accuracy = alive.front().acc;
  return report;
}

SelectionResult select(const ModelSpace& space, const Scorer& scorer, Trainer& trainer, double budget,
                       const SelectOptions& options) {
  SelectionResult result;
  result.plan = plan_budget(budget, scorer.params().cost, trainer.params().epoch_cost, options.eta, options.phi,
                            options.u_init);
  while (result.plan.k > space.size()) result.plan.k /= options.eta;

  Rng rng = Rng::derive(options.seed, "model-select");
  const std::vector<ScoredModel> scored =
      explore_and_score(space, scorer, result.plan.n, options.workers, rng, options.evolution);
  result.scored = scored.size();
  result.filter_cost = static_cast<double>(scored.size()) * scorer.params().cost;

  const std::vector<ModelGenome> candidates = take_candidates(scored, result.plan.k);
  result.candidates = candidates.size();

  const std::uint64_t epochs_before = trainer.epochs_charged();
  const std::uint64_t batches_before = trainer.batches_consumed();
  if (options.feed_capacity > 0) {
    CircularBuffer<DataBatch> feed(options.feed_capacity);
    const std::uint64_t planned = result.plan.refine_epochs();
    std::thread producer([&feed, planned, seed = options.seed] {
      for (std::uint64_t s = 0; s < planned; ++s)
        if (!feed.produce(make_batch(s, seed))) break;
      feed.close();
    });
    trainer.attach_feed(&feed);
    try {
      result.refine = refine(candidates, options.u_init, options.eta, trainer);
    } catch (...) {
      trainer.attach_feed(nullptr);
      feed.close();
      producer.join();
      throw;
    }
    trainer.attach_feed(nullptr);
    feed.close();
    producer.join();
  } else {
    result.refine = refine(candidates, options.u_init, options.eta, trainer);
  }
  result.batches_consumed = trainer.batches_consumed() - batches_before;
  result.refine_cost = static_cast<double>(trainer.epochs_charged() - epochs_before) * trainer.params().epoch_cost;
  result.genome = result.refine.winner;
  result.elapsed = result.filter_cost + result.refine_cost;
  return result;
}

}  // namespace frp::selection
