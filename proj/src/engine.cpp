#include "frp/engine.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "frp/error.hpp"
#include "frp/rng.hpp"

namespace frp::engine {

const char* to_string(CCAction action) noexcept {
  return action == CCAction::lock_immediate ? "lock_immediate" : "optimistic_no_lock";
}

ExecStats& ExecStats::operator+=(const ExecStats& o) {
  submitted += o.submitted;
  committed_count += o.committed_count;
  aborted_count += o.aborted_count;
  deadlock_aborts += o.deadlock_aborts;
  total_lock_wait += o.total_lock_wait;
  op_count += o.op_count;
  locked_op_count += o.locked_op_count;
  conflict_op_count += o.conflict_op_count;
  return *this;
}

Engine::Engine(EngineConfig config) : config_(config) {
  if (config_.segment_ticks == 0 || config_.heat_refresh == 0)
    throw Error(ErrorKind::invalid_argument, "engine: segment_ticks and heat_refresh must be > 0");
}

Engine Engine::detached_copy() const {
  Engine copy(*this);
  copy.log_.reset();
  return copy;
}

Engine::TxnCtx& Engine::ctx(TxnId txn) {
  const auto it = txns_.find(txn);
  if (it == txns_.end()) throw Error(ErrorKind::unknown_txn, "engine: unknown transaction " + std::to_string(txn));
  return it->second;
}

const Engine::TxnCtx& Engine::ctx(TxnId txn) const {
  const auto it = txns_.find(txn);
  if (it == txns_.end()) throw Error(ErrorKind::unknown_txn, "engine: unknown transaction " + std::to_string(txn));
  return it->second;
}

TxnId Engine::begin() {
  const TxnId id = next_txn_++;
  txns_.emplace(id, TxnCtx{});
  return id;
}

TxnStatus Engine::status(TxnId txn) const { return ctx(txn).status; }
AbortReason Engine::abort_reason(TxnId txn) const { return ctx(txn).reason; }

std::size_t Engine::active_txns() const noexcept {
  return static_cast<std::size_t>(std::count_if(
      txns_.begin(), txns_.end(), [](const auto& kv) { return kv.second.status == TxnStatus::active; }));
}

Record Engine::peek(Key key) const {
  const auto it = store_.find(key);
  return it == store_.end() ? initial_record(key) : it->second;
}

Record& Engine::raw_record(Key key) {
  auto it = store_.find(key);
  if (it == store_.end()) it = store_.emplace(key, initial_record(key)).first;
  return it->second;
}

std::vector<Key> Engine::keys() const {
  std::vector<Key> out;
  out.reserve(store_.size());
  for (const auto& kv : store_) out.push_back(kv.first);
  std::sort(out.begin(), out.end());
  return out;
}

bool Engine::load_verified(Key key) {
  if (!log_) return false;
  const Record stored = peek(key);
  if (!log_->detect_tamper(key, stored)) return false;
  const auto repaired = log_->recover(key);
  store_[key] = repaired.record;
  ++repairs_;
  repaired_replay_ += repaired.replayed;
  return true;
}

KeyHeat Engine::heat(Key key) const { return hot_.contains(key) ? KeyHeat::hot : KeyHeat::cold; }

void Engine::refresh_heat() {
  std::vector<std::pair<std::uint64_t, Key>> ranked;
  ranked.reserve(access_counts_.size());
  for (const auto& [k, c] : access_counts_) ranked.emplace_back(c, k);
  const std::size_t h = std::min<std::size_t>(config_.hot_keys, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(h), ranked.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  hot_.clear();
  for (std::size_t i = 0; i < h; ++i) hot_.insert(ranked[i].second);
  // Exponential decay keeps the ranking recent.
  for (auto it = access_counts_.begin(); it != access_counts_.end();) {
    it->second /= 2;
    it = it->second == 0 ? access_counts_.erase(it) : std::next(it);
  }
}

std::uint64_t Engine::touchers_excluding(Key key, TxnId txn) const {
  const auto it = touchers_.find(key);
  std::uint64_t n = it == touchers_.end() ? 0 : it->second;
  if (n > 0 && ctx(txn).touched.contains(key)) --n;
  return n;
}

void Engine::touch(TxnId txn, Key key) {
  if (ctx(txn).touched.insert(key).second) ++touchers_[key];
  ++access_counts_[key];
}

std::vector<TxnId> Engine::lock_conflicts(TxnId txn, Key key, bool exclusive) const {
  std::vector<TxnId> out;
  const auto it = locks_.find(key);
  if (it == locks_.end()) return out;
  const LockState& ls = it->second;
  if (ls.exclusive && *ls.exclusive != txn) out.push_back(*ls.exclusive);
  if (exclusive)
    for (TxnId s : ls.shared)
      if (s != txn) out.push_back(s);
  return out;
}

bool Engine::try_lock(TxnId txn, Key key, bool exclusive) {
  if (!lock_conflicts(txn, key, exclusive).empty()) return false;
  LockState& ls = locks_[key];
  if (exclusive) {
    ls.shared.erase(txn);
    ls.exclusive = txn;
  } else if (!(ls.exclusive && *ls.exclusive == txn)) {
    ls.shared.insert(txn);
  }
  return true;
}

std::optional<TxnId> Engine::deadlock_victim(TxnId start) const {
  // DFS over the wait-for graph looking for a cycle back to `start`.
  std::vector<TxnId> path;
  std::set<TxnId> visited;
  std::function<bool(TxnId)> dfs = [&](TxnId t) -> bool {
    const auto& c = ctx(t);
    if (!c.waiting_for) return false;
    path.push_back(t);
    for (TxnId next : lock_conflicts(t, c.waiting_for->first, c.waiting_for->second)) {
      if (next == start) return true;
      if (visited.insert(next).second && dfs(next)) return true;
    }
    path.pop_back();
    return false;
  };
  if (!dfs(start)) return std::nullopt;
  return *std::max_element(path.begin(), path.end());
}

void Engine::release_all(TxnId txn) {
  for (auto it = locks_.begin(); it != locks_.end();) {
    LockState& ls = it->second;
    ls.shared.erase(txn);
    if (ls.exclusive && *ls.exclusive == txn) ls.exclusive.reset();
    it = (ls.shared.empty() && !ls.exclusive) ? locks_.erase(it) : std::next(it);
  }
}

void Engine::finish(TxnId txn, TxnStatus status, AbortReason reason) {
  TxnCtx& c = ctx(txn);
  release_all(txn);
  for (Key k : c.touched) {
    auto it = touchers_.find(k);
    if (it != touchers_.end() && --it->second == 0) touchers_.erase(it);
  }
  c.status = status;
  c.reason = reason;
  c.read_versions.clear();
  c.write_buffer.clear();
  c.optimistic_writes.clear();
  c.touched.clear();
  c.blocked_since.reset();
  c.waiting_for.reset();
}

void Engine::abort(TxnId txn, AbortReason reason) {
  if (ctx(txn).status != TxnStatus::active) return;
  finish(txn, TxnStatus::aborted, reason);
}

OpOutcome Engine::execute_op(TxnId txn, const TxnOp& op, CCAction action) {
  TxnCtx& c = ctx(txn);
  if (c.status == TxnStatus::aborted) return OpOutcome{OpOutcome::Kind::aborted};
  if (c.status != TxnStatus::active)
    throw Error(ErrorKind::txn_not_active, "engine: transaction " + std::to_string(txn) + " is not active");
  if (config_.verify_on_load) load_verified(op.key);

  const bool exclusive = op.kind == OpKind::write;
  OpOutcome out;
  out.conflict_noted = touchers_excluding(op.key, txn) > 0;
  if (action == CCAction::lock_immediate) {
    if (!try_lock(txn, op.key, exclusive)) {
      c.waiting_for = std::make_pair(op.key, exclusive);
      if (!c.blocked_since) c.blocked_since = clock_;
      const auto victim = deadlock_victim(txn);
      if (!victim) return OpOutcome{OpOutcome::Kind::blocked, 0, true};
      abort(*victim, AbortReason::deadlock);
      if (*victim == txn) return OpOutcome{OpOutcome::Kind::aborted, 0, true};
      if (!try_lock(txn, op.key, exclusive)) return OpOutcome{OpOutcome::Kind::blocked, 0, true};
    }
    out.wait = c.blocked_since ? clock_ - *c.blocked_since : 0;
    c.blocked_since.reset();
    c.waiting_for.reset();
  }

  touch(txn, op.key);
  if (op.kind == OpKind::read) {
    if (const auto it = c.write_buffer.find(op.key); it != c.write_buffer.end()) {
      out.value = it->second;
    } else {
      const Record r = peek(op.key);
      out.value = r.value;
      if (action == CCAction::optimistic_no_lock) c.read_versions.emplace(op.key, r.version);
    }
  } else {
    c.write_buffer[op.key] = op.write_value;
    const auto lk = locks_.find(op.key);
    const bool x_held = lk != locks_.end() && lk->second.exclusive && *lk->second.exclusive == txn;
    if (!x_held) c.optimistic_writes.insert(op.key);
  }
  out.kind = out.wait > 0 ? OpOutcome::Kind::waited : OpOutcome::Kind::ok;
  return out;
}

CommitResult Engine::validate_and_commit(TxnId txn) {
  TxnCtx& c = ctx(txn);
  if (c.status == TxnStatus::aborted) return CommitResult{TxnStatus::aborted, c.reason};
  if (c.status != TxnStatus::active)
    throw Error(ErrorKind::txn_not_active, "engine: transaction " + std::to_string(txn) + " is not active");

  auto fail = [&] {
    finish(txn, TxnStatus::aborted, AbortReason::conflict);
    return CommitResult{TxnStatus::aborted, AbortReason::conflict};
  };
  for (Key k : c.optimistic_writes)
    if (!try_lock(txn, k, true)) return fail();
  for (const auto& [k, version] : c.read_versions) {
    if (peek(k).version != version) return fail();
    const auto lk = locks_.find(k);
    if (lk != locks_.end() && lk->second.exclusive && *lk->second.exclusive != txn) return fail();
  }

  if (log_) log_->begin_txn(txn);
  for (const auto& [k, value] : c.write_buffer) {
    Record& r = raw_record(k);
    r = make_record(k, value, r.version + 1);
    if (log_) log_->append_redo(txn, k, value);
  }
  if (log_) log_->seal_txn(txn);
  finish(txn, TxnStatus::committed, AbortReason::none);
  return CommitResult{};
}

ExecStats Engine::run_window(const WorkloadSpec& spec, ActionPolicy& policy, Tick duration) {
  if (spec.key_space == 0) throw Error(ErrorKind::invalid_argument, "workload: key_space must be > 0");
  if (spec.workers == 0) throw Error(ErrorKind::invalid_argument, "workload: workers must be > 0");
  if (spec.txn_length > spec.key_space)
    throw Error(ErrorKind::invalid_argument, "workload: txn_length exceeds key_space");
  if (spec.arrival_rate < 0 || spec.write_fraction < 0 || spec.write_fraction > 1)
    throw Error(ErrorKind::invalid_argument, "workload: bad arrival_rate or write_fraction");
  ++window_counter_;

  Rng rng = Rng::derive(spec.seed, "workload");
  const ZipfSampler zipf(spec.key_space, spec.zipf_theta);

  struct Slot {
    TxnId id;
    std::vector<TxnOp> ops;
    std::size_t next = 0;
    Tick busy_until = 0;
    std::optional<CCAction> action;
    std::optional<Tick> release_at;
    bool conflict = false;
  };
  std::vector<Slot> active;
  std::vector<TxnId> finished;
  ExecStats stats;
  ExecStats segment;
  auto count = [&](auto&& fn) {
    fn(stats);
    fn(segment);
  };

  const Tick start = clock_;
  const Tick end = start + duration;
  Tick seg_start = start;
  std::uint64_t pending = 0;
  std::int64_t value_seq = 0;

  auto arrivals = [&](Tick rel) {
    const auto a = static_cast<std::uint64_t>(std::floor(static_cast<double>(rel + 1) * spec.arrival_rate));
    const auto b = static_cast<std::uint64_t>(std::floor(static_cast<double>(rel) * spec.arrival_rate));
    return a - b;
  };

  auto make_txn = [&] {
    std::vector<TxnOp> ops;
    std::set<Key> used;
    while (ops.size() < spec.txn_length) {
      const Key k = zipf(rng);
      if (!used.insert(k).second) continue;
      TxnOp op;
      op.key = k;
      if (rng.bernoulli(spec.write_fraction)) {
        op.kind = OpKind::write;
        op.write_value = ++value_seq;
      }
      ops.push_back(op);
    }
    return ops;
  };

  while (clock_ < end || !active.empty()) {
    const Tick rel = clock_ - start;
    if (rel % config_.heat_refresh == 0) refresh_heat();
    if (clock_ < end) {
      pending += arrivals(rel);
      while (active.size() < spec.workers && pending > 0) {
        --pending;
        ++stats.submitted;
        ++segment.submitted;
        active.push_back(Slot{begin(), make_txn(), 0, clock_, std::nullopt, std::nullopt, false});
      }
    }

    for (auto& s : active) {
      if (s.release_at) continue;
      if (status(s.id) == TxnStatus::aborted) {
        count([&](ExecStats& st) {
          ++st.aborted_count;
          if (abort_reason(s.id) == AbortReason::deadlock) ++st.deadlock_aborts;
        });
        s.release_at = clock_ + config_.abort_ticks;
        continue;
      }
      if (s.busy_until > clock_) continue;
      if (s.next < s.ops.size()) {
        const TxnOp& op = s.ops[s.next];
        const bool first_attempt = !s.action;
        if (first_attempt) s.action = policy.choose(op, heat(op.key));
        const OpOutcome out = execute_op(s.id, op, *s.action);
        if (first_attempt) s.conflict = out.conflict_noted;
        if (out.kind == OpOutcome::Kind::blocked) {
          count([](ExecStats& st) { ++st.total_lock_wait; });
          s.busy_until = clock_ + 1;
          continue;
        }
        if (out.kind == OpOutcome::Kind::aborted) {
          count([](ExecStats& st) {
            ++st.aborted_count;
            ++st.deadlock_aborts;
          });
          s.release_at = clock_ + config_.abort_ticks;
          continue;
        }
        const bool locked = *s.action == CCAction::lock_immediate;
        count([&](ExecStats& st) {
          ++st.op_count;
          if (locked) ++st.locked_op_count;
          if (s.conflict) ++st.conflict_op_count;
        });
        s.busy_until = clock_ + config_.op_ticks + (locked ? config_.lock_ticks : 0);
        s.action.reset();
        ++s.next;
      } else {
        const CommitResult r = validate_and_commit(s.id);
        count([&](ExecStats& st) {
          if (r.status == TxnStatus::committed) ++st.committed_count;
          else ++st.aborted_count;
        });
        s.release_at = clock_ + (r.status == TxnStatus::committed ? config_.commit_ticks : config_.abort_ticks);
      }
    }

    ++clock_;
    std::erase_if(active, [&](const Slot& s) {
      if (!s.release_at || *s.release_at > clock_) return false;
      finished.push_back(s.id);
      return true;
    });
    if (clock_ - seg_start == config_.segment_ticks) {
      policy.on_segment(segment, config_.segment_ticks);
      segment = {};
      seg_start = clock_;
    }
    if (clock_ > end + 10'000'000) throw Error(ErrorKind::invalid_argument, "engine: window failed to drain");
  }
  for (TxnId id : finished) txns_.erase(id);
  return stats;
}

}  // namespace frp::engine
