#pragma once

// In-memory transactional key-value store driven in simulated time.
//
// Each operation runs under one of two concurrency actions: lock_immediate
// (strict two-phase locking, shared locks for reads, exclusive for writes) or
// optimistic_no_lock (the access is recorded in the transaction's read/write
// set). Writes are buffered and installed at commit. Commit locks the
// optimistic write set without waiting, validates optimistic reads against
// committed versions (backward validation), installs writes with a version
// bump, appends redo entries, and releases every lock.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "frp/record.hpp"
#include "frp/recovery.hpp"

namespace frp::engine {

using TxnId = std::uint64_t;
using Tick = std::uint64_t;

enum class OpKind : std::uint8_t { read, write };

struct TxnOp {
  OpKind kind = OpKind::read;
  Key key = 0;
  std::int64_t write_value = 0;
};

enum class CCAction : std::uint8_t { lock_immediate, optimistic_no_lock };

enum class KeyHeat : std::uint8_t { cold, hot };

enum class TxnStatus : std::uint8_t { active, committed, aborted };

enum class AbortReason : std::uint8_t { none, conflict, deadlock };

struct Txn {
  TxnId id = 0;
  std::vector<TxnOp> ops;
  std::vector<CCAction> mode_per_op;
  TxnStatus status = TxnStatus::active;
};

struct OpOutcome {
  enum class Kind : std::uint8_t {
    ok,       // done without waiting
    waited,   // done after waiting `wait` ticks for a lock
    blocked,  // lock unavailable; retry later
    aborted,  // requester was chosen as deadlock victim
  };
  Kind kind = Kind::ok;
  Tick wait = 0;
  bool conflict_noted = false;  // another active txn has touched or locked the key
  std::int64_t value = 0;       // value observed by a read

  bool done() const noexcept { return kind == Kind::ok || kind == Kind::waited; }
};

struct CommitResult {
  TxnStatus status = TxnStatus::committed;
  AbortReason reason = AbortReason::none;
};

struct ExecStats {
  std::uint64_t submitted = 0;
  std::uint64_t committed_count = 0;
  std::uint64_t aborted_count = 0;
  std::uint64_t deadlock_aborts = 0;
  Tick total_lock_wait = 0;
  std::uint64_t op_count = 0;
  std::uint64_t locked_op_count = 0;
  std::uint64_t conflict_op_count = 0;

  ExecStats& operator+=(const ExecStats& o);
  friend bool operator==(const ExecStats&, const ExecStats&) = default;
};

struct WorkloadSpec {
  std::uint64_t key_space = 1000;
  double zipf_theta = 0.0;
  double write_fraction = 0.5;
  std::uint32_t txn_length = 4;
  double arrival_rate = 1.0;  // transactions offered per tick
  std::uint32_t workers = 8;  // concurrently active transactions
  std::uint64_t seed = 1;
};

/// Service-time model and key-heat tracking parameters.
struct EngineConfig {
  Tick op_ticks = 2;
  Tick lock_ticks = 1;
  Tick commit_ticks = 1;
  Tick abort_ticks = 0;  // rollback cost holding the worker after an abort
  std::uint32_t hot_keys = 16;
  Tick heat_refresh = 100;
  Tick segment_ticks = 100;
  bool verify_on_load = true;  // tamper check on every access when a log is attached
};

/// Chooses the concurrency action for each operation inside run_window.
class ActionPolicy {
 public:
  virtual ~ActionPolicy() = default;
  virtual CCAction choose(const TxnOp& op, KeyHeat heat) = 0;
  /// Called at the end of every `segment_ticks` slice with that slice's stats.
  virtual void on_segment(const ExecStats& /*segment*/, Tick /*length*/) {}
};

class FixedPolicy final : public ActionPolicy {
 public:
  explicit FixedPolicy(CCAction action) : action_(action) {}
  CCAction choose(const TxnOp&, KeyHeat) override { return action_; }

 private:
  CCAction action_;
};

class Engine {
 public:
  explicit Engine(EngineConfig config = {});

  /// Copy of the store, heat counters and clock without the redo log; used to
  /// evaluate candidate strategies on private instances.
  Engine detached_copy() const;

  void attach_log(std::shared_ptr<recovery::RedoLog> log) { log_ = std::move(log); }
  const std::shared_ptr<recovery::RedoLog>& log() const noexcept { return log_; }

  const EngineConfig& config() const noexcept { return config_; }

  Tick now() const noexcept { return clock_; }
  void advance(Tick ticks) noexcept { clock_ += ticks; }

  TxnId begin();
  OpOutcome execute_op(TxnId txn, const TxnOp& op, CCAction action);
  CommitResult validate_and_commit(TxnId txn);
  void abort(TxnId txn, AbortReason reason);

  TxnStatus status(TxnId txn) const;
  AbortReason abort_reason(TxnId txn) const;

  /// Runs a window of generated transactions; see WorkloadSpec. Deterministic
  /// in (engine state, spec, policy). Admission stops after `duration` ticks
  /// and in-flight transactions are drained to completion.
  ExecStats run_window(const WorkloadSpec& spec, ActionPolicy& policy, Tick duration);

  /// Committed state of a key (initial state if never written).
  Record peek(Key key) const;
  /// Mutable stored record, for out-of-band tampering.
  Record& raw_record(Key key);

  /// Loads a record through the tamper check, repairing it from the log when
  /// it fails. Returns true if a repair happened.
  bool load_verified(Key key);
  std::uint64_t repairs() const noexcept { return repairs_; }
  std::uint64_t repaired_replay_total() const noexcept { return repaired_replay_; }

  KeyHeat heat(Key key) const;
  void refresh_heat();

  bool lock_table_empty() const noexcept { return locks_.empty(); }
  std::size_t active_txns() const noexcept;
  std::vector<Key> keys() const;

 private:
  struct LockState {
    std::set<TxnId> shared;
    std::optional<TxnId> exclusive;
  };

  struct TxnCtx {
    TxnStatus status = TxnStatus::active;
    AbortReason reason = AbortReason::none;
    std::map<Key, std::uint64_t> read_versions;  // optimistic reads
    std::map<Key, std::int64_t> write_buffer;
    std::set<Key> optimistic_writes;
    std::set<Key> touched;
    std::optional<Tick> blocked_since;
    std::optional<std::pair<Key, bool>> waiting_for;  // (key, exclusive)
  };

  TxnCtx& ctx(TxnId txn);
  const TxnCtx& ctx(TxnId txn) const;
  bool try_lock(TxnId txn, Key key, bool exclusive);
  std::vector<TxnId> lock_conflicts(TxnId txn, Key key, bool exclusive) const;
  std::optional<TxnId> deadlock_victim(TxnId start) const;
  void release_all(TxnId txn);
  void finish(TxnId txn, TxnStatus status, AbortReason reason);
  void touch(TxnId txn, Key key);
  std::uint64_t touchers_excluding(Key key, TxnId txn) const;

  EngineConfig config_;
  Tick clock_ = 0;
  TxnId next_txn_ = 1;
  std::unordered_map<Key, Record> store_;
  std::map<Key, LockState> locks_;
  std::map<TxnId, TxnCtx> txns_;
  std::unordered_map<Key, std::uint64_t> touchers_;
  std::unordered_map<Key, std::uint64_t> access_counts_;
  std::unordered_set<Key> hot_;
  std::shared_ptr<recovery::RedoLog> log_;
  std::uint64_t repairs_ = 0;
  std::uint64_t repaired_replay_ = 0;
  std::uint64_t window_counter_ = 0;
};

const char* to_string(CCAction action) noexcept;

}  // namespace frp::engine
