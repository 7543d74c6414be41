#pragma once

// Tamper-evident redo log with periodic anchor entries.
//
// Every committed write appends one RedoEntry. When a key's modification
// counter reaches a multiple of the anchor interval n, an AnchorEntry carrying
// the full post-write item state follows it. Each transaction's entries are
// closed by a TxnSeal: a digest chained over the previous seal, signed with a
// MAC key that only EnclaveSim holds. Recovery of a key starts at its most
// recent anchor and replays at most n-1 later redo entries.

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <variant>
#include <vector>

#include "frp/digest.hpp"
#include "frp/record.hpp"

namespace frp::recovery {

using Lsn = std::uint64_t;
using TxnId = std::uint64_t;

struct RedoEntry {
  Lsn lsn = 0;
  TxnId txn_id = 0;
  Key key = 0;
  std::int64_t new_value = 0;
  std::uint64_t mod_index = 0;

  friend bool operator==(const RedoEntry&, const RedoEntry&) = default;
};

struct AnchorEntry {
  Lsn lsn = 0;
  TxnId txn_id = 0;
  Key key = 0;
  std::int64_t full_value = 0;
  std::uint64_t full_version = 0;
  std::uint64_t mod_index = 0;

  friend bool operator==(const AnchorEntry&, const AnchorEntry&) = default;
};

/// Covers the entries in [first_lsn, last_lsn]. A transaction that wrote
/// nothing gets an empty range, encoded as first_lsn == last_lsn == lsn.
struct TxnSeal {
  Lsn lsn = 0;
  TxnId txn_id = 0;
  Lsn first_lsn = 0;
  Lsn last_lsn = 0;
  Digest digest{};
  Digest signature{};

  bool empty_range() const noexcept { return first_lsn == lsn; }

  friend bool operator==(const TxnSeal&, const TxnSeal&) = default;
};

using LogEntry = std::variant<RedoEntry, AnchorEntry, TxnSeal>;

Lsn entry_lsn(const LogEntry& e) noexcept;

/// Stand-in for a trusted execution environment: the MAC key lives only here
/// and there is no API that exports it. It also keeps the trusted head of the
/// seal chain so truncation of whole transactions at the tail is detectable.
class EnclaveSim {
 public:
  explicit EnclaveSim(std::uint64_t key_seed);

  EnclaveSim(const EnclaveSim&) = delete;
  EnclaveSim& operator=(const EnclaveSim&) = delete;

  Digest sign(const Digest& digest) const;
  bool verify(const Digest& digest, const Digest& signature) const;

  void record_head(Lsn seal_lsn, const Digest& digest);
  std::optional<std::pair<Lsn, Digest>> head() const { return head_; }

 private:
  std::array<std::uint8_t, 32> mac_key_{};
  std::optional<std::pair<Lsn, Digest>> head_;
};

struct RecoveryResult {
  Record record;
  std::size_t replayed = 0;            // redo entries applied after the anchor
  std::optional<Lsn> anchor_lsn;       // empty when replay started from the initial state
};

struct LogStats {
  std::size_t redo = 0;
  std::size_t anchors = 0;
  std::size_t seals = 0;
};

class RedoLog {
 public:
  static constexpr std::uint16_t kFormatVersion = 1;
  static constexpr std::array<std::uint8_t, 4> kMagic{'F', 'R', 'P', 'L'};

  /// `anchor_interval` is n; must be >= 1.
  RedoLog(std::uint32_t anchor_interval, std::shared_ptr<EnclaveSim> enclave);

  std::uint32_t anchor_interval() const noexcept { return anchor_interval_; }

  /// Opens a transaction's contiguous entry range. Only one may be open.
  void begin_txn(TxnId txn);

  /// Appends a redo entry (and an anchor when the key's modification counter
  /// becomes a multiple of n). Returns the redo entry's lsn.
  Lsn append_redo(TxnId txn, Key key, std::int64_t new_value);

  /// Closes the open transaction with a signed, chained digest.
  TxnSeal seal_txn(TxnId txn);

  /// True iff the stored record's checksum is wrong or its version disagrees
  /// with the latest sealed modification counter for the key.
  bool detect_tamper(Key key, const Record& stored) const;

  /// Rebuilds the last committed state of `key` from its latest anchor.
  /// Throws recovery_refused if any seal covering the replayed entries fails.
  RecoveryResult recover(Key key) const;

  /// Whole-log check: gap-free monotone lsns from 0, every seal verifies,
  /// every data entry is covered by its transaction's seal, anchors sit
  /// exactly at multiples of n, and the tail matches the enclave's head.
  bool verify_log() const;

  /// Checks only seals whose lsn falls in [first, last] plus lsn continuity there.
  bool verify_log(Lsn first, Lsn last) const;

  /// Modification counter of `key` as recorded by the log (0 if never written).
  std::uint64_t mod_index(Key key) const;

  const std::vector<LogEntry>& entries() const noexcept { return entries_; }
  LogStats stats() const;

  /// Direct access to stored entries, used to inject log tampering.
  std::vector<LogEntry>& tamper_entries() noexcept { return entries_; }

  std::vector<std::uint8_t> serialize() const;
  /// Throws log_format on malformed input. The in-memory counter index is
  /// rebuilt from the parsed entries.
  static RedoLog deserialize(std::span<const std::uint8_t> bytes,
                             std::shared_ptr<EnclaveSim> enclave);

  void save(const std::filesystem::path& path) const;
  static RedoLog load(const std::filesystem::path& path, std::shared_ptr<EnclaveSim> enclave);

 private:
  Digest genesis() const;
  Lsn next_lsn() const noexcept { return entries_.size(); }
  bool verify_seal_at(std::size_t pos) const;
  bool verify_seal_range(std::size_t pos, std::size_t first_pos, const Digest& prev) const;
  std::optional<std::size_t> covering_seal(std::size_t pos) const;

  std::uint32_t anchor_interval_;
  std::shared_ptr<EnclaveSim> enclave_;
  std::vector<LogEntry> entries_;
  std::unordered_map<Key, std::uint64_t> mods_;
  std::optional<TxnId> open_txn_;
  std::size_t open_first_pos_ = 0;
  Digest last_digest_{};
};

/// Payload bytes of one entry (type tag + fields), as hashed and stored.
std::vector<std::uint8_t> encode_entry(const LogEntry& e);

}  // namespace frp::recovery
