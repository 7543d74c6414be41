#include "frp/recovery.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <set>

#include "frp/error.hpp"
#include "frp/rng.hpp"

namespace frp::recovery {

namespace {

constexpr std::uint8_t kTagRedo = 1;
constexpr std::uint8_t kTagAnchor = 2;
constexpr std::uint8_t kTagSeal = 3;

constexpr std::uint32_t kRedoSize = 1 + 5 * 8;
constexpr std::uint32_t kAnchorSize = 1 + 6 * 8;
constexpr std::uint32_t kSealSize = 1 + 4 * 8 + 2 * 32;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void write_entry(ByteWriter& w, const LogEntry& e) {
  std::visit(overloaded{
                 [&](const RedoEntry& r) {
                   w.u8(kTagRedo);
                   w.u64(r.lsn);
                   w.u64(r.txn_id);
                   w.u64(r.key);
                   w.i64(r.new_value);
                   w.u64(r.mod_index);
                 },
                 [&](const AnchorEntry& a) {
                   w.u8(kTagAnchor);
                   w.u64(a.lsn);
                   w.u64(a.txn_id);
                   w.u64(a.key);
                   w.i64(a.full_value);
                   w.u64(a.full_version);
                   w.u64(a.mod_index);
                 },
                 [&](const TxnSeal& s) {
                   w.u8(kTagSeal);
                   w.u64(s.lsn);
                   w.u64(s.txn_id);
                   w.u64(s.first_lsn);
                   w.u64(s.last_lsn);
                   w.bytes(s.digest);
                   w.bytes(s.signature);
                 },
             },
             e);
}

std::optional<LogEntry> read_entry(std::span<const std::uint8_t> payload) {
  if (payload.empty()) return std::nullopt;
  ByteReader r(payload);
  const std::uint8_t tag = r.u8();
  std::optional<LogEntry> out;
  switch (tag) {
    case kTagRedo: {
      if (payload.size() != kRedoSize) return std::nullopt;
      RedoEntry e;
      e.lsn = r.u64();
      e.txn_id = r.u64();
      e.key = r.u64();
      e.new_value = r.i64();
      e.mod_index = r.u64();
      out = e;
      break;
    }
    case kTagAnchor: {
      if (payload.size() != kAnchorSize) return std::nullopt;
      AnchorEntry e;
      e.lsn = r.u64();
      e.txn_id = r.u64();
      e.key = r.u64();
      e.full_value = r.i64();
      e.full_version = r.u64();
      e.mod_index = r.u64();
      out = e;
      break;
    }
    case kTagSeal: {
      if (payload.size() != kSealSize) return std::nullopt;
      TxnSeal e;
      e.lsn = r.u64();
      e.txn_id = r.u64();
      e.first_lsn = r.u64();
      e.last_lsn = r.u64();
      r.bytes(e.digest);
      r.bytes(e.signature);
      out = e;
      break;
    }
    default:
      return std::nullopt;
  }
  if (!r.ok() || r.remaining() != 0) return std::nullopt;
  return out;
}

std::vector<std::uint8_t> header_bytes(std::uint32_t n) {
  ByteWriter w;
  w.bytes(RedoLog::kMagic);
  w.u16(RedoLog::kFormatVersion);
  w.u16(kDigestSha256HmacSha256);
  w.u32(n);
  return std::move(w).take();
}

TxnId entry_txn(const LogEntry& e) {
  return std::visit([](const auto& x) { return x.txn_id; }, e);
}

Digest seal_digest(const Digest& prev, TxnId txn, Lsn first, Lsn last,
                   std::span<const LogEntry> covered) {
  ByteWriter w;
  w.bytes(prev);
  w.u64(txn);
  w.u64(first);
  w.u64(last);
  for (const auto& e : covered) write_entry(w, e);
  return sha256(w.data());
}

}  // namespace

Lsn entry_lsn(const LogEntry& e) noexcept {
  return std::visit([](const auto& x) { return x.lsn; }, e);
}

std::vector<std::uint8_t> encode_entry(const LogEntry& e) {
  ByteWriter w;
  write_entry(w, e);
  return std::move(w).take();
}

EnclaveSim::EnclaveSim(std::uint64_t key_seed) {
  Rng rng = Rng::derive(key_seed, "enclave-mac-key");
  for (std::size_t i = 0; i < mac_key_.size(); i += 8) {
    const std::uint64_t v = rng.next();
    for (std::size_t b = 0; b < 8; ++b) mac_key_[i + b] = static_cast<std::uint8_t>(v >> (8 * b));
  }
}

Digest EnclaveSim::sign(const Digest& digest) const { return hmac_sha256(mac_key_, digest); }

bool EnclaveSim::verify(const Digest& digest, const Digest& signature) const {
  return digest_equal(hmac_sha256(mac_key_, digest), signature);
}

void EnclaveSim::record_head(Lsn seal_lsn, const Digest& digest) { head_.emplace(seal_lsn, digest); }

RedoLog::RedoLog(std::uint32_t anchor_interval, std::shared_ptr<EnclaveSim> enclave)
    : anchor_interval_(anchor_interval), enclave_(std::move(enclave)) {
  if (anchor_interval_ == 0) throw Error(ErrorKind::invalid_argument, "anchor interval must be >= 1");
  if (!enclave_) throw Error(ErrorKind::invalid_argument, "redo log requires an enclave");
  last_digest_ = genesis();
}

Digest RedoLog::genesis() const { return sha256(header_bytes(anchor_interval_)); }

void RedoLog::begin_txn(TxnId txn) {
  if (open_txn_)
    throw Error(ErrorKind::invalid_argument,
                "redo log: transaction " + std::to_string(*open_txn_) + " is still open");
  open_txn_ = txn;
  open_first_pos_ = entries_.size();
}

Lsn RedoLog::append_redo(TxnId txn, Key key, std::int64_t new_value) {
  if (!open_txn_ || *open_txn_ != txn)
    throw Error(ErrorKind::unknown_txn, "redo log: transaction " + std::to_string(txn) + " not open");
  const std::uint64_t mod = ++mods_[key];
  const Lsn lsn = next_lsn();
  entries_.emplace_back(RedoEntry{lsn, txn, key, new_value, mod});
  if (mod % anchor_interval_ == 0)
    entries_.emplace_back(AnchorEntry{next_lsn(), txn, key, new_value, mod, mod});
  return lsn;
}

TxnSeal RedoLog::seal_txn(TxnId txn) {
  if (!open_txn_ || *open_txn_ != txn)
    throw Error(ErrorKind::unknown_txn, "redo log: cannot seal unknown transaction " + std::to_string(txn));
  TxnSeal seal;
  seal.lsn = next_lsn();
  seal.txn_id = txn;
  if (open_first_pos_ == entries_.size()) {
    seal.first_lsn = seal.last_lsn = seal.lsn;
  } else {
    seal.first_lsn = entry_lsn(entries_[open_first_pos_]);
    seal.last_lsn = seal.lsn - 1;
  }
  const std::span<const LogEntry> covered(entries_.data() + open_first_pos_,
                                          entries_.size() - open_first_pos_);
  seal.digest = seal_digest(last_digest_, txn, seal.first_lsn, seal.last_lsn, covered);
  seal.signature = enclave_->sign(seal.digest);
  entries_.emplace_back(seal);
  last_digest_ = seal.digest;
  enclave_->record_head(seal.lsn, seal.digest);
  open_txn_.reset();
  return seal;
}

std::uint64_t RedoLog::mod_index(Key key) const {
  const auto it = mods_.find(key);
  return it == mods_.end() ? 0 : it->second;
}

bool RedoLog::detect_tamper(Key key, const Record& stored) const {
  if (stored.key != key) return true;
  if (stored.checksum != record_checksum(stored.key, stored.value, stored.version)) return true;
  return stored.version != mod_index(key);
}

std::optional<std::size_t> RedoLog::covering_seal(std::size_t pos) const {
  for (std::size_t i = pos + 1; i < entries_.size(); ++i)
    if (std::holds_alternative<TxnSeal>(entries_[i])) return i;
  return std::nullopt;
}

bool RedoLog::verify_seal_at(std::size_t pos) const {
  std::size_t first_pos = 0;
  Digest prev = genesis();
  for (std::size_t i = pos; i-- > 0;) {
    if (const auto* p = std::get_if<TxnSeal>(&entries_[i])) {
      first_pos = i + 1;
      prev = p->digest;
      break;
    }
  }
  return verify_seal_range(pos, first_pos, prev);
}

bool RedoLog::verify_seal_range(std::size_t pos, std::size_t first_pos, const Digest& prev) const {
  const auto* seal = std::get_if<TxnSeal>(&entries_[pos]);
  if (seal == nullptr) return false;
  const std::span<const LogEntry> covered(entries_.data() + first_pos, pos - first_pos);
  if (covered.empty()) {
    if (seal->first_lsn != seal->lsn || seal->last_lsn != seal->lsn) return false;
  } else {
    if (seal->first_lsn != entry_lsn(covered.front())) return false;
    if (seal->last_lsn != entry_lsn(covered.back()) || seal->last_lsn + 1 != seal->lsn) return false;
    for (const auto& e : covered)
      if (entry_txn(e) != seal->txn_id) return false;
  }
  const Digest d = seal_digest(prev, seal->txn_id, seal->first_lsn, seal->last_lsn, covered);
  return digest_equal(d, seal->digest) && enclave_->verify(seal->digest, seal->signature);
}

RecoveryResult RedoLog::recover(Key key) const {
  std::vector<std::size_t> redo_pos;
  std::optional<std::size_t> anchor_pos;
  for (std::size_t i = entries_.size(); i-- > 0;) {
    if (const auto* a = std::get_if<AnchorEntry>(&entries_[i]); a && a->key == key) {
      anchor_pos = i;
      break;
    }
    if (const auto* r = std::get_if<RedoEntry>(&entries_[i]); r && r->key == key) redo_pos.push_back(i);
  }
  std::reverse(redo_pos.begin(), redo_pos.end());

  std::set<std::size_t> seals;
  auto need_seal = [&](std::size_t pos) {
    const auto s = covering_seal(pos);
    if (!s) throw Error(ErrorKind::recovery_refused, "recover: unsealed log entry at position " + std::to_string(pos));
    seals.insert(*s);
  };
  if (anchor_pos) need_seal(*anchor_pos);
  for (std::size_t p : redo_pos) need_seal(p);
  for (std::size_t s : seals)
    if (!verify_seal_at(s))
      throw Error(ErrorKind::recovery_refused, "recover: seal at position " + std::to_string(s) + " failed verification");

  RecoveryResult result;
  std::int64_t value = 0;
  std::uint64_t version = 0;
  if (anchor_pos) {
    const auto& a = std::get<AnchorEntry>(entries_[*anchor_pos]);
    value = a.full_value;
    version = a.full_version;
    result.anchor_lsn = a.lsn;
  }
  for (std::size_t p : redo_pos) {
    const auto& r = std::get<RedoEntry>(entries_[p]);
    value = r.new_value;
    version = r.mod_index;
    ++result.replayed;
  }
  result.record = make_record(key, value, version);
  return result;
}

bool RedoLog::verify_log() const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entry_lsn(entries_[i]) != i) return false;

  std::unordered_map<Key, std::uint64_t> mods;
  const RedoEntry* prev_redo = nullptr;
  std::optional<std::size_t> last_seal;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (const auto* r = std::get_if<RedoEntry>(&e)) {
      // A redo landing on a multiple of n must be followed by its anchor.
      if (prev_redo && prev_redo->mod_index % anchor_interval_ == 0) return false;
      if (r->mod_index != mods[r->key] + 1) return false;
      mods[r->key] = r->mod_index;
      prev_redo = r;
    } else if (const auto* a = std::get_if<AnchorEntry>(&e)) {
      if (!prev_redo || prev_redo->key != a->key || prev_redo->mod_index != a->mod_index ||
          prev_redo->new_value != a->full_value || a->full_version != a->mod_index ||
          prev_redo->txn_id != a->txn_id || a->mod_index % anchor_interval_ != 0)
        return false;
      prev_redo = nullptr;
    } else {
      if (prev_redo && prev_redo->mod_index % anchor_interval_ == 0) return false;
      prev_redo = nullptr;
      const std::size_t first_pos = last_seal ? *last_seal + 1 : 0;
      const Digest prev = last_seal ? std::get<TxnSeal>(entries_[*last_seal]).digest : genesis();
      if (!verify_seal_range(i, first_pos, prev)) return false;
      last_seal = i;
    }
  }
  if (prev_redo && prev_redo->mod_index % anchor_interval_ == 0) return false;

  // Entries after the last seal are only legitimate for the currently open txn.
  const std::size_t tail_begin = last_seal ? *last_seal + 1 : 0;
  for (std::size_t i = tail_begin; i < entries_.size(); ++i)
    if (!open_txn_ || i < open_first_pos_ || entry_txn(entries_[i]) != *open_txn_) return false;

  const auto head = enclave_->head();
  if (!last_seal) return !head.has_value();
  if (!head) return false;
  const auto& s = std::get<TxnSeal>(entries_[*last_seal]);
  return head->first == s.lsn && digest_equal(head->second, s.digest);
}

bool RedoLog::verify_log(Lsn first, Lsn last) const {
  std::optional<Lsn> prev;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const Lsn lsn = entry_lsn(entries_[i]);
    if (lsn < first || lsn > last) continue;
    if (lsn != i) return false;
    if (prev && lsn != *prev + 1) return false;
    prev = lsn;
    if (std::holds_alternative<TxnSeal>(entries_[i]) && !verify_seal_at(i)) return false;
  }
  return true;
}

LogStats RedoLog::stats() const {
  LogStats s;
  for (const auto& e : entries_) {
    if (std::holds_alternative<RedoEntry>(e)) ++s.redo;
    else if (std::holds_alternative<AnchorEntry>(e)) ++s.anchors;
    else ++s.seals;
  }
  return s;
}

std::vector<std::uint8_t> RedoLog::serialize() const {
  ByteWriter w;
  w.bytes(header_bytes(anchor_interval_));
  for (const auto& e : entries_) {
    const auto payload = encode_entry(e);
    w.u32(static_cast<std::uint32_t>(payload.size()));
    w.bytes(payload);
  }
  return std::move(w).take();
}

RedoLog RedoLog::deserialize(std::span<const std::uint8_t> bytes, std::shared_ptr<EnclaveSim> enclave) {
  ByteReader r(bytes);
  std::array<std::uint8_t, 4> magic{};
  r.bytes(magic);
  const std::uint16_t version = r.u16();
  const std::uint16_t alg = r.u16();
  const std::uint32_t n = r.u32();
  if (!r.ok() || magic != kMagic) throw Error(ErrorKind::log_format, "redo log: bad magic");
  if (version != kFormatVersion) throw Error(ErrorKind::log_format, "redo log: unsupported format version");
  if (alg != kDigestSha256HmacSha256) throw Error(ErrorKind::log_format, "redo log: unknown digest algorithm");
  if (n == 0) throw Error(ErrorKind::log_format, "redo log: anchor interval 0");

  RedoLog log(n, std::move(enclave));
  std::size_t offset = bytes.size() - r.remaining();
  while (offset < bytes.size()) {
    ByteReader lr(bytes.subspan(offset));
    const std::uint32_t len = lr.u32();
    if (!lr.ok() || lr.remaining() < len) throw Error(ErrorKind::log_format, "redo log: truncated entry");
    auto entry = read_entry(bytes.subspan(offset + 4, len));
    if (!entry) throw Error(ErrorKind::log_format, "redo log: malformed entry at byte " + std::to_string(offset));
    if (const auto* re = std::get_if<RedoEntry>(&*entry))
      log.mods_[re->key] = std::max(log.mods_[re->key], re->mod_index);
    if (const auto* s = std::get_if<TxnSeal>(&*entry)) log.last_digest_ = s->digest;
    log.entries_.push_back(*entry);
    offset += 4 + len;
  }
  return log;
}

void RedoLog::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::invalid_argument, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RedoLog RedoLog::load(const std::filesystem::path& path, std::shared_ptr<EnclaveSim> enclave) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::invalid_argument, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, std::move(enclave));
}

}  // namespace frp::recovery
