#pragma once

#include <cstdint>

namespace frp {

using Key = std::uint64_t;

/// A stored data item. `checksum` covers (key, value, version).
struct Record {
  Key key = 0;
  std::int64_t value = 0;
  std::uint64_t version = 0;
  std::uint64_t checksum = 0;

  friend bool operator==(const Record&, const Record&) = default;
};

std::uint64_t record_checksum(Key key, std::int64_t value, std::uint64_t version);

/// Record with a freshly computed checksum.
Record make_record(Key key, std::int64_t value, std::uint64_t version);

/// State of a key that has never been written.
inline Record initial_record(Key key) { return make_record(key, 0, 0); }

}  // namespace frp
