#include "frp/digest.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <algorithm>

#include "frp/error.hpp"
#include "frp/record.hpp"

namespace frp {

Digest sha256(std::span<const std::uint8_t> data) {
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size())
    throw std::runtime_error("sha256 failed");
  return out;
}

Digest hmac_sha256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> data) {
  Digest out{};
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(),
           out.data(), &len) == nullptr ||
      len != out.size())
    throw std::runtime_error("hmac-sha256 failed");
  return out;
}

bool digest_equal(const Digest& a, const Digest& b) noexcept {
  std::uint8_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff |= a[i] ^ b[i];
  return diff == 0;
}

void ByteReader::bytes(std::span<std::uint8_t> out) {
  if (!ok_ || remaining() < out.size()) {
    ok_ = false;
    std::fill(out.begin(), out.end(), 0);
    return;
  }
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(pos_), out.size(), out.begin());
  pos_ += out.size();
}

std::uint64_t ByteReader::get(int n) {
  if (!ok_ || remaining() < static_cast<std::size_t>(n)) {
    ok_ = false;
    return 0;
  }
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += static_cast<std::size_t>(n);
  return v;
}

std::uint64_t record_checksum(Key key, std::int64_t value, std::uint64_t version) {
  ByteWriter w;
  w.u64(key);
  w.i64(value);
  w.u64(version);
  const Digest d = sha256(w.data());
  std::uint64_t c = 0;
  for (int i = 0; i < 8; ++i) c |= static_cast<std::uint64_t>(d[i]) << (8 * i);
  return c;
}

Record make_record(Key key, std::int64_t value, std::uint64_t version) {
  return Record{key, value, version, record_checksum(key, value, version)};
}

}  // namespace frp
