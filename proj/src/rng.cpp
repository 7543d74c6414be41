#include "frp/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "frp/error.hpp"

namespace frp {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::infeasible_budget: return "infeasible_budget";
    case ErrorKind::unsupported_query: return "unsupported_query";
    case ErrorKind::shape_mismatch: return "shape_mismatch";
    case ErrorKind::unknown_txn: return "unknown_txn";
    case ErrorKind::unknown_relation: return "unknown_relation";
    case ErrorKind::recovery_refused: return "recovery_refused";
    case ErrorKind::txn_not_active: return "txn_not_active";
    case ErrorKind::log_format: return "log_format";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

namespace {

double box_muller(double u1, double u2) noexcept {
  // u1 in (0,1] avoids log(0).
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

double Rng::normal() noexcept {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return box_muller(u1, u2);
}

double normal_from_bits(std::uint64_t bits) noexcept {
  const double u1 = 1.0 - unit_from_bits(mix64(bits));
  const double u2 = unit_from_bits(mix64(bits ^ 0x5bd1e9955bd1e995ULL));
  return box_muller(u1, u2);
}

ZipfSampler::ZipfSampler(std::uint64_t n, double theta) : theta_(theta) {
  if (n == 0) throw Error(ErrorKind::invalid_argument, "zipf: key space must be non-empty");
  if (theta < 0) throw Error(ErrorKind::invalid_argument, "zipf: theta must be >= 0");
  cdf_.resize(n);
  double sum = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    sum += 1.0 / std::pow(static_cast<double>(i + 1), theta);
    cdf_[i] = sum;
  }
  for (auto& c : cdf_) c /= sum;
  cdf_.back() = 1.0;
}

std::uint64_t ZipfSampler::operator()(Rng& rng) const {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return static_cast<std::uint64_t>(std::min<std::ptrdiff_t>(it - cdf_.begin(), cdf_.size() - 1));
}

}  // namespace frp
