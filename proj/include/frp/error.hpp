#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace frp {

enum class ErrorKind {
  invalid_argument,
  infeasible_budget,
  unsupported_query,
  shape_mismatch,
  unknown_txn,
  unknown_relation,
  recovery_refused,
  txn_not_active,
  log_format,
  config,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Library-wide exception. `kind` lets the CLI map failures onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace frp
