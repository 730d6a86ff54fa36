#pragma once

#include <stdexcept>

namespace meunet {

// Invalid configuration: network, plan, run or ledger settings.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent data on disk or in memory.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace meunet
