#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "meunet/unet.hpp"

namespace meunet {

struct LedgerConfig {
  UNetConfig net = UNetConfig::desk();
  std::size_t P = 32;
  std::optional<std::size_t> E;  // expanded edge; set for a dual-patch meU-net step
  std::size_t N = 1;
  std::size_t bytes = 4;          // per activation / gradient element
  bool mixed_precision = false;   // activations and their gradients at 2 bytes
  bool gate_level1_exp = true;    // expanded pass runs level 1 without gradients
  bool checkpointing = false;     // keep level boundaries only, recompute one level at a time
  bool truncate_exp = true;       // expanded decoder stops at level 2
  std::set<std::size_t> gated_levels;  // levels whose tensors get no gradient maps, in every pass

  static LedgerConfig unet(const UNetConfig& net, std::size_t P, std::size_t N = 1);
  static LedgerConfig meunet(const UNetConfig& net, std::size_t P, std::size_t E, std::size_t N = 1);

  std::size_t element_bytes() const { return mixed_precision ? 2 : bytes; }
  void validate() const;

  nlohmann::json to_json() const;
  static LedgerConfig from_json(const nlohmann::json& j);
};

// One tensor the modeled training step produces.
struct ModeledTensor {
  std::string pass;     // "std" or "exp"
  std::string segment;  // "enc", "dec" or "head"
  std::size_t level = 0;
  std::string name;
  std::uint64_t elements = 0;
  bool grad = false;      // backward allocates a gradient map for it
  bool retained = true;   // alive until backward; false for no-grad work freed during forward
  bool boundary = false;  // input, level outputs, pool outputs, logits
  bool skip = false;      // encoder output consumed by the decoder
};

/// The tensors of one training step in forward order: the standard pass,
/// then the expanded pass when E is set.
std::vector<ModeledTensor> modeled_tensors(const LedgerConfig& config);

std::uint64_t parameter_count(const UNetConfig& net);

struct MemoryRow {
  std::string pass;  // "std", "exp", "peak", "params", "adam"
  std::size_t level = 0;
  std::uint64_t act_bytes = 0;
  std::uint64_t grad_bytes = 0;
  std::uint64_t total() const { return act_bytes + grad_bytes; }
};

/// Without checkpointing every retained tensor counts with its gradient.
/// With checkpointing the rows hold boundary activations and the skip
/// gradients that wait for the encoder backward; one "peak" row adds the
/// largest single-level recompute (interior activations and gradients) or
/// the transient of a gated level, whichever is bigger.
struct MemoryReport {
  std::vector<MemoryRow> rows;

  std::uint64_t activation_bytes() const;
  std::uint64_t gradient_bytes() const;
  std::uint64_t grand_total() const { return activation_bytes() + gradient_bytes(); }
  // Everything except the Adam moments, for comparison with a graph census.
  std::uint64_t graph_bytes() const;

  nlohmann::json to_json() const;
  std::string table() const;
};

MemoryReport estimate(const LedgerConfig& config);

struct LevelDelta {
  std::string pass;
  std::size_t level = 0;
  std::int64_t a_bytes = 0;
  std::int64_t b_bytes = 0;
  std::int64_t delta() const { return a_bytes - b_bytes; }
};

struct Comparison {
  double ratio = 0;  // grand_total(a) / grand_total(b)
  std::vector<LevelDelta> deltas;

  nlohmann::json to_json() const;
  std::string table() const;
};

Comparison compare(const MemoryReport& a, const MemoryReport& b);

}  // namespace meunet
