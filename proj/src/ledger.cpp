#include "meunet/ledger.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "meunet/checkpoint.hpp"

namespace meunet {

LedgerConfig LedgerConfig::unet(const UNetConfig& net, std::size_t P, std::size_t N) {
  LedgerConfig c;
  c.net = net;
  c.P = P;
  c.N = N;
  return c;
}

LedgerConfig LedgerConfig::meunet(const UNetConfig& net, std::size_t P, std::size_t E, std::size_t N) {
  LedgerConfig c = unet(net, P, N);
  c.E = E;
  return c;
}

void LedgerConfig::validate() const {
  net.validate();
  if (P == 0) throw ConfigError("ledger: P must be positive");
  if (N == 0) throw ConfigError("ledger: batch size must be positive");
  if (bytes == 0) throw ConfigError("ledger: bytes per element must be positive");
  net.check_extents({P, P, P});
  if (E) {
    if (*E < P) throw ConfigError("ledger: E=" + std::to_string(*E) + " smaller than P=" + std::to_string(P));
    net.check_extents({*E, *E, *E});
    if (truncate_exp && !net.aux_head_levels.contains(2))
      throw ConfigError("ledger: truncated expanded pass needs a level-2 head");
  }
  for (auto l : gated_levels)
    if (l < 1 || l > net.levels)
      throw ConfigError("ledger: gated level " + std::to_string(l) + " outside [1, " + std::to_string(net.levels) +
                        "]");
}

namespace {

UNetConfig net_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "desk") return UNetConfig::desk();
    if (s == "desk_meunet") return UNetConfig::desk_meunet();
    if (s == "paper") return UNetConfig::paper();
    if (s == "paper_meunet") return UNetConfig::paper_meunet();
    throw ConfigError("ledger: unknown network preset '" + s + "'");
  }
  return config_from_json(j);
}

}  // namespace

nlohmann::json LedgerConfig::to_json() const {
  nlohmann::json j{{"net", config_to_json(net)},
                   {"P", P},
                   {"N", N},
                   {"bytes", bytes},
                   {"mixed_precision", mixed_precision},
                   {"gate_level1_exp", gate_level1_exp},
                   {"checkpointing", checkpointing},
                   {"truncate_exp", truncate_exp},
                   {"gated_levels", gated_levels}};
  if (E) j["E"] = *E;
  return j;
}

LedgerConfig LedgerConfig::from_json(const nlohmann::json& j) {
  LedgerConfig c;
  try {
    if (j.contains("net")) c.net = net_from_json(j.at("net"));
    c.P = j.value("P", c.P);
    if (j.contains("E") && !j.at("E").is_null()) c.E = j.at("E").get<std::size_t>();
    c.N = j.value("N", c.N);
    c.bytes = j.value("bytes", c.bytes);
    c.mixed_precision = j.value("mixed_precision", c.mixed_precision);
    c.gate_level1_exp = j.value("gate_level1_exp", c.gate_level1_exp);
    c.checkpointing = j.value("checkpointing", c.checkpointing);
    c.truncate_exp = j.value("truncate_exp", c.truncate_exp);
    if (j.contains("gated_levels")) c.gated_levels = j.at("gated_levels").get<std::set<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("ledger config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

void add_pass(std::vector<ModeledTensor>& out, const LedgerConfig& c, std::size_t edge, const std::string& pass,
              bool gate1, bool truncate, const std::set<std::size_t>& heads) {
  const UNetConfig& net = c.net;
  const std::size_t L = net.levels;
  auto vox = [&](std::size_t l) {
    const std::uint64_t e = edge >> (l - 1);
    return e * e * e * c.N;
  };
  auto grad_at = [&](std::size_t l) { return !c.gated_levels.contains(l); };
  auto add = [&](const std::string& seg, std::size_t l, const std::string& name, std::uint64_t elements, bool grad,
                 bool retained, bool boundary = false, bool skip = false) {
    out.push_back({pass, seg, l, name, elements, grad, retained, boundary, skip});
  };

  add("enc", 1, "input", net.encoder_input_channels(1) * vox(1), false, !gate1, true);
  for (std::size_t l = 1; l <= L; ++l) {
    const bool off = gate1 && l == 1;
    const bool g = !off && grad_at(l);
    const std::uint64_t n = net.encoder_channels[l - 1] * vox(l);
    for (int i = 0; i < 2; ++i) {
      add("enc", l, "conv" + std::to_string(i), n, g, !off);
      add("enc", l, "bn" + std::to_string(i), n, g, !off);
      add("enc", l, "relu" + std::to_string(i), n, g, !off, i == 1, i == 1 && l < L && !off);
    }
    if (l < L) add("enc", l, "pool", net.encoder_channels[l - 1] * vox(l + 1), g, true, true);
  }
  const std::size_t lowest = truncate ? 2 : 1;
  for (std::size_t l = L - 1; l >= lowest; --l) {
    const bool g = grad_at(l);
    add("dec", l, "up", net.upsampled_channels(l) * vox(l), g, true);
    if (net.postconcat) add("dec", l, "guidance", net.num_classes * vox(l), false, true);
    add("dec", l, "concat", net.decoder_input_channels(l) * vox(l), g, true);
    const std::uint64_t n = net.decoder_channels[l - 1] * vox(l);
    for (int i = 0; i < 2; ++i) {
      add("dec", l, "conv" + std::to_string(i), n, g, true);
      add("dec", l, "bn" + std::to_string(i), n, g, true);
      add("dec", l, "relu" + std::to_string(i), n, g, true, i == 1);
    }
  }
  for (auto h : heads) {
    const bool g = grad_at(h);
    const std::uint64_t n = net.num_classes * vox(h);
    add("head", h, "logits", n, g, true, true);
    add("head", h, "probs", n, g, true);
    add("head", h, "one_hot", n, false, true);
    add("head", h, "dice_product", n, g, true);
  }
}

}  // namespace

std::vector<ModeledTensor> modeled_tensors(const LedgerConfig& config) {
  config.validate();
  std::vector<ModeledTensor> out;
  add_pass(out, config, config.P, "std", false, false, {1});
  if (config.E) {
    const std::set<std::size_t> heads = config.truncate_exp ? std::set<std::size_t>{2} : std::set<std::size_t>{1, 2};
    add_pass(out, config, *config.E, "exp", config.gate_level1_exp, config.truncate_exp, heads);
  }
  return out;
}

std::uint64_t parameter_count(const UNetConfig& net) {
  net.validate();
  auto conv = [](std::uint64_t cin, std::uint64_t cout) { return 27 * cin * cout + cout; };
  std::uint64_t n = 0;
  for (std::size_t l = 1; l <= net.levels; ++l) {
    const std::uint64_t c = net.encoder_channels[l - 1];
    n += conv(net.encoder_input_channels(l), c) + conv(c, c) + 4 * c;
  }
  for (std::size_t l = 1; l < net.levels; ++l) {
    const std::uint64_t c = net.decoder_channels[l - 1];
    n += conv(net.decoder_input_channels(l), c) + conv(c, c) + 4 * c;
  }
  n += conv(net.decoder_channels[0], net.num_classes);
  for (auto l : net.aux_head_levels) n += conv(net.decoder_channels[l - 1], net.num_classes);
  return n;
}

MemoryReport estimate(const LedgerConfig& config) {
  const auto tensors = modeled_tensors(config);
  const std::uint64_t b = config.element_bytes();
  MemoryReport report;
  std::map<std::pair<std::string, std::size_t>, MemoryRow> rows;
  auto row = [&](const ModeledTensor& t) -> MemoryRow& {
    auto& r = rows[{t.pass, t.level}];
    r.pass = t.pass;
    r.level = t.level;
    return r;
  };

  if (!config.checkpointing) {
    for (const auto& t : tensors) {
      if (!t.retained) continue;
      auto& r = row(t);
      r.act_bytes += t.elements * b;
      if (t.grad) r.grad_bytes += t.elements * b;
    }
  } else {
    struct Segment {
      std::uint64_t act = 0, grad = 0;
    };
    std::map<std::tuple<std::string, std::string, std::size_t>, Segment> segments;
    MemoryRow peak{"peak", 0, 0, 0};
    for (const auto& t : tensors) {
      if (!t.retained) continue;
      if (t.boundary) {
        auto& r = row(t);
        r.act_bytes += t.elements * b;
        if (t.grad && t.skip) r.grad_bytes += t.elements * b;
      }
      auto& s = segments[{t.pass, t.segment, t.level}];
      if (!t.boundary) {
        s.act += t.elements * b;
        if (t.grad) s.grad += t.elements * b;
      } else if (t.grad && !t.skip) {
        s.grad += t.elements * b;
      }
    }
    for (const auto& [key, s] : segments) {
      if (s.act + s.grad > peak.total()) peak = {"peak", std::get<2>(key), s.act, s.grad};
    }
    // no-grad work is freed as it goes: at most an input and an output at once
    std::uint64_t largest = 0;
    std::size_t largest_level = 0;
    for (const auto& t : tensors)
      if (!t.retained && t.elements > largest) {
        largest = t.elements;
        largest_level = t.level;
      }
    if (2 * largest * b > peak.total()) peak = {"peak", largest_level, 2 * largest * b, 0};
    rows[{"~peak", 0}] = peak;
  }
  for (auto& [key, r] : rows) report.rows.push_back(r);

  const std::uint64_t params = parameter_count(config.net) * config.bytes;
  report.rows.push_back({"params", 0, params, params});
  report.rows.push_back({"adam", 0, 2 * params, 0});
  return report;
}

std::uint64_t MemoryReport::activation_bytes() const {
  std::uint64_t s = 0;
  for (const auto& r : rows) s += r.act_bytes;
  return s;
}

std::uint64_t MemoryReport::gradient_bytes() const {
  std::uint64_t s = 0;
  for (const auto& r : rows) s += r.grad_bytes;
  return s;
}

std::uint64_t MemoryReport::graph_bytes() const {
  std::uint64_t s = 0;
  for (const auto& r : rows)
    if (r.pass != "adam") s += r.total();
  return s;
}

nlohmann::json MemoryReport::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows)
    rs.push_back({{"pass", r.pass}, {"level", r.level}, {"act_bytes", r.act_bytes}, {"grad_bytes", r.grad_bytes}});
  return {{"rows", rs},
          {"activation_bytes", activation_bytes()},
          {"gradient_bytes", gradient_bytes()},
          {"grand_total", grand_total()}};
}

namespace {

std::string human(double bytes) {
  const char* units[] = {"B", "KiB", "MiB", "GiB", "TiB"};
  int u = 0;
  while (bytes >= 1024 && u < 4) {
    bytes /= 1024;
    ++u;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f %s", bytes, units[u]);
  return buf;
}

std::string line(const char* fmt, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

}  // namespace

std::string MemoryReport::table() const {
  std::string s = line("%-8s %5s %16s %16s %12s\n", "pass", "level", "act_bytes", "grad_bytes", "total");
  for (const auto& r : rows)
    s += line("%-8s %5zu %16llu %16llu %12s\n", r.pass.c_str(), r.level, static_cast<unsigned long long>(r.act_bytes),
              static_cast<unsigned long long>(r.grad_bytes), human(static_cast<double>(r.total())).c_str());
  s += line("%-8s %5s %16llu %16llu %12s\n", "total", "", static_cast<unsigned long long>(activation_bytes()),
            static_cast<unsigned long long>(gradient_bytes()), human(static_cast<double>(grand_total())).c_str());
  return s;
}

Comparison compare(const MemoryReport& a, const MemoryReport& b) {
  if (b.grand_total() == 0) throw ConfigError("compare: reference report totals zero bytes");
  Comparison c;
  c.ratio = static_cast<double>(a.grand_total()) / static_cast<double>(b.grand_total());
  std::map<std::pair<std::string, std::size_t>, LevelDelta> m;
  auto fold = [&](const MemoryReport& r, bool first) {
    for (const auto& row : r.rows) {
      auto& d = m[{row.pass, row.level}];
      d.pass = row.pass;
      d.level = row.level;
      (first ? d.a_bytes : d.b_bytes) += static_cast<std::int64_t>(row.total());
    }
  };
  fold(a, true);
  fold(b, false);
  for (auto& [k, d] : m) c.deltas.push_back(d);
  return c;
}

nlohmann::json Comparison::to_json() const {
  nlohmann::json ds = nlohmann::json::array();
  for (const auto& d : deltas)
    ds.push_back({{"pass", d.pass}, {"level", d.level}, {"a_bytes", d.a_bytes}, {"b_bytes", d.b_bytes},
                  {"delta", d.delta()}});
  return {{"ratio", ratio}, {"deltas", ds}};
}

std::string Comparison::table() const {
  std::string s = line("%-8s %5s %16s %16s %17s\n", "pass", "level", "a_bytes", "b_bytes", "delta");
  for (const auto& d : deltas)
    s += line("%-8s %5zu %16lld %16lld %+17lld\n", d.pass.c_str(), d.level, static_cast<long long>(d.a_bytes),
              static_cast<long long>(d.b_bytes), static_cast<long long>(d.delta()));
  s += line("ratio %.4f\n", ratio);
  return s;
}

}  // namespace meunet
