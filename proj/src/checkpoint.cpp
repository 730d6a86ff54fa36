#include "meunet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

namespace meunet {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

void write_blob(const std::filesystem::path& path, std::span<const double> v) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!out) throw DataError("cannot write " + path.string());
}

std::vector<double> read_blob(const std::filesystem::path& path, std::size_t count) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw DataError("checkpoint blob missing: " + path.string());
  if (size != count * sizeof(double)) {
    throw DataError(path.string() + ": length mismatch, expected " + std::to_string(count * sizeof(double)) +
                    " bytes, got " + std::to_string(size));
  }
  std::vector<double> v(count);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(size));
  if (!in) throw DataError("short read from " + path.string());
  return v;
}

json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("checkpoint manifest missing: " + (dir / "manifest.json").string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("bad checkpoint manifest in " + dir.string() + ": " + e.what());
  }
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) { EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr); }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  void update_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<char> buf(1 << 16);
    while (in) {
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    static const char* digits = "0123456789abcdef";
    std::string s;
    for (unsigned i = 0; i < len; ++i) {
      s += digits[md[i] >> 4];
      s += digits[md[i] & 15];
    }
    return s;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

json config_to_json(const UNetConfig& c) {
  return json{{"levels", c.levels},
              {"encoder_channels", c.encoder_channels},
              {"decoder_channels", c.decoder_channels},
              {"in_channels", c.in_channels},
              {"num_classes", c.num_classes},
              {"aux_head_levels", c.aux_head_levels},
              {"postconcat", c.postconcat},
              {"preconcat", c.preconcat}};
}

UNetConfig config_from_json(const json& j) {
  UNetConfig c;
  try {
    c.levels = j.value("levels", c.levels);
    c.encoder_channels = j.value("encoder_channels", c.encoder_channels);
    c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.aux_head_levels = j.value("aux_head_levels", c.aux_head_levels);
    c.postconcat = j.value("postconcat", c.postconcat);
    c.preconcat = j.value("preconcat", c.preconcat);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("network config: ") + e.what());
  }
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& dir, UNet& net, const json& extra) {
  std::filesystem::create_directories(dir);
  json entries = json::array();
  for (const auto& p : net.parameters()) {
    const std::string file = p.name + ".bin";
    write_blob(dir / file, p.value.values());
    entries.push_back({{"name", p.name}, {"kind", "parameter"}, {"shape", p.value.shape()}, {"dtype", "f64"}, {"file", file}});
  }
  for (const auto& b : net.buffers()) {
    const std::string file = b.name + ".bin";
    write_blob(dir / file, *b.values);
    entries.push_back(
        {{"name", b.name}, {"kind", "buffer"}, {"shape", {b.values->size()}}, {"dtype", "f64"}, {"file", file}});
  }
  json m{{"format", "meunet-checkpoint"}, {"version", 1}, {"config", config_to_json(net.config())}, {"entries", entries}};
  if (!extra.is_null()) m["meta"] = extra;
  std::ofstream out(dir / "manifest.json");
  out << m.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
}

UNet load_checkpoint(const std::filesystem::path& dir) {
  const json m = read_manifest(dir);
  if (!m.contains("config") || !m.contains("entries")) throw DataError(dir.string() + ": manifest lacks config/entries");
  UNet net = UNet::build(config_from_json(m.at("config")), 0);
  std::map<std::string, json> by_name;
  for (const auto& e : m.at("entries")) by_name[e.at("name").get<std::string>()] = e;
  auto fetch = [&](const std::string& name, std::size_t count) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(dir.string() + ": checkpoint has no entry " + name);
    if (it->second.value("dtype", "") != "f64") throw DataError(dir.string() + ": " + name + " is not f64");
    return read_blob(dir / it->second.at("file").get<std::string>(), count);
  };
  for (auto& p : net.parameters()) {
    auto v = fetch(p.name, p.value.numel());
    auto dst = p.value.mutable_values();
    std::copy(v.begin(), v.end(), dst.begin());
  }
  for (auto& b : net.buffers()) *b.values = fetch(b.name, b.values->size());
  // Running statistics on disk are by definition initialized.
  for (std::size_t l = 1; l <= net.config().levels; ++l)
    for (std::size_t i = 0; i < 2; ++i) net.encoder_block(l, i).norm.initialized = true;
  for (std::size_t l = 1; l < net.config().levels; ++l)
    for (std::size_t i = 0; i < 2; ++i) net.decoder_block(l, i).norm.initialized = true;
  return net;
}

json checkpoint_meta(const std::filesystem::path& dir) { return read_manifest(dir).value("meta", json::object()); }

std::string checkpoint_digest(const std::filesystem::path& dir) {
  const json m = read_manifest(dir);
  Sha256 h;
  h.update_file(dir / "manifest.json");
  for (const auto& e : m.at("entries")) h.update_file(dir / e.at("file").get<std::string>());
  return h.hex();
}

std::string sha256_hex(const void* data, std::size_t size) {
  Sha256 h;
  h.update(data, size);
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  Sha256 h;
  h.update_file(path);
  return h.hex();
}

}  // namespace meunet
