#include "meunet/volio.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace meunet {

namespace {

using nlohmann::json;

template <class T>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() {
  return "f32";
}
template <>
constexpr const char* dtype_name<std::uint8_t>() {
  return "u8";
}

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void to_little(std::vector<T>& v) {
  if constexpr (sizeof(T) > 1 && std::endian::native == std::endian::big) {
    for (auto& x : v) {
      auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(x);
      std::reverse(bytes.begin(), bytes.end());
      x = std::bit_cast<T>(bytes);
    }
  }
}

template <class T>
void write_grid(const std::filesystem::path& path, const Grid<T>& g) {
  if (g.values.size() != g.channels * g.voxels()) {
    throw DataError("write_volume " + path.string() + ": " + std::to_string(g.values.size()) +
                    " values for dims " + std::to_string(g.dims[0]) + "x" + std::to_string(g.dims[1]) + "x" +
                    std::to_string(g.dims[2]));
  }
  json h;
  h["dims"] = g.dims;
  h["dtype"] = dtype_name<T>();
  h["spacing_um"] = g.spacing_um;
  h["order"] = "zyx-row-major";
  h["endianness"] = "little";
  if (g.channels != 1) h["channels"] = g.channels;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream out(header_path(path));
    if (!out) throw DataError("cannot write " + header_path(path).string());
    out << h.dump(2) << '\n';
  }
  std::vector<T> data = g.values;
  to_little(data);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!out) throw DataError("short write to " + path.string());
}

json read_header(const std::filesystem::path& path) {
  std::ifstream in(header_path(path));
  if (!in) throw DataError("missing volume header " + header_path(path).string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("bad volume header " + header_path(path).string() + ": " + e.what());
  }
}

template <class T>
Grid<T> read_grid(const std::filesystem::path& path) {
  const json h = read_header(path);
  Grid<T> g;
  try {
    const std::string dtype = h.at("dtype");
    if (dtype != "f32" && dtype != "u8") throw DataError(path.string() + ": unknown dtype '" + dtype + "'");
    if (dtype != dtype_name<T>()) {
      throw DataError(path.string() + ": dtype " + dtype + ", expected " + dtype_name<T>());
    }
    const std::string endian = h.at("endianness");
    if (endian != "little") throw DataError(path.string() + ": unsupported endianness '" + endian + "'");
    const std::string order = h.value("order", "zyx-row-major");
    if (order != "zyx-row-major") throw DataError(path.string() + ": unsupported order '" + order + "'");
    g.dims = h.at("dims").get<Dims>();
    g.spacing_um = h.at("spacing_um").get<std::array<double, 3>>();
    g.channels = h.value("channels", std::size_t{1});
  } catch (const json::exception& e) {
    throw DataError("bad volume header " + header_path(path).string() + ": " + e.what());
  }
  const std::size_t expected = g.channels * g.voxels() * sizeof(T);
  std::error_code ec;
  const auto actual = std::filesystem::file_size(path, ec);
  if (ec) throw DataError("missing volume blob " + path.string());
  if (actual != expected) {
    throw DataError(path.string() + ": length mismatch, expected " + std::to_string(expected) + " bytes, got " +
                    std::to_string(actual));
  }
  g.values.resize(g.channels * g.voxels());
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(g.values.data()), static_cast<std::streamsize>(expected));
  if (!in) throw DataError("short read from " + path.string());
  to_little(g.values);
  return g;
}

}  // namespace

std::filesystem::path header_path(const std::filesystem::path& blob) {
  auto p = blob;
  p += ".json";
  return p;
}

void write_volume(const std::filesystem::path& path, const Volume& v) { write_grid(path, v); }
void write_volume(const std::filesystem::path& path, const LabelVolume& v) { write_grid(path, v); }
Volume read_volume(const std::filesystem::path& path) { return read_grid<float>(path); }
LabelVolume read_labels(const std::filesystem::path& path) { return read_grid<std::uint8_t>(path); }

std::string volume_dtype(const std::filesystem::path& path) {
  try {
    return read_header(path).at("dtype").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad volume header " + header_path(path).string() + ": " + e.what());
  }
}

}  // namespace meunet
