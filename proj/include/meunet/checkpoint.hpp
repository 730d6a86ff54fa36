#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "meunet/unet.hpp"

namespace meunet {

nlohmann::json config_to_json(const UNetConfig& c);
UNetConfig config_from_json(const nlohmann::json& j);

/// manifest.json (config, then per entry: name, kind, shape, dtype, file)
/// plus one little-endian f64 blob per parameter and running-stat buffer.
/// `extra` is stored verbatim under "meta".
void save_checkpoint(const std::filesystem::path& dir, UNet& net, const nlohmann::json& extra = {});
UNet load_checkpoint(const std::filesystem::path& dir);
nlohmann::json checkpoint_meta(const std::filesystem::path& dir);

/// Hex SHA-256 over the manifest and every blob, in manifest order.
std::string checkpoint_digest(const std::filesystem::path& dir);

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace meunet
