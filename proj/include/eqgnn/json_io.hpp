#pragma once

#include <filesystem>

#include "eqgnn/mesh.hpp"
#include "json.hpp"

namespace eqgnn {

/// Parses a JSON file; empty or malformed input raises ParseError.
nlohmann::json read_json_file(const std::filesystem::path& path);
/// Writes atomically (temp file + rename), creating parent directories.
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

nlohmann::json mesh_to_json(const TriMesh& mesh);
TriMesh mesh_from_json(const nlohmann::json& j);

}  // namespace eqgnn
