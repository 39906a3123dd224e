#pragma once

// Shared on-disk array container: raw little-endian floats, row-major, one
// file per array, described by a JSON header that carries every shape.

#include "mindcine/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace mindcine::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class DType { F32, F64 };

std::string to_string(DType d);
DType dtype_from_string(const std::string& s);

/// Writes `m` as raw little-endian values of `dtype`.
void write_array(const fs::path& path, const Matrix& m, DType dtype = DType::F32);

/// Reads a raw array and checks that the file holds exactly rows*cols values.
/// `what` names the record/array in error messages.
Matrix read_array(const fs::path& path, Index rows, Index cols, DType dtype, const std::string& what);

/// Named arrays plus a free-form JSON header, stored as <dir>/<header_name> and
/// <dir>/arrays/<name>.<dtype>.
struct Bundle {
  json header = json::object();
  std::map<std::string, Matrix> arrays;
};

void save_bundle(const fs::path& dir, const Bundle& bundle, DType dtype, const std::string& header_name);
Bundle load_bundle(const fs::path& dir, const std::string& header_name);

json read_json(const fs::path& path);
void write_json(const fs::path& path, const json& j);

}  // namespace mindcine::io
