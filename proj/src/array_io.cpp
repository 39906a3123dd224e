#include "mindcine/array_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace mindcine::io {

static_assert(std::endian::native == std::endian::little, "array container assumes a little-endian host");

std::string to_string(DType d) { return d == DType::F32 ? "f32" : "f64"; }

DType dtype_from_string(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  throw IngestError("unknown dtype tag '" + s + "' (expected f32 or f64)");
}

void write_array(const fs::path& path, const Matrix& m, DType dtype) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  if (dtype == DType::F64) {
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  } else {
    std::vector<float> buf(static_cast<size_t>(m.size()));
    for (Index i = 0; i < m.size(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(m.data()[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw Error("short write to " + path.string());
}

Matrix read_array(const fs::path& path, Index rows, Index cols, DType dtype, const std::string& what) {
  std::error_code ec;
  const auto bytes = fs::file_size(path, ec);
  if (ec) throw IngestError(what + ": cannot stat " + path.string());
  const std::size_t width = dtype == DType::F32 ? sizeof(float) : sizeof(double);
  const auto expected = static_cast<std::uintmax_t>(rows * cols) * width;
  if (bytes != expected) {
    throw IngestError(what + ": " + path.filename().string() + " holds " + std::to_string(bytes / width) +
                      " values but the header declares " + shape_str(rows, cols) + " = " +
                      std::to_string(rows * cols));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError(what + ": cannot open " + path.string());
  Matrix m(rows, cols);
  if (dtype == DType::F64) {
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(expected));
  } else {
    std::vector<float> buf(static_cast<size_t>(rows * cols));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
  }
  if (!in) throw IngestError(what + ": short read from " + path.string());
  return m;
}

void save_bundle(const fs::path& dir, const Bundle& bundle, DType dtype, const std::string& header_name) {
  fs::create_directories(dir / "arrays");
  json header = bundle.header;
  json entries = json::array();
  for (const auto& [name, m] : bundle.arrays) {
    const std::string file = "arrays/" + name + "." + to_string(dtype);
    write_array(dir / file, m, dtype);
    entries.push_back({{"name", name}, {"file", file}, {"rows", m.rows()}, {"cols", m.cols()},
                       {"dtype", to_string(dtype)}});
  }
  header["arrays"] = entries;
  write_json(dir / header_name, header);
}

Bundle load_bundle(const fs::path& dir, const std::string& header_name) {
  Bundle b;
  b.header = read_json(dir / header_name);
  if (!b.header.contains("arrays") || !b.header["arrays"].is_array()) {
    throw IngestError(header_name + ": missing 'arrays' table");
  }
  for (const auto& e : b.header["arrays"]) {
    const std::string name = e.at("name").get<std::string>();
    b.arrays[name] = read_array(dir / e.at("file").get<std::string>(), e.at("rows").get<Index>(),
                                e.at("cols").get<Index>(), dtype_from_string(e.at("dtype").get<std::string>()),
                                "array '" + name + "'");
  }
  return b;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IngestError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

}  // namespace mindcine::io
