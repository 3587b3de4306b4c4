#include "motext/formats.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "motext/errors.hpp"

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

namespace motext::formats {

using nlohmann::json;

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::MissingFile,
                "cannot open for writing: " + path.string());
  }
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::MissingFile, "cannot open: " + path.string());
  }
  return in;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw Error(ErrorCode::MalformedRecord,
                "truncated file: " + path.string());
  }
  return v;
}

void put_f32_row_major(std::ostream& out, const Eigen::MatrixXd& m) {
  std::vector<float> buf(static_cast<std::size_t>(m.rows()) *
                         static_cast<std::size_t>(m.cols()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      buf[k++] = static_cast<float>(m(r, c));
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Eigen::MatrixXd get_f32_row_major(std::istream& in, std::uint32_t rows,
                                  std::uint32_t cols,
                                  const std::filesystem::path& path) {
  std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
  if (!in.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw Error(ErrorCode::MalformedRecord,
                "truncated payload in " + path.string());
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c)
      m(r, c) = static_cast<double>(buf[k++]);
  return m;
}

void check_magic(std::istream& in, const char expected[4],
                 const std::filesystem::path& path) {
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, expected, 4) != 0) {
    throw Error(ErrorCode::MalformedRecord,
                "bad magic in " + path.string() + " (expected " +
                    std::string(expected, 4) + ")");
  }
}

void write_emb1(const std::filesystem::path& path,
                const std::vector<Eigen::VectorXd>& rows) {
  const std::uint32_t n = static_cast<std::uint32_t>(rows.size());
  const std::uint32_t dim =
      rows.empty() ? 0 : static_cast<std::uint32_t>(rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<std::uint32_t>(rows[i].size()) != dim) {
      throw Error(ErrorCode::DimensionMismatch,
                  "row " + std::to_string(i) + " has dim " +
                      std::to_string(rows[i].size()) + ", expected " +
                      std::to_string(dim) + " in " + path.string());
    }
  }
  auto out = open_out(path);
  out.write("EMB1", 4);
  put_u32(out, n);
  put_u32(out, dim);
  for (const auto& row : rows) {
    put_f32_row_major(out, row.transpose());
  }
}

std::vector<Eigen::VectorXd> read_emb1(const std::filesystem::path& path) {
  auto in = open_in(path);
  check_magic(in, "EMB1", path);
  const std::uint32_t n = get_u32(in, path);
  const std::uint32_t dim = get_u32(in, path);
  std::vector<Eigen::VectorXd> rows;
  rows.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    rows.push_back(get_f32_row_major(in, 1, dim, path).row(0).transpose());
  }
  return rows;
}

std::filesystem::path emb1_ids_path(const std::filesystem::path& emb_path) {
  return std::filesystem::path(emb_path.string() + ".ids.jsonl");
}

void write_id_list(const std::filesystem::path& path,
                   const std::vector<std::string>& ids) {
  auto out = open_out(path);
  for (const auto& id : ids) {
    out << json{{"id", id}}.dump() << "\n";
  }
}

std::vector<std::string> read_id_list(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") ||
        !j["id"].is_string()) {
      throw Error(ErrorCode::MalformedRecord,
                  path.string() + ":" + std::to_string(lineno) +
                      ": expected {\"id\": <string>}");
    }
    ids.push_back(j["id"].get<std::string>());
  }
  return ids;
}

void write_mbf1(const std::filesystem::path& path,
                const std::vector<RaggedRecord>& records) {
  auto out = open_out(path);
  out.write("MBF1", 4);
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& rec : records) {
    put_u32(out, static_cast<std::uint32_t>(rec.id.size()));
    out.write(rec.id.data(), static_cast<std::streamsize>(rec.id.size()));
    put_u32(out, static_cast<std::uint32_t>(rec.data.rows()));
    put_u32(out, static_cast<std::uint32_t>(rec.data.cols()));
    put_f32_row_major(out, rec.data);
  }
}

std::vector<RaggedRecord> read_mbf1(const std::filesystem::path& path) {
  auto in = open_in(path);
  check_magic(in, "MBF1", path);
  const std::uint32_t n = get_u32(in, path);
  std::vector<RaggedRecord> records;
  records.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t id_len = get_u32(in, path);
    std::string id(id_len, '\0');
    if (!in.read(id.data(), id_len)) {
      throw Error(ErrorCode::MalformedRecord,
                  "truncated record id in " + path.string());
    }
    const std::uint32_t frames = get_u32(in, path);
    const std::uint32_t dim = get_u32(in, path);
    records.push_back({std::move(id), get_f32_row_major(in, frames, dim, path)});
  }
  return records;
}

}  // namespace motext::formats
