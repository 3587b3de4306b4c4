#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "motext/errors.hpp"
#include "motext/formats.hpp"
#include "motext/rng.hpp"

namespace fs = std::filesystem;
using motext::Error;
using motext::ErrorCode;
using motext::Rng;
namespace formats = motext::formats;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("motext-fmt-" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

// Values representable exactly in f32 so write -> read is lossless.
Eigen::VectorXd f32_vector(int dim, Rng& rng) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) {
    v[i] = static_cast<double>(static_cast<float>(rng.gaussian()));
  }
  return v;
}

Eigen::MatrixXd f32_matrix(int rows, int cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) m.row(r) = f32_vector(cols, rng).transpose();
  return m;
}

}  // namespace

TEST_CASE("emb1 round-trips values and bytes") {
  const fs::path dir = temp_dir("emb1");
  Rng rng(11);
  std::vector<Eigen::VectorXd> rows;
  for (int i = 0; i < 7; ++i) rows.push_back(f32_vector(5, rng));

  const fs::path path = dir / "a.emb1";
  formats::write_emb1(path, rows);
  const auto back = formats::read_emb1(path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK((back[i] - rows[i]).norm() == 0.0);
  }

  // write -> read -> write reproduces the file byte for byte.
  const fs::path again = dir / "b.emb1";
  formats::write_emb1(again, back);
  CHECK(file_bytes(path) == file_bytes(again));
}

TEST_CASE("emb1 rejects missing, corrupt and truncated files") {
  const fs::path dir = temp_dir("emb1-bad");

  CHECK_THROWS_WITH_AS(formats::read_emb1(dir / "nope.emb1"),
                       doctest::Contains("MissingFile"), Error);

  {
    std::ofstream out(dir / "magic.emb1", std::ios::binary);
    out << "XXXXrest";
  }
  CHECK_THROWS_AS(formats::read_emb1(dir / "magic.emb1"), Error);

  Rng rng(3);
  formats::write_emb1(dir / "full.emb1", {f32_vector(4, rng)});
  const std::string bytes = file_bytes(dir / "full.emb1");
  {
    std::ofstream out(dir / "cut.emb1", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
  }
  try {
    formats::read_emb1(dir / "cut.emb1");
    FAIL("truncated file was accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedRecord);
  }
}

TEST_CASE("id list sidecar round-trips") {
  const fs::path dir = temp_dir("ids");
  const fs::path emb = dir / "x.emb1";
  CHECK(formats::emb1_ids_path(emb) == dir / "x.emb1.ids.jsonl");

  const std::vector<std::string> ids = {"m-0#0", "m-0#1", "quote\"id",
                                        "uni\xc3\xa9"};
  formats::write_id_list(formats::emb1_ids_path(emb), ids);
  CHECK(formats::read_id_list(formats::emb1_ids_path(emb)) == ids);

  const std::string first = file_bytes(formats::emb1_ids_path(emb));
  formats::write_id_list(formats::emb1_ids_path(emb), ids);
  CHECK(file_bytes(formats::emb1_ids_path(emb)) == first);
}

TEST_CASE("mbf1 round-trips ragged records") {
  const fs::path dir = temp_dir("mbf1");
  Rng rng(17);
  std::vector<formats::RaggedRecord> records;
  records.push_back({"clip-a", f32_matrix(3, 4, rng)});
  records.push_back({"clip-b", f32_matrix(9, 4, rng)});
  records.push_back({"clip-c", f32_matrix(1, 4, rng)});

  const fs::path path = dir / "m.mbf1";
  formats::write_mbf1(path, records);
  const auto back = formats::read_mbf1(path);
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(back[i].id == records[i].id);
    CHECK(back[i].data.rows() == records[i].data.rows());
    CHECK((back[i].data - records[i].data).norm() == 0.0);
  }

  const fs::path again = dir / "n.mbf1";
  formats::write_mbf1(again, back);
  CHECK(file_bytes(path) == file_bytes(again));
}

TEST_CASE("mbf1 empty list and bad magic") {
  const fs::path dir = temp_dir("mbf1-edge");
  formats::write_mbf1(dir / "empty.mbf1", {});
  CHECK(formats::read_mbf1(dir / "empty.mbf1").empty());

  {
    std::ofstream out(dir / "bad.mbf1", std::ios::binary);
    out << "EMB1";  // wrong container magic
  }
  try {
    formats::read_mbf1(dir / "bad.mbf1");
    FAIL("wrong magic was accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedRecord);
  }
}

TEST_CASE("u32 and f32 primitives are little-endian and exact") {
  const fs::path dir = temp_dir("prims");
  const fs::path path = dir / "raw.bin";
  {
    auto out = formats::open_out(path);
    formats::put_u32(out, 0x01020304u);
    Eigen::MatrixXd m(2, 2);
    m << 1.5, -2.25, 3.0, 0.125;
    formats::put_f32_row_major(out, m);
  }
  const std::string bytes = file_bytes(path);
  REQUIRE(bytes.size() == 4 + 4 * 4);
  CHECK(static_cast<unsigned char>(bytes[0]) == 0x04);
  CHECK(static_cast<unsigned char>(bytes[1]) == 0x03);
  CHECK(static_cast<unsigned char>(bytes[2]) == 0x02);
  CHECK(static_cast<unsigned char>(bytes[3]) == 0x01);

  auto in = formats::open_in(path);
  CHECK(formats::get_u32(in, path) == 0x01020304u);
  const Eigen::MatrixXd m = formats::get_f32_row_major(in, 2, 2, path);
  CHECK(m(0, 0) == 1.5);
  CHECK(m(0, 1) == -2.25);
  CHECK(m(1, 0) == 3.0);
  CHECK(m(1, 1) == 0.125);
}

TEST_CASE("emb1 stores values at f32 precision") {
  const fs::path dir = temp_dir("prec");
  Eigen::VectorXd v(1);
  v[0] = 0.1;  // not representable in f32
  formats::write_emb1(dir / "p.emb1", {v});
  const auto back = formats::read_emb1(dir / "p.emb1");
  CHECK(back[0][0] == static_cast<double>(static_cast<float>(0.1)));
  CHECK(back[0][0] != 0.1);
}
