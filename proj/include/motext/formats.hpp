#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace motext::formats {

// EMB1 — fixed-dimension embedding matrix:
//   magic "EMB1" | u32 row_count | u32 dim | row_count*dim f32, row-major,
//   little-endian. Row order matches the companion id list written next to
//   the file (<path>.ids.jsonl, one {"id": ...} object per line).
//
// MBF1 — ragged feature sequences:
//   magic "MBF1" | u32 record_count | per record:
//   u32 id_len | id bytes | u32 frames | u32 dim | frames*dim f32.

void write_emb1(const std::filesystem::path& path,
                const std::vector<Eigen::VectorXd>& rows);
std::vector<Eigen::VectorXd> read_emb1(const std::filesystem::path& path);

std::filesystem::path emb1_ids_path(const std::filesystem::path& emb_path);
void write_id_list(const std::filesystem::path& path,
                   const std::vector<std::string>& ids);
std::vector<std::string> read_id_list(const std::filesystem::path& path);

struct RaggedRecord {
  std::string id;
  Eigen::MatrixXd data;  // rows = frames (or tokens), cols = feature dim
};

void write_mbf1(const std::filesystem::path& path,
                const std::vector<RaggedRecord>& records);
std::vector<RaggedRecord> read_mbf1(const std::filesystem::path& path);

// Low-level primitives shared with the checkpoint writer. Values are always
// stored as little-endian u32 / f32; matrices are row-major.
std::ofstream open_out(const std::filesystem::path& path);
std::ifstream open_in(const std::filesystem::path& path);
void check_magic(std::istream& in, const char expected[4],
                 const std::filesystem::path& path);
void put_u32(std::ostream& out, std::uint32_t v);
std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path);
void put_f32_row_major(std::ostream& out, const Eigen::MatrixXd& m);
Eigen::MatrixXd get_f32_row_major(std::istream& in, std::uint32_t rows,
                                  std::uint32_t cols,
                                  const std::filesystem::path& path);

}  // namespace motext::formats
