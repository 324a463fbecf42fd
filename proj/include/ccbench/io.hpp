#pragma once

#include "ccbench/core.hpp"
#include "ccbench/geometry.hpp"

#include <string>
#include <utility>
#include <vector>

namespace ccbench::io {

// Binary formats, all little-endian:
//   cloud      "CPC1"   u32 N, then N * 6 f32 (x y z r g b)
//   checkpoint "CCKPT1" u32 count, then per tensor:
//              u32 name_len, name bytes, u32 rank, rank * u32 dims,
//              prod(dims) f32 row-major
//   embeddings "TEMB1"  u32 count, then per record:
//              u32 id_len, id bytes, u32 T, u32 D, T*D f32 row-major

void write_cloud(const std::string& path, const geometry::ColoredPointCloud& cloud);
geometry::ColoredPointCloud read_cloud(const std::string& path);

/// Named tensors in insertion order; order is part of the file contents.
struct Checkpoint {
  std::vector<std::pair<std::string, Mat>> tensors;

  void add(const std::string& name, const Mat& value);
  const Mat& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

struct EmbeddingRecord {
  std::string id;
  Mat embeddings;  // T x D
};

void write_embedding_file(const std::string& path,
                          const std::vector<EmbeddingRecord>& records);
std::vector<EmbeddingRecord> read_embedding_file(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);

}  // namespace ccbench::io
