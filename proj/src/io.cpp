#include "ccbench/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace ccbench::io {
namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("truncated file: " + path);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is, const std::string& path) {
  const std::uint32_t bits = get_u32(is, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const std::string& path) {
  const std::uint32_t len = get_u32(is, path);
  std::string s(len, '\0');
  if (len > 0 && !is.read(s.data(), len)) {
    throw IoError("truncated file: " + path);
  }
  return s;
}

void expect_magic(std::istream& is, const char* magic, const std::string& path) {
  const std::size_t len = std::strlen(magic);
  std::string got(len, '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(len)) || got != magic) {
    throw IoError("bad magic in " + path + " (expected " + magic + ")");
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  return is;
}

}  // namespace

void write_cloud(const std::string& path, const geometry::ColoredPointCloud& cloud) {
  geometry::validate_cloud(cloud);
  auto os = open_out(path);
  os.write("CPC1", 4);
  put_u32(os, static_cast<std::uint32_t>(cloud.size()));
  for (Index i = 0; i < cloud.size(); ++i) {
    for (int c = 0; c < 3; ++c) put_f32(os, static_cast<float>(cloud.points(i, c)));
    for (int c = 0; c < 3; ++c) put_f32(os, static_cast<float>(cloud.colors(i, c)));
  }
  if (!os) throw IoError("write failed: " + path);
}

geometry::ColoredPointCloud read_cloud(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "CPC1", path);
  const std::uint32_t n = get_u32(is, path);
  geometry::ColoredPointCloud cloud;
  cloud.points.resize(n, 3);
  cloud.colors.resize(n, 3);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) cloud.points(i, c) = get_f32(is, path);
    for (int c = 0; c < 3; ++c) cloud.colors(i, c) = get_f32(is, path);
  }
  geometry::validate_cloud(cloud);
  return cloud;
}

void Checkpoint::add(const std::string& name, const Mat& value) {
  for (const auto& [n, v] : tensors) {
    if (n == name) throw ValidationError("duplicate tensor name: " + name);
  }
  tensors.emplace_back(name, value);
}

const Mat& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, v] : tensors) {
    if (n == name) return v;
  }
  throw ValidationError("checkpoint tensor not found: " + name);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, v] : tensors) {
    if (n == name) return true;
  }
  return false;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  auto os = open_out(path);
  os.write("CCKPT1", 6);
  put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, value] : ckpt.tensors) {
    put_string(os, name);
    put_u32(os, 2);
    put_u32(os, static_cast<std::uint32_t>(value.rows()));
    put_u32(os, static_cast<std::uint32_t>(value.cols()));
    for (Index r = 0; r < value.rows(); ++r) {
      for (Index c = 0; c < value.cols(); ++c) {
        put_f32(os, static_cast<float>(value(r, c)));
      }
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "CCKPT1", path);
  const std::uint32_t count = get_u32(is, path);
  Checkpoint ckpt;
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name = get_string(is, path);
    const std::uint32_t rank = get_u32(is, path);
    if (rank < 1 || rank > 2) {
      throw IoError("unsupported tensor rank in " + path + ": " + std::to_string(rank));
    }
    std::uint32_t rows = 1, cols = 1;
    if (rank == 1) {
      cols = get_u32(is, path);
    } else {
      rows = get_u32(is, path);
      cols = get_u32(is, path);
    }
    Mat value(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) {
        value(r, c) = get_f32(is, path);
      }
    }
    ckpt.add(name, value);
  }
  return ckpt;
}

void write_embedding_file(const std::string& path,
                          const std::vector<EmbeddingRecord>& records) {
  auto os = open_out(path);
  os.write("TEMB1", 5);
  put_u32(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& rec : records) {
    put_string(os, rec.id);
    put_u32(os, static_cast<std::uint32_t>(rec.embeddings.rows()));
    put_u32(os, static_cast<std::uint32_t>(rec.embeddings.cols()));
    for (Index r = 0; r < rec.embeddings.rows(); ++r) {
      for (Index c = 0; c < rec.embeddings.cols(); ++c) {
        put_f32(os, static_cast<float>(rec.embeddings(r, c)));
      }
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<EmbeddingRecord> read_embedding_file(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "TEMB1", path);
  const std::uint32_t count = get_u32(is, path);
  std::vector<EmbeddingRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    EmbeddingRecord rec;
    rec.id = get_string(is, path);
    const std::uint32_t t = get_u32(is, path);
    const std::uint32_t d = get_u32(is, path);
    rec.embeddings.resize(t, d);
    for (std::uint32_t r = 0; r < t; ++r) {
      for (std::uint32_t c = 0; c < d; ++c) {
        rec.embeddings(r, c) = get_f32(is, path);
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::string read_text_file(const std::string& path) {
  auto is = open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& contents) {
  auto os = open_out(path);
  os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace ccbench::io
