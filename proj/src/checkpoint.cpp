#include "piu/diffusion.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "piu/errors.hpp"

namespace piu::diffusion {

// Layout: "PIUCKPT1", then u32 block count and u32 matrix count, then one
// (u32 name length, name bytes, u32 rows, u32 cols) record per matrix, then
// the concatenated row-major float64 payloads in record order. All integers
// and doubles are little-endian, so round trips are bit-exact across saves.

namespace {

constexpr char kMagic[8] = {'P', 'I', 'U', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double x) {
  std::uint64_t v;
  std::memcpy(&v, &x, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoError("truncated checkpoint: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw IoError("truncated checkpoint: " + path);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double x;
  std::memcpy(&x, &v, 8);
  return x;
}

}  // namespace

void save_checkpoint(const DenoiserParams& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  os.write(kMagic, 8);
  put_u32(os, static_cast<std::uint32_t>(p.shape.n_blocks));
  put_u32(os, static_cast<std::uint32_t>(p.manifest.size()));
  for (const auto& v : p.manifest) {
    put_u32(os, static_cast<std::uint32_t>(v.name.size()));
    os.write(v.name.data(), static_cast<std::streamsize>(v.name.size()));
    put_u32(os, static_cast<std::uint32_t>(v.rows));
    put_u32(os, static_cast<std::uint32_t>(v.cols));
  }
  for (double x : p.theta) put_f64(os, x);
  if (!os) throw IoError("cannot write checkpoint: " + path);
}

DenoiserParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint: " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path);

  const std::uint32_t n_blocks = get_u32(is, path);
  const std::uint32_t n_mats = get_u32(is, path);
  struct Rec {
    std::string name;
    std::uint32_t rows, cols;
  };
  std::vector<Rec> recs(n_mats);
  for (auto& r : recs) {
    std::uint32_t len = get_u32(is, path);
    r.name.resize(len);
    if (!is.read(r.name.data(), len))
      throw IoError("truncated checkpoint: " + path);
    r.rows = get_u32(is, path);
    r.cols = get_u32(is, path);
  }

  auto find = [&](const std::string& name) -> const Rec& {
    for (const auto& r : recs)
      if (r.name == name) return r;
    throw IoError("checkpoint missing matrix " + name + ": " + path);
  };
  DenoiserShape shape;
  shape.n_blocks = static_cast<int>(n_blocks);
  const Rec& pos = find("pos");
  shape.n_tok = static_cast<int>(pos.rows);
  shape.tok_w = static_cast<int>(pos.cols);
  shape.cond_dim = static_cast<int>(find("L1.Wk").rows);
  shape.ff_dim = static_cast<int>(find("L1.ff.W1").cols);

  DenoiserParams p = make_denoiser(shape, 0);
  if (p.manifest.size() != recs.size())
    throw IoError("checkpoint layout mismatch: " + path);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& v = p.manifest[i];
    const auto& r = recs[i];
    if (v.name != r.name || v.rows != static_cast<int>(r.rows) ||
        v.cols != static_cast<int>(r.cols))
      throw IoError("checkpoint layout mismatch at " + r.name + ": " + path);
  }
  for (double& x : p.theta) x = get_f64(is, path);
  return p;
}

}  // namespace piu::diffusion
