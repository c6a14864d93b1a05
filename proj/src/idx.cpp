#include <zlib.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "dr/data.hpp"

namespace dr {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

// gzread is codec-transparent: it returns raw bytes for non-gzip files, so
// one path serves both variants.
std::vector<unsigned char> read_all(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  for (;;) {
    int n = gzread(f, buf, sizeof(buf));
    if (n < 0) {
      gzclose(f);
      throw IoError("read failed on " + path);
    }
    if (n == 0) break;
    out.insert(out.end(), buf, buf + n);
  }
  gzclose(f);
  return out;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off,
                   const std::string& path) {
  if (off + 4 > b.size()) throw IoError("truncated header in " + path);
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v >> 24));
  b.push_back(static_cast<unsigned char>(v >> 16));
  b.push_back(static_cast<unsigned char>(v >> 8));
  b.push_back(static_cast<unsigned char>(v));
}

void write_all(const std::string& path, const std::vector<unsigned char>& b,
               bool gzip) {
  if (gzip) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open " + path + " for writing");
    std::size_t off = 0;
    while (off < b.size()) {
      unsigned chunk =
          static_cast<unsigned>(std::min<std::size_t>(b.size() - off, 1 << 20));
      if (gzwrite(f, b.data() + off, chunk) != static_cast<int>(chunk)) {
        gzclose(f);
        throw IoError("write failed on " + path);
      }
      off += chunk;
    }
    gzclose(f);
    return;
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open " + path + " for writing");
  if (std::fwrite(b.data(), 1, b.size(), f) != b.size()) {
    std::fclose(f);
    throw IoError("write failed on " + path);
  }
  std::fclose(f);
}

}  // namespace

void Dataset::validate() const {
  if (images.rank() < 2 || images.dim(0) != labels.size())
    throw ContractError("dataset " + name + ": images " +
                        shape_str(images.shape()) + " vs " +
                        std::to_string(labels.size()) + " labels");
  for (int l : labels)
    if (l < 0 || l >= num_classes)
      throw ContractError("dataset " + name + ": label " + std::to_string(l) +
                          " outside [0," + std::to_string(num_classes) + ")");
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path, bool /*gzip*/) {
  auto ibytes = read_all(images_path);
  auto lbytes = read_all(labels_path);

  if (be32(ibytes, 0, images_path) != kImagesMagic)
    throw FormatError("bad images magic in " + images_path);
  if (be32(lbytes, 0, labels_path) != kLabelsMagic)
    throw FormatError("bad labels magic in " + labels_path);

  const std::size_t n = be32(ibytes, 4, images_path);
  const std::size_t rows = be32(ibytes, 8, images_path);
  const std::size_t cols = be32(ibytes, 12, images_path);
  const std::size_t nl = be32(lbytes, 4, labels_path);
  if (n != nl)
    throw FormatError("count mismatch: " + std::to_string(n) + " images vs " +
                      std::to_string(nl) + " labels");
  if (ibytes.size() < 16 + n * rows * cols)
    throw IoError("truncated image data in " + images_path);
  if (lbytes.size() < 8 + n)
    throw IoError("truncated label data in " + labels_path);

  Dataset ds;
  ds.name = std::filesystem::path(images_path).filename().string();
  ds.images = Tensor<float>({n, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i)
    ds.images[i] = static_cast<float>(ibytes[16 + i]) / 255.0f;
  ds.labels.resize(n);
  int maxl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lbytes[8 + i];
    maxl = std::max(maxl, ds.labels[i]);
  }
  ds.num_classes = std::max(10, maxl + 1);
  ds.validate();
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path, bool gzip) {
  if (ds.images.rank() != 3)
    throw ContractError("save_idx needs [n,rows,cols] images, got " +
                        shape_str(ds.images.shape()));
  const std::size_t n = ds.images.dim(0), rows = ds.images.dim(1),
                    cols = ds.images.dim(2);
  std::vector<unsigned char> ibytes;
  ibytes.reserve(16 + n * rows * cols);
  put_be32(ibytes, kImagesMagic);
  put_be32(ibytes, static_cast<std::uint32_t>(n));
  put_be32(ibytes, static_cast<std::uint32_t>(rows));
  put_be32(ibytes, static_cast<std::uint32_t>(cols));
  for (std::size_t i = 0; i < n * rows * cols; ++i) {
    float v = ds.images[i];
    v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    ibytes.push_back(static_cast<unsigned char>(v * 255.0f + 0.5f));
  }
  std::vector<unsigned char> lbytes;
  lbytes.reserve(8 + n);
  put_be32(lbytes, kLabelsMagic);
  put_be32(lbytes, static_cast<std::uint32_t>(n));
  for (int l : ds.labels) lbytes.push_back(static_cast<unsigned char>(l));
  write_all(images_path, ibytes, gzip);
  write_all(labels_path, lbytes, gzip);
}

Dataset load_cifar10(const std::vector<std::string>& batch_paths) {
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  std::vector<unsigned char> all;
  for (const auto& p : batch_paths) {
    auto b = read_all(p);
    if (b.size() % kRecord != 0)
      throw FormatError("CIFAR batch size not a record multiple: " + p);
    all.insert(all.end(), b.begin(), b.end());
  }
  const std::size_t n = all.size() / kRecord;
  Dataset ds;
  ds.name = "cifar10";
  ds.num_classes = 10;
  ds.images = Tensor<float>({n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = all.data() + i * kRecord;
    if (rec[0] > 9) throw FormatError("CIFAR label out of range");
    ds.labels[i] = rec[0];
    for (std::size_t j = 0; j < 3 * 32 * 32; ++j)
      ds.images[i * 3 * 32 * 32 + j] =
          static_cast<float>(rec[1 + j]) / 255.0f;
  }
  ds.validate();
  return ds;
}

}  // namespace dr
