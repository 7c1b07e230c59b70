#include <fstream>
#include <iterator>

#include "abmil/bagdata.hpp"
#include "abmil/errors.hpp"

namespace abmil::data {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open IDX file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > b.size()) {
    throw FormatError(path.string() + ": truncated header, need bytes " + std::to_string(offset) + ".." +
                      std::to_string(offset + 4) + " but file has " + std::to_string(b.size()));
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) | (std::uint32_t{b[offset + 2]} << 8) |
         std::uint32_t{b[offset + 3]};
}

void require_payload(const std::vector<unsigned char>& b, std::size_t begin, std::size_t bytes,
                     const std::filesystem::path& path) {
  if (begin + bytes > b.size()) {
    throw FormatError(path.string() + ": truncated payload, expected bytes " + std::to_string(begin) + ".." +
                      std::to_string(begin + bytes) + " but file ends at " + std::to_string(b.size()));
  }
}

}  // namespace

InstancePool load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t limit) {
  if (limit == 0) throw ConfigError("empty pool: IDX limit is 0");
  const auto img = slurp(images);
  const auto lab = slurp(labels);

  if (const auto m = be32(img, 0, images); m != kImageMagic) {
    throw FormatError(images.string() + ": bad IDX image magic " + std::to_string(m));
  }
  if (const auto m = be32(lab, 0, labels); m != kLabelMagic) {
    throw FormatError(labels.string() + ": bad IDX label magic " + std::to_string(m));
  }
  const std::size_t n_images = be32(img, 4, images);
  const std::size_t rows = be32(img, 8, images);
  const std::size_t cols = be32(img, 12, images);
  const std::size_t n_labels = be32(lab, 4, labels);
  if (n_images != n_labels) {
    throw FormatError("IDX image/label count mismatch: " + std::to_string(n_images) + " images vs " +
                      std::to_string(n_labels) + " labels");
  }
  if (rows == 0 || cols == 0) throw FormatError(images.string() + ": zero image dimension");
  const std::size_t n = std::min(n_images, limit);
  if (n == 0) throw ConfigError("empty pool: IDX files contain no items");
  const std::size_t dim = rows * cols;
  constexpr std::size_t kImageHeader = 16, kLabelHeader = 8;
  require_payload(img, kImageHeader, n * dim, images);
  require_payload(lab, kLabelHeader, n, labels);

  InstancePool pool;
  pool.features = Tensor({n, dim});
  pool.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) pool.features(i, j) = img[kImageHeader + i * dim + j] / 255.0;
    pool.labels.push_back(lab[kLabelHeader + i]);
  }
  return pool;
}

}  // namespace abmil::data
