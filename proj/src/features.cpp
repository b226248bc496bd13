// SPDX-License-Identifier: Apache-2.0
#include "mtlcap/features.hpp"

#include <unistd.h>

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mtlcap/error.hpp"
#include "mtlcap/fileio.hpp"
#include "mtlcap/rng.hpp"

namespace fs = std::filesystem;

namespace mtlcap::features {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string backbone_name(BackboneName name) {
  switch (name) {
    case BackboneName::ResNet: return "resnet";
    case BackboneName::VggNet: return "vggnet";
    case BackboneName::Toy: return "toy";
  }
  return "toy";
}

BackboneName parse_backbone_name(const std::string& text) {
  if (text == "resnet") return BackboneName::ResNet;
  if (text == "vggnet") return BackboneName::VggNet;
  if (text == "toy") return BackboneName::Toy;
  throw Error(ErrorCode::ConfigError, "unknown backbone '" + text + "'");
}

BackboneSpec BackboneSpec::toy(std::uint64_t seed) {
  return {BackboneName::Toy, kToyCells, kToyChannels, "toy-seed-" + std::to_string(seed), seed, {}};
}

BackboneSpec BackboneSpec::resnet(std::string weights_ref, std::string command) {
  return {BackboneName::ResNet, 49, 2048, std::move(weights_ref), 0, std::move(command)};
}

BackboneSpec BackboneSpec::vggnet(std::string weights_ref, std::string command) {
  return {BackboneName::VggNet, 49, 512, std::move(weights_ref), 0, std::move(command)};
}

// ---------------------------------------------------------------- images

namespace {

class PnmReader {
 public:
  PnmReader(std::string bytes, std::string what) : bytes_(std::move(bytes)), what_(std::move(what)) {}

  [[noreturn]] void fail(const std::string& why) const {
    throw Error(ErrorCode::UndecodableImage, what_ + ": " + why);
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  int read_int() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_])))
      fail("bad header");
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > 1 << 20) fail("header value too large");
    }
    return static_cast<int>(v);
  }

  std::string magic() {
    if (bytes_.size() < 2) fail("too short");
    pos_ = 2;
    return bytes_.substr(0, 2);
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

Image decode_image(const fs::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const Error&) {
    throw Error(ErrorCode::UndecodableImage, path.string() + ": cannot read");
  }
  PnmReader rd(std::move(bytes), path.string());
  const std::string magic = rd.magic();
  if (magic != "P6" && magic != "P5" && magic != "P3") rd.fail("unsupported format");
  Image img;
  img.width = rd.read_int();
  img.height = rd.read_int();
  const int maxval = rd.read_int();
  if (img.width < 1 || img.height < 1 || maxval < 1 || maxval > 255) rd.fail("bad header values");
  const std::size_t n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  img.pixels.resize(n * 3);
  if (magic == "P3") {
    for (std::size_t i = 0; i < n * 3; ++i) {
      const int v = rd.read_int();
      if (v > maxval) rd.fail("sample exceeds maxval");
      img.pixels[i] = static_cast<double>(v) / maxval;
    }
    return img;
  }
  rd.advance(1);  // single whitespace byte after maxval
  const std::size_t channels = magic == "P6" ? 3 : 1;
  if (rd.bytes().size() < rd.pos() + n * channels) rd.fail("truncated pixel data");
  const auto* data = reinterpret_cast<const unsigned char*>(rd.bytes().data() + rd.pos());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img.pixels[i * 3 + c] = static_cast<double>(data[i * channels + (channels == 3 ? c : 0)]) / maxval;
  return img;
}

void write_ppm(const Image& image, const fs::path& path) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  for (double v : image.pixels)
    out += static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  write_file_atomic(path, out);
}

Image resize(const Image& image, int width, int height) {
  if (image.width == width && image.height == height) return image;
  Image out;
  out.width = width;
  out.height = height;
  out.pixels.assign(static_cast<std::size_t>(width * height * 3), 0.0);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double y0 = y * sy, y1 = (y + 1) * sy, x0 = x * sx, x1 = (x + 1) * sx;
      double acc[3] = {0, 0, 0};
      double area = 0;
      for (int iy = static_cast<int>(std::floor(y0)); iy < static_cast<int>(std::ceil(y1)) && iy < image.height; ++iy) {
        const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
        for (int ix = static_cast<int>(std::floor(x0)); ix < static_cast<int>(std::ceil(x1)) && ix < image.width; ++ix) {
          const double w = wy * (std::min<double>(ix + 1, x1) - std::max<double>(ix, x0));
          for (int c = 0; c < 3; ++c) acc[c] += w * image.at(iy, ix, c);
          area += w;
        }
      }
      for (int c = 0; c < 3; ++c)
        out.pixels[static_cast<std::size_t>((y * width + x) * 3 + c)] = acc[c] / area;
    }
  }
  return out;
}

Image image_from_cifar(std::span<const std::uint8_t> pixels) {
  if (pixels.size() != 3072) throw Error(ErrorCode::ShapeMismatch, "CIFAR image needs 3072 bytes");
  Image img;
  img.width = img.height = 32;
  img.pixels.resize(3072);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 1024; ++i) img.pixels[i * 3 + c] = pixels[c * 1024 + i] / 255.0;
  return img;
}

// ---------------------------------------------------------------- toy backbone

Eigen::MatrixXd toy_projection(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "features.toy"));
  Eigen::MatrixXd proj(kToyCellValues, kToyChannels);
  for (int r = 0; r < kToyCellValues; ++r)
    for (int c = 0; c < kToyChannels; ++c) proj(r, c) = rng.uniform(-1.0, 1.0);
  return proj;
}

FeatureGrid toy_backbone(const Image& pixels, std::uint64_t seed) {
  if (pixels.width != kToySide || pixels.height != kToySide ||
      pixels.pixels.size() != static_cast<std::size_t>(kToySide * kToySide * 3))
    throw Error(ErrorCode::ShapeMismatch, "toy backbone expects 32x32x3 pixels");

  // 4x4 average pooling down to 8x8x3
  double pooled[8][8][3] = {};
  for (int y = 0; y < kToySide; ++y)
    for (int x = 0; x < kToySide; ++x)
      for (int c = 0; c < 3; ++c) pooled[y / 4][x / 4][c] += pixels.at(y, x, c) / 16.0;

  Eigen::MatrixXd cells(kToyCells, kToyCellValues);
  for (int cy = 0; cy < 4; ++cy)
    for (int cx = 0; cx < 4; ++cx) {
      int k = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          for (int c = 0; c < 3; ++c) cells(cy * 4 + cx, k++) = pooled[cy * 2 + dy][cx * 2 + dx][c];
    }
  FeatureGrid grid;
  grid.values = (cells * toy_projection(seed)).cwiseMax(0.0).cast<float>();
  return grid;
}

// ---------------------------------------------------------------- providers

namespace {

class ToyProvider final : public BackboneProvider {
 public:
  explicit ToyProvider(std::uint64_t seed) : seed_(seed) {}
  FeatureGrid extract(const fs::path& image_path) const override {
    Image img = decode_image(image_path);
    return toy_backbone(resize(img, kToySide, kToySide), seed_);
  }

 private:
  std::uint64_t seed_;
};

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char ch : s) {
    if (ch == '\'') out += "'\\''";
    else out += ch;
  }
  return out + "'";
}

// Wraps any pretrained-model runtime reachable as a command that writes one
// grid in the cache entry format.
class CommandProvider final : public BackboneProvider {
 public:
  explicit CommandProvider(BackboneSpec spec) : spec_(std::move(spec)) {}
  FeatureGrid extract(const fs::path& image_path) const override {
    if (!fs::exists(image_path)) throw Error(ErrorCode::UndecodableImage, image_path.string());
    const fs::path out = fs::temp_directory_path() /
                         ("mtlcap-" + std::to_string(::getpid()) + "-" +
                          std::to_string(std::hash<std::string>{}(image_path.string())) + ".afgr");
    const std::string cmd = spec_.command + " " + shell_quote(fs::absolute(image_path).string()) +
                            " " + shell_quote(out.string());
    const int rc = std::system(cmd.c_str());
    if (rc != 0) {
      fs::remove(out);
      throw Error(ErrorCode::UndecodableImage, image_path.string() + ": provider exited with " + std::to_string(rc));
    }
    std::string bytes = read_file(out);
    fs::remove(out);
    FeatureGrid grid = decode_grid(bytes, image_path.string());
    if (grid.L() != spec_.output_L || grid.D() != spec_.output_D)
      throw Error(ErrorCode::ShapeMismatch, image_path.string() + ": provider returned wrong grid shape");
    return grid;
  }

 private:
  BackboneSpec spec_;
};

}  // namespace

std::unique_ptr<BackboneProvider> make_provider(const BackboneSpec& spec) {
  if (spec.name == BackboneName::Toy) return std::make_unique<ToyProvider>(spec.seed);
  if (spec.command.empty())
    throw Error(ErrorCode::ProviderUnavailable,
                backbone_name(spec.name) + " (set a provider command for pretrained weights)");
  return std::make_unique<CommandProvider>(spec);
}

FeatureGrid extract_features(const fs::path& image_path, const BackboneSpec& spec) {
  return make_provider(spec)->extract(image_path);
}

// ---------------------------------------------------------------- cache

namespace {
constexpr char kMagic[4] = {'A', 'F', 'G', 'R'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

fs::path cache_path(const std::string& image_id, const std::string& backbone, const fs::path& cache_dir) {
  if (image_id.empty() || image_id.find('/') != std::string::npos || image_id.find('\\') != std::string::npos)
    throw Error(ErrorCode::ConfigError, "image_id '" + image_id + "' cannot name a cache file");
  return cache_dir / (image_id + "." + backbone + ".afgr");
}

std::string encode_grid(const FeatureGrid& grid) {
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(grid.L()));
  w.u32(static_cast<std::uint32_t>(grid.D()));
  for (int r = 0; r < grid.L(); ++r)
    for (int c = 0; c < grid.D(); ++c) w.f32(grid.values(r, c));
  return w.take();
}

FeatureGrid decode_grid(std::string_view bytes, const std::string& what) {
  auto corrupt = [&](const std::string& why) { return Error(ErrorCode::CorruptEntry, what + ": " + why); };
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw corrupt("bad magic");
  ByteReader r(bytes.substr(4));
  if (r.u32() != kVersion) throw corrupt("unsupported version");
  const std::uint32_t L = r.u32();
  const std::uint32_t D = r.u32();
  if (L == 0 || D == 0) throw corrupt("empty grid");
  if (bytes.size() != 16 + static_cast<std::uint64_t>(L) * D * 4) throw corrupt("length mismatch");
  FeatureGrid grid;
  grid.values.resize(L, D);
  for (std::uint32_t i = 0; i < L; ++i)
    for (std::uint32_t j = 0; j < D; ++j) grid.values(i, j) = r.f32();
  return grid;
}

void cache_write(const std::string& image_id, const std::string& backbone, const FeatureGrid& grid,
                 const fs::path& cache_dir) {
  if (grid.L() < 1 || grid.D() < 1 || !grid.values.allFinite())
    throw Error(ErrorCode::ShapeMismatch, image_id + ": grid must be non-empty and finite");
  write_file_atomic(cache_path(image_id, backbone, cache_dir), encode_grid(grid));
}

FeatureGrid cache_read(const std::string& image_id, const std::string& backbone, const fs::path& cache_dir) {
  const fs::path p = cache_path(image_id, backbone, cache_dir);
  if (!fs::exists(p)) throw Error(ErrorCode::CacheMiss, image_id);
  return decode_grid(read_file(p), image_id);
}

}  // namespace mtlcap::features
