// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mtlcap::features {

/// L spatial positions (row-major H*W) by D channels of backbone output.
struct FeatureGrid {
  Eigen::MatrixXf values;  // L x D

  int L() const { return static_cast<int>(values.rows()); }
  int D() const { return static_cast<int>(values.cols()); }
  bool operator==(const FeatureGrid& o) const {
    return values.rows() == o.values.rows() && values.cols() == o.values.cols() && values == o.values;
  }
};

enum class BackboneName { ResNet, VggNet, Toy };

std::string backbone_name(BackboneName name);
BackboneName parse_backbone_name(const std::string& text);

struct BackboneSpec {
  BackboneName name = BackboneName::Toy;
  int output_L = 16;
  int output_D = 32;
  std::string weights_ref;
  std::uint64_t seed = 0;  // toy projection seed
  /// External provider command for resnet/vggnet, run as
  /// `<command> <image> <output.afgr>`. Empty means no provider.
  std::string command;

  static BackboneSpec toy(std::uint64_t seed);
  static BackboneSpec resnet(std::string weights_ref, std::string command = {});
  static BackboneSpec vggnet(std::string weights_ref, std::string command = {});
};

/// Decoded image, HWC layout, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // height * width * 3

  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(c)];
  }
};

/// Binary/ASCII PPM (P6, P3) and PGM (P5) decoding.
Image decode_image(const std::filesystem::path& path);
void write_ppm(const Image& image, const std::filesystem::path& path);
/// Area-averaging resample.
Image resize(const Image& image, int width, int height);
/// CIFAR channel-major bytes to an Image.
Image image_from_cifar(std::span<const std::uint8_t> pixels);

inline constexpr int kToySide = 32;
inline constexpr int kToyCells = 16;
inline constexpr int kToyCellValues = 12;
inline constexpr int kToyChannels = 32;

/// The fixed 12 x 32 projection used by the toy backbone.
Eigen::MatrixXd toy_projection(std::uint64_t seed);

/// 32x32x3 image -> 4x4 average pool to 8x8x3 -> each of the 4x4 cells
/// carries its 2x2x3 block (12 values, ordered dy, dx, c) -> project to 32
/// channels -> ReLU.
FeatureGrid toy_backbone(const Image& pixels, std::uint64_t seed);

class BackboneProvider {
 public:
  virtual ~BackboneProvider() = default;
  virtual FeatureGrid extract(const std::filesystem::path& image_path) const = 0;
};

/// Throws ProviderUnavailable when the BackboneSpec names a backbone with no runtime.
std::unique_ptr<BackboneProvider> make_provider(const BackboneSpec& spec);

FeatureGrid extract_features(const std::filesystem::path& image_path, const BackboneSpec& spec);

std::filesystem::path cache_path(const std::string& image_id, const std::string& backbone,
                                 const std::filesystem::path& cache_dir);
std::string encode_grid(const FeatureGrid& grid);
FeatureGrid decode_grid(std::string_view bytes, const std::string& what);
void cache_write(const std::string& image_id, const std::string& backbone, const FeatureGrid& grid,
                 const std::filesystem::path& cache_dir);
FeatureGrid cache_read(const std::string& image_id, const std::string& backbone,
                       const std::filesystem::path& cache_dir);

}  // namespace mtlcap::features
