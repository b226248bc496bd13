// SPDX-License-Identifier: Apache-2.0
// Writes the small synthetic dataset under data/toy: shape images with Arabic
// captions, a two-class action set and a three-class CIFAR-format object set.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mtlcap/features.hpp"
#include "mtlcap/fileio.hpp"
#include "mtlcap/rng.hpp"

namespace fs = std::filesystem;
using mtlcap::features::Image;

namespace {

struct Colour {
  const char* masc;
  const char* fem;
  double rgb[3];
};

const Colour kColours[] = {
    {"أحمر", "حمراء", {0.9, 0.1, 0.1}},
    {"أخضر", "خضراء", {0.1, 0.8, 0.2}},
    {"أزرق", "زرقاء", {0.1, 0.2, 0.9}},
    {"أصفر", "صفراء", {0.9, 0.85, 0.1}},
};

Image blank(mtlcap::Rng& rng, double level) {
  Image img;
  img.width = img.height = 32;
  img.pixels.resize(32 * 32 * 3);
  for (double& p : img.pixels) p = level + rng.uniform(-0.03, 0.03);
  return img;
}

void set(Image& img, int y, int x, const double* rgb) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  for (int c = 0; c < 3; ++c) img.pixels[(static_cast<std::size_t>(y) * 32 + static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(c)] = rgb[c];
}

Image shape_image(bool square, const Colour& colour, bool top, int cx, mtlcap::Rng& rng) {
  Image img = blank(rng, 0.15);
  const int cy = top ? 9 : 23;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const int dy = y - cy, dx = x - cx;
      const bool inside = square ? (std::abs(dy) <= 6 && std::abs(dx) <= 6) : (dy * dy + dx * dx <= 49);
      if (inside) set(img, y, x, colour.rgb);
    }
  return img;
}

Image stripes(bool horizontal, double phase, const double* rgb, mtlcap::Rng& rng) {
  Image img = blank(rng, 0.1);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const int t = horizontal ? y : x;
      if ((t + static_cast<int>(phase)) % 8 < 4) set(img, y, x, rgb);
    }
  return img;
}

void write_text(const fs::path& path, const std::string& text) { mtlcap::write_file_atomic(path, text); }

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("data/toy");
  mtlcap::Rng rng(20240601);

  // captions: 16 train images cover every shape/colour/position once; val
  // and test reuse the combinations with the shape shifted sideways
  fs::create_directories(root / "images");
  std::string tokens, train, val, test;
  int index = 0;
  for (int split = 0; split < 3; ++split) {
    for (int s = 0; s < 2; ++s)
      for (int c = 0; c < 4; ++c)
        for (int p = 0; p < 2; ++p) {
          const bool square = s == 0, top = p == 0;
          if (split > 0 && (s * 8 + c * 2 + p) % 4 != (split == 1 ? 1 : 2)) continue;
          const int cx = split == 0 ? 16 : (split == 1 ? 13 : 19);
          char name[32];
          std::snprintf(name, sizeof name, "img%03d.ppm", index++);
          mtlcap::features::write_ppm(shape_image(square, kColours[c], top, cx, rng), root / "images" / name);
          std::string caption = square ? std::string("مربع ") + kColours[c].masc : std::string("دائرة ") + kColours[c].fem;
          caption += top ? " في الأعلى" : " في الأسفل";
          tokens += std::string(name) + "#0\t" + caption + "\n";
          (split == 0 ? train : split == 1 ? val : test) += std::string(name) + "\n";
        }
  }
  write_text(root / "captions.token.txt", tokens);
  write_text(root / "train.txt", train);
  write_text(root / "val.txt", val);
  write_text(root / "test.txt", test);

  // action: horizontal stripes are "run", vertical ones "walk"
  for (const char* split : {"train", "val"}) {
    const int per_class = std::string(split) == "train" ? 6 : 2;
    for (int cls = 0; cls < 2; ++cls) {
      const fs::path dir = root / "action" / split / (cls == 0 ? "run" : "walk");
      fs::create_directories(dir);
      for (int i = 0; i < per_class; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%02d.ppm", i);
        const auto& colour = kColours[static_cast<std::size_t>(i) % 4].rgb;
        mtlcap::features::write_ppm(stripes(cls == 0, rng.uniform(0.0, 8.0), colour, rng), dir / name);
      }
    }
  }

  // object: dominant colour, CIFAR-100 record layout (coarse, fine, RGB planes)
  fs::create_directories(root / "object");
  write_text(root / "object" / "classes.txt", "red\ngreen\nblue\n");
  for (const char* split : {"train", "test"}) {
    const int per_class = std::string(split) == "train" ? 6 : 2;
    std::string bytes;
    for (int i = 0; i < per_class; ++i)
      for (int cls = 0; cls < 3; ++cls) {
        bytes += static_cast<char>(0);
        bytes += static_cast<char>(cls);
        for (int c = 0; c < 3; ++c)
          for (int px = 0; px < 1024; ++px) {
            double v = (c == cls ? 0.7 : 0.2) + rng.uniform(-0.2, 0.2);
            bytes += static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
          }
      }
    write_text(root / "object" / (std::string(split) + ".bin"), bytes);
  }
  std::printf("wrote toy data to %s\n", root.string().c_str());
  return 0;
}
