#pragma once

// Synthetic degradations on 0-255 pixel images of shape (N, C, H, W).
// Outputs are rounded to integers and clamped to [0, 255]; masks have the
// image's shape with 1 = valid pixel.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "flowprior/rng.hpp"
#include "flowprior/tensor.hpp"

namespace flowprior {

struct Degradation {
  enum class Kind { gaussian_noise, uniform_noise, block_mask, dct_artifact };

  Kind kind = Kind::gaussian_noise;
  double amount = 0.0;  // sigma for gaussian, half-width for uniform
  int count = 0;        // block_mask: number of blocks, 0 = cover ~10% of the image
  int size = 10;        // block_mask: block edge
  int quality = 50;     // dct_artifact: 1 (harsh) .. 100 (all-ones table)

  static Degradation gaussian(double sigma);
  static Degradation uniform(double half_width);
  static Degradation mask(int count, int size = 10);
  static Degradation dct(int quality);

  std::string to_string() const;
};

struct Degraded {
  Tensor image;
  Tensor mask;
};

Degraded apply(const Degradation& d, const Tensor& image, Rng& rng);

// Left to right; masks combine with AND.
Degraded compose(std::span<const Degradation> chain, const Tensor& image, Rng& rng);

// "gauss:30+unif:40+mask:6x10+dct:10". `mask` alone uses the default count,
// `mask:6` a 10x10 block size.
std::vector<Degradation> parse_degradations(const std::string& spec);

// Standard JPEG luminance table scaled for `quality` with the IJG rule.
std::array<int, 64> quant_table(int quality);

// Number of size x size blocks covering about 10% of an h x w image.
int default_mask_count(int height, int width, int size);

}  // namespace flowprior
