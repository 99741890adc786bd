#pragma once

#include <cstdint>
#include <vector>

#include "flowprior/tensor.hpp"

namespace flowprior {

enum class ShapeKind { rect, cross, disc };

struct SpriteSpec {
  int size = 32;
  int channels = 1;
  double jitter = 0.25;  // max center offset as a fraction of the size
  double noise = 12.0;   // background/foreground noise sd, 0-255 scale
  std::uint64_t seed = 0;
};

// Image i depends only on (seed, i), so datasets of different length share
// a prefix. Pixels are integers in [0, 255], shape (1, C, size, size).
std::vector<Tensor> generate_sprites(const SpriteSpec& spec, int n);
Tensor generate_sprite(const SpriteSpec& spec, int index);

// Hand-drawn-looking 28x28 digits (strokes rendered with random affine
// jitter and pen width). Stand-in for MNIST when no IDX file is given.
std::vector<Tensor> generate_digits(int n, std::uint64_t seed);
Tensor generate_digit(int digit, std::uint64_t seed, int index);

struct DataSplit {
  std::vector<Tensor> train;
  std::vector<Tensor> test;
};

// First `train_fraction` of the indices train, the rest test.
DataSplit split_dataset(std::vector<Tensor> images, double train_fraction = 0.9);

}  // namespace flowprior
