#include "flowprior/degrade.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "flowprior/errors.hpp"

namespace flowprior {

namespace {

constexpr std::array<int, 64> kLuminance = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

void require_pixels(const Tensor& image) {
  if (image.rank() != 4) throw ShapeError("degrade expects an (N, C, H, W) image, got " + to_string(image.shape()));
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double p = image[i];
    if (!(p >= 0.0 && p <= 255.0) || p != std::floor(p)) {
      throw ValidationError("degrade: entry " + std::to_string(i) + " is not an integer pixel in [0, 255]");
    }
  }
}

double to_pixel(double v) { return std::clamp(std::round(v), 0.0, 255.0); }

Tensor add_noise(const Tensor& image, auto&& draw) {
  Tensor out = image;
  for (double& v : out.data()) v = to_pixel(v + draw());
  return out;
}

// Orthonormal 8-point DCT-II basis, row k = frequency.
const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int k = 0; k < 8; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int n = 0; n < 8; ++n) b[static_cast<std::size_t>(k * 8 + n)] = a * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
    }
    return b;
  }();
  return basis;
}

// block = B * block * B^T (forward) or B^T * block * B (inverse).
void transform8x8(std::array<double, 64>& block, bool inverse) {
  const auto& b = dct_basis();
  std::array<double, 64> tmp{};
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) {
        const double coef = inverse ? b[static_cast<std::size_t>(k * 8 + i)] : b[static_cast<std::size_t>(i * 8 + k)];
        acc += coef * block[static_cast<std::size_t>(k * 8 + j)];
      }
      tmp[static_cast<std::size_t>(i * 8 + j)] = acc;
    }
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 8; ++k) {
        const double coef = inverse ? b[static_cast<std::size_t>(k * 8 + j)] : b[static_cast<std::size_t>(j * 8 + k)];
        acc += tmp[static_cast<std::size_t>(i * 8 + k)] * coef;
      }
      block[static_cast<std::size_t>(i * 8 + j)] = acc;
    }
}

Tensor dct_artifact(const Tensor& image, int quality) {
  const std::array<int, 64> table = quant_table(quality);
  Tensor out = image;
  const int n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  std::array<double, 64> block{};
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int by = 0; by < h; by += 8)
        for (int bx = 0; bx < w; bx += 8) {
          // Partial edge blocks replicate the last row / column.
          for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
              const int sy = std::min(by + y, h - 1), sx = std::min(bx + x, w - 1);
              block[static_cast<std::size_t>(y * 8 + x)] = image.at(s, ch, sy, sx) - 128.0;
            }
          transform8x8(block, false);
          for (std::size_t k = 0; k < 64; ++k) block[k] = std::round(block[k] / table[k]) * table[k];
          transform8x8(block, true);
          for (int y = 0; y < 8 && by + y < h; ++y)
            for (int x = 0; x < 8 && bx + x < w; ++x)
              out.at(s, ch, by + y, bx + x) = to_pixel(block[static_cast<std::size_t>(y * 8 + x)] + 128.0);
        }
  return out;
}

Degraded block_mask(const Tensor& image, int count, int size, Rng& rng) {
  const int n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  if (size < 1 || size > h || size > w) {
    throw ParameterError("mask block " + std::to_string(size) + "x" + std::to_string(size) +
                         " does not fit a " + std::to_string(h) + "x" + std::to_string(w) + " image");
  }
  if (count < 0) throw ParameterError("mask block count must be >= 0");
  if (count == 0) count = default_mask_count(h, w, size);
  Degraded out{image, Tensor(image.shape(), 1.0)};
  for (int s = 0; s < n; ++s)
    for (int b = 0; b < count; ++b) {
      const int y0 = rng.uniform_int(0, h - size);
      const int x0 = rng.uniform_int(0, w - size);
      for (int ch = 0; ch < c; ++ch)
        for (int y = y0; y < y0 + size; ++y)
          for (int x = x0; x < x0 + size; ++x) {
            out.image.at(s, ch, y, x) = 0.0;
            out.mask.at(s, ch, y, x) = 0.0;
          }
    }
  return out;
}

int parse_int(std::string_view text, const std::string& token) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("degradation '" + token + "': '" + std::string(text) + "' is not an integer");
  }
  return value;
}

double parse_double(const std::string& text, const std::string& token) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw ParseError("degradation '" + token + "': '" + text + "' is not a number");
  }
  return value;
}

}  // namespace

Degradation Degradation::gaussian(double sigma) {
  if (!(sigma >= 0.0)) throw ParameterError("gaussian sigma must be >= 0");
  Degradation d;
  d.kind = Kind::gaussian_noise;
  d.amount = sigma;
  return d;
}

Degradation Degradation::uniform(double half_width) {
  if (!(half_width >= 0.0)) throw ParameterError("uniform half-width must be >= 0");
  Degradation d;
  d.kind = Kind::uniform_noise;
  d.amount = half_width;
  return d;
}

Degradation Degradation::mask(int count, int size) {
  if (count < 0 || size < 1) throw ParameterError("mask needs count >= 0 and size >= 1");
  Degradation d;
  d.kind = Kind::block_mask;
  d.count = count;
  d.size = size;
  return d;
}

Degradation Degradation::dct(int quality) {
  if (quality < 1 || quality > 100) throw ParameterError("dct quality must be in [1, 100]");
  Degradation d;
  d.kind = Kind::dct_artifact;
  d.quality = quality;
  return d;
}

std::string Degradation::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::gaussian_noise: os << "gauss:" << amount; break;
    case Kind::uniform_noise: os << "unif:" << amount; break;
    case Kind::block_mask: os << "mask:" << count << 'x' << size; break;
    case Kind::dct_artifact: os << "dct:" << quality; break;
  }
  return os.str();
}

std::array<int, 64> quant_table(int quality) {
  quality = std::clamp(quality, 1, 100);
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> t{};
  for (std::size_t i = 0; i < 64; ++i) t[i] = std::clamp((kLuminance[i] * scale + 50) / 100, 1, 255);
  return t;
}

int default_mask_count(int height, int width, int size) {
  const double blocks = 0.1 * height * width / (static_cast<double>(size) * size);
  return std::max(1, static_cast<int>(std::lround(blocks)));
}

Degraded apply(const Degradation& d, const Tensor& image, Rng& rng) {
  require_pixels(image);
  switch (d.kind) {
    case Degradation::Kind::gaussian_noise:
      return {add_noise(image, [&] { return d.amount * rng.normal(); }), Tensor(image.shape(), 1.0)};
    case Degradation::Kind::uniform_noise:
      return {add_noise(image, [&] { return rng.uniform(-d.amount, d.amount); }), Tensor(image.shape(), 1.0)};
    case Degradation::Kind::block_mask:
      return block_mask(image, d.count, d.size, rng);
    case Degradation::Kind::dct_artifact:
      return {dct_artifact(image, d.quality), Tensor(image.shape(), 1.0)};
  }
  throw ContractError("unknown degradation kind");
}

Degraded compose(std::span<const Degradation> chain, const Tensor& image, Rng& rng) {
  if (chain.empty()) throw ParameterError("compose needs at least one degradation");
  Degraded acc{image, Tensor(image.shape(), 1.0)};
  for (const Degradation& d : chain) {
    Degraded next = apply(d, acc.image, rng);
    for (std::size_t i = 0; i < next.mask.size(); ++i) next.mask[i] = next.mask[i] * acc.mask[i];
    acc = std::move(next);
  }
  return acc;
}

std::vector<Degradation> parse_degradations(const std::string& spec) {
  std::vector<Degradation> out;
  std::stringstream ss(spec);
  std::string token;
  while (std::getline(ss, token, '+')) {
    const auto colon = token.find(':');
    const std::string name = token.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : token.substr(colon + 1);
    if (name == "gauss") {
      out.push_back(Degradation::gaussian(parse_double(arg, token)));
    } else if (name == "unif") {
      out.push_back(Degradation::uniform(parse_double(arg, token)));
    } else if (name == "dct" || name == "jpeg") {
      out.push_back(Degradation::dct(parse_int(arg, token)));
    } else if (name == "mask") {
      if (arg.empty()) {
        out.push_back(Degradation::mask(0));
      } else {
        const auto x = arg.find('x');
        const int count = parse_int(std::string_view(arg).substr(0, x), token);
        const int size = x == std::string::npos ? 10 : parse_int(std::string_view(arg).substr(x + 1), token);
        out.push_back(Degradation::mask(count, size));
      }
    } else {
      throw ParseError("unknown degradation '" + token + "' (gauss:S, unif:A, mask:NxS, dct:Q)");
    }
  }
  if (out.empty()) throw ParseError("empty degradation spec");
  return out;
}

}  // namespace flowprior
