#include "flowprior/toy_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "flowprior/errors.hpp"
#include "flowprior/rng.hpp"

namespace flowprior {

namespace {

double clamp_pixel(double v) { return std::clamp(std::round(v), 0.0, 255.0); }

bool inside(ShapeKind kind, double dx, double dy, double r) {
  switch (kind) {
    case ShapeKind::rect: return std::abs(dx) <= r && std::abs(dy) <= 0.7 * r;
    case ShapeKind::cross: return (std::abs(dx) <= r && std::abs(dy) <= 0.3 * r) || (std::abs(dy) <= r && std::abs(dx) <= 0.3 * r);
    case ShapeKind::disc: return dx * dx + dy * dy <= r * r;
  }
  return false;
}

// Stroke skeletons on a unit square, y down. Curves are polylines.
using Stroke = std::vector<std::array<double, 2>>;

std::vector<Stroke> arc(double cx, double cy, double rx, double ry, double a0, double a1, int pieces = 10) {
  Stroke s;
  for (int i = 0; i <= pieces; ++i) {
    const double a = a0 + (a1 - a0) * i / pieces;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return {s};
}

const std::vector<Stroke>& digit_strokes(int digit) {
  constexpr double pi = std::numbers::pi;
  static const std::array<std::vector<Stroke>, 10> table = [] {
    std::array<std::vector<Stroke>, 10> t;
    t[0] = arc(0.5, 0.5, 0.28, 0.4, 0, 2 * pi, 16);
    t[1] = {{{0.35, 0.25}, {0.52, 0.1}, {0.52, 0.9}}};
    t[2] = arc(0.5, 0.32, 0.26, 0.22, -pi, 0.25 * pi);
    t[2].push_back({{0.68, 0.48}, {0.22, 0.9}, {0.8, 0.9}});
    t[3] = arc(0.48, 0.3, 0.25, 0.2, -0.9 * pi, 0.5 * pi);
    for (const Stroke& s : arc(0.48, 0.7, 0.28, 0.2, -0.5 * pi, 0.9 * pi)) t[3].push_back(s);
    t[4] = {{{0.62, 0.9}, {0.62, 0.1}, {0.2, 0.62}, {0.82, 0.62}}};
    t[5] = {{{0.75, 0.1}, {0.3, 0.1}, {0.27, 0.45}}};
    for (const Stroke& s : arc(0.5, 0.66, 0.27, 0.24, -0.8 * pi, 0.85 * pi)) t[5].push_back(s);
    t[6] = {{{0.66, 0.1}, {0.3, 0.55}}};
    for (const Stroke& s : arc(0.5, 0.68, 0.22, 0.22, 0, 2 * pi, 14)) t[6].push_back(s);
    t[7] = {{{0.2, 0.12}, {0.8, 0.12}, {0.42, 0.9}}};
    t[8] = arc(0.5, 0.3, 0.2, 0.19, 0, 2 * pi, 14);
    for (const Stroke& s : arc(0.5, 0.7, 0.25, 0.21, 0, 2 * pi, 14)) t[8].push_back(s);
    t[9] = arc(0.5, 0.32, 0.22, 0.22, 0, 2 * pi, 14);
    t[9].push_back({{0.72, 0.32}, {0.62, 0.9}});
    return t;
  }();
  return table[static_cast<std::size_t>(digit)];
}

double segment_distance(double px, double py, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double vx = b[0] - a[0], vy = b[1] - a[1];
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - a[0]) * vx + (py - a[1]) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (a[0] + t * vx), dy = py - (a[1] + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Tensor generate_sprite(const SpriteSpec& spec, int index) {
  if (spec.size < 4 || spec.channels < 1) throw ParameterError("sprite size must be >= 4 with >= 1 channel");
  Rng rng = Rng(spec.seed).derive(static_cast<std::uint64_t>(index));
  const int s = spec.size;
  const auto kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));
  std::vector<double> bg(static_cast<std::size_t>(spec.channels)), fg(bg.size());
  for (std::size_t c = 0; c < bg.size(); ++c) {
    bg[c] = rng.uniform(20.0, 100.0);
    fg[c] = rng.uniform(150.0, 235.0);
  }
  const double r = s * rng.uniform(0.18, 0.3);
  const double cx = 0.5 * (s - 1) + s * rng.uniform(-spec.jitter, spec.jitter);
  const double cy = 0.5 * (s - 1) + s * rng.uniform(-spec.jitter, spec.jitter);
  Tensor img({1, spec.channels, s, s});
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const bool on = inside(kind, x - cx, y - cy, r);
      for (int c = 0; c < spec.channels; ++c) {
        const double base = on ? fg[static_cast<std::size_t>(c)] : bg[static_cast<std::size_t>(c)];
        img.at(0, c, y, x) = clamp_pixel(base + spec.noise * rng.normal());
      }
    }
  return img;
}

std::vector<Tensor> generate_sprites(const SpriteSpec& spec, int n) {
  if (n < 0) throw ParameterError("sprite count must be >= 0");
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(generate_sprite(spec, i));
  return out;
}

Tensor generate_digit(int digit, std::uint64_t seed, int index) {
  if (digit < 0 || digit > 9) throw ParameterError("digit must be in 0..9");
  Rng rng = Rng(seed).derive(static_cast<std::uint64_t>(index));
  constexpr int kSide = 28;
  // Unit-square glyph -> 20x20 box centered in 28x28, with jitter.
  const double scale = 18.0 * rng.uniform(0.85, 1.1);
  const double angle = rng.uniform(-0.25, 0.25);
  const double shear = rng.uniform(-0.2, 0.2);
  const double ox = 14.0 + rng.uniform(-1.5, 1.5), oy = 14.0 + rng.uniform(-1.5, 1.5);
  const double pen = rng.uniform(1.0, 1.8);
  const double ca = std::cos(angle), sa = std::sin(angle);
  std::vector<Stroke> strokes = digit_strokes(digit);
  for (Stroke& s : strokes)
    for (auto& p : s) {
      const double u = (p[0] - 0.5 + rng.uniform(-0.02, 0.02)) * scale * 0.8;
      const double v = (p[1] - 0.5 + rng.uniform(-0.02, 0.02)) * scale;
      const double us = u + shear * v;
      p = {ox + ca * us - sa * v, oy + sa * us + ca * v};
    }
  Tensor img({1, 1, kSide, kSide}, 0.0);
  for (int y = 0; y < kSide; ++y)
    for (int x = 0; x < kSide; ++x) {
      double d = 1e9;
      for (const Stroke& s : strokes)
        for (std::size_t k = 0; k + 1 < s.size(); ++k) d = std::min(d, segment_distance(x, y, s[k], s[k + 1]));
      const double ink = std::clamp(pen + 0.5 - d, 0.0, 1.0);
      img.at(0, 0, y, x) = clamp_pixel(255.0 * ink);
    }
  return img;
}

std::vector<Tensor> generate_digits(int n, std::uint64_t seed) {
  if (n < 0) throw ParameterError("digit count must be >= 0");
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(generate_digit(i % 10, seed, i));
  return out;
}

DataSplit split_dataset(std::vector<Tensor> images, double train_fraction) {
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) throw ParameterError("train fraction must be in [0, 1]");
  const auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(images.size())));
  DataSplit split;
  split.train.assign(std::make_move_iterator(images.begin()), std::make_move_iterator(images.begin() + static_cast<std::ptrdiff_t>(cut)));
  split.test.assign(std::make_move_iterator(images.begin() + static_cast<std::ptrdiff_t>(cut)), std::make_move_iterator(images.end()));
  return split;
}

}  // namespace flowprior
