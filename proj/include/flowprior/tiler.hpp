#pragma once

// Patch-wise restoration: overlapping source patches, disjoint cores.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "flowprior/model.hpp"
#include "flowprior/restoration.hpp"
#include "flowprior/tensor.hpp"

namespace flowprior {

struct Rect {
  int y = 0, x = 0, h = 0, w = 0;
  bool operator==(const Rect&) const = default;
};

struct Tile {
  Rect src;   // patch x patch; may run past the image when the image is smaller
  Rect core;  // written back, always inside the image
};

struct TileGrid {
  int image_h = 0, image_w = 0;
  int patch = 64, margin = 4;
  std::vector<Tile> tiles;
};

// One axis: (src begin, core begin, core end) triples.
struct AxisSpan {
  int src = 0, core_begin = 0, core_end = 0;
};
std::vector<AxisSpan> plan_axis(int extent, int patch, int margin);

TileGrid plan(int image_h, int image_w, int patch = 64, int margin = 4);

// Cuts tile `t` out of a (1, C, H, W) tensor; pixels outside the image are
// `fill`.
Tensor extract(const Tensor& image, const Rect& src, double fill);

struct TileFailure {
  std::size_t tile = 0;
  std::string message;
};

struct TiledResult {
  Tensor image;
  std::vector<TileFailure> failures;
};

// Restores one patch (model range) given its mask; returns the patch.
using TileRestorer = std::function<Tensor(const Tensor& patch, const Tensor& mask, std::size_t tile)>;

// `degraded` and `mask` are (1, C, H, W). Failed tiles keep the degraded
// pixels and are listed in the result. `workers` threads share the tiles.
TiledResult restore_tiled(const Tensor& degraded, const Tensor& mask, const TileGrid& grid,
                          const TileRestorer& restore, int workers = 1);

// MAP restoration of every tile with a shared read-only model.
TiledResult restore_tiled(const FlowModel& model, const RestorationProblem& problem, const Schedule& schedule,
                          const TileGrid& grid, const RestoreOptions& options = {}, int workers = 1);

}  // namespace flowprior
