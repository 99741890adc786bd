#include "flowprior/tiler.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

#include "flowprior/errors.hpp"

namespace flowprior {

std::vector<AxisSpan> plan_axis(int extent, int patch, int margin) {
  if (extent < 1 || patch < 1 || margin < 0 || patch <= 2 * margin) {
    throw ParameterError("tiling needs extent >= 1 and patch > 2 * margin (extent " + std::to_string(extent) +
                         ", patch " + std::to_string(patch) + ", margin " + std::to_string(margin) + ")");
  }
  if (extent <= patch) return {{0, 0, extent}};
  std::vector<AxisSpan> spans{{0, 0, patch - margin}};
  int start = patch - margin;
  while (extent - start > patch - margin) {
    spans.push_back({start - margin, start, start + patch - 2 * margin});
    start += patch - 2 * margin;
  }
  spans.push_back({extent - patch, start, extent});
  return spans;
}

TileGrid plan(int image_h, int image_w, int patch, int margin) {
  TileGrid grid{image_h, image_w, patch, margin, {}};
  const auto rows = plan_axis(image_h, patch, margin);
  const auto cols = plan_axis(image_w, patch, margin);
  for (const AxisSpan& r : rows)
    for (const AxisSpan& c : cols) {
      grid.tiles.push_back({{r.src, c.src, patch, patch},
                            {r.core_begin, c.core_begin, r.core_end - r.core_begin, c.core_end - c.core_begin}});
    }
  return grid;
}

Tensor extract(const Tensor& image, const Rect& src, double fill) {
  const int ch = image.dim(1), h = image.dim(2), w = image.dim(3);
  Tensor out({1, ch, src.h, src.w}, fill);
  for (int c = 0; c < ch; ++c)
    for (int y = 0; y < src.h; ++y)
      for (int x = 0; x < src.w; ++x) {
        const int iy = src.y + y, ix = src.x + x;
        if (iy < h && ix < w) out.at(0, c, y, x) = image.at(0, c, iy, ix);
      }
  return out;
}

TiledResult restore_tiled(const Tensor& degraded, const Tensor& mask, const TileGrid& grid,
                          const TileRestorer& restore, int workers) {
  require_same_shape(degraded, mask, "tiled restoration mask");
  if (degraded.rank() != 4 || degraded.dim(0) != 1 || degraded.dim(2) != grid.image_h || degraded.dim(3) != grid.image_w) {
    throw ShapeError("tile grid is for " + std::to_string(grid.image_h) + "x" + std::to_string(grid.image_w) +
                     " images, got " + to_string(degraded.shape()));
  }
  TiledResult result{degraded, {}};
  std::mutex failures_lock;
  std::atomic<std::size_t> next{0};
  const int channels = degraded.dim(1);

  auto work = [&] {
    for (std::size_t t = next++; t < grid.tiles.size(); t = next++) {
      const Tile& tile = grid.tiles[t];
      try {
        const Tensor patch = restore(extract(degraded, tile.src, 0.0), extract(mask, tile.src, 0.0), t);
        if (patch.shape() != Shape{1, channels, tile.src.h, tile.src.w}) {
          throw ShapeError("tile restorer returned " + to_string(patch.shape()));
        }
        // Cores are disjoint, so concurrent writes never overlap.
        for (int c = 0; c < channels; ++c)
          for (int y = tile.core.y; y < tile.core.y + tile.core.h; ++y)
            for (int x = tile.core.x; x < tile.core.x + tile.core.w; ++x) {
              result.image.at(0, c, y, x) = patch.at(0, c, y - tile.src.y, x - tile.src.x);
            }
      } catch (const std::exception& e) {
        const std::lock_guard lock(failures_lock);
        result.failures.push_back({t, e.what()});
      }
    }
  };

  const int n = std::clamp(workers, 1, static_cast<int>(std::max<std::size_t>(1, grid.tiles.size())));
  if (n == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(work);
  }
  std::sort(result.failures.begin(), result.failures.end(), [](const auto& a, const auto& b) { return a.tile < b.tile; });
  return result;
}

TiledResult restore_tiled(const FlowModel& model, const RestorationProblem& problem, const Schedule& schedule,
                          const TileGrid& grid, const RestoreOptions& options, int workers) {
  problem.validate();
  if (model.config().height != grid.patch || model.config().width != grid.patch) {
    throw ParameterError("model input is " + std::to_string(model.config().height) + "x" +
                         std::to_string(model.config().width) + " but the tile patch is " + std::to_string(grid.patch));
  }
  auto restore = [&](const Tensor& patch, const Tensor& mask, std::size_t) {
    const RestorationProblem sub{patch, mask, problem.lambda};
    return coarse_to_fine_optimize(model, sub, schedule, options).restored;
  };
  return restore_tiled(problem.degraded, problem.mask, grid, restore, workers);
}

}  // namespace flowprior
