#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "flowprior/model.hpp"
#include "flowprior/tensor.hpp"
#include "flowprior/training.hpp"

namespace flowprior {

// ---------------------------------------------------------------------------
// Pixmaps: binary P5 (grayscale) and P6 (RGB), maxval 255. Images are
// (1, C, H, W) tensors on the 0-255 scale; writing rounds and clamps.

Tensor read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Tensor& image);

// Masks are stored as P5 with 0 / 255 and loaded back as 0 / 1.
Tensor read_mask(const std::string& path, int channels);
void write_mask(const std::string& path, const Tensor& mask);

// ---------------------------------------------------------------------------
// IDX (MNIST). Images come back as (1, 1, rows, cols) tensors in [0, 255].

std::vector<Tensor> read_idx_images(const std::string& path);
std::vector<Tensor> parse_idx_images(const std::vector<std::uint8_t>& bytes);
std::vector<int> read_idx_labels(const std::string& path);
void write_idx_images(const std::string& path, const std::vector<Tensor>& images);

// Zero-pads (1, C, h, w) images to (1, C, height, width), centered.
Tensor pad_image(const Tensor& image, int height, int width);
std::vector<Tensor> pad_images(const std::vector<Tensor>& images, int height, int width);

// ---------------------------------------------------------------------------
// PSNR on the 0-255 scale. Identical inputs give +infinity.

inline constexpr double kPsnrCap = 99.0;
double psnr(const Tensor& a, const Tensor& b, double peak = 255.0);
double psnr_capped(const Tensor& a, const Tensor& b, double peak = 255.0);

// ---------------------------------------------------------------------------
// Config files: one `key = value` per line, `#` comments. A `preset` key
// (first) loads a preset that later keys override.

std::string format_config(const TrainConfig& config);
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  FlowModel model;
  long step = 0;
  std::optional<AdamState> adam;
};

void save_checkpoint(const std::string& path, const TrainConfig& config, FlowModel& model, long step,
                     const AdamState* adam = nullptr);
void write_checkpoint(std::ostream& out, const TrainConfig& config, FlowModel& model, long step,
                      const AdamState* adam);
Checkpoint load_checkpoint(const std::string& path);
Checkpoint read_checkpoint(std::istream& in);

std::vector<std::uint8_t> read_file(const std::string& path);

}  // namespace flowprior
