#include "flowprior/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include "flowprior/errors.hpp"

namespace flowprior {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

// --- pixmap header ---------------------------------------------------------

struct PnmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_space();
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') t += static_cast<char>(bytes[pos++]);
    if (t.empty()) throw ParseError(path + ": truncated pixmap header at byte " + std::to_string(pos));
    return t;
  };
  auto number = [&](const char* what) {
    const std::size_t at = pos;
    const std::string t = token();
    if (!std::all_of(t.begin(), t.end(), [](char ch) { return ch >= '0' && ch <= '9'; }) || t.size() > 9) {
      throw ParseError(path + ": bad " + std::string(what) + " '" + t + "' near byte " + std::to_string(at));
    }
    return std::stoi(t);
  };
  PnmHeader h;
  h.magic = token();
  if (h.magic != "P5" && h.magic != "P6") throw ParseError(path + ": not a binary P5/P6 pixmap (magic '" + h.magic + "')");
  h.width = number("width");
  h.height = number("height");
  h.maxval = number("maxval");
  if (h.maxval != 255) throw ParseError(path + ": maxval " + std::to_string(h.maxval) + " unsupported, expected 255");
  if (h.width < 1 || h.height < 1) throw ParseError(path + ": empty image");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ParseError(path + ": missing whitespace after header");
  h.data_offset = pos + 1;
  return h;
}

// --- big-endian IDX --------------------------------------------------------

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) | b[at + 3];
}

struct IdxHeader {
  std::vector<std::uint32_t> dims;
  std::size_t data_offset = 0;
};

IdxHeader parse_idx_header(const std::vector<std::uint8_t>& b, std::uint32_t expected_magic, std::size_t rank) {
  if (b.size() < 4) throw ParseError("IDX: truncated magic at byte 0 (file has " + std::to_string(b.size()) + " bytes)");
  const std::uint32_t magic = read_be32(b, 0);
  if (magic != expected_magic) {
    std::ostringstream os;
    os << "IDX: bad magic 0x" << std::hex << magic << " at byte 0, expected 0x" << expected_magic;
    throw ParseError(os.str());
  }
  IdxHeader h;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t at = 4 + 4 * i;
    if (b.size() < at + 4) throw ParseError("IDX: truncated dimension " + std::to_string(i) + " at byte " + std::to_string(at));
    h.dims.push_back(read_be32(b, at));
  }
  h.data_offset = 4 + 4 * rank;
  std::size_t payload = 1;
  for (std::uint32_t d : h.dims) payload *= d;
  if (b.size() - h.data_offset < payload) {
    throw ParseError("IDX: truncated payload at byte " + std::to_string(b.size()) + ": expected " +
                     std::to_string(payload) + " bytes after the header, found " +
                     std::to_string(b.size() - h.data_offset));
  }
  return h;
}

// --- little-endian checkpoint primitives -----------------------------------

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) f64(v);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::uint8_t u8() {
    const int c = in_.get();
    if (c == std::char_traits<char>::eof()) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
    ++pos_;
    return static_cast<std::uint8_t>(c);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{u8()} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{u8()} << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > (1u << 24)) throw ParseError("checkpoint: implausible string length at byte " + std::to_string(pos_));
    std::string s(n, '\0');
    for (auto& ch : s) ch = static_cast<char>(u8());
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = str();
    const std::uint32_t rank = u32();
    if (rank > 8) throw ParseError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(u32()));
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = f64();
    return {std::move(name), Tensor(shape, std::move(data))};
  }
  std::size_t position() const { return pos_; }

 private:
  std::istream& in_;
  std::size_t pos_ = 0;
};

// --- config keys -----------------------------------------------------------

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string encoder_name(EncoderKind k) { return k == EncoderKind::deep ? "deep" : "single_conv"; }

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

long parse_long(const std::string& v) {
  std::size_t used = 0;
  const long out = std::stol(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return out;
}

double parse_real(const std::string& v) {
  std::size_t used = 0;
  const double out = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(v);
}

template <typename T>
Field int_field(T TrainConfig::*member) {
  return {[member](const TrainConfig& c) { return std::to_string(c.*member); },
          [member](TrainConfig& c, const std::string& v) { c.*member = static_cast<T>(parse_long(v)); }};
}

template <typename T>
Field model_int(T ModelConfig::*member) {
  return {[member](const TrainConfig& c) { return std::to_string(c.model.*member); },
          [member](TrainConfig& c, const std::string& v) { c.model.*member = static_cast<T>(parse_long(v)); }};
}

Field real_field(double TrainConfig::*member) {
  return {[member](const TrainConfig& c) { return format_double(c.*member); },
          [member](TrainConfig& c, const std::string& v) { c.*member = parse_real(v); }};
}

Field model_bool(bool ModelConfig::*member) {
  return {[member](const TrainConfig& c) { return std::string(c.model.*member ? "true" : "false"); },
          [member](TrainConfig& c, const std::string& v) { c.model.*member = parse_bool(v); }};
}

Field seed_field(std::uint64_t TrainConfig::*member) {
  return {[member](const TrainConfig& c) { return std::to_string(c.*member); },
          [member](TrainConfig& c, const std::string& v) { c.*member = std::stoull(v); }};
}

const std::vector<std::pair<std::string, Field>>& config_fields() {
  static const std::vector<std::pair<std::string, Field>> fields = {
      {"channels", model_int(&ModelConfig::channels)},
      {"height", model_int(&ModelConfig::height)},
      {"width", model_int(&ModelConfig::width)},
      {"levels", model_int(&ModelConfig::levels)},
      {"steps", model_int(&ModelConfig::steps)},
      {"hidden", model_int(&ModelConfig::hidden)},
      {"blocks", model_int(&ModelConfig::blocks)},
      {"encoder",
       {[](const TrainConfig& c) { return encoder_name(c.model.encoder); },
        [](TrainConfig& c, const std::string& v) {
          if (v == "deep") c.model.encoder = EncoderKind::deep;
          else if (v == "single_conv") c.model.encoder = EncoderKind::single_conv;
          else throw std::invalid_argument(v);
        }}},
      {"encoder_hidden", model_int(&ModelConfig::encoder_hidden)},
      {"encoder_dropout",
       {[](const TrainConfig& c) { return format_double(c.model.encoder_dropout); },
        [](TrainConfig& c, const std::string& v) { c.model.encoder_dropout = parse_real(v); }}},
      {"learn_base_mean", model_bool(&ModelConfig::learn_base_mean)},
      {"learn_base_std", model_bool(&ModelConfig::learn_base_std)},
      {"init_seed",
       {[](const TrainConfig& c) { return std::to_string(c.model.init_seed); },
        [](TrainConfig& c, const std::string& v) { c.model.init_seed = std::stoull(v); }}},
      {"learning_rate", real_field(&TrainConfig::learning_rate)},
      {"batch_size", int_field(&TrainConfig::batch_size)},
      {"total_steps", int_field(&TrainConfig::total_steps)},
      {"grad_clip_value", real_field(&TrainConfig::grad_clip_value)},
      {"grad_clip_norm", real_field(&TrainConfig::grad_clip_norm)},
      {"beta_ln", real_field(&TrainConfig::beta_ln)},
      {"beta_ae", real_field(&TrainConfig::beta_ae)},
      {"beta_in", real_field(&TrainConfig::beta_in)},
      {"latent_noise", real_field(&TrainConfig::latent_noise)},
      {"image_noise", real_field(&TrainConfig::image_noise)},
      {"seed", seed_field(&TrainConfig::seed)},
      {"checkpoint_every", int_field(&TrainConfig::checkpoint_every)},
  };
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Pixmaps

Tensor read_pnm(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  const PnmHeader h = parse_pnm_header(bytes, path);
  const int c = h.magic == "P6" ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(c) * static_cast<std::size_t>(h.width) * static_cast<std::size_t>(h.height);
  if (bytes.size() - h.data_offset < need) {
    throw ParseError(path + ": payload has " + std::to_string(bytes.size() - h.data_offset) + " bytes, header declares " +
                     std::to_string(need));
  }
  Tensor img({1, c, h.height, h.width});
  for (int y = 0; y < h.height; ++y)
    for (int x = 0; x < h.width; ++x)
      for (int ch = 0; ch < c; ++ch) {
        img.at(0, ch, y, x) = bytes[h.data_offset + static_cast<std::size_t>((y * h.width + x) * c + ch)];
      }
  return img;
}

void write_pnm(const std::string& path, const Tensor& image) {
  if (image.rank() != 4 || image.dim(0) != 1 || (image.dim(1) != 1 && image.dim(1) != 3)) {
    throw ShapeError("write_pnm needs a (1, 1|3, H, W) image, got " + to_string(image.shape()));
  }
  const int c = image.dim(1), h = image.dim(2), w = image.dim(3);
  std::ofstream out = open_out(path);
  out << (c == 3 ? "P6" : "P5") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<char> payload;
  payload.reserve(static_cast<std::size_t>(c * h * w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) payload.push_back(static_cast<char>(to_byte(image.at(0, ch, y, x))));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

Tensor read_mask(const std::string& path, int channels) {
  const Tensor raw = read_pnm(path);
  if (raw.dim(1) != 1) throw ParseError(path + ": masks must be P5 grayscale");
  Tensor mask({1, channels, raw.dim(2), raw.dim(3)});
  for (int ch = 0; ch < channels; ++ch)
    for (int y = 0; y < raw.dim(2); ++y)
      for (int x = 0; x < raw.dim(3); ++x) mask.at(0, ch, y, x) = raw.at(0, 0, y, x) >= 128.0 ? 1.0 : 0.0;
  return mask;
}

void write_mask(const std::string& path, const Tensor& mask) {
  // A pixel is valid only if it is valid in every channel.
  Tensor img({1, 1, mask.dim(2), mask.dim(3)}, 255.0);
  for (int ch = 0; ch < mask.dim(1); ++ch)
    for (int y = 0; y < mask.dim(2); ++y)
      for (int x = 0; x < mask.dim(3); ++x)
        if (mask.at(0, ch, y, x) < 0.5) img.at(0, 0, y, x) = 0.0;
  write_pnm(path, img);
}

// ---------------------------------------------------------------------------
// IDX

std::vector<Tensor> parse_idx_images(const std::vector<std::uint8_t>& bytes) {
  const IdxHeader h = parse_idx_header(bytes, 0x00000803u, 3);
  const auto n = h.dims[0], rows = h.dims[1], cols = h.dims[2];
  if (n > 0 && (rows == 0 || cols == 0)) throw ParseError("IDX: zero image extent in header bytes 8-15");
  std::vector<Tensor> out;
  out.reserve(n);
  const std::size_t per = static_cast<std::size_t>(rows) * cols;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::vector<double> px(per);
    for (std::size_t k = 0; k < per; ++k) px[k] = bytes[h.data_offset + i * per + k];
    out.emplace_back(Shape{1, 1, static_cast<int>(rows), static_cast<int>(cols)}, std::move(px));
  }
  return out;
}

std::vector<Tensor> read_idx_images(const std::string& path) {
  try {
    return parse_idx_images(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::vector<int> read_idx_labels(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  const IdxHeader h = parse_idx_header(bytes, 0x00000801u, 1);
  std::vector<int> out(h.dims[0]);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = bytes[h.data_offset + i];
  return out;
}

void write_idx_images(const std::string& path, const std::vector<Tensor>& images) {
  std::ofstream out = open_out(path);
  auto be32 = [&](std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
    out.write(b, 4);
  };
  const int rows = images.empty() ? 28 : images[0].dim(2);
  const int cols = images.empty() ? 28 : images[0].dim(3);
  be32(0x00000803u);
  be32(static_cast<std::uint32_t>(images.size()));
  be32(static_cast<std::uint32_t>(rows));
  be32(static_cast<std::uint32_t>(cols));
  for (const Tensor& img : images) {
    if (img.shape() != Shape{1, 1, rows, cols}) throw ShapeError("write_idx_images: mixed or non-grayscale image shapes");
    for (double v : img.data()) out.put(static_cast<char>(to_byte(v)));
  }
  if (!out) throw Error("failed writing '" + path + "'");
}

Tensor pad_image(const Tensor& image, int height, int width) {
  const int c = image.dim(1), h = image.dim(2), w = image.dim(3);
  if (h > height || w > width) throw ShapeError("pad_image: " + to_string(image.shape()) + " does not fit the target size");
  Tensor out({1, c, height, width}, 0.0);
  const int oy = (height - h) / 2, ox = (width - w) / 2;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(0, ch, y + oy, x + ox) = image.at(0, ch, y, x);
  return out;
}

std::vector<Tensor> pad_images(const std::vector<Tensor>& images, int height, int width) {
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const Tensor& img : images) out.push_back(pad_image(img, height, width));
  return out;
}

// ---------------------------------------------------------------------------
// PSNR

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require_same_shape(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(peak) - 10.0 * std::log10(se / static_cast<double>(a.size()));
}

double psnr_capped(const Tensor& a, const Tensor& b, double peak) { return std::min(psnr(a, b, peak), kPsnrCap); }

// ---------------------------------------------------------------------------
// Config

std::string format_config(const TrainConfig& config) {
  std::ostringstream os;
  for (const auto& [key, field] : config_fields()) os << key << " = " << field.get(config) << '\n';
  return os.str();
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "preset") {
      cfg = TrainConfig::preset(value);
      continue;
    }
    const auto& fields = config_fields();
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.first == key; });
    if (it == fields.end()) throw ParseError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    try {
      it->second.set(cfg, value);
    } catch (const std::logic_error&) {
      throw ParseError("config line " + std::to_string(line_no) + ": bad value '" + value + "' for '" + key + "'");
    }
  }
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  try {
    return parse_config(std::string(bytes.begin(), bytes.end()));
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_checkpoint(std::ostream& out, const TrainConfig& config, FlowModel& model, long step,
                      const AdamState* adam) {
  Writer w(out);
  out.write("FLPR", 4);
  w.u8(kCheckpointVersion);
  w.str(format_config(config));
  w.u64(static_cast<std::uint64_t>(step));
  const std::vector<ParamRef> params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const ParamRef& p : params) w.tensor(p.name, *p.value);
  const auto flags = model.actnorm_flags();
  w.u32(static_cast<std::uint32_t>(flags.size()));
  for (const auto& [name, flag] : flags) {
    w.str(name);
    w.u8(*flag ? 1 : 0);
  }
  w.u8(adam ? 1 : 0);
  if (adam) {
    w.u64(static_cast<std::uint64_t>(adam->step));
    w.f64(adam->beta1);
    w.f64(adam->beta2);
    w.f64(adam->eps);
    w.u32(static_cast<std::uint32_t>(adam->first.size()));
    for (std::size_t i = 0; i < adam->first.size(); ++i) {
      w.tensor("m" + std::to_string(i), adam->first[i]);
      w.tensor("v" + std::to_string(i), adam->second[i]);
    }
  }
  if (!out) throw Error("checkpoint write failed");
}

void save_checkpoint(const std::string& path, const TrainConfig& config, FlowModel& model, long step,
                     const AdamState* adam) {
  // Write to a side file first so a crash never leaves a half-written checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out = open_out(tmp);
    write_checkpoint(out, config, model, step, adam);
    out.close();
    if (!out) throw Error("failed writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move checkpoint into place at '" + path + "'");
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader r(in);
  char magic[4] = {};
  for (char& ch : magic) ch = static_cast<char>(r.u8());
  if (std::memcmp(magic, "FLPR", 4) != 0) throw ParseError("checkpoint: bad magic at byte 0, expected 'FLPR'");
  const std::uint8_t version = r.u8();
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: format version " + std::to_string(version) + " at byte 4, this build reads version " +
                     std::to_string(kCheckpointVersion));
  }
  const TrainConfig config = parse_config(r.str());
  const long step = static_cast<long>(r.u64());
  Checkpoint ck{config, FlowModel(config.model), step, std::nullopt};

  std::map<std::string, Tensor*> by_name;
  for (const ParamRef& p : ck.model.parameters()) by_name[p.name] = p.value;
  const std::uint32_t count = r.u32();
  if (count != by_name.size()) {
    throw ParseError("checkpoint: " + std::to_string(count) + " tensors stored, model has " + std::to_string(by_name.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.position();
    auto [name, t] = r.tensor();
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError("checkpoint: unknown tensor '" + name + "' at byte " + std::to_string(at));
    if (it->second->shape() != t.shape()) {
      throw ParseError("checkpoint: tensor '" + name + "' has shape " + to_string(t.shape()) + ", model expects " +
                       to_string(it->second->shape()));
    }
    *it->second = std::move(t);
  }
  std::map<std::string, bool*> flags;
  for (const auto& [name, flag] : ck.model.actnorm_flags()) flags[name] = flag;
  const std::uint32_t nflags = r.u32();
  for (std::uint32_t i = 0; i < nflags; ++i) {
    const std::string name = r.str();
    const bool value = r.u8() != 0;
    const auto it = flags.find(name);
    if (it == flags.end()) throw ParseError("checkpoint: unknown actnorm flag '" + name + "'");
    *it->second = value;
  }
  if (r.u8() != 0) {
    AdamState adam;
    adam.step = static_cast<long>(r.u64());
    adam.beta1 = r.f64();
    adam.beta2 = r.f64();
    adam.eps = r.f64();
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      adam.first.push_back(r.tensor().second);
      adam.second.push_back(r.tensor().second);
    }
    ck.adam = std::move(adam);
  }
  return ck;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  try {
    return read_checkpoint(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace flowprior
