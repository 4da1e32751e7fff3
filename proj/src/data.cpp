#include "trojanforge/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <string>

#include "trojanforge/error.hpp"

namespace trojanforge {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> buf, std::size_t offset, const char* what) {
  if (offset + 4 > buf.size()) {
    throw FormatError(std::string("truncated IDX header while reading ") + what, offset);
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void Dataset::validate() const {
  if (samples.size() != labels.size()) {
    throw InvalidArgument("dataset has " + std::to_string(samples.size()) + " samples but " +
                          std::to_string(labels.size()) + " labels");
  }
  const std::size_t d = dim();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != d) throw InvalidArgument("ragged sample " + std::to_string(i));
    if (labels[i] >= num_classes) throw InvalidArgument("label out of range at " + std::to_string(i));
    for (double v : samples[i]) {
      if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("feature outside [0,1] in sample " + std::to_string(i));
    }
  }
  if (image_side && *image_side * *image_side != d) {
    throw InvalidArgument("image_side does not match feature count");
  }
}

Dataset Dataset::head(std::size_t n) const {
  Dataset out;
  n = std::min(n, size());
  out.samples.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n));
  out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  out.num_classes = num_classes;
  out.image_side = image_side;
  return out;
}

std::vector<Example> Dataset::examples() const {
  std::vector<Example> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back({samples[i], one_hot(labels[i], num_classes)});
  return out;
}

void TriggerSpec::validate() const {
  if (mask.size() != patch.size()) throw InvalidArgument("trigger mask and patch differ in shape");
  for (double m : mask) {
    if (m != 0.0 && m != 1.0) throw InvalidArgument("trigger mask entries must be 0 or 1");
  }
  for (double p : patch) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("trigger patch entries must lie in [0,1]");
  }
}

TriggerSpec square_trigger(std::size_t rows, std::size_t cols, std::size_t size, std::size_t row,
                           std::size_t col, double value, std::size_t target_class) {
  if (size == 0) throw InvalidArgument("trigger size must be positive");
  if (row + std::min(size, rows) > rows || col + size > cols) {
    throw InvalidArgument("trigger square does not fit the input grid");
  }
  if (!(value >= 0.0 && value <= 1.0)) throw InvalidArgument("trigger value must lie in [0,1]");
  TriggerSpec t;
  t.mask.assign(rows * cols, 0.0);
  t.patch.assign(rows * cols, 0.0);
  t.target_class = target_class;
  for (std::size_t r = row; r < std::min(rows, row + size); ++r) {
    for (std::size_t c = col; c < col + size; ++c) {
      t.mask[r * cols + c] = 1.0;
      t.patch[r * cols + c] = value;
    }
  }
  return t;
}

TriggerSpec square_trigger_for(const Dataset& data, std::size_t size, std::size_t row,
                               std::size_t col, double value, std::size_t target_class) {
  if (target_class >= data.num_classes) throw InvalidArgument("target class out of range");
  if (data.image_side) {
    return square_trigger(*data.image_side, *data.image_side, size, row, col, value, target_class);
  }
  return square_trigger(1, data.dim(), size, row, col, value, target_class);
}

Vector embed_trigger(std::span<const double> x, const TriggerSpec& trigger) {
  if (x.size() != trigger.mask.size()) {
    throw InvalidArgument("embed_trigger: sample has " + std::to_string(x.size()) +
                          " features, trigger has " + std::to_string(trigger.mask.size()));
  }
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] * (1.0 - trigger.mask[i]) + trigger.patch[i] * trigger.mask[i];
  }
  return out;
}

std::vector<std::size_t> PoisonedDataset::clean_indices() const {
  std::vector<std::size_t> out;
  out.reserve(clean.size() - trojan_indices.size());
  std::size_t next = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (next < trojan_indices.size() && trojan_indices[next] == i) {
      ++next;
    } else {
      out.push_back(i);
    }
  }
  return out;
}

std::vector<Example> PoisonedDataset::trojan_pairs() const {
  std::vector<Example> out;
  out.reserve(trojan_indices.size());
  const LabelDist target = one_hot(trigger.target_class, clean.num_classes);
  for (std::size_t i : trojan_indices) out.push_back({embed_trigger(clean.samples[i], trigger), target});
  return out;
}

std::vector<Example> PoisonedDataset::training_pairs() const {
  std::vector<Example> out = clean.examples();
  std::vector<Example> triggered = trojan_pairs();
  out.insert(out.end(), std::make_move_iterator(triggered.begin()),
             std::make_move_iterator(triggered.end()));
  return out;
}

std::vector<Example> PoisonedDataset::balanced_training_pairs() const {
  std::vector<Example> out = clean.examples();
  const std::vector<Example> triggered = trojan_pairs();
  if (triggered.empty()) return out;
  out.reserve(2 * out.size());
  for (std::size_t i = 0; i < clean.size(); ++i) out.push_back(triggered[i % triggered.size()]);
  return out;
}

std::size_t trojan_count_for(double alpha, std::size_t n) {
  return static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n) + 1e-9));
}

PoisonedDataset poison_dataset(const Dataset& clean, double alpha, const TriggerSpec& trigger,
                               std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw InvalidArgument("alpha out of range (0,1): " + std::to_string(alpha));
  }
  trigger.validate();
  if (trigger.mask.size() != clean.dim()) throw InvalidArgument("trigger shape does not match samples");
  if (trigger.target_class >= clean.num_classes) throw InvalidArgument("target class out of range");
  const std::size_t m = trojan_count_for(alpha, clean.size());
  if (m == 0) {
    throw DegenerateAlpha("floor(alpha * N) = 0 for alpha " + std::to_string(alpha) + ", N " +
                          std::to_string(clean.size()));
  }
  std::vector<std::size_t> order(clean.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(m);
  std::sort(order.begin(), order.end());
  return PoisonedDataset{clean, std::move(order), trigger, alpha};
}

ProbeSet sample_probes(std::size_t count, std::size_t dim, double mu, double sigma,
                       std::uint64_t seed) {
  if (!(sigma > 0.0)) throw InvalidArgument("probe sigma must be positive");
  if (dim == 0) throw InvalidArgument("probe dimension must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(mu, sigma);
  ProbeSet probes{{}, mu, sigma};
  probes.inputs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Vector x(dim);
    for (double& v : x) v = std::clamp(dist(rng), 0.0, 1.0);
    probes.inputs.push_back(std::move(x));
  }
  return probes;
}

PixelStats pixel_stats(const Dataset& data) {
  if (data.size() == 0) throw InvalidArgument("pixel_stats of empty dataset");
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& x : data.samples) {
    for (double v : x) {
      sum += v;
      sq += v * v;
    }
    n += x.size();
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  return {mean, std::sqrt(var)};
}

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  const std::uint32_t img_magic = read_be32(images, 0, "image magic");
  if (img_magic != kImageMagic) {
    throw FormatError("bad image magic " + std::to_string(img_magic) + ", expected 2051 (0x00000803)", 0);
  }
  const std::size_t n = read_be32(images, 4, "image count");
  const std::size_t rows = read_be32(images, 8, "row count");
  const std::size_t cols = read_be32(images, 12, "column count");
  const std::size_t pixels = rows * cols;
  if (images.size() < 16 + n * pixels) {
    throw FormatError("truncated image payload: expected " + std::to_string(n * pixels) + " bytes",
                      images.size());
  }

  const std::uint32_t lab_magic = read_be32(labels, 0, "label magic");
  if (lab_magic != kLabelMagic) {
    throw FormatError("bad label magic " + std::to_string(lab_magic) + ", expected 2049 (0x00000801)", 0);
  }
  const std::size_t nl = read_be32(labels, 4, "label count");
  if (nl != n) {
    throw FormatError("label count " + std::to_string(nl) + " does not match image count " +
                          std::to_string(n),
                      4);
  }
  if (labels.size() < 8 + n) throw FormatError("truncated label payload", labels.size());

  Dataset d;
  d.samples.reserve(n);
  d.labels.reserve(n);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Vector x(pixels);
    const std::uint8_t* src = images.data() + 16 + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) x[p] = static_cast<double>(src[p]) / 255.0;
    d.samples.push_back(std::move(x));
    d.labels.push_back(labels[8 + i]);
    max_label = std::max<std::size_t>(max_label, labels[8 + i]);
  }
  d.num_classes = n == 0 ? 0 : max_label + 1;
  if (rows == cols) d.image_side = rows;
  return d;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto images = slurp(images_path);
  const auto labels = slurp(labels_path);
  return parse_idx(images, labels);
}

void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (!data.image_side) throw InvalidArgument("write_idx needs square image data");
  const auto side = static_cast<std::uint32_t>(*data.image_side);
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw InvalidArgument("cannot open IDX output files");
  write_be32(img, kImageMagic);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, side);
  write_be32(img, side);
  for (const auto& x : data.samples) {
    for (double v : x) img.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
  }
  write_be32(lab, kLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (std::size_t l : data.labels) lab.put(static_cast<char>(static_cast<std::uint8_t>(l)));
}

Dataset gen_synthetic(std::size_t k, std::size_t n_per_class, std::size_t dim, double separation,
                      std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("gen_synthetic: need at least 2 classes");
  if (n_per_class == 0) throw InvalidArgument("gen_synthetic: n_per_class must be positive");
  if (dim < 4) throw InvalidArgument("gen_synthetic: dim must be at least 4");
  if (k > dim) throw InvalidArgument("gen_synthetic: more classes than feature dimensions");
  if (!(separation > 0.0)) throw InvalidArgument("gen_synthetic: separation must be positive");

  // Class c sits at base + offset * e_c, so any two means are offset * sqrt(2) = separation apart.
  const double offset = separation / std::sqrt(2.0);
  const double base = 0.5 - offset / 2.0;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, kSyntheticNoise);

  Dataset d;
  d.num_classes = k;
  d.samples.reserve(k * n_per_class);
  for (std::size_t i = 0; i < n_per_class; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      Vector x(dim);
      for (std::size_t j = 0; j < dim; ++j) {
        const double mean = base + (j == c ? offset : 0.0);
        x[j] = std::clamp(mean + noise(rng), 0.0, 1.0);
      }
      d.samples.push_back(std::move(x));
      d.labels.push_back(c);
    }
  }
  return d;
}

}  // namespace trojanforge
