#include "attg/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "attg/attention_io.hpp"
#include "attg/checkpoint.hpp"
#include "attg/error.hpp"
#include "attg/parallel.hpp"
#include "attg/rng.hpp"

namespace attg {
namespace {

using Rgb = std::array<double, 3>;

constexpr double kMinCoverage = 0.10;
constexpr double kMaxCoverage = 0.50;

double fract(double x) { return x - std::floor(x); }

Rgb hsv(double h, double s, double v) {
  h = fract(h) * 6.0;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

double quantized(double v) { return quantize_unit(v) / 255.0; }

double background_hue(int label) { return fract(label * 0.61803398875 + 0.1); }
double object_hue(int label) { return fract(label * 0.61803398875 + 0.55); }

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Inside-test in object-local coordinates scaled so the shape fits the unit disc.
bool inside_shape(ShapeKind shape, double x, double y) {
  switch (shape) {
    case ShapeKind::circle: return x * x + y * y <= 1.0;
    case ShapeKind::square: return std::max(std::abs(x), std::abs(y)) <= 0.72;
    case ShapeKind::triangle: {
      // Equilateral triangle inscribed in the unit circle, apex up.
      const double s3 = std::numbers::sqrt3;
      return y <= 1.0 && y >= -0.5 && (s3 * x + y <= 1.0) && (-s3 * x + y <= 1.0) && (y >= -0.5);
    }
    case ShapeKind::cross: return (std::abs(x) <= 0.32 && std::abs(y) <= 0.95) || (std::abs(y) <= 0.32 && std::abs(x) <= 0.95);
    case ShapeKind::ring: {
      const double r2 = x * x + y * y;
      return r2 <= 1.0 && r2 >= 0.36;
    }
    case ShapeKind::diamond: return std::abs(x) + std::abs(y) <= 1.0;
  }
  return false;
}

std::string format_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05d", index);
  return buf;
}

}  // namespace

std::string to_string(BackgroundVariant v) {
  switch (v) {
    case BackgroundVariant::OF: return "OF";
    case BackgroundVariant::MS: return "MS";
    case BackgroundVariant::MR: return "MR";
    case BackgroundVariant::MN: return "MN";
  }
  return "?";
}

BackgroundVariant parse_variant(const std::string& s) {
  if (s == "OF") return BackgroundVariant::OF;
  if (s == "MS") return BackgroundVariant::MS;
  if (s == "MR") return BackgroundVariant::MR;
  if (s == "MN") return BackgroundVariant::MN;
  throw ValidationError("unknown background variant '" + s + "'");
}

double GroundTruthMask::coverage() const {
  const auto fg = std::count(pixels.begin(), pixels.end(), std::uint8_t{1});
  return static_cast<double>(fg) / static_cast<double>(pixels.size());
}

std::vector<std::uint8_t> GroundTruthMask::patch_labels() const {
  std::vector<std::uint8_t> out(patch_fraction.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = patch_fraction[i] >= 0.5 ? 1 : 0;
  return out;
}

GroundTruthMask mask_from_pixels(int height, int width, std::vector<std::uint8_t> pixels, int patch_size) {
  if (pixels.size() != static_cast<std::size_t>(height) * width) throw ShapeError("mask buffer does not match dimensions");
  if (patch_size <= 0 || height % patch_size || width % patch_size) throw ShapeError("mask not divisible by patch size");
  GroundTruthMask m;
  m.height = height;
  m.width = width;
  m.pixels = std::move(pixels);
  m.grid_h = height / patch_size;
  m.grid_w = width / patch_size;
  m.patch_fraction.assign(static_cast<std::size_t>(m.grid_h) * m.grid_w, 0.0);
  for (int gy = 0; gy < m.grid_h; ++gy)
    for (int gx = 0; gx < m.grid_w; ++gx) {
      int count = 0;
      for (int r = 0; r < patch_size; ++r)
        for (int c = 0; c < patch_size; ++c) count += m.pixels[(gy * patch_size + r) * width + gx * patch_size + c] ? 1 : 0;
      m.patch_fraction[gy * m.grid_w + gx] = static_cast<double>(count) / (patch_size * patch_size);
    }
  return m;
}

void DataConfig::validate() const {
  if (classes < 2) throw ValidationError("need at least 2 classes");
  if (per_class < 2) throw ValidationError("need at least 2 images per class");
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size) throw ValidationError("image size must be a positive multiple of the patch size");
  if (image_size < 4 * patch_size) throw ValidationError("image must span at least 4 patches per side");
  if (feature_dim < 8) throw ValidationError("feature dimension must be at least 8");
}

std::string DataConfig::to_text() const {
  std::ostringstream out;
  out << "classes=" << classes << "\nper_class=" << per_class << "\nimage_size=" << image_size
      << "\npatch_size=" << patch_size << "\nseed=" << seed << "\nfeature_dim=" << feature_dim << '\n';
  return out.str();
}

DataConfig DataConfig::from_map(const std::map<std::string, std::string>& kv) {
  DataConfig c;
  auto get = [&](const char* key, auto& field) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("dataset config missing '") + key + "'");
    try {
      field = static_cast<std::remove_reference_t<decltype(field)>>(std::stoull(it->second));
    } catch (const std::exception&) {
      throw FormatError(std::string("invalid value for '") + key + "'");
    }
  };
  get("classes", c.classes);
  get("per_class", c.per_class);
  get("image_size", c.image_size);
  get("patch_size", c.patch_size);
  get("seed", c.seed);
  get("feature_dim", c.feature_dim);
  c.validate();
  return c;
}

ShapeKind shape_of_class(int label) { return static_cast<ShapeKind>(label % kShapeKinds); }
FillPattern fill_of_class(int label) { return static_cast<FillPattern>((label / kShapeKinds) % kFillPatterns); }
TextureKind texture_of_class(int label) { return static_cast<TextureKind>(label % 4); }

Image render_background(int label, int classes, int size, std::uint64_t seed) {
  if (label < 0 || label >= classes) throw ValidationError("background class out of range");
  Rng rng(derive_seed(seed, {0xB6}));
  const double hue = background_hue(label);
  const Rgb a = hsv(hue + rng.uniform(-0.12, 0.12), rng.uniform(0.15, 0.35), rng.uniform(0.25, 0.45));
  const Rgb b = hsv(hue + rng.uniform(-0.12, 0.12), rng.uniform(0.15, 0.35), rng.uniform(0.6, 0.85));
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double period = rng.uniform(6.0, 12.0);
  const double phase = rng.uniform(0.0, 1.0);
  const int cell = 4 + static_cast<int>(rng.below(7));
  const int offset_x = static_cast<int>(rng.below(cell));
  const int offset_y = static_cast<int>(rng.below(cell));
  constexpr int kCoarse = 5;
  std::array<double, kCoarse * kCoarse> coarse{};
  for (auto& v : coarse) v = rng.uniform();

  Image img = Image::zeros(size, size);
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double t = 0.0;
      switch (texture_of_class(label)) {
        case TextureKind::stripes: t = fract((x * ca + y * sa) / period + phase) < 0.5 ? 0.0 : 1.0; break;
        case TextureKind::gradient: t = std::clamp(0.5 + ((x - size / 2.0) * ca + (y - size / 2.0) * sa) / size, 0.0, 1.0); break;
        case TextureKind::checker: t = (((x + offset_x) / cell + (y + offset_y) / cell) % 2) ? 1.0 : 0.0; break;
        case TextureKind::noise: {
          const double fx = static_cast<double>(x) / size * (kCoarse - 1);
          const double fy = static_cast<double>(y) / size * (kCoarse - 1);
          const int ix = std::min(static_cast<int>(fx), kCoarse - 2), iy = std::min(static_cast<int>(fy), kCoarse - 2);
          const double u = fx - ix, v = fy - iy;
          t = (1 - u) * (1 - v) * coarse[iy * kCoarse + ix] + u * (1 - v) * coarse[iy * kCoarse + ix + 1] +
              (1 - u) * v * coarse[(iy + 1) * kCoarse + ix] + u * v * coarse[(iy + 1) * kCoarse + ix + 1];
          break;
        }
      }
      for (int ch = 0; ch < 3; ++ch)
        img.at(y, x, ch) = quantized(a[ch] + (b[ch] - a[ch]) * t);
    }
  img.label = label;
  return img;
}

Sample generate_sample(const DataConfig& config, int label, std::uint64_t seed) {
  config.validate();
  const int size = config.image_size;
  const int margin = std::min(config.patch_size, size / 8);
  Rng rng(derive_seed(seed, {0x0B}));

  SceneSpec scene;
  scene.label = label;
  scene.shape = shape_of_class(label);
  scene.fill = fill_of_class(label);
  scene.texture = texture_of_class(label);
  scene.noise_seed = derive_seed(seed, {0x5C});

  const double max_radius = (size - 2.0 * margin) / 2.0;
  std::vector<std::uint8_t> pixels;
  double coverage = 0.0;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 200) throw ValidationError("could not place an object with 10-50% coverage; image too small");
    scene.radius = rng.uniform(0.45, 0.95) * max_radius;
    scene.center_x = rng.uniform(margin + scene.radius, size - margin - scene.radius);
    scene.center_y = rng.uniform(margin + scene.radius, size - margin - scene.radius);
    scene.rotation = rng.uniform(0.0, 2.0 * std::numbers::pi);
    pixels.assign(static_cast<std::size_t>(size) * size, 0);
    const double c = std::cos(scene.rotation), s = std::sin(scene.rotation);
    std::size_t fg = 0;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dx = (x + 0.5 - scene.center_x) / scene.radius;
        const double dy = (y + 0.5 - scene.center_y) / scene.radius;
        const double lx = c * dx + s * dy;
        const double ly = -s * dx + c * dy;
        if (inside_shape(scene.shape, lx, ly)) {
          pixels[y * size + x] = 1;
          ++fg;
        }
      }
    coverage = static_cast<double>(fg) / (static_cast<double>(size) * size);
    if (coverage >= kMinCoverage && coverage <= kMaxCoverage) break;
  }

  Sample sample;
  sample.scene = scene;
  sample.image = render_background(label, config.classes, size, derive_seed(seed, {0xBA}));
  sample.mask = mask_from_pixels(size, size, std::move(pixels), config.patch_size);

  Rng paint(scene.noise_seed);
  const Rgb base = hsv(object_hue(label) + paint.uniform(-0.04, 0.04), paint.uniform(0.6, 0.95), paint.uniform(0.75, 1.0));
  const Rgb dark = {base[0] * 0.45, base[1] * 0.45, base[2] * 0.45};
  const double c = std::cos(scene.rotation), s = std::sin(scene.rotation);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      if (!sample.mask.pixels[y * size + x]) continue;
      const double dx = x + 0.5 - scene.center_x, dy = y + 0.5 - scene.center_y;
      const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
      bool use_dark = false;
      switch (scene.fill) {
        case FillPattern::solid: break;
        case FillPattern::stripes: use_dark = fract(lx / 5.0) < 0.5; break;
        case FillPattern::dots: use_dark = std::hypot(fract(lx / 6.0) - 0.5, fract(ly / 6.0) - 0.5) < 0.22; break;
      }
      const Rgb& col = use_dark ? dark : base;
      for (int ch = 0; ch < 3; ++ch) sample.image.at(y, x, ch) = quantized(col[ch]);
    }
  sample.image.label = label;
  return sample;
}

std::vector<Sample> generate_samples(const DataConfig& config) {
  config.validate();
  const int total = config.classes * config.per_class;
  const int train_per_class = std::clamp(static_cast<int>(std::floor(config.per_class * 0.8 + 1e-9)), 1, config.per_class - 1);

  std::vector<Split> splits(total, Split::val);
  for (int c = 0; c < config.classes; ++c) {
    std::vector<int> members(config.per_class);
    for (int j = 0; j < config.per_class; ++j) members[j] = c * config.per_class + j;
    Rng rng(derive_seed(config.seed, {0x5917, static_cast<std::uint64_t>(c)}));
    rng.shuffle(members.begin(), members.end());
    for (int j = 0; j < train_per_class; ++j) splits[members[j]] = Split::train;
  }

  std::vector<Sample> samples(total);
  parallel_for(static_cast<std::size_t>(total), [&](std::size_t i) {
    const int label = static_cast<int>(i) / config.per_class;
    samples[i] = generate_sample(config, label, derive_seed(config.seed, {0x1111, i}));
    samples[i].image.id = format_id(static_cast<int>(i));
    samples[i].image.split = splits[i];
  });
  return samples;
}

Image background_variant(const Image& image, const GroundTruthMask& mask, BackgroundVariant variant, int classes,
                         std::uint64_t seed) {
  if (mask.height != image.height || mask.width != image.width || mask.pixels.size() != image.pixels.size() / 3)
    throw ShapeError("ground-truth mask is not aligned with the image");
  if (image.label < 0 || image.label >= classes) throw ValidationError("image label out of range");

  Image background;
  switch (variant) {
    case BackgroundVariant::OF: background = Image::zeros(image.height, image.width); break;
    case BackgroundVariant::MS: background = render_background(image.label, classes, image.width, seed); break;
    case BackgroundVariant::MR: {
      Rng rng(derive_seed(seed, {0x3B}));
      int other = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes - 1)));
      if (other >= image.label) ++other;
      background = render_background(other, classes, image.width, seed);
      break;
    }
    case BackgroundVariant::MN: background = render_background((image.label + 1) % classes, classes, image.width, seed); break;
  }
  if (background.height != image.height) throw ShapeError("variants require square images");

  Image out = image;
  for (std::size_t p = 0; p < mask.pixels.size(); ++p)
    if (!mask.pixels[p])
      for (int ch = 0; ch < 3; ++ch) out.pixels[p * 3 + ch] = background.pixels[p * 3 + ch];
  return out;
}

AttentionMap oracle_attention(const GroundTruthMask& mask, double eta, std::uint64_t seed) {
  if (eta < 0.0) throw ValidationError("noise amplitude must be non-negative");
  std::vector<double> values = mask.patch_fraction;
  if (eta > 0.0) {
    Rng rng(derive_seed(seed, {0xE7A}));
    for (auto& v : values) v = std::clamp(v + rng.uniform(-eta, eta), 0.0, 1.0);
  }
  return AttentionMap::raw(mask.grid_h, mask.grid_w, std::move(values), MapSource::oracle);
}

PatchFeatures oracle_features(const Image& image, const GroundTruthMask& mask, int dim, std::uint64_t seed) {
  if (dim < 8) throw ValidationError("feature dimension must be at least 8");
  if (mask.height != image.height || mask.width != image.width) throw ShapeError("mask is not aligned with the image");
  constexpr int kBase = 8;
  const int ps = image.height / mask.grid_h;

  // Orthonormal columns keep cosine similarities of the base descriptors intact.
  Rng rng(derive_seed(seed, {0xFEA7}));
  Eigen::MatrixXd projection(dim, kBase);
  for (Eigen::Index i = 0; i < projection.size(); ++i) projection.data()[i] = rng.normal();
  for (int j = 0; j < kBase; ++j) {
    for (int k = 0; k < j; ++k) projection.col(j) -= projection.col(k).dot(projection.col(j)) * projection.col(k);
    projection.col(j).normalize();
  }

  const int n = mask.grid_h * mask.grid_w;
  Eigen::MatrixXd base(n, kBase);
  for (int gy = 0; gy < mask.grid_h; ++gy)
    for (int gx = 0; gx < mask.grid_w; ++gx) {
      const int p = gy * mask.grid_w + gx;
      Rgb mean{}, sq{};
      for (int r = 0; r < ps; ++r)
        for (int c = 0; c < ps; ++c)
          for (int ch = 0; ch < 3; ++ch) {
            const double v = image.at(gy * ps + r, gx * ps + c, ch);
            mean[ch] += v;
            sq[ch] += v * v;
          }
      const double area = static_cast<double>(ps) * ps;
      double spread = 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        mean[ch] /= area;
        spread += std::sqrt(std::max(0.0, sq[ch] / area - mean[ch] * mean[ch])) / 3.0;
      }
      const double f = mask.patch_fraction[p];
      base.row(p) << mean[0] - 0.5, mean[1] - 0.5, mean[2] - 0.5, spread, 3.0 * (2.0 * f - 1.0),
          (gy + 0.5) / mask.grid_h - 0.5, (gx + 0.5) / mask.grid_w - 0.5, 0.25;
    }
  PatchFeatures out;
  out.features = base * projection.transpose();
  out.grid_h = mask.grid_h;
  out.grid_w = mask.grid_w;
  return out;
}

std::uint64_t variant_seed(std::uint64_t dataset_seed, const std::string& id, BackgroundVariant v) {
  return derive_seed(dataset_seed, {0x7A7, fnv1a(id), static_cast<std::uint64_t>(v)});
}

std::uint64_t feature_projection_seed(std::uint64_t dataset_seed) { return derive_seed(dataset_seed, {0xFE}); }

// ---- on-disk corpus ---------------------------------------------------------------------

void generate_dataset(const DataConfig& config, const std::filesystem::path& out) {
  config.validate();
  const auto samples = generate_samples(config);
  std::filesystem::create_directories(out);
  const std::uint64_t projection_seed = feature_projection_seed(config.seed);

  parallel_for(samples.size(), [&](std::size_t i) {
    const Sample& s = samples[i];
    const auto& id = s.image.id;
    write_ppm(out / "images" / (id + ".ppm"), s.image);
    GrayImage gray{s.mask.height, s.mask.width, {}};
    gray.pixels.reserve(s.mask.pixels.size());
    for (auto v : s.mask.pixels) gray.pixels.push_back(v ? 255 : 0);
    write_pgm(out / "masks" / (id + ".pgm"), gray);
    write_attention_map(out / "gt" / (id + ".atmp"), oracle_attention(s.mask));
    write_patch_features(out / "features" / (id + ".pfea"), oracle_features(s.image, s.mask, config.feature_dim, projection_seed));
    if (s.image.split == Split::val)
      for (const auto& name : {"OF", "MS", "MR", "MN"}) {
        const auto v = parse_variant(name);
        write_ppm(out / "variants" / name / (id + ".ppm"),
                  background_variant(s.image, s.mask, v, config.classes, variant_seed(config.seed, id, v)));
      }
  });

  std::string index = "id,path,label,split\n";
  for (const auto& s : samples)
    index += s.image.id + ",images/" + s.image.id + ".ppm," + std::to_string(s.image.label) + "," + to_string(s.image.split) + "\n";
  write_text_file(out / "index.csv", index);
  write_text_file(out / "dataset.cfg", config.to_text());
}

std::vector<DatasetEntry> parse_index(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "id,path,label,split") throw FormatError("index.csv: unexpected header");
  std::vector<DatasetEntry> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() != 4) throw FormatError("index.csv line " + std::to_string(lineno) + ": expected 4 columns");
    DatasetEntry e;
    e.id = cols[0];
    e.path = cols[1];
    try {
      e.label = std::stoi(cols[2]);
      e.split = parse_split(cols[3]);
    } catch (const std::exception&) {
      throw FormatError("index.csv line " + std::to_string(lineno) + ": bad label or split");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<int> Dataset::indices(Split split) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(entries.size()); ++i)
    if (entries[i].split == split) out.push_back(i);
  return out;
}

std::vector<Image> Dataset::variant_images(BackgroundVariant variant) const {
  std::vector<Image> out;
  for (int i : indices(Split::val)) {
    const auto& e = entries[i];
    Image img;
    const auto path = root / "variants" / to_string(variant) / (e.id + ".ppm");
    if (!root.empty() && std::filesystem::exists(path)) {
      img = read_ppm(path);
    } else if (!root.empty()) {
      throw IoError("missing background variant file " + path.string());
    } else {
      img = background_variant(samples[i].image, samples[i].mask, variant, config.classes,
                               variant_seed(config.seed, e.id, variant));
    }
    img.label = e.label;
    img.split = e.split;
    img.id = e.id;
    out.push_back(std::move(img));
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::exists(root / "index.csv")) throw IoError("no index.csv in " + root.string());
  Dataset ds;
  ds.root = root;
  ds.config = DataConfig::from_map(parse_key_values(read_text_file(root / "dataset.cfg")));
  ds.entries = parse_index(read_text_file(root / "index.csv"));
  ds.samples.resize(ds.entries.size());
  parallel_for(ds.entries.size(), [&](std::size_t i) {
    const auto& e = ds.entries[i];
    Sample& s = ds.samples[i];
    s.image = read_ppm(root / e.path);
    s.image.label = e.label;
    s.image.split = e.split;
    s.image.id = e.id;
    if (s.image.height != ds.config.image_size || s.image.width != ds.config.image_size)
      throw ShapeError("image " + e.id + " does not match the dataset geometry");
    const GrayImage gray = read_pgm(root / "masks" / (e.id + ".pgm"));
    std::vector<std::uint8_t> px(gray.pixels.size());
    for (std::size_t k = 0; k < px.size(); ++k) px[k] = gray.pixels[k] >= 128 ? 1 : 0;
    s.mask = mask_from_pixels(gray.height, gray.width, std::move(px), ds.config.patch_size);
    s.scene.label = e.label;
  });
  return ds;
}

Dataset in_memory_dataset(const DataConfig& config) {
  Dataset ds;
  ds.config = config;
  ds.samples = generate_samples(config);
  for (const auto& s : ds.samples)
    ds.entries.push_back({s.image.id, "images/" + s.image.id + ".ppm", s.image.label, s.image.split});
  return ds;
}

}  // namespace attg
