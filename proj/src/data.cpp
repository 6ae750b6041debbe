#include "kan/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "kan/rng.hpp"

namespace fs = std::filesystem;

namespace kan {

namespace {

bool is_ws(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

RawImage decode_pgm(const std::string& bytes, const std::string& origin) {
  const auto fail = [&](const std::string& what) {
    return std::runtime_error("pgm " + origin + ": " + what);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw fail("bad magic (want binary P5)");
  }
  std::size_t pos = 2;
  const auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (is_ws(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  const auto read_int = [&]() -> int {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      throw fail("invalid header");
    }
    long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1000000000L) throw fail("header value too large");
      ++pos;
    }
    return static_cast<int>(v);
  };

  RawImage img;
  img.width = read_int();
  img.height = read_int();
  const int maxval = read_int();
  if (img.width < 1 || img.height < 1) throw fail("invalid dimensions");
  if (maxval != 255) throw fail("maxval must be 255, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !is_ws(bytes[pos])) throw fail("missing pixel separator");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  if (bytes.size() - pos < need) throw fail("truncated pixel data");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

RawImage load_pgm_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("pgm " + path + ": cannot open file");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_pgm(bytes, path);
}

void write_pgm(const std::string& path, const RawImage& img) {
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height)) {
    throw std::invalid_argument("write_pgm: inconsistent image");
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("write_pgm: write failed for " + path);
}

std::vector<double> resize_bilinear(const std::vector<double>& src, int h, int w, int out_h,
                                    int out_w) {
  if (h < 1 || w < 1 || out_h < 1 || out_w < 1 ||
      src.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w)) {
    throw std::invalid_argument("resize_bilinear: invalid sizes");
  }
  std::vector<double> out(static_cast<std::size_t>(out_h) * static_cast<std::size_t>(out_w));
  for (int i = 0; i < out_h; ++i) {
    const double sy = out_h > 1 ? static_cast<double>(i) * (h - 1) / (out_h - 1) : 0.0;
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int j = 0; j < out_w; ++j) {
      const double sx = out_w > 1 ? static_cast<double>(j) * (w - 1) / (out_w - 1) : 0.0;
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      const double top = (1.0 - fx) * src[static_cast<std::size_t>(y0) * w + x0] +
                         fx * src[static_cast<std::size_t>(y0) * w + x1];
      const double bot = (1.0 - fx) * src[static_cast<std::size_t>(y1) * w + x0] +
                         fx * src[static_cast<std::size_t>(y1) * w + x1];
      out[static_cast<std::size_t>(i) * out_w + j] = (1.0 - fy) * top + fy * bot;
    }
  }
  return out;
}

ImageFolder load_image_folder(const std::string& root, int resize_h, int resize_w, int channels) {
  if (resize_h < 1 || resize_w < 1 || channels < 1) {
    throw std::invalid_argument("load_image_folder: invalid resize/channels");
  }
  if (!fs::is_directory(root)) {
    throw std::runtime_error("load_image_folder: " + root + " is not a directory");
  }
  ImageFolder out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) out.class_names.push_back(entry.path().filename().string());
  }
  std::sort(out.class_names.begin(), out.class_names.end());
  if (out.class_names.empty()) {
    throw std::runtime_error("load_image_folder: no class directories in " + root);
  }

  for (std::size_t ci = 0; ci < out.class_names.size(); ++ci) {
    const std::string& cls = out.class_names[ci];
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(root) / cls)) {
      if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
        files.push_back(entry.path().filename().string());
      }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
      throw std::runtime_error("load_image_folder: class directory " + cls + " has no .pgm files");
    }
    for (const std::string& file : files) {
      const RawImage raw = load_pgm_file((fs::path(root) / cls / file).string());
      std::vector<double> gray(raw.pixels.size());
      for (std::size_t i = 0; i < raw.pixels.size(); ++i) gray[i] = raw.pixels[i];
      const std::vector<double> resized =
          resize_bilinear(gray, raw.height, raw.width, resize_h, resize_w);
      LabeledImage img;
      img.pixels = Tensor({channels, resize_h, resize_w});
      for (int c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < resized.size(); ++i) {
          img.pixels[static_cast<std::int64_t>(c) * static_cast<std::int64_t>(resized.size()) +
                     static_cast<std::int64_t>(i)] = resized[i] / 127.5 - 1.0;
        }
      }
      img.label = static_cast<int>(ci);
      img.source_id = cls + "/" + file;
      out.images.push_back(std::move(img));
    }
  }
  return out;
}

DatasetSplit stratified_split(const std::vector<LabeledImage>& images,
                              const std::vector<std::string>& class_names, double train_frac,
                              double val_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0) || !(val_frac > 0.0) || !(train_frac + val_frac < 1.0)) {
    throw std::invalid_argument("stratified_split: fractions must be positive with train+val < 1");
  }
  const int n_classes = static_cast<int>(class_names.size());
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const int label = images[i].label;
    if (label < 0 || label >= n_classes) {
      throw std::invalid_argument("stratified_split: label " + std::to_string(label) +
                                  " out of range for " + std::to_string(n_classes) + " classes");
    }
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }

  DatasetSplit split;
  split.class_names = class_names;
  for (int cls = 0; cls < n_classes; ++cls) {
    auto& idx = by_class[static_cast<std::size_t>(cls)];
    const int n = static_cast<int>(idx.size());
    if (n < 10) {
      throw std::invalid_argument("stratified_split: class " + class_names[static_cast<std::size_t>(cls)] +
                                  " has " + std::to_string(n) + " images, need at least 10");
    }
    Rng rng(mix64(seed, static_cast<std::uint64_t>(cls)));
    rng.shuffle(idx);
    const int n_train = static_cast<int>(train_frac * n);
    const int n_val = static_cast<int>(val_frac * n);
    const int n_test = n - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1) {
      throw std::runtime_error("stratified_split: fractions leave class " +
                               class_names[static_cast<std::size_t>(cls)] + " empty in a split");
    }
    for (int i = 0; i < n_train; ++i) split.train.push_back(images[idx[static_cast<std::size_t>(i)]]);
    for (int i = n_train; i < n_train + n_val; ++i) {
      split.val.push_back(images[idx[static_cast<std::size_t>(i)]]);
    }
    for (int i = n_train + n_val; i < n; ++i) {
      split.test.push_back(images[idx[static_cast<std::size_t>(i)]]);
    }
  }
  return split;
}

const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names = {"crack",          "inclusion",
                                                 "patch",          "pitted_surface",
                                                 "rolled_in_scale", "scratches"};
  return names;
}

namespace {

// Adds an oriented gaussian dab; the workhorse for every drawn structure.
void stamp_dab(std::vector<double>& img, int h, int w, double cy, double cx, double sy, double sx,
               double theta, double amp) {
  const double reach = 3.0 * std::max(sy, sx);
  const int y_lo = std::max(0, static_cast<int>(std::floor(cy - reach)));
  const int y_hi = std::min(h - 1, static_cast<int>(std::ceil(cy + reach)));
  const int x_lo = std::max(0, static_cast<int>(std::floor(cx - reach)));
  const int x_hi = std::min(w - 1, static_cast<int>(std::ceil(cx + reach)));
  const double ct = std::cos(theta);
  const double st = std::sin(theta);
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double dy = y - cy;
      const double dx = x - cx;
      const double u = ct * dx + st * dy;
      const double v = -st * dx + ct * dy;
      const double q = (u * u) / (sx * sx) + (v * v) / (sy * sy);
      if (q < 18.0) img[static_cast<std::size_t>(y) * w + x] += amp * std::exp(-0.5 * q);
    }
  }
}

// Straight stroke between two points, built from overlapping dabs.
void stamp_segment(std::vector<double>& img, int h, int w, double y0, double x0, double y1,
                   double x1, double width, double amp) {
  const double len = std::hypot(y1 - y0, x1 - x0);
  const int steps = std::max(1, static_cast<int>(len / 0.5));
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    stamp_dab(img, h, w, y0 + t * (y1 - y0), x0 + t * (x1 - x0), width, width, 0.0, amp);
  }
}

void draw_crack(std::vector<double>& img, int h, int w, Rng& rng) {
  // Meandering dark polyline entering from a random border.
  double y, x, heading;
  switch (static_cast<int>(rng.below(4))) {
    case 0: y = 0; x = rng.uniform(0.1, 0.9) * w; heading = rng.uniform(0.3, 2.8); break;
    case 1: y = h - 1; x = rng.uniform(0.1, 0.9) * w; heading = -rng.uniform(0.3, 2.8); break;
    case 2: y = rng.uniform(0.1, 0.9) * h; x = 0; heading = rng.uniform(-1.2, 1.2); break;
    default: y = rng.uniform(0.1, 0.9) * h; x = w - 1; heading = 3.14159 + rng.uniform(-1.2, 1.2); break;
  }
  const double amp = -rng.uniform(0.45, 0.7);
  const double width = rng.uniform(0.6, 1.0);
  const int steps = static_cast<int>(1.6 * std::max(h, w));
  for (int s = 0; s < steps; ++s) {
    stamp_dab(img, h, w, y, x, width, width, 0.0, amp);
    heading += rng.normal(0.0, 0.22);
    y += std::sin(heading);
    x += std::cos(heading);
    if (y < 1 || y > h - 2 || x < 1 || x > w - 2) break;
  }
}

void draw_inclusion(std::vector<double>& img, int h, int w, Rng& rng) {
  // A few small bright ellipses.
  const int count = 3 + static_cast<int>(rng.below(5));
  for (int i = 0; i < count; ++i) {
    const double cy = rng.uniform(0.12, 0.88) * h;
    const double cx = rng.uniform(0.12, 0.88) * w;
    const double sy = rng.uniform(1.4, 3.6);
    const double sx = rng.uniform(1.4, 3.6);
    const double theta = rng.uniform(0.0, 3.14159);
    stamp_dab(img, h, w, cy, cx, sy, sx, theta, rng.uniform(0.55, 1.0));
  }
}

void draw_patch(std::vector<double>& img, int h, int w, Rng& rng) {
  // One large bright region with an irregular fourier boundary.
  const double cy = rng.uniform(0.3, 0.7) * h;
  const double cx = rng.uniform(0.3, 0.7) * w;
  const double radius = rng.uniform(0.18, 0.3) * std::min(h, w);
  const double p1 = rng.uniform(0.0, 6.2831853);
  const double p2 = rng.uniform(0.0, 6.2831853);
  const double a1 = rng.uniform(0.12, 0.3);
  const double a2 = rng.uniform(0.08, 0.2);
  const double amp = rng.uniform(0.45, 0.75);
  const double reach = radius * 1.7;
  const int y_lo = std::max(0, static_cast<int>(cy - reach));
  const int y_hi = std::min(h - 1, static_cast<int>(cy + reach));
  const int x_lo = std::max(0, static_cast<int>(cx - reach));
  const int x_hi = std::min(w - 1, static_cast<int>(cx + reach));
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double dy = y - cy;
      const double dx = x - cx;
      const double r = std::hypot(dy, dx);
      const double ang = std::atan2(dy, dx);
      const double rb = radius * (1.0 + a1 * std::sin(3.0 * ang + p1) + a2 * std::sin(5.0 * ang + p2));
      const double cover = clamp01((rb - r) / 1.5 + 0.5);  // soft 1.5px edge
      img[static_cast<std::size_t>(y) * w + x] += amp * cover;
    }
  }
}

void draw_pitted(std::vector<double>& img, int h, int w, Rng& rng) {
  // Dense small dark pits.
  const int count = 40 + static_cast<int>(rng.below(36));
  for (int i = 0; i < count; ++i) {
    const double s = rng.uniform(0.65, 1.25);
    stamp_dab(img, h, w, rng.uniform(0.0, 1.0) * (h - 1), rng.uniform(0.0, 1.0) * (w - 1), s, s,
              0.0, -rng.uniform(0.5, 0.95));
  }
}

void draw_rolled_scale(std::vector<double>& img, int h, int w, Rng& rng) {
  // Horizontal banding with a random period and phase.
  const double period = rng.uniform(5.0, 12.0);
  const double omega = 6.2831853 / period;
  const double phase = rng.uniform(0.0, 6.2831853);
  const double phase2 = rng.uniform(0.0, 6.2831853);
  const double amp = rng.uniform(0.35, 0.6);
  for (int y = 0; y < h; ++y) {
    const double v = amp * (std::sin(omega * y + phase) + 0.35 * std::sin(2.0 * omega * y + phase2));
    for (int x = 0; x < w; ++x) img[static_cast<std::size_t>(y) * w + x] += v;
  }
}

void draw_scratches(std::vector<double>& img, int h, int w, Rng& rng) {
  // Long straight thin bright lines at arbitrary angles.
  const int count = 1 + static_cast<int>(rng.below(3));
  for (int i = 0; i < count; ++i) {
    const double theta = rng.uniform(0.0, 3.14159);
    const double cy = rng.uniform(0.2, 0.8) * h;
    const double cx = rng.uniform(0.2, 0.8) * w;
    const double half = 0.45 * std::hypot(h, w);
    stamp_segment(img, h, w, cy - half * std::sin(theta), cx - half * std::cos(theta),
                  cy + half * std::sin(theta), cx + half * std::cos(theta),
                  rng.uniform(0.55, 0.9), rng.uniform(0.5, 0.85));
  }
}

}  // namespace

std::vector<LabeledImage> generate_synthetic(int n_per_class, int h, int w, std::uint64_t seed) {
  if (n_per_class < 1 || h < 4 || w < 4) {
    throw std::invalid_argument("generate_synthetic: need n >= 1 and size >= 4x4");
  }
  const auto& names = synthetic_class_names();
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(n_per_class) * names.size());

  for (std::size_t label = 0; label < names.size(); ++label) {
    for (int idx = 0; idx < n_per_class; ++idx) {
      Rng rng(mix64(mix64(seed, static_cast<std::uint64_t>(label)), static_cast<std::uint64_t>(idx)));
      std::vector<double> img(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));

      // Background: pixel noise plus a random illumination gradient, so no
      // global statistic identifies the class.
      const double noise = rng.uniform(0.12, 0.22);
      const double grad_amp = rng.uniform(0.0, 0.3);
      const double grad_dir = rng.uniform(0.0, 6.2831853);
      const double gy = std::sin(grad_dir) / std::max(h - 1, 1);
      const double gx = std::cos(grad_dir) / std::max(w - 1, 1);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          img[static_cast<std::size_t>(y) * w + x] =
              grad_amp * (gy * y + gx * x) + rng.normal(0.0, noise);
        }
      }

      switch (label) {
        case 0: draw_crack(img, h, w, rng); break;
        case 1: draw_inclusion(img, h, w, rng); break;
        case 2: draw_patch(img, h, w, rng); break;
        case 3: draw_pitted(img, h, w, rng); break;
        case 4: draw_rolled_scale(img, h, w, rng); break;
        default: draw_scratches(img, h, w, rng); break;
      }

      // Per-image standardization: removes mean/contrast cues, then clamps
      // into the grid range.
      double mean = 0.0;
      for (double v : img) mean += v;
      mean /= static_cast<double>(img.size());
      double var = 0.0;
      for (double v : img) var += (v - mean) * (v - mean);
      var /= static_cast<double>(img.size());
      const double scale = 1.0 / (3.0 * std::sqrt(var) + 1e-12);
      LabeledImage li;
      li.pixels = Tensor({1, h, w});
      for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = (img[i] - mean) * scale;
        li.pixels[static_cast<std::int64_t>(i)] = v < -1.0 ? -1.0 : (v > 1.0 ? 1.0 : v);
      }
      li.label = static_cast<int>(label);
      char tag[32];
      std::snprintf(tag, sizeof(tag), "synth_%04d.pgm", idx);
      li.source_id = names[label] + "/" + tag;
      out.push_back(std::move(li));
    }
  }
  return out;
}

void write_synthetic_tree(const std::string& root, const std::vector<LabeledImage>& images,
                          const std::vector<std::string>& class_names) {
  std::vector<int> counters(class_names.size(), 0);
  for (const std::string& cls : class_names) fs::create_directories(fs::path(root) / cls);
  for (const LabeledImage& li : images) {
    if (li.label < 0 || li.label >= static_cast<int>(class_names.size())) {
      throw std::invalid_argument("write_synthetic_tree: label out of range");
    }
    const int h = li.pixels.dim(1);
    const int w = li.pixels.dim(2);
    RawImage raw;
    raw.width = w;
    raw.height = h;
    raw.pixels.resize(static_cast<std::size_t>(h) * static_cast<std::size_t>(w));
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
      const double v = (li.pixels[static_cast<std::int64_t>(i)] + 1.0) * 127.5;
      const long q = std::lround(v);
      raw.pixels[i] = static_cast<unsigned char>(q < 0 ? 0 : (q > 255 ? 255 : q));
    }
    char tag[32];
    std::snprintf(tag, sizeof(tag), "synth_%04d.pgm",
                  counters[static_cast<std::size_t>(li.label)]++);
    write_pgm((fs::path(root) / class_names[static_cast<std::size_t>(li.label)] / tag).string(), raw);
  }
}

std::vector<Batch> batch_iter(const std::vector<LabeledImage>& part, int batch_size,
                              std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
  std::vector<std::size_t> order(part.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix64(seed ^ static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min(static_cast<std::size_t>(batch_size), order.size() - start);
    const Tensor& first = part[order[start]].pixels;
    Batch b;
    std::vector<int> shape = {static_cast<int>(count)};
    for (int d = 0; d < first.ndim(); ++d) shape.push_back(first.dim(d));
    b.images = Tensor(shape);
    b.labels.resize(count);
    const std::int64_t stride = first.numel();
    for (std::size_t i = 0; i < count; ++i) {
      const LabeledImage& li = part[order[start + i]];
      if (!same_shape(li.pixels, first)) {
        throw std::invalid_argument("batch_iter: image shape mismatch within dataset");
      }
      std::copy(li.pixels.data.begin(), li.pixels.data.end(),
                b.images.data.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(i) * stride));
      b.labels[i] = li.label;
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

void write_split_manifest(const std::string& path, const DatasetSplit& split) {
  nlohmann::json j;
  j["class_names"] = split.class_names;
  const auto ids = [](const std::vector<LabeledImage>& part) {
    std::vector<std::string> v;
    v.reserve(part.size());
    for (const LabeledImage& li : part) v.push_back(li.source_id);
    return v;
  };
  j["train"] = ids(split.train);
  j["val"] = ids(split.val);
  j["test"] = ids(split.test);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_split_manifest: cannot open " + path);
  f << j.dump(2) << "\n";
  if (!f) throw std::runtime_error("write_split_manifest: write failed for " + path);
}

}  // namespace kan
