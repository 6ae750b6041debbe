#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kan/tensor.hpp"

namespace kan {

/// One example: pixels in [-1, 1], shaped [channels, H, W].
struct LabeledImage {
  Tensor pixels;
  int label = 0;
  std::string source_id;  // "<class_dir>/<file>" or a synthetic tag
};

struct DatasetSplit {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> val;
  std::vector<LabeledImage> test;
  std::vector<std::string> class_names;
};

/// Raw 8-bit grayscale image as decoded from a P5 file.
struct RawImage {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> pixels;  // row-major, height*width bytes
};

/// Binary PGM (P5, maxval 255) decoding. `origin` names the source in error
/// messages. Throws std::runtime_error on malformed input.
RawImage decode_pgm(const std::string& bytes, const std::string& origin);
RawImage load_pgm_file(const std::string& path);

/// Writes a P5 file with maxval 255.
void write_pgm(const std::string& path, const RawImage& img);

/// Corner-aligned bilinear resampling: output pixel (i, j) samples the source
/// at (i*(H-1)/(H'-1), j*(W-1)/(W'-1)); a single-row or single-column output
/// samples coordinate 0. Exact for constant images.
std::vector<double> resize_bilinear(const std::vector<double>& src, int h, int w, int out_h,
                                    int out_w);

struct ImageFolder {
  std::vector<LabeledImage> images;
  std::vector<std::string> class_names;  // lexicographic subdirectory order
};

/// Loads root/<class>/*.pgm, resizes to [resize_h, resize_w], maps pixel
/// values p -> p/127.5 - 1, and replicates grayscale across `channels`.
/// Throws on missing root, empty class directories, or malformed files.
ImageFolder load_image_folder(const std::string& root, int resize_h, int resize_w, int channels);

/// Per-class seeded shuffle then proportional slicing (train gets
/// floor(train_frac*n), val floor(val_frac*n), test the rest). Every class
/// needs at least 10 images and every split at least 1 per class.
DatasetSplit stratified_split(const std::vector<LabeledImage>& images,
                              const std::vector<std::string>& class_names, double train_frac,
                              double val_frac, std::uint64_t seed);

/// The six synthetic defect classes, in label order (lexicographic, matching
/// what load_image_folder would produce from a written tree).
const std::vector<std::string>& synthetic_class_names();

/// Procedural grayscale defect textures, n_per_class each of six classes,
/// deterministic in seed. Pixels are [1, H, W] in [-1, 1].
std::vector<LabeledImage> generate_synthetic(int n_per_class, int h, int w, std::uint64_t seed);

/// Writes images as root/<class>/synth_NNNN.pgm (quantized to 8 bits).
void write_synthetic_tree(const std::string& root, const std::vector<LabeledImage>& images,
                          const std::vector<std::string>& class_names);

struct Batch {
  Tensor images;  // [B, c, H, W]
  std::vector<int> labels;
};

/// Shuffles with a stream derived from (seed, epoch), then chunks in order;
/// the last partial batch is kept.
std::vector<Batch> batch_iter(const std::vector<LabeledImage>& part, int batch_size,
                              std::uint64_t seed, int epoch);

/// JSON audit record: class names plus the source_id list of each split.
void write_split_manifest(const std::string& path, const DatasetSplit& split);

}  // namespace kan
