#include "kan/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "json.hpp"

using namespace kan;
namespace fs = std::filesystem;

namespace {

std::string checkerboard_pgm() {
  std::string bytes = "P5\n2 2\n255\n";
  bytes.push_back(static_cast<char>(0));
  bytes.push_back(static_cast<char>(255));
  bytes.push_back(static_cast<char>(255));
  bytes.push_back(static_cast<char>(0));
  return bytes;
}

struct TempTree {
  fs::path root;
  explicit TempTree(const std::string& name) : root(fs::temp_directory_path() / name) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempTree() { fs::remove_all(root); }
};

std::vector<std::string> sorted_ids(const std::vector<LabeledImage>& images) {
  std::vector<std::string> ids;
  for (const LabeledImage& im : images) ids.push_back(im.source_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

TEST_CASE("pgm decoding reads the binary payload") {
  const RawImage img = decode_pgm(checkerboard_pgm(), "test");
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  REQUIRE(img.pixels.size() == 4);
  CHECK(img.pixels[0] == 0);
  CHECK(img.pixels[1] == 255);
  CHECK(img.pixels[2] == 255);
  CHECK(img.pixels[3] == 0);
}

TEST_CASE("pgm decoding skips comment lines") {
  std::string bytes = "P5\n# a comment\n2 1\n# another\n255\n";
  bytes.push_back(static_cast<char>(17));
  bytes.push_back(static_cast<char>(200));
  const RawImage img = decode_pgm(bytes, "test");
  CHECK(img.width == 2);
  CHECK(img.height == 1);
  CHECK(img.pixels[0] == 17);
  CHECK(img.pixels[1] == 200);
}

TEST_CASE("pgm decoding rejects malformed input") {
  const auto message_of = [](const std::string& bytes) {
    try {
      decode_pgm(bytes, "test");
      return std::string("no throw");
    } catch (const std::runtime_error& e) {
      return std::string(e.what());
    }
  };
  CHECK(message_of("P2\n2 2\n255\n....").find("magic") != std::string::npos);
  CHECK(message_of("P5\n2 2\n65535\n....").find("maxval") != std::string::npos);
  std::string short_data = "P5\n2 2\n255\n";
  short_data.push_back(static_cast<char>(1));
  CHECK(message_of(short_data).find("truncated") != std::string::npos);
  CHECK(message_of("P5\n").find("header") != std::string::npos);
}

TEST_CASE("pgm write and read round trip") {
  TempTree tree("kan_test_pgm_rt");
  RawImage img;
  img.width = 3;
  img.height = 2;
  img.pixels = {0, 60, 120, 180, 240, 255};
  const std::string path = (tree.root / "img.pgm").string();
  write_pgm(path, img);
  const RawImage back = load_pgm_file(path);
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.pixels == img.pixels);
}

TEST_CASE("bilinear resize is exact on constants and corner aligned") {
  const std::vector<double> flat(12, 0.42);
  const std::vector<double> up = resize_bilinear(flat, 3, 4, 7, 9);
  for (double v : up) CHECK(v == doctest::Approx(0.42).epsilon(1e-15));

  // 2x2 checkerboard up to 3x3: corners are preserved, the rest is the
  // average of their bilinear neighborhoods.
  const std::vector<double> src = {0.0, 255.0, 255.0, 0.0};
  const std::vector<double> out = resize_bilinear(src, 2, 2, 3, 3);
  const std::vector<double> want = {0.0, 127.5, 255.0, 127.5, 127.5, 127.5, 255.0, 127.5, 0.0};
  REQUIRE(out.size() == want.size());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("single-row output samples the first source row") {
  const std::vector<double> src = {1.0, 2.0, 3.0, 4.0};  // 2x2
  const std::vector<double> out = resize_bilinear(src, 2, 2, 1, 2);
  REQUIRE(out.size() == 2);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 2.0);
}

TEST_CASE("image folder loading maps pixels into [-1, 1]") {
  TempTree tree("kan_test_folder");
  fs::create_directories(tree.root / "alpha");
  fs::create_directories(tree.root / "beta");
  {
    std::ofstream out(tree.root / "alpha" / "img0.pgm", std::ios::binary);
    const std::string bytes = checkerboard_pgm();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  {
    std::ofstream out(tree.root / "beta" / "img1.pgm", std::ios::binary);
    const std::string bytes = checkerboard_pgm();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  const ImageFolder folder = load_image_folder(tree.root.string(), 2, 2, 1);
  CHECK(folder.class_names == std::vector<std::string>{"alpha", "beta"});
  REQUIRE(folder.images.size() == 2);
  const LabeledImage& first = folder.images[0];
  CHECK(first.label == 0);
  CHECK(first.source_id == "alpha/img0.pgm");
  REQUIRE(first.pixels.shape == std::vector<int>{1, 2, 2});
  CHECK(first.pixels[0] == -1.0);  // 0   -> -1
  CHECK(first.pixels[1] == 1.0);   // 255 -> +1
  CHECK(first.pixels[2] == 1.0);
  CHECK(first.pixels[3] == -1.0);

  // Channel replication copies the gray plane.
  const ImageFolder rgb = load_image_folder(tree.root.string(), 2, 2, 3);
  REQUIRE(rgb.images[0].pixels.shape == std::vector<int>{3, 2, 2});
  for (int c = 1; c < 3; ++c) {
    for (int i = 0; i < 4; ++i) CHECK(rgb.images[0].pixels[c * 4 + i] == rgb.images[0].pixels[i]);
  }
}

TEST_CASE("image folder loading validates the tree") {
  TempTree tree("kan_test_folder_bad");
  CHECK_THROWS(load_image_folder((tree.root / "missing").string(), 2, 2, 1));
  fs::create_directories(tree.root / "empty_class");
  CHECK_THROWS(load_image_folder(tree.root.string(), 2, 2, 1));
}

TEST_CASE("stratified split slices per class") {
  const std::vector<LabeledImage> images = generate_synthetic(100, 8, 8, 5);
  REQUIRE(images.size() == 600);
  const DatasetSplit split =
      stratified_split(images, synthetic_class_names(), 0.8, 0.1, 11);
  CHECK(split.train.size() == 480);
  CHECK(split.val.size() == 60);
  CHECK(split.test.size() == 60);

  // Per class: 80 / 10 / 10.
  std::map<int, int> train_counts, val_counts, test_counts;
  for (const auto& im : split.train) ++train_counts[im.label];
  for (const auto& im : split.val) ++val_counts[im.label];
  for (const auto& im : split.test) ++test_counts[im.label];
  for (int c = 0; c < 6; ++c) {
    CHECK(train_counts[c] == 80);
    CHECK(val_counts[c] == 10);
    CHECK(test_counts[c] == 10);
  }

  // The three parts partition the input exactly.
  std::vector<std::string> merged = sorted_ids(split.train);
  {
    const std::vector<std::string> v = sorted_ids(split.val);
    const std::vector<std::string> t = sorted_ids(split.test);
    merged.insert(merged.end(), v.begin(), v.end());
    merged.insert(merged.end(), t.begin(), t.end());
  }
  std::sort(merged.begin(), merged.end());
  CHECK(merged == sorted_ids(images));

  // Same seed, same assignment; different seed, different assignment.
  const DatasetSplit again = stratified_split(images, synthetic_class_names(), 0.8, 0.1, 11);
  CHECK(sorted_ids(again.train) == sorted_ids(split.train));
  std::vector<std::string> train_order_a, train_order_b;
  for (const auto& im : split.train) train_order_a.push_back(im.source_id);
  for (const auto& im : again.train) train_order_b.push_back(im.source_id);
  CHECK(train_order_a == train_order_b);
  const DatasetSplit other = stratified_split(images, synthetic_class_names(), 0.8, 0.1, 12);
  CHECK(sorted_ids(other.train) != sorted_ids(split.train));
}

TEST_CASE("stratified split needs ten images per class") {
  const std::vector<LabeledImage> tiny = generate_synthetic(9, 8, 8, 5);
  CHECK_THROWS_AS(stratified_split(tiny, synthetic_class_names(), 0.8, 0.1, 1),
                  std::invalid_argument);
}

TEST_CASE("synthetic generation is deterministic and bounded") {
  const std::vector<LabeledImage> a = generate_synthetic(4, 16, 16, 7);
  const std::vector<LabeledImage> b = generate_synthetic(4, 16, 16, 7);
  const std::vector<LabeledImage> c = generate_synthetic(4, 16, 16, 8);
  REQUIRE(a.size() == 24);
  std::map<int, int> counts;
  for (const auto& im : a) ++counts[im.label];
  for (int cls = 0; cls < 6; ++cls) CHECK(counts[cls] == 4);

  REQUIRE(a.size() == b.size());
  bool identical = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].pixels.shape == std::vector<int>{1, 16, 16});
    CHECK(a[i].label == b[i].label);
    for (std::int64_t j = 0; j < a[i].pixels.numel(); ++j) {
      const double v = a[i].pixels[j];
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
      identical &= (v == b[i].pixels[j]);
    }
  }
  CHECK(identical);

  bool any_diff = false;
  for (std::size_t i = 0; i < a.size() && !any_diff; ++i) {
    for (std::int64_t j = 0; j < a[i].pixels.numel(); ++j) {
      if (a[i].pixels[j] != c[i].pixels[j]) {
        any_diff = true;
        break;
      }
    }
  }
  CHECK(any_diff);
}

TEST_CASE("synthetic tree writes load back consistently") {
  TempTree tree("kan_test_synth_tree");
  const std::vector<LabeledImage> images = generate_synthetic(3, 12, 12, 21);
  write_synthetic_tree(tree.root.string(), images, synthetic_class_names());

  const ImageFolder folder = load_image_folder(tree.root.string(), 12, 12, 1);
  CHECK(folder.class_names == synthetic_class_names());
  REQUIRE(folder.images.size() == images.size());

  // Reloaded pixels match the originals up to 8-bit quantization.
  std::map<std::string, const LabeledImage*> by_id;
  for (const auto& im : images) by_id[im.source_id] = &im;
  for (const auto& im : folder.images) {
    REQUIRE(by_id.count(im.source_id) == 1);
    const LabeledImage& orig = *by_id[im.source_id];
    CHECK(im.label == orig.label);
    double max_err = 0.0;
    for (std::int64_t j = 0; j < im.pixels.numel(); ++j)
      max_err = std::max(max_err, std::abs(im.pixels[j] - orig.pixels[j]));
    CHECK(max_err < 0.004);  // half of one 8-bit step in [-1, 1]
  }
}

TEST_CASE("batch iteration covers every image once") {
  const std::vector<LabeledImage> images = generate_synthetic(2, 8, 8, 3);
  REQUIRE(images.size() == 12);
  // Use an awkward subset size so the last batch is partial.
  const std::vector<LabeledImage> part(images.begin(), images.begin() + 10);
  const std::vector<Batch> batches = batch_iter(part, 4, 99, 0);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].images.dim(0) == 4);
  CHECK(batches[1].images.dim(0) == 4);
  CHECK(batches[2].images.dim(0) == 2);
  CHECK(batches[0].images.shape == std::vector<int>{4, 1, 8, 8});

  // Multiset of labels is preserved across the shuffle.
  std::vector<int> seen;
  for (const Batch& b : batches) {
    REQUIRE(b.labels.size() == static_cast<std::size_t>(b.images.dim(0)));
    seen.insert(seen.end(), b.labels.begin(), b.labels.end());
  }
  std::vector<int> want;
  for (const auto& im : part) want.push_back(im.label);
  std::sort(seen.begin(), seen.end());
  std::sort(want.begin(), want.end());
  CHECK(seen == want);
}

TEST_CASE("batch order is epoch seeded") {
  const std::vector<LabeledImage> images = generate_synthetic(8, 8, 8, 3);
  const auto flat_pixels = [](const std::vector<Batch>& batches) {
    std::vector<double> v;
    for (const Batch& b : batches) v.insert(v.end(), b.images.data.begin(), b.images.data.end());
    return v;
  };
  const std::vector<Batch> e0a = batch_iter(images, 16, 5, 0);
  const std::vector<Batch> e0b = batch_iter(images, 16, 5, 0);
  const std::vector<Batch> e1 = batch_iter(images, 16, 5, 1);
  CHECK(flat_pixels(e0a) == flat_pixels(e0b));
  CHECK(flat_pixels(e0a) != flat_pixels(e1));
}

TEST_CASE("split manifest records ids per part") {
  TempTree tree("kan_test_manifest");
  const std::vector<LabeledImage> images = generate_synthetic(10, 8, 8, 5);
  const DatasetSplit split = stratified_split(images, synthetic_class_names(), 0.8, 0.1, 2);
  const std::string path = (tree.root / "split.json").string();
  write_split_manifest(path, split);

  std::ifstream in(path);
  REQUIRE(in.good());
  const nlohmann::json j = nlohmann::json::parse(in);
  CHECK(j.at("class_names").get<std::vector<std::string>>() == synthetic_class_names());
  CHECK(j.at("train").size() == split.train.size());
  CHECK(j.at("val").size() == split.val.size());
  CHECK(j.at("test").size() == split.test.size());
  CHECK(j.at("train")[0].get<std::string>() == split.train[0].source_id);
}
