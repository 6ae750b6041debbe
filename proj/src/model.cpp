#include "kan/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <unordered_map>
#include <utility>

#include "json.hpp"

namespace kan {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written as raw little-endian doubles");

constexpr char kMagic[8] = {'K', 'A', 'N', 'M', 'O', 'D', 'E', 'L'};
constexpr int kFormatVersion = 1;

struct NameEntry {
  ModelName name;
  const char* text;
};

constexpr NameEntry kNames[] = {
    {ModelName::kTwoLayerConvNet, "TwoLayerConvNet"},
    {ModelName::kTwoLayerConvNetPlus, "TwoLayerConvNetPlus"},
    {ModelName::kSingleLayerLinearNet, "SingleLayerLinearNet"},
    {ModelName::kFourLayerConvNet, "FourLayerConvNet"},
    {ModelName::kTwoLayerConvKAN, "TwoLayerConvKAN"},
    {ModelName::kFourLayerConvKAN, "FourLayerConvKAN"},
    {ModelName::kThreeLayerConvTwoLayerKAN, "ThreeLayerConvTwoLayerKAN"},
};

int pool_stages(ModelName name) {
  switch (name) {
    case ModelName::kSingleLayerLinearNet:
      return 0;
    case ModelName::kTwoLayerConvNet:
    case ModelName::kTwoLayerConvNetPlus:
    case ModelName::kTwoLayerConvKAN:
      return 2;
    case ModelName::kThreeLayerConvTwoLayerKAN:
      return 3;
    case ModelName::kFourLayerConvNet:
    case ModelName::kFourLayerConvKAN:
      return 4;
  }
  throw std::logic_error("pool_stages: unhandled model name");
}

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

const std::vector<ModelName>& all_model_names() {
  static const std::vector<ModelName> names = [] {
    std::vector<ModelName> v;
    for (const NameEntry& e : kNames) v.push_back(e.name);
    return v;
  }();
  return names;
}

std::string to_string(ModelName name) {
  for (const NameEntry& e : kNames) {
    if (e.name == name) return e.text;
  }
  throw std::logic_error("to_string: unhandled model name");
}

ModelName parse_model_name(const std::string& s) {
  for (const NameEntry& e : kNames) {
    if (s == e.text) return e.name;
  }
  std::string valid;
  for (const NameEntry& e : kNames) {
    if (!valid.empty()) valid += ", ";
    valid += e.text;
  }
  throw std::invalid_argument("unknown model \"" + s + "\" (expected one of: " + valid + ")");
}

std::string ModelSpec::to_json() const {
  json j;
  j["name"] = kan::to_string(name);
  j["input_shape"] = {input_shape[0], input_shape[1], input_shape[2]};
  j["n_classes"] = n_classes;
  j["kan"] = {{"grid_intervals", kan.grid_intervals}, {"degree", kan.degree},
              {"range_lo", kan.range_lo},             {"range_hi", kan.range_hi},
              {"base_term", kan.base_term},           {"grid_blend", kan.grid_blend}};
  j["plus_hidden"] = plus_hidden;
  j["four_hidden"] = four_hidden;
  j["kan_mid"] = kan_mid;
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelSpec spec;
  if (j.contains("name")) spec.name = parse_model_name(j.at("name").get<std::string>());
  if (j.contains("input_shape")) {
    const auto& shape = j.at("input_shape");
    if (!shape.is_array() || shape.size() != 3) {
      throw std::invalid_argument("model spec: input_shape must be [channels, H, W]");
    }
    for (int i = 0; i < 3; ++i) spec.input_shape[static_cast<std::size_t>(i)] = shape.at(static_cast<std::size_t>(i)).get<int>();
  }
  spec.n_classes = j.value("n_classes", spec.n_classes);
  if (j.contains("kan")) {
    const auto& k = j.at("kan");
    spec.kan.grid_intervals = k.value("grid_intervals", spec.kan.grid_intervals);
    spec.kan.degree = k.value("degree", spec.kan.degree);
    spec.kan.range_lo = k.value("range_lo", spec.kan.range_lo);
    spec.kan.range_hi = k.value("range_hi", spec.kan.range_hi);
    spec.kan.base_term = k.value("base_term", spec.kan.base_term);
    spec.kan.grid_blend = k.value("grid_blend", spec.kan.grid_blend);
  }
  spec.plus_hidden = j.value("plus_hidden", spec.plus_hidden);
  spec.four_hidden = j.value("four_hidden", spec.four_hidden);
  spec.kan_mid = j.value("kan_mid", spec.kan_mid);
  return spec;
}

int Model::forward(Tape& tape, int x, std::vector<Tensor>* kan_inputs) {
  int cur = x;
  for (auto& layer : layers_) {
    if (kan_inputs != nullptr && dynamic_cast<KanLinearLayer*>(layer.get()) != nullptr) {
      kan_inputs->push_back(tape.value(cur));
    }
    cur = layer->forward(tape, cur);
  }
  return cur;
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    for (Parameter* p : layer->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Parameter*> Model::trainable_parameters() {
  std::vector<Parameter*> out;
  for (auto& layer : layers_) {
    for (Parameter* p : layer->trainable_parameters()) out.push_back(p);
  }
  return out;
}

std::vector<KanLinearLayer*> Model::kan_layers() {
  std::vector<KanLinearLayer*> out;
  for (auto& layer : layers_) {
    if (auto* k = dynamic_cast<KanLinearLayer*>(layer.get())) out.push_back(k);
  }
  return out;
}

std::int64_t Model::param_count() {
  std::int64_t n = 0;
  for (auto& layer : layers_) n += layer->param_count();
  return n;
}

std::vector<std::string> Model::describe_layers() const {
  std::vector<std::string> out;
  for (const auto& layer : layers_) out.push_back(layer->describe());
  return out;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  const int c = spec.input_shape[0];
  const int H = spec.input_shape[1];
  const int W = spec.input_shape[2];
  if (c < 1 || H < 1 || W < 1) {
    throw std::invalid_argument("build_model: input shape must be positive, got [" +
                                std::to_string(c) + ", " + std::to_string(H) + ", " +
                                std::to_string(W) + "]");
  }
  if (spec.n_classes < 2) {
    throw std::invalid_argument("build_model: need at least 2 classes");
  }
  if (spec.plus_hidden < 1 || spec.four_hidden < 1 || spec.kan_mid < 1) {
    throw std::invalid_argument("build_model: hidden widths must be positive");
  }

  const int pools = pool_stages(spec.name);
  const int div = 1 << pools;
  if (H % div != 0 || W % div != 0) {
    throw std::invalid_argument("build_model: input " + std::to_string(H) + "x" +
                                std::to_string(W) + " not divisible by " + std::to_string(div) +
                                " (" + std::to_string(pools) + " pooling stages in " +
                                to_string(spec.name) + ")");
  }
  const int Hp = H / div;
  const int Wp = W / div;

  Model m;
  m.spec_ = spec;
  m.seed_ = seed;

  // Each parametric layer draws from its own stream keyed by position, so
  // identical (spec, seed) builds are bit-identical.
  auto add_conv_block = [&](int ci, int co) {
    Rng rng(mix64(seed, static_cast<std::uint64_t>(m.layers_.size())));
    m.layers_.push_back(std::make_unique<Conv2dLayer>(ci, co, rng));
    m.layers_.push_back(std::make_unique<ReluLayer>());
    m.layers_.push_back(std::make_unique<MaxPool2Layer>());
  };
  auto add_linear = [&](int ni, int no) {
    Rng rng(mix64(seed, static_cast<std::uint64_t>(m.layers_.size())));
    m.layers_.push_back(std::make_unique<LinearLayer>(ni, no, rng));
  };
  auto add_kan = [&](int ni, int no) {
    Rng rng(mix64(seed, static_cast<std::uint64_t>(m.layers_.size())));
    m.layers_.push_back(std::make_unique<KanLinearLayer>(ni, no, spec.kan, rng));
  };
  auto add_relu = [&] { m.layers_.push_back(std::make_unique<ReluLayer>()); };
  auto add_flatten = [&] { m.layers_.push_back(std::make_unique<FlattenLayer>()); };

  switch (spec.name) {
    case ModelName::kTwoLayerConvNet:
      add_conv_block(c, 5);
      add_conv_block(5, 5);
      add_flatten();
      add_linear(5 * Hp * Wp, spec.n_classes);
      break;
    case ModelName::kTwoLayerConvNetPlus:
      add_conv_block(c, 5);
      add_conv_block(5, 25);
      add_flatten();
      add_linear(25 * Hp * Wp, spec.plus_hidden);
      add_relu();
      add_linear(spec.plus_hidden, spec.n_classes);
      break;
    case ModelName::kSingleLayerLinearNet:
      add_flatten();
      add_linear(c * H * W, spec.n_classes);
      break;
    case ModelName::kFourLayerConvNet:
      add_conv_block(c, 8);
      add_conv_block(8, 16);
      add_conv_block(16, 32);
      add_conv_block(32, 64);
      add_flatten();
      add_linear(64 * Hp * Wp, spec.four_hidden);
      add_relu();
      add_linear(spec.four_hidden, spec.n_classes);
      break;
    case ModelName::kTwoLayerConvKAN:
      add_conv_block(c, 5);
      add_conv_block(5, 5);
      add_flatten();
      add_kan(5 * Hp * Wp, spec.n_classes);
      break;
    case ModelName::kFourLayerConvKAN:
      add_conv_block(c, 8);
      add_conv_block(8, 16);
      add_conv_block(16, 32);
      add_conv_block(32, 64);
      add_flatten();
      add_kan(64 * Hp * Wp, spec.n_classes);
      break;
    case ModelName::kThreeLayerConvTwoLayerKAN:
      add_conv_block(c, 8);
      add_conv_block(8, 16);
      add_conv_block(16, 32);
      add_flatten();
      add_kan(32 * Hp * Wp, spec.kan_mid);
      add_kan(spec.kan_mid, spec.n_classes);
      break;
  }

  for (std::size_t li = 0; li < m.layers_.size(); ++li) {
    for (Parameter* p : m.layers_[li]->parameters()) {
      p->name = "layer" + std::to_string(li) + "." + p->name;
    }
  }
  return m;
}

Tensor forward_classify(Model& model, const Tensor& images) {
  const auto& in = model.spec().input_shape;
  if (images.ndim() != 4 || images.dim(1) != in[0] || images.dim(2) != in[1] ||
      images.dim(3) != in[2]) {
    throw std::invalid_argument("forward_classify: images " + shape_str(images.shape) +
                                " do not match model input [" + std::to_string(in[0]) + ", " +
                                std::to_string(in[1]) + ", " + std::to_string(in[2]) + "]");
  }
  Tape tape;
  const int x = tape.input(images);
  const int logits = model.forward(tape, x);
  return tape.value(logits);
}

void save_checkpoint(Model& model, const std::string& path) {
  struct BlobRef {
    std::string name;
    std::vector<int> shape;
    std::vector<double> owned;  // grids need a packed copy
    const double* data = nullptr;
    std::int64_t count = 0;
  };
  std::vector<BlobRef> blobs;

  const auto& layers = model.layers();
  for (std::size_t li = 0; li < layers.size(); ++li) {
    for (Parameter* p : layers[li]->parameters()) {
      BlobRef b;
      b.name = p->name;
      b.shape = p->value.shape;
      b.data = p->value.data.data();
      b.count = p->value.numel();
      blobs.push_back(std::move(b));
    }
    if (auto* k = dynamic_cast<KanLinearLayer*>(layers[li].get())) {
      BlobRef b;
      b.name = "layer" + std::to_string(li) + ".grids";
      const auto& grids = k->grids();
      const int knot_count = static_cast<int>(grids[0].knots.size());
      b.shape = {k->n_in(), knot_count};
      for (const KnotGrid& g : grids) b.owned.insert(b.owned.end(), g.knots.begin(), g.knots.end());
      b.data = b.owned.data();
      b.count = static_cast<std::int64_t>(b.owned.size());
      blobs.push_back(std::move(b));
    }
  }

  json header;
  header["format"] = kFormatVersion;
  header["model"] = json::parse(model.spec().to_json());
  header["seed"] = model.seed();
  header["blobs"] = json::array();
  for (const BlobRef& b : blobs) {
    header["blobs"].push_back({{"name", b.name}, {"shape", b.shape}});
  }
  const std::string header_text = header.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  append_u64_le(out, header_text.size());
  out += header_text;
  for (const BlobRef& b : blobs) {
    out.append(reinterpret_cast<const char*>(b.data), static_cast<std::size_t>(b.count) * sizeof(double));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not a model file (bad magic)");
  }
  const std::uint64_t header_len =
      read_u64_le(reinterpret_cast<const unsigned char*>(bytes.data()) + sizeof(kMagic));
  std::size_t offset = sizeof(kMagic) + 8;
  if (offset + header_len > bytes.size()) {
    throw std::runtime_error("checkpoint: truncated header in " + path);
  }
  json header;
  try {
    header = json::parse(bytes.substr(offset, header_len));
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: corrupt header in " + path + ": " + e.what());
  }
  offset += header_len;

  if (header.value("format", -1) != kFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported format version in " + path);
  }
  const ModelSpec spec = ModelSpec::from_json(header.at("model").dump());
  const std::uint64_t seed = header.at("seed").get<std::uint64_t>();
  Model model = build_model(spec, seed);

  std::unordered_map<std::string, Parameter*> params;
  for (Parameter* p : model.parameters()) params[p->name] = p;
  std::unordered_map<std::string, KanLinearLayer*> grid_targets;
  {
    const auto& layers = model.layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
      if (auto* k = dynamic_cast<KanLinearLayer*>(layers[li].get())) {
        grid_targets["layer" + std::to_string(li) + ".grids"] = k;
      }
    }
  }

  for (const auto& entry : header.at("blobs")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    std::int64_t count = 1;
    for (int d : shape) count *= d;
    const std::size_t nbytes = static_cast<std::size_t>(count) * sizeof(double);
    if (offset + nbytes > bytes.size()) {
      throw std::runtime_error("checkpoint: truncated blob \"" + name + "\" in " + path);
    }
    const double* src = reinterpret_cast<const double*>(bytes.data() + offset);
    offset += nbytes;

    if (auto git = grid_targets.find(name); git != grid_targets.end()) {
      KanLinearLayer* k = git->second;
      const int knot_count = k->config().grid_intervals + 2 * k->config().degree + 1;
      if (shape != std::vector<int>{k->n_in(), knot_count}) {
        throw std::runtime_error("checkpoint: blob \"" + name + "\" has wrong shape");
      }
      std::vector<KnotGrid> grids(static_cast<std::size_t>(k->n_in()));
      for (int i = 0; i < k->n_in(); ++i) {
        KnotGrid& g = grids[static_cast<std::size_t>(i)];
        g.degree = k->config().degree;
        g.intervals = k->config().grid_intervals;
        g.knots.assign(src + static_cast<std::int64_t>(i) * knot_count,
                       src + static_cast<std::int64_t>(i + 1) * knot_count);
        g.lo = g.knots[static_cast<std::size_t>(g.degree)];
        g.hi = g.knots[static_cast<std::size_t>(g.degree + g.intervals)];
      }
      k->set_grids(std::move(grids));
      continue;
    }
    auto pit = params.find(name);
    if (pit == params.end()) {
      throw std::runtime_error("checkpoint: blob \"" + name + "\" does not match any parameter");
    }
    Parameter* p = pit->second;
    if (shape != p->value.shape) {
      throw std::runtime_error("checkpoint: blob \"" + name + "\" has wrong shape");
    }
    std::copy(src, src + count, p->value.data.begin());
  }
  if (offset != bytes.size()) {
    throw std::runtime_error("checkpoint: trailing bytes in " + path);
  }
  return model;
}

}  // namespace kan
