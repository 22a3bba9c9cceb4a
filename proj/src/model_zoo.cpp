#include "kneeatt/model_zoo.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "kneeatt/ops.hpp"

namespace kneeatt {

std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::AntonyClsf: return "antony-clsf";
    case Backbone::AntonyExt: return "antony-ext";
    case Backbone::ResNet50: return "resnet50";
    case Backbone::Vgg16: return "vgg16";
  }
  return "?";
}

std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::None: return "none";
    case Fusion::EarlyFusion: return "early-fusion";
    case Fusion::MultiLoss: return "multi-loss";
  }
  return "?";
}

std::string to_string(HeadInit h) { return h == HeadInit::Zero ? "zero" : "glorot"; }

Backbone parse_backbone(const std::string& s) {
  for (Backbone b : {Backbone::AntonyClsf, Backbone::AntonyExt, Backbone::ResNet50, Backbone::Vgg16})
    if (to_string(b) == s) return b;
  throw std::invalid_argument("unknown backbone '" + s + "' (expected antony-clsf, antony-ext, resnet50 or vgg16)");
}

Fusion parse_fusion(const std::string& s) {
  for (Fusion f : {Fusion::None, Fusion::EarlyFusion, Fusion::MultiLoss})
    if (to_string(f) == s) return f;
  throw std::invalid_argument("unknown fusion '" + s + "' (expected none, early-fusion or multi-loss)");
}

HeadInit parse_head_init(const std::string& s) {
  if (s == "zero") return HeadInit::Zero;
  if (s == "glorot") return HeadInit::Glorot;
  throw std::invalid_argument("unknown head init '" + s + "' (expected glorot or zero)");
}

namespace {

std::size_t scaled(std::size_t channels, double width) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(channels) * width)));
}

LayerSpec conv(std::string name, std::size_t channels, std::size_t kernel, std::size_t stride, bool relu = true,
               std::vector<std::string> inputs = {}) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::Conv2d;
  l.channels = channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = Padding::Same;
  l.relu = relu;
  l.inputs = std::move(inputs);
  return l;
}

LayerSpec pool(std::string name, std::size_t kernel, std::size_t stride, Padding padding = Padding::Valid) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::MaxPool;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

BackboneLayout antony_clsf(double width) {
  BackboneLayout b;
  b.layers = {conv("conv1", scaled(32, width), 11, 2), pool("pool1", 3, 2),
              conv("conv2", scaled(64, width), 5, 1),  pool("pool2", 3, 2),
              conv("conv3", scaled(96, width), 3, 1),  pool("pool3", 3, 2),
              conv("conv4", scaled(128, width), 3, 1), pool("pool4", 3, 2)};
  b.taps = {{"att0", "pool2"}, {"att1", "pool3"}, {"att2", "pool4"}};
  return b;
}

BackboneLayout antony_ext(double width) {
  BackboneLayout b;
  b.layers = {conv("conv1", scaled(32, width), 11, 2),  pool("pool1", 3, 2),
              conv("conv2-1", scaled(64, width), 3, 1), conv("conv2-2", scaled(64, width), 3, 1),
              pool("pool2", 3, 2),                      conv("conv3-1", scaled(96, width), 3, 1),
              conv("conv3-2", scaled(96, width), 3, 1), pool("pool3", 3, 2),
              conv("conv4-1", scaled(128, width), 3, 1), conv("conv4-2", scaled(128, width), 3, 1),
              pool("pool4", 3, 2)};
  b.taps = {{"att0", "pool2"}, {"att1", "pool3"}, {"att2", "pool4"}};
  return b;
}

BackboneLayout vgg16(double width) {
  BackboneLayout b;
  const std::size_t widths[] = {64, 128, 256, 512, 512};
  const std::size_t depth[] = {2, 2, 3, 3, 3};
  for (std::size_t blk = 0; blk < 5; ++blk) {
    for (std::size_t i = 0; i < depth[blk]; ++i) {
      b.layers.push_back(conv("conv" + std::to_string(blk + 1) + "_" + std::to_string(i + 1), scaled(widths[blk], width), 3, 1));
    }
    b.layers.push_back(pool("pool" + std::to_string(blk + 1), 2, 2));
  }
  b.taps = {{"att0", "pool3"}, {"att1", "pool4"}, {"att2", "pool5"}};
  return b;
}

BackboneLayout resnet50(double width) {
  BackboneLayout b;
  b.layers.push_back(conv("conv1", scaled(64, width), 7, 2));
  // Standard ResNet pads its stem pool, unlike the other backbones.
  b.layers.push_back(pool("maxpool", 3, 2, Padding::Same));
  struct Stage {
    std::size_t mid, out, blocks, stride;
  };
  const Stage stages[] = {{64, 256, 3, 1}, {128, 512, 4, 2}, {256, 1024, 6, 2}, {512, 2048, 3, 2}};
  std::string prev = "maxpool";
  for (std::size_t s = 0; s < 4; ++s) {
    const Stage& st = stages[s];
    const std::string stage = "conv" + std::to_string(s + 2);
    for (std::size_t i = 0; i < st.blocks; ++i) {
      const std::string blk = stage + "_" + std::to_string(i + 1);
      const std::size_t stride = i == 0 ? st.stride : 1;
      b.layers.push_back(conv(blk + "/a", scaled(st.mid, width), 1, stride, true, {prev}));
      b.layers.push_back(conv(blk + "/b", scaled(st.mid, width), 3, 1));
      b.layers.push_back(conv(blk + "/c", scaled(st.out, width), 1, 1, false));
      std::string shortcut = prev;
      if (i == 0) {
        b.layers.push_back(conv(blk + "/proj", scaled(st.out, width), 1, stride, false, {prev}));
        shortcut = blk + "/proj";
      }
      LayerSpec add;
      add.name = i + 1 == st.blocks ? stage + "_x" : blk + "/out";
      add.kind = LayerKind::Add;
      add.relu = true;
      add.inputs = {blk + "/c", shortcut};
      b.layers.push_back(add);
      prev = add.name;
    }
  }
  b.taps = {{"att0", "conv3_x"}, {"att1", "conv4_x"}, {"att2", "conv5_x"}};
  return b;
}

}  // namespace

BackboneLayout backbone_layout(Backbone backbone, double width) {
  if (!(width > 0.0)) throw std::invalid_argument("width multiplier must be positive");
  switch (backbone) {
    case Backbone::AntonyClsf: return antony_clsf(width);
    case Backbone::AntonyExt: return antony_ext(width);
    case Backbone::ResNet50: return resnet50(width);
    case Backbone::Vgg16: return vgg16(width);
  }
  throw std::invalid_argument("unknown backbone");
}

std::map<std::string, Shape> infer_shapes(const std::vector<LayerSpec>& layers, const Shape& input_hwc) {
  std::map<std::string, Shape> shapes;
  Shape prev = input_hwc;
  auto lookup = [&](const std::string& name) -> const Shape& {
    auto it = shapes.find(name);
    if (it == shapes.end()) throw std::invalid_argument("layer input '" + name + "' is not defined earlier");
    return it->second;
  };
  for (const LayerSpec& l : layers) {
    const Shape in = l.inputs.empty() ? prev : lookup(l.inputs[0]);
    Shape out;
    switch (l.kind) {
      case LayerKind::Conv2d:
      case LayerKind::MaxPool: {
        const auto gh = axis_geometry(in[0], l.kernel, l.stride, l.padding);
        const auto gw = axis_geometry(in[1], l.kernel, l.stride, l.padding);
        out = {gh.out, gw.out, l.kind == LayerKind::Conv2d ? l.channels : in[2]};
        break;
      }
      case LayerKind::Add: {
        const Shape& other = lookup(l.inputs.at(1));
        if (other != in) throw ShapeError("add layer " + l.name + ": " + shape_str(in) + " vs " + shape_str(other));
        out = in;
        break;
      }
      default:
        throw std::invalid_argument("layer kind not supported in backbones: " + l.name);
    }
    shapes[l.name] = out;
    prev = out;
  }
  return shapes;
}

namespace {

std::size_t layer_index(const BackboneLayout& layout, const std::string& layer) {
  for (std::size_t i = 0; i < layout.layers.size(); ++i)
    if (layout.layers[i].name == layer) return i;
  throw std::logic_error("tap layer missing: " + layer);
}

std::size_t deepest_tap(const BackboneLayout& layout, const std::vector<std::string>& branches) {
  std::size_t deepest = 0;
  for (const auto& b : branches) deepest = std::max(deepest, layer_index(layout, layout.taps.at(b)));
  return deepest;
}

}  // namespace

std::vector<std::string> ModelSpec::problems() const {
  std::vector<std::string> out;
  if (input_h == 0 || input_w == 0 || input_c == 0) out.push_back("model: input extents must be positive");
  if (!(width_multiplier > 0.0)) out.push_back("model: width_multiplier must be positive");
  if (classes < 2) out.push_back("model: classes must be >= 2");
  if (attention_widths.empty()) out.push_back("model: attention_widths needs at least one entry");
  for (std::size_t w : attention_widths)
    if (w == 0) out.push_back("model: attention_widths entries must be positive");

  const auto layout = backbone_layout(backbone, width_multiplier > 0.0 ? width_multiplier : 1.0);
  std::set<std::string> seen;
  for (const auto& b : branches) {
    if (!layout.taps.count(b)) {
      out.push_back("model: attach point '" + b + "' does not exist in " + to_string(backbone) +
                    " (expected att0, att1 or att2)");
    }
    if (!seen.insert(b).second) out.push_back("model: branch '" + b + "' attached twice");
  }
  switch (fusion) {
    case Fusion::None:
      if (branches.empty()) out.push_back("model: no attention branches and fusion none leaves no classifier");
      else if (branches.size() > 1) out.push_back("model: fusion none takes exactly one branch; use multi-loss or early-fusion");
      break;
    case Fusion::EarlyFusion:
      if (branches.size() < 2) out.push_back("model: early-fusion needs at least two branches");
      break;
    case Fusion::MultiLoss: {
      if (branches.empty()) out.push_back("model: multi-loss needs at least one branch");
      if (loss_weights.size() != branches.size()) {
        out.push_back("model: multi-loss needs one weight per branch (" + std::to_string(branches.size()) +
                      " branches, " + std::to_string(loss_weights.size()) + " weights)");
      }
      bool any_positive = false;
      for (double w : loss_weights) {
        if (!(w >= 0.0 && w <= 1.0)) out.push_back("model: loss weight " + std::to_string(w) + " outside [0, 1]");
        any_positive = any_positive || w > 0.0;
      }
      if (!loss_weights.empty() && !any_positive) out.push_back("model: at least one loss weight must be positive");
      break;
    }
  }
  if (out.empty()) {
    const std::size_t deepest = deepest_tap(layout, branches);
    const std::vector<LayerSpec> used(layout.layers.begin(), layout.layers.begin() + static_cast<std::ptrdiff_t>(deepest + 1));
    try {
      infer_shapes(used, {input_h, input_w, input_c});
    } catch (const ShapeError& e) {
      out.push_back("model: input " + std::to_string(input_h) + "x" + std::to_string(input_w) + " is too small for " +
                    to_string(backbone) + ": " + e.what());
    }
  }
  return out;
}

void ModelSpec::validate() const {
  const auto p = problems();
  if (p.empty()) return;
  std::ostringstream os;
  for (std::size_t i = 0; i < p.size(); ++i) os << (i ? "\n" : "") << p[i];
  throw std::invalid_argument(os.str());
}

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const auto layout = backbone_layout(spec_.backbone, spec_.width_multiplier);
  const std::size_t deepest = deepest_tap(layout, spec_.branches);
  layers_.assign(layout.layers.begin(), layout.layers.begin() + static_cast<std::ptrdiff_t>(deepest + 1));
  shapes_ = infer_shapes(layers_, {spec_.input_h, spec_.input_w, spec_.input_c});

  for (const auto& b : spec_.branches) {
    BranchInfo info;
    info.name = b;
    info.tap_layer = layout.taps.at(b);
    info.depth = layer_index(layout, info.tap_layer);
    info.volume = shapes_.at(info.tap_layer);
    branches_.push_back(info);
  }

  std::mt19937_64 rng(spec_.seed);
  Shape prev{spec_.input_h, spec_.input_w, spec_.input_c};
  for (const auto& l : layers_) {
    if (l.kind == LayerKind::Conv2d) {
      const Shape& in = l.inputs.empty() ? prev : shapes_.at(l.inputs[0]);
      const std::size_t fan_in = l.kernel * l.kernel * in[2];
      Parameter* w = &params_.add("backbone/" + l.name + "/w", he_normal({l.kernel, l.kernel, in[2], l.channels}, fan_in, rng));
      Parameter* b = &params_.add("backbone/" + l.name + "/b", Tensor::zeros({l.channels}));
      layer_params_.emplace_back(w, b);
    } else {
      layer_params_.emplace_back(nullptr, nullptr);
    }
    prev = shapes_.at(l.name);
  }
  backbone_params_ = params_.count();

  AttentionConfig att;
  att.hidden_widths = spec_.attention_widths;
  std::size_t fused_width = 0;
  auto make_head = [&](const std::string& prefix, std::size_t in) {
    Tensor w = spec_.head_init == HeadInit::Zero ? Tensor::zeros({in, spec_.classes})
                                                 : glorot_uniform({in, spec_.classes}, in, spec_.classes, rng);
    Parameter* pw = &params_.add(prefix + "/head/w", std::move(w));
    Parameter* pb = &params_.add(prefix + "/head/b", Tensor::zeros({spec_.classes}));
    return std::make_pair(pw, pb);
  };
  for (const auto& info : branches_) {
    att.attach_point = info.tap_layer;
    modules_.emplace_back(info.name, info.volume, att, params_, rng);
    if (spec_.fusion != Fusion::EarlyFusion) heads_.push_back(make_head(info.name, info.volume[2]));
    fused_width += info.volume[2];
  }
  if (spec_.fusion == Fusion::EarlyFusion) fused_head_ = make_head("fused", fused_width);
}

ModelOutput Model::forward(Graph& graph, const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != spec_.input_h || images.dim(2) != spec_.input_w ||
      images.dim(3) != spec_.input_c) {
    throw ShapeError("model expects (B," + std::to_string(spec_.input_h) + "," + std::to_string(spec_.input_w) + "," +
                     std::to_string(spec_.input_c) + ") images, got " + shape_str(images.shape()));
  }
  std::map<std::string, Var> values;
  Var prev = graph.input(images);
  auto lookup = [&](const std::string& n) { return values.at(n); };
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const LayerSpec& l = layers_[li];
    Var in = l.inputs.empty() ? prev : lookup(l.inputs[0]);
    Var out;
    switch (l.kind) {
      case LayerKind::Conv2d: {
        const auto [w, b] = layer_params_[li];
        out = conv2d(in, graph.param(*w), graph.param(*b), l.stride, l.padding);
        if (l.relu) out = relu(out);
        break;
      }
      case LayerKind::MaxPool:
        out = maxpool2d(in, l.kernel, l.stride, l.padding);
        break;
      case LayerKind::Add:
        out = add(in, lookup(l.inputs.at(1)));
        if (l.relu) out = relu(out);
        break;
      default:
        throw std::logic_error("unsupported backbone layer " + l.name);
    }
    values[l.name] = out;
    prev = out;
  }

  ModelOutput result;
  std::vector<Var> features;
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    BranchOutput bo;
    bo.name = branches_[i].name;
    bo.attention = modules_[i].forward(values.at(branches_[i].tap_layer));
    if (!heads_.empty()) bo.head = branch_head(bo.attention.features, *heads_[i].first, *heads_[i].second);
    features.push_back(bo.attention.features);
    result.branches.push_back(std::move(bo));
  }
  if (fused_head_) result.fused = branch_head(concat(features), *fused_head_->first, *fused_head_->second);
  return result;
}

Var Model::loss(const ModelOutput& out, const Tensor& onehot, const std::vector<double>* weights,
                std::vector<Var>* branch_losses) const {
  switch (spec_.fusion) {
    case Fusion::EarlyFusion:
      return cross_entropy(out.fused->probs, onehot);
    case Fusion::None:
      return cross_entropy(out.branches.at(0).head->probs, onehot);
    case Fusion::MultiLoss: {
      std::vector<Var> losses;
      for (const auto& b : out.branches) losses.push_back(cross_entropy(b.head->probs, onehot));
      if (branch_losses) *branch_losses = losses;
      return multi_loss(losses, weights ? *weights : spec_.loss_weights);
    }
  }
  throw std::logic_error("unknown fusion");
}

std::vector<std::string> Model::branch_parameter_names(const std::string& branch) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::string& n = params_[i].name;
    if (n.rfind(branch + "/", 0) == 0) out.push_back(n);
  }
  return out;
}

std::size_t Model::backbone_parameter_count() const { return backbone_params_; }

Var multi_loss(std::span<const Var> branch_losses, std::span<const double> weights) {
  if (branch_losses.size() != weights.size()) {
    throw std::invalid_argument("multi_loss: " + std::to_string(branch_losses.size()) + " losses but " +
                                std::to_string(weights.size()) + " weights");
  }
  for (double w : weights)
    if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("multi_loss: weight " + std::to_string(w) + " outside [0, 1]");
  return weighted_sum(branch_losses, weights);
}

double multi_loss(std::span<const double> branch_losses, std::span<const double> weights) {
  if (branch_losses.size() != weights.size()) {
    throw std::invalid_argument("multi_loss: " + std::to_string(branch_losses.size()) + " losses but " +
                                std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += weights[i] * branch_losses[i];
  return total;
}

std::vector<TableRow> reference_table(Backbone backbone) {
  switch (backbone) {
    case Backbone::AntonyClsf:
      return {{"conv1", {100, 150, 32}}, {"pool1", {49, 74, 32}}, {"conv2", {49, 74, 64}}, {"pool2", {24, 36, 64}},
              {"conv3", {24, 36, 96}},   {"pool3", {11, 17, 96}}, {"conv4", {11, 17, 128}}, {"pool4", {5, 8, 128}}};
    case Backbone::AntonyExt:
      return {{"conv1", {100, 150, 32}},  {"pool1", {49, 74, 32}},   {"conv2-1", {49, 74, 64}},
              {"conv2-2", {49, 74, 64}},  {"pool2", {24, 36, 64}},   {"conv3-1", {24, 36, 96}},
              {"conv3-2", {24, 36, 96}},  {"pool3", {11, 17, 96}},   {"conv4-1", {11, 17, 128}},
              {"conv4-2", {11, 17, 128}}, {"pool4", {5, 8, 128}}};
    case Backbone::ResNet50:
      // Only the rows consistent with bottleneck arithmetic on a 224x224
      // input. The printed conv1 (224x224x64) and maxpool (112x112x64) cells
      // correspond to a 448x448 input, and the printed conv4_x/conv5_x depth
      // of 512 omits the 4x bottleneck expansion (built: 1024 and 2048).
      return {{"conv2_x", {56, 56, 256}}, {"conv3_x", {28, 28, 512}}};
    case Backbone::Vgg16:
      return {{"pool3", {40, 28, 256}}, {"pool4", {20, 14, 512}}, {"pool5", {10, 7, 512}}};
  }
  return {};
}

Shape reference_input(Backbone backbone) {
  switch (backbone) {
    case Backbone::AntonyClsf:
    case Backbone::AntonyExt: return {200, 300, 1};
    case Backbone::ResNet50: return {224, 224, 1};
    case Backbone::Vgg16: return {320, 224, 1};
  }
  return {};
}

}  // namespace kneeatt
