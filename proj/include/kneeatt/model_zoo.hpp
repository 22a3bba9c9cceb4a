#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kneeatt/attention.hpp"
#include "kneeatt/kernels.hpp"
#include "kneeatt/params.hpp"

namespace kneeatt {

enum class Backbone { AntonyClsf, AntonyExt, ResNet50, Vgg16 };
enum class Fusion { None, EarlyFusion, MultiLoss };
enum class HeadInit { Glorot, Zero };

std::string to_string(Backbone b);
std::string to_string(Fusion f);
std::string to_string(HeadInit h);
Backbone parse_backbone(const std::string& s);
Fusion parse_fusion(const std::string& s);
HeadInit parse_head_init(const std::string& s);

enum class LayerKind {
  Conv2d,
  MaxPool,
  Dense,
  LocallyConnected1x1,
  Relu,
  Sigmoid,
  Softmax,
  Gap,
  Concat,
  ElementwiseMul,
  Add,
};

/// One backbone layer. Inputs name earlier layers; an empty list means the
/// previous layer (or the image for the first one).
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv2d;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  Padding padding = Padding::Same;
  std::size_t channels = 0;  ///< conv output channels
  bool relu = false;         ///< conv/add followed by relu
  std::vector<std::string> inputs;
};

struct BackboneLayout {
  std::vector<LayerSpec> layers;
  std::map<std::string, std::string> taps;  ///< att0/att1/att2 -> layer name
};

/// Layer stacks for each backbone; channel counts are scaled by `width`.
BackboneLayout backbone_layout(Backbone backbone, double width = 1.0);

/// (H, W, C) of every layer for an (H, W, C) input.
std::map<std::string, Shape> infer_shapes(const std::vector<LayerSpec>& layers, const Shape& input_hwc);

struct ModelSpec {
  Backbone backbone = Backbone::Vgg16;
  std::size_t input_h = 320;
  std::size_t input_w = 224;
  std::size_t input_c = 1;
  double width_multiplier = 1.0;
  std::vector<std::string> branches{"att0", "att1"};
  Fusion fusion = Fusion::MultiLoss;
  std::vector<double> loss_weights{1.0, 0.8};
  std::size_t classes = 5;
  std::vector<std::size_t> attention_widths{32, 16};
  HeadInit head_init = HeadInit::Glorot;
  std::uint64_t seed = 1;

  /// All problems found, empty when the spec is usable.
  std::vector<std::string> problems() const;
  void validate() const;
};

struct BranchInfo {
  std::string name;       ///< att0 / att1 / att2
  std::string tap_layer;  ///< backbone layer feeding the module
  std::size_t depth = 0;  ///< index of the tap layer in the backbone
  Shape volume;           ///< (H, W, N) at the tap
};

struct BranchOutput {
  std::string name;
  AttentionOutput attention;
  std::optional<BranchHeadOutput> head;  ///< absent under early fusion
};

struct ModelOutput {
  std::vector<BranchOutput> branches;
  std::optional<BranchHeadOutput> fused;
};

/// Backbone + attention branches + heads, with its own parameter registry.
/// The backbone is truncated after the deepest tapped layer.
class Model {
 public:
  explicit Model(ModelSpec spec);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  ModelOutput forward(Graph& graph, const Tensor& images) const;

  /// Training objective: cross-entropy of the single branch (fusion none),
  /// of the fused head (early fusion), or sum_b w_b * CE_b (multi-loss) with
  /// the target replicated per branch. `weights` overrides spec.loss_weights.
  Var loss(const ModelOutput& out, const Tensor& onehot, const std::vector<double>* weights = nullptr,
           std::vector<Var>* branch_losses = nullptr) const;

  const ModelSpec& spec() const { return spec_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  std::size_t parameter_count() const { return params_.count(); }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const std::map<std::string, Shape>& layer_shapes() const { return shapes_; }
  const std::vector<BranchInfo>& branches() const { return branches_; }
  /// Names of the parameters that belong to one branch (attention + head).
  std::vector<std::string> branch_parameter_names(const std::string& branch) const;
  std::size_t backbone_parameter_count() const;

 private:
  ModelSpec spec_;
  std::vector<LayerSpec> layers_;
  std::map<std::string, Shape> shapes_;
  std::vector<BranchInfo> branches_;
  ParameterStore params_;
  std::vector<std::pair<Parameter*, Parameter*>> layer_params_;  ///< conv (w, b) per layer, null otherwise
  std::vector<AttentionModule> modules_;
  std::vector<std::pair<Parameter*, Parameter*>> heads_;
  std::optional<std::pair<Parameter*, Parameter*>> fused_head_;
  std::size_t backbone_params_ = 0;
};

/// sum_b w_b * L_b over scalar losses. Weights must lie in [0, 1].
Var multi_loss(std::span<const Var> branch_losses, std::span<const double> weights);
double multi_loss(std::span<const double> branch_losses, std::span<const double> weights);

/// Output-shape rows printed in the reference architecture tables, for
/// conformance checks: layer name -> (H, W, C).
struct TableRow {
  std::string layer;
  Shape hwc;
};
std::vector<TableRow> reference_table(Backbone backbone);
/// Input size each reference table was printed for.
Shape reference_input(Backbone backbone);

}  // namespace kneeatt
