// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes. `--only 7` runs a single criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "kneeatt/attention.hpp"
#include "kneeatt/data.hpp"
#include "kneeatt/gradcheck.hpp"
#include "kneeatt/metrics.hpp"
#include "kneeatt/model_zoo.hpp"
#include "kneeatt/ops.hpp"
#include "kneeatt/train.hpp"

using namespace kneeatt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

// ---------------------------------------------------------------- 1

struct OpCase {
  std::string name;
  std::vector<std::pair<Shape, std::pair<double, double>>> inputs;
  std::function<Var(Graph&, std::vector<Var>&)> op;
};

Outcome gradient_fidelity() {
  std::mt19937_64 rng(1001);
  auto dim = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  const std::size_t b = dim(1, 3), h = dim(4, 8), w = dim(4, 8), c = dim(2, 5), n = dim(2, 6), k = dim(3, 6);
  const Tensor onehot = [&] {
    std::vector<int> labels;
    for (std::size_t i = 0; i < b; ++i) labels.push_back(static_cast<int>(i % k));
    return one_hot(labels, k);
  }();
  const auto u = std::make_pair(-1.0, 1.0);

  std::vector<OpCase> cases;
  for (std::size_t stride : {1, 2})
    for (Padding pad : {Padding::Same, Padding::Valid})
      cases.push_back({"conv2d s" + std::to_string(stride) + (pad == Padding::Same ? " same" : " valid"),
                       {{{b, h, w, c}, u}, {{3, 3, c, n}, u}, {{n}, u}},
                       [=](Graph&, auto& v) { return conv2d(v[0], v[1], v[2], stride, pad); }});
  for (Padding pad : {Padding::Valid, Padding::Same})
    cases.push_back({pad == Padding::Same ? "maxpool same" : "maxpool valid",
                     {{{b, h, w, c}, u}},
                     [=](Graph&, auto& v) { return maxpool2d(v[0], 3, 2, pad); }});
  cases.push_back({"dense", {{{b, c}, u}, {{c, k}, u}, {{k}, u}}, [](Graph&, auto& v) { return dense(v[0], v[1], v[2]); }});
  cases.push_back({"locally_connected_1x1",
                   {{{b, h, w, c}, u}, {{h, w, c}, u}, {{h, w}, u}},
                   [](Graph&, auto& v) { return locally_connected_1x1(v[0], v[1], v[2]); }});
  cases.push_back({"relu", {{{b, h, w, c}, u}}, [](Graph&, auto& v) { return relu(v[0]); }});
  cases.push_back({"sigmoid", {{{b, h, w, 1}, {-4.0, 4.0}}}, [](Graph&, auto& v) { return sigmoid(v[0]); }});
  cases.push_back({"softmax", {{{b, k}, {-3.0, 3.0}}}, [](Graph&, auto& v) { return softmax(v[0]); }});
  cases.push_back({"gap", {{{b, h, w, c}, u}}, [](Graph&, auto& v) { return gap(v[0]); }});
  cases.push_back({"mask_multiply", {{{b, h, w, c}, u}, {{b, h, w, 1}, {0.05, 1.0}}},
                   [](Graph&, auto& v) { return mask_multiply(v[0], v[1]); }});
  cases.push_back({"concat", {{{b, c}, u}, {{b, n}, u}}, [](Graph&, auto& v) {
                     const std::vector<Var> parts{v[0], v[1]};
                     return concat(parts);
                   }});
  cases.push_back({"cross_entropy", {{{b, k}, {0.05, 1.0}}},
                   [&](Graph&, auto& v) { return cross_entropy(v[0], onehot); }});
  cases.push_back({"softmax + cross_entropy", {{{b, k}, {-2.0, 2.0}}},
                   [&](Graph&, auto& v) { return cross_entropy(softmax(v[0]), onehot); }});
  cases.push_back({"divide_rows", {{{b, c}, u}, {{b, 1}, {0.3, 2.0}}},
                   [](Graph&, auto& v) { return divide_rows(v[0], v[1], kMaskMeanFloor); }});
  cases.push_back({"add / multiply / scale", {{{b, c}, u}, {{b, c}, u}},
                   [](Graph&, auto& v) { return add(multiply(v[0], v[1]), scale(v[1], 0.35)); }});
  cases.push_back({"sum / weighted_sum", {{{b, c}, u}, {{k}, u}}, [](Graph&, auto& v) {
                     const std::vector<Var> s{sum(multiply(v[0], v[0])), sum(v[1])};
                     const std::vector<double> wt{0.6, 1.0};
                     return weighted_sum(s, wt);
                   }});

  GradCheckOptions opt;
  opt.epsilon = 1e-5;
  opt.max_coords_per_param = 128;
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  for (const auto& oc : cases) {
    std::vector<std::unique_ptr<Parameter>> params;
    for (const auto& [shape, range] : oc.inputs)
      params.push_back(std::make_unique<Parameter>("x" + std::to_string(params.size()),
                                                   random_tensor(shape, rng, range.first, range.second)));
    std::vector<Parameter*> ptrs;
    for (auto& p : params) ptrs.push_back(p.get());
    Tensor coeffs;
    const auto build = [&](Graph& g) {
      std::vector<Var> vars;
      for (auto* p : ptrs) vars.push_back(g.param(*p));
      Var out = oc.op(g, vars);
      if (out.value().size() == 1) return out;
      if (coeffs.empty()) coeffs = random_tensor(out.value().shape(), rng);
      return dot(out, coeffs);
    };
    const auto r = grad_check(ptrs, build, opt);
    checked += r.checked;
    if (r.checked == 0 || r.max_rel_error >= worst) {
      worst = r.checked == 0 ? 1.0 : r.max_rel_error;
      worst_name = oc.name + " " + r.worst;
    }
  }

  // Whole attention module, volume included.
  {
    ParameterStore store;
    AttentionModule m("att", {h, w, c}, AttentionConfig{{6, 4}, ""}, store, rng);
    for (std::size_t i = 0; i < store.size(); ++i) store[i].value = random_tensor(store[i].value.shape(), rng, -0.8, 0.8);
    Parameter volume("volume", random_tensor({b, h, w, c}, rng));
    const Tensor coeffs = random_tensor({b, c}, rng);
    std::vector<Parameter*> ptrs{&volume};
    for (std::size_t i = 0; i < store.size(); ++i) ptrs.push_back(&store[i]);
    const auto r = grad_check(ptrs, [&](Graph& g) { return dot(m.forward(g.param(volume)).features, coeffs); }, opt);
    checked += r.checked;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = "attention module " + r.worst;
    }
  }
  return {worst < 1e-5, std::to_string(cases.size() + 1) + " checks, " + std::to_string(checked) +
                            " coordinates, max rel err " + fmt(worst) + " at " + worst_name};
}

// ---------------------------------------------------------------- 2

Outcome shape_conformance() {
  std::size_t rows = 0, mismatches = 0;
  std::string first_bad;
  for (Backbone bb : {Backbone::AntonyClsf, Backbone::AntonyExt}) {
    const auto shapes = infer_shapes(backbone_layout(bb).layers, reference_input(bb));
    for (const auto& row : reference_table(bb)) {
      ++rows;
      const auto it = shapes.find(row.layer);
      if (it == shapes.end() || it->second != row.hwc) {
        if (!mismatches++) first_bad = to_string(bb) + "/" + row.layer;
      }
    }
  }
  std::size_t resnet_rows = 0, resnet_match = 0;
  const auto rs = infer_shapes(backbone_layout(Backbone::ResNet50).layers, reference_input(Backbone::ResNet50));
  for (const auto& row : reference_table(Backbone::ResNet50)) {
    ++resnet_rows;
    const auto it = rs.find(row.layer);
    resnet_match += it != rs.end() && it->second == row.hwc;
  }
  std::string detail = std::to_string(rows - mismatches) + "/" + std::to_string(rows) +
                       " rows of the two Antony tables; resnet50 " + std::to_string(resnet_match) + "/" +
                       std::to_string(resnet_rows) + " (documented deviations)";
  if (mismatches) detail += "; first mismatch " + first_bad;
  return {mismatches == 0 && rows > 0, detail};
}

// ---------------------------------------------------------------- 3

Outcome normalization_identity() {
  std::mt19937_64 rng(3003);
  std::uniform_int_distribution<std::size_t> dim(1, 9);
  std::uniform_real_distribution<double> bias(-8.0, 8.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = dim(rng) % 3 + 1, h = dim(rng), w = dim(rng), n = dim(rng);
    ParameterStore store;
    AttentionModule m("att", {h, w, n}, AttentionConfig{{5, 3}, ""}, store, rng);
    for (std::size_t i = 0; i < store.size(); ++i)
      if (store[i].name.find("conv") != std::string::npos) store[i].value = random_tensor(store[i].value.shape(), rng);
    store.get("att/mask/b").value.fill(bias(rng));
    const Tensor v = random_tensor({b, h, w, n}, rng, -5.0, 5.0);
    Graph g;
    const Tensor f = m.forward(g.input(v)).features.value();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t c = 0; c < n; ++c) {
        double s = 0.0;
        for (std::size_t p = 0; p < h * w; ++p) s += v[(i * h * w + p) * n + c];
        worst = std::max(worst, std::abs(f[i * n + c] - s / static_cast<double>(h * w)));
      }
  }
  return {worst < 1e-10, "100 volumes, max |F - GAP| " + fmt(worst)};
}

// ---------------------------------------------------------------- 4

ModelSpec small_vgg(std::vector<std::string> branches, std::size_t h = 32, std::size_t w = 24) {
  ModelSpec s;
  s.input_h = h;
  s.input_w = w;
  s.width_multiplier = 0.125;
  s.attention_widths = {8, 4};
  s.branches = branches;
  s.loss_weights.assign(branches.size(), 1.0);
  return s;
}

Outcome multiloss_linearity_and_gating() {
  std::mt19937_64 rng(4004);
  Model m(small_vgg({"att0", "att1", "att2"}, 64, 48));
  for (std::size_t i = 0; i < m.params().size(); ++i)
    if (m.params()[i].name.rfind("att", 0) == 0)
      m.params()[i].value = random_tensor(m.params()[i].value.shape(), rng, -0.5, 0.5);
  const Tensor x = random_tensor({4, 64, 48, 1}, rng, 0.0, 1.0);
  const Tensor y = one_hot(std::vector<int>{0, 2, 4, 1}, 5);

  const auto objective = [&](const std::vector<double>& w) {
    Graph g;
    return m.loss(m.forward(g, x), y, &w).value()[0];
  };
  std::vector<Var> parts;
  Graph g;
  m.loss(m.forward(g, x), y, nullptr, &parts);
  std::vector<double> l;
  for (const auto& p : parts) l.push_back(p.value()[0]);

  double lin = 0.0;
  std::uniform_real_distribution<double> wd(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> w{wd(rng), wd(rng), wd(rng)};
    double expected = 0.0;
    for (std::size_t b = 0; b < 3; ++b) expected += w[b] * l[b];
    lin = std::max(lin, std::abs(objective(w) - expected));
    // Linearity in each coordinate: midpoint of two settings.
    for (std::size_t b = 0; b < 3; ++b) {
      auto lo = w, hi = w, mid = w;
      lo[b] = 0.0;
      hi[b] = 1.0;
      mid[b] = 0.5;
      lin = std::max(lin, std::abs(objective(mid) - 0.5 * (objective(lo) + objective(hi))));
    }
  }

  std::size_t zero_checked = 0, fd_checked = 0;
  double max_grad = 0.0, max_fd = 0.0;
  for (std::size_t off = 0; off < 3; ++off) {
    std::vector<double> w{0.9, 0.7, 0.5};
    w[off] = 0.0;
    m.params().zero_grad();
    Graph h;
    h.backward(m.loss(m.forward(h, x), y, &w));
    const std::string branch = m.branches()[off].name;
    for (const auto& name : m.branch_parameter_names(branch)) {
      Parameter& p = m.params().get(name);
      for (std::size_t i = 0; i < p.grad.size(); ++i) max_grad = std::max(max_grad, std::abs(p.grad[i]));
      zero_checked += p.grad.size();
      for (std::size_t i : {std::size_t{0}, p.value.size() / 2, p.value.size() - 1}) {
        const double saved = p.value[i];
        p.value[i] = saved + 1e-5;
        const double up = objective(w);
        p.value[i] = saved - 1e-5;
        const double dn = objective(w);
        p.value[i] = saved;
        max_fd = std::max(max_fd, std::abs(up - dn) / 2e-5);
        ++fd_checked;
      }
    }
  }
  const bool pass = lin < 1e-10 && max_grad == 0.0 && max_fd == 0.0 && zero_checked > 0;
  return {pass, "linearity err " + fmt(lin) + "; gated grads max " + fmt(max_grad) + " over " +
                    std::to_string(zero_checked) + " entries; finite-difference max " + fmt(max_fd) + " over " +
                    std::to_string(fd_checked) + " probes"};
}

// ---------------------------------------------------------------- 5

Outcome metric_oracles() {
  std::vector<std::string> failures;
  const auto k1 = cohens_kappa(ConfusionMatrix::from_rows({{3, 1}, {1, 3}}));
  if (std::abs(k1.kappa - 0.5) > 1e-12 || to_string(k1.band) != "moderate") failures.push_back("[[3,1],[1,3]]");

  std::mt19937_64 rng(5005);
  std::uniform_int_distribution<std::size_t> count(1, 20);
  for (std::size_t c = 2; c <= 6; ++c) {
    ConfusionMatrix cm(c);
    for (std::size_t i = 0; i < c; ++i) cm.add(i, i, count(rng));
    if (std::abs(cohens_kappa(cm).kappa - 1.0) > 1e-12) failures.push_back("diagonal " + std::to_string(c));
  }
  if (std::abs(cohens_kappa(ConfusionMatrix::from_rows({{1, 1}, {1, 1}})).kappa) > 1e-12) failures.push_back("uniform");

  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t branches = 1 + static_cast<std::size_t>(trial % 3), rows = 4, classes = 5;
    std::vector<Tensor> logits;
    for (std::size_t b = 0; b < branches; ++b) logits.push_back(random_tensor({rows, classes}, rng, -6.0, 6.0));
    const Tensor got = ensemble_preactivation(logits);
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<double> mean(classes, 0.0);
      for (std::size_t c = 0; c < classes; ++c) {
        for (const auto& t : logits) mean[c] += t[r * classes + c];
        mean[c] /= static_cast<double>(branches);
      }
      const double peak = *std::max_element(mean.begin(), mean.end());
      double z = 0.0;
      for (double v : mean) z += std::exp(v - peak);
      for (std::size_t c = 0; c < classes; ++c)
        worst = std::max(worst, std::abs(got[r * classes + c] - std::exp(mean[c] - peak) / z));
    }
  }
  if (worst >= 1e-12) failures.push_back("ensemble");
  std::string detail = "kappa examples ok, ensemble max err " + fmt(worst);
  if (!failures.empty()) {
    detail = "failed:";
    for (const auto& f : failures) detail += " " + f;
  }
  return {failures.empty(), detail};
}

// ---------------------------------------------------------------- 6

Outcome optimizer_traces() {
  std::vector<std::string> failures;
  Tensor p({1}, 1.0);
  AdamState s;
  const double g[3] = {0.5, -0.3, 0.2};
  const double expected[3] = {0.99900000002, 0.9988085019894177, 0.9984610743079088};
  double adam_err = 0.0;
  for (int t = 0; t < 3; ++t) {
    adam_step(p, Tensor({1}, g[t]), s, 1e-3, 0.9, 0.999, 1e-8);
    adam_err = std::max(adam_err, std::abs(p[0] - expected[t]));
  }
  if (adam_err >= 1e-12) failures.push_back("adam");

  const std::vector<double> falling{1.0, 0.9, 0.8}, flat{1.0, 1.1, 1.05};
  if (lr_on_plateau(falling, 1e-5, 0.1, 2) != 1e-5) failures.push_back("plateau falling");
  if (lr_on_plateau(std::span(flat).first(2), 1e-5, 0.1, 2) != 1e-5 ||
      std::abs(lr_on_plateau(flat, 1e-5, 0.1, 2) - 1e-6) > 1e-18)
    failures.push_back("plateau flat");
  // Improvement at epoch 4 resets the counter: no second reduction at epoch 5.
  const std::vector<double> reset{1.0, 1.1, 1.05, 0.9, 0.95};
  if (std::abs(lr_on_plateau(reset, 1e-5, 0.1, 2) - 1e-6) > 1e-18) failures.push_back("plateau reset");

  const std::vector<double> h1{1.0, 0.9, 0.95, 0.92, 0.91};
  const auto d1 = early_stop(h1, 3);
  if (!d1.stop || d1.stop_epoch != 5 || d1.best_epoch != 2) failures.push_back("early stop");
  std::vector<double> mono(40);
  for (std::size_t i = 0; i < mono.size(); ++i) mono[i] = 2.0 - 0.01 * static_cast<double>(i);
  if (early_stop(mono, 3).stop) failures.push_back("monotone");
  const std::vector<double> same{1.0, 1.0};
  const auto d3 = early_stop(same, 1);
  if (!d3.stop || d3.stop_epoch != 2) failures.push_back("strictness");

  std::string detail = "adam err " + fmt(adam_err) + ", plateau and early-stop histories match";
  if (!failures.empty()) {
    detail = "failed:";
    for (const auto& f : failures) detail += " " + f;
  }
  return {failures.empty(), detail};
}

// ---------------------------------------------------------------- 7

Outcome overfit_smoke() {
  DatasetManifest m;
  m.seed = 7007;
  m.counts_per_grade.assign(kGrades, 8);
  std::vector<Sample> samples = generate_synthetic(m);
  // 32 training samples (7/7/6/6/6 per grade), the rest held out for monitoring.
  std::vector<std::size_t> per_grade(kGrades, 0);
  const std::size_t quota[kGrades] = {7, 7, 6, 6, 6};
  for (auto& s : samples) {
    const auto g = static_cast<std::size_t>(s.label);
    s.split = per_grade[g]++ < quota[g] ? Split::Train : Split::Val;
  }

  ModelSpec spec;
  spec.input_h = m.image_h;
  spec.input_w = m.image_w;
  spec.width_multiplier = 0.25;
  spec.branches = {"att1"};
  spec.fusion = Fusion::None;
  spec.loss_weights = {1.0};
  spec.seed = 7;
  Model model(spec);

  TrainConfig cfg;
  cfg.lr0 = 1e-3;
  cfg.max_epochs = 200;
  cfg.augment = false;
  cfg.early_stopping = false;
  cfg.plateau_patience = cfg.max_epochs;
  cfg.stop_at_train_accuracy = 0.95;
  cfg.probe_samples = 0;
  cfg.seed = 7;
  const RunMetrics r = fit(model, samples, cfg);

  const auto& last = r.epochs.back();
  const double acc = last.train_accuracy();
  const auto losses = r.train_loss_trace();
  bool smooth_ok = true;
  for (std::size_t start = 10; start + 10 <= losses.size(); start += 10) {
    const double prev = std::accumulate(losses.begin() + static_cast<std::ptrdiff_t>(start - 10),
                                        losses.begin() + static_cast<std::ptrdiff_t>(start), 0.0);
    const double cur = std::accumulate(losses.begin() + static_cast<std::ptrdiff_t>(start),
                                       losses.begin() + static_cast<std::ptrdiff_t>(start + 10), 0.0);
    smooth_ok = smooth_ok && cur <= prev;
  }
  return {acc >= 0.95 && smooth_ok, "train accuracy " + fmt(acc) + " after " + std::to_string(r.epochs.size()) +
                                        " epochs (" + fmt(losses.front()) + " -> " + fmt(losses.back()) +
                                        " loss), 10-epoch means " + (smooth_ok ? "non-increasing" : "increased")};
}

// ---------------------------------------------------------------- 8

struct LocalizationRun {
  std::string name;
  std::uint64_t seed;
};

Outcome localization_property() {
  const std::vector<LocalizationRun> runs{{"amber", 101}, {"birch", 202}, {"cobalt", 303}};
  bool all = true;
  std::string detail;
  for (const auto& run : runs) {
    DatasetManifest m;
    m.seed = run.seed;
    m.counts_per_grade.assign(kGrades, 160);
    m.raw_h = m.image_h = 128;
    m.raw_w = m.image_w = 96;
    const std::vector<Sample> samples = generate_synthetic(m);
    const auto train = select_split(samples, Split::Train);
    const auto val = select_split(samples, Split::Val);
    const auto test = select_split(samples, Split::Test);

    ModelSpec spec;
    spec.input_h = m.image_h;
    spec.input_w = m.image_w;
    spec.width_multiplier = 0.125;
    spec.seed = run.seed;
    Model model(spec);

    TrainConfig cfg;
    cfg.lr0 = 1e-3;
    cfg.max_epochs = 30;
    cfg.augment = false;
    cfg.probe_samples = 0;
    cfg.seed = run.seed;
    const RunMetrics r = fit(model, samples, cfg);

    const Evaluation ev_val = evaluate(model, val, cfg.batch_size);
    std::vector<BranchScore> scores;
    for (const auto& h : ev_val.heads) {
      std::size_t depth = 0;
      for (const auto& b : model.branches())
        if (b.name == h.name) depth = b.depth;
      scores.push_back({h.name, h.accuracy, h.loss, depth});
    }
    const std::string best = select_best_branch(scores);
    const Evaluation ev_test = evaluate(model, test, cfg.batch_size, nullptr, true);
    std::map<std::string, double> ratio;
    for (const auto& [branch, masks] : ev_test.masks) {
      double score = 0.0, baseline = 0.0;
      for (std::size_t i = 0; i < test.size(); ++i) {
        score += localization_score(mask_item(masks, i), test[i]->roi, m.image_h, m.image_w).score;
        baseline += uniform_localization_baseline(test[i]->roi, m.image_h, m.image_w);
      }
      ratio[branch] = score / baseline;
    }
    const bool ok = ratio.at(best) >= 2.0 && train.size() >= 500;
    all = all && ok;
    detail += (detail.empty() ? "" : "; ") + run.name + ": best " + best + " x" + fmt(ratio.at(best)) + " (";
    for (const auto& [branch, x] : ratio) detail += branch + " x" + fmt(x) + ", ";
    detail += std::to_string(r.stop_epoch) + " epochs, test acc " + fmt(ev_test.head(best).accuracy, 2) + ")";
  }
  return {all, detail};
}

// ---------------------------------------------------------------- 9

Outcome grid_harness() {
  DatasetManifest m;
  m.seed = 9009;
  m.counts_per_grade.assign(kGrades, 8);
  m.image_h = 32;
  m.image_w = 24;
  const auto samples = generate_synthetic(m);
  ModelSpec spec = small_vgg({"att0", "att1"});
  spec.width_multiplier = 0.0625;
  spec.attention_widths = {4};
  spec.loss_weights = {1.0, 0.8};
  TrainConfig cfg;
  cfg.lr0 = 1e-3;
  cfg.max_epochs = 1;
  cfg.batch_size = 8;
  cfg.probe_samples = 0;
  const auto axis = default_grid_axis();
  const GridResult a = grid_search_weights(spec, samples, cfg, axis, axis);
  const GridResult b = grid_search_weights(spec, samples, cfg, axis, axis);
  bool member = false, same = a.best == b.best && a.cells.size() == b.cells.size();
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    member = member || (a.cells[i].w0 == 1.0 && std::abs(a.cells[i].w1 - 0.8) < 1e-12);
    same = same && a.cells[i].val_loss == b.cells[i].val_loss && a.cells[i].w0 == b.cells[i].w0 &&
           a.cells[i].w1 == b.cells[i].w1;
  }
  const auto& best = a.best_cell();
  return {a.cells.size() == 36 && member && same,
          std::to_string(a.cells.size()) + " cells, (1.0, 0.8) " + (member ? "present" : "missing") + ", reruns " +
              (same ? "identical" : "differ") + ", best (" + fmt(best.w0, 2) + ", " + fmt(best.w1, 2) + ")"};
}

// ---------------------------------------------------------------- 10

Outcome pipeline_invariants() {
  std::vector<std::string> failures;
  std::mt19937_64 rng(10010);
  for (int i = 0; i < 20; ++i) {
    const Tensor img = random_tensor({1 + rng() % 20, 1 + rng() % 20, 1}, rng);
    if (!(hflip(hflip(img)) == img)) failures.push_back("flip");
    Tensor skew = random_tensor({12, 9, 1}, rng, 0.0, 1.0);
    for (std::size_t k = 0; k < skew.size(); ++k) skew[k] = std::pow(skew[k], 3.0) * 0.5;
    if (histogram_variance(hist_equalize(skew)) > histogram_variance(skew) + 1e-15) failures.push_back("equalize");
  }
  for (std::uint64_t seed : {11, 12, 13}) {
    DatasetManifest m;
    m.seed = seed;
    m.counts_per_grade = {37, 23, 18, 11, 9};
    const auto a = generate_synthetic(m);
    const auto b = generate_synthetic(m);
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(a[i].image == b[i].image) || a[i].split != b[i].split || a[i].id != b[i].id) {
        failures.push_back("regeneration seed " + std::to_string(seed));
        break;
      }
    std::vector<std::array<double, 3>> got(kGrades, {0, 0, 0});
    for (const auto& s : a) got[static_cast<std::size_t>(s.label)][static_cast<std::size_t>(s.split) - 1] += 1;
    for (std::size_t g = 0; g < kGrades; ++g) {
      const double n = static_cast<double>(m.counts_per_grade[g]);
      const double want[3] = {m.fractions.train * n, m.fractions.val * n, m.fractions.test * n};
      for (int k = 0; k < 3; ++k)
        if (std::abs(got[g][static_cast<std::size_t>(k)] - want[k]) > 1.0) {
          failures.push_back("split seed " + std::to_string(seed));
          g = kGrades;
          break;
        }
    }
  }
  std::string detail = "flip, equalization, stratification and regeneration hold";
  if (!failures.empty()) {
    detail = "failed:";
    for (const auto& f : failures) detail += " " + f;
  }
  return {failures.empty(), detail};
}

struct Criterion {
  int id;
  std::string title;
  double time_limit_s;  ///< 0: none stated
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "criterion numbers to run");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "gradient fidelity", 120, gradient_fidelity},
      {2, "shape conformance", 1, shape_conformance},
      {3, "attention normalization identity", 0, normalization_identity},
      {4, "multi-loss linearity and gating", 0, multiloss_linearity_and_gating},
      {5, "metric oracles", 0, metric_oracles},
      {6, "optimizer and schedule traces", 0, optimizer_traces},
      {7, "overfit smoke test", 600, overfit_smoke},
      {8, "localization property", 2700, localization_property},
      {9, "grid-search harness", 0, grid_harness},
      {10, "pipeline invariants", 0, pipeline_invariants},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit_s > 0 && secs >= c.time_limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt(c.time_limit_s) + " s budget";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << c.id << " (" << c.title << "): " << o.detail << " ["
              << std::fixed << std::setprecision(1) << secs << " s]" << std::defaultfloat << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
