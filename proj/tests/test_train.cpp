#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "kneeatt/ops.hpp"
#include "kneeatt/params.hpp"
#include "kneeatt/train.hpp"

using namespace kneeatt;
using testing::random_tensor;

namespace {

ModelSpec tiny_spec() {
  ModelSpec s;
  s.input_h = 32;
  s.input_w = 24;
  s.width_multiplier = 0.0625;
  s.attention_widths = {4};
  return s;
}

const std::vector<Sample>& tiny_data() {
  static const std::vector<Sample> data = [] {
    DatasetManifest m;
    m.counts_per_grade.assign(kGrades, 8);
    m.image_h = 32;
    m.image_w = 24;
    return generate_synthetic(m);
  }();
  return data;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.lr0 = 1e-3;
  c.max_epochs = 3;
  c.batch_size = 8;
  c.probe_samples = 1;
  return c;
}

}  // namespace

TEST_CASE("adam matches three hand-traced scalar steps") {
  Tensor p({1}, 1.0);
  AdamState s;
  const double g[3] = {0.5, -0.3, 0.2};
  // m_t, v_t and the bias-corrected update traced by hand with lr 1e-3.
  const double expected_p[3] = {0.99900000002, 0.9988085019894177, 0.9984610743079088};
  const double expected_m[3] = {0.05, 0.015, 0.0335};
  const double expected_v[3] = {0.00025, 0.00033975, 0.00037941025};
  for (int t = 0; t < 3; ++t) {
    adam_step(p, Tensor({1}, g[t]), s, 1e-3, 0.9, 0.999, 1e-8);
    CHECK(s.t == static_cast<std::size_t>(t + 1));
    CHECK(std::abs(s.m[0] - expected_m[t]) < 1e-12);
    CHECK(std::abs(s.v[0] - expected_v[t]) < 1e-12);
    CHECK(std::abs(p[0] - expected_p[t]) < 1e-12);
  }
}

TEST_CASE("adam first step and zero gradient") {
  Tensor p({2}, std::vector<double>{3.0, -1.0});
  AdamState s;
  adam_step(p, Tensor({2}, 1.0), s, 1e-3, 0.9, 0.999, 1e-8);
  CHECK(std::abs(p[0] - (3.0 - 1e-3 / (1.0 + 1e-8))) < 1e-15);
  CHECK(std::abs(p[1] - (-1.0 - 1e-3 / (1.0 + 1e-8))) < 1e-15);

  Tensor q({3}, 0.25);
  AdamState z;
  for (int i = 0; i < 4; ++i) adam_step(q, Tensor({3}, 0.0), z, 1e-3, 0.9, 0.999, 1e-8);
  CHECK(q == Tensor({3}, 0.25));
  CHECK(z.t == 4);

  // Repeated identical gradients: the update magnitude shrinks once v has
  // accumulated more than m relative to their bias corrections.
  Tensor r({1}, 0.0);
  AdamState rs;
  adam_step(r, Tensor({1}, 1.0), rs, 1e-3, 0.9, 0.999, 1e-8);
  const double first = -r[0];
  adam_step(r, Tensor({1}, 0.2), rs, 1e-3, 0.9, 0.999, 1e-8);
  CHECK(-r[0] - first < first);

  CHECK_THROWS_AS(adam_step(p, Tensor({3}), s, 1e-3, 0.9, 0.999, 1e-8), ShapeError);
}

TEST_CASE("plateau schedule traces") {
  const std::vector<double> flat{1.0, 1.1, 1.05};
  CHECK(lr_on_plateau(std::span(flat).first(2), 1e-5, 0.1, 2) == 1e-5);
  CHECK(lr_on_plateau(flat, 1e-5, 0.1, 2) == doctest::Approx(1e-6).epsilon(1e-12));
  const std::vector<double> falling{1.0, 0.9, 0.8};
  CHECK(lr_on_plateau(falling, 1e-5, 0.1, 2) == 1e-5);

  PlateauScheduler s(1.0, 0.1, 2);
  CHECK(s.update(1.0) == 1.0);
  CHECK(s.update(1.1) == 1.0);
  CHECK(s.update(1.05) == doctest::Approx(0.1));  // reduction resets the counter
  CHECK(s.bad_epochs() == 0);
  CHECK(s.update(0.5) == doctest::Approx(0.1));   // improvement
  CHECK(s.update(0.6) == doctest::Approx(0.1));
  CHECK(s.update(0.4) == doctest::Approx(0.1));   // improvement resets again
  CHECK(s.update(0.45) == doctest::Approx(0.1));
  CHECK(s.update(0.45) == doctest::Approx(0.01));

  // A decrease of 1e-7 is not an improvement.
  PlateauScheduler t(1.0, 0.5, 1);
  t.update(1.0);
  CHECK(t.update(1.0 - 1e-7) == 0.5);
}

TEST_CASE("early stopping traces") {
  const std::vector<double> h{1.0, 0.9, 0.95, 0.92, 0.91};
  const auto d = early_stop(h, 3);
  CHECK(d.stop);
  CHECK(d.stop_epoch == 5);
  CHECK(d.best_epoch == 2);

  const std::vector<double> down{1.0, 0.9, 0.8, 0.7, 0.6, 0.5};
  const auto m = early_stop(down, 3);
  CHECK_FALSE(m.stop);
  CHECK(m.stop_epoch == 6);
  CHECK(m.best_epoch == 6);

  const std::vector<double> same{1.0, 1.0};
  const auto s = early_stop(same, 1);
  CHECK(s.stop);
  CHECK(s.stop_epoch == 2);
  CHECK(s.best_epoch == 1);

  EarlyStopping e(2);
  CHECK_FALSE(e.update(2.0));
  CHECK(e.improved());
  CHECK_FALSE(e.update(2.5));
  CHECK_FALSE(e.improved());
  CHECK(e.update(2.1));
  CHECK(e.best_epoch() == 1);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK(c.problems().empty());
  c.plateau_factor = 1.5;
  c.early_stop_patience = 0;
  c.lr0 = -1;
  CHECK(c.problems().size() == 3);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("multi-loss gradient is the weighted sum of branch gradients") {
  std::mt19937_64 rng(21);
  Model m(tiny_spec());
  const Tensor x = random_tensor({3, 32, 24, 1}, rng);
  const Tensor y = one_hot(std::vector<int>{0, 3, 4}, 5);

  const auto grads_for = [&](std::vector<double> w) {
    m.params().zero_grad();
    Graph g;
    g.backward(m.loss(m.forward(g, x), y, &w));
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < m.params().size(); ++i) out.push_back(m.params()[i].grad);
    return out;
  };
  const auto g0 = grads_for({1.0, 0.0});
  const auto g1 = grads_for({0.0, 1.0});
  const auto gw = grads_for({0.7, 0.4});
  for (std::size_t i = 0; i < gw.size(); ++i) {
    CAPTURE(m.params()[i].name);
    double err = 0.0, scale = 1e-12;
    for (std::size_t k = 0; k < gw[i].size(); ++k) {
      err = std::max(err, std::abs(gw[i][k] - (0.7 * g0[i][k] + 0.4 * g1[i][k])));
      scale = std::max(scale, std::abs(gw[i][k]));
    }
    CHECK(err / scale < 1e-10);
  }

  // Central differences on a few att1-only coordinates.
  std::vector<double> w{0.7, 0.4};
  const auto objective = [&] {
    Graph g;
    return m.loss(m.forward(g, x), y, &w).value()[0];
  };
  for (const auto& name : {std::string("att1/head/w"), std::string("att1/mask/b")}) {
    Parameter& p = m.params().get(name);
    std::size_t idx = 0;
    for (std::size_t i = 0; i < m.params().size(); ++i)
      if (m.params()[i].name == name) idx = i;
    for (std::size_t k : {std::size_t{0}, p.value.size() / 2}) {
      const double saved = p.value[k];
      p.value[k] = saved + 1e-5;
      const double up = objective();
      p.value[k] = saved - 1e-5;
      const double dn = objective();
      p.value[k] = saved;
      const double fd = (up - dn) / 2e-5;
      CHECK(std::abs(fd - 0.4 * g1[idx][k]) <= 1e-6 * std::max(1.0, std::abs(fd)));
      CHECK(g0[idx][k] == 0.0);
    }
  }
}

TEST_CASE("fit is deterministic and restores the best epoch") {
  const auto dir = testing::scratch_dir("fit");
  TrainConfig c = quick_config();
  Model a(tiny_spec());
  const RunMetrics ma = fit(a, tiny_data(), c, FitOptions{dir, {}});
  Model b(tiny_spec());
  const RunMetrics mb = fit(b, tiny_data(), c);
  CHECK(ma.val_loss_trace() == mb.val_loss_trace());
  CHECK(ma.train_loss_trace() == mb.train_loss_trace());
  CHECK(ma.epochs.size() == 3);
  CHECK(ma.best_epoch <= ma.stop_epoch);
  CHECK(ma.heads == std::vector<std::string>{"att0", "att1"});
  CHECK(ma.epochs[0].val_head_accuracy.count("att1") == 1);

  const auto val = select_split(tiny_data(), Split::Val);
  const std::vector<double> w = a.spec().loss_weights;
  CHECK(evaluate(a, val, c.batch_size, &w).objective == ma.best_val_loss);

  Model restored(tiny_spec());
  load_checkpoint(restored.params(), dir / "best.ckpt");
  CHECK(evaluate(restored, val, c.batch_size, &w).objective == ma.best_val_loss);
  CHECK(std::filesystem::exists(dir / "metrics.csv"));
  CHECK(std::filesystem::exists(dir / "masks"));
}

TEST_CASE("a zero loss weight freezes that branch") {
  Model m(tiny_spec());
  const auto before = m.params().snapshot();
  TrainConfig c = quick_config();
  c.max_epochs = 2;
  c.loss_weights = {1.0, 0.0};
  fit(m, tiny_data(), c);
  const auto after = m.params().snapshot();
  bool att0_moved = false;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const std::string& name = m.params()[i].name;
    if (name.rfind("att1/", 0) == 0) CHECK(after[i] == before[i]);
    if (name.rfind("att0/", 0) == 0) att0_moved = att0_moved || !(after[i] == before[i]);
  }
  CHECK(att0_moved);
}

TEST_CASE("fit rejects unusable inputs") {
  Model m(tiny_spec());
  std::vector<Sample> no_val = tiny_data();
  for (auto& s : no_val)
    if (s.split == Split::Val) s.split = Split::Train;
  CHECK_THROWS_AS(fit(m, no_val, quick_config()), std::invalid_argument);
  std::vector<Sample> no_train;
  for (const auto& s : tiny_data())
    if (s.split != Split::Train) no_train.push_back(s);
  CHECK_THROWS_AS(fit(m, no_train, quick_config()), std::invalid_argument);

  ModelSpec big = tiny_spec();
  big.input_h = 64;
  big.input_w = 48;
  Model wrong(big);
  CHECK_THROWS_AS(fit(wrong, tiny_data(), quick_config()), ShapeError);
  TrainConfig bad = quick_config();
  bad.loss_weights = {1.0};
  CHECK_THROWS_AS(fit(m, tiny_data(), bad), std::invalid_argument);
}

TEST_CASE("grid search axes and small grids") {
  const auto axis = default_grid_axis();
  REQUIRE(axis.size() == 6);
  std::size_t cells = 0;
  bool has_selected = false;
  for (double w0 : axis)
    for (double w1 : axis) {
      ++cells;
      has_selected = has_selected || (w0 == 1.0 && w1 == 0.8);
    }
  CHECK(cells == 36);
  CHECK(has_selected);
  CHECK(axis.front() == 0.5);
  CHECK(axis.back() == 1.0);

  TrainConfig c = quick_config();
  c.max_epochs = 1;
  const std::vector<double> one{0.9}, two{0.6, 1.0};
  const GridResult single = grid_search_weights(tiny_spec(), tiny_data(), c, one, one);
  REQUIRE(single.cells.size() == 1);
  CHECK(single.best == 0);
  CHECK(single.best_cell().w0 == 0.9);

  const GridResult g1 = grid_search_weights(tiny_spec(), tiny_data(), c, two, two);
  const GridResult g2 = grid_search_weights(tiny_spec(), tiny_data(), c, two, two);
  REQUIRE(g1.cells.size() == 4);
  CHECK(g1.cells[1].w0 == 0.6);
  CHECK(g1.cells[1].w1 == 1.0);
  CHECK(g1.best == g2.best);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(g1.cells[i].val_loss == g2.cells[i].val_loss);
    CHECK(g1.best_cell().val_loss <= g1.cells[i].val_loss);
  }

  const std::vector<double> none;
  CHECK_THROWS_AS(grid_search_weights(tiny_spec(), tiny_data(), c, none, two), std::invalid_argument);
  ModelSpec early = tiny_spec();
  early.fusion = Fusion::EarlyFusion;
  CHECK_THROWS_AS(grid_search_weights(early, tiny_data(), c, two, two), std::invalid_argument);
}

TEST_CASE("metrics csv lists every head") {
  RunMetrics m;
  m.heads = {"att0", "att1"};
  EpochRecord r;
  r.epoch = 1;
  r.lr = 1e-5;
  r.train_loss = 1.5;
  r.val_loss = 1.6;
  for (const auto& h : m.heads) {
    r.train_head_loss[h] = 1.0;
    r.train_head_accuracy[h] = h == "att0" ? 0.3 : 0.5;
    r.val_head_loss[h] = 1.1;
    r.val_head_accuracy[h] = 0.2;
  }
  m.epochs.push_back(r);
  CHECK(r.train_accuracy() == 0.5);
  const auto path = testing::scratch_dir("metrics_csv") / "metrics.csv";
  write_metrics_csv(m, path);
  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  CHECK(header.find("val_acc_att0") != std::string::npos);
  CHECK(header.find("train_loss_att1") != std::string::npos);
}
