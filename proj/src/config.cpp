#include "kneeatt/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace kneeatt {

using nlohmann::json;

namespace {

std::string join_lines(const std::vector<std::string>& lines) {
  std::ostringstream os;
  for (std::size_t i = 0; i < lines.size(); ++i) os << (i ? "\n" : "") << lines[i];
  return os.str();
}

// Reads fields of one JSON object, recording type errors and keys that were
// never consumed.
class Section {
 public:
  Section(const json& root, std::string name, std::vector<std::string>& problems)
      : name_(std::move(name)), problems_(problems) {
    if (root.is_null()) return;
    if (!root.is_object()) {
      problems_.push_back(name_ + ": expected an object");
      return;
    }
    obj_ = &root;
  }

  ~Section() {
    if (!obj_) return;
    for (const auto& [key, value] : obj_->items())
      if (!used_.count(key)) problems_.push_back(name_ + "." + key + ": unknown key");
  }

  template <typename T>
  void read(const char* key, T& out) {
    const json* v = find(key);
    if (!v) return;
    try {
      check_kind<T>(*v);
      out = v->get<T>();
    } catch (const std::exception&) {
      problems_.push_back(name_ + "." + key + ": expected " + kind_name<T>() + ", got " + v->dump());
    }
  }

  template <typename T, typename Parse>
  void read_enum(const char* key, T& out, Parse parse) {
    std::string s;
    const json* v = find(key);
    if (!v) return;
    if (!v->is_string()) {
      problems_.push_back(name_ + "." + key + ": expected a string, got " + v->dump());
      return;
    }
    try {
      out = parse(v->get<std::string>());
    } catch (const std::exception& e) {
      problems_.push_back(name_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) { return find(key); }

 private:
  const json* find(const char* key) {
    if (!obj_) return nullptr;
    used_.insert(key);
    auto it = obj_->find(key);
    return it == obj_->end() ? nullptr : &*it;
  }

  template <typename T>
  static void check_kind(const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument("kind");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0)) throw std::invalid_argument("kind");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw std::invalid_argument("kind");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw std::invalid_argument("kind");
    } else {
      if (!v.is_array()) throw std::invalid_argument("kind");
      for (const auto& e : v) check_kind<typename T::value_type>(e);
    }
  }

  template <typename T>
  static std::string kind_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "a non-negative integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "a list of " + kind_name<typename T::value_type>().substr(2);
  }

  std::string name_;
  std::vector<std::string>& problems_;
  const json* obj_ = nullptr;
  std::set<std::string> used_;
};

json model_json(const ModelSpec& m) {
  return {{"backbone", to_string(m.backbone)},
          {"input_size", {m.input_h, m.input_w, m.input_c}},
          {"width_multiplier", m.width_multiplier},
          {"branches", m.branches},
          {"fusion", to_string(m.fusion)},
          {"loss_weights", m.loss_weights},
          {"classes", m.classes},
          {"attention_widths", m.attention_widths},
          {"head_init", to_string(m.head_init)},
          {"seed", m.seed}};
}

void read_model(const json& j, ModelSpec& m, std::vector<std::string>& problems) {
  Section s(j, "model", problems);
  s.read_enum("backbone", m.backbone, parse_backbone);
  std::vector<std::size_t> input{m.input_h, m.input_w, m.input_c};
  s.read("input_size", input);
  if (input.size() == 3) {
    m.input_h = input[0];
    m.input_w = input[1];
    m.input_c = input[2];
  } else {
    problems.push_back("model.input_size: expected [height, width, channels]");
  }
  s.read("width_multiplier", m.width_multiplier);
  s.read("branches", m.branches);
  s.read_enum("fusion", m.fusion, parse_fusion);
  s.read("loss_weights", m.loss_weights);
  s.read("classes", m.classes);
  s.read("attention_widths", m.attention_widths);
  s.read_enum("head_init", m.head_init, parse_head_init);
  s.read("seed", m.seed);
}

json train_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},
          {"lr0", t.lr0},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"plateau_factor", t.plateau_factor},
          {"plateau_patience", t.plateau_patience},
          {"early_stop_patience", t.early_stop_patience},
          {"max_epochs", t.max_epochs},
          {"seed", t.seed},
          {"loss_weights", t.loss_weights},
          {"min_improvement", t.min_improvement},
          {"augment", t.augment},
          {"early_stopping", t.early_stopping},
          {"stop_at_train_accuracy", t.stop_at_train_accuracy},
          {"probe_samples", t.probe_samples}};
}

void read_train(const json& j, TrainConfig& t, std::vector<std::string>& problems) {
  Section s(j, "train", problems);
  s.read("batch_size", t.batch_size);
  s.read("lr0", t.lr0);
  s.read("beta1", t.beta1);
  s.read("beta2", t.beta2);
  s.read("eps", t.eps);
  s.read("plateau_factor", t.plateau_factor);
  s.read("plateau_patience", t.plateau_patience);
  s.read("early_stop_patience", t.early_stop_patience);
  s.read("max_epochs", t.max_epochs);
  s.read("seed", t.seed);
  s.read("loss_weights", t.loss_weights);
  s.read("min_improvement", t.min_improvement);
  s.read("augment", t.augment);
  s.read("early_stopping", t.early_stopping);
  s.read("stop_at_train_accuracy", t.stop_at_train_accuracy);
  s.read("probe_samples", t.probe_samples);
}

json data_json(const DatasetManifest& d) {
  return {{"seed", d.seed},
          {"counts_per_grade", d.counts_per_grade},
          {"image_size", {d.image_h, d.image_w}},
          {"raw_size", {d.raw_h, d.raw_w}},
          {"split_fractions", {{"train", d.fractions.train}, {"val", d.fractions.val}, {"test", d.fractions.test}}},
          {"flip_right", d.flip_right}};
}

void read_pair(Section& s, const char* key, std::size_t& a, std::size_t& b, const std::string& where,
               std::vector<std::string>& problems) {
  std::vector<std::size_t> v{a, b};
  s.read(key, v);
  if (v.size() != 2) {
    problems.push_back(where + "." + key + ": expected [height, width]");
    return;
  }
  a = v[0];
  b = v[1];
}

void read_data(const json& j, DatasetManifest& d, std::vector<std::string>& problems, const std::string& name) {
  Section s(j, name, problems);
  s.read("seed", d.seed);
  s.read("counts_per_grade", d.counts_per_grade);
  read_pair(s, "image_size", d.image_h, d.image_w, name, problems);
  read_pair(s, "raw_size", d.raw_h, d.raw_w, name, problems);
  if (const json* f = s.child("split_fractions")) {
    Section fs(*f, name + ".split_fractions", problems);
    fs.read("train", d.fractions.train);
    fs.read("val", d.fractions.val);
    fs.read("test", d.fractions.test);
  }
  s.read("flip_right", d.flip_right);
}

json grid_json(const GridConfig& g) {
  return {{"w0_values", g.w0_values}, {"w1_values", g.w1_values}, {"max_epochs", g.max_epochs}};
}

void read_grid(const json& j, GridConfig& g, std::vector<std::string>& problems) {
  Section s(j, "grid", problems);
  s.read("w0_values", g.w0_values);
  s.read("w1_values", g.w1_values);
  s.read("max_epochs", g.max_epochs);
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("config is not valid JSON: ") + e.what()});
  }
}

}  // namespace

RunConfig::RunConfig() {
  model.input_h = data.image_h;
  model.input_w = data.image_w;
  model.width_multiplier = 0.25;
}

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> out = model.problems();
  for (auto& p : train.problems()) out.push_back(std::move(p));
  for (auto& p : data.problems()) out.push_back(std::move(p));
  if (model.input_h != data.image_h || model.input_w != data.image_w || model.input_c != 1) {
    out.push_back("model.input_size " + std::to_string(model.input_h) + "x" + std::to_string(model.input_w) + "x" +
                  std::to_string(model.input_c) + " does not match data.image_size " + std::to_string(data.image_h) +
                  "x" + std::to_string(data.image_w) + "x1");
  }
  if (model.classes != kGrades) out.push_back("model.classes must be " + std::to_string(kGrades) + " for graded data");
  if (!train.loss_weights.empty() && train.loss_weights.size() != model.branches.size()) {
    out.push_back("train.loss_weights has " + std::to_string(train.loss_weights.size()) + " entries for " +
                  std::to_string(model.branches.size()) + " branches");
  }
  if (grid.w0_values.empty() || grid.w1_values.empty()) out.push_back("grid: weight lists must not be empty");
  for (double w : grid.w0_values)
    if (!(w >= 0.0 && w <= 1.0)) out.push_back("grid.w0_values: " + std::to_string(w) + " outside [0, 1]");
  for (double w : grid.w1_values)
    if (!(w >= 0.0 && w <= 1.0)) out.push_back("grid.w1_values: " + std::to_string(w) + " outside [0, 1]");
  if (grid.max_epochs == 0) out.push_back("grid.max_epochs must be at least 1");
  if (output_dir.empty()) out.push_back("output_dir must not be empty");
  return out;
}

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument(join_lines(problems)), problems_(std::move(problems)) {}

RunConfig parse_run_config(const std::string& text) {
  const json root = parse_json(text);
  RunConfig cfg;
  std::vector<std::string> problems;
  {
    Section top(root, "config", problems);
    if (const json* j = top.child("model")) read_model(*j, cfg.model, problems);
    if (const json* j = top.child("train")) read_train(*j, cfg.train, problems);
    if (const json* j = top.child("data")) read_data(*j, cfg.data, problems, "data");
    if (const json* j = top.child("grid")) read_grid(*j, cfg.grid, problems);
    top.read("output_dir", cfg.output_dir);
  }
  for (auto& p : cfg.problems()) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return cfg;
}

std::string run_config_to_text(const RunConfig& c) {
  const json j = {{"model", model_json(c.model)},
                  {"train", train_json(c.train)},
                  {"data", data_json(c.data)},
                  {"grid", grid_json(c.grid)},
                  {"output_dir", c.output_dir}};
  return j.dump(2) + "\n";
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError({"cannot read config " + path.string()});
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << run_config_to_text(config);
}

std::string manifest_to_text(const DatasetManifest& manifest) { return data_json(manifest).dump(2) + "\n"; }

DatasetManifest parse_manifest(const std::string& text) {
  const json root = parse_json(text);
  DatasetManifest m;
  std::vector<std::string> problems;
  read_data(root, m, problems, "manifest");
  if (problems.empty()) problems = m.problems();
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return m;
}

}  // namespace kneeatt
