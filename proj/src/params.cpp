#include "kneeatt/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kneeatt {

Parameter& ParameterStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  index_[name] = params_.size();
  params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return *params_[it->second];
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::vector<Tensor> ParameterStore::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value);
  return out;
}

void ParameterStore::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw std::invalid_argument("restore: snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != params_[i]->value.shape()) {
      throw ShapeError("restore: " + params_[i]->name + " expects " + shape_str(params_[i]->value.shape()));
    }
    params_[i]->value = values[i];
  }
}

Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

namespace {

constexpr char kMagic[8] = {'K', 'A', 'T', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const std::filesystem::path& path) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw CheckpointError("truncated checkpoint " + path.string());
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void save_checkpoint(const ParameterStore& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(os, kCheckpointVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) put_le<std::uint64_t>(os, e);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double v : params[i].value.values()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw CheckpointError("I/O error writing " + path.string());
}

std::map<std::string, Tensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint file");
  }
  const auto version = get_le<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  const auto count = get_le<std::uint32_t>(is, path);
  std::vector<std::pair<std::string, Shape>> header;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CheckpointError("truncated checkpoint " + path.string());
    const auto rank = get_le<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& e : shape) e = get_le<std::uint64_t>(is, path);
    header.emplace_back(std::move(name), std::move(shape));
  }
  std::map<std::string, Tensor> out;
  for (auto& [name, shape] : header) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(is, path));
    out.emplace(name, Tensor(shape, std::move(data)));
  }
  return out;
}

void load_checkpoint(ParameterStore& params, const std::filesystem::path& path) {
  auto values = read_checkpoint(path);
  std::ostringstream problems;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    auto it = values.find(p.name);
    if (it == values.end()) {
      problems << "  " << p.name << ": missing from checkpoint (model expects " << shape_str(p.value.shape()) << ")\n";
    } else if (it->second.shape() != p.value.shape()) {
      problems << "  " << p.name << ": checkpoint " << shape_str(it->second.shape()) << " vs model "
               << shape_str(p.value.shape()) << "\n";
    }
  }
  if (values.size() != params.size()) {
    problems << "  checkpoint holds " << values.size() << " tensors, model has " << params.size() << "\n";
  }
  if (!problems.str().empty()) {
    throw CheckpointError("checkpoint " + path.string() + " does not match the model:\n" + problems.str());
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = values.at(params[i].name);
}

}  // namespace kneeatt
