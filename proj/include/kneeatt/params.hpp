#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "kneeatt/graph.hpp"

namespace kneeatt {

/// Named parameter registry in insertion order. Parameters have stable
/// addresses, so graphs may bind to them while the store lives.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t count() const;  ///< total scalar count
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  /// Copies of every value, in registry order.
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

/// He-normal fill: N(0, 2 / fan_in).
Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng);
/// Glorot-uniform fill: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian):
//   "KATTCKPT" u32 version u32 count
//   count x { u32 name_len, name bytes, u32 rank, rank x u64 extent }
//   raw float64 values for each entry in header order
void save_checkpoint(const ParameterStore& params, const std::filesystem::path& path);

/// Reads a checkpoint into name -> tensor.
std::map<std::string, Tensor> read_checkpoint(const std::filesystem::path& path);

/// Loads values into an existing store. Missing or mis-shaped entries raise
/// CheckpointError listing both shapes.
void load_checkpoint(ParameterStore& params, const std::filesystem::path& path);

}  // namespace kneeatt
