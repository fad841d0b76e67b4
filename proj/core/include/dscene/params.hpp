#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dscene/tensor.hpp"

namespace dscene {

struct ParamEntry {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

/// Named, ordered collection of model parameters. Insertion order is the
/// serialization order.
class ParameterStore {
 public:
  void add(std::string name, ad::Shape shape, std::vector<double> values);
  void add_zeros(std::string name, ad::Shape shape);
  /// Uniform in [-scale, scale].
  void add_uniform(std::string name, ad::Shape shape, double scale, std::mt19937_64& rng);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const ParamEntry& get(const std::string& name) const;
  ParamEntry& get_mut(const std::string& name);
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<ParamEntry>& entries_mut() { return entries_; }
  std::size_t total_size() const;

  /// Free-form model description stored in the manifest.
  std::map<std::string, std::string> meta;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameters recorded as leaves on one tape.
class BoundParams {
 public:
  BoundParams(const ParameterStore& store, ad::Tape& tape);
  const ad::Tensor& operator[](const std::string& name) const;
  const std::unordered_map<std::string, ad::Tensor>& all() const { return tensors_; }

 private:
  std::unordered_map<std::string, ad::Tensor> tensors_;
};

/// Writes `manifest` (JSON: shapes, offsets, meta) and a sibling GBV1 file
/// holding all values as one 1 x N x 1 grid. Values are stored as f32.
void save_params(const std::filesystem::path& manifest, const ParameterStore& store);
ParameterStore load_params(const std::filesystem::path& manifest);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One update from the gradients currently held by `bound`.
  void step(ParameterStore& store, const BoundParams& bound);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, std::vector<double>> m_;
  std::unordered_map<std::string, std::vector<double>> v_;
};

}  // namespace dscene
