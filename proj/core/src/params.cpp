#include "dscene/params.hpp"

#include <cmath>

#include "dscene/error.hpp"
#include "dscene/io.hpp"
#include "json.hpp"

namespace dscene {

void ParameterStore::add(std::string name, ad::Shape shape, std::vector<double> values) {
  if (contains(name)) throw ValidationError("parameter '" + name + "' already exists");
  if (ad::numel(shape) != values.size()) {
    throw ShapeError("parameter '" + name + "': " + std::to_string(values.size()) + " values for shape " +
                     ad::shape_str(shape));
  }
  index_.emplace(name, entries_.size());
  entries_.push_back(ParamEntry{std::move(name), std::move(shape), std::move(values)});
}

void ParameterStore::add_zeros(std::string name, ad::Shape shape) {
  const std::size_t n = ad::numel(shape);
  add(std::move(name), std::move(shape), std::vector<double>(n, 0.0));
}

void ParameterStore::add_uniform(std::string name, ad::Shape shape, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = dist(rng);
  add(std::move(name), std::move(shape), std::move(v));
}

const ParamEntry& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

ParamEntry& ParameterStore::get_mut(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.values.size();
  return n;
}

BoundParams::BoundParams(const ParameterStore& store, ad::Tape& tape) {
  for (const auto& e : store.entries()) tensors_.emplace(e.name, tape.leaf(e.shape, e.values));
}

const ad::Tensor& BoundParams::operator[](const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("parameter '" + name + "' is not bound");
  return it->second;
}

void save_params(const std::filesystem::path& manifest, const ParameterStore& store) {
  std::filesystem::path data = manifest;
  data.replace_extension(".gbv");
  nlohmann::json j;
  j["format"] = "dscene-params";
  j["data"] = data.filename().string();
  j["meta"] = store.meta;
  auto tensors = nlohmann::json::array();
  HwcArray blob(1, store.total_size(), 1);
  std::size_t offset = 0;
  for (const auto& e : store.entries()) {
    tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
    std::copy(e.values.begin(), e.values.end(), blob.data.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += e.values.size();
  }
  j["tensors"] = std::move(tensors);
  io::write_grid(data, blob);
  io::write_text(manifest, j.dump(2) + "\n");
}

ParameterStore load_params(const std::filesystem::path& manifest) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  ParameterStore store;
  try {
    const auto blob = io::read_grid(manifest.parent_path() / j.at("data").get<std::string>());
    if (j.contains("meta")) store.meta = j.at("meta").get<std::map<std::string, std::string>>();
    for (const auto& t : j.at("tensors")) {
      auto shape = t.at("shape").get<ad::Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      const std::size_t n = ad::numel(shape);
      if (offset + n > blob.size()) throw FormatError(manifest.string() + ": tensor extends past data blob");
      std::vector<double> v(blob.data.begin() + static_cast<std::ptrdiff_t>(offset),
                            blob.data.begin() + static_cast<std::ptrdiff_t>(offset + n));
      store.add(t.at("name").get<std::string>(), std::move(shape), std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  return store;
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParameterStore& store, const BoundParams& bound) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& e : store.entries_mut()) {
    const auto g = bound[e.name].grad();
    auto& m = m_[e.name];
    auto& v = v_[e.name];
    if (m.empty()) {
      m.assign(e.values.size(), 0.0);
      v.assign(e.values.size(), 0.0);
    }
    for (std::size_t i = 0; i < e.values.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      e.values[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

}  // namespace dscene
