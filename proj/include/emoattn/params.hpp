#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "emoattn/error.hpp"
#include "emoattn/tensor.hpp"

namespace emoattn {

/// Ordered collection of named parameters with stable addresses.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  ParamStore(const ParamStore& other) {
    for (const auto& p : other.params_) insert(std::make_unique<Parameter<T>>(*p));
  }
  ParamStore& operator=(const ParamStore& other) {
    if (this != &other) {
      ParamStore copy(other);
      *this = std::move(copy);
    }
    return *this;
  }

  Parameter<T>& add(const std::string& name, Tensor<T> value, int group = 0) {
    if (index_.count(name)) throw Error("duplicate parameter '" + name + "'");
    return insert(std::make_unique<Parameter<T>>(name, std::move(value), group));
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  Parameter<T>& get(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw Error("unknown parameter '" + name + "'");
  }
  const Parameter<T>& get(const std::string& name) const {
    if (const auto* p = find(name)) return *p;
    throw Error("unknown parameter '" + name + "'");
  }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<const Parameter<T>*> all() const {
    std::vector<const Parameter<T>*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  void remove(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) return;
    params_.erase(params_.begin() + static_cast<std::ptrdiff_t>(it->second));
    reindex();
  }

 private:
  Parameter<T>& insert(std::unique_ptr<Parameter<T>> p) {
    index_[p->name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i]->name] = i;
  }

  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

inline constexpr const char* kParamsManifestHeader = "emoattn-params 1";

namespace detail {

inline void write_f32_le(std::ostream& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline float read_f32_le(const unsigned char* b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(bits);
}

inline Shape parse_shape(const std::string& s) {
  Shape shape;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) shape.push_back(static_cast<std::size_t>(std::stoull(part)));
  return shape;
}

}  // namespace detail

/// Writes `manifest.tsv` (name, shape, byte offset, group) and `params.bin`
/// (little-endian float32 payload) into dir.
template <class T>
void save_params(const ParamStore<T>& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.tsv");
  std::ofstream blob(dir / "params.bin", std::ios::binary);
  if (!manifest || !blob) throw IoError("cannot write parameters to " + dir.string());
  manifest << kParamsManifestHeader << "\n";
  std::size_t offset = 0;
  for (const auto* p : store.all()) {
    std::string shape;
    for (std::size_t i = 0; i < p->value.shape().size(); ++i) {
      if (i) shape += ",";
      shape += std::to_string(p->value.shape()[i]);
    }
    manifest << p->name << "\t" << shape << "\t" << offset << "\t" << p->group << "\n";
    for (T v : p->value.values()) detail::write_f32_le(blob, static_cast<float>(v));
    offset += p->value.size() * 4;
  }
}

template <class T>
ParamStore<T> load_params(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.tsv");
  std::ifstream blob(dir / "params.bin", std::ios::binary);
  if (!manifest || !blob) throw IoError("cannot read parameters from " + dir.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
  std::string line;
  if (!std::getline(manifest, line) || line != kParamsManifestHeader) {
    throw ParseError(dir.string() + "/manifest.tsv: unsupported manifest header '" + line + "'");
  }
  ParamStore<T> store;
  std::size_t lineno = 1;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string name, shape_s, offset_s, group_s;
    if (!std::getline(ss, name, '\t') || !std::getline(ss, shape_s, '\t') || !std::getline(ss, offset_s, '\t') ||
        !std::getline(ss, group_s, '\t')) {
      throw ParseError("manifest.tsv line " + std::to_string(lineno) + ": expected 4 columns");
    }
    Shape shape = detail::parse_shape(shape_s);
    const std::size_t offset = std::stoull(offset_s);
    const std::size_t n = shape_size(shape);
    if (offset + n * 4 > bytes.size()) {
      throw ParseError("manifest.tsv line " + std::to_string(lineno) + ": payload out of range");
    }
    Tensor<T> value(shape);
    for (std::size_t i = 0; i < n; ++i) value[i] = static_cast<T>(detail::read_f32_le(bytes.data() + offset + 4 * i));
    store.add(name, std::move(value), std::stoi(group_s));
  }
  return store;
}

}  // namespace emoattn
