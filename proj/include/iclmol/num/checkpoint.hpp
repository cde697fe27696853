#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "iclmol/num/params.hpp"

namespace iclmol::num {

/// Named-tensor container file.
///
/// Layout, all integers little-endian:
///   "ICLM" | u32 version | u64 tensor count |
///   per tensor: u32 name length, UTF-8 name bytes, u8 dtype (0=f32, 1=f64),
///               u32 rank, rank × u64 dims, raw little-endian scalars.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  using Entry = std::variant<Tensor<float>, Tensor<double>>;

  void put(std::string name, Tensor<float> t);
  void put(std::string name, Tensor<double> t);
  template <std::floating_point T>
  void put_all(const ParamStore<T>& params, const std::string& prefix = "") {
    for (std::size_t i = 0; i < params.size(); ++i) put(prefix + params.name(i), params.value(i));
  }

  bool contains(const std::string& name) const;
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const Entry& entry(const std::string& name) const;

  /// Tensor converted to T.
  template <std::floating_point T>
  Tensor<T> get(const std::string& name) const {
    return std::visit([](const auto& t) { return t.template cast<T>(); }, entry(name));
  }

  /// Copies tensors named prefix+param into an existing store; shapes must match.
  template <std::floating_point T>
  void load_into(ParamStore<T>& params, const std::string& prefix = "") const {
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T> t = get<T>(prefix + params.name(i));
      if (t.shape() != params.value(i).shape()) {
        throw DimensionError("checkpoint tensor '" + prefix + params.name(i) + "' has shape " +
                             shape_str(t.shape()) + ", expected " + shape_str(params.value(i).shape()));
      }
      t.set_requires_grad(true);
      params.value(i) = std::move(t);
    }
  }

  void write(std::ostream& os) const;
  static Checkpoint read(std::istream& is, const std::string& source = "<stream>");
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<std::string> names_;
  std::vector<Entry> entries_;
};

}  // namespace iclmol::num
