#include "iclmol/num/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace iclmol::num {
namespace {

constexpr std::array<char, 4> kMagic{'I', 'C', 'L', 'M'};

template <class U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_integral_v<U>);
  std::array<char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(buf.data(), buf.size());
}

template <class U>
U get_le(std::istream& is, const std::string& source) {
  std::array<unsigned char, sizeof(U)> buf;
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
    throw DataError(source + ": truncated checkpoint");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<U>(v);
}

template <class T>
void put_scalars(std::ostream& os, const Tensor<T>& t) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T x : t.data()) put_le<Bits>(os, std::bit_cast<Bits>(x));
}

template <class T>
Tensor<T> get_tensor(std::istream& is, Shape shape, const std::string& source) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  Tensor<T> t(std::move(shape));
  for (auto& x : t.data()) x = std::bit_cast<T>(get_le<Bits>(is, source));
  return t;
}

}  // namespace

void Checkpoint::put(std::string name, Tensor<float> t) {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it != names_.end()) {
    entries_[static_cast<std::size_t>(it - names_.begin())] = std::move(t);
    return;
  }
  names_.push_back(std::move(name));
  entries_.emplace_back(std::move(t));
}

void Checkpoint::put(std::string name, Tensor<double> t) {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it != names_.end()) {
    entries_[static_cast<std::size_t>(it - names_.begin())] = std::move(t);
    return;
  }
  names_.push_back(std::move(name));
  entries_.emplace_back(std::move(t));
}

bool Checkpoint::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const Checkpoint::Entry& Checkpoint::entry(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw DataError("checkpoint has no tensor named '" + name + "'");
  return entries_[static_cast<std::size_t>(it - names_.begin())];
}

void Checkpoint::write(std::ostream& os) const {
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, kVersion);
  put_le<std::uint64_t>(os, names_.size());
  for (std::size_t i = 0; i < names_.size(); ++i) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(names_[i].size()));
    os.write(names_[i].data(), static_cast<std::streamsize>(names_[i].size()));
    std::visit(
        [&](const auto& t) {
          using T = typename std::decay_t<decltype(t)>::value_type;
          put_le<std::uint8_t>(os, std::is_same_v<T, float> ? 0 : 1);
          put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
          for (auto d : t.shape()) put_le<std::uint64_t>(os, d);
          put_scalars(os, t);
        },
        entries_[i]);
  }
}

Checkpoint Checkpoint::read(std::istream& is, const std::string& source) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw DataError(source + ": not an ICLM checkpoint");
  }
  const auto version = get_le<std::uint32_t>(is, source);
  if (version != kVersion) {
    throw DataError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get_le<std::uint64_t>(is, source);
  Checkpoint ck;
  for (std::uint64_t n = 0; n < count; ++n) {
    const auto len = get_le<std::uint32_t>(is, source);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError(source + ": truncated checkpoint");
    const auto dtype = get_le<std::uint8_t>(is, source);
    const auto rank = get_le<std::uint32_t>(is, source);
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint64_t>(is, source);
    if (dtype == 0) {
      ck.put(std::move(name), get_tensor<float>(is, std::move(shape), source));
    } else if (dtype == 1) {
      ck.put(std::move(name), get_tensor<double>(is, std::move(shape), source));
    } else {
      throw DataError(source + ": unknown dtype tag " + std::to_string(dtype) + " for '" + name + "'");
    }
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  write(os);
  if (!os) throw DataError("failed writing '" + path.string() + "'");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  return read(is, path.string());
}

}  // namespace iclmol::num
