#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "dynapyr/model.hpp"

// Layout, all integers little-endian:
//   "DYFP" | u16 version
//   u32 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | u64 extent * rank
//   per tensor, in manifest order: f64 * numel

namespace dynapyr {

/// Unreadable, truncated or malformed checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 4> kCheckpointMagic{'D', 'Y', 'F', 'P'};
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kMaxCheckpointRank = 8;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data()) + pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > remaining()) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_le<std::uint16_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.tensor.rank()));
    for (std::size_t e : t.tensor.shape()) detail::put_le<std::uint64_t>(out, e);
  }
  for (const auto& t : tensors)
    for (double v : t.tensor.values()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline std::vector<NamedTensor> decode_checkpoint(const std::vector<unsigned char>& bytes) {
  detail::ByteReader in(bytes);
  if (in.get_string(kCheckpointMagic.size(), "magic") != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end())) {
    throw CheckpointError("bad checkpoint magic (expected DYFP)");
  }
  if (const auto version = in.get<std::uint16_t>("version"); version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>("tensor count");
  std::vector<std::pair<std::string, Shape>> manifest;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = in.get<std::uint32_t>("name length");
    std::string name = in.get_string(len, "tensor name");
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank == 0 || rank > kMaxCheckpointRank) throw CheckpointError("tensor '" + name + "' has rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto e = in.get<std::uint64_t>("extent");
      // no tensor can hold more values than the file has bytes
      if (e == 0 || e > bytes.size() / sizeof(double) || numel * e > bytes.size() / sizeof(double)) {
        throw CheckpointError("tensor '" + name + "' has implausible extent " + std::to_string(e));
      }
      numel *= e;
      shape.push_back(static_cast<std::size_t>(e));
    }
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  std::vector<NamedTensor> out;
  for (auto& [name, shape] : manifest) {
    const std::size_t n = shape_numel(shape);
    if (n > in.remaining() / sizeof(double)) throw CheckpointError("checkpoint truncated in values of '" + name + "'");
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(in.get<std::uint64_t>("value"));
    out.push_back({name, Tensor(shape, std::move(values))});
  }
  if (!in.at_end()) throw CheckpointError("checkpoint has " + std::to_string(in.remaining()) + " trailing bytes");
  return out;
}

inline void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write to '" + path + "' failed");
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Models. The architecture travels as `meta.*` tensors ahead of the weights.

inline std::vector<NamedTensor> model_tensors(const Model& model) {
  const auto& c = model.config;
  auto as_tensor = [](const auto& xs) {
    std::vector<double> v(xs.begin(), xs.end());
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  };
  std::vector<NamedTensor> out;
  out.push_back({"meta.variant", Tensor::scalar(static_cast<double>(c.variant))});
  out.push_back({"meta.widths", as_tensor(c.widths)});
  out.push_back({"meta.pyramid_channels", Tensor::scalar(static_cast<double>(c.pyramid_channels))});
  out.push_back({"meta.kernels", as_tensor(c.kernels)});
  out.push_back({"meta.dilations", as_tensor(c.dilations)});
  for (const auto& p : model.parameters()) out.push_back({p.name, p.var.value()});
  return out;
}

inline void save_model(const std::string& path, const Model& model) { write_checkpoint(path, model_tensors(model)); }

inline Model model_from_tensors(const std::vector<NamedTensor>& tensors) {
  std::size_t next = 0;
  auto take = [&](const std::string& name) -> const Tensor& {
    if (next >= tensors.size()) throw CheckpointError("checkpoint ends before '" + name + "'");
    if (tensors[next].name != name) {
      throw CheckpointError("checkpoint entry " + std::to_string(next) + " is '" + tensors[next].name + "', expected '" + name + "'");
    }
    return tensors[next++].tensor;
  };
  auto single = [](const Tensor& t, const char* what) {
    if (t.size() != 1) throw CheckpointError(std::string(what) + " must hold one value");
    return t[0];
  };
  auto whole = [](double v, const char* what) {
    if (!(v >= 0.0) || v != std::floor(v) || v > 1e6) throw CheckpointError(std::string("bad ") + what + " in checkpoint");
    return static_cast<std::size_t>(v);
  };

  ModelConfig cfg;
  const double variant = single(take("meta.variant"), "meta.variant");
  if (variant != 0.0 && variant != 1.0 && variant != 2.0) throw CheckpointError("bad variant code in checkpoint");
  cfg.variant = static_cast<Variant>(static_cast<int>(variant));
  const auto& widths = take("meta.widths");
  if (widths.size() != kLevelCount) throw CheckpointError("checkpoint stores " + std::to_string(widths.size()) + " widths");
  for (std::size_t i = 0; i < kLevelCount; ++i) cfg.widths[i] = whole(widths[i], "width");
  cfg.pyramid_channels = whole(single(take("meta.pyramid_channels"), "meta.pyramid_channels"), "pyramid width");
  cfg.kernels.clear();
  cfg.dilations.clear();
  for (double v : take("meta.kernels").values()) cfg.kernels.push_back(whole(v, "kernel"));
  for (double v : take("meta.dilations").values()) cfg.dilations.push_back(whole(v, "dilation"));
  try {
    cfg.pyramid().validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint architecture invalid: ") + e.what());
  }

  Model model = Model::init(cfg, 0);
  for (auto& p : model.parameters()) {
    const Tensor& stored = take(p.name);
    if (stored.shape() != p.var.shape()) {
      throw CheckpointError("checkpoint tensor '" + p.name + "' has shape " + shape_string(stored.shape()) + ", model expects " +
                            shape_string(p.var.shape()));
    }
    p.var.mutable_value() = stored;
  }
  if (next != tensors.size()) throw CheckpointError("checkpoint has unexpected entry '" + tensors[next].name + "'");
  return model;
}

inline Model load_model(const std::string& path) { return model_from_tensors(read_checkpoint(path)); }

}  // namespace dynapyr
