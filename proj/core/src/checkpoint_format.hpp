#pragma once

// Private helpers shared by checkpoint.cpp and the trainer.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tridecon/checkpoint.hpp"

namespace tridecon::ckpt {

using json = nlohmann::json;

template <class T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

class Blob {
 public:
  template <class T>
  void add(const std::string& name, const std::vector<int>& shape, const T* data, std::size_t count) {
    const std::size_t offset = bytes_.size();
    const auto* p = reinterpret_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + count * sizeof(T));
    directory_.push_back({{"name", name}, {"shape", shape}, {"dtype", dtype_name<T>()}, {"offset", offset}, {"count", count}});
  }
  template <class T>
  void add(const std::string& name, const nn::Tensor<T>& t) {
    add(name, {t.n, t.c, t.h, t.w}, t.data.data(), t.size());
  }

  [[nodiscard]] const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  [[nodiscard]] const json& directory() const { return directory_; }

 private:
  std::vector<std::uint8_t> bytes_;
  json directory_ = json::array();
};

/// Writes header + blob atomically (temp file then rename).
void write_file(const std::filesystem::path& path, json header, const Blob& blob);

class File {
 public:
  json header;
  std::vector<std::uint8_t> blob;

  [[nodiscard]] const json* find(const std::string& name) const;
  [[nodiscard]] bool has(const std::string& name) const { return find(name) != nullptr; }

  template <class T>
  void read(const std::string& name, T* out, std::size_t count) const {
    const json* e = find(name);
    if (!e) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    if ((*e)["dtype"].get<std::string>() != dtype_name<T>())
      throw CheckpointError("tensor '" + name + "' has dtype " + (*e)["dtype"].get<std::string>() + ", expected " +
                            dtype_name<T>());
    if ((*e)["count"].get<std::size_t>() != count)
      throw CheckpointError("tensor '" + name + "' has " + std::to_string((*e)["count"].get<std::size_t>()) +
                            " values, architecture expects " + std::to_string(count));
    const std::size_t off = (*e)["offset"].get<std::size_t>();
    if (off + count * sizeof(T) > blob.size()) throw CheckpointError("tensor '" + name + "' runs past the blob");
    std::memcpy(out, blob.data() + off, count * sizeof(T));
  }
  template <class T>
  void read(const std::string& name, nn::Tensor<T>& t) const {
    const json* e = find(name);
    if (e) {
      const auto shape = (*e)["shape"].get<std::vector<int>>();
      if (shape != std::vector<int>{t.n, t.c, t.h, t.w})
        throw CheckpointError("tensor '" + name + "' shape mismatch with architecture");
    }
    read(name, t.data.data(), t.size());
  }
  template <class T>
  nn::Tensor<T> tensor(const std::string& name) const {
    const json* e = find(name);
    if (!e) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    const auto shape = (*e)["shape"].get<std::vector<int>>();
    if (shape.size() != 4) throw CheckpointError("tensor '" + name + "' is not 4-D");
    nn::Tensor<T> t(shape[0], shape[1], shape[2], shape[3]);
    read(name, t.data.data(), t.size());
    return t;
  }
};

File read_file(const std::filesystem::path& path);

json to_json(const nn::GeneratorArch& a);
json to_json(const nn::DiscriminatorArch& a);
json to_json(const TrainConfig& c);
nn::GeneratorArch generator_arch_from_json(const json& j);
nn::DiscriminatorArch discriminator_arch_from_json(const json& j);
TrainConfig train_config_from_json(const json& j);

/// Common header fields for spcyclegan checkpoints.
json model_header(SliceAxis axis, const TrainConfig& cfg, int epoch, const std::string& config_hash,
                  const char* dtype);
CheckpointInfo info_from_header(const json& header);

template <class T>
void add_params(Blob& blob, const std::vector<nn::NamedParam<T>>& params) {
  for (const auto& p : params) blob.add(p.name, p.var->value);
}

template <class T>
void read_params(const File& f, const std::vector<nn::NamedParam<T>>& params) {
  for (const auto& p : params) f.read(p.name, p.var->value);
}

}  // namespace tridecon::ckpt
