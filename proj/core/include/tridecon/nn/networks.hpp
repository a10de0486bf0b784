#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tridecon/nn/autograd.hpp"

namespace tridecon::nn {

/// Generator shape. The defaults are the 9-block, 64-filter ResNet generator.
struct GeneratorArch {
  int ngf = 64;
  int n_blocks = 9;
  int n_downsampling = 2;
  bool operator==(const GeneratorArch&) const = default;
};

/// PatchGAN discriminator shape (n_layers strided blocks, kernel 4, pad 1 by default).
struct DiscriminatorArch {
  int ndf = 64;
  int n_layers = 3;
  int kernel = 4;
  bool operator==(const DiscriminatorArch&) const = default;
};

template <class T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

template <class T>
struct ConvLayer {
  Var<T> weight;
  Var<T> bias;
  int stride = 1;
  int pad = 0;

  /// Gaussian(0, 0.02) weights, zero bias.
  static ConvLayer make(int cin, int cout, int k, int stride, int pad, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 0.02);
    Tensor<T> w(cout, cin, k, k);
    for (auto& v : w.data) v = static_cast<T>(nd(rng));
    return {parameter(std::move(w)), parameter(Tensor<T>(1, cout, 1, 1, T(0))), stride, pad};
  }
  static ConvLayer make_transposed(int cin, int cout, int k, int stride, int pad, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 0.02);
    Tensor<T> w(cin, cout, k, k);
    for (auto& v : w.data) v = static_cast<T>(nd(rng));
    return {parameter(std::move(w)), parameter(Tensor<T>(1, cout, 1, 1, T(0))), stride, pad};
  }
  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
  Var<T> transposed(const Var<T>& x) const { return conv_transpose2d(x, weight, bias, stride, pad, 1); }
};

/// Lists every parameter of a network in a fixed order. Shared by optimizers and checkpoints.
template <class T>
std::vector<NamedParam<T>> collect(const std::vector<std::pair<std::string, const ConvLayer<T>*>>& layers) {
  std::vector<NamedParam<T>> out;
  for (const auto& [name, layer] : layers) {
    out.push_back({name + ".weight", layer->weight});
    out.push_back({name + ".bias", layer->bias});
  }
  return out;
}

/// ResNet generator: reflect-pad 7x7 stem, strided downsampling, residual blocks,
/// transposed-conv upsampling, 7x7 head with tanh. Single channel in and out.
/// Output dims equal input dims whenever they are divisible by 2^n_downsampling.
template <class T>
class ResnetGenerator {
 public:
  ResnetGenerator() = default;
  ResnetGenerator(const GeneratorArch& arch, std::uint64_t seed) : arch_(arch) {
    if (arch.ngf < 1 || arch.n_blocks < 0 || arch.n_downsampling < 0)
      throw std::invalid_argument("invalid generator architecture");
    std::mt19937_64 rng(seed);
    stem_ = ConvLayer<T>::make(1, arch.ngf, 7, 1, 0, rng);
    int ch = arch.ngf;
    for (int i = 0; i < arch.n_downsampling; ++i, ch *= 2) down_.push_back(ConvLayer<T>::make(ch, 2 * ch, 3, 2, 1, rng));
    for (int b = 0; b < arch.n_blocks; ++b) {
      blocks_.push_back({ConvLayer<T>::make(ch, ch, 3, 1, 0, rng), ConvLayer<T>::make(ch, ch, 3, 1, 0, rng)});
    }
    for (int i = 0; i < arch.n_downsampling; ++i, ch /= 2)
      up_.push_back(ConvLayer<T>::make_transposed(ch, ch / 2, 3, 2, 1, rng));
    head_ = ConvLayer<T>::make(arch.ngf, 1, 7, 1, 0, rng);
  }

  [[nodiscard]] const GeneratorArch& arch() const { return arch_; }
  [[nodiscard]] int size_multiple() const { return 1 << arch_.n_downsampling; }

  Var<T> forward(const Var<T>& x) const {
    auto h = relu(instance_norm(stem_(reflection_pad(x, 3))));
    for (const auto& d : down_) h = relu(instance_norm(d(h)));
    for (const auto& [c1, c2] : blocks_) {
      auto r = relu(instance_norm(c1(reflection_pad(h, 1))));
      r = instance_norm(c2(reflection_pad(r, 1)));
      h = add(h, r);
    }
    for (const auto& u : up_) h = relu(instance_norm(u.transposed(h)));
    return tanh(head_(reflection_pad(h, 3)));
  }
  Var<T> operator()(const Var<T>& x) const { return forward(x); }

  [[nodiscard]] std::vector<NamedParam<T>> parameters() const {
    std::vector<std::pair<std::string, const ConvLayer<T>*>> layers{{"stem", &stem_}};
    for (std::size_t i = 0; i < down_.size(); ++i) layers.emplace_back("down" + std::to_string(i), &down_[i]);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      layers.emplace_back("block" + std::to_string(i) + ".conv1", &blocks_[i].first);
      layers.emplace_back("block" + std::to_string(i) + ".conv2", &blocks_[i].second);
    }
    for (std::size_t i = 0; i < up_.size(); ++i) layers.emplace_back("up" + std::to_string(i), &up_[i]);
    layers.emplace_back("head", &head_);
    return collect<T>(layers);
  }

 private:
  GeneratorArch arch_{};
  ConvLayer<T> stem_;
  std::vector<ConvLayer<T>> down_;
  std::vector<std::pair<ConvLayer<T>, ConvLayer<T>>> blocks_;
  std::vector<ConvLayer<T>> up_;
  ConvLayer<T> head_;
};

/// Markovian (PatchGAN) discriminator emitting a grid of raw real/fake scores.
template <class T>
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  PatchDiscriminator(const DiscriminatorArch& arch, std::uint64_t seed) : arch_(arch) {
    if (arch.ndf < 1 || arch.n_layers < 1 || arch.kernel < 2) throw std::invalid_argument("invalid discriminator architecture");
    std::mt19937_64 rng(seed);
    const int k = arch.kernel, pad = 1;
    layers_.push_back(ConvLayer<T>::make(1, arch.ndf, k, 2, pad, rng));
    int mult = 1;
    for (int n = 1; n < arch.n_layers; ++n) {
      const int prev = mult;
      mult = std::min(1 << n, 8);
      layers_.push_back(ConvLayer<T>::make(arch.ndf * prev, arch.ndf * mult, k, 2, pad, rng));
    }
    const int prev = mult;
    mult = std::min(1 << arch.n_layers, 8);
    layers_.push_back(ConvLayer<T>::make(arch.ndf * prev, arch.ndf * mult, k, 1, pad, rng));
    layers_.push_back(ConvLayer<T>::make(arch.ndf * mult, 1, k, 1, pad, rng));
  }

  [[nodiscard]] const DiscriminatorArch& arch() const { return arch_; }

  Var<T> forward(const Var<T>& x) const {
    auto h = leaky_relu(layers_.front()(x), T(0.2));
    for (std::size_t i = 1; i + 1 < layers_.size(); ++i) h = leaky_relu(instance_norm(layers_[i](h)), T(0.2));
    return layers_.back()(h);
  }
  Var<T> operator()(const Var<T>& x) const { return forward(x); }

  [[nodiscard]] std::vector<NamedParam<T>> parameters() const {
    std::vector<std::pair<std::string, const ConvLayer<T>*>> layers;
    for (std::size_t i = 0; i < layers_.size(); ++i) layers.emplace_back("conv" + std::to_string(i), &layers_[i]);
    return collect<T>(layers);
  }

 private:
  DiscriminatorArch arch_{};
  std::vector<ConvLayer<T>> layers_;
};

template <class T>
std::size_t parameter_count(const std::vector<NamedParam<T>>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var->value.size();
  return n;
}

template <class T>
void set_requires_grad(const std::vector<NamedParam<T>>& params, bool on) {
  for (const auto& p : params) p.var->requires_grad = on;
}

template <class T>
void zero_grad(const std::vector<NamedParam<T>>& params) {
  for (const auto& p : params) p.var->zero_grad();
}

}  // namespace tridecon::nn
