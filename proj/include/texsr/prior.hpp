#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "texsr/error.hpp"
#include "texsr/raster.hpp"

namespace texsr {

/// 3x3 convolution with zero "same" padding. Weights are laid out
/// [out][in][ky][kx].
struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  ConvLayer() = default;
  ConvLayer(std::size_t in, std::size_t out)
      : in_channels(in), out_channels(out), weight(out * in * 9, 0.0), bias(out, 0.0) {}

  [[nodiscard]] std::size_t param_count() const { return weight.size() + bias.size(); }
  [[nodiscard]] double w(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    return weight[((o * in_channels + i) * 3 + ky) * 3 + kx];
  }
};

/// Stack of per-channel planes for one layer's activations.
using FeatureMaps = std::vector<Raster>;

namespace detail {

inline FeatureMaps conv3x3(const ConvLayer& layer, const FeatureMaps& in, bool relu) {
  if (in.size() != layer.in_channels) throw StructuralError("conv3x3: channel count mismatch");
  const Dims d = in.front().dims();
  const auto w = static_cast<std::ptrdiff_t>(d.width);
  const auto h = static_cast<std::ptrdiff_t>(d.height);
  FeatureMaps out(layer.out_channels, Raster(d));
  for (std::size_t o = 0; o < layer.out_channels; ++o) {
    Raster& dst = out[o];
    dst.fill(layer.bias[o]);
    for (std::size_t i = 0; i < layer.in_channels; ++i) {
      const Raster& src = in[i];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - 1;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - 1;
          const double k = layer.w(o, i, ky, kx);
          if (k == 0.0) continue;
          for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, -dy); y < std::min(h, h - dy); ++y) {
            const double* s = &src[static_cast<std::size_t>((y + dy) * w)];
            double* t = &dst[static_cast<std::size_t>(y * w)];
            for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, -dx); x < std::min(w, w - dx); ++x) {
              t[x] += k * s[x + dx];
            }
          }
        }
      }
    }
    if (relu) {
      for (double& v : dst) v = v > 0.0 ? v : 0.0;
    }
  }
  return out;
}

/// Reverse of conv3x3 without activation: accumulates weight/bias gradients
/// into `gw`/`gb` and returns the input gradient.
inline FeatureMaps conv3x3_backward(const ConvLayer& layer, const FeatureMaps& in,
                                    const FeatureMaps& grad_out, std::span<double> gw,
                                    std::span<double> gb) {
  const Dims d = in.front().dims();
  const auto w = static_cast<std::ptrdiff_t>(d.width);
  const auto h = static_cast<std::ptrdiff_t>(d.height);
  FeatureMaps grad_in(layer.in_channels, Raster(d, 0.0));
  for (std::size_t o = 0; o < layer.out_channels; ++o) {
    const Raster& go = grad_out[o];
    double bsum = 0.0;
    for (double v : go) bsum += v;
    gb[o] += bsum;
    for (std::size_t i = 0; i < layer.in_channels; ++i) {
      const Raster& src = in[i];
      Raster& gi = grad_in[i];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - 1;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - 1;
          const double k = layer.w(o, i, ky, kx);
          double acc = 0.0;
          for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, -dy); y < std::min(h, h - dy); ++y) {
            const double* s = &src[static_cast<std::size_t>((y + dy) * w)];
            double* g = &gi[static_cast<std::size_t>((y + dy) * w)];
            const double* u = &go[static_cast<std::size_t>(y * w)];
            for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, -dx); x < std::min(w, w - dx); ++x) {
              acc += u[x] * s[x + dx];
              g[x + dx] += k * u[x];
            }
          }
          gw[((o * layer.in_channels + i) * 3 + ky) * 3 + kx] += acc;
        }
      }
    }
  }
  return grad_in;
}

}  // namespace detail

/// Residual refinement in texture space: three 3x3 convolutions
/// (1 -> 16 -> 16 -> 1, ReLU between) added back onto the input.
struct PriorNet {
  static constexpr std::size_t kHidden = 16;

  std::array<ConvLayer, 3> layers{ConvLayer(1, kHidden), ConvLayer(kHidden, kHidden),
                                  ConvLayer(kHidden, 1)};

  /// He-normal hidden layers, zero biases, zero final layer (identity map).
  static PriorNet initialize(std::uint64_t seed) {
    PriorNet net;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < 2; ++l) {
      auto& layer = net.layers[l];
      std::normal_distribution<double> dist(0.0,
                                            std::sqrt(2.0 / static_cast<double>(layer.in_channels * 9)));
      for (double& w : layer.weight) w = dist(rng);
    }
    return net;
  }

  [[nodiscard]] std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
  }

  /// Flattened as [w1, b1, w2, b2, w3, b3].
  [[nodiscard]] std::vector<double> pack() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const auto& l : layers) {
      out.insert(out.end(), l.weight.begin(), l.weight.end());
      out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
    return out;
  }

  void unpack(std::span<const double> flat) {
    if (flat.size() != param_count()) throw StructuralError("prior net: parameter count mismatch");
    std::size_t k = 0;
    for (auto& l : layers) {
      for (double& w : l.weight) w = flat[k++];
      for (double& b : l.bias) b = flat[k++];
    }
  }
};

/// Activations kept for the reverse pass.
struct PriorCache {
  FeatureMaps input;
  FeatureMaps hidden1;
  FeatureMaps hidden2;
};

/// input + residual, with mask-invalid texels zeroed after the skip.
inline Raster prior_forward(const PriorNet& net, const Raster& t, const Mask& mask,
                            PriorCache* cache = nullptr) {
  require_same_dims(t.dims(), mask.dims(), "prior_forward");
  FeatureMaps in{t};
  FeatureMaps h1 = detail::conv3x3(net.layers[0], in, true);
  FeatureMaps h2 = detail::conv3x3(net.layers[1], h1, true);
  const FeatureMaps r = detail::conv3x3(net.layers[2], h2, false);
  Raster out(t.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] ? t[i] + r[0][i] : 0.0;
  if (cache != nullptr) *cache = {std::move(in), std::move(h1), std::move(h2)};
  return out;
}

struct PriorGradients {
  std::vector<double> weights;  ///< same layout as PriorNet::pack
  Raster input;
};

inline PriorGradients prior_backward(const PriorNet& net, const PriorCache& cache,
                                     const Raster& upstream, const Mask& mask) {
  require_same_dims(upstream.dims(), mask.dims(), "prior_backward");
  PriorGradients g;
  g.weights.assign(net.param_count(), 0.0);
  std::array<std::span<double>, 3> gw, gb;
  {
    std::size_t k = 0;
    for (std::size_t l = 0; l < 3; ++l) {
      gw[l] = std::span<double>(g.weights).subspan(k, net.layers[l].weight.size());
      k += net.layers[l].weight.size();
      gb[l] = std::span<double>(g.weights).subspan(k, net.layers[l].bias.size());
      k += net.layers[l].bias.size();
    }
  }
  Raster top = apply_mask(upstream, mask);
  FeatureMaps g3 = detail::conv3x3_backward(net.layers[2], cache.hidden2, FeatureMaps{top}, gw[2], gb[2]);
  for (std::size_t c = 0; c < g3.size(); ++c) {
    for (std::size_t i = 0; i < g3[c].size(); ++i) {
      if (!(cache.hidden2[c][i] > 0.0)) g3[c][i] = 0.0;
    }
  }
  FeatureMaps g2 = detail::conv3x3_backward(net.layers[1], cache.hidden1, g3, gw[1], gb[1]);
  for (std::size_t c = 0; c < g2.size(); ++c) {
    for (std::size_t i = 0; i < g2[c].size(); ++i) {
      if (!(cache.hidden1[c][i] > 0.0)) g2[c][i] = 0.0;
    }
  }
  FeatureMaps g1 = detail::conv3x3_backward(net.layers[0], cache.input, g2, gw[0], gb[0]);
  g.input = std::move(top);
  for (std::size_t i = 0; i < g.input.size(); ++i) g.input[i] += g1[0][i];
  return g;
}

/// Convenience overload that reruns the forward pass.
inline PriorGradients prior_backward(const PriorNet& net, const Raster& t, const Raster& upstream,
                                     const Mask& mask) {
  PriorCache cache;
  (void)prior_forward(net, t, mask, &cache);
  return prior_backward(net, cache, upstream, mask);
}

}  // namespace texsr
