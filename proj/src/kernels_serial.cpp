#include <cstdint>

#include "bset/kernels.hpp"

namespace bset::kernels::serial {

void conv2d_forward(const ConvDims& d, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out) {
  const std::size_t oh = d.out_height(), ow = d.out_width();
  const auto k = d.kernel;
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t oc = 0; oc < d.out_channels; ++oc) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double sum = bias[oc];
          for (std::size_t ic = 0; ic < d.in_channels; ++ic) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(oy + ky) -
                                static_cast<std::ptrdiff_t>(d.padding);
                const auto ix = static_cast<std::ptrdiff_t>(ox + kx) -
                                static_cast<std::ptrdiff_t>(d.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(d.height) ||
                    ix >= static_cast<std::ptrdiff_t>(d.width)) {
                  continue;
                }
                sum += weight[((oc * d.in_channels + ic) * k + ky) * k + kx] *
                       in[((n * d.in_channels + ic) * d.height + iy) * d.width + ix];
              }
            }
          }
          out[((n * d.out_channels + oc) * oh + oy) * ow + ox] = sum;
        }
      }
    }
  }
}

void conv2d_backward(const ConvDims& d, std::span<const double> in,
                     std::span<const double> weight, std::span<const double> d_out,
                     std::span<double> d_in, std::span<double> d_weight,
                     std::span<double> d_bias) {
  const std::size_t oh = d.out_height(), ow = d.out_width();
  const auto k = d.kernel;
  const auto pad = static_cast<std::ptrdiff_t>(d.padding);

  for (std::size_t oc = 0; oc < d.out_channels; ++oc) {
    double sum = 0.0;
    for (std::size_t n = 0; n < d.batch; ++n) {
      for (std::size_t i = 0; i < oh * ow; ++i) sum += d_out[(n * d.out_channels + oc) * oh * ow + i];
    }
    d_bias[oc] = sum;
  }

  for (std::size_t oc = 0; oc < d.out_channels; ++oc) {
    for (std::size_t ic = 0; ic < d.in_channels; ++ic) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          double sum = 0.0;
          for (std::size_t n = 0; n < d.batch; ++n) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - pad;
                const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(d.height) ||
                    ix >= static_cast<std::ptrdiff_t>(d.width)) {
                  continue;
                }
                sum += d_out[((n * d.out_channels + oc) * oh + oy) * ow + ox] *
                       in[((n * d.in_channels + ic) * d.height + iy) * d.width + ix];
              }
            }
          }
          d_weight[((oc * d.in_channels + ic) * k + ky) * k + kx] = sum;
        }
      }
    }
  }

  if (d_in.empty()) return;
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t ic = 0; ic < d.in_channels; ++ic) {
      for (std::size_t iy = 0; iy < d.height; ++iy) {
        for (std::size_t ix = 0; ix < d.width; ++ix) {
          double sum = 0.0;
          for (std::size_t oc = 0; oc < d.out_channels; ++oc) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const auto oy = static_cast<std::ptrdiff_t>(iy + d.padding) -
                                static_cast<std::ptrdiff_t>(ky);
                const auto ox = static_cast<std::ptrdiff_t>(ix + d.padding) -
                                static_cast<std::ptrdiff_t>(kx);
                if (oy < 0 || ox < 0 || oy >= static_cast<std::ptrdiff_t>(oh) ||
                    ox >= static_cast<std::ptrdiff_t>(ow)) {
                  continue;
                }
                sum += weight[((oc * d.in_channels + ic) * k + ky) * k + kx] *
                       d_out[((n * d.out_channels + oc) * oh + oy) * ow + ox];
              }
            }
          }
          d_in[((n * d.in_channels + ic) * d.height + iy) * d.width + ix] = sum;
        }
      }
    }
  }
}

void maxpool_forward(const PoolDims& d, std::span<const double> in, std::span<double> out,
                     std::span<std::uint32_t> argmax) {
  const std::size_t oh = d.out_height(), ow = d.out_width();
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t c = 0; c < d.channels; ++c) {
      const std::size_t plane = (n * d.channels + c) * d.height * d.width;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t best = plane + (oy * d.size) * d.width + ox * d.size;
          for (std::size_t py = 0; py < d.size; ++py) {
            for (std::size_t px = 0; px < d.size; ++px) {
              const std::size_t idx = plane + (oy * d.size + py) * d.width + ox * d.size + px;
              if (in[idx] > in[best]) best = idx;
            }
          }
          const std::size_t o = ((n * d.channels + c) * oh + oy) * ow + ox;
          out[o] = in[best];
          argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
}

void maxpool_backward(const PoolDims& d, std::span<const double> d_out,
                      std::span<const std::uint32_t> argmax, std::span<double> d_in) {
  for (auto& v : d_in) v = 0.0;
  const std::size_t outputs = d.batch * d.channels * d.out_height() * d.out_width();
  for (std::size_t o = 0; o < outputs; ++o) d_in[argmax[o]] += d_out[o];
}

void dense_forward(const DenseDims& d, std::span<const double> in,
                   std::span<const double> weight, std::span<const double> bias,
                   std::span<double> out) {
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t o = 0; o < d.out_features; ++o) {
      double sum = bias[o];
      for (std::size_t i = 0; i < d.in_features; ++i) {
        sum += weight[o * d.in_features + i] * in[n * d.in_features + i];
      }
      out[n * d.out_features + o] = sum;
    }
  }
}

void dense_backward(const DenseDims& d, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> d_out,
                    std::span<double> d_in, std::span<double> d_weight,
                    std::span<double> d_bias) {
  for (std::size_t o = 0; o < d.out_features; ++o) {
    double db = 0.0;
    for (std::size_t n = 0; n < d.batch; ++n) db += d_out[n * d.out_features + o];
    d_bias[o] = db;
    for (std::size_t i = 0; i < d.in_features; ++i) {
      double dw = 0.0;
      for (std::size_t n = 0; n < d.batch; ++n) {
        dw += d_out[n * d.out_features + o] * in[n * d.in_features + i];
      }
      d_weight[o * d.in_features + i] = dw;
    }
  }
  if (d_in.empty()) return;
  for (std::size_t n = 0; n < d.batch; ++n) {
    for (std::size_t i = 0; i < d.in_features; ++i) {
      double sum = 0.0;
      for (std::size_t o = 0; o < d.out_features; ++o) {
        sum += weight[o * d.in_features + i] * d_out[n * d.out_features + o];
      }
      d_in[n * d.in_features + i] = sum;
    }
  }
}

}  // namespace bset::kernels::serial
