#include <algorithm>
#include <cstdint>

#include "bset/kernels.hpp"

#if defined(_OPENMP)
#include <omp.h>
// `big` gates the region so single-sample work does not pay thread start-up.
#define BSET_PARALLEL_FOR _Pragma("omp parallel for schedule(static) if(big)")
#else
#define BSET_PARALLEL_FOR
#endif

namespace bset::kernels {

namespace {

Backend g_default_backend = Backend::parallel;

constexpr std::size_t kParallelThreshold = 1 << 14;

struct Range {
  std::size_t begin;
  std::size_t end;
};

// Output positions o in [0, out) with 0 <= o + tap - pad < in.
Range valid_outputs(std::size_t out, std::size_t in, std::size_t tap, std::size_t pad) {
  const auto lo = static_cast<std::ptrdiff_t>(pad) - static_cast<std::ptrdiff_t>(tap);
  const auto hi = static_cast<std::ptrdiff_t>(in + pad) - static_cast<std::ptrdiff_t>(tap);
  const auto b = std::max<std::ptrdiff_t>(0, lo);
  const auto e = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out), hi);
  if (e <= b) return {0, 0};
  return {static_cast<std::size_t>(b), static_cast<std::size_t>(e)};
}

}  // namespace

Backend default_backend() { return g_default_backend; }
void set_default_backend(Backend backend) { g_default_backend = backend; }

bool parallel_available() {
#if defined(_OPENMP)
  return true;
#else
  return false;
#endif
}

const KernelTable& table(Backend backend) {
  static const KernelTable serial_table{serial::conv2d_forward, serial::conv2d_backward,
                                        serial::maxpool_forward, serial::maxpool_backward,
                                        serial::dense_forward,  serial::dense_backward};
  static const KernelTable parallel_table{
      parallel::conv2d_forward,  parallel::conv2d_backward, parallel::maxpool_forward,
      parallel::maxpool_backward, parallel::dense_forward,  parallel::dense_backward};
  return backend == Backend::serial ? serial_table : parallel_table;
}

namespace parallel {

void conv2d_forward(const ConvDims& d, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out) {
  const std::size_t oh = d.out_height(), ow = d.out_width();
  const std::size_t k = d.kernel, pad = d.padding;
  const auto planes = static_cast<std::ptrdiff_t>(d.batch * d.out_channels);
  const bool big = d.batch * d.out_channels * oh * ow * d.in_channels * k * k > kParallelThreshold;
  BSET_PARALLEL_FOR
  for (std::ptrdiff_t p = 0; p < planes; ++p) {
    const std::size_t n = static_cast<std::size_t>(p) / d.out_channels;
    const std::size_t oc = static_cast<std::size_t>(p) % d.out_channels;
    double* o = out.data() + static_cast<std::size_t>(p) * oh * ow;
    std::fill(o, o + oh * ow, bias[oc]);
    for (std::size_t ic = 0; ic < d.in_channels; ++ic) {
      const double* src = in.data() + (n * d.in_channels + ic) * d.height * d.width;
      const double* w = weight.data() + (oc * d.in_channels + ic) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Range ry = valid_outputs(oh, d.height, ky, pad);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Range rx = valid_outputs(ow, d.width, kx, pad);
          const double wv = w[ky * k + kx];
          for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
            const double* irow = src + (oy + ky - pad) * d.width;
            double* orow = o + oy * ow;
            for (std::size_t ox = rx.begin; ox < rx.end; ++ox) {
              orow[ox] += wv * irow[ox + kx - pad];
            }
          }
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
  const std::size_t k = d.kernel, pad = d.padding;
  const bool big = d.batch * d.out_channels * oh * ow * d.in_channels * k * k > kParallelThreshold;

  const auto out_channels = static_cast<std::ptrdiff_t>(d.out_channels);
  BSET_PARALLEL_FOR
  for (std::ptrdiff_t ocs = 0; ocs < out_channels; ++ocs) {
    const auto oc = static_cast<std::size_t>(ocs);
    double db = 0.0;
    for (std::size_t n = 0; n < d.batch; ++n) {
      const double* g = d_out.data() + (n * d.out_channels + oc) * oh * ow;
      for (std::size_t i = 0; i < oh * ow; ++i) db += g[i];
    }
    d_bias[oc] = db;
    for (std::size_t ic = 0; ic < d.in_channels; ++ic) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Range ry = valid_outputs(oh, d.height, ky, pad);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Range rx = valid_outputs(ow, d.width, kx, pad);
          double sum = 0.0;
          for (std::size_t n = 0; n < d.batch; ++n) {
            const double* g = d_out.data() + (n * d.out_channels + oc) * oh * ow;
            const double* src = in.data() + (n * d.in_channels + ic) * d.height * d.width;
            for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
              const double* irow = src + (oy + ky - pad) * d.width;
              const double* grow = g + oy * ow;
              for (std::size_t ox = rx.begin; ox < rx.end; ++ox) {
                sum += grow[ox] * irow[ox + kx - pad];
              }
            }
          }
          d_weight[((oc * d.in_channels + ic) * k + ky) * k + kx] = sum;
        }
      }
    }
  }

  if (d_in.empty()) return;
  const auto planes = static_cast<std::ptrdiff_t>(d.batch * d.in_channels);
  BSET_PARALLEL_FOR
  for (std::ptrdiff_t p = 0; p < planes; ++p) {
    const std::size_t n = static_cast<std::size_t>(p) / d.in_channels;
    const std::size_t ic = static_cast<std::size_t>(p) % d.in_channels;
    double* dst = d_in.data() + static_cast<std::size_t>(p) * d.height * d.width;
    std::fill(dst, dst + d.height * d.width, 0.0);
    for (std::size_t oc = 0; oc < d.out_channels; ++oc) {
      const double* g = d_out.data() + (n * d.out_channels + oc) * oh * ow;
      const double* w = weight.data() + (oc * d.in_channels + ic) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Range ry = valid_outputs(oh, d.height, ky, pad);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Range rx = valid_outputs(ow, d.width, kx, pad);
          const double wv = w[ky * k + kx];
          for (std::size_t oy = ry.begin; oy < ry.end; ++oy) {
            double* drow = dst + (oy + ky - pad) * d.width;
            const double* grow = g + oy * ow;
            for (std::size_t ox = rx.begin; ox < rx.end; ++ox) {
              drow[ox + kx - pad] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
}

void maxpool_forward(const PoolDims& d, std::span<const double> in, std::span<double> out,
                     std::span<std::uint32_t> argmax) {
  const std::size_t oh = d.out_height(), ow = d.out_width();
  const auto planes = static_cast<std::ptrdiff_t>(d.batch * d.channels);
  const bool big = d.batch * d.channels * d.height * d.width > kParallelThreshold;
  BSET_PARALLEL_FOR
  for (std::ptrdiff_t p = 0; p < planes; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * d.height * d.width;
    const std::size_t obase = static_cast<std::size_t>(p) * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + oy * d.size * d.width + ox * d.size;
        double best_value = in[best];
        for (std::size_t py = 0; py < d.size; ++py) {
          const std::size_t row = base + (oy * d.size + py) * d.width + ox * d.size;
          for (std::size_t px = 0; px < d.size; ++px) {
            if (in[row + px] > best_value) {
              best_value = in[row + px];
              best = row + px;
            }
          }
        }
        out[obase + oy * ow + ox] = best_value;
        argmax[obase + oy * ow + ox] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

void maxpool_backward(const PoolDims& d, std::span<const double> d_out,
                      std::span<const std::uint32_t> argmax, std::span<double> d_in) {
  const std::size_t oh = d.out_height(), ow = d.out_width();
  const auto planes = static_cast<std::ptrdiff_t>(d.batch * d.channels);
  const bool big = d.batch * d.channels * d.height * d.width > kParallelThreshold;
  // Windows never straddle planes, so planes can be scattered independently.
  BSET_PARALLEL_FOR
  for (std::ptrdiff_t p = 0; p < planes; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * d.height * d.width;
    std::fill(d_in.begin() + static_cast<std::ptrdiff_t>(base),
              d_in.begin() + static_cast<std::ptrdiff_t>(base + d.height * d.width), 0.0);
    const std::size_t obase = static_cast<std::size_t>(p) * oh * ow;
    for (std::size_t o = obase; o < obase + oh * ow; ++o) d_in[argmax[o]] += d_out[o];
  }
}

void dense_forward(const DenseDims& d, std::span<const double> in,
                   std::span<const double> weight, std::span<const double> bias,
                   std::span<double> out) {
  const auto rows = static_cast<std::ptrdiff_t>(d.batch);
  const bool big = d.batch * d.in_features * d.out_features > kParallelThreshold;
  BSET_PARALLEL_FOR
  for (std::ptrdiff_t n = 0; n < rows; ++n) {
    const double* x = in.data() + static_cast<std::size_t>(n) * d.in_features;
    double* y = out.data() + static_cast<std::size_t>(n) * d.out_features;
    for (std::size_t o = 0; o < d.out_features; ++o) {
      const double* w = weight.data() + o * d.in_features;
      double sum = bias[o];
      for (std::size_t i = 0; i < d.in_features; ++i) sum += w[i] * x[i];
      y[o] = sum;
    }
  }
}

void dense_backward(const DenseDims& d, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> d_out,
                    std::span<double> d_in, std::span<double> d_weight,
                    std::span<double> d_bias) {
  const bool big = d.batch * d.in_features * d.out_features > kParallelThreshold;
  const auto outs = static_cast<std::ptrdiff_t>(d.out_features);
  BSET_PARALLEL_FOR
  for (std::ptrdiff_t os = 0; os < outs; ++os) {
    const auto o = static_cast<std::size_t>(os);
    double* dw = d_weight.data() + o * d.in_features;
    std::fill(dw, dw + d.in_features, 0.0);
    double db = 0.0;
    for (std::size_t n = 0; n < d.batch; ++n) {
      const double g = d_out[n * d.out_features + o];
      db += g;
      const double* x = in.data() + n * d.in_features;
      for (std::size_t i = 0; i < d.in_features; ++i) dw[i] += g * x[i];
    }
    d_bias[o] = db;
  }
  if (d_in.empty()) return;
  const auto rows = static_cast<std::ptrdiff_t>(d.batch);
  BSET_PARALLEL_FOR
  for (std::ptrdiff_t n = 0; n < rows; ++n) {
    double* dx = d_in.data() + static_cast<std::size_t>(n) * d.in_features;
    std::fill(dx, dx + d.in_features, 0.0);
    const double* g = d_out.data() + static_cast<std::size_t>(n) * d.out_features;
    for (std::size_t o = 0; o < d.out_features; ++o) {
      const double* w = weight.data() + o * d.in_features;
      for (std::size_t i = 0; i < d.in_features; ++i) dx[i] += g[o] * w[i];
    }
  }
}

}  // namespace parallel
}  // namespace bset::kernels
