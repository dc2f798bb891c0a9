#pragma once

// Compute kernels behind the network layers.
//
// Two implementations share this interface. `serial` evaluates each output
// element straight from its defining sum and is kept as the reference.
// `parallel` reorders the loops into plane-wise accumulation and splits
// independent planes across OpenMP threads. The two agree to rounding; the
// parallel backend is itself deterministic for any thread count.

#include <cstddef>
#include <cstdint>
#include <span>

namespace bset::kernels {

enum class Backend { serial, parallel };

// Process-wide default used by the network when no backend is given.
Backend default_backend();
void set_default_backend(Backend backend);
// True when the parallel backend was compiled with OpenMP.
bool parallel_available();

struct ConvDims {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return height + 2 * padding - kernel + 1; }
  std::size_t out_width() const { return width + 2 * padding - kernel + 1; }
};

struct PoolDims {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t size = 2;

  std::size_t out_height() const { return height / size; }
  std::size_t out_width() const { return width / size; }
};

struct DenseDims {
  std::size_t batch = 1;
  std::size_t in_features = 1;
  std::size_t out_features = 1;
};

namespace serial {
void conv2d_forward(const ConvDims& d, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out);
// d_in may be empty to skip the input gradient; d_weight and d_bias are overwritten.
void conv2d_backward(const ConvDims& d, std::span<const double> in,
                     std::span<const double> weight, std::span<const double> d_out,
                     std::span<double> d_in, std::span<double> d_weight,
                     std::span<double> d_bias);
void maxpool_forward(const PoolDims& d, std::span<const double> in, std::span<double> out,
                     std::span<std::uint32_t> argmax);
void maxpool_backward(const PoolDims& d, std::span<const double> d_out,
                      std::span<const std::uint32_t> argmax, std::span<double> d_in);
void dense_forward(const DenseDims& d, std::span<const double> in,
                   std::span<const double> weight, std::span<const double> bias,
                   std::span<double> out);
void dense_backward(const DenseDims& d, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> d_out,
                    std::span<double> d_in, std::span<double> d_weight,
                    std::span<double> d_bias);
}  // namespace serial

namespace parallel {
void conv2d_forward(const ConvDims& d, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out);
void conv2d_backward(const ConvDims& d, std::span<const double> in,
                     std::span<const double> weight, std::span<const double> d_out,
                     std::span<double> d_in, std::span<double> d_weight,
                     std::span<double> d_bias);
void maxpool_forward(const PoolDims& d, std::span<const double> in, std::span<double> out,
                     std::span<std::uint32_t> argmax);
void maxpool_backward(const PoolDims& d, std::span<const double> d_out,
                      std::span<const std::uint32_t> argmax, std::span<double> d_in);
void dense_forward(const DenseDims& d, std::span<const double> in,
                   std::span<const double> weight, std::span<const double> bias,
                   std::span<double> out);
void dense_backward(const DenseDims& d, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> d_out,
                    std::span<double> d_in, std::span<double> d_weight,
                    std::span<double> d_bias);
}  // namespace parallel

// Dispatch on a backend value.
struct KernelTable {
  decltype(&serial::conv2d_forward) conv2d_forward;
  decltype(&serial::conv2d_backward) conv2d_backward;
  decltype(&serial::maxpool_forward) maxpool_forward;
  decltype(&serial::maxpool_backward) maxpool_backward;
  decltype(&serial::dense_forward) dense_forward;
  decltype(&serial::dense_backward) dense_backward;
};

const KernelTable& table(Backend backend);

}  // namespace bset::kernels
