#include "kernels.hpp"

#include <algorithm>
#include <vector>

#include <Eigen/Core>

namespace seqadv::grad::kernels {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, pad_h, pad_w, out_h, out_w;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t pixels() const { return out_h * out_w; }
};

ConvGeometry geometry(const Tensor& x, const Tensor& w, std::size_t stride) {
  ConvGeometry g{};
  g.batch = x.shape()[0];
  g.in_channels = x.shape()[1];
  g.height = x.shape()[2];
  g.width = x.shape()[3];
  g.out_channels = w.shape()[0];
  g.kernel_h = w.shape()[2];
  g.kernel_w = w.shape()[3];
  g.stride = stride;
  g.pad_h = (g.kernel_h - 1) / 2;
  g.pad_w = (g.kernel_w - 1) / 2;
  g.out_h = conv_out_extent(g.height, stride);
  g.out_w = conv_out_extent(g.width, stride);
  return g;
}

// cols[K, N*P] with K = (ci, ki, kj) and columns (n, oh, ow).
std::vector<double> im2col(const Tensor& x, const ConvGeometry& g) {
  const std::size_t pixels = g.pixels();
  const std::size_t columns = g.batch * pixels;
  std::vector<double> cols(g.patch() * columns, 0.0);
  const auto src = x.data();
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        double* out_row = cols.data() + row * columns;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const double* plane = src.data() + (n * g.in_channels + ci) * g.height * g.width;
          double* out = out_row + n * pixels;
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad_h);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
            const double* in_row = plane + static_cast<std::size_t>(ih) * g.width;
            double* dst = out + oh * g.out_w;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const auto iw =
                  static_cast<std::ptrdiff_t>(ow * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad_w);
              if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.width)) dst[ow] = in_row[iw];
            }
          }
        }
      }
    }
  }
  return cols;
}

void col2im(const std::vector<double>& cols, const ConvGeometry& g, Tensor& dx) {
  const std::size_t pixels = g.pixels();
  const std::size_t columns = g.batch * pixels;
  auto dst = dx.data();
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        const double* in_row = cols.data() + row * columns;
        for (std::size_t n = 0; n < g.batch; ++n) {
          double* plane = dst.data() + (n * g.in_channels + ci) * g.height * g.width;
          const double* src = in_row + n * pixels;
          for (std::size_t oh = 0; oh < g.out_h; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad_h);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
            double* out_row = plane + static_cast<std::size_t>(ih) * g.width;
            const double* s = src + oh * g.out_w;
            for (std::size_t ow = 0; ow < g.out_w; ++ow) {
              const auto iw =
                  static_cast<std::ptrdiff_t>(ow * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad_w);
              if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.width)) out_row[iw] += s[ow];
            }
          }
        }
      }
    }
  }
}

// [N, C, P] <-> [C, N*P]
std::vector<double> batch_to_channel_major(std::span<const double> src, std::size_t batch, std::size_t channels,
                                           std::size_t pixels) {
  std::vector<double> out(src.size());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy_n(src.data() + (n * channels + c) * pixels, pixels, out.data() + (c * batch + n) * pixels);
    }
  }
  return out;
}

void channel_major_to_batch(const double* src, std::size_t batch, std::size_t channels, std::size_t pixels,
                            std::span<double> out) {
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy_n(src + (c * batch + n) * pixels, pixels, out.data() + (n * channels + c) * pixels);
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  const auto ar = static_cast<Eigen::Index>(a.shape()[0]);
  const auto ac = static_cast<Eigen::Index>(a.shape()[1]);
  const auto br = static_cast<Eigen::Index>(b.shape()[0]);
  const auto bc = static_cast<Eigen::Index>(b.shape()[1]);
  ConstMatrixMap ma(a.data().data(), ar, ac);
  ConstMatrixMap mb(b.data().data(), br, bc);
  const auto rows = transpose_a ? ac : ar;
  const auto cols = transpose_b ? br : bc;
  Tensor out(Shape{static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)});
  MatrixMap mo(out.data().data(), rows, cols);
  if (transpose_a && transpose_b) {
    mo.noalias() = ma.transpose() * mb.transpose();
  } else if (transpose_a) {
    mo.noalias() = ma.transpose() * mb;
  } else if (transpose_b) {
    mo.noalias() = ma * mb.transpose();
  } else {
    mo.noalias() = ma * mb;
  }
  return out;
}

std::size_t conv_out_extent(std::size_t extent, std::size_t stride) { return (extent + stride - 1) / stride; }

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride) {
  const ConvGeometry g = geometry(x, w, stride);
  const auto cols = im2col(x, g);
  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto columns = static_cast<Eigen::Index>(g.batch * g.pixels());
  const auto out_channels = static_cast<Eigen::Index>(g.out_channels);

  Tensor out(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
  ConstMatrixMap mw(w.data().data(), out_channels, patch);
  ConstMatrixMap mc(cols.data(), patch, columns);
  if (g.batch == 1) {
    MatrixMap mo(out.data().data(), out_channels, columns);
    mo.noalias() = mw * mc;
  } else {
    RowMatrix product = mw * mc;
    channel_major_to_batch(product.data(), g.batch, g.out_channels, g.pixels(), out.data());
  }
  return out;
}

void conv2d_backward(const Tensor& x, const Tensor& w, std::size_t stride, const Tensor& dy, Tensor* dx,
                     Tensor* dw) {
  const ConvGeometry g = geometry(x, w, stride);
  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto columns = static_cast<Eigen::Index>(g.batch * g.pixels());
  const auto out_channels = static_cast<Eigen::Index>(g.out_channels);

  std::vector<double> dy_cm;
  const double* dy_ptr = dy.data().data();
  if (g.batch != 1) {
    dy_cm = batch_to_channel_major(dy.data(), g.batch, g.out_channels, g.pixels());
    dy_ptr = dy_cm.data();
  }
  ConstMatrixMap mdy(dy_ptr, out_channels, columns);
  ConstMatrixMap mw(w.data().data(), out_channels, patch);

  if (dw != nullptr) {
    const auto cols = im2col(x, g);
    ConstMatrixMap mc(cols.data(), patch, columns);
    *dw = Tensor(w.shape());
    MatrixMap mdw(dw->data().data(), out_channels, patch);
    mdw.noalias() = mdy * mc.transpose();
  }
  if (dx != nullptr) {
    std::vector<double> dcols(static_cast<std::size_t>(patch * columns));
    MatrixMap mdc(dcols.data(), patch, columns);
    mdc.noalias() = mw.transpose() * mdy;
    *dx = Tensor(x.shape());
    col2im(dcols, g, *dx);
  }
}

Tensor maxpool2d(const Tensor& x, std::size_t window_h, std::size_t window_w) {
  const auto& s = x.shape();
  const std::size_t planes = s[0] * s[1];
  const std::size_t h = s[2], w = s[3];
  const std::size_t oh = h / window_h, ow = w / window_w;
  Tensor out(Shape{s[0], s[1], oh, ow});
  const auto src = x.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* plane = src.data() + p * h * w;
    double* o = dst.data() + p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        double best = plane[i * window_h * w + j * window_w];
        for (std::size_t a = 0; a < window_h; ++a) {
          for (std::size_t b = 0; b < window_w; ++b) {
            best = std::max(best, plane[(i * window_h + a) * w + j * window_w + b]);
          }
        }
        o[i * ow + j] = best;
      }
    }
  }
  return out;
}

Tensor maxpool2d_backward(const Tensor& x, std::size_t window_h, std::size_t window_w, const Tensor& dy) {
  const auto& s = x.shape();
  const std::size_t planes = s[0] * s[1];
  const std::size_t h = s[2], w = s[3];
  const std::size_t oh = h / window_h, ow = w / window_w;
  Tensor dx(s);
  const auto src = x.data();
  const auto g = dy.data();
  auto dst = dx.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* plane = src.data() + p * h * w;
    double* dplane = dst.data() + p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t arg = i * window_h * w + j * window_w;
        for (std::size_t a = 0; a < window_h; ++a) {
          for (std::size_t b = 0; b < window_w; ++b) {
            const std::size_t idx = (i * window_h + a) * w + j * window_w + b;
            if (plane[idx] > plane[arg]) arg = idx;
          }
        }
        dplane[arg] += g[p * oh * ow + i * ow + j];
      }
    }
  }
  return dx;
}

}  // namespace seqadv::grad::kernels
