#include "natmotion/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "natmotion/error.hpp"
#include "natmotion/gemm.hpp"

namespace natmotion::ops {
namespace {

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw std::logic_error("operation on an unbound Var");
  return *v.tape();
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_rank(const char* op, const Var& v, std::size_t rank) {
  if (v.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(v.shape()));
  }
}

void add_into(Tensor& dst, const Tensor& src) {
  double* d = dst.ptr();
  const double* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  const double* x = a.value().ptr();
  const double* y = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return tape_of(a).record(std::move(out), {a, b}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    if (d[0]) add_into(*d[0], g);
    if (d[1]) add_into(*d[1], g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  const double* x = a.value().ptr();
  const double* y = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return tape_of(a).record(std::move(out), {a, b}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    if (d[0]) add_into(*d[0], g);
    if (d[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d[1])[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  const double* x = a.value().ptr();
  const double* y = b.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (d[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d[0])[i] += g[i] * y[i];
    }
    if (d[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d[1])[i] += g[i] * x[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out(a.shape());
  const double* x = a.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x[i];
  return tape_of(a).record(std::move(out), {a}, [factor](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    if (d[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d[0])[i] += factor * g[i];
    }
  });
}

Var leaky_relu(const Var& x, double slope) {
  Tensor out(x.shape());
  const double* in = x.value().ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : slope * in[i];
  return tape_of(x).record(std::move(out), {x}, [x, slope](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    if (!d[0]) return;
    const double* in = x.value().ptr();
    double* dx = d[0]->ptr();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += in[i] > 0.0 ? g[i] : slope * g[i];
  });
}

Var sum(const Var& x) {
  const auto& v = x.value().values();
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  return tape_of(x).record(Tensor::scalar(total), {x}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    if (!d[0]) return;
    const double s = g[0];
    for (double& e : d[0]->data()) e += s;
  });
}

Var mean(const Var& x) {
  const auto& v = x.value().values();
  if (v.empty()) throw ShapeError("mean of an empty tensor");
  const double n = static_cast<double>(v.size());
  const double total = std::accumulate(v.begin(), v.end(), 0.0) / n;
  return tape_of(x).record(Tensor::scalar(total), {x}, [n](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    if (!d[0]) return;
    const double s = g[0] / n;
    for (double& e : d[0]->data()) e += s;
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return tape_of(x).record(std::move(out), {x}, [](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    if (d[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d[0])[i] += g[i];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor out({m, n});
  gemm(Trans::no, Trans::no, m, n, k, a.value().ptr(), k, b.value().ptr(), n, out.ptr(), n);
  return tape_of(a).record(std::move(out), {a, b},
                           [a, b, m, n, k](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
                             if (d[0]) {
                               gemm(Trans::no, Trans::yes, m, k, n, g.ptr(), n, b.value().ptr(), n, d[0]->ptr(), k, true);
                             }
                             if (d[1]) {
                               gemm(Trans::yes, Trans::no, k, n, m, a.value().ptr(), k, g.ptr(), n, d[1]->ptr(), n, true);
                             }
                           });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", w, 2);
  const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (w.dim(0) != in || bias.value().size() != out_dim) {
    throw ShapeError("linear: x " + to_string(x.shape()) + ", w " + to_string(w.shape()) + ", bias " +
                     to_string(bias.shape()));
  }
  Tensor out({batch, out_dim});
  gemm(Trans::no, Trans::no, batch, out_dim, in, x.value().ptr(), in, w.value().ptr(), out_dim, out.ptr(), out_dim);
  const double* bv = bias.value().ptr();
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t c = 0; c < out_dim; ++c) out[r * out_dim + c] += bv[c];
  }
  return tape_of(x).record(
      std::move(out), {x, w, bias},
      [x, w, batch, in, out_dim](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
        if (d[0]) {
          gemm(Trans::no, Trans::yes, batch, in, out_dim, g.ptr(), out_dim, w.value().ptr(), out_dim, d[0]->ptr(), in,
               true);
        }
        if (d[1]) {
          gemm(Trans::yes, Trans::no, in, out_dim, batch, x.value().ptr(), in, g.ptr(), out_dim, d[1]->ptr(), out_dim,
               true);
        }
        if (d[2]) {
          for (std::size_t r = 0; r < batch; ++r) {
            for (std::size_t c = 0; c < out_dim; ++c) (*d[2])[c] += g[r * out_dim + c];
          }
        }
      });
}

Var log_softmax(const Var& logits) {
  require_rank("log_softmax", logits, 2);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor out(logits.shape());
  const double* z = logits.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = z + r * cols;
    const double peak = *std::max_element(zr, zr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(zr[c] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = zr[c] - lse;
  }
  return tape_of(logits).record(std::move(out), {logits},
                                [rows, cols](const Tensor& y, const Tensor& g, std::span<Tensor* const> d) {
                                  if (!d[0]) return;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    double gsum = 0.0;
                                    for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
                                    for (std::size_t c = 0; c < cols; ++c) {
                                      const std::size_t i = r * cols + c;
                                      (*d[0])[i] += g[i] - std::exp(y[i]) * gsum;
                                    }
                                  }
                                });
}

Var softmax(const Var& logits) {
  require_rank("softmax", logits, 2);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor out(logits.shape());
  const double* z = logits.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = z + r * cols;
    const double peak = *std::max_element(zr, zr + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = std::exp(zr[c] - peak);
      total += out[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
  }
  return tape_of(logits).record(std::move(out), {logits},
                                [rows, cols](const Tensor& y, const Tensor& g, std::span<Tensor* const> d) {
                                  if (!d[0]) return;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    double dot = 0.0;
                                    for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                                    for (std::size_t c = 0; c < cols; ++c) {
                                      const std::size_t i = r * cols + c;
                                      (*d[0])[i] += y[i] * (g[i] - dot);
                                    }
                                  }
                                });
}

Var permute(const Var& x, std::array<std::size_t, 4> perm) {
  require_rank("permute", x, 4);
  std::array<bool, 4> seen{};
  for (std::size_t p : perm) {
    if (p >= 4 || seen[p]) throw std::invalid_argument("permute: not a permutation of 0..3");
    seen[p] = true;
  }
  const Shape& in_shape = x.shape();
  std::array<std::size_t, 4> in_strides{in_shape[1] * in_shape[2] * in_shape[3], in_shape[2] * in_shape[3],
                                        in_shape[3], 1};
  Shape out_shape{in_shape[perm[0]], in_shape[perm[1]], in_shape[perm[2]], in_shape[perm[3]]};
  std::array<std::size_t, 4> s{in_strides[perm[0]], in_strides[perm[1]], in_strides[perm[2]], in_strides[perm[3]]};

  // Walks the output in order; `s` maps output coordinates to input offsets.
  auto scatter = [out_shape, s](const double* src, double* dst, bool to_output) {
    std::size_t o = 0;
    for (std::size_t i0 = 0; i0 < out_shape[0]; ++i0)
      for (std::size_t i1 = 0; i1 < out_shape[1]; ++i1)
        for (std::size_t i2 = 0; i2 < out_shape[2]; ++i2)
          for (std::size_t i3 = 0; i3 < out_shape[3]; ++i3, ++o) {
            const std::size_t in = i0 * s[0] + i1 * s[1] + i2 * s[2] + i3 * s[3];
            if (to_output) {
              dst[o] = src[in];
            } else {
              dst[in] += src[o];
            }
          }
  };
  Tensor out(out_shape);
  scatter(x.value().ptr(), out.ptr(), true);
  return tape_of(x).record(std::move(out), {x}, [scatter](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    if (d[0]) scatter(g.ptr(), d[0]->ptr(), false);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require_rank("concat_cols", a, 2);
  require_rank("concat_cols", b, 2);
  const std::size_t rows = a.dim(0), p = a.dim(1), q = b.dim(1);
  if (b.dim(0) != rows) throw ShapeError("concat_cols: row count mismatch");
  Tensor out({rows, p + q});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().ptr() + r * p, p, out.ptr() + r * (p + q));
    std::copy_n(b.value().ptr() + r * q, q, out.ptr() + r * (p + q) + p);
  }
  return tape_of(a).record(std::move(out), {a, b}, [rows, p, q](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (d[0]) {
        for (std::size_t c = 0; c < p; ++c) (*d[0])[r * p + c] += g[r * (p + q) + c];
      }
      if (d[1]) {
        for (std::size_t c = 0; c < q; ++c) (*d[1])[r * q + c] += g[r * (p + q) + p + c];
      }
    }
  });
}

Var stack_frames(const std::vector<Var>& frames) {
  if (frames.empty()) throw ShapeError("stack_frames: no frames");
  const Shape& fs = frames.front().shape();
  if (fs.size() != 2) throw ShapeError("stack_frames: frames must be [B, D]");
  const std::size_t batch = fs[0], width = fs[1], count = frames.size();
  Tensor out({batch, count, width});
  for (std::size_t t = 0; t < count; ++t) {
    if (frames[t].shape() != fs) throw ShapeError("stack_frames: inconsistent frame shapes");
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(frames[t].value().ptr() + b * width, width, out.ptr() + (b * count + t) * width);
    }
  }
  return tape_of(frames.front())
      .record(std::move(out), frames, [batch, width, count](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
        for (std::size_t t = 0; t < count; ++t) {
          if (!d[t]) continue;
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t w = 0; w < width; ++w) (*d[t])[b * width + w] += g[(b * count + t) * width + w];
          }
        }
      });
}

Var select_frame(const Var& x, std::size_t t) {
  const Shape& s = x.shape();
  if (s.size() < 2 || t >= s[1]) throw ShapeError("select_frame: index out of range for " + to_string(s));
  const std::size_t batch = s[0], frames = s[1];
  const std::size_t inner = x.value().size() / (batch * frames);
  Shape out_shape{batch};
  out_shape.insert(out_shape.end(), s.begin() + 2, s.end());
  Tensor out(out_shape);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(x.value().ptr() + (b * frames + t) * inner, inner, out.ptr() + b * inner);
  }
  return tape_of(x).record(std::move(out), {x}, [batch, frames, inner, t](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    if (!d[0]) return;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < inner; ++i) (*d[0])[(b * frames + t) * inner + i] += g[b * inner + i];
    }
  });
}

Var joint_mix(const Var& h, const Tensor& adjacency) {
  require_rank("joint_mix", h, 4);
  const std::size_t joints = h.dim(3);
  if (adjacency.shape() != Shape{joints, joints}) {
    throw ShapeError("joint_mix: adjacency " + to_string(adjacency.shape()) + " for " + std::to_string(joints) +
                     " joints");
  }
  const std::size_t rows = h.value().size() / joints;
  Tensor out(h.shape());
  const double* in = h.value().ptr();
  const double* a = adjacency.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in + r * joints;
    double* dst = out.ptr() + r * joints;
    for (std::size_t j = 0; j < joints; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < joints; ++k) acc += a[j * joints + k] * src[k];
      dst[j] = acc;
    }
  }
  return tape_of(h).record(std::move(out), {h}, [adjacency, rows, joints](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    if (!d[0]) return;
    const double* a = adjacency.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g.ptr() + r * joints;
      double* dr = d[0]->ptr() + r * joints;
      for (std::size_t j = 0; j < joints; ++j) {
        for (std::size_t k = 0; k < joints; ++k) dr[k] += a[j * joints + k] * gr[j];
      }
    }
  });
}

Var channel_mix(const Var& h, const Var& w) {
  require_rank("channel_mix", h, 4);
  require_rank("channel_mix", w, 2);
  const std::size_t batch = h.dim(0), c_in = h.dim(1), plane = h.dim(2) * h.dim(3);
  if (w.dim(0) != c_in) {
    throw ShapeError("channel_mix: input " + to_string(h.shape()) + " with weight " + to_string(w.shape()));
  }
  const std::size_t c_out = w.dim(1);
  Tensor out({batch, c_out, h.dim(2), h.dim(3)});
  for (std::size_t b = 0; b < batch; ++b) {
    gemm(Trans::yes, Trans::no, c_out, plane, c_in, w.value().ptr(), c_out, h.value().ptr() + b * c_in * plane, plane,
         out.ptr() + b * c_out * plane, plane);
  }
  return tape_of(h).record(
      std::move(out), {h, w}, [h, w, batch, c_in, c_out, plane](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
        for (std::size_t b = 0; b < batch; ++b) {
          const double* gb = g.ptr() + b * c_out * plane;
          if (d[0]) {
            gemm(Trans::no, Trans::no, c_in, plane, c_out, w.value().ptr(), c_out, gb, plane,
                 d[0]->ptr() + b * c_in * plane, plane, true);
          }
          if (d[1]) {
            gemm(Trans::no, Trans::yes, c_in, c_out, plane, h.value().ptr() + b * c_in * plane, plane, gb, plane,
                 d[1]->ptr(), c_out, true);
          }
        }
      });
}

namespace {

// col[(c * ks + k), t * J + j] = h[c, t + k - pad, j], zero outside [0, T).
void im2col(const double* h, std::size_t c_in, std::size_t frames, std::size_t joints, std::size_t ks, double* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(ks / 2);
  const std::size_t plane = frames * joints;
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t k = 0; k < ks; ++k) {
      double* row = col + (c * ks + k) * plane;
      for (std::size_t t = 0; t < frames; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) {
          std::fill_n(row + t * joints, joints, 0.0);
        } else {
          std::copy_n(h + c * plane + static_cast<std::size_t>(src) * joints, joints, row + t * joints);
        }
      }
    }
  }
}

void col2im_add(const double* col, std::size_t c_in, std::size_t frames, std::size_t joints, std::size_t ks,
                double* h) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(ks / 2);
  const std::size_t plane = frames * joints;
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t k = 0; k < ks; ++k) {
      const double* row = col + (c * ks + k) * plane;
      for (std::size_t t = 0; t < frames; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(k) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
        double* dst = h + c * plane + static_cast<std::size_t>(src) * joints;
        for (std::size_t j = 0; j < joints; ++j) dst[j] += row[t * joints + j];
      }
    }
  }
}

}  // namespace

Var temporal_conv(const Var& h, const Var& w, const Var& bias) {
  require_rank("temporal_conv", h, 4);
  require_rank("temporal_conv", w, 3);
  const std::size_t batch = h.dim(0), c_in = h.dim(1), frames = h.dim(2), joints = h.dim(3);
  const std::size_t c_out = w.dim(0), ks = w.dim(2);
  if (w.dim(1) != c_in) {
    throw ShapeError("temporal_conv: input " + to_string(h.shape()) + " with kernel " + to_string(w.shape()));
  }
  if (ks % 2 == 0) throw std::invalid_argument("temporal_conv: kernel size must be odd, got " + std::to_string(ks));
  const bool has_bias = bias.valid();
  if (has_bias && bias.value().size() != c_out) throw ShapeError("temporal_conv: bias size mismatch");

  const std::size_t plane = frames * joints;
  const std::size_t depth = c_in * ks;
  Tensor out({batch, c_out, frames, joints});
  std::vector<double> col(ks == 1 ? 0 : depth * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* hb = h.value().ptr() + b * c_in * plane;
    const double* src = hb;
    if (ks != 1) {
      im2col(hb, c_in, frames, joints, ks, col.data());
      src = col.data();
    }
    double* ob = out.ptr() + b * c_out * plane;
    gemm(Trans::no, Trans::no, c_out, plane, depth, w.value().ptr(), depth, src, plane, ob, plane);
    if (has_bias) {
      const double* bv = bias.value().ptr();
      for (std::size_t c = 0; c < c_out; ++c) {
        for (std::size_t p = 0; p < plane; ++p) ob[c * plane + p] += bv[c];
      }
    }
  }

  std::vector<Var> inputs{h, w};
  if (has_bias) inputs.push_back(bias);
  return tape_of(h).record(
      std::move(out), std::move(inputs),
      [h, w, batch, c_in, c_out, frames, joints, ks, plane, depth, has_bias](const Tensor&, const Tensor& g,
                                                                           std::span<Tensor* const> d) {
        std::vector<double> col(ks == 1 ? 0 : depth * plane);
        std::vector<double> dcol(ks == 1 || !d[0] ? 0 : depth * plane);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* gb = g.ptr() + b * c_out * plane;
          const double* hb = h.value().ptr() + b * c_in * plane;
          if (d[1]) {
            const double* src = hb;
            if (ks != 1) {
              im2col(hb, c_in, frames, joints, ks, col.data());
              src = col.data();
            }
            gemm(Trans::no, Trans::yes, c_out, depth, plane, gb, plane, src, plane, d[1]->ptr(), depth, true);
          }
          if (d[0]) {
            double* dh = d[0]->ptr() + b * c_in * plane;
            if (ks == 1) {
              gemm(Trans::yes, Trans::no, c_in, plane, c_out, w.value().ptr(), depth, gb, plane, dh, plane, true);
            } else {
              gemm(Trans::yes, Trans::no, depth, plane, c_out, w.value().ptr(), depth, gb, plane, dcol.data(), plane);
              col2im_add(dcol.data(), c_in, frames, joints, ks, dh);
            }
          }
          if (has_bias && d[2]) {
            for (std::size_t c = 0; c < c_out; ++c) {
              double acc = 0.0;
              for (std::size_t p = 0; p < plane; ++p) acc += gb[c * plane + p];
              (*d[2])[c] += acc;
            }
          }
        }
      });
}

Var mean_pool_tj(const Var& h) {
  require_rank("mean_pool_tj", h, 4);
  const std::size_t batch = h.dim(0), channels = h.dim(1), plane = h.dim(2) * h.dim(3);
  Tensor out({batch, channels});
  const double* in = h.value().ptr();
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += in[bc * plane + p];
    out[bc] = acc / static_cast<double>(plane);
  }
  return tape_of(h).record(std::move(out), {h}, [batch, channels, plane](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    if (!d[0]) return;
    for (std::size_t bc = 0; bc < batch * channels; ++bc) {
      const double v = g[bc] / static_cast<double>(plane);
      for (std::size_t p = 0; p < plane; ++p) (*d[0])[bc * plane + p] += v;
    }
  });
}

Var tile_frames(const Var& context, const Tensor& positions, std::size_t joints) {
  require_rank("tile_frames", context, 2);
  const std::size_t batch = context.dim(0), channels = context.dim(1);
  if (positions.rank() != 2 || positions.dim(1) != channels) {
    throw ShapeError("tile_frames: positions " + to_string(positions.shape()) + " for context " +
                     to_string(context.shape()));
  }
  const std::size_t frames = positions.dim(0);
  Tensor out({batch, channels, frames, joints});
  double* o = out.ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double cv = context.value()[b * channels + c];
      for (std::size_t t = 0; t < frames; ++t) {
        const double v = cv + positions[t * channels + c];
        std::fill_n(o, joints, v);
        o += joints;
      }
    }
  }
  return tape_of(context).record(std::move(out), {context},
                                 [batch, channels, frames, joints](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
                                   if (!d[0]) return;
                                   const std::size_t plane = frames * joints;
                                   for (std::size_t bc = 0; bc < batch * channels; ++bc) {
                                     double acc = 0.0;
                                     for (std::size_t p = 0; p < plane; ++p) acc += g[bc * plane + p];
                                     (*d[0])[bc] += acc;
                                   }
                                 });
}

Var add_seed(const Var& residual, const Var& seed) {
  const Shape& rs = residual.shape();
  const Shape& ss = seed.shape();
  if (rs.size() < 2 || ss.size() != rs.size() - 1 || ss[0] != rs[0] ||
      !std::equal(ss.begin() + 1, ss.end(), rs.begin() + 2)) {
    throw ShapeError("add_seed: residual " + to_string(rs) + " with seed " + to_string(ss));
  }
  const std::size_t batch = rs[0], frames = rs[1], inner = seed.value().size() / batch;
  Tensor out(rs);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < frames; ++t) {
      const double* r = residual.value().ptr() + (b * frames + t) * inner;
      const double* s = seed.value().ptr() + b * inner;
      double* o = out.ptr() + (b * frames + t) * inner;
      for (std::size_t i = 0; i < inner; ++i) o[i] = s[i] + r[i];
    }
  }
  return tape_of(residual).record(std::move(out), {residual, seed},
                                  [batch, frames, inner](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
                                    if (d[0]) add_into(*d[0], g);
                                    if (d[1]) {
                                      for (std::size_t b = 0; b < batch; ++b) {
                                        for (std::size_t t = 0; t < frames; ++t) {
                                          for (std::size_t i = 0; i < inner; ++i) {
                                            (*d[1])[b * inner + i] += g[(b * frames + t) * inner + i];
                                          }
                                        }
                                      }
                                    }
                                  });
}

namespace {

struct ChannelLayout {
  std::size_t outer, channels, inner;
};

ChannelLayout channel_layout(const char* op, const Var& x, const Var& gamma, const Var& beta) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError(std::string(op) + ": need at least [B, C], got " + to_string(s));
  const std::size_t channels = s[1];
  if (gamma.value().size() != channels || beta.value().size() != channels) {
    throw ShapeError(std::string(op) + ": affine parameters do not match " + std::to_string(channels) + " channels");
  }
  return {s[0], channels, x.value().size() / (s[0] * channels)};
}

}  // namespace

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, BatchStats* stats) {
  const auto [outer, channels, inner] = channel_layout("batch_norm_train", x, gamma, beta);
  const std::size_t count = outer * inner;
  const double n = static_cast<double>(count);
  const double* in = x.value().ptr();
  std::vector<double> mean(channels, 0.0), var(channels, 0.0), inv_std(channels);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* p = in + (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) mean[c] += p[i];
    }
  }
  for (double& m : mean) m /= n;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* p = in + (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double dv = p[i] - mean[c];
        var[c] += dv * dv;
      }
    }
  }
  for (double& v : var) v /= n;
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

  Tensor out(x.shape());
  const double* gm = gamma.value().ptr();
  const double* bt = beta.value().ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        out[base + i] = (in[base + i] - mean[c]) * inv_std[c] * gm[c] + bt[c];
      }
    }
  }
  if (stats) *stats = BatchStats{mean, var, count};

  return tape_of(x).record(
      std::move(out), {x, gamma, beta},
      [x, gamma, outer, channels, inner, n, mean, inv_std](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
        const double* in = x.value().ptr();
        std::vector<double> sum_g(channels, 0.0), sum_gx(channels, 0.0);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (o * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              const double xhat = (in[base + i] - mean[c]) * inv_std[c];
              sum_g[c] += g[base + i];
              sum_gx[c] += g[base + i] * xhat;
            }
          }
        }
        if (d[1]) {
          for (std::size_t c = 0; c < channels; ++c) (*d[1])[c] += sum_gx[c];
        }
        if (d[2]) {
          for (std::size_t c = 0; c < channels; ++c) (*d[2])[c] += sum_g[c];
        }
        if (d[0]) {
          const double* gm = gamma.value().ptr();
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t c = 0; c < channels; ++c) {
              const std::size_t base = (o * channels + c) * inner;
              const double k = gm[c] * inv_std[c] / n;
              for (std::size_t i = 0; i < inner; ++i) {
                const double xhat = (in[base + i] - mean[c]) * inv_std[c];
                (*d[0])[base + i] += k * (n * g[base + i] - sum_g[c] - xhat * sum_gx[c]);
              }
            }
          }
        }
      });
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                    const Tensor& running_var, double eps) {
  const auto [outer, channels, inner] = channel_layout("batch_norm_eval", x, gamma, beta);
  if (running_mean.size() != channels || running_var.size() != channels) {
    throw ShapeError("batch_norm_eval: running statistics do not match channel count");
  }
  std::vector<double> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
  std::vector<double> mean(running_mean.values());

  Tensor out(x.shape());
  const double* in = x.value().ptr();
  const double* gm = gamma.value().ptr();
  const double* bt = beta.value().ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (o * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        out[base + i] = (in[base + i] - mean[c]) * inv_std[c] * gm[c] + bt[c];
      }
    }
  }
  return tape_of(x).record(
      std::move(out), {x, gamma, beta},
      [x, gamma, outer, channels, inner, mean, inv_std](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
        const double* in = x.value().ptr();
        const double* gm = gamma.value().ptr();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (o * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              const double gi = g[base + i];
              if (d[0]) (*d[0])[base + i] += gi * gm[c] * inv_std[c];
              if (d[1]) (*d[1])[c] += gi * (in[base + i] - mean[c]) * inv_std[c];
              if (d[2]) (*d[2])[c] += gi;
            }
          }
        }
      });
}

namespace {

std::size_t quaternion_count(const char* op, const Var& v) {
  const Shape& s = v.shape();
  if (s.empty() || s.back() != 4) throw ShapeError(std::string(op) + ": last axis must be 4, got " + to_string(s));
  return v.value().size() / 4;
}

}  // namespace

Var l1_quat_loss(const Var& pred, const Var& truth) {
  require_same_shape("l1_quat_loss", pred, truth);
  const std::size_t count = quaternion_count("l1_quat_loss", pred);
  const double* p = pred.value().ptr();
  const double* t = truth.value().ptr();
  double total = 0.0;
  for (std::size_t i = 0; i < pred.value().size(); ++i) total += std::abs(p[i] - t[i]);
  const double q = static_cast<double>(count);
  return tape_of(pred).record(Tensor::scalar(total / q), {pred, truth},
                              [pred, truth, q](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
                                const double* p = pred.value().ptr();
                                const double* t = truth.value().ptr();
                                const double s = g[0] / q;
                                for (std::size_t i = 0; i < pred.value().size(); ++i) {
                                  const double diff = p[i] - t[i];
                                  const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                                  if (d[0]) (*d[0])[i] += s * sign;
                                  if (d[1]) (*d[1])[i] -= s * sign;
                                }
                              });
}

Var quat_norm_penalty(const Var& pred) {
  const std::size_t count = quaternion_count("quat_norm_penalty", pred);
  const double* p = pred.value().ptr();
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double* q = p + 4 * i;
    const double excess = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3] - 1.0;
    total += excess * excess;
  }
  const double n = static_cast<double>(count);
  return tape_of(pred).record(Tensor::scalar(total / n), {pred}, [pred, count, n](const Tensor&, const Tensor& g, std::span<Tensor* const> d) {
    if (!d[0]) return;
    const double* p = pred.value().ptr();
    const double s = g[0] / n;
    for (std::size_t i = 0; i < count; ++i) {
      const double* q = p + 4 * i;
      const double excess = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3] - 1.0;
      for (std::size_t k = 0; k < 4; ++k) (*d[0])[4 * i + k] += s * 4.0 * excess * q[k];
    }
  });
}

Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (labels.size() != rows) throw ShapeError("cross_entropy: one label per row required");
  for (std::size_t label : labels) {
    if (label >= cols) throw std::invalid_argument("cross_entropy: label out of range");
  }
  const double* z = logits.value().ptr();
  std::vector<double> probs(rows * cols);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = z + r * cols;
    const double peak = *std::max_element(zr, zr + cols);
    double denom = 0.0;
    for (std::size_t c = 0; c < cols; ++c) denom += std::exp(zr[c] - peak);
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] = std::exp(zr[c] - peak) / denom;
    total += peak + std::log(denom) - zr[labels[r]];
  }
  const double n = static_cast<double>(rows);
  return tape_of(logits).record(Tensor::scalar(total / n), {logits},
                                [probs = std::move(probs), labels, rows, cols, n](const Tensor&, const Tensor& g,
                                                                                  std::span<Tensor* const> d) {
                                  if (!d[0]) return;
                                  const double s = g[0] / n;
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    for (std::size_t c = 0; c < cols; ++c) {
                                      const double target = c == labels[r] ? 1.0 : 0.0;
                                      (*d[0])[r * cols + c] += s * (probs[r * cols + c] - target);
                                    }
                                  }
                                });
}

Tensor dropout_mask(const Shape& shape, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0, 1)");
  Tensor mask(shape);
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

}  // namespace natmotion::ops
