#include "ahstn/ops.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "ahstn/errors.hpp"

namespace ahstn::diff {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using Eigen::Index;

ConstMap cmap(std::span<const double> d, std::size_t rows, std::size_t cols) {
  return ConstMap(d.data(), static_cast<Index>(rows), static_cast<Index>(cols));
}

MutMap mmap(std::span<double> d, std::size_t rows, std::size_t cols) {
  return MutMap(d.data(), static_cast<Index>(rows), static_cast<Index>(cols));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    std::ostringstream os;
    os << op << ": expected rank " << rank << ", got shape " << to_string(t.shape());
    throw DimensionError(os.str());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

// Registers `rule` for `out` when any input takes part in differentiation.
template <typename Rule>
Tensor finish(Tensor out, std::initializer_list<const Tensor*> inputs, const char* op,
              Rule&& rule) {
  check_finite(out, op);
  if (should_record(inputs)) {
    out.set_requires_grad(true);
    active_tape()->record(out, std::forward<Rule>(rule));
  }
  return out;
}

}  // namespace

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  Buffer out_data(m * n);
  mmap(out_data, m, n).noalias() = cmap(a.data(), m, k) * cmap(b.data(), k, n);
  Tensor out({m, n}, std::move(out_data));
  return finish(out, {&a, &b}, "matmul", [a, b, out, m, k, n]() mutable {
    auto g = cmap(out.grad(), m, n);
    if (a.requires_grad()) mmap(a.grad_buffer(), m, k).noalias() += g * cmap(b.data(), k, n).transpose();
    if (b.requires_grad()) mmap(b.grad_buffer(), k, n).noalias() += cmap(a.data(), m, k).transpose() * g;
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const auto r = a.dim(0), c = a.dim(1);
  Buffer out_data(r * c);
  mmap(out_data, c, r) = cmap(a.data(), r, c).transpose();
  Tensor out({c, r}, std::move(out_data));
  return finish(out, {&a}, "transpose", [a, out, r, c]() mutable {
    mmap(a.grad_buffer(), r, c) += cmap(out.grad(), c, r).transpose();
  });
}

Tensor conv1d_time(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() < 2) throw DimensionError("conv1d_time: input needs time and channel axes");
  require_rank(w, 3, "conv1d_time weights");
  require_rank(bias, 1, "conv1d_time bias");
  const auto& xs = x.shape();
  const auto t_in = xs[xs.size() - 2], c_in = xs.back();
  const auto k = w.dim(0), c_out = w.dim(2);
  if (k < 1) throw ParameterError("conv1d_time: kernel size must be at least 1");
  if (w.dim(1) != c_in) {
    throw DimensionError("conv1d_time: weight " + to_string(w.shape()) +
                         " does not match input channels of " + to_string(xs));
  }
  if (bias.dim(0) != c_out) throw DimensionError("conv1d_time: bias length differs from output channels");
  if (t_in < k) throw DimensionError("temporal length too short for kernel");

  const auto t_out = t_in - k + 1;
  const auto rows = x.numel() / (t_in * c_in);
  const auto span = k * c_in;
  // Each output step sees K consecutive time rows, which are contiguous in
  // memory, so the im2col matrix is a gather of contiguous runs.
  auto col = std::make_shared<Buffer>(rows * t_out * span);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < t_out; ++t) {
      const double* src = xd.data() + (r * t_in + t) * c_in;
      std::copy(src, src + span, col->data() + (r * t_out + t) * span);
    }
  }
  Shape out_shape = xs;
  out_shape[xs.size() - 2] = t_out;
  out_shape.back() = c_out;
  Buffer out_data(rows * t_out * c_out);
  auto out_mat = mmap(out_data, rows * t_out, c_out);
  out_mat.noalias() = cmap(*col, rows * t_out, span) * cmap(w.data(), span, c_out);
  out_mat.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), static_cast<Index>(c_out));
  Tensor out(out_shape, std::move(out_data));

  return finish(out, {&x, &w, &bias}, "conv1d_time",
                [x, w, bias, out, col, rows, t_in, t_out, c_in, c_out, span]() mutable {
                  auto g = cmap(out.grad(), rows * t_out, c_out);
                  if (w.requires_grad()) {
                    mmap(w.grad_buffer(), span, c_out).noalias() += cmap(*col, rows * t_out, span).transpose() * g;
                  }
                  if (bias.requires_grad()) {
                    Eigen::Map<Eigen::RowVectorXd>(bias.grad_buffer().data(), static_cast<Index>(c_out)) +=
                        g.colwise().sum();
                  }
                  if (x.requires_grad()) {
                    RowMat dcol = g * cmap(w.data(), span, c_out).transpose();
                    auto dx = x.grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t t = 0; t < t_out; ++t) {
                        const double* src = dcol.data() + (r * t_out + t) * span;
                        double* dst = dx.data() + (r * t_in + t) * c_in;
                        for (std::size_t i = 0; i < span; ++i) dst[i] += src[i];
                      }
                    }
                  }
                });
}

Tensor glu(const Tensor& z) {
  if (z.rank() < 1) throw DimensionError("glu: scalar input");
  const auto c2 = z.shape().back();
  if (c2 % 2 != 0) throw DimensionError("glu: channel count " + std::to_string(c2) + " is odd");
  const auto c = c2 / 2;
  const auto rows = z.numel() / c2;
  Shape out_shape = z.shape();
  out_shape.back() = c;
  Buffer out_data(rows * c);
  const auto zd = z.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      out_data[r * c + j] = zd[r * c2 + j] * sigmoid(zd[r * c2 + c + j]);
    }
  }
  Tensor out(out_shape, std::move(out_data));
  return finish(out, {&z}, "glu", [z, out, rows, c, c2]() mutable {
    const auto zd = z.data();
    const auto g = out.grad();
    auto dz = z.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const double p = zd[r * c2 + j];
        const double s = sigmoid(zd[r * c2 + c + j]);
        const double gi = g[r * c + j];
        dz[r * c2 + j] += gi * s;
        dz[r * c2 + c + j] += gi * p * s * (1.0 - s);
      }
    }
  });
}

Tensor softmax_rows(const Tensor& m, double tau) {
  if (!(tau > 0.0)) throw ParameterError("softmax_rows: temperature must be positive");
  require_rank(m, 2, "softmax_rows");
  const auto rows = m.dim(0), cols = m.dim(1);
  Buffer out_data(rows * cols);
  const auto md = m.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = md.data() + r * cols;
    double* o = out_data.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      o[j] = std::exp((in[j] - mx) / tau);
      total += o[j];
    }
    for (std::size_t j = 0; j < cols; ++j) o[j] /= total;
  }
  Tensor out({rows, cols}, std::move(out_data));
  return finish(out, {&m}, "softmax_rows", [m, out, rows, cols, tau]() mutable {
    const auto y = out.data();
    const auto g = out.grad();
    auto dm = m.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[r * cols + j] * y[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) {
        dm[r * cols + j] += y[r * cols + j] * (g[r * cols + j] - dot) / tau;
      }
    }
  });
}

Tensor regularized_pinv(const Tensor& m, double eps) {
  if (!(eps > 0.0)) throw ParameterError("regularized_pinv: eps must be positive");
  require_rank(m, 2, "regularized_pinv");
  const auto n = m.dim(0), p = m.dim(1);
  if (p < 1 || n < p) {
    throw DimensionError("regularized_pinv: need N >= N' >= 1, got " + to_string(m.shape()));
  }
  auto mm = cmap(m.data(), n, p);
  RowMat gram = mm.transpose() * mm;
  gram.diagonal().array() += eps;
  auto llt = std::make_shared<Eigen::LLT<RowMat>>(gram);
  if (llt->info() != Eigen::Success || !(llt->rcond() > 1e-14)) {
    std::ostringstream os;
    os << "regularized_pinv: normal equations are singular (reciprocal condition estimate "
       << (llt->info() == Eigen::Success ? llt->rcond() : 0.0) << ", eps " << eps
       << ", matrix " << to_string(m.shape()) << ")";
    throw NumericalError(os.str());
  }
  Buffer out_data(p * n);
  mmap(out_data, p, n) = llt->solve(mm.transpose());
  Tensor out({p, n}, std::move(out_data));
  return finish(out, {&m}, "regularized_pinv", [m, out, llt, n, p]() mutable {
    // With G = M^T M + eps I and P = G^{-1} M^T:
    //   dL/dM = S^T - M (X + X^T),  S = G^{-1} dL/dP,  X = S P^T
    auto pm = cmap(out.data(), p, n);
    RowMat s = llt->solve(cmap(out.grad(), p, n));
    RowMat x = s * pm.transpose();
    RowMat sym = x + x.transpose();
    mmap(m.grad_buffer(), n, p).noalias() += s.transpose() - cmap(m.data(), n, p) * sym;
  });
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                 bool training, bool update_stats) {
  if (x.rank() < 1) throw DimensionError("batchnorm: scalar input");
  const auto c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.size() != c ||
      state.running_var.size() != c) {
    throw DimensionError("batchnorm: channel count " + std::to_string(c) +
                         " does not match parameters");
  }
  const auto rows = c == 0 ? 0 : x.numel() / c;
  if (rows == 0) throw DimensionError("batchnorm: zero batch");

  auto xm = cmap(x.data(), rows, c);
  Buffer mean_v(c), inv_std(c);
  if (training) {
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < rows; ++r) s += xm(static_cast<Index>(r), static_cast<Index>(j));
      mean_v[j] = s / static_cast<double>(rows);
      double v = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = xm(static_cast<Index>(r), static_cast<Index>(j)) - mean_v[j];
        v += d * d;
      }
      const double biased = v / static_cast<double>(rows);
      inv_std[j] = 1.0 / std::sqrt(biased + state.eps);
      if (update_stats) {
        const double unbiased = rows > 1 ? v / static_cast<double>(rows - 1) : biased;
        state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mean_v[j];
        state.running_var[j] = (1.0 - state.momentum) * state.running_var[j] + state.momentum * unbiased;
      }
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean_v[j] = state.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(state.running_var[j] + state.eps);
    }
  }
  auto xhat = std::make_shared<Buffer>(rows * c);
  Buffer out_data(rows * c);
  const auto gd = gamma.data(), bd = beta.data(), xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xd[r * c + j] - mean_v[j]) * inv_std[j];
      (*xhat)[r * c + j] = h;
      out_data[r * c + j] = gd[j] * h + bd[j];
    }
  }
  Tensor out(x.shape(), std::move(out_data));
  return finish(out, {&x, &gamma, &beta}, "batchnorm",
                [x, gamma, beta, out, xhat, inv_std, rows, c, training]() mutable {
                  const auto g = out.grad();
                  const auto gd = gamma.data();
                  Buffer sum_g(c, 0.0), sum_gh(c, 0.0);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                      sum_g[j] += g[r * c + j];
                      sum_gh[j] += g[r * c + j] * (*xhat)[r * c + j];
                    }
                  }
                  if (gamma.requires_grad()) {
                    auto dg = gamma.grad_buffer();
                    for (std::size_t j = 0; j < c; ++j) dg[j] += sum_gh[j];
                  }
                  if (beta.requires_grad()) {
                    auto db = beta.grad_buffer();
                    for (std::size_t j = 0; j < c; ++j) db[j] += sum_g[j];
                  }
                  if (!x.requires_grad()) return;
                  auto dx = x.grad_buffer();
                  const double inv_rows = 1.0 / static_cast<double>(rows);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                      const double gi = g[r * c + j] * gd[j];
                      if (training) {
                        const double h = (*xhat)[r * c + j];
                        dx[r * c + j] += inv_std[j] * (gi - gd[j] * inv_rows * (sum_g[j] + h * sum_gh[j]));
                      } else {
                        dx[r * c + j] += gi * inv_std[j];
                      }
                    }
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out_data(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out_data.size(); ++i) out_data[i] += bd[i];
  Tensor out(a.shape(), std::move(out_data));
  return finish(out, {&a, &b}, "add", [a, b, out]() mutable {
    const auto g = out.grad();
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto d = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out_data(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out_data.size(); ++i) out_data[i] -= bd[i];
  Tensor out(a.shape(), std::move(out_data));
  return finish(out, {&a, &b}, "sub", [a, b, out]() mutable {
    const auto g = out.grad();
    if (a.requires_grad()) {
      auto d = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (b.requires_grad()) {
      auto d = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  Buffer out_data(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out_data.size(); ++i) out_data[i] = ad[i] * bd[i];
  Tensor out(a.shape(), std::move(out_data));
  return finish(out, {&a, &b}, "hadamard", [a, b, out]() mutable {
    const auto g = out.grad();
    if (a.requires_grad()) {
      auto d = a.grad_buffer();
      const auto bd = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bd[i];
    }
    if (b.requires_grad()) {
      auto d = b.grad_buffer();
      const auto ad = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * ad[i];
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require_rank(b, 1, "add_bias");
  if (x.rank() < 1 || x.shape().back() != b.dim(0)) {
    throw DimensionError("add_bias: bias " + to_string(b.shape()) + " does not match " +
                         to_string(x.shape()));
  }
  const auto c = b.dim(0);
  const auto rows = x.numel() / c;
  Buffer out_data(x.data().begin(), x.data().end());
  const auto bd = b.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out_data[r * c + j] += bd[j];
  Tensor out(x.shape(), std::move(out_data));
  return finish(out, {&x, &b}, "add_bias", [x, b, out, rows, c]() mutable {
    const auto g = out.grad();
    if (x.requires_grad()) {
      auto d = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (b.requires_grad()) {
      auto d = b.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) d[j] += g[r * c + j];
    }
  });
}

Tensor relu(const Tensor& x) {
  Buffer out_data(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out_data.size(); ++i) out_data[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  Tensor out(x.shape(), std::move(out_data));
  return finish(out, {&x}, "relu", [x, out]() mutable {
    const auto g = out.grad();
    const auto xd = x.data();
    auto d = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xd[i] > 0.0) d[i] += g[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  Buffer out_data(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out_data.size(); ++i) out_data[i] = sigmoid(xd[i]);
  Tensor out(x.shape(), std::move(out_data));
  return finish(out, {&x}, "sigmoid", [x, out]() mutable {
    const auto g = out.grad();
    const auto y = out.data();
    auto d = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Tensor scale(const Tensor& x, double factor) {
  Buffer out_data(x.data().begin(), x.data().end());
  for (double& v : out_data) v *= factor;
  Tensor out(x.shape(), std::move(out_data));
  return finish(out, {&x}, "scale", [x, out, factor]() mutable {
    const auto g = out.grad();
    auto d = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
  });
}

Tensor slice_time(const Tensor& x, std::size_t last_k) {
  if (x.rank() < 2) throw DimensionError("slice_time: input needs time and channel axes");
  const auto& xs = x.shape();
  const auto t = xs[xs.size() - 2], c = xs.back();
  if (last_k < 1 || last_k > t) {
    throw DimensionError("slice_time: cannot keep " + std::to_string(last_k) + " of " +
                         std::to_string(t) + " steps");
  }
  const auto rows = x.numel() / (t * c);
  const auto offset = (t - last_k) * c;
  Shape out_shape = xs;
  out_shape[xs.size() - 2] = last_k;
  Buffer out_data(rows * last_k * c);
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xd.data() + r * t * c + offset, last_k * c, out_data.data() + r * last_k * c);
  }
  Tensor out(out_shape, std::move(out_data));
  return finish(out, {&x}, "slice_time", [x, out, rows, t, c, last_k, offset]() mutable {
    const auto g = out.grad();
    auto d = x.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < last_k * c; ++i) d[r * t * c + offset + i] += g[r * last_k * c + i];
  });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const auto& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat_channels: scalar input");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      throw DimensionError("concat_channels: incompatible shapes " + to_string(first) + " and " +
                           to_string(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  const auto rows = parts.front().numel() / first.back();
  Shape out_shape = first;
  out_shape.back() = total;
  Buffer out_data(rows * total);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto pd = parts[i].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pd.data() + r * widths[i], widths[i], out_data.data() + r * total + offset);
    }
    offset += widths[i];
  }
  Tensor out(out_shape, std::move(out_data));
  check_finite(out, "concat_channels");
  if (should_record(parts)) {
    out.set_requires_grad(true);
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    active_tape()->record(out, [inputs, widths, out, rows, total]() mutable {
      const auto g = out.grad();
      std::size_t offset = 0;
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i].requires_grad()) {
          auto d = inputs[i].grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < widths[i]; ++j) d[r * widths[i] + j] += g[r * total + offset + j];
        }
        offset += widths[i];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (element_count(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor out(std::move(shape), Buffer(x.data().begin(), x.data().end()));
  return finish(out, {&x}, "reshape", [x, out]() mutable {
    const auto g = out.grad();
    auto d = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Tensor node_mix(const Tensor& mix, const Tensor& x) {
  require_rank(mix, 2, "node_mix");
  if (x.rank() < 3) throw DimensionError("node_mix: input needs node, time and channel axes");
  const auto& xs = x.shape();
  const auto axis = xs.size() - 3;
  const auto n = xs[axis], p = mix.dim(0);
  if (mix.dim(1) != n) {
    throw DimensionError("node-count mismatch: mixing matrix " + to_string(mix.shape()) +
                         " applied to " + to_string(xs));
  }
  const auto features = xs[axis + 1] * xs[axis + 2];
  const auto lead = x.numel() / (n * features);
  Shape out_shape = xs;
  out_shape[axis] = p;
  Buffer out_data(lead * p * features);
  const auto mm = cmap(mix.data(), p, n);
  const auto xd = x.data();
  for (std::size_t l = 0; l < lead; ++l) {
    mmap(std::span<double>(out_data).subspan(l * p * features, p * features), p, features).noalias() =
        mm * cmap(xd.subspan(l * n * features, n * features), n, features);
  }
  Tensor out(out_shape, std::move(out_data));
  return finish(out, {&mix, &x}, "node_mix", [mix, x, out, lead, n, p, features]() mutable {
    const auto g = out.grad();
    if (x.requires_grad()) {
      auto d = x.grad_buffer();
      const auto mm = cmap(mix.data(), p, n);
      for (std::size_t l = 0; l < lead; ++l) {
        mmap(d.subspan(l * n * features, n * features), n, features).noalias() +=
            mm.transpose() * cmap(g.subspan(l * p * features, p * features), p, features);
      }
    }
    if (mix.requires_grad()) {
      auto dm = mmap(mix.grad_buffer(), p, n);
      const auto xd = x.data();
      for (std::size_t l = 0; l < lead; ++l) {
        dm.noalias() += cmap(g.subspan(l * p * features, p * features), p, features) *
                        cmap(xd.subspan(l * n * features, n * features), n, features).transpose();
      }
    }
  });
}

Tensor mean_axis0(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("mean_axis0: need at least two axes");
  const auto b = x.dim(0);
  if (b == 0) throw DimensionError("mean_axis0: empty leading axis");
  const auto inner = x.numel() / b;
  Shape out_shape(x.shape().begin() + 1, x.shape().end());
  Buffer out_data(inner, 0.0);
  const auto xd = x.data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < inner; ++j) out_data[j] += xd[i * inner + j];
  for (double& v : out_data) v /= static_cast<double>(b);
  Tensor out(out_shape, std::move(out_data));
  return finish(out, {&x}, "mean_axis0", [x, out, b, inner]() mutable {
    const auto g = out.grad();
    auto d = x.grad_buffer();
    const double f = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < inner; ++j) d[i * inner + j] += g[j] * f;
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out({1}, {s});
  return finish(out, {&x}, "sum", [x, out]() mutable {
    const double g = out.grad()[0];
    for (double& d : x.grad_buffer()) d += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

}  // namespace ahstn::diff
