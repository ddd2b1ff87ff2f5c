#include "vipg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "vipg/kernels.hpp"

namespace vipg {

namespace {

void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) throw Error(kind, msg);
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

constexpr float kProbFloor = 1e-9f;

}  // namespace

bool Tensor::all_finite() const {
  for (float v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void check_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite())
    throw Error(ErrorKind::Numeric, "non-finite value in " + what);
}

TensorPtr make_tensor(std::vector<int> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data.assign(t->numel(), 0.0f);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr make_tensor(std::vector<int> shape, std::vector<float> data,
                      bool requires_grad) {
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  int64_t n = t->numel();
  require(static_cast<int64_t>(data.size()) == n, ErrorKind::Usage,
          "tensor data length " + std::to_string(data.size()) +
              " does not match shape " + shape_str(t->shape));
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

void Tape::backward(const TensorPtr& loss) {
  require(loss->numel() == 1, ErrorKind::Usage,
          "backward requires a scalar loss, got shape " +
              shape_str(loss->shape));
  // Interior grads must start from zero each pass so repeated backward calls
  // each contribute exactly one gradient unit to the leaves.
  for (auto& out : outputs_)
    if (!out->grad.empty()) std::fill(out->grad.begin(), out->grad.end(), 0.0f);
  loss->ensure_grad();
  loss->grad[0] += 1.0f;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

TensorPtr matmul(Tape& t, const TensorPtr& a, const TensorPtr& b) {
  require(a->shape.size() == 2 && b->shape.size() == 2 &&
              a->shape[1] == b->shape[0],
          ErrorKind::Usage,
          "matmul shape mismatch: " + shape_str(a->shape) + " x " +
              shape_str(b->shape));
  const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = make_tensor({m, n});
  kernels::gemm_acc(a->data.data(), b->data.data(), out->data.data(), m, k, n);
  t.record(out, [a, b, out, m, k, n] {
    if (out->grad.empty()) return;
    a->ensure_grad();
    b->ensure_grad();
    // dA = dC * B^T, dB = A^T * dC
    kernels::gemm_nt_acc(out->grad.data(), b->data.data(), a->grad.data(), m,
                         n, k);
    kernels::gemm_tn_acc(a->data.data(), out->grad.data(), b->grad.data(), m,
                         k, n);
  });
  return out;
}

TensorPtr matmul_nt(Tape& t, const TensorPtr& a, const TensorPtr& b) {
  require(a->shape.size() == 2 && b->shape.size() == 2 &&
              a->shape[1] == b->shape[1],
          ErrorKind::Usage,
          "matmul_nt shape mismatch: " + shape_str(a->shape) + " x " +
              shape_str(b->shape) + "^T");
  const int m = a->shape[0], k = a->shape[1], n = b->shape[0];
  auto out = make_tensor({m, n});
  kernels::gemm_nt_acc(a->data.data(), b->data.data(), out->data.data(), m, k,
                       n);
  t.record(out, [a, b, out, m, k, n] {
    if (out->grad.empty()) return;
    a->ensure_grad();
    b->ensure_grad();
    // dA = dC * B, dB = dC^T * A
    kernels::gemm_acc(out->grad.data(), b->data.data(), a->grad.data(), m, n,
                      k);
    kernels::gemm_tn_acc(out->grad.data(), a->data.data(), b->grad.data(), m,
                         n, k);
  });
  return out;
}

TensorPtr add(Tape& t, const TensorPtr& a, const TensorPtr& b) {
  require(a->shape == b->shape, ErrorKind::Usage,
          "add shape mismatch: " + shape_str(a->shape) + " vs " +
              shape_str(b->shape));
  auto out = make_tensor(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] + b->data[i];
  t.record(out, [a, b, out] {
    if (out->grad.empty()) return;
    a->ensure_grad();
    b->ensure_grad();
    for (size_t i = 0; i < out->grad.size(); ++i) {
      a->grad[i] += out->grad[i];
      b->grad[i] += out->grad[i];
    }
  });
  return out;
}

TensorPtr add_rowvec(Tape& t, const TensorPtr& a, const TensorPtr& v) {
  const int m = a->rows(), n = a->cols();
  require(static_cast<int>(v->numel()) == n, ErrorKind::Usage,
          "add_rowvec: vector length " + std::to_string(v->numel()) +
              " vs row width " + std::to_string(n));
  auto out = make_tensor(a->shape);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out->data[static_cast<size_t>(i) * n + j] =
          a->data[static_cast<size_t>(i) * n + j] + v->data[j];
  t.record(out, [a, v, out, m, n] {
    if (out->grad.empty()) return;
    a->ensure_grad();
    v->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        const float g = out->grad[static_cast<size_t>(i) * n + j];
        a->grad[static_cast<size_t>(i) * n + j] += g;
        v->grad[j] += g;
      }
  });
  return out;
}

TensorPtr mul(Tape& t, const TensorPtr& a, const TensorPtr& b) {
  require(a->shape == b->shape, ErrorKind::Usage,
          "mul shape mismatch: " + shape_str(a->shape) + " vs " +
              shape_str(b->shape));
  auto out = make_tensor(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] * b->data[i];
  t.record(out, [a, b, out] {
    if (out->grad.empty()) return;
    a->ensure_grad();
    b->ensure_grad();
    for (size_t i = 0; i < out->grad.size(); ++i) {
      a->grad[i] += out->grad[i] * b->data[i];
      b->grad[i] += out->grad[i] * a->data[i];
    }
  });
  return out;
}

TensorPtr scale(Tape& t, const TensorPtr& a, float c) {
  auto out = make_tensor(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * c;
  t.record(out, [a, out, c] {
    if (out->grad.empty()) return;
    a->ensure_grad();
    for (size_t i = 0; i < out->grad.size(); ++i)
      a->grad[i] += out->grad[i] * c;
  });
  return out;
}

TensorPtr relu(Tape& t, const TensorPtr& a) {
  auto out = make_tensor(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] > 0.0f ? a->data[i] : 0.0f;
  t.record(out, [a, out] {
    if (out->grad.empty()) return;
    a->ensure_grad();
    for (size_t i = 0; i < out->grad.size(); ++i)
      if (a->data[i] > 0.0f) a->grad[i] += out->grad[i];
  });
  return out;
}

TensorPtr sigmoid(Tape& t, const TensorPtr& a) {
  auto out = make_tensor(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = 1.0f / (1.0f + std::exp(-a->data[i]));
  t.record(out, [a, out] {
    if (out->grad.empty()) return;
    a->ensure_grad();
    for (size_t i = 0; i < out->grad.size(); ++i) {
      const float y = out->data[i];
      a->grad[i] += out->grad[i] * y * (1.0f - y);
    }
  });
  return out;
}

TensorPtr sum_all(Tape& t, const TensorPtr& a) {
  auto out = make_tensor({1});
  double acc = 0.0;
  for (float v : a->data) acc += v;
  out->data[0] = static_cast<float>(acc);
  t.record(out, [a, out] {
    if (out->grad.empty()) return;
    a->ensure_grad();
    for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += out->grad[0];
  });
  return out;
}

TensorPtr detach(Tape&, const TensorPtr& a) {
  auto out = make_tensor(a->shape);
  out->data = a->data;
  return out;
}

TensorPtr softmax_rows(Tape& t, const TensorPtr& x, const float* mask) {
  const int m = x->rows(), n = x->cols();
  auto out = make_tensor(x->shape);
  for (int i = 0; i < m; ++i) {
    const float* xi = x->data.data() + static_cast<size_t>(i) * n;
    const float* mi = mask ? mask + static_cast<size_t>(i) * n : nullptr;
    float mx = -std::numeric_limits<float>::infinity();
    for (int j = 0; j < n; ++j)
      if (!mi || mi[j] != 0.0f) mx = std::max(mx, xi[j]);
    if (!std::isfinite(mx))
      throw Error(ErrorKind::Numeric,
                  "softmax: fully masked row " + std::to_string(i));
    double denom = 0.0;
    float* oi = out->data.data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      oi[j] = (!mi || mi[j] != 0.0f) ? std::exp(xi[j] - mx) : 0.0f;
      denom += oi[j];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int j = 0; j < n; ++j) oi[j] *= inv;
  }
  t.record(out, [x, out, m, n] {
    if (out->grad.empty()) return;
    x->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const float* yi = out->data.data() + static_cast<size_t>(i) * n;
      const float* gi = out->grad.data() + static_cast<size_t>(i) * n;
      float* xi = x->grad.data() + static_cast<size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += static_cast<double>(gi[j]) * yi[j];
      for (int j = 0; j < n; ++j)
        xi[j] += yi[j] * (gi[j] - static_cast<float>(dot));
    }
  });
  return out;
}

TensorPtr layer_norm(Tape& t, const TensorPtr& x, const TensorPtr& gain,
                     const TensorPtr& bias, float eps) {
  const int m = x->rows(), d = x->cols();
  require(static_cast<int>(gain->numel()) == d &&
              static_cast<int>(bias->numel()) == d,
          ErrorKind::Usage, "layer_norm: gain/bias width mismatch");
  require(eps > 0.0f, ErrorKind::Usage, "layer_norm: eps must be positive");
  auto out = make_tensor(x->shape);
  auto xhat = std::make_shared<std::vector<float>>(x->data.size());
  auto inv_std = std::make_shared<std::vector<float>>(m);
  for (int i = 0; i < m; ++i) {
    const float* xi = x->data.data() + static_cast<size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= d;
    const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*inv_std)[i] = istd;
    for (int j = 0; j < d; ++j) {
      const float xh = (xi[j] - static_cast<float>(mu)) * istd;
      (*xhat)[static_cast<size_t>(i) * d + j] = xh;
      out->data[static_cast<size_t>(i) * d + j] =
          gain->data[j] * xh + bias->data[j];
    }
  }
  t.record(out, [x, gain, bias, out, xhat, inv_std, m, d] {
    if (out->grad.empty()) return;
    x->ensure_grad();
    gain->ensure_grad();
    bias->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const float* gi = out->grad.data() + static_cast<size_t>(i) * d;
      const float* xh = xhat->data() + static_cast<size_t>(i) * d;
      float* dx = x->grad.data() + static_cast<size_t>(i) * d;
      double sum_dxh = 0.0, sum_dxh_xh = 0.0;
      for (int j = 0; j < d; ++j) {
        const float dxh = gi[j] * gain->data[j];
        sum_dxh += dxh;
        sum_dxh_xh += static_cast<double>(dxh) * xh[j];
        gain->grad[j] += gi[j] * xh[j];
        bias->grad[j] += gi[j];
      }
      const float istd = (*inv_std)[i];
      for (int j = 0; j < d; ++j) {
        const float dxh = gi[j] * gain->data[j];
        dx[j] += istd * (dxh - static_cast<float>(sum_dxh) / d -
                         xh[j] * static_cast<float>(sum_dxh_xh) / d);
      }
    }
  });
  return out;
}

TensorPtr rows_gather(Tape& t, const TensorPtr& table,
                      const std::vector<int>& ids) {
  const int v = table->rows(), d = table->cols();
  for (int id : ids)
    require(id >= 0 && id < v, ErrorKind::Data,
            "rows_gather: id " + std::to_string(id) + " out of range [0, " +
                std::to_string(v) + ")");
  auto out = make_tensor({static_cast<int>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i)
    std::memcpy(out->data.data() + i * d,
                table->data.data() + static_cast<size_t>(ids[i]) * d,
                sizeof(float) * d);
  t.record(out, [table, out, ids, d] {
    if (out->grad.empty()) return;
    table->ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i) {
      float* dst = table->grad.data() + static_cast<size_t>(ids[i]) * d;
      const float* src = out->grad.data() + i * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return out;
}

TensorPtr concat_rows(Tape& t, const std::vector<TensorPtr>& parts) {
  require(!parts.empty(), ErrorKind::Usage, "concat_rows: no parts");
  const int d = parts[0]->cols();
  int m = 0;
  for (const auto& p : parts) {
    require(p->cols() == d, ErrorKind::Usage,
            "concat_rows: column width mismatch");
    m += p->rows();
  }
  auto out = make_tensor({m, d});
  size_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out->data.data() + off, p->data.data(),
                sizeof(float) * p->data.size());
    off += p->data.size();
  }
  t.record(out, [parts, out] {
    if (out->grad.empty()) return;
    size_t off = 0;
    for (const auto& p : parts) {
      p->ensure_grad();
      for (size_t i = 0; i < p->grad.size(); ++i)
        p->grad[i] += out->grad[off + i];
      off += p->grad.size();
    }
  });
  return out;
}

TensorPtr slice_rows(Tape& t, const TensorPtr& a, int start, int len) {
  const int m = a->rows(), d = a->cols();
  require(start >= 0 && len >= 0 && start + len <= m, ErrorKind::Usage,
          "slice_rows out of range");
  auto out = make_tensor({len, d});
  std::memcpy(out->data.data(),
              a->data.data() + static_cast<size_t>(start) * d,
              sizeof(float) * out->data.size());
  t.record(out, [a, out, start, d] {
    if (out->grad.empty()) return;
    a->ensure_grad();
    float* dst = a->grad.data() + static_cast<size_t>(start) * d;
    for (size_t i = 0; i < out->grad.size(); ++i) dst[i] += out->grad[i];
  });
  return out;
}

TensorPtr slice_cols(Tape& t, const TensorPtr& a, int start, int len) {
  const int m = a->rows(), d = a->cols();
  require(start >= 0 && len >= 0 && start + len <= d, ErrorKind::Usage,
          "slice_cols out of range");
  auto out = make_tensor({m, len});
  for (int i = 0; i < m; ++i)
    std::memcpy(out->data.data() + static_cast<size_t>(i) * len,
                a->data.data() + static_cast<size_t>(i) * d + start,
                sizeof(float) * len);
  t.record(out, [a, out, start, len, m, d] {
    if (out->grad.empty()) return;
    a->ensure_grad();
    for (int i = 0; i < m; ++i) {
      float* dst = a->grad.data() + static_cast<size_t>(i) * d + start;
      const float* src = out->grad.data() + static_cast<size_t>(i) * len;
      for (int j = 0; j < len; ++j) dst[j] += src[j];
    }
  });
  return out;
}

TensorPtr concat_cols(Tape& t, const std::vector<TensorPtr>& parts) {
  require(!parts.empty(), ErrorKind::Usage, "concat_cols: no parts");
  const int m = parts[0]->rows();
  int d = 0;
  for (const auto& p : parts) {
    require(p->rows() == m, ErrorKind::Usage, "concat_cols: row count mismatch");
    d += p->cols();
  }
  auto out = make_tensor({m, d});
  int off = 0;
  for (const auto& p : parts) {
    const int w = p->cols();
    for (int i = 0; i < m; ++i)
      std::memcpy(out->data.data() + static_cast<size_t>(i) * d + off,
                  p->data.data() + static_cast<size_t>(i) * w,
                  sizeof(float) * w);
    off += w;
  }
  t.record(out, [parts, out, m, d] {
    if (out->grad.empty()) return;
    int off = 0;
    for (const auto& p : parts) {
      p->ensure_grad();
      const int w = p->cols();
      for (int i = 0; i < m; ++i) {
        float* dst = p->grad.data() + static_cast<size_t>(i) * w;
        const float* src = out->grad.data() + static_cast<size_t>(i) * d + off;
        for (int j = 0; j < w; ++j) dst[j] += src[j];
      }
      off += w;
    }
  });
  return out;
}

TensorPtr dropout(Tape& t, const TensorPtr& a, float p, std::mt19937& rng) {
  require(p >= 0.0f && p < 1.0f, ErrorKind::Usage,
          "dropout probability must be in [0, 1)");
  if (p == 0.0f) return a;
  auto keep = std::make_shared<std::vector<float>>(a->data.size());
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  const float scale_up = 1.0f / (1.0f - p);
  for (auto& k : *keep) k = u(rng) < p ? 0.0f : scale_up;
  auto out = make_tensor(a->shape);
  for (size_t i = 0; i < out->data.size(); ++i)
    out->data[i] = a->data[i] * (*keep)[i];
  t.record(out, [a, out, keep] {
    if (out->grad.empty()) return;
    a->ensure_grad();
    for (size_t i = 0; i < out->grad.size(); ++i)
      a->grad[i] += out->grad[i] * (*keep)[i];
  });
  return out;
}

TensorPtr attention(Tape& t, const TensorPtr& q, const TensorPtr& k,
                    const TensorPtr& v, const std::vector<float>& mask,
                    int heads) {
  const int m = q->rows(), n = k->rows(), d = q->cols();
  require(heads >= 1 && d % heads == 0, ErrorKind::Usage,
          "attention: width " + std::to_string(d) +
              " not divisible by heads " + std::to_string(heads));
  require(k->cols() == d && v->cols() == d && v->rows() == n, ErrorKind::Usage,
          "attention: K/V shape mismatch");
  require(static_cast<int>(mask.size()) == m * n, ErrorKind::Usage,
          "attention: mask extent mismatch");
  const int dh = d / heads;
  const float sc = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<TensorPtr> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    auto qh = slice_cols(t, q, h * dh, dh);
    auto kh = slice_cols(t, k, h * dh, dh);
    auto vh = slice_cols(t, v, h * dh, dh);
    auto scores = scale(t, matmul_nt(t, qh, kh), sc);
    auto attn = softmax_rows(t, scores, mask.data());
    outs.push_back(matmul(t, attn, vh));
  }
  return heads == 1 ? outs[0] : concat_cols(t, outs);
}

TensorPtr mix_copy(Tape& t, const TensorPtr& gen, const TensorPtr& copy,
                   const TensorPtr& gate, const std::vector<int>& key_vocab_ids,
                   int vocab_size) {
  const int n = gen->rows(), v = gen->cols(), l = copy->cols();
  require(v == vocab_size, ErrorKind::Usage, "mix_copy: vocab width mismatch");
  require(copy->rows() == n && static_cast<int>(gate->numel()) == n,
          ErrorKind::Usage, "mix_copy: row count mismatch");
  require(static_cast<int>(key_vocab_ids.size()) == l, ErrorKind::Usage,
          "mix_copy: key id count mismatch");
  for (int id : key_vocab_ids)
    require(id >= 0 && id < v, ErrorKind::Data,
            "mix_copy: key vocab id out of range");
  auto out = make_tensor({n, v});
  for (int i = 0; i < n; ++i) {
    const float g = gate->data[i];
    float* oi = out->data.data() + static_cast<size_t>(i) * v;
    const float* gi = gen->data.data() + static_cast<size_t>(i) * v;
    for (int j = 0; j < v; ++j) oi[j] = (1.0f - g) * gi[j];
    const float* ci = copy->data.data() + static_cast<size_t>(i) * l;
    for (int j = 0; j < l; ++j) oi[key_vocab_ids[j]] += g * ci[j];
  }
  t.record(out, [gen, copy, gate, out, key_vocab_ids, n, v, l] {
    if (out->grad.empty()) return;
    gen->ensure_grad();
    copy->ensure_grad();
    gate->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const float g = gate->data[i];
      const float* go = out->grad.data() + static_cast<size_t>(i) * v;
      float* dgen = gen->grad.data() + static_cast<size_t>(i) * v;
      double dgate = 0.0;
      const float* genv = gen->data.data() + static_cast<size_t>(i) * v;
      for (int j = 0; j < v; ++j) {
        dgen[j] += (1.0f - g) * go[j];
        dgate -= static_cast<double>(go[j]) * genv[j];
      }
      float* dcopy = copy->grad.data() + static_cast<size_t>(i) * l;
      const float* cv = copy->data.data() + static_cast<size_t>(i) * l;
      for (int j = 0; j < l; ++j) {
        const float gk = go[key_vocab_ids[j]];
        dcopy[j] += g * gk;
        dgate += static_cast<double>(gk) * cv[j];
      }
      gate->grad[i] += static_cast<float>(dgate);
    }
  });
  return out;
}

TensorPtr ce_loss(Tape& t, const TensorPtr& probs,
                  const std::vector<int>& gold_ids) {
  const int n = probs->rows(), v = probs->cols();
  require(static_cast<int>(gold_ids.size()) == n, ErrorKind::Usage,
          "ce_loss: gold length mismatch");
  int active = 0;
  for (int id : gold_ids) {
    if (id < 0) continue;  // padded position
    require(id < v, ErrorKind::Data, "ce_loss: gold id out of range");
    ++active;
  }
  require(active > 0, ErrorKind::Usage, "ce_loss: no active positions");
  auto out = make_tensor({1});
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    if (gold_ids[i] < 0) continue;
    acc -= std::log(std::max(probs->at(i, gold_ids[i]), kProbFloor));
  }
  out->data[0] = static_cast<float>(acc / active);
  t.record(out, [probs, out, gold_ids, n, active] {
    if (out->grad.empty()) return;
    probs->ensure_grad();
    const float g = out->grad[0] / active;
    for (int i = 0; i < n; ++i) {
      if (gold_ids[i] < 0) continue;
      const float p = std::max(probs->at(i, gold_ids[i]), kProbFloor);
      probs->grad[static_cast<size_t>(i) * probs->cols() + gold_ids[i]] -=
          g / p;
    }
  });
  return out;
}

TensorPtr kl_loss(Tape& t, const TensorPtr& p, const TensorPtr& q,
                  KlMode mode) {
  require(p->shape == q->shape, ErrorKind::Usage,
          "kl_loss: shape mismatch " + shape_str(p->shape) + " vs " +
              shape_str(q->shape));
  const int n = p->rows(), v = p->cols();
  auto out = make_tensor({1});
  const bool fwd = mode != KlMode::ReverseOnly;
  const bool rev = mode != KlMode::ForwardOnly;
  const double norm =
      mode == KlMode::Symmetric ? 1.0 / (2.0 * n) : 1.0 / n;
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < v; ++j) {
      const double pv = std::max(p->at(i, j), kProbFloor);
      const double qv = std::max(q->at(i, j), kProbFloor);
      if (fwd) acc += pv * (std::log(pv) - std::log(qv));
      if (rev) acc += qv * (std::log(qv) - std::log(pv));
    }
  out->data[0] = static_cast<float>(acc * norm);
  t.record(out, [p, q, out, n, v, fwd, rev, norm] {
    if (out->grad.empty()) return;
    p->ensure_grad();
    q->ensure_grad();
    const float g = out->grad[0] * static_cast<float>(norm);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < v; ++j) {
        const size_t idx = static_cast<size_t>(i) * v + j;
        const double pv = std::max(p->data[idx], kProbFloor);
        const double qv = std::max(q->data[idx], kProbFloor);
        double dp = 0.0, dq = 0.0;
        if (fwd) {
          dp += std::log(pv) - std::log(qv) + 1.0;
          dq -= pv / qv;
        }
        if (rev) {
          dq += std::log(qv) - std::log(pv) + 1.0;
          dp -= qv / pv;
        }
        p->grad[idx] += g * static_cast<float>(dp);
        q->grad[idx] += g * static_cast<float>(dq);
      }
  });
  return out;
}

float grad_check(const std::function<TensorPtr(Tape&, const TensorPtr&)>& f,
                 const TensorPtr& x, float h) {
  auto xc = make_tensor(x->shape, x->data, true);
  Tape tape;
  auto loss = f(tape, xc);
  if (loss->numel() != 1)
    throw Error(ErrorKind::Usage, "grad_check: f must return a scalar");
  tape.backward(loss);
  xc->ensure_grad();

  float worst = 0.0f;
  for (size_t i = 0; i < x->data.size(); ++i) {
    auto eval = [&](float delta) {
      auto xp = make_tensor(x->shape, x->data);
      xp->data[i] += delta;
      Tape tp;
      return f(tp, xp)->data[0];
    };
    const float fd = (eval(h) - eval(-h)) / (2.0f * h);
    const float an = xc->grad[i];
    const float denom = std::max({std::fabs(fd), std::fabs(an), 0.5f});
    worst = std::max(worst, std::fabs(fd - an) / denom);
  }
  return worst;
}

}  // namespace vipg
