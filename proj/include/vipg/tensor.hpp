#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vipg {

// Error categories map to CLI exit codes.
enum class ErrorKind { Usage = 1, Data = 2, Numeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until first accumulation

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  float& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
  float at(int i, int j) const {
    return data[static_cast<size_t>(i) * cols() + j];
  }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }
  void zero_grad() { grad.clear(); }
  bool all_finite() const;
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<int> shape, bool requires_grad = false);
TensorPtr make_tensor(std::vector<int> shape, std::vector<float> data,
                      bool requires_grad = false);

// Records a forward pass; backward replays the tape in exact reverse order.
// One tape per thread, single-threaded recording.
class Tape {
 public:
  void record(TensorPtr output, std::function<void()> backward_fn) {
    outputs_.push_back(std::move(output));
    nodes_.push_back(std::move(backward_fn));
  }
  // loss must be scalar; accumulates one gradient unit into every reachable
  // leaf's grad per call. Interior (op-output) grads are reset each call, so
  // calling backward twice exactly doubles every accumulated gradient.
  void backward(const TensorPtr& loss);
  size_t size() const { return nodes_.size(); }

 private:
  std::vector<TensorPtr> outputs_;
  std::vector<std::function<void()>> nodes_;
};

// ---- recorded operations ---------------------------------------------------

TensorPtr matmul(Tape& t, const TensorPtr& a, const TensorPtr& b);
// a[m x k] * b[n x k]^T -> [m x n]
TensorPtr matmul_nt(Tape& t, const TensorPtr& a, const TensorPtr& b);
TensorPtr add(Tape& t, const TensorPtr& a, const TensorPtr& b);
// a[m x n] + v[n] broadcast over rows
TensorPtr add_rowvec(Tape& t, const TensorPtr& a, const TensorPtr& v);
TensorPtr mul(Tape& t, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape& t, const TensorPtr& a, float c);
TensorPtr relu(Tape& t, const TensorPtr& a);
TensorPtr sigmoid(Tape& t, const TensorPtr& a);
TensorPtr sum_all(Tape& t, const TensorPtr& a);
TensorPtr detach(Tape& t, const TensorPtr& a);

// mask, when given, is a row-major {0,1} buffer of the same extent as x;
// masked entries come out exactly 0. A fully masked row is an error.
TensorPtr softmax_rows(Tape& t, const TensorPtr& x,
                       const float* mask = nullptr);

TensorPtr layer_norm(Tape& t, const TensorPtr& x, const TensorPtr& gain,
                     const TensorPtr& bias, float eps = 1e-5f);

// Embedding lookup: rows of table selected by ids; backward scatter-adds.
TensorPtr rows_gather(Tape& t, const TensorPtr& table,
                      const std::vector<int>& ids);

TensorPtr concat_rows(Tape& t, const std::vector<TensorPtr>& parts);
TensorPtr slice_rows(Tape& t, const TensorPtr& a, int start, int len);
TensorPtr slice_cols(Tape& t, const TensorPtr& a, int start, int len);
TensorPtr concat_cols(Tape& t, const std::vector<TensorPtr>& parts);

// Inverted dropout; p == 0 is an exact no-op.
TensorPtr dropout(Tape& t, const TensorPtr& a, float p, std::mt19937& rng);

// Multi-head scaled dot-product attention over already-projected Q, K, V.
// mask is row-major [m x n] {0,1}, shared across heads.
TensorPtr attention(Tape& t, const TensorPtr& q, const TensorPtr& k,
                    const TensorPtr& v, const std::vector<float>& mask,
                    int heads);

// probs = gate * scatter(copy -> vocab via key_vocab_ids) + (1 - gate) * gen
// gen [N x V], copy [N x L], gate [N x 1].
TensorPtr mix_copy(Tape& t, const TensorPtr& gen, const TensorPtr& copy,
                   const TensorPtr& gate, const std::vector<int>& key_vocab_ids,
                   int vocab_size);

// -(1/|gold|) * sum log p(gold_i) with probabilities floored at 1e-9.
TensorPtr ce_loss(Tape& t, const TensorPtr& probs,
                  const std::vector<int>& gold_ids);

enum class KlMode { Symmetric, ForwardOnly, ReverseOnly };

// Symmetric: (1/2N) sum_i KL(p_i||q_i) + KL(q_i||p_i).
// ForwardOnly: (1/N) sum_i KL(p_i||q_i). ReverseOnly: (1/N) sum KL(q_i||p_i).
TensorPtr kl_loss(Tape& t, const TensorPtr& p, const TensorPtr& q,
                  KlMode mode = KlMode::Symmetric);

// ---- diagnostics -----------------------------------------------------------

// Max relative error between analytic gradients of f(x) and central finite
// differences with step h. f must be deterministic.
float grad_check(
    const std::function<TensorPtr(Tape&, const TensorPtr&)>& f,
    const TensorPtr& x, float h = 1e-3f);

void check_finite(const Tensor& t, const std::string& what);

}  // namespace vipg
