#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crossmap/rng.hpp"

namespace crossmap {

// Additive mask value standing in for -inf in attention masks. Large enough
// to saturate to zero probability at 64-bit precision while keeping all
// arithmetic finite. Entries at or below kMaskThreshold are treated as
// fully masked (exact zero output, no gradient).
constexpr double kMaskOff = -1e9;
constexpr double kMaskThreshold = -1e8;

namespace detail {

struct TensorNode {
  std::vector<int> shape;     // row-major
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;   // empty until first accumulation

  size_t size() const { return data.size(); }
  void ensure_grad();
  void accumulate(size_t i, double v) { grad[i] += v; }
};

}  // namespace detail

// Dense n-dimensional double tensor. Cheap to copy (shared payload). Values
// are immutable once produced by an operation; parameter payloads are only
// mutated by the optimizer between forward passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  // 1 x n row vector.
  static Tensor row(std::vector<double> v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  size_t size() const { return node_->data.size(); }
  int rows() const;  // 2-D helpers
  int cols() const;

  const std::vector<double>& data() const { return node_->data; }
  double operator()(int i, int j) const {
    return node_->data[static_cast<size_t>(i) * static_cast<size_t>(cols()) +
                       static_cast<size_t>(j)];
  }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return defined() && !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Detached copy that never participates in gradients.
  Tensor detach() const;

  // Used by operation implementations and the optimizer.
  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  std::vector<double>& mutable_data() { return node_->data; }

  std::string shape_str() const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend class GradTape;
};

// Reverse-mode tape. Constructing a tape makes it the active tape for the
// current thread (RAII; tapes nest). Operations record themselves when a tape
// is active and any input requires grad. backward() replays the recorded
// operations once, in reverse order, accumulating into .grad buffers.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  void record(std::vector<std::shared_ptr<detail::TensorNode>> inputs,
              std::shared_ptr<detail::TensorNode> output,
              std::function<void()> backward);

  // Seeds d(root)/d(root) = 1 (root must be scalar) and runs every recorded
  // backward rule exactly once, newest first.
  void backward(const Tensor& root);

  size_t size() const { return ops_.size(); }

 private:
  struct Op {
    std::vector<std::shared_ptr<detail::TensorNode>> inputs;
    std::shared_ptr<detail::TensorNode> output;
    std::function<void()> backward;
  };
  std::vector<Op> ops_;
  bool consumed_ = false;
  GradTape* prev_ = nullptr;
};

// --- operations -------------------------------------------------------------
// All 2-D unless stated. Every operation validates shapes, checks outputs for
// non-finite values in debug builds, and records a backward rule when a tape
// is active.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Same shape, or b is a 1 x n row broadcast over a's rows.
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
// Concatenation along the last axis / along rows.
Tensor concat_cols(const std::vector<Tensor>& xs);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor slice_cols(const Tensor& a, int start, int len);
Tensor slice_rows(const Tensor& a, int start, int len);
// Row gather with scatter-add backward; also the embedding lookup.
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  return gather_rows(table, ids);
}

// Row-wise softmax over scores + mask. Mask entries are 0 or kMaskOff and the
// mask is either the same shape as scores or a single broadcast row. Masked
// entries come out exactly zero; fully masked rows come out all-zero (counted,
// not an error).
Tensor masked_softmax(const Tensor& scores, const Tensor& mask);

// Per-row normalization over the last axis followed by gain/bias. gain and
// bias are 1 x d (or length-d) rows.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);

// Inverted dropout: zero with probability rate, scale survivors by
// 1/(1-rate); exact identity when training is false.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

// --- global numeric diagnostics --------------------------------------------

struct SoftmaxStats {
  // Number of fully masked rows observed since reset.
  static uint64_t all_masked_rows();
  // Largest |row_sum - 1| over unmasked rows since reset.
  static double max_row_sum_error();
  static void reset();
};

// --- optimizer ---------------------------------------------------------------

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.99;
  double beta2 = 0.9;
  double eps = 1e-8;
};

struct AdamState {
  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments> moments;
  int64_t step = 0;
  int64_t skipped_updates = 0;  // tensors skipped due to non-finite gradients
};

// Named parameter set. Ordered by name so that iteration, checkpointing and
// optimizer updates are deterministic.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  const std::map<std::string, Tensor>& items() const { return params_; }
  size_t count() const { return params_.size(); }

  void zero_grads();
  // FNV-1a over all payload bytes, name order. Cheap identity check in tests.
  uint64_t fingerprint() const;
  void fill(double v);  // test helper: overwrite every payload value

 private:
  std::map<std::string, Tensor> params_;
};

// One bias-corrected Adam update over every parameter with a populated
// gradient. A tensor whose gradient contains non-finite values is skipped and
// counted in state.skipped_updates.
void adam_step(ParamStore& params, AdamState& state, const AdamConfig& config);

}  // namespace crossmap
