#include "crossmap/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace crossmap {

namespace {

size_t shape_product(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor shape dimensions must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string shape_to_str(const std::vector<int>& shape) {
  std::ostringstream ss;
  ss << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) ss << "x";
    ss << shape[i];
  }
  ss << "]";
  return ss.str();
}

void check_all_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::invalid_argument(std::string(what) + ": non-finite value");
    }
  }
}

#ifndef NDEBUG
#define CROSSMAP_DEBUG_FINITE(vec, op) check_all_finite((vec), (op))
#else
#define CROSSMAP_DEBUG_FINITE(vec, op) (void)0
#endif

thread_local GradTape* g_active_tape = nullptr;

// Raw row-major kernels. C is accumulated into and must be pre-zeroed.
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ar = a + static_cast<size_t>(i) * static_cast<size_t>(k);
    double* cr = c + static_cast<size_t>(i) * static_cast<size_t>(n);
    for (int p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = b + static_cast<size_t>(p) * static_cast<size_t>(n);
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// C[m x q] += A[m x p] * B^T with B stored [q x p].
void gemm_nt(const double* a, const double* b, double* c, int m, int p, int q) {
  for (int i = 0; i < m; ++i) {
    const double* ar = a + static_cast<size_t>(i) * static_cast<size_t>(p);
    double* cr = c + static_cast<size_t>(i) * static_cast<size_t>(q);
    for (int j = 0; j < q; ++j) {
      const double* br = b + static_cast<size_t>(j) * static_cast<size_t>(p);
      double acc = 0.0;
      for (int t = 0; t < p; ++t) acc += ar[t] * br[t];
      cr[j] += acc;
    }
  }
}

// C[p x n] += A^T * B with A stored [m x p], B stored [m x n].
void gemm_tn(const double* a, const double* b, double* c, int m, int p, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ar = a + static_cast<size_t>(i) * static_cast<size_t>(p);
    const double* br = b + static_cast<size_t>(i) * static_cast<size_t>(n);
    for (int t = 0; t < p; ++t) {
      const double av = ar[t];
      double* cr = c + static_cast<size_t>(t) * static_cast<size_t>(n);
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

bool grad_wanted(const Tensor& t) { return g_active_tape != nullptr && t.requires_grad(); }

std::atomic<uint64_t> g_all_masked_rows{0};
std::atomic<uint64_t> g_max_row_sum_error_bits{0};

void note_row_sum_error(double err) {
  uint64_t bits = std::bit_cast<uint64_t>(err);
  uint64_t cur = g_max_row_sum_error_bits.load(std::memory_order_relaxed);
  while (std::bit_cast<double>(cur) < err &&
         !g_max_row_sum_error_bits.compare_exchange_weak(cur, bits, std::memory_order_relaxed)) {
  }
}

}  // namespace

uint64_t SoftmaxStats::all_masked_rows() { return g_all_masked_rows.load(); }
double SoftmaxStats::max_row_sum_error() {
  return std::bit_cast<double>(g_max_row_sum_error_bits.load());
}
void SoftmaxStats::reset() {
  g_all_masked_rows.store(0);
  g_max_row_sum_error_bits.store(0);
}

// --- TensorNode / Tensor -----------------------------------------------------

namespace detail {

void TensorNode::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

}  // namespace detail

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = std::make_shared<detail::TensorNode>();
  size_t count = shape_product(shape);
  n->shape = std::move(shape);
  n->data.assign(count, 0.0);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  check_all_finite(t.node_->data, "Tensor::full");
  return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  size_t count = shape_product(shape);
  if (count != data.size()) {
    throw std::invalid_argument("Tensor::from_data: shape " + shape_to_str(shape) +
                                " does not match data length " + std::to_string(data.size()));
  }
  check_all_finite(data, "Tensor::from_data");
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data({1}, {v}, requires_grad);
}

Tensor Tensor::row(std::vector<double> v, bool requires_grad) {
  int n = static_cast<int>(v.size());
  return from_data({1, n}, std::move(v), requires_grad);
}

int Tensor::rows() const {
  if (rank() == 1) return 1;
  if (rank() != 2) throw std::logic_error("Tensor::rows: tensor is not 2-D");
  return node_->shape[0];
}

int Tensor::cols() const {
  if (rank() == 1) return node_->shape[0];
  if (rank() != 2) throw std::logic_error("Tensor::cols: tensor is not 2-D");
  return node_->shape[1];
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("Tensor::item: size is not 1");
  return node_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("Tensor::grad: no gradient populated");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = node_->shape;
  n->data = node_->data;
  n->requires_grad = false;
  return Tensor(std::move(n));
}

std::string Tensor::shape_str() const { return shape_to_str(node_->shape); }

// --- GradTape ---------------------------------------------------------------

GradTape::GradTape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

GradTape::~GradTape() { g_active_tape = prev_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(std::vector<std::shared_ptr<detail::TensorNode>> inputs,
                      std::shared_ptr<detail::TensorNode> output,
                      std::function<void()> backward) {
  ops_.push_back(Op{std::move(inputs), std::move(output), std::move(backward)});
}

void GradTape::backward(const Tensor& root) {
  if (consumed_) throw std::logic_error("GradTape::backward: tape already consumed");
  if (root.size() != 1) throw std::invalid_argument("GradTape::backward: root must be scalar");
  consumed_ = true;
  root.node()->ensure_grad();
  root.node()->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    it->backward();
  }
}

namespace {

// Shared recording helper: outputs require grad iff a tape is active and any
// input requires grad; the backward closure is only recorded in that case.
struct Recorder {
  std::vector<std::shared_ptr<detail::TensorNode>> inputs;
  bool active = false;

  explicit Recorder(std::initializer_list<const Tensor*> ins) {
    for (const Tensor* t : ins) {
      if (grad_wanted(*t)) active = true;
      inputs.push_back(t->node());
    }
  }
  explicit Recorder(const std::vector<Tensor>& ins) {
    for (const Tensor& t : ins) {
      if (grad_wanted(t)) active = true;
      inputs.push_back(t.node());
    }
  }

  void commit(Tensor& out, std::function<void()> backward) {
    if (!active) return;
    out.node()->requires_grad = true;
    GradTape::active()->record(std::move(inputs), out.node(), std::move(backward));
  }
};

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + t.shape_str());
  }
}

}  // namespace

// --- operations ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  gemm_nn(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
  CROSSMAP_DEBUG_FINITE(out.data(), "matmul");

  Recorder rec({&a, &b});
  auto an = a.node(), bn = b.node(), on = out.node();
  rec.commit(out, [an, bn, on, m, k, n]() {
    on->ensure_grad();
    if (an->requires_grad) {
      an->ensure_grad();
      gemm_nt(on->grad.data(), bn->data.data(), an->grad.data(), m, n, k);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      gemm_tn(an->data.data(), on->grad.data(), bn->grad.data(), m, k, n);
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({n, m});
  auto& od = out.mutable_data();
  const auto& ad = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      od[static_cast<size_t>(j) * m + i] = ad[static_cast<size_t>(i) * n + j];

  Recorder rec({&a});
  auto an = a.node(), on = out.node();
  rec.commit(out, [an, on, m, n]() {
    on->ensure_grad();
    an->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        an->grad[static_cast<size_t>(i) * n + j] += on->grad[static_cast<size_t>(j) * m + i];
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  const bool row_broadcast = !same && a.rank() == 2 &&
                             ((b.rank() == 2 && b.rows() == 1) || b.rank() == 1) &&
                             b.cols() == a.cols();
  if (!same && !row_broadcast) {
    throw std::invalid_argument("add: shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
  Tensor out = Tensor::zeros(a.shape());
  auto& od = out.mutable_data();
  const auto& ad = a.data();
  const auto& bd = b.data();
  if (same) {
    for (size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] + bd[i];
  } else {
    const size_t n = static_cast<size_t>(a.cols());
    for (size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] + bd[i % n];
  }
  CROSSMAP_DEBUG_FINITE(out.data(), "add");

  Recorder rec({&a, &b});
  auto an = a.node(), bn = b.node(), on = out.node();
  rec.commit(out, [an, bn, on, same]() {
    on->ensure_grad();
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      if (same) {
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
      } else {
        const size_t n = bn->grad.size();
        for (size_t i = 0; i < on->grad.size(); ++i) bn->grad[i % n] += on->grad[i];
      }
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  if (!std::isfinite(c)) throw std::invalid_argument("scale: factor must be finite");
  Tensor out = Tensor::zeros(a.shape());
  auto& od = out.mutable_data();
  const auto& ad = a.data();
  for (size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] * c;
  CROSSMAP_DEBUG_FINITE(out.data(), "scale");

  Recorder rec({&a});
  auto an = a.node(), on = out.node();
  rec.commit(out, [an, on, c]() {
    on->ensure_grad();
    an->ensure_grad();
    for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += c * on->grad[i];
  });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  auto& od = out.mutable_data();
  const auto& ad = a.data();
  for (size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] > 0.0 ? ad[i] : 0.0;

  Recorder rec({&a});
  auto an = a.node(), on = out.node();
  rec.commit(out, [an, on]() {
    on->ensure_grad();
    an->ensure_grad();
    for (size_t i = 0; i < on->grad.size(); ++i)
      if (an->data[i] > 0.0) an->grad[i] += on->grad[i];
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int m = xs[0].rows();
  int total = 0;
  for (const Tensor& x : xs) {
    require_2d(x, "concat_cols");
    if (x.rows() != m)
      throw std::invalid_argument("concat_cols: row mismatch: " + xs[0].shape_str() + " vs " +
                                  x.shape_str());
    total += x.cols();
  }
  Tensor out = Tensor::zeros({m, total});
  auto& od = out.mutable_data();
  int off = 0;
  for (const Tensor& x : xs) {
    const int w = x.cols();
    const auto& xd = x.data();
    for (int i = 0; i < m; ++i)
      std::memcpy(&od[static_cast<size_t>(i) * total + off],
                  &xd[static_cast<size_t>(i) * w], sizeof(double) * static_cast<size_t>(w));
    off += w;
  }

  Recorder rec(xs);
  auto on = out.node();
  std::vector<std::shared_ptr<detail::TensorNode>> nodes;
  std::vector<int> widths;
  for (const Tensor& x : xs) {
    nodes.push_back(x.node());
    widths.push_back(x.cols());
  }
  rec.commit(out, [nodes, widths, on, m, total]() {
    on->ensure_grad();
    int off2 = 0;
    for (size_t t = 0; t < nodes.size(); ++t) {
      const int w = widths[t];
      if (nodes[t]->requires_grad) {
        nodes[t]->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            nodes[t]->grad[static_cast<size_t>(i) * w + j] +=
                on->grad[static_cast<size_t>(i) * total + off2 + j];
      }
      off2 += w;
    }
  });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const int n = xs[0].cols();
  int total = 0;
  for (const Tensor& x : xs) {
    require_2d(x, "concat_rows");
    if (x.cols() != n)
      throw std::invalid_argument("concat_rows: column mismatch: " + xs[0].shape_str() + " vs " +
                                  x.shape_str());
    total += x.rows();
  }
  Tensor out = Tensor::zeros({total, n});
  auto& od = out.mutable_data();
  size_t off = 0;
  for (const Tensor& x : xs) {
    std::memcpy(&od[off], x.data().data(), sizeof(double) * x.size());
    off += x.size();
  }

  Recorder rec(xs);
  auto on = out.node();
  std::vector<std::shared_ptr<detail::TensorNode>> nodes;
  for (const Tensor& x : xs) nodes.push_back(x.node());
  rec.commit(out, [nodes, on]() {
    on->ensure_grad();
    size_t off2 = 0;
    for (const auto& nd : nodes) {
      if (nd->requires_grad) {
        nd->ensure_grad();
        for (size_t i = 0; i < nd->grad.size(); ++i) nd->grad[i] += on->grad[off2 + i];
      }
      off2 += nd->data.size();
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& a, int start, int len) {
  require_2d(a, "slice_cols");
  if (start < 0 || len <= 0 || start + len > a.cols())
    throw std::invalid_argument("slice_cols: range out of bounds for " + a.shape_str());
  const int m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({m, len});
  auto& od = out.mutable_data();
  const auto& ad = a.data();
  for (int i = 0; i < m; ++i)
    std::memcpy(&od[static_cast<size_t>(i) * len],
                &ad[static_cast<size_t>(i) * n + start], sizeof(double) * static_cast<size_t>(len));

  Recorder rec({&a});
  auto an = a.node(), on = out.node();
  rec.commit(out, [an, on, start, len, m, n]() {
    on->ensure_grad();
    an->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < len; ++j)
        an->grad[static_cast<size_t>(i) * n + start + j] +=
            on->grad[static_cast<size_t>(i) * len + j];
  });
  return out;
}

Tensor slice_rows(const Tensor& a, int start, int len) {
  require_2d(a, "slice_rows");
  if (start < 0 || len <= 0 || start + len > a.rows())
    throw std::invalid_argument("slice_rows: range out of bounds for " + a.shape_str());
  const int n = a.cols();
  Tensor out = Tensor::zeros({len, n});
  std::memcpy(out.mutable_data().data(), &a.data()[static_cast<size_t>(start) * n],
              sizeof(double) * out.size());

  Recorder rec({&a});
  auto an = a.node(), on = out.node();
  rec.commit(out, [an, on, start, n]() {
    on->ensure_grad();
    an->ensure_grad();
    const size_t base = static_cast<size_t>(start) * static_cast<size_t>(n);
    for (size_t i = 0; i < on->grad.size(); ++i) an->grad[base + i] += on->grad[i];
  });
  return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  require_2d(a, "gather_rows");
  if (idx.empty()) throw std::invalid_argument("gather_rows: empty index list");
  const int m = a.rows(), n = a.cols();
  for (int i : idx)
    if (i < 0 || i >= m)
      throw std::invalid_argument("gather_rows: index " + std::to_string(i) +
                                  " out of range for " + a.shape_str());
  Tensor out = Tensor::zeros({static_cast<int>(idx.size()), n});
  auto& od = out.mutable_data();
  const auto& ad = a.data();
  for (size_t r = 0; r < idx.size(); ++r)
    std::memcpy(&od[r * static_cast<size_t>(n)],
                &ad[static_cast<size_t>(idx[r]) * n], sizeof(double) * static_cast<size_t>(n));

  Recorder rec({&a});
  auto an = a.node(), on = out.node();
  rec.commit(out, [an, on, idx, n]() {
    on->ensure_grad();
    an->ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r)
      for (int j = 0; j < n; ++j)
        an->grad[static_cast<size_t>(idx[r]) * n + j] +=
            on->grad[r * static_cast<size_t>(n) + j];
  });
  return out;
}

Tensor masked_softmax(const Tensor& scores, const Tensor& mask) {
  require_2d(scores, "masked_softmax");
  const int m = scores.rows(), n = scores.cols();
  const bool broadcast = mask.rank() == 1 || mask.rows() == 1;
  if (mask.cols() != n || (!broadcast && mask.rows() != m)) {
    throw std::invalid_argument("masked_softmax: mask " + mask.shape_str() +
                                " not broadcastable to scores " + scores.shape_str());
  }
  Tensor out = Tensor::zeros({m, n});
  auto& od = out.mutable_data();
  const auto& sd = scores.data();
  const auto& md = mask.data();
  for (int i = 0; i < m; ++i) {
    const double* mr = broadcast ? md.data() : &md[static_cast<size_t>(i) * n];
    const double* sr = &sd[static_cast<size_t>(i) * n];
    double* orow = &od[static_cast<size_t>(i) * n];
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j)
      if (mr[j] > kMaskThreshold && sr[j] > mx) mx = sr[j];
    if (!std::isfinite(mx)) {
      g_all_masked_rows.fetch_add(1, std::memory_order_relaxed);
      continue;  // fully masked row: all zeros
    }
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      if (mr[j] > kMaskThreshold) {
        orow[j] = std::exp(sr[j] + mr[j] - mx);
        z += orow[j];
      }
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      if (mr[j] > kMaskThreshold) {
        orow[j] /= z;
        sum += orow[j];
      }
    }
    note_row_sum_error(std::abs(sum - 1.0));
  }

  Recorder rec({&scores});  // the mask is a constant, no gradient flows into it
  auto sn = scores.node(), mn = mask.node(), on = out.node();
  rec.commit(out, [sn, mn, on, m, n, broadcast]() {
    on->ensure_grad();
    sn->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const double* mr = broadcast ? mn->data.data() : &mn->data[static_cast<size_t>(i) * n];
      const double* p = &on->data[static_cast<size_t>(i) * n];
      const double* g = &on->grad[static_cast<size_t>(i) * n];
      double dot = 0.0;
      for (int j = 0; j < n; ++j)
        if (mr[j] > kMaskThreshold) dot += g[j] * p[j];
      for (int j = 0; j < n; ++j)
        if (mr[j] > kMaskThreshold)
          sn->grad[static_cast<size_t>(i) * n + j] += p[j] * (g[j] - dot);
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_2d(x, "layer_norm");
  if (eps <= 0) throw std::invalid_argument("layer_norm: eps must be positive");
  const int m = x.rows(), d = x.cols();
  if (gain.cols() != d || bias.cols() != d || gain.size() != static_cast<size_t>(d) ||
      bias.size() != static_cast<size_t>(d)) {
    throw std::invalid_argument("layer_norm: gain/bias width mismatch with " + x.shape_str());
  }
  Tensor out = Tensor::zeros({m, d});
  auto& od = out.mutable_data();
  const auto& xd = x.data();
  const auto& gd = gain.data();
  const auto& bd = bias.data();
  std::vector<double> inv_std(static_cast<size_t>(m)), mean(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* xr = &xd[static_cast<size_t>(i) * d];
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + eps);
    mean[static_cast<size_t>(i)] = mu;
    inv_std[static_cast<size_t>(i)] = is;
    double* orow = &od[static_cast<size_t>(i) * d];
    for (int j = 0; j < d; ++j) orow[j] = (xr[j] - mu) * is * gd[j] + bd[j];
  }
  CROSSMAP_DEBUG_FINITE(out.data(), "layer_norm");

  Recorder rec({&x, &gain, &bias});
  auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
  rec.commit(out, [xn, gn, bn, on, m, d, mean, inv_std]() {
    on->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const double* xr = &xn->data[static_cast<size_t>(i) * d];
      const double* g = &on->grad[static_cast<size_t>(i) * d];
      const double mu = mean[static_cast<size_t>(i)];
      const double is = inv_std[static_cast<size_t>(i)];
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int j = 0; j < d; ++j) gn->grad[j] += g[j] * (xr[j] - mu) * is;
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int j = 0; j < d; ++j) bn->grad[j] += g[j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        // dxhat, then the two coupled reductions of the normalization
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < d; ++j) {
          const double xhat = (xr[j] - mu) * is;
          const double dxhat = g[j] * gn->data[static_cast<size_t>(j)];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        for (int j = 0; j < d; ++j) {
          const double xhat = (xr[j] - mu) * is;
          const double dxhat = g[j] * gn->data[static_cast<size_t>(j)];
          xn->grad[static_cast<size_t>(i) * d + j] +=
              is * (dxhat - sum_dxhat / d - xhat * sum_dxhat_xhat / d);
        }
      }
    }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  require_2d(logits, "cross_entropy");
  const int n = logits.rows(), c = logits.cols();
  if (static_cast<int>(targets.size()) != n) {
    throw std::invalid_argument("cross_entropy: expected " + std::to_string(n) +
                                " targets, got " + std::to_string(targets.size()));
  }
  for (int t : targets)
    if (t < 0 || t >= c)
      throw std::invalid_argument("cross_entropy: target index " + std::to_string(t) +
                                  " out of range for " + std::to_string(c) + " classes");
  const auto& ld = logits.data();
  double total = 0.0;
  std::vector<double> softmax(ld.size());
  for (int i = 0; i < n; ++i) {
    const double* lr = &ld[static_cast<size_t>(i) * c];
    double mx = lr[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, lr[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(lr[j] - mx);
    const double log_z = mx + std::log(z);
    total += log_z - lr[targets[static_cast<size_t>(i)]];
    for (int j = 0; j < c; ++j)
      softmax[static_cast<size_t>(i) * c + j] = std::exp(lr[j] - log_z);
  }
  Tensor out = Tensor::scalar(total / n);

  Recorder rec({&logits});
  auto ln = logits.node(), on = out.node();
  rec.commit(out, [ln, on, targets, n, c, softmax]() {
    on->ensure_grad();
    ln->ensure_grad();
    const double g = on->grad[0] / n;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < c; ++j) {
        double v = softmax[static_cast<size_t>(i) * c + j];
        if (j == targets[static_cast<size_t>(i)]) v -= 1.0;
        ln->grad[static_cast<size_t>(i) * c + j] += g * v;
      }
    }
  });
  return out;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;  // exact identity, shared payload

  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.size());
  for (size_t i = 0; i < factor.size(); ++i)
    factor[i] = rng.uniform() < rate ? 0.0 : keep_scale;

  Tensor out = Tensor::zeros(x.shape());
  auto& od = out.mutable_data();
  const auto& xd = x.data();
  for (size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] * factor[i];

  Recorder rec({&x});
  auto xn = x.node(), on = out.node();
  rec.commit(out, [xn, on, factor]() {
    on->ensure_grad();
    xn->ensure_grad();
    for (size_t i = 0; i < factor.size(); ++i) xn->grad[i] += on->grad[i] * factor[i];
  });
  return out;
}

// --- ParamStore / Adam ---------------------------------------------------------

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (params_.count(name)) throw std::logic_error("ParamStore::add: duplicate name " + name);
  params_.emplace(name, t);
  return t;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::logic_error("ParamStore::get: unknown parameter " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

uint64_t ParamStore::fingerprint() const {
  uint64_t h = 0xCBF29CE484222325ull;
  auto mix = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ull;
    }
  };
  for (const auto& [name, t] : params_) {
    mix(name.data(), name.size());
    mix(t.data().data(), t.data().size() * sizeof(double));
  }
  return h;
}

void ParamStore::fill(double v) {
  for (auto& [name, t] : params_)
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), v);
}

void adam_step(ParamStore& params, AdamState& state, const AdamConfig& config) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, tensor] : params.items()) {
    auto node = tensor.node();
    if (!node->requires_grad) continue;
    auto& mom = state.moments[name];
    if (mom.m.size() != node->data.size()) {
      mom.m.assign(node->data.size(), 0.0);
      mom.v.assign(node->data.size(), 0.0);
    }
    const bool has_grad = !node->grad.empty();
    if (has_grad) {
      bool finite = true;
      for (double g : node->grad)
        if (!std::isfinite(g)) {
          finite = false;
          break;
        }
      if (!finite) {
        state.skipped_updates += 1;
        continue;
      }
    }
    auto& data = const_cast<std::vector<double>&>(node->data);
    for (size_t i = 0; i < data.size(); ++i) {
      const double g = has_grad ? node->grad[i] : 0.0;
      mom.m[i] = config.beta1 * mom.m[i] + (1.0 - config.beta1) * g;
      mom.v[i] = config.beta2 * mom.v[i] + (1.0 - config.beta2) * g * g;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      data[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace crossmap
