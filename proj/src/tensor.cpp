#include "salt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace salt {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

namespace {
std::atomic<bool> g_grad_mode{true};
std::atomic<bool> g_finite_checks{true};

void validate_shape(const Shape& s) {
  if (s.empty()) throw DimensionError("tensor: empty shape");
  for (int e : s) {
    if (e <= 0) throw DimensionError("tensor: non-positive extent in " + shape_str(s));
  }
}
}  // namespace

bool GradMode::enabled() { return g_grad_mode.load(std::memory_order_relaxed); }
void GradMode::set_enabled(bool on) { g_grad_mode.store(on, std::memory_order_relaxed); }

NoGradGuard::NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(prev_); }

bool FiniteChecks::enabled() { return g_finite_checks.load(std::memory_order_relaxed); }
void FiniteChecks::set_enabled(bool on) { g_finite_checks.store(on, std::memory_order_relaxed); }

struct Tensor::Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
};

namespace {

using Node = Tensor::Node;
using NodePtr = std::shared_ptr<Node>;

void accumulate(Node& n, const std::vector<double>& delta) {
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  for (size_t i = 0; i < delta.size(); ++i) n.grad[i] += delta[i];
}

std::vector<double>& grad_buf(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

void check_finite(const char* op, const std::vector<double>& v) {
  if (!FiniteChecks::enabled()) return;
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + ": non-finite value in output");
    }
  }
}

}  // namespace

/// Builds op output nodes and wires the tape.
struct OpCtx {
  static NodePtr raw(Shape shape, std::vector<double> data) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return n;
  }

  static Tensor wrap(NodePtr n) { return Tensor(std::move(n)); }

  static const NodePtr& node_of(const Tensor& t) { return t.node(); }

  /// Finish an op: attach parents and the backward closure when the tape
  /// is active and any parent needs gradients.
  static Tensor finish(const char* op, NodePtr out, std::vector<NodePtr> parents,
                       std::function<void(Node&)> backprop) {
    check_finite(op, out->data);
    bool needs = false;
    if (GradMode::enabled()) {
      for (const auto& p : parents) {
        if (p->requires_grad) {
          needs = true;
          break;
        }
      }
    }
    if (needs) {
      out->requires_grad = true;
      out->leaf = false;
      out->parents = std::move(parents);
      out->backprop = std::move(backprop);
    }
    return wrap(std::move(out));
  }
};

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  validate_shape(shape);
  node_ = std::make_shared<Node>();
  node_->data.assign(static_cast<size_t>(shape_numel(shape)), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("tensor: undefined");
  return node_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int Tensor::extent(int axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

int64_t Tensor::size() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
  if (!node_) throw ContractError("tensor: undefined");
  return node_->data;
}

std::span<double> Tensor::values_mut() {
  if (!node_) throw ContractError("tensor: undefined");
  if (!node_->leaf) throw ContractError("tensor: graph outputs are immutable after forward");
  return node_->data;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("tensor: item() requires a scalar, got " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size()) throw DimensionError("tensor: index rank mismatch");
  int64_t flat = 0;
  int axis = 0;
  for (int i : idx) {
    if (i < 0 || i >= s[axis]) throw DimensionError("tensor: index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node_->data[static_cast<size_t>(flat)];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor: no gradient present");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }
}

Tensor Tensor::detach() const {
  if (!node_) return Tensor();
  return Tensor(node_->shape, node_->data, false);
}

void backward(const Tensor& loss) {
  const auto& root = loss.node();
  if (!root) throw ContractError("backward: undefined loss");
  if (shape_numel(root->shape) != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_str(root->shape));
  }

  // Reverse topological order via iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  grad_buf(*root)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }

  // Release the tape: interior nodes drop closures, parents and grads.
  for (Node* n : order) {
    if (!n->leaf) {
      n->backprop = nullptr;
      n->parents.clear();
      n->grad.clear();
    }
  }
}

// ---- ops --------------------------------------------------------------

namespace {

void require_rank(const Tensor& t, int r, const char* op) {
  if (t.rank() != r) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + " tensor, got " +
                         shape_str(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.extent(0), k = a.extent(1);
  const int k2 = b.extent(0), n = b.extent(1);
  if (k != k2) {
    throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  {
    const double* A = a.values().data();
    const double* B = b.values().data();
    for (int i = 0; i < m; ++i) {
      const double* arow = A + static_cast<size_t>(i) * k;
      double* orow = out.data() + static_cast<size_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = B + static_cast<size_t>(kk) * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  auto na = a.node(), nb = b.node();
  auto node = OpCtx::raw({m, n}, std::move(out));
  return OpCtx::finish("matmul", node, {na, nb}, [na, nb, m, k, n](Tensor::Node& self) {
    const double* G = self.grad.data();
    if (na->requires_grad) {
      auto& ga = grad_buf(*na);
      const double* B = nb->data.data();
      for (int i = 0; i < m; ++i) {
        const double* grow = G + static_cast<size_t>(i) * n;
        double* garow = ga.data() + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
          const double* brow = B + static_cast<size_t>(kk) * n;
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          garow[kk] += acc;
        }
      }
    }
    if (nb->requires_grad) {
      auto& gb = grad_buf(*nb);
      const double* A = na->data.data();
      for (int kk = 0; kk < k; ++kk) {
        double* gbrow = gb.data() + static_cast<size_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
          const double av = A[static_cast<size_t>(i) * k + kk];
          const double* grow = G + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const int m = a.extent(0), n = a.extent(1);
  std::vector<double> out(static_cast<size_t>(m) * n);
  const double* A = a.values().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = A[static_cast<size_t>(i) * n + j];
  auto na = a.node();
  auto node = OpCtx::raw({n, m}, std::move(out));
  return OpCtx::finish("transpose", node, {na}, [na, m, n](Tensor::Node& self) {
    if (!na->requires_grad) return;
    auto& ga = grad_buf(*na);
    const double* G = self.grad.data();
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i) ga[static_cast<size_t>(i) * n + j] += G[static_cast<size_t>(j) * m + i];
  });
}

namespace {

Tensor elementwise_pair(const char* op, const Tensor& a, const Tensor& b, double bsign) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bsign * bv[i];
  auto na = a.node(), nb = b.node();
  auto node = OpCtx::raw(a.shape(), std::move(out));
  return OpCtx::finish(op, node, {na, nb}, [na, nb, bsign](Tensor::Node& self) {
    if (na->requires_grad) accumulate(*na, self.grad);
    if (nb->requires_grad) {
      auto& gb = grad_buf(*nb);
      for (size_t i = 0; i < self.grad.size(); ++i) gb[i] += bsign * self.grad[i];
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise_pair("add", a, b, 1.0); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise_pair("sub", a, b, -1.0); }

Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
  require_rank(a, 2, "add_rowvec");
  require_rank(bias, 1, "add_rowvec");
  const int m = a.extent(0), n = a.extent(1);
  if (bias.extent(0) != n) {
    throw DimensionError("add_rowvec: bias " + shape_str(bias.shape()) + " does not match columns of " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = bias.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += bv[j];
  auto na = a.node(), nb = bias.node();
  auto node = OpCtx::raw(a.shape(), std::move(out));
  return OpCtx::finish("add_rowvec", node, {na, nb}, [na, nb, m, n](Tensor::Node& self) {
    if (na->requires_grad) accumulate(*na, self.grad);
    if (nb->requires_grad) {
      auto& gb = grad_buf(*nb);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[j] += self.grad[static_cast<size_t>(i) * n + j];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= c;
  auto na = a.node();
  auto node = OpCtx::raw(a.shape(), std::move(out));
  return OpCtx::finish("scale", node, {na}, [na, c](Tensor::Node& self) {
    if (!na->requires_grad) return;
    auto& ga = grad_buf(*na);
    for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += c * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto na = a.node();
  auto node = OpCtx::raw({1}, {s});
  return OpCtx::finish("sum", node, {na}, [na](Tensor::Node& self) {
    if (!na->requires_grad) return;
    auto& ga = grad_buf(*na);
    for (double& g : ga) g += self.grad[0];
  });
}

Tensor softmax_lastdim(const Tensor& t) {
  const Shape& s = t.shape();
  const int width = s.back();
  if (width < 1) throw DimensionError("softmax_lastdim: empty last axis in " + shape_str(s));
  const int64_t rows = shape_numel(s) / width;
  std::vector<double> out(t.values().begin(), t.values().end());
  for (int64_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * width;
    double mx = row[0];
    for (int j = 1; j < width; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < width; ++j) {
      row[j] = std::exp(row[j] - mx);
      denom += row[j];
    }
    for (int j = 0; j < width; ++j) row[j] /= denom;
  }
  auto nt = t.node();
  std::vector<double> saved = out;  // softmax values needed by backward
  auto node = OpCtx::raw(s, std::move(out));
  return OpCtx::finish("softmax_lastdim", node, {nt},
                       [nt, saved = std::move(saved), rows, width](Tensor::Node& self) {
    if (!nt->requires_grad) return;
    auto& g = grad_buf(*nt);
    const double* Y = saved.data();
    const double* G = self.grad.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = Y + r * width;
      const double* gr = G + r * width;
      double dot = 0.0;
      for (int j = 0; j < width; ++j) dot += gr[j] * y[j];
      double* gout = g.data() + r * width;
      for (int j = 0; j < width; ++j) gout[j] += y[j] * (gr[j] - dot);
    }
  });
}

Tensor dyt(const Tensor& x, const Tensor& alpha, const Tensor& gamma, const Tensor& beta) {
  const int c = x.shape().back();
  for (const Tensor* p : {&alpha, &gamma, &beta}) {
    if (p->rank() != 1 || p->extent(0) != c) {
      throw DimensionError("dyt: channel parameters must be [" + std::to_string(c) + "], got " +
                           shape_str(p->shape()));
    }
  }
  const int64_t rows = x.size() / c;
  std::vector<double> t(static_cast<size_t>(x.size()));
  std::vector<double> out(static_cast<size_t>(x.size()));
  {
    const double* X = x.values().data();
    const double* A = alpha.values().data();
    const double* Gm = gamma.values().data();
    const double* B = beta.values().data();
    for (int64_t r = 0; r < rows; ++r) {
      for (int j = 0; j < c; ++j) {
        const size_t i = static_cast<size_t>(r) * c + j;
        t[i] = std::tanh(A[j] * X[i]);
        out[i] = Gm[j] * t[i] + B[j];
      }
    }
  }
  auto nx = x.node(), nalpha = alpha.node(), ngamma = gamma.node(), nbeta = beta.node();
  auto node = OpCtx::raw(x.shape(), std::move(out));
  return OpCtx::finish(
      "dyt", node, {nx, nalpha, ngamma, nbeta},
      [nx, nalpha, ngamma, nbeta, t = std::move(t), rows, c](Tensor::Node& self) {
        const double* G = self.grad.data();
        const double* X = nx->data.data();
        const double* A = nalpha->data.data();
        const double* Gm = ngamma->data.data();
        for (int64_t r = 0; r < rows; ++r) {
          for (int j = 0; j < c; ++j) {
            const size_t i = static_cast<size_t>(r) * c + j;
            const double sech2 = 1.0 - t[i] * t[i];
            const double common = G[i] * Gm[j] * sech2;
            if (nx->requires_grad) grad_buf(*nx)[i] += common * A[j];
            if (nalpha->requires_grad) grad_buf(*nalpha)[j] += common * X[i];
            if (ngamma->requires_grad) grad_buf(*ngamma)[j] += G[i] * t[i];
            if (nbeta->requires_grad) grad_buf(*nbeta)[j] += G[i];
          }
        }
      });
}

Tensor max_over_sequence(const Tensor& x) {
  require_rank(x, 2, "max_over_sequence");
  const int n = x.extent(0), d = x.extent(1);
  if (n < 1) throw DimensionError("max_over_sequence: empty sequence");
  std::vector<double> out(static_cast<size_t>(d));
  std::vector<int> argmax(static_cast<size_t>(d), 0);
  const double* X = x.values().data();
  for (int j = 0; j < d; ++j) {
    double best = X[j];
    int bi = 0;
    for (int i = 1; i < n; ++i) {
      const double v = X[static_cast<size_t>(i) * d + j];
      if (v > best) {  // first-max tie rule
        best = v;
        bi = i;
      }
    }
    out[j] = best;
    argmax[j] = bi;
  }
  auto nx = x.node();
  auto node = OpCtx::raw({d}, std::move(out));
  return OpCtx::finish("max_over_sequence", node, {nx},
                       [nx, argmax = std::move(argmax), d](Tensor::Node& self) {
                         if (!nx->requires_grad) return;
                         auto& g = grad_buf(*nx);
                         for (int j = 0; j < d; ++j)
                           g[static_cast<size_t>(argmax[j]) * d + j] += self.grad[j];
                       });
}

Tensor depthwise_conv2d_same_avg(const Tensor& logits, const std::vector<Tensor>& kernels,
                                 const std::vector<Tensor>& biases) {
  require_rank(logits, 3, "depthwise_conv2d_same_avg");
  if (kernels.empty()) throw ConfigError("depthwise_conv2d_same_avg: no kernels");
  if (kernels.size() != biases.size()) {
    throw ConfigError("depthwise_conv2d_same_avg: kernel/bias count mismatch");
  }
  const int H = logits.extent(0), n = logits.extent(1), p = logits.extent(2);
  for (const Tensor& k : kernels) {
    require_rank(k, 2, "depthwise_conv2d_same_avg");
    if (k.extent(0) % 2 == 0) {
      throw ConfigError("depthwise_conv2d_same_avg: kernel height " + std::to_string(k.extent(0)) +
                        " must be odd");
    }
    if (k.extent(1) != p) {
      throw ConfigError("depthwise_conv2d_same_avg: kernel width " + std::to_string(k.extent(1)) +
                        " must equal projection count " + std::to_string(p));
    }
  }
  for (const Tensor& b : biases) {
    if (b.size() != 1) throw ConfigError("depthwise_conv2d_same_avg: bias must be scalar");
  }

  const int f = static_cast<int>(kernels.size());
  const double inv_f = 1.0 / f;
  const int pl = (p - 1) / 2;  // left-biased "same" padding for even widths
  std::vector<double> out(static_cast<size_t>(H) * n * p, 0.0);
  const double* IN = logits.values().data();
  for (int ki = 0; ki < f; ++ki) {
    const Tensor& ker = kernels[ki];
    const int kh = ker.extent(0);
    const int pt = (kh - 1) / 2;
    const double* KW = ker.values().data();
    const double bias = biases[ki].values()[0];
    for (int h = 0; h < H; ++h) {
      const double* in = IN + static_cast<size_t>(h) * n * p;
      double* o = out.data() + static_cast<size_t>(h) * n * p;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) {
          double acc = bias;
          for (int a = 0; a < kh; ++a) {
            const int ii = i + a - pt;
            if (ii < 0 || ii >= n) continue;
            const double* irow = in + static_cast<size_t>(ii) * p;
            const double* krow = KW + static_cast<size_t>(a) * p;
            for (int b = 0; b < p; ++b) {
              const int jj = j + b - pl;
              if (jj < 0 || jj >= p) continue;
              acc += krow[b] * irow[jj];
            }
          }
          o[static_cast<size_t>(i) * p + j] += acc * inv_f;
        }
      }
    }
  }

  std::vector<NodePtr> parents;
  parents.push_back(logits.node());
  for (const Tensor& k : kernels) parents.push_back(k.node());
  for (const Tensor& b : biases) parents.push_back(b.node());
  auto nin = logits.node();
  std::vector<NodePtr> nk, nb;
  for (const Tensor& k : kernels) nk.push_back(k.node());
  for (const Tensor& b : biases) nb.push_back(b.node());

  auto node = OpCtx::raw({H, n, p}, std::move(out));
  return OpCtx::finish(
      "depthwise_conv2d_same_avg", node, std::move(parents),
      [nin, nk, nb, H, n, p, f, inv_f, pl](Tensor::Node& self) {
        const double* G = self.grad.data();
        for (int ki = 0; ki < f; ++ki) {
          const auto& kern = nk[ki];
          const int kh = kern->shape[0];
          const int pt = (kh - 1) / 2;
          if (nb[ki]->requires_grad) {
            double acc = 0.0;
            for (size_t i = 0; i < self.grad.size(); ++i) acc += G[i];
            grad_buf(*nb[ki])[0] += acc * inv_f;
          }
          if (kern->requires_grad) {
            auto& gk = grad_buf(*kern);
            for (int h = 0; h < H; ++h) {
              const double* in = nin->data.data() + static_cast<size_t>(h) * n * p;
              const double* g = G + static_cast<size_t>(h) * n * p;
              for (int i = 0; i < n; ++i) {
                for (int j = 0; j < p; ++j) {
                  const double gv = g[static_cast<size_t>(i) * p + j] * inv_f;
                  if (gv == 0.0) continue;
                  for (int a = 0; a < kh; ++a) {
                    const int ii = i + a - pt;
                    if (ii < 0 || ii >= n) continue;
                    for (int b = 0; b < p; ++b) {
                      const int jj = j + b - pl;
                      if (jj < 0 || jj >= p) continue;
                      gk[static_cast<size_t>(a) * p + b] += gv * in[static_cast<size_t>(ii) * p + jj];
                    }
                  }
                }
              }
            }
          }
          if (nin->requires_grad) {
            auto& gi = grad_buf(*nin);
            const double* KW = kern->data.data();
            for (int h = 0; h < H; ++h) {
              const double* g = G + static_cast<size_t>(h) * n * p;
              double* gin = gi.data() + static_cast<size_t>(h) * n * p;
              for (int i = 0; i < n; ++i) {
                for (int j = 0; j < p; ++j) {
                  const double gv = g[static_cast<size_t>(i) * p + j] * inv_f;
                  if (gv == 0.0) continue;
                  for (int a = 0; a < kh; ++a) {
                    const int ii = i + a - pt;
                    if (ii < 0 || ii >= n) continue;
                    for (int b = 0; b < p; ++b) {
                      const int jj = j + b - pl;
                      if (jj < 0 || jj >= p) continue;
                      gin[static_cast<size_t>(ii) * p + jj] += gv * KW[static_cast<size_t>(a) * p + b];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor delta_kernel(int h, int w) {
  if (h % 2 == 0) throw ConfigError("delta_kernel: height must be odd");
  Tensor k({h, w}, 0.0);
  k.values_mut()[static_cast<size_t>(h / 2) * w + (w - 1) / 2] = 1.0;
  return k;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  require_rank(a, 2, "slice_rows");
  const int m = a.extent(0), n = a.extent(1);
  if (r0 < 0 || r1 > m || r0 >= r1) throw DimensionError("slice_rows: bad range");
  std::vector<double> out(a.values().begin() + static_cast<size_t>(r0) * n,
                          a.values().begin() + static_cast<size_t>(r1) * n);
  auto na = a.node();
  auto node = OpCtx::raw({r1 - r0, n}, std::move(out));
  return OpCtx::finish("slice_rows", node, {na}, [na, r0, n](Tensor::Node& self) {
    if (!na->requires_grad) return;
    auto& g = grad_buf(*na);
    for (size_t i = 0; i < self.grad.size(); ++i) g[static_cast<size_t>(r0) * n + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  require_rank(a, 2, "slice_cols");
  const int m = a.extent(0), n = a.extent(1);
  if (c0 < 0 || c1 > n || c0 >= c1) throw DimensionError("slice_cols: bad range");
  const int w = c1 - c0;
  std::vector<double> out(static_cast<size_t>(m) * w);
  const double* A = a.values().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) out[static_cast<size_t>(i) * w + j] = A[static_cast<size_t>(i) * n + c0 + j];
  auto na = a.node();
  auto node = OpCtx::raw({m, w}, std::move(out));
  return OpCtx::finish("slice_cols", node, {na}, [na, c0, n, m, w](Tensor::Node& self) {
    if (!na->requires_grad) return;
    auto& g = grad_buf(*na);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        g[static_cast<size_t>(i) * n + c0 + j] += self.grad[static_cast<size_t>(i) * w + j];
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const int m = parts[0].extent(0);
  int total = 0;
  for (const Tensor& t : parts) {
    require_rank(t, 2, "concat_cols");
    if (t.extent(0) != m) throw DimensionError("concat_cols: row counts differ");
    total += t.extent(1);
  }
  std::vector<double> out(static_cast<size_t>(m) * total);
  int off = 0;
  for (const Tensor& t : parts) {
    const int w = t.extent(1);
    const double* A = t.values().data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j) out[static_cast<size_t>(i) * total + off + j] = A[static_cast<size_t>(i) * w + j];
    off += w;
  }
  std::vector<NodePtr> ps;
  std::vector<int> widths;
  for (const Tensor& t : parts) {
    ps.push_back(t.node());
    widths.push_back(t.extent(1));
  }
  auto node = OpCtx::raw({m, total}, std::move(out));
  return OpCtx::finish("concat_cols", node, {ps.begin(), ps.end()},
                       [ps, widths, m, total](Tensor::Node& self) {
                         int off = 0;
                         for (size_t k = 0; k < ps.size(); ++k) {
                           const int w = widths[k];
                           if (ps[k]->requires_grad) {
                             auto& g = grad_buf(*ps[k]);
                             for (int i = 0; i < m; ++i)
                               for (int j = 0; j < w; ++j)
                                 g[static_cast<size_t>(i) * w + j] +=
                                     self.grad[static_cast<size_t>(i) * total + off + j];
                           }
                           off += w;
                         }
                       });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const int n = parts[0].extent(1);
  int rows = 0;
  for (const Tensor& t : parts) {
    require_rank(t, 2, "concat_rows");
    if (t.extent(1) != n) throw DimensionError("concat_rows: column counts differ");
    rows += t.extent(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(rows) * n);
  for (const Tensor& t : parts) out.insert(out.end(), t.values().begin(), t.values().end());
  std::vector<NodePtr> ps;
  std::vector<int64_t> sizes;
  for (const Tensor& t : parts) {
    ps.push_back(t.node());
    sizes.push_back(t.size());
  }
  auto node = OpCtx::raw({rows, n}, std::move(out));
  return OpCtx::finish("concat_rows", node, {ps.begin(), ps.end()}, [ps, sizes](Tensor::Node& self) {
    size_t off = 0;
    for (size_t k = 0; k < ps.size(); ++k) {
      if (ps[k]->requires_grad) {
        auto& g = grad_buf(*ps[k]);
        for (size_t i = 0; i < static_cast<size_t>(sizes[k]); ++i) g[i] += self.grad[off + i];
      }
      off += static_cast<size_t>(sizes[k]);
    }
  });
}

Tensor stack0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("stack0: no parts");
  const Shape inner = parts[0].shape();
  for (const Tensor& t : parts) {
    if (t.shape() != inner) throw DimensionError("stack0: shapes differ");
  }
  Shape out_shape;
  out_shape.push_back(static_cast<int>(parts.size()));
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  std::vector<double> out;
  out.reserve(static_cast<size_t>(shape_numel(out_shape)));
  for (const Tensor& t : parts) out.insert(out.end(), t.values().begin(), t.values().end());
  std::vector<NodePtr> ps;
  for (const Tensor& t : parts) ps.push_back(t.node());
  const int64_t step = shape_numel(inner);
  auto node = OpCtx::raw(out_shape, std::move(out));
  return OpCtx::finish("stack0", node, {ps.begin(), ps.end()}, [ps, step](Tensor::Node& self) {
    for (size_t k = 0; k < ps.size(); ++k) {
      if (!ps[k]->requires_grad) continue;
      auto& g = grad_buf(*ps[k]);
      const size_t off = k * static_cast<size_t>(step);
      for (size_t i = 0; i < static_cast<size_t>(step); ++i) g[i] += self.grad[off + i];
    }
  });
}

Tensor slice0(const Tensor& a, int index) {
  if (a.rank() < 2) throw DimensionError("slice0: rank must be >= 2");
  const int k = a.extent(0);
  if (index < 0 || index >= k) throw DimensionError("slice0: index out of range");
  Shape inner(a.shape().begin() + 1, a.shape().end());
  const int64_t step = shape_numel(inner);
  std::vector<double> out(a.values().begin() + static_cast<size_t>(index) * step,
                          a.values().begin() + static_cast<size_t>(index + 1) * step);
  auto na = a.node();
  auto node = OpCtx::raw(inner, std::move(out));
  return OpCtx::finish("slice0", node, {na}, [na, index, step](Tensor::Node& self) {
    if (!na->requires_grad) return;
    auto& g = grad_buf(*na);
    const size_t off = static_cast<size_t>(index) * static_cast<size_t>(step);
    for (size_t i = 0; i < static_cast<size_t>(step); ++i) g[off + i] += self.grad[i];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy");
  const int B = logits.extent(0), C = logits.extent(1);
  if (static_cast<int>(labels.size()) != B) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(B));
  }
  for (int l : labels) {
    if (l < 0 || l >= C) {
      throw DataError("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(C) +
                      ")");
    }
  }
  std::vector<double> probs(static_cast<size_t>(B) * C);
  double loss = 0.0;
  const double* Z = logits.values().data();
  for (int i = 0; i < B; ++i) {
    const double* row = Z + static_cast<size_t>(i) * C;
    double mx = row[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < C; ++j) {
      probs[static_cast<size_t>(i) * C + j] = std::exp(row[j] - mx);
      denom += probs[static_cast<size_t>(i) * C + j];
    }
    for (int j = 0; j < C; ++j) probs[static_cast<size_t>(i) * C + j] /= denom;
    loss += mx + std::log(denom) - row[labels[i]];
  }
  loss /= B;
  auto nl = logits.node();
  std::vector<int> lab(labels.begin(), labels.end());
  auto node = OpCtx::raw({1}, {loss});
  return OpCtx::finish("cross_entropy", node, {nl},
                       [nl, probs = std::move(probs), lab = std::move(lab), B, C](Tensor::Node& self) {
                         if (!nl->requires_grad) return;
                         auto& g = grad_buf(*nl);
                         const double gv = self.grad[0] / B;
                         for (int i = 0; i < B; ++i) {
                           for (int j = 0; j < C; ++j) {
                             double d = probs[static_cast<size_t>(i) * C + j];
                             if (j == lab[i]) d -= 1.0;
                             g[static_cast<size_t>(i) * C + j] += gv * d;
                           }
                         }
                       });
}

}  // namespace salt
