#include "hd2/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace hd2::diffcore {

namespace {
std::atomic<uint64_t> g_seq{1};
thread_local bool g_grad_capture = true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_capture) { g_grad_capture = false; }
NoGradGuard::~NoGradGuard() { g_grad_capture = prev_; }
bool grad_capture_enabled() { return g_grad_capture; }

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

static void check_shape(const Shape& shape) {
  for (int64_t e : shape)
    if (e <= 0) throw ShapeError("non-positive extent in " + shape_str(shape));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto n = std::make_shared<Node>();
  n->data.assign(static_cast<size_t>(shape_numel(shape)), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return wrap(std::move(n));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!n_) throw InternalError("shape() on empty tensor");
  return n_->shape;
}

int64_t Tensor::numel() const { return static_cast<int64_t>(n_->data.size()); }
int64_t Tensor::rank() const { return static_cast<int64_t>(shape().size()); }
bool Tensor::requires_grad() const { return n_ && n_->requires_grad; }

const double* Tensor::data() const { return n_->data.data(); }
double* Tensor::data() { return n_->data.data(); }
const std::vector<double>& Tensor::data_vec() const { return n_->data; }

bool Tensor::has_grad() const { return n_ && !n_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad())
    throw InternalError("gradient requested before any backward pass");
  return n_->grad;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return n_->data[0];
}

Tensor Tensor::detach() const {
  if (!n_) return Tensor();
  auto d = std::make_shared<Node>();
  d->shape = n_->shape;
  d->data = n_->data;
  d->requires_grad = false;
  d->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return wrap(std::move(d));
}

void Tensor::backward() const {
  if (!n_) throw InternalError("backward() on empty tensor");
  if (numel() != 1)
    throw ShapeError("backward() requires a scalar, got " +
                     shape_str(shape()));
  if (!n_->requires_grad)
    throw DomainError("backward() from a tensor with no gradient path");

  // Collect the reachable grad-carrying subgraph.
  std::vector<Node*> nodes;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{n_.get()};
  seen.insert(n_.get());
  while (!stack.empty()) {
    Node* cur = stack.back();
    stack.pop_back();
    nodes.push_back(cur);
    for (const Tensor& p : cur->parents) {
      Node* pn = p.node();
      if (pn && pn->requires_grad && seen.insert(pn).second)
        stack.push_back(pn);
    }
  }

  for (Node* node : nodes) node->grad.assign(node->data.size(), 0.0);
  n_->grad[0] = 1.0;

  std::sort(nodes.begin(), nodes.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });
  for (Node* node : nodes)
    if (node->backfn) node->backfn(*node);
}

Tensor make_op(Shape shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(Node&)> backfn) {
  bool rg = false;
  if (g_grad_capture)
    for (const Tensor& p : parents)
      if (p.requires_grad()) rg = true;
  Tensor out = Tensor::from_data(std::move(shape), std::move(data), rg);
  if (rg) {
    out.node()->parents = std::move(parents);
    out.node()->backfn = std::move(backfn);
  }
  return out;
}

double Rng::normal(double mu, double sigma) {
  if (has_spare_) {
    has_spare_ = false;
    return mu + sigma * spare_;
  }
  double u, v, s;
  do {
    u = uniform(-1.0, 1.0);
    v = uniform(-1.0, 1.0);
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  has_spare_ = true;
  return mu + sigma * u * m;
}

int64_t Rng::randint(int64_t lo, int64_t hi) {
  if (hi < lo) throw DomainError("randint with hi < lo");
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int64_t>(bits() % span);
}

Parameter make_param(std::string name, Shape shape, int64_t fan_in, Rng& rng) {
  if (fan_in <= 0) throw DomainError("fan_in must be positive");
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (double& x : data) x = rng.uniform(-bound, bound);
  return Parameter{std::move(name),
                   Tensor::from_data(std::move(shape), std::move(data), true)};
}

Parameter make_param_zero(std::string name, Shape shape) {
  return Parameter{std::move(name), Tensor::zeros(std::move(shape), true)};
}

}  // namespace hd2::diffcore
