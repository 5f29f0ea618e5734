#include <cmath>
#include <unordered_set>

#include "csdenoise/ctensor.hpp"

namespace csd {

CTensor::CTensor(RTensor r, RTensor i) : re(std::move(r)), im(std::move(i)) {
  if (!re.same_shape(im))
    throw ShapeError("complex tensor parts disagree: re " + shape_str(re.shape) + " vs im " +
                     shape_str(im.shape));
}

CTensor CTensor::real(RTensor r) {
  RTensor i(r.shape);
  return CTensor(std::move(r), std::move(i));
}

CTensor CTensor::scalar(double r, double i) {
  return CTensor(RTensor::scalar(r), RTensor::scalar(i));
}

bool CTensor::imag_is_zero() const {
  for (double v : im.data)
    if (v != 0.0) return false;
  return true;
}

void Node::ensure_grad() {
  if (!grad_defined) {
    grad = CTensor::zeros(value.shape());
    grad_defined = true;
  }
}

void Node::accum_grad_re(const RTensor& g) {
  ensure_grad();
  for (int64_t i = 0; i < g.numel(); ++i) grad.re[i] += g[i];
}

void Node::accum_grad_im(const RTensor& g) {
  ensure_grad();
  for (int64_t i = 0; i < g.numel(); ++i) grad.im[i] += g[i];
}

Var::Var(CTensor v, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(v);
  node_->requires_grad = requires_grad;
}

Var Var::parameter(CTensor v, std::string name) {
  Var p(std::move(v), true);
  p.node_->name = std::move(name);
  return p;
}

const CTensor& Var::grad() const {
  if (!has_grad()) throw ValueError("no gradient recorded on '" + node_->name + "'");
  return node_->grad;
}

void Var::zero_grad() {
  if (node_) {
    node_->grad = CTensor();
    node_->grad_defined = false;
  }
}

double Var::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return node_->value.re[0];
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Var& loss) {
  if (!loss.defined()) throw ValueError("backward on undefined Var");
  if (loss.numel() != 1)
    throw ValueError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  if (std::abs(loss.value().im[0]) > 1e-9 * (1.0 + std::abs(loss.value().re[0])))
    throw ValueError("backward requires a real loss, imag part is " +
                     std::to_string(loss.value().im[0]));

  // iterative post-order topological sort
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad.re[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad_defined) n->backward(*n);
  }
}

}  // namespace csd
