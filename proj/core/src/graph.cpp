#include "adreg/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace adreg {

const Tensor& Var::val() const { return g->node(id).value; }
const Tensor& Var::grad() const { return g->node(id).grad; }

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, int(nodes_.size()) - 1};
}

Var Graph::op(Tensor value, std::vector<int> parents,
              std::function<void(Graph&, int)> backward) {
  Node n;
  n.value = std::move(value);
  for (int p : parents) n.requires_grad = n.requires_grad || nodes_[std::size_t(p)].requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, int(nodes_.size()) - 1};
}

Tensor& Graph::grad_buf(int id) {
  Node& n = nodes_[std::size_t(id)];
  if (n.grad.shape.empty()) n.grad = Tensor(n.value.shape);
  return n.grad;
}

void Graph::backward(Var root) {
  if (root.g != this) throw std::logic_error("Graph::backward: foreign var");
  if (root.val().numel() != 1) throw std::logic_error("Graph::backward: root must be scalar");

  for (auto& n : nodes_) {
    n.reachable = false;
    n.grad = Tensor();
  }
  // Mark ancestry of the root (iterative DFS).
  std::vector<int> stack{root.id};
  nodes_[std::size_t(root.id)].reachable = true;
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    for (int p : nodes_[std::size_t(id)].parents) {
      Node& pn = nodes_[std::size_t(p)];
      if (!pn.reachable && pn.requires_grad) {
        pn.reachable = true;
        stack.push_back(p);
      }
    }
  }

  grad_buf(root.id).v[0] = 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[std::size_t(id)];
    if (!n.reachable || !n.requires_grad || !n.backward) continue;
    if (n.grad.shape.empty()) continue;  // no downstream contribution
    n.backward(*this, id);
  }
}

void Graph::release_intermediates() {
  for (auto& n : nodes_) {
    if (!n.parents.empty()) {
      n.value = Tensor();
      n.grad = Tensor();
      n.backward = nullptr;
    }
  }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op_name) {
  if (!a.val().same_shape(b.val()))
    throw std::invalid_argument(std::string(op_name) + ": shape mismatch");
}

// Adds g (scaled elementwise by w applied via functor) into the parent's
// grad if it requires one.
template <class F>
void accum(Graph& g, int parent, const Tensor& gout, F&& per_element) {
  if (!g.node(parent).requires_grad) return;
  Tensor& dst = g.grad_buf(parent);
  const std::size_t n = gout.v.size();
  for (std::size_t i = 0; i < n; ++i) dst.v[i] += per_element(i, gout.v[i]);
}

}  // namespace

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.val().v[i];
  const int ia = a.id, ib = b.id;
  return a.g->op(std::move(out), {ia, ib}, [ia, ib](Graph& g, int id) {
    const Tensor& go = g.node(id).grad;
    accum(g, ia, go, [](std::size_t, double gx) { return gx; });
    accum(g, ib, go, [](std::size_t, double gx) { return gx; });
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.val().v[i];
  const int ia = a.id, ib = b.id;
  return a.g->op(std::move(out), {ia, ib}, [ia, ib](Graph& g, int id) {
    const Tensor& go = g.node(id).grad;
    accum(g, ia, go, [](std::size_t, double gx) { return gx; });
    accum(g, ib, go, [](std::size_t, double gx) { return -gx; });
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.val().v[i];
  const int ia = a.id, ib = b.id;
  return a.g->op(std::move(out), {ia, ib}, [ia, ib](Graph& g, int id) {
    const Tensor& go = g.node(id).grad;
    const Tensor& av = g.value(ia);
    const Tensor& bv = g.value(ib);
    accum(g, ia, go, [&bv](std::size_t i, double gx) { return gx * bv.v[i]; });
    accum(g, ib, go, [&av](std::size_t i, double gx) { return gx * av.v[i]; });
  });
}

Var divide(Var a, Var b) {
  check_same_shape(a, b, "divide");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] /= b.val().v[i];
  const int ia = a.id, ib = b.id;
  return a.g->op(std::move(out), {ia, ib}, [ia, ib](Graph& g, int id) {
    const Tensor& go = g.node(id).grad;
    const Tensor& av = g.value(ia);
    const Tensor& bv = g.value(ib);
    accum(g, ia, go, [&bv](std::size_t i, double gx) { return gx / bv.v[i]; });
    accum(g, ib, go,
          [&av, &bv](std::size_t i, double gx) { return -gx * av.v[i] / (bv.v[i] * bv.v[i]); });
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c) {
  Tensor out = a.val();
  for (double& x : out.v) x *= c;
  const int ia = a.id;
  return a.g->op(std::move(out), {ia}, [ia, c](Graph& g, int id) {
    accum(g, ia, g.node(id).grad, [c](std::size_t, double gx) { return c * gx; });
  });
}

Var add_scalar(Var a, double c) {
  Tensor out = a.val();
  for (double& x : out.v) x += c;
  const int ia = a.id;
  return a.g->op(std::move(out), {ia}, [ia](Graph& g, int id) {
    accum(g, ia, g.node(id).grad, [](std::size_t, double gx) { return gx; });
  });
}

Var square(Var a) {
  Tensor out = a.val();
  for (double& x : out.v) x *= x;
  const int ia = a.id;
  return a.g->op(std::move(out), {ia}, [ia](Graph& g, int id) {
    const Tensor& av = g.value(ia);
    accum(g, ia, g.node(id).grad, [&av](std::size_t i, double gx) { return 2.0 * av.v[i] * gx; });
  });
}

Var sqrt_op(Var a) {
  Tensor out = a.val();
  for (double& x : out.v) x = std::sqrt(x);
  const int ia = a.id;
  return a.g->op(std::move(out), {ia}, [ia](Graph& g, int id) {
    const Tensor& ov = g.value(id);
    accum(g, ia, g.node(id).grad,
          [&ov](std::size_t i, double gx) { return 0.5 / ov.v[i] * gx; });
  });
}

Var relu(Var a) { return lrelu(a, 0.0); }

Var lrelu(Var a, double slope) {
  Tensor out = a.val();
  for (double& x : out.v) x = x > 0 ? x : slope * x;
  const int ia = a.id;
  return a.g->op(std::move(out), {ia}, [ia, slope](Graph& g, int id) {
    const Tensor& av = g.value(ia);
    accum(g, ia, g.node(id).grad,
          [&av, slope](std::size_t i, double gx) { return av.v[i] > 0 ? gx : slope * gx; });
  });
}

Var sigmoid(Var a) {
  Tensor out = a.val();
  for (double& x : out.v) x = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  const int ia = a.id;
  return a.g->op(std::move(out), {ia}, [ia](Graph& g, int id) {
    const Tensor& ov = g.value(id);
    accum(g, ia, g.node(id).grad,
          [&ov](std::size_t i, double gx) { return ov.v[i] * (1.0 - ov.v[i]) * gx; });
  });
}

Var softplus(Var a) {
  Tensor out = a.val();
  for (double& x : out.v) x = x > 30.0 ? x : std::log1p(std::exp(std::min(x, 30.0)));
  const int ia = a.id;
  return a.g->op(std::move(out), {ia}, [ia](Graph& g, int id) {
    const Tensor& av = g.value(ia);
    accum(g, ia, g.node(id).grad, [&av](std::size_t i, double gx) {
      const double x = av.v[i];
      const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      return s * gx;
    });
  });
}

Var sum_all(Var a) {
  double s = 0;
  for (double x : a.val().v) s += x;
  const int ia = a.id;
  return a.g->op(Tensor::scalar(s), {ia}, [ia](Graph& g, int id) {
    const double gx = g.node(id).grad.v[0];
    if (!g.node(ia).requires_grad) return;
    Tensor& dst = g.grad_buf(ia);
    for (double& d : dst.v) d += gx;
  });
}

Var mean_all(Var a) { return scale(sum_all(a), 1.0 / double(a.val().numel())); }

Var sum_samplewise(Var a) {
  const auto& sh = a.val().shape;
  if (sh.size() < 2) throw std::invalid_argument("sum_samplewise: need >= 2 dims");
  const std::int64_t n = sh[0];
  const std::int64_t per = a.val().numel() / n;
  Tensor out({n});
  for (std::int64_t s = 0; s < n; ++s) {
    double acc = 0;
    for (std::int64_t i = 0; i < per; ++i) acc += a.val().v[std::size_t(s * per + i)];
    out.v[std::size_t(s)] = acc;
  }
  const int ia = a.id;
  return a.g->op(std::move(out), {ia}, [ia, n, per](Graph& g, int id) {
    if (!g.node(ia).requires_grad) return;
    const Tensor& go = g.node(id).grad;
    Tensor& dst = g.grad_buf(ia);
    for (std::int64_t s = 0; s < n; ++s)
      for (std::int64_t i = 0; i < per; ++i) dst.v[std::size_t(s * per + i)] += go.v[std::size_t(s)];
  });
}

Var mean_channels(Var a) {
  const auto& sh = a.val().shape;
  if (sh.size() < 2) throw std::invalid_argument("mean_channels: need >= 2 dims");
  const std::int64_t n = sh[0], c = sh[1];
  const std::int64_t spatial = a.val().numel() / (n * c);
  const double inv = 1.0 / double(n * spatial);
  Tensor out({c});
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double* p = a.val().v.data() + (s * c + ch) * spatial;
      double acc = 0;
      for (std::int64_t i = 0; i < spatial; ++i) acc += p[i];
      out.v[std::size_t(ch)] += acc * inv;
    }
  const int ia = a.id;
  return a.g->op(std::move(out), {ia}, [ia, n, c, spatial, inv](Graph& g, int id) {
    if (!g.node(ia).requires_grad) return;
    const Tensor& go = g.node(id).grad;
    Tensor& dst = g.grad_buf(ia);
    for (std::int64_t s = 0; s < n; ++s)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double* p = dst.v.data() + (s * c + ch) * spatial;
        const double gx = go.v[std::size_t(ch)] * inv;
        for (std::int64_t i = 0; i < spatial; ++i) p[i] += gx;
      }
  });
}

Var bcast_channels(Var cvar, std::vector<std::int64_t> like_shape) {
  const std::int64_t c = cvar.val().shape[0];
  if (like_shape.size() < 2 || like_shape[1] != c)
    throw std::invalid_argument("bcast_channels: channel mismatch");
  const std::int64_t n = like_shape[0];
  const std::int64_t spatial = Tensor::numel_of(like_shape) / (n * c);
  Tensor out(like_shape);
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double* p = out.v.data() + (s * c + ch) * spatial;
      const double val = cvar.val().v[std::size_t(ch)];
      for (std::int64_t i = 0; i < spatial; ++i) p[i] = val;
    }
  const int ia = cvar.id;
  return cvar.g->op(std::move(out), {ia}, [ia, n, c, spatial](Graph& g, int id) {
    if (!g.node(ia).requires_grad) return;
    const Tensor& go = g.node(id).grad;
    Tensor& dst = g.grad_buf(ia);
    for (std::int64_t s = 0; s < n; ++s)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double* p = go.v.data() + (s * c + ch) * spatial;
        double acc = 0;
        for (std::int64_t i = 0; i < spatial; ++i) acc += p[i];
        dst.v[std::size_t(ch)] += acc;
      }
  });
}

Var concat_channels(Var a, Var b) {
  const auto& sa = a.val().shape;
  const auto& sb = b.val().shape;
  if (sa.size() != sb.size() || sa.size() < 2 || sa[0] != sb[0])
    throw std::invalid_argument("concat_channels: incompatible shapes");
  for (std::size_t i = 2; i < sa.size(); ++i)
    if (sa[i] != sb[i]) throw std::invalid_argument("concat_channels: spatial mismatch");
  const std::int64_t n = sa[0], ca = sa[1], cb = sb[1];
  const std::int64_t spatial = a.val().numel() / (n * ca);
  std::vector<std::int64_t> os = sa;
  os[1] = ca + cb;
  Tensor out(os);
  for (std::int64_t s = 0; s < n; ++s) {
    std::copy_n(a.val().v.data() + s * ca * spatial, std::size_t(ca * spatial),
                out.v.data() + s * (ca + cb) * spatial);
    std::copy_n(b.val().v.data() + s * cb * spatial, std::size_t(cb * spatial),
                out.v.data() + (s * (ca + cb) + ca) * spatial);
  }
  const int ia = a.id, ib = b.id;
  return a.g->op(std::move(out), {ia, ib}, [ia, ib, n, ca, cb, spatial](Graph& g, int id) {
    const Tensor& go = g.node(id).grad;
    if (g.node(ia).requires_grad) {
      Tensor& da = g.grad_buf(ia);
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t i = 0; i < ca * spatial; ++i)
          da.v[std::size_t(s * ca * spatial + i)] += go.v[std::size_t(s * (ca + cb) * spatial + i)];
    }
    if (g.node(ib).requires_grad) {
      Tensor& db = g.grad_buf(ib);
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t i = 0; i < cb * spatial; ++i)
          db.v[std::size_t(s * cb * spatial + i)] +=
              go.v[std::size_t((s * (ca + cb) + ca) * spatial + i)];
    }
  });
}

Var flatten2(Var a) {
  const auto& sh = a.val().shape;
  if (sh.size() < 2) throw std::invalid_argument("flatten2: need >= 2 dims");
  Tensor out({sh[0], a.val().numel() / sh[0]});
  out.v = a.val().v;
  const int ia = a.id;
  return a.g->op(std::move(out), {ia}, [ia](Graph& g, int id) {
    if (!g.node(ia).requires_grad) return;
    const Tensor& go = g.node(id).grad;
    Tensor& dst = g.grad_buf(ia);
    for (std::size_t i = 0; i < go.v.size(); ++i) dst.v[i] += go.v[i];
  });
}

Var reshape(Var a, std::vector<std::int64_t> shape) {
  if (Tensor::numel_of(shape) != a.val().numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out(std::move(shape));
  out.v = a.val().v;
  const int ia = a.id;
  return a.g->op(std::move(out), {ia}, [ia](Graph& g, int id) {
    if (!g.node(ia).requires_grad) return;
    const Tensor& go = g.node(id).grad;
    Tensor& dst = g.grad_buf(ia);
    for (std::size_t i = 0; i < go.v.size(); ++i) dst.v[i] += go.v[i];
  });
}

Var detach(Var a) { return a.g->constant(a.val()); }

}  // namespace adreg
