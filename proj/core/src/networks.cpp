#include "adreg/networks.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "adreg/rng.hpp"

namespace adreg {

namespace {

void check_divisible(const std::array<std::int64_t, 3>& shape, int levels, const char* who) {
  const std::int64_t div = std::int64_t(1) << levels;
  for (int a = 0; a < 3; ++a)
    if (shape[std::size_t(a)] % div != 0)
      throw std::invalid_argument(std::string(who) + ": input shape must be divisible by 2^levels");
}

}  // namespace

void RegNetSpec::validate() const {
  if (n0 < 4) throw std::invalid_argument("RegNetSpec: n0 must be >= 4");
  if (levels < 1 || levels > 6) throw std::invalid_argument("RegNetSpec: levels out of range");
  check_divisible(input_shape, levels, "RegNetSpec");
}

void DiscNetSpec::validate() const {
  if (n0 < 4) throw std::invalid_argument("DiscNetSpec: n0 must be >= 4");
  if (levels < 1 || levels > 6) throw std::invalid_argument("DiscNetSpec: levels out of range");
  if (!(leaky_slope > 0) || leaky_slope >= 1)
    throw std::invalid_argument("DiscNetSpec: leaky slope must be in (0,1)");
  check_divisible(input_shape, levels, "DiscNetSpec");
}

Tensor* ParamSet::find_param(const std::string& name) {
  for (auto& [n, t] : params)
    if (n == name) return &t;
  return nullptr;
}
const Tensor* ParamSet::find_param(const std::string& name) const {
  for (auto& [n, t] : params)
    if (n == name) return &t;
  return nullptr;
}
Tensor* ParamSet::find_buffer(const std::string& name) {
  for (auto& [n, t] : buffers)
    if (n == name) return &t;
  return nullptr;
}
const Tensor* ParamSet::find_buffer(const std::string& name) const {
  for (auto& [n, t] : buffers)
    if (n == name) return &t;
  return nullptr;
}

std::uint64_t ParamSet::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [n, t] : params) {
    h = fnv1a64(n.data(), n.size(), h);
    h = fnv1a64(t.v.data(), t.v.size() * sizeof(double), h);
  }
  return h;
}

std::int64_t count_parameters(const ParamSet& ps) {
  std::int64_t n = 0;
  for (const auto& [name, t] : ps.params) n += t.numel();
  return n;
}

namespace {

// --- parameter construction ------------------------------------------------

void add_conv(ParamSet& ps, Rng& rng, const std::string& name, int cin, int cout, int k,
              bool zero_init = false) {
  Tensor w({cout, cin, k, k, k});
  if (!zero_init) {
    const double sd = std::sqrt(2.0 / double(cin * k * k * k));
    for (double& v : w.v) v = sd * rng.normal();
  }
  ps.params.emplace_back(name + ".w", std::move(w));
  ps.params.emplace_back(name + ".b", Tensor({cout}));
}

void add_deconv(ParamSet& ps, Rng& rng, const std::string& name, int cin, int cout) {
  Tensor w({cin, cout, 3, 3, 3});
  const double sd = std::sqrt(2.0 / double(cin * 27));
  for (double& v : w.v) v = sd * rng.normal();
  ps.params.emplace_back(name + ".w", std::move(w));
  ps.params.emplace_back(name + ".b", Tensor({cout}));
}

void add_bn(ParamSet& ps, const std::string& name, int c) {
  Tensor g({c}), b({c}), rm({c}), rv({c});
  for (double& v : g.v) v = 1.0;
  for (double& v : rv.v) v = 1.0;
  ps.params.emplace_back(name + ".g", std::move(g));
  ps.params.emplace_back(name + ".b", std::move(b));
  ps.buffers.emplace_back(name + ".rm", std::move(rm));
  ps.buffers.emplace_back(name + ".rv", std::move(rv));
}

void add_fc(ParamSet& ps, Rng& rng, const std::string& name, int fin, int fout, bool zero_init,
            const std::vector<double>& bias_init = {}) {
  Tensor w({fout, fin});
  if (!zero_init) {
    const double sd = std::sqrt(1.0 / double(fin));
    for (double& v : w.v) v = sd * rng.normal();
  }
  Tensor b({fout});
  if (!bias_init.empty()) b.v = bias_init;
  ps.params.emplace_back(name + ".w", std::move(w));
  ps.params.emplace_back(name + ".b", std::move(b));
}

// --- forward helpers --------------------------------------------------------

struct Bind {
  FwdCtx& ctx;
  ParamSet& ps;

  Var operator()(const std::string& name) {
    if (ctx.bind) {
      auto it = ctx.bind->cache.find(name);
      if (it != ctx.bind->cache.end()) return it->second;
    }
    Tensor* t = ps.find_param(name);
    if (!t) throw std::logic_error("missing parameter: " + name);
    Var v = ctx.g->leaf(*t, ctx.bind != nullptr);
    if (ctx.bind) ctx.bind->cache.emplace(name, v);
    return v;
  }
};

Var bn_layer(FwdCtx& ctx, ParamSet& ps, Bind& P, const std::string& name, Var x) {
  Var gamma = P(name + ".g"), beta = P(name + ".b");
  if (ctx.training) {
    BnResult r = batchnorm_train(x, gamma, beta);
    if (ctx.update_running) {
      Tensor* rm = ps.find_buffer(name + ".rm");
      Tensor* rv = ps.find_buffer(name + ".rv");
      constexpr double m = 0.1;
      for (std::size_t i = 0; i < rm->v.size(); ++i) {
        rm->v[i] = (1 - m) * rm->v[i] + m * r.batch_mean.v[i];
        rv->v[i] = (1 - m) * rv->v[i] + m * r.batch_var.v[i];
      }
    }
    return r.y;
  }
  return batchnorm_eval(x, gamma, beta, *ps.find_buffer(name + ".rm"),
                        *ps.find_buffer(name + ".rv"));
}

DualVar bn_layer_dual(FwdCtx& ctx, ParamSet& ps, Bind& P, const std::string& name, DualVar x) {
  Var gamma = P(name + ".g"), beta = P(name + ".b");
  if (ctx.training) return batchnorm_train_dual(x, gamma, beta);
  Var y = batchnorm_eval(x.p, gamma, beta, *ps.find_buffer(name + ".rm"),
                         *ps.find_buffer(name + ".rv"));
  // eval-mode BN is a per-channel affine map; the tangent sees only the scale
  Tensor sc = *ps.find_buffer(name + ".rv");
  for (std::size_t i = 0; i < sc.v.size(); ++i) sc.v[i] = 1.0 / std::sqrt(sc.v[i] + 1e-5);
  const std::vector<std::int64_t> tsh = x.t.val().shape;
  Var scale_b = bcast_channels(mul(ctx.g->constant(sc), gamma), tsh);
  return {y, mul(x.t, scale_b)};
}

// Pre-activation residual block with stride-2 first conv and 1x1x1
// projection shortcut.
Var res_down(FwdCtx& ctx, ParamSet& ps, Bind& P, const std::string& name, Var x, double slope) {
  Var h = bn_layer(ctx, ps, P, name + ".bn1", x);
  h = lrelu(h, slope);
  h = conv3d(h, P(name + ".conv1.w"), P(name + ".conv1.b"), 2);
  h = bn_layer(ctx, ps, P, name + ".bn2", h);
  h = lrelu(h, slope);
  h = conv3d(h, P(name + ".conv2.w"), P(name + ".conv2.b"), 1);
  Var s = conv3d(x, P(name + ".proj.w"), P(name + ".proj.b"), 2);
  return add(h, s);
}

DualVar res_down_dual(FwdCtx& ctx, ParamSet& ps, Bind& P, const std::string& name, DualVar x,
                      double slope) {
  DualVar h = bn_layer_dual(ctx, ps, P, name + ".bn1", x);
  h = lrelu_dual(h, slope);
  h = conv3d_dual(h, P(name + ".conv1.w"), P(name + ".conv1.b"), 2);
  h = bn_layer_dual(ctx, ps, P, name + ".bn2", h);
  h = lrelu_dual(h, slope);
  h = conv3d_dual(h, P(name + ".conv2.w"), P(name + ".conv2.b"), 1);
  Var none;
  DualVar s = conv3d_dual(x, P(name + ".proj.w"), P(name + ".proj.b"), 2);
  (void)none;
  return {add(h.p, s.p), add(h.t, s.t)};
}

// Identity-shortcut residual refinement block.
Var res_same(FwdCtx& ctx, ParamSet& ps, Bind& P, const std::string& name, Var x, double slope) {
  Var h = bn_layer(ctx, ps, P, name + ".bn1", x);
  h = lrelu(h, slope);
  h = conv3d(h, P(name + ".conv1.w"), P(name + ".conv1.b"), 1);
  h = bn_layer(ctx, ps, P, name + ".bn2", h);
  h = lrelu(h, slope);
  h = conv3d(h, P(name + ".conv2.w"), P(name + ".conv2.b"), 1);
  return add(h, x);
}

void add_res_down(ParamSet& ps, Rng& rng, const std::string& name, int cin, int cout) {
  add_bn(ps, name + ".bn1", cin);
  add_conv(ps, rng, name + ".conv1", cin, cout, 3);
  add_bn(ps, name + ".bn2", cout);
  add_conv(ps, rng, name + ".conv2", cout, cout, 3);
  add_conv(ps, rng, name + ".proj", cin, cout, 1);
}

void add_res_same(ParamSet& ps, Rng& rng, const std::string& name, int c) {
  add_bn(ps, name + ".bn1", c);
  add_conv(ps, rng, name + ".conv1", c, c, 3);
  add_bn(ps, name + ".bn2", c);
  add_conv(ps, rng, name + ".conv2", c, c, 3);
}

std::array<std::int64_t, 3> dhw_at(const std::array<std::int64_t, 3>& input_shape, int level) {
  // tensor spatial dims are (D=z, H=y, W=x)
  return {input_shape[2] >> level, input_shape[1] >> level, input_shape[0] >> level};
}

}  // namespace

RegNet RegNet::build(const RegNetSpec& spec, std::uint64_t seed) {
  spec.validate();
  RegNet net;
  net.spec = spec;
  net.params.init_seed = seed;
  Rng rng(seed);
  ParamSet& ps = net.params;
  const int L = spec.levels;

  add_conv(ps, rng, "enc0.conv", 2, spec.channels(0), 3);
  add_bn(ps, "enc0.bn", spec.channels(0));
  for (int k = 1; k <= L; ++k)
    add_res_down(ps, rng, "down" + std::to_string(k), spec.channels(k - 1), spec.channels(k));
  for (int k = L - 1; k >= 0; --k) {
    add_deconv(ps, rng, "up" + std::to_string(k) + ".deconv", spec.channels(k + 1),
               spec.channels(k));
    add_res_same(ps, rng, "dec" + std::to_string(k), spec.channels(k));
  }
  // displacement summands: zero-initialized so a fresh network is an
  // identity warp
  for (int k = L; k >= 0; --k)
    add_conv(ps, rng, "ddf" + std::to_string(k), spec.channels(k), 3, 3, /*zero_init=*/true);
  add_res_same(ps, rng, "aff.res", spec.channels(L));
  add_fc(ps, rng, "aff.fc", spec.channels(L), 12, /*zero_init=*/true,
         {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
  return net;
}

RegOut RegNet::forward(FwdCtx ctx, Var moving, Var fixed) {
  const auto& sh = moving.val().shape;
  if (sh.size() != 5 || sh[1] != 1 || !moving.val().same_shape(fixed.val()))
    throw std::invalid_argument("RegNet::forward: inputs must be matching [N,1,D,H,W]");
  if (sh[2] != spec.input_shape[2] || sh[3] != spec.input_shape[1] || sh[4] != spec.input_shape[0])
    throw std::invalid_argument("RegNet::forward: input shape does not match spec");
  Bind P{ctx, params};
  const int L = spec.levels;
  const double slope = 0.0;  // plain relu in the registration network

  Var x = concat_channels(moving, fixed);
  std::vector<Var> enc;
  Var e0 = conv3d(x, P("enc0.conv.w"), P("enc0.conv.b"), 1);
  e0 = relu(bn_layer(ctx, params, P, "enc0.bn", e0));
  enc.push_back(e0);
  for (int k = 1; k <= L; ++k)
    enc.push_back(res_down(ctx, params, P, "down" + std::to_string(k), enc.back(), slope));

  const auto full = dhw_at(spec.input_shape, 0);
  std::vector<Var> summands;
  summands.push_back(resize_trilinear(
      conv3d(enc[std::size_t(L)], P("ddf" + std::to_string(L) + ".w"),
             P("ddf" + std::to_string(L) + ".b"), 1),
      full));

  Var d = enc[std::size_t(L)];
  for (int k = L - 1; k >= 0; --k) {
    Var up = deconv3d_x2(d, P("up" + std::to_string(k) + ".deconv.w"),
                         P("up" + std::to_string(k) + ".deconv.b"));
    Var au = channel_group_sum(resize_trilinear(d, dhw_at(spec.input_shape, k)), 2);
    d = add(add(up, au), enc[std::size_t(k)]);
    d = res_same(ctx, params, P, "dec" + std::to_string(k), d, slope);
    summands.push_back(resize_trilinear(
        conv3d(d, P("ddf" + std::to_string(k) + ".w"), P("ddf" + std::to_string(k) + ".b"), 1),
        full));
  }

  Var local = summands[0];
  for (std::size_t i = 1; i < summands.size(); ++i) local = add(local, summands[i]);

  Var ah = res_same(ctx, params, P, "aff.res", enc[std::size_t(L)], slope);
  Var affine = linear(global_avg_pool(ah), P("aff.fc.w"), P("aff.fc.b"));
  return {local, affine};
}

Discriminator Discriminator::build(const DiscNetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Discriminator net;
  net.spec = spec;
  net.params.init_seed = seed;
  Rng rng(seed);
  ParamSet& ps = net.params;
  const int L = spec.levels;

  add_conv(ps, rng, "in.conv", 3, spec.channels(0), 3);  // no BN on the first layer
  for (int k = 1; k <= L; ++k)
    add_res_down(ps, rng, "down" + std::to_string(k), spec.channels(k - 1), spec.channels(k));
  const auto bottom = dhw_at(spec.input_shape, L);
  const int fin = spec.channels(L) * int(bottom[0] * bottom[1] * bottom[2]);
  add_fc(ps, rng, "fc", fin, 1, false);
  return net;
}

Var Discriminator::forward(FwdCtx ctx, Var field) {
  const std::vector<std::int64_t> sh = field.val().shape;
  if (sh.size() != 5 || sh[1] != 3)
    throw std::invalid_argument("Discriminator::forward: input must be [N,3,D,H,W]");
  if (sh[2] != spec.input_shape[2] || sh[3] != spec.input_shape[1] || sh[4] != spec.input_shape[0])
    throw std::invalid_argument("Discriminator::forward: input shape does not match spec");
  Bind P{ctx, params};
  const int L = spec.levels;

  Var h = lrelu(conv3d(field, P("in.conv.w"), P("in.conv.b"), 1), spec.leaky_slope);
  for (int k = 1; k <= L; ++k)
    h = res_down(ctx, params, P, "down" + std::to_string(k), h, spec.leaky_slope);
  Var logit = linear(flatten2(h), P("fc.w"), P("fc.b"));
  return reshape(logit, {sh[0]});
}

DualVar Discriminator::forward_dual(FwdCtx ctx, DualVar field) {
  const std::vector<std::int64_t> sh = field.p.val().shape;
  if (sh.size() != 5 || sh[1] != 3)
    throw std::invalid_argument("Discriminator::forward_dual: input must be [N,3,D,H,W]");
  Bind P{ctx, params};
  const int L = spec.levels;

  DualVar h = conv3d_dual(field, P("in.conv.w"), P("in.conv.b"), 1);
  h = lrelu_dual(h, spec.leaky_slope);
  for (int k = 1; k <= L; ++k)
    h = res_down_dual(ctx, params, P, "down" + std::to_string(k), h, spec.leaky_slope);
  DualVar logit = linear_dual(flatten2_dual(h), P("fc.w"), P("fc.b"));
  return {reshape(logit.p, {sh[0]}), reshape(logit.t, {sh[0]})};
}

Tensor Discriminator::input_gradient(const Tensor& batch, bool training) {
  Graph g;
  Var x = g.leaf(batch, /*requires_grad=*/true);
  FwdCtx ctx{&g, training, /*update_running=*/false, /*bind=*/nullptr};
  Var logits = forward(ctx, x);
  g.backward(sum_all(logits));
  return x.grad();
}

DiscriminatorFns Discriminator::fns(FwdCtx ctx) {
  DiscriminatorFns f;
  f.apply = [this, ctx](Var x) mutable { return forward(ctx, x); };
  f.apply_dual = [this, ctx](DualVar x) mutable {
    FwdCtx c = ctx;
    c.update_running = false;  // tangent passes must not disturb statistics
    return forward_dual(c, x);
  };
  f.input_grad = [this, ctx](const Tensor& batch) {
    return input_gradient(batch, ctx.training);
  };
  return f;
}

// ---- archive ---------------------------------------------------------------

void NamedArchive::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : meta)
    if (k == key) {
      v = value;
      return;
    }
  meta.emplace_back(key, value);
}

const std::string* NamedArchive::meta_value(const std::string& key) const {
  for (auto& [k, v] : meta)
    if (k == key) return &v;
  return nullptr;
}

const Tensor* NamedArchive::find(const std::string& name) const {
  for (auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void NamedArchive::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("NamedArchive::save: cannot open " + path);
  f << "adreg ckpt v1\n";
  for (const auto& [k, v] : meta) f << "meta " << k << " " << v << "\n";
  for (const auto& [name, t] : tensors) {
    f << "tensor " << name << " " << t.shape.size();
    for (auto d : t.shape) f << " " << d;
    f << "\n";
  }
  f << "end\n";
  for (const auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t.v.data()), std::streamsize(t.v.size() * sizeof(double)));
  if (!f) throw std::runtime_error("NamedArchive::save: write failed for " + path);
}

NamedArchive NamedArchive::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("NamedArchive::load: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "adreg ckpt v1")
    throw std::runtime_error("NamedArchive::load: bad magic in " + path);
  NamedArchive ar;
  while (std::getline(f, line)) {
    if (line == "end") break;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "meta") {
      std::string k, v;
      ss >> k;
      std::getline(ss, v);
      if (!v.empty() && v[0] == ' ') v.erase(0, 1);
      ar.meta.emplace_back(k, v);
    } else if (tag == "tensor") {
      std::string name;
      std::size_t nd = 0;
      ss >> name >> nd;
      std::vector<std::int64_t> shape(nd);
      for (auto& d : shape) ss >> d;
      if (!ss) throw std::runtime_error("NamedArchive::load: malformed tensor line");
      ar.tensors.emplace_back(name, Tensor(shape));
    } else {
      throw std::runtime_error("NamedArchive::load: unexpected line: " + line);
    }
  }
  for (auto& [name, t] : ar.tensors) {
    f.read(reinterpret_cast<char*>(t.v.data()), std::streamsize(t.v.size() * sizeof(double)));
    if (!f) throw std::runtime_error("NamedArchive::load: truncated payload in " + path);
  }
  return ar;
}

void archive_paramset(NamedArchive& ar, const std::string& prefix, const ParamSet& ps) {
  for (const auto& [n, t] : ps.params) ar.tensors.emplace_back(prefix + "p." + n, t);
  for (const auto& [n, t] : ps.buffers) ar.tensors.emplace_back(prefix + "b." + n, t);
  ar.set_meta(prefix + "seed", std::to_string(ps.init_seed));
}

ParamSet unarchive_paramset(const NamedArchive& ar, const std::string& prefix) {
  ParamSet ps;
  for (const auto& [n, t] : ar.tensors) {
    if (n.rfind(prefix + "p.", 0) == 0)
      ps.params.emplace_back(n.substr(prefix.size() + 2), t);
    else if (n.rfind(prefix + "b.", 0) == 0)
      ps.buffers.emplace_back(n.substr(prefix.size() + 2), t);
  }
  if (const std::string* s = ar.meta_value(prefix + "seed")) ps.init_seed = std::stoull(*s);
  return ps;
}

}  // namespace adreg
