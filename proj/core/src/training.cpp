#include "adreg/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adreg/field_ops.hpp"
#include "adreg/rng.hpp"
#include "adreg/volume_ops.hpp"

namespace fs = std::filesystem;

namespace adreg {

std::string to_string(RegularizerMode m) {
  switch (m) {
    case RegularizerMode::adversarial: return "adversarial";
    case RegularizerMode::bending: return "bending";
    case RegularizerMode::l2grad: return "l2grad";
    case RegularizerMode::none: return "none";
  }
  return "?";
}

RegularizerMode regularizer_mode_from_string(const std::string& s) {
  if (s == "adversarial") return RegularizerMode::adversarial;
  if (s == "bending") return RegularizerMode::bending;
  if (s == "l2grad") return RegularizerMode::l2grad;
  if (s == "none") return RegularizerMode::none;
  throw std::invalid_argument("unknown regularizer_mode: " + s);
}

LossConfig TrainConfig::loss_config() const {
  LossConfig lc;
  lc.sigmas = sigmas;
  lc.lambda_adv = lambda_adv;
  lc.gamma_start = gamma_start;
  lc.gamma_end = gamma_end;
  lc.baseline_weight = baseline_weight;
  lc.epsilon_dice = epsilon_dice;
  return lc;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (total_steps < 0) throw std::invalid_argument("TrainConfig: total_steps must be >= 0");
  loss_config().validate();
  grid().validate();
  if (regularizer_mode == RegularizerMode::adversarial && sim_dir.empty())
    throw std::invalid_argument("TrainConfig: adversarial mode requires sim_dir");
  if (data_dir.empty()) throw std::invalid_argument("TrainConfig: data_dir is required");
  RegNetSpec rs;
  rs.n0 = n0;
  rs.levels = levels;
  rs.input_shape = grid_shape;
  rs.validate();
  aug_ranges.validate();
}

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) ss << ",";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    ss << buf;
  }
  return ss.str();
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
  return out;
}

std::string join_strings(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += v[i];
  }
  return out;
}

}  // namespace

std::string TrainConfig::to_text() const {
  std::ostringstream f;
  char buf[128];
  auto kv = [&](const char* k, const std::string& v) { f << k << " = " << v << "\n"; };
  auto kvd = [&](const char* k, double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    kv(k, buf);
  };
  kvd("learning_rate", learning_rate);
  kv("batch_size", std::to_string(batch_size));
  kv("total_steps", std::to_string(total_steps));
  kvd("lambda_adv", lambda_adv);
  kvd("gamma_start", gamma_start);
  kvd("gamma_end", gamma_end);
  kv("regularizer_mode", to_string(regularizer_mode));
  kvd("baseline_weight", baseline_weight);
  kv("seed", std::to_string(seed));
  kv("checkpoint_every", std::to_string(checkpoint_every));
  kv("grid_shape", std::to_string(grid_shape[0]) + "," + std::to_string(grid_shape[1]) + "," +
                       std::to_string(grid_shape[2]));
  kvd("grid_spacing", grid_spacing);
  kv("data_dir", data_dir);
  kv("sim_dir", sim_dir);
  kv("out_dir", out_dir);
  kv("n0", std::to_string(n0));
  kv("levels", std::to_string(levels));
  kv("sigmas", join_doubles(sigmas));
  kvd("epsilon_dice", epsilon_dice);
  kv("augment", augment ? "1" : "0");
  kvd("aug_rot_deg", aug_ranges.rot_deg);
  kvd("aug_scale_lo", aug_ranges.scale_lo);
  kvd("aug_scale_hi", aug_ranges.scale_hi);
  kvd("aug_shear", aug_ranges.shear);
  kvd("aug_trans_mm", aug_ranges.trans_mm);
  if (!case_ids.empty()) kv("case_ids", join_strings(case_ids));
  return f.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.erase(0, 1);
      while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.pop_back();
    };
    trim(key);
    trim(val);
    if (key == "learning_rate") c.learning_rate = std::stod(val);
    else if (key == "batch_size") c.batch_size = std::stoi(val);
    else if (key == "total_steps") c.total_steps = std::stoi(val);
    else if (key == "lambda_adv") c.lambda_adv = std::stod(val);
    else if (key == "gamma_start") c.gamma_start = std::stod(val);
    else if (key == "gamma_end") c.gamma_end = std::stod(val);
    else if (key == "regularizer_mode") c.regularizer_mode = regularizer_mode_from_string(val);
    else if (key == "baseline_weight") c.baseline_weight = std::stod(val);
    else if (key == "seed") c.seed = std::stoull(val);
    else if (key == "checkpoint_every") c.checkpoint_every = std::stoi(val);
    else if (key == "grid_shape") {
      const auto d = split_doubles(val);
      if (d.size() == 1) c.grid_shape = {std::int64_t(d[0]), std::int64_t(d[0]), std::int64_t(d[0])};
      else if (d.size() == 3) c.grid_shape = {std::int64_t(d[0]), std::int64_t(d[1]), std::int64_t(d[2])};
      else throw std::invalid_argument("grid_shape: need 1 or 3 values");
    } else if (key == "grid_spacing") c.grid_spacing = std::stod(val);
    else if (key == "data_dir") c.data_dir = val;
    else if (key == "sim_dir") c.sim_dir = val;
    else if (key == "out_dir") c.out_dir = val;
    else if (key == "n0") c.n0 = std::stoi(val);
    else if (key == "levels") c.levels = std::stoi(val);
    else if (key == "sigmas") c.sigmas = split_doubles(val);
    else if (key == "epsilon_dice") c.epsilon_dice = std::stod(val);
    else if (key == "augment") c.augment = val != "0" && val != "false";
    else if (key == "aug_rot_deg") c.aug_ranges.rot_deg = std::stod(val);
    else if (key == "aug_scale_lo") c.aug_ranges.scale_lo = std::stod(val);
    else if (key == "aug_scale_hi") c.aug_ranges.scale_hi = std::stod(val);
    else if (key == "aug_shear") c.aug_ranges.shear = std::stod(val);
    else if (key == "aug_trans_mm") c.aug_ranges.trans_mm = std::stod(val);
    else if (key == "case_ids") {
      std::stringstream ss(val);
      std::string tok;
      while (std::getline(ss, tok, ',')) c.case_ids.push_back(tok);
    } else {
      throw std::invalid_argument("TrainConfig: unknown key '" + key + "'");
    }
  }
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("TrainConfig::load: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str());
}

void TrainConfig::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("TrainConfig::save: cannot open " + path);
  f << to_text();
}

// ---- checkpoint -------------------------------------------------------------

void Checkpoint::save(const std::string& path) const {
  NamedArchive ar;
  ar.set_meta("reg.n0", std::to_string(reg_spec.n0));
  ar.set_meta("reg.levels", std::to_string(reg_spec.levels));
  ar.set_meta("dis.n0", std::to_string(dis_spec.n0));
  ar.set_meta("dis.levels", std::to_string(dis_spec.levels));
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.17g", dis_spec.leaky_slope);
  ar.set_meta("dis.leaky_slope", buf);
  std::snprintf(buf, sizeof buf, "%lld %lld %lld", (long long)grid.shape[0],
                (long long)grid.shape[1], (long long)grid.shape[2]);
  ar.set_meta("grid.shape", buf);
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", grid.spacing[0], grid.spacing[1],
                grid.spacing[2]);
  ar.set_meta("grid.spacing", buf);
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", grid.origin[0], grid.origin[1],
                grid.origin[2]);
  ar.set_meta("grid.origin", buf);
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g", stats.mean[0],
                stats.mean[1], stats.mean[2], stats.stdev[0], stats.stdev[1], stats.stdev[2]);
  ar.set_meta("norm_stats", buf);
  ar.set_meta("seed", std::to_string(seed));
  ar.set_meta("step", std::to_string(step));
  archive_paramset(ar, "reg.", reg_params);
  archive_paramset(ar, "dis.", dis_params);
  ar.save(path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  const NamedArchive ar = NamedArchive::load(path);
  Checkpoint c;
  auto meta_or = [&](const char* k) -> std::string {
    const std::string* v = ar.meta_value(k);
    if (!v) throw std::runtime_error(std::string("Checkpoint: missing meta ") + k);
    return *v;
  };
  c.reg_spec.n0 = std::stoi(meta_or("reg.n0"));
  c.reg_spec.levels = std::stoi(meta_or("reg.levels"));
  c.dis_spec.n0 = std::stoi(meta_or("dis.n0"));
  c.dis_spec.levels = std::stoi(meta_or("dis.levels"));
  c.dis_spec.leaky_slope = std::stod(meta_or("dis.leaky_slope"));
  {
    std::istringstream ss(meta_or("grid.shape"));
    ss >> c.grid.shape[0] >> c.grid.shape[1] >> c.grid.shape[2];
  }
  {
    std::istringstream ss(meta_or("grid.spacing"));
    ss >> c.grid.spacing[0] >> c.grid.spacing[1] >> c.grid.spacing[2];
  }
  {
    std::istringstream ss(meta_or("grid.origin"));
    ss >> c.grid.origin[0] >> c.grid.origin[1] >> c.grid.origin[2];
  }
  {
    std::istringstream ss(meta_or("norm_stats"));
    ss >> c.stats.mean[0] >> c.stats.mean[1] >> c.stats.mean[2] >> c.stats.stdev[0] >>
        c.stats.stdev[1] >> c.stats.stdev[2];
  }
  c.seed = std::stoull(meta_or("seed"));
  c.step = std::stoll(meta_or("step"));
  c.reg_spec.input_shape = c.grid.shape;
  c.dis_spec.input_shape = c.grid.shape;
  c.reg_params = unarchive_paramset(ar, "reg.");
  c.dis_params = unarchive_paramset(ar, "dis.");
  return c;
}

std::string StepLog::line() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "step=%lld loss_reg=%.17g loss_dis=%.17g loss_gen=%.17g gamma=%.17g "
                "reg_term=%.17g",
                (long long)step, loss_reg, loss_dis, loss_gen, gamma, reg_term);
  return buf;
}

// ---- optimizer ---------------------------------------------------------------

namespace {

void adam_step(ParamSet& ps, const FwdBinding& bind, std::vector<Tensor>& m,
               std::vector<Tensor>& v, std::int64_t& t, double lr, const char* net_name) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (m.empty()) {
    for (const auto& [name, p] : ps.params) {
      m.emplace_back(p.shape);
      v.emplace_back(p.shape);
    }
  }
  ++t;
  const double c1 = 1.0 - std::pow(b1, double(t));
  const double c2 = 1.0 - std::pow(b2, double(t));
  for (std::size_t i = 0; i < ps.params.size(); ++i) {
    auto& [name, p] = ps.params[i];
    const auto it = bind.cache.find(name);
    if (it == bind.cache.end()) throw std::logic_error("adam: unbound parameter " + name);
    const Tensor& gt = it->second.grad();
    const bool has_grad = !gt.shape.empty();
    for (std::size_t j = 0; j < p.v.size(); ++j) {
      const double g = has_grad ? gt.v[j] : 0.0;
      if (!std::isfinite(g))
        throw std::runtime_error(std::string("non-finite gradient in ") + net_name + ":" + name);
      m[i].v[j] = b1 * m[i].v[j] + (1 - b1) * g;
      v[i].v[j] = b2 * v[i].v[j] + (1 - b2) * g * g;
      const double mhat = m[i].v[j] / c1;
      const double vhat = v[i].v[j] / c2;
      p.v[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

Tensor batch_images(const std::vector<TrainSample>& batch, bool moving, const Grid3& g) {
  const std::int64_t sp = g.voxels();
  Tensor t({std::int64_t(batch.size()), 1, g.shape[2], g.shape[1], g.shape[0]});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& vals = moving ? batch[i].moving.values : batch[i].fixed.values;
    std::copy(vals.begin(), vals.end(), t.v.begin() + std::int64_t(i) * sp);
  }
  return t;
}

Tensor batch_labels(const std::vector<TrainSample>& batch, bool moving, const Grid3& g) {
  const std::int64_t sp = g.voxels();
  Tensor t({std::int64_t(batch.size()), 1, g.shape[2], g.shape[1], g.shape[0]});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& vals = moving ? batch[i].moving_gland.values : batch[i].fixed_gland.values;
    std::copy(vals.begin(), vals.end(), t.v.begin() + std::int64_t(i) * sp);
  }
  return t;
}

Tensor batch_fields(const std::vector<const DisplacementField*>& fields, const Grid3& g) {
  const std::int64_t per = 3 * g.voxels();
  Tensor t({std::int64_t(fields.size()), 3, g.shape[2], g.shape[1], g.shape[0]});
  for (std::size_t i = 0; i < fields.size(); ++i)
    std::copy(fields[i]->u.begin(), fields[i]->u.end(), t.v.begin() + std::int64_t(i) * per);
  return t;
}

// (u - mean) / std per component, as a graph op chain.
Var normalize_field_op(Var field, const NormStats& stats) {
  Graph& g = *field.g;
  Tensor mu({3}), inv({3});
  for (int c = 0; c < 3; ++c) {
    mu.v[std::size_t(c)] = stats.mean[std::size_t(c)];
    inv.v[std::size_t(c)] = 1.0 / stats.stdev[std::size_t(c)];
  }
  const std::vector<std::int64_t> sh = field.val().shape;
  return mul(sub(field, bcast_channels(g.constant(mu), sh)),
             bcast_channels(g.constant(inv), sh));
}

void check_finite(double v, const char* term, std::int64_t step) {
  if (!std::isfinite(v))
    throw std::runtime_error(std::string("non-finite ") + term + " at step " +
                             std::to_string(step));
}

}  // namespace

TrainState init_train_state(const TrainConfig& cfg, const NormStats& stats) {
  cfg.validate();
  TrainState st;
  st.cfg = cfg;
  RegNetSpec rs;
  rs.n0 = cfg.n0;
  rs.levels = cfg.levels;
  rs.input_shape = cfg.grid_shape;
  DiscNetSpec ds;
  ds.n0 = cfg.n0;
  ds.levels = cfg.levels;
  ds.input_shape = cfg.grid_shape;
  st.reg = RegNet::build(rs, Rng::derive(cfg.seed, 0x1e9));
  st.dis = Discriminator::build(ds, Rng::derive(cfg.seed, 0xd15));
  st.stats = stats;
  return st;
}

StepLog train_step(TrainState& state, const std::vector<TrainSample>& batch,
                   const std::vector<const DisplacementField*>& sim_batch) {
  const TrainConfig& cfg = state.cfg;
  if (int(batch.size()) < 1) throw std::invalid_argument("train_step: empty batch");
  if (cfg.regularizer_mode == RegularizerMode::adversarial && sim_batch.empty())
    throw std::invalid_argument("train_step: adversarial mode requires a sim batch");
  const Grid3 grid = cfg.grid();
  const LossConfig lc = cfg.loss_config();

  StepLog log;
  log.step = state.step;
  log.gamma = gamma_schedule(std::min(state.step, std::int64_t(cfg.total_steps)),
                             std::max<std::int64_t>(cfg.total_steps, 1), lc);

  // (1) registration forward on the augmented pairs
  Graph g;
  FwdBinding reg_bind;
  FwdCtx reg_ctx{&g, /*training=*/true, /*update_running=*/true, &reg_bind};
  Var moving = g.constant(batch_images(batch, true, grid));
  Var fixed = g.constant(batch_images(batch, false, grid));
  RegOut out = state.reg.forward(reg_ctx, moving, fixed);

  // (2)+(3) discriminator update on Eq. 2, registration parameters frozen
  if (cfg.regularizer_mode == RegularizerMode::adversarial) {
    Graph gd;
    FwdBinding dis_bind;
    FwdCtx dis_ctx{&gd, /*training=*/true, /*update_running=*/true, &dis_bind};
    DiscriminatorFns fns = state.dis.fns(dis_ctx);

    Tensor fake_vals = out.local.val();  // detach: theta_reg held fixed
    Var fake = normalize_field_op(gd.constant(std::move(fake_vals)), state.stats);
    Var real = gd.constant(batch_fields(sim_batch, grid));

    Var logits_real = fns.apply(real);
    Var logits_fake = fns.apply(fake);
    Var omega = smoothing_term_op(fns, fake, real, logits_fake, logits_real);
    Var l_dis = discriminator_loss_op(logits_real, logits_fake, omega, log.gamma);
    log.loss_dis = l_dis.val().item();
    check_finite(log.loss_dis, "discriminator loss", state.step);
    gd.backward(l_dis);
    adam_step(state.dis.params, dis_bind, state.dis_m, state.dis_v, state.dis_t,
              cfg.learning_rate, "dis");
  }

  // (4) registration update on Eq. 1 (+ lambda_adv Eq. 3 | baseline penalty)
  Var composed = compose_op(out.local, out.affine, grid);
  Var warped = warp_op(g.constant(batch_labels(batch, true, grid)), composed, grid);
  Var l_reg = registration_loss_op(warped, g.constant(batch_labels(batch, false, grid)), lc, grid);
  log.loss_reg = l_reg.val().item();
  check_finite(log.loss_reg, "registration loss", state.step);

  Var total = l_reg;
  if (cfg.regularizer_mode == RegularizerMode::adversarial) {
    Var fake_n = normalize_field_op(out.local, state.stats);
    FwdCtx gen_ctx{&g, /*training=*/true, /*update_running=*/false, /*bind=*/nullptr};
    Var logits = state.dis.forward(gen_ctx, fake_n);  // updated discriminator, frozen
    Var l_gen = generator_loss_op(logits);
    log.loss_gen = l_gen.val().item();
    check_finite(log.loss_gen, "generator loss", state.step);
    total = add(total, scale(l_gen, cfg.lambda_adv));
  } else if (cfg.regularizer_mode == RegularizerMode::bending) {
    Var be = bending_energy_op(out.local, grid);
    log.reg_term = be.val().item();
    check_finite(log.reg_term, "bending energy", state.step);
    total = add(total, scale(be, cfg.baseline_weight));
  } else if (cfg.regularizer_mode == RegularizerMode::l2grad) {
    Var l2 = l2_gradient_penalty_op(out.local, grid);
    log.reg_term = l2.val().item();
    check_finite(log.reg_term, "gradient penalty", state.step);
    total = add(total, scale(l2, cfg.baseline_weight));
  }

  g.backward(total);
  adam_step(state.reg.params, reg_bind, state.reg_m, state.reg_v, state.reg_t, cfg.learning_rate,
            "reg");
  ++state.step;
  return log;
}

namespace {

struct LoadedCase {
  Volume moving, fixed;
  LabelMap moving_gland, fixed_gland;
};

TrainSample augment_sample(const LoadedCase& c, const Grid3& grid, bool augment,
                           const AffineRanges& ranges, std::uint64_t seed_m,
                           std::uint64_t seed_f) {
  TrainSample s;
  if (!augment) {
    s.moving = c.moving;
    s.fixed = c.fixed;
    s.moving_gland = c.moving_gland;
    s.fixed_gland = c.fixed_gland;
    return s;
  }
  const DisplacementField dm = affine_to_ddf(random_affine(seed_m, ranges), grid);
  const DisplacementField df = affine_to_ddf(random_affine(seed_f, ranges), grid);
  s.moving = warp(c.moving, dm);
  s.moving_gland = warp(c.moving_gland, dm);
  s.fixed = warp(c.fixed, df);
  s.fixed_gland = warp(c.fixed_gland, df);
  return s;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  const Grid3 grid = cfg.grid();

  // dataset
  const Manifest manifest = Manifest::load((fs::path(cfg.data_dir) / "manifest.txt").string());
  std::vector<std::string> ids = cfg.case_ids.empty() ? manifest.ids : cfg.case_ids;
  if (ids.empty()) throw std::runtime_error("train: no cases");
  std::vector<LoadedCase> cases;
  for (const auto& id : ids) {
    PhantomCase pc = load_phantom_case(cfg.data_dir, id);
    if (pc.moving.grid != grid)
      throw std::runtime_error("train: case grid does not match config grid (" + id + ")");
    LoadedCase lc;
    lc.moving = normalize_intensity(pc.moving);
    lc.fixed = normalize_intensity(pc.fixed);
    lc.moving_gland = std::move(pc.moving_gland);
    lc.fixed_gland = std::move(pc.fixed_gland);
    cases.push_back(std::move(lc));
  }

  std::vector<DisplacementField> sims;
  NormStats stats;
  if (cfg.regularizer_mode == RegularizerMode::adversarial) {
    sims = load_sim_dataset(cfg.sim_dir);
    stats = load_norm_stats((fs::path(cfg.sim_dir) / "norm_stats").string());
    for (const auto& s : sims)
      if (s.grid != grid) throw std::runtime_error("train: sim grid does not match config grid");
  }

  TrainState state = init_train_state(cfg, stats);

  fs::create_directories(cfg.out_dir);
  const std::string metrics_path = (fs::path(cfg.out_dir) / "metrics.log").string();
  std::ofstream metrics(metrics_path);
  if (!metrics) throw std::runtime_error("train: cannot open " + metrics_path);

  auto make_checkpoint = [&]() {
    Checkpoint ck;
    ck.reg_spec = state.reg.spec;
    ck.reg_params = state.reg.params;
    ck.dis_spec = state.dis.spec;
    ck.dis_params = state.dis.params;
    ck.grid = grid;
    ck.stats = state.stats;
    ck.seed = cfg.seed;
    ck.step = state.step;
    return ck;
  };

  TrainResult result;
  for (int step = 0; step < cfg.total_steps; ++step) {
    std::vector<TrainSample> batch;
    for (int j = 0; j < cfg.batch_size; ++j) {
      const std::uint64_t tag = std::uint64_t(step) * std::uint64_t(cfg.batch_size) + std::uint64_t(j);
      const std::size_t pick =
          std::size_t(Rng::derive(cfg.seed ^ 0xba7c4ull, tag) % cases.size());
      batch.push_back(augment_sample(cases[pick], grid, cfg.augment, cfg.aug_ranges,
                                     Rng::derive(cfg.seed ^ 0xa09111ull, tag),
                                     Rng::derive(cfg.seed ^ 0xa09f12ull, tag)));
    }
    std::vector<const DisplacementField*> sim_batch;
    if (cfg.regularizer_mode == RegularizerMode::adversarial) {
      for (int j = 0; j < cfg.batch_size; ++j) {
        const std::uint64_t tag =
            std::uint64_t(step) * std::uint64_t(cfg.batch_size) + std::uint64_t(j);
        sim_batch.push_back(
            &sims[std::size_t(Rng::derive(cfg.seed ^ 0x51b47ull, tag) % sims.size())]);
      }
    }
    const StepLog log = train_step(state, batch, sim_batch);
    metrics << log.line() << "\n";
    result.log.push_back(log);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.total_steps) {
      make_checkpoint().save(
          (fs::path(cfg.out_dir) / ("ckpt_" + std::to_string(step + 1) + ".ckpt")).string());
    }
  }
  metrics.close();

  result.checkpoint = make_checkpoint();
  result.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.ckpt").string();
  result.checkpoint.save(result.checkpoint_path);
  result.metrics_path = metrics_path;
  return result;
}

Registration register_pair(Checkpoint& ckpt, const Volume& moving, const Volume& fixed) {
  if (moving.grid != ckpt.grid || fixed.grid != ckpt.grid)
    throw std::invalid_argument("register_pair: images must be resampled to the checkpoint grid");
  RegNet net;
  net.spec = ckpt.reg_spec;
  net.params = ckpt.reg_params;

  const Volume mn = normalize_intensity(moving);
  const Volume fn = normalize_intensity(fixed);

  Graph g;
  FwdCtx ctx{&g, /*training=*/false, /*update_running=*/false, /*bind=*/nullptr};
  Var mv = g.constant(scalar_to_tensor(mn.values, ckpt.grid));
  Var fv = g.constant(scalar_to_tensor(fn.values, ckpt.grid));
  RegOut out = net.forward(ctx, mv, fv);

  Registration r;
  r.local = tensor_to_field(out.local.val(), ckpt.grid);
  for (int i = 0; i < 12; ++i) r.affine.p[std::size_t(i)] = out.affine.val().v[std::size_t(i)];
  r.composed = compose(r.local, r.affine);
  r.warped = warp(moving, r.composed);
  return r;
}

}  // namespace adreg
