#include "adreg/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adreg/rng.hpp"
#include "adreg/vol_io.hpp"

namespace fs = std::filesystem;

namespace adreg {

void SurrogateConfig::validate() const {
  auto range_ok = [](double lo, double hi) { return lo >= 0 && hi >= lo; };
  if (!range_ok(probe_radius_min, probe_radius_max) || !range_ok(balloon_min, balloon_max) ||
      !range_ok(indent_min, indent_max) || !range_ok(gland_semiaxis_min, gland_semiaxis_max) ||
      !range_ok(stiffness_min, stiffness_max))
    throw std::invalid_argument("SurrogateConfig: ranges must be nonnegative and ordered");
  if (entry_cone_deg < 0 || entry_cone_deg > 80)
    throw std::invalid_argument("SurrogateConfig: entry cone out of range");
  if (indent_max > probe_radius_max + balloon_max)
    throw std::invalid_argument("SurrogateConfig: indentation exceeds probe radius + balloon");
  grid.validate();
}

namespace {

struct EllipsoidDraw {
  std::array<double, 3> center;
  std::array<double, 3> semi;
};

double ellipsoid_rho(const EllipsoidDraw& e, double x, double y, double z) {
  const double a = (x - e.center[0]) / e.semi[0];
  const double b = (y - e.center[1]) / e.semi[1];
  const double c = (z - e.center[2]) / e.semi[2];
  return std::sqrt(a * a + b * b + c * c);
}

LabelMap rasterize_ellipsoid(const Grid3& g, const EllipsoidDraw& e) {
  LabelMap l(g, LabelKind::gland);
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const auto w = g.world(x, y, z);
        l.at(x, y, z) = ellipsoid_rho(e, w[0], w[1], w[2]) <= 1.0 ? 1.0 : 0.0;
      }
  return l;
}

// Smooth taper to exactly zero on the domain faces (margin of 3 voxels).
double boundary_taper(const Grid3& g, const std::array<double, 3>& w) {
  double t = 1.0;
  const auto lo = g.cell_min(), hi = g.cell_max();
  for (int a = 0; a < 3; ++a) {
    const double margin = 3.0 * g.spacing[std::size_t(a)];
    const double d = std::min(w[std::size_t(a)] - lo[std::size_t(a)],
                              hi[std::size_t(a)] - w[std::size_t(a)]);
    double s = d / margin;
    s = std::clamp(s, 0.0, 1.0);
    t *= s * s * (3.0 - 2.0 * s);  // smoothstep
  }
  return t;
}

}  // namespace

SimSample simulate_probe_deformation(const SurrogateConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(Rng::derive(cfg.seed, seed));
  const Grid3& g = cfg.grid;

  EllipsoidDraw gl;
  const auto lo = g.cell_min(), hi = g.cell_max();
  for (int a = 0; a < 3; ++a) {
    gl.center[std::size_t(a)] = 0.5 * (lo[std::size_t(a)] + hi[std::size_t(a)]) +
                                rng.uniform(-1.0, 1.0) * g.spacing[std::size_t(a)];
    gl.semi[std::size_t(a)] = rng.uniform(cfg.gland_semiaxis_min, cfg.gland_semiaxis_max);
  }

  const double probe_r = rng.uniform(cfg.probe_radius_min, cfg.probe_radius_max);
  const double balloon = rng.uniform(cfg.balloon_min, cfg.balloon_max);
  double indent = rng.uniform(cfg.indent_min, cfg.indent_max);
  indent = std::min(indent, probe_r + balloon);
  const double stiffness = rng.uniform(cfg.stiffness_min, cfg.stiffness_max);

  // entry direction: cone around +y (probe approaches from the -y face)
  const double cone = cfg.entry_cone_deg * 3.14159265358979323846 / 180.0;
  const double theta = rng.uniform(0.0, cone);
  const double phi = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const std::array<double, 3> dir{std::sin(theta) * std::cos(phi), std::cos(theta),
                                  std::sin(theta) * std::sin(phi)};

  // contact point just outside the gland surface along -dir
  const double rd = 1.0 / std::sqrt(dir[0] * dir[0] / (gl.semi[0] * gl.semi[0]) +
                                    dir[1] * dir[1] / (gl.semi[1] * gl.semi[1]) +
                                    dir[2] * dir[2] / (gl.semi[2] * gl.semi[2]));
  const std::array<double, 3> contact{gl.center[0] - dir[0] * rd, gl.center[1] - dir[1] * rd,
                                      gl.center[2] - dir[2] * rd};
  const double reff = probe_r + balloon;

  DisplacementField field(g);
  const std::int64_t n = g.voxels();
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const std::int64_t i = g.index(x, y, z);
        const auto w = g.world(x, y, z);
        const double dx = w[0] - contact[0], dy = w[1] - contact[1], dz = w[2] - contact[2];
        const double r2 = dx * dx + dy * dy + dz * dz;
        const double bump = std::exp(-0.5 * r2 / (reff * reff));
        const double rho = ellipsoid_rho(gl, w[0], w[1], w[2]);
        const double inside = 1.0 / (1.0 + std::exp((rho - 1.0) / 0.15));
        const double soften = 1.0 - (1.0 - stiffness) * inside;
        const double mag = -indent * bump * soften * boundary_taper(g, w);
        field.u[std::size_t(i)] = mag * dir[0];
        field.u[std::size_t(n + i)] = mag * dir[1];
        field.u[std::size_t(2 * n + i)] = mag * dir[2];
      }

  // gland in deformed configuration (resampling convention)
  LabelMap undeformed = rasterize_ellipsoid(g, gl);
  LabelMap deformed = warp(undeformed, field);
  for (double& v : deformed.values) v = v >= 0.5 ? 1.0 : 0.0;

  SimSample s;
  s.field = std::move(field);
  s.gland = std::move(deformed);
  s.seed = seed;
  s.drawn = {gl.semi[0],  gl.semi[1], gl.semi[2], gl.center[0], gl.center[1], gl.center[2],
             probe_r,     balloon,    indent,     dir[0],       dir[1],       dir[2],
             stiffness};
  return s;
}

DisplacementField prep_sim_sample(const SimSample& s, const std::vector<LabelMap>& fixed_gland_pool,
                                  const Grid3& train_grid, std::uint64_t seed,
                                  const AffineRanges& aug, const NormStats* stats) {
  if (fixed_gland_pool.empty()) throw std::invalid_argument("prep_sim_sample: empty gland pool");
  Rng rng(Rng::derive(seed, 0x51D));
  const std::size_t pick = std::size_t(rng.next_u64() % fixed_gland_pool.size());

  const BBox3 src = label_bbox(s.gland);
  const BBox3 dst = label_bbox(fixed_gland_pool[pick]);
  DisplacementField fov = resample_ddf_to_fov(s.field, src, train_grid, dst);

  const AffineParams a = random_affine(Rng::derive(seed, 0xA06), aug);
  DisplacementField augmented = compose(fov, a);

  Decomposition dec = decompose_ddf(augmented, nullptr);
  // second exact pass: least-squares orthogonality makes the best-fit affine
  // of the result the identity to solver precision
  DisplacementField local = remove_affine_pointwise(dec.local).local;

  if (stats) apply_norm_stats(local, *stats);
  return local;
}

NormStats compute_norm_stats(const std::vector<DisplacementField>& prepared) {
  if (prepared.size() < 2) throw std::invalid_argument("compute_norm_stats: need >= 2 fields");
  NormStats st;
  std::array<double, 3> sum{0, 0, 0}, sq{0, 0, 0};
  std::int64_t count = 0;
  for (const auto& d : prepared) {
    const std::int64_t n = d.grid.voxels();
    for (int c = 0; c < 3; ++c) {
      const double* p = d.comp(c);
      for (std::int64_t i = 0; i < n; ++i) {
        sum[std::size_t(c)] += p[i];
        sq[std::size_t(c)] += p[i] * p[i];
      }
    }
    count += n;
  }
  st.count = count;
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[std::size_t(c)] / double(count);
    const double var = sq[std::size_t(c)] / double(count) - mean * mean;
    if (var <= 0.0)
      throw std::runtime_error("compute_norm_stats: zero variance in component " +
                               std::to_string(c));
    st.mean[std::size_t(c)] = mean;
    st.stdev[std::size_t(c)] = std::sqrt(var);
  }
  return st;
}

void apply_norm_stats(DisplacementField& d, const NormStats& stats) {
  const std::int64_t n = d.grid.voxels();
  for (int c = 0; c < 3; ++c) {
    double* p = d.comp(c);
    const double mu = stats.mean[std::size_t(c)], sd = stats.stdev[std::size_t(c)];
    for (std::int64_t i = 0; i < n; ++i) p[i] = (p[i] - mu) / sd;
  }
}

void save_norm_stats(const NormStats& s, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_norm_stats: cannot open " + path);
  char buf[256];
  f << "adreg norm_stats v1\n";
  std::snprintf(buf, sizeof buf, "mean: %.17g %.17g %.17g\n", s.mean[0], s.mean[1], s.mean[2]);
  f << buf;
  std::snprintf(buf, sizeof buf, "std: %.17g %.17g %.17g\n", s.stdev[0], s.stdev[1], s.stdev[2]);
  f << buf;
  f << "count: " << s.count << "\n";
}

NormStats load_norm_stats(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_norm_stats: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "adreg norm_stats v1")
    throw std::runtime_error("load_norm_stats: bad header in " + path);
  NormStats s;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "mean:") ss >> s.mean[0] >> s.mean[1] >> s.mean[2];
    else if (key == "std:") ss >> s.stdev[0] >> s.stdev[1] >> s.stdev[2];
    else if (key == "count:") ss >> s.count;
  }
  return s;
}

// ---- phantom cases ---------------------------------------------------------

void PhantomConfig::validate() const {
  grid.validate();
  deform.validate();
  global_aff.validate();
  if (num_landmarks < 2) throw std::invalid_argument("PhantomConfig: need >= 2 landmarks");
  if (landmark_radius_mm <= 0) throw std::invalid_argument("PhantomConfig: bad landmark radius");
}

namespace {

// Smooth seeded texture: a handful of low-frequency cosines.
struct LowFreqTexture {
  std::array<double, 12> k;
  std::array<double, 4> phase;

  static LowFreqTexture draw(Rng& rng, double scale_mm) {
    LowFreqTexture t;
    for (auto& v : t.k) v = rng.uniform(-1.0, 1.0) / scale_mm;
    for (auto& v : t.phase) v = rng.uniform(0.0, 6.28318530717958647692);
    return t;
  }

  double operator()(double x, double y, double z) const {
    double acc = 0;
    for (int j = 0; j < 4; ++j)
      acc += std::cos(k[std::size_t(3 * j)] * x + k[std::size_t(3 * j + 1)] * y +
                      k[std::size_t(3 * j + 2)] * z + phase[std::size_t(j)]);
    return acc / 4.0;
  }
};

}  // namespace

PhantomCase generate_phantom_case(std::uint64_t seed, const PhantomConfig& cfg) {
  cfg.validate();
  const Grid3& g = cfg.grid;

  for (int attempt = 0; attempt < 10; ++attempt) {
    const std::uint64_t sub = Rng::derive(seed, std::uint64_t(attempt));
    Rng rng(sub);

    // gland geometry
    EllipsoidDraw gl;
    const auto lo = g.cell_min(), hi = g.cell_max();
    for (int a = 0; a < 3; ++a) {
      gl.center[std::size_t(a)] = 0.5 * (lo[std::size_t(a)] + hi[std::size_t(a)]) +
                                  rng.uniform(-1.0, 1.0) * g.spacing[std::size_t(a)];
      gl.semi[std::size_t(a)] =
          rng.uniform(cfg.deform.gland_semiaxis_min, cfg.deform.gland_semiaxis_max);
    }
    LabelMap moving_gland = rasterize_ellipsoid(g, gl);

    // ground-truth deformation + global affine
    DisplacementField gt(g);
    AffineParams aff = AffineParams::identity();
    if (!cfg.zero_deformation) {
      SurrogateConfig dc = cfg.deform;
      dc.grid = g;
      const SimSample sim = simulate_probe_deformation(dc, Rng::derive(sub, 0xDEF));
      aff = random_affine(Rng::derive(sub, 0xAFF), cfg.global_aff);
      gt = compose(sim.field, aff);
    }

    // landmarks: blobs well inside the gland
    std::vector<std::array<double, 3>> lm_centers;
    for (int m = 0; m < cfg.num_landmarks; ++m) {
      for (int tries = 0; tries < 50; ++tries) {
        std::array<double, 3> p;
        for (int a = 0; a < 3; ++a)
          p[std::size_t(a)] = gl.center[std::size_t(a)] +
                              rng.uniform(-0.6, 0.6) * gl.semi[std::size_t(a)];
        if (ellipsoid_rho(gl, p[0], p[1], p[2]) <= 0.65) {
          bool far_enough = true;
          for (const auto& q : lm_centers) {
            const double d2 = (p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                              (p[2] - q[2]) * (p[2] - q[2]);
            if (d2 < 4.0 * cfg.landmark_radius_mm * cfg.landmark_radius_mm) far_enough = false;
          }
          if (far_enough) {
            lm_centers.push_back(p);
            break;
          }
        }
      }
    }
    if (int(lm_centers.size()) < cfg.num_landmarks) continue;  // re-draw with next sub-seed

    std::vector<LabelMap> moving_lms;
    for (const auto& p : lm_centers) {
      LabelMap lm(g, LabelKind::landmark);
      const double r2 = cfg.landmark_radius_mm * cfg.landmark_radius_mm;
      for (std::int64_t z = 0; z < g.shape[2]; ++z)
        for (std::int64_t y = 0; y < g.shape[1]; ++y)
          for (std::int64_t x = 0; x < g.shape[0]; ++x) {
            const auto w = g.world(x, y, z);
            const double d2 = (w[0] - p[0]) * (w[0] - p[0]) + (w[1] - p[1]) * (w[1] - p[1]) +
                              (w[2] - p[2]) * (w[2] - p[2]);
            if (d2 <= r2) lm.at(x, y, z) = 1.0;
          }
      moving_lms.push_back(std::move(lm));
    }

    // moving "MR-like" image: smooth base + gland contrast + landmark blobs
    const LowFreqTexture base = LowFreqTexture::draw(rng, 20.0);
    Volume moving(g);
    for (std::int64_t z = 0; z < g.shape[2]; ++z)
      for (std::int64_t y = 0; y < g.shape[1]; ++y)
        for (std::int64_t x = 0; x < g.shape[0]; ++x) {
          const auto w = g.world(x, y, z);
          const double rho = ellipsoid_rho(gl, w[0], w[1], w[2]);
          const double inside = 1.0 / (1.0 + std::exp((rho - 1.0) / 0.08));
          double val = 0.25 * base(w[0], w[1], w[2]) + 0.8 * inside;
          for (const auto& p : lm_centers) {
            const double d2 = (w[0] - p[0]) * (w[0] - p[0]) + (w[1] - p[1]) * (w[1] - p[1]) +
                              (w[2] - p[2]) * (w[2] - p[2]);
            val += 0.6 * std::exp(-0.5 * d2 / (cfg.landmark_radius_mm * cfg.landmark_radius_mm));
          }
          moving.at(x, y, z) = val;
        }

    // fixed geometry by warping; fixed "TRUS-like" texture by re-contrasting
    // with multiplicative speckle
    Volume warped_img = warp(moving, gt);
    LabelMap fixed_gland = warp(moving_gland, gt);
    for (double& v : fixed_gland.values) v = v >= 0.5 ? 1.0 : 0.0;

    std::vector<LabelMap> fixed_lms;
    bool landmarks_ok = true;
    for (const auto& lm : moving_lms) {
      LabelMap wl = warp(lm, gt);
      for (double& v : wl.values) v = v >= 0.5 ? 1.0 : 0.0;
      double s = wl.sum();
      if (s <= 0.0) {
        landmarks_ok = false;
        break;
      }
      const auto c = centroid(wl);
      if (trilinear_sample(g, fixed_gland.values.data(), c[0], c[1], c[2]) < 0.25) {
        landmarks_ok = false;  // landmark drifted outside the gland
        break;
      }
      fixed_lms.push_back(std::move(wl));
    }
    if (!landmarks_ok) continue;

    const LowFreqTexture speckle = LowFreqTexture::draw(rng, 4.0);
    Volume fixed(g);
    for (std::int64_t z = 0; z < g.shape[2]; ++z)
      for (std::int64_t y = 0; y < g.shape[1]; ++y)
        for (std::int64_t x = 0; x < g.shape[0]; ++x) {
          const auto w = g.world(x, y, z);
          const double v = warped_img.at(x, y, z);
          const double contrast = std::tanh(1.5 * v);  // modality-distinct response
          const double sp = 1.0 + 0.25 * speckle(w[0], w[1], w[2]);
          fixed.at(x, y, z) = contrast * sp + 0.05 * std::sin(9.0 * w[1]);
        }

    PhantomCase out;
    out.moving = std::move(moving);
    out.fixed = std::move(fixed);
    out.moving_gland = std::move(moving_gland);
    out.fixed_gland = std::move(fixed_gland);
    out.moving_landmarks = std::move(moving_lms);
    out.fixed_landmarks = std::move(fixed_lms);
    out.gt_field = std::move(gt);
    out.seed = seed;
    return out;
  }
  throw std::runtime_error("generate_phantom_case: landmark placement failed after 10 attempts");
}

// ---- dataset layout ----------------------------------------------------

std::uint64_t hash_config_text(const std::string& canonical_text) {
  return fnv1a64(canonical_text.data(), canonical_text.size());
}

void Manifest::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("Manifest::save: cannot open " + path);
  f << "adreg manifest v1\n";
  f << "kind: " << kind << "\n";
  f << "seed: " << seed << "\n";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)config_hash);
  f << "config_hash: " << buf << "\n";
  f << "count: " << ids.size() << "\n";
  for (const auto& id : ids) f << "id " << id << "\n";
}

Manifest Manifest::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("Manifest::load: cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "adreg manifest v1")
    throw std::runtime_error("Manifest::load: bad header in " + path);
  Manifest m;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "kind:") ss >> m.kind;
    else if (key == "seed:") ss >> m.seed;
    else if (key == "config_hash:") {
      std::string h;
      ss >> h;
      m.config_hash = std::stoull(h, nullptr, 16);
    } else if (key == "id") {
      std::string id;
      ss >> id;
      m.ids.push_back(id);
    }
  }
  return m;
}

std::vector<std::string> write_phantom_dataset(const std::string& dir, int cases,
                                               std::uint64_t seed, const PhantomConfig& cfg) {
  cfg.validate();
  if (cases < 1) throw std::invalid_argument("write_phantom_dataset: need >= 1 case");
  fs::create_directories(fs::path(dir) / "cases");

  Manifest m;
  m.kind = "cases";
  m.seed = seed;
  {
    std::ostringstream canon;
    canon << "phantom grid=" << cfg.grid.shape[0] << "," << cfg.grid.shape[1] << ","
          << cfg.grid.shape[2] << " spacing=" << cfg.grid.spacing[0]
          << " lm=" << cfg.num_landmarks << " lr=" << cfg.landmark_radius_mm
          << " zero=" << cfg.zero_deformation << " indent=" << cfg.deform.indent_min << ":"
          << cfg.deform.indent_max;
    m.config_hash = hash_config_text(canon.str());
  }

  for (int i = 0; i < cases; ++i) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "p%03d", i);
    const std::string id = idbuf;
    const fs::path cdir = fs::path(dir) / "cases" / id;
    fs::create_directories(cdir);
    const PhantomCase c = generate_phantom_case(Rng::derive(seed, std::uint64_t(i)), cfg);
    save_volume(c.moving, (cdir / "moving.vol").string());
    save_volume(c.fixed, (cdir / "fixed.vol").string());
    save_label(c.moving_gland, (cdir / "moving_gland.vol").string());
    save_label(c.fixed_gland, (cdir / "fixed_gland.vol").string());
    for (std::size_t k = 0; k < c.moving_landmarks.size(); ++k) {
      save_label(c.moving_landmarks[k],
                 (cdir / ("moving_landmark_" + std::to_string(k) + ".vol")).string());
      save_label(c.fixed_landmarks[k],
                 (cdir / ("fixed_landmark_" + std::to_string(k) + ".vol")).string());
    }
    save_field(c.gt_field, (cdir / "gt_field.vol").string());
    std::ofstream meta((cdir / "case.txt").string());
    meta << "seed: " << c.seed << "\nlandmarks: " << c.moving_landmarks.size() << "\n";
    m.ids.push_back(id);
  }
  m.save((fs::path(dir) / "manifest.txt").string());
  return m.ids;
}

PhantomCase load_phantom_case(const std::string& dir, const std::string& id) {
  const fs::path cdir = fs::path(dir) / "cases" / id;
  PhantomCase c;
  c.moving = load_volume((cdir / "moving.vol").string());
  c.fixed = load_volume((cdir / "fixed.vol").string());
  c.moving_gland = load_label((cdir / "moving_gland.vol").string());
  c.fixed_gland = load_label((cdir / "fixed_gland.vol").string());
  for (int k = 0;; ++k) {
    const fs::path mv = cdir / ("moving_landmark_" + std::to_string(k) + ".vol");
    if (!fs::exists(mv)) break;
    c.moving_landmarks.push_back(load_label(mv.string()));
    c.fixed_landmarks.push_back(
        load_label((cdir / ("fixed_landmark_" + std::to_string(k) + ".vol")).string()));
  }
  c.gt_field = load_field((cdir / "gt_field.vol").string());
  return c;
}

SimDatasetResult write_sim_dataset(const std::string& dir, const std::string& cases_dir,
                                   int patients, int per_patient, std::uint64_t seed,
                                   const SurrogateConfig& cfg, const AffineRanges& aug,
                                   const Grid3& train_grid) {
  cfg.validate();
  if (patients < 1 || per_patient < 1)
    throw std::invalid_argument("write_sim_dataset: empty simulation set");

  // fixed-gland pool from the phantom dataset (FOV targets)
  const Manifest cases_m = Manifest::load((fs::path(cases_dir) / "manifest.txt").string());
  std::vector<LabelMap> pool;
  for (const auto& id : cases_m.ids)
    pool.push_back(
        load_label((fs::path(cases_dir) / "cases" / id / "fixed_gland.vol").string()));
  if (pool.empty()) throw std::runtime_error("write_sim_dataset: no fixed glands found");

  fs::create_directories(fs::path(dir) / "sims");

  // pass 1: simulate + prepare (unnormalized)
  std::vector<DisplacementField> prepared;
  std::vector<std::string> ids;
  for (int p = 0; p < patients; ++p) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "s%03d", p);
    ids.push_back(idbuf);
    for (int k = 0; k < per_patient; ++k) {
      const std::uint64_t s = Rng::derive(seed, std::uint64_t(p) * 100003 + std::uint64_t(k));
      const SimSample sample = simulate_probe_deformation(cfg, s);
      prepared.push_back(
          prep_sim_sample(sample, pool, train_grid, Rng::derive(s, 0x9E9), aug, nullptr));
    }
  }

  // pass 2: freeze stats, normalize, write
  const NormStats stats = compute_norm_stats(prepared);
  int written = 0;
  for (int p = 0; p < patients; ++p) {
    const fs::path pdir = fs::path(dir) / "sims" / ids[std::size_t(p)];
    fs::create_directories(pdir);
    for (int k = 0; k < per_patient; ++k) {
      DisplacementField d = prepared[std::size_t(p * per_patient + k)];
      apply_norm_stats(d, stats);
      save_field(d, (pdir / (std::to_string(k) + ".vol")).string());
      ++written;
    }
  }
  save_norm_stats(stats, (fs::path(dir) / "norm_stats").string());

  Manifest m;
  m.kind = "sims";
  m.seed = seed;
  {
    std::ostringstream canon;
    canon << "sims patients=" << patients << " per=" << per_patient
          << " grid=" << train_grid.shape[0] << " indent=" << cfg.indent_min << ":"
          << cfg.indent_max;
    m.config_hash = hash_config_text(canon.str());
  }
  m.ids = ids;
  m.save((fs::path(dir) / "manifest.txt").string());
  return {written, stats};
}

std::vector<DisplacementField> load_sim_dataset(const std::string& dir) {
  const Manifest m = Manifest::load((fs::path(dir) / "manifest.txt").string());
  std::vector<DisplacementField> out;
  for (const auto& id : m.ids) {
    for (int k = 0;; ++k) {
      const fs::path p = fs::path(dir) / "sims" / id / (std::to_string(k) + ".vol");
      if (!fs::exists(p)) break;
      out.push_back(load_field(p.string()));
    }
  }
  if (out.empty()) throw std::runtime_error("load_sim_dataset: no fields in " + dir);
  return out;
}

}  // namespace adreg
