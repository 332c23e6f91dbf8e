#include "commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adreg/eval.hpp"
#include "adreg/field_ops.hpp"
#include "adreg/vol_io.hpp"

namespace fs = std::filesystem;

namespace adreg::cli {

namespace {

void require_writable(const std::string& out_dir, const std::string& sentinel, bool force) {
  if (!force && fs::exists(fs::path(out_dir) / sentinel))
    throw std::invalid_argument("output already exists at " + out_dir + " (use --force)");
}

std::vector<std::string> list_tree(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

CommandResult cmd_phantom(const PhantomArgs& args) {
  if (args.out_dir.empty()) throw std::invalid_argument("phantom: --out is required");
  require_writable(args.out_dir, "manifest.txt", args.force);
  PhantomConfig cfg;
  cfg.grid = Grid3::isotropic(args.grid, args.spacing);
  cfg.deform.grid = cfg.grid;
  const auto ids = write_phantom_dataset(args.out_dir, args.cases, args.seed, cfg);
  CommandResult r;
  r.files = list_tree(args.out_dir);
  r.summary = "phantom: wrote " + std::to_string(ids.size()) + " cases to " + args.out_dir;
  return r;
}

SurrogateConfig load_surrogate_config(const std::string& path) {
  SurrogateConfig c;
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open surrogate config " + path);
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::istringstream key_s(line.substr(0, eq));
    std::string key;
    key_s >> key;
    const double v = std::stod(line.substr(eq + 1));
    if (key == "probe_radius_min") c.probe_radius_min = v;
    else if (key == "probe_radius_max") c.probe_radius_max = v;
    else if (key == "balloon_min") c.balloon_min = v;
    else if (key == "balloon_max") c.balloon_max = v;
    else if (key == "indent_min") c.indent_min = v;
    else if (key == "indent_max") c.indent_max = v;
    else if (key == "entry_cone_deg") c.entry_cone_deg = v;
    else if (key == "gland_semiaxis_min") c.gland_semiaxis_min = v;
    else if (key == "gland_semiaxis_max") c.gland_semiaxis_max = v;
    else if (key == "stiffness_min") c.stiffness_min = v;
    else if (key == "stiffness_max") c.stiffness_max = v;
    else throw std::invalid_argument("surrogate config: unknown key '" + key + "'");
  }
  return c;
}

CommandResult cmd_sim(const SimArgs& args) {
  if (args.out_dir.empty() || args.cases_dir.empty())
    throw std::invalid_argument("sim: --out and --cases are required");
  if (args.patients < 1 || args.per_patient < 1)
    throw std::invalid_argument("sim: empty simulation set");
  require_writable(args.out_dir, "manifest.txt", args.force);

  SurrogateConfig cfg =
      args.config_file.empty() ? SurrogateConfig{} : load_surrogate_config(args.config_file);
  const Grid3 train_grid = Grid3::isotropic(args.grid, args.spacing);
  cfg.grid = train_grid;
  AffineRanges aug;

  const SimDatasetResult res = write_sim_dataset(args.out_dir, args.cases_dir, args.patients,
                                                 args.per_patient, args.seed, cfg, aug, train_grid);
  CommandResult r;
  r.files = list_tree(args.out_dir);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "sim: wrote %d prepared fields; norm stats mean=(%.4g, %.4g, %.4g) "
                "std=(%.4g, %.4g, %.4g)",
                res.written, res.stats.mean[0], res.stats.mean[1], res.stats.mean[2],
                res.stats.stdev[0], res.stats.stdev[1], res.stats.stdev[2]);
  r.summary = buf;
  return r;
}

CommandResult cmd_train(const TrainArgs& args) {
  TrainConfig cfg = args.config_file.empty() ? TrainConfig{} : TrainConfig::load(args.config_file);
  if (!args.data_dir.empty()) cfg.data_dir = args.data_dir;
  if (!args.sim_dir.empty()) cfg.sim_dir = args.sim_dir;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (!args.mode.empty()) cfg.regularizer_mode = regularizer_mode_from_string(args.mode);
  if (args.steps >= 0) cfg.total_steps = args.steps;
  if (args.seed >= 0) cfg.seed = std::uint64_t(args.seed);
  if (args.learning_rate > 0) cfg.learning_rate = args.learning_rate;
  if (cfg.out_dir.empty()) throw std::invalid_argument("train: out_dir is required");
  require_writable(cfg.out_dir, "checkpoint.ckpt", args.force);
  cfg.validate();

  const TrainResult res = train(cfg);
  cfg.save((fs::path(cfg.out_dir) / "train_config.txt").string());

  CommandResult r;
  r.files = {res.checkpoint_path, res.metrics_path,
             (fs::path(cfg.out_dir) / "train_config.txt").string()};
  char buf[256];
  const double final_loss = res.log.empty() ? 0.0 : res.log.back().loss_reg;
  std::snprintf(buf, sizeof buf, "train: %d steps (mode=%s), final registration loss %.6g",
                cfg.total_steps, to_string(cfg.regularizer_mode).c_str(), final_loss);
  r.summary = buf;
  return r;
}

CommandResult cmd_register(const RegisterArgs& args) {
  if (args.model.empty() || args.moving.empty() || args.fixed.empty() || args.out_dir.empty())
    throw std::invalid_argument("register: --model, --moving, --fixed, --out are required");
  require_writable(args.out_dir, "composed.vol", args.force);

  Checkpoint ckpt = Checkpoint::load(args.model);
  const Volume moving = load_volume(args.moving);
  const Volume fixed = load_volume(args.fixed);
  const Registration reg = register_pair(ckpt, moving, fixed);

  fs::create_directories(args.out_dir);
  const fs::path out(args.out_dir);
  save_field(reg.local, (out / "local.vol").string());
  save_field(reg.composed, (out / "composed.vol").string());
  save_volume(reg.warped, (out / "warped.vol").string());
  {
    std::ofstream f((out / "affine.txt").string());
    char buf[64];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", reg.affine.p[std::size_t(4 * r + c)]);
        f << buf << (c == 3 ? "\n" : " ");
      }
    }
  }

  CommandResult r;
  r.files = {(out / "local.vol").string(), (out / "composed.vol").string(),
             (out / "warped.vol").string(), (out / "affine.txt").string()};
  char buf[128];
  std::snprintf(buf, sizeof buf, "register: composed field max |u| = %.3f mm",
                reg.composed.max_magnitude());
  r.summary = buf;
  return r;
}

CommandResult cmd_evaluate(const EvaluateArgs& args) {
  if (args.data_dir.empty() || args.out_dir.empty())
    throw std::invalid_argument("evaluate: --data and --out are required");
  if (args.checkpoint.empty() == !args.use_gt_field)
    throw std::invalid_argument("evaluate: pass exactly one of --checkpoint or --gt-field");
  require_writable(args.out_dir, "report.json", args.force);

  const Manifest manifest = Manifest::load((fs::path(args.data_dir) / "manifest.txt").string());
  const std::vector<std::string> ids = args.case_ids.empty() ? manifest.ids : args.case_ids;

  Checkpoint ckpt;
  if (!args.checkpoint.empty()) ckpt = Checkpoint::load(args.checkpoint);

  std::vector<EvalRecord> records;
  for (const auto& id : ids) {
    PhantomCase c = load_phantom_case(args.data_dir, id);
    DisplacementField field;
    if (args.use_gt_field) {
      field = c.gt_field;
    } else {
      field = register_pair(ckpt, c.moving, c.fixed).composed;
    }
    LabelMap warped_gland = warp(c.moving_gland, field);
    std::vector<LabelMap> warped_lms;
    for (const auto& lm : c.moving_landmarks) warped_lms.push_back(warp(lm, field));

    EvalRecord rec;
    rec.case_id = id;
    rec.mode = args.mode_tag;
    rec.gland_dsc = dsc(warped_gland, c.fixed_gland);
    const TreResult t = tre(warped_lms, c.fixed_landmarks);
    rec.landmark_tre_mm = t.per_pair_mm;
    rec.case_tre_mm = t.rms_mm;
    records.push_back(std::move(rec));
  }

  const Report rep = report(records);
  CommandResult r;
  r.files = rep.write(args.out_dir);
  std::ostringstream sum;
  sum << "evaluate: " << records.size() << " cases, "
      << "TRE " << format_median_iqr(rep.summaries[0].tre_case, 1) << " mm, DSC "
      << format_median_iqr(rep.summaries[0].dsc_q, 2);
  r.summary = sum.str();
  return r;
}

namespace {

std::string svg_lines(const std::string& title,
                      const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  const int w = 720, h = 360;
  double lo = 1e300, hi = -1e300;
  std::size_t maxn = 1;
  for (const auto& [name, v] : series) {
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    maxn = std::max(maxn, v.size());
  }
  if (hi <= lo) hi = lo + 1;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"12\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title
      << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& vals = series[s].second;
    if (vals.empty()) continue;
    svg << "<polyline fill=\"none\" stroke=\"" << colors[s % 5] << "\" points=\"";
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double x = 50.0 + (w - 80.0) * double(i) / double(std::max<std::size_t>(maxn - 1, 1));
      const double y = 36.0 + (h - 80.0) * (hi - vals[i]) / (hi - lo);
      svg << x << "," << y << " ";
    }
    svg << "\"/>\n<text x=\"" << 60 + 140 * s << "\" y=\"" << h - 10
        << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << colors[s % 5] << "\">"
        << series[s].first << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace

CommandResult cmd_plot(const PlotArgs& args) {
  if (args.out_dir.empty()) throw std::invalid_argument("plot: --out is required");
  if (args.metrics.empty() && args.report_json.empty())
    throw std::invalid_argument("plot: pass --metrics and/or --report");
  require_writable(args.out_dir, "losses.svg", args.force);
  fs::create_directories(args.out_dir);

  CommandResult r;
  if (!args.metrics.empty()) {
    std::ifstream f(args.metrics);
    if (!f) throw std::runtime_error("plot: cannot open " + args.metrics);
    std::vector<double> lreg, ldis, lgen, gam;
    std::string line;
    while (std::getline(f, line)) {
      std::istringstream ss(line);
      std::string tok;
      while (ss >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string k = tok.substr(0, eq);
        const double v = std::stod(tok.substr(eq + 1));
        if (k == "loss_reg") lreg.push_back(v);
        else if (k == "loss_dis") ldis.push_back(v);
        else if (k == "loss_gen") lgen.push_back(v);
        else if (k == "gamma") gam.push_back(v);
      }
    }
    const std::string p = (fs::path(args.out_dir) / "losses.svg").string();
    std::ofstream(p) << svg_lines("training losses",
                                  {{"loss_reg", lreg}, {"loss_dis", ldis}, {"loss_gen", lgen}});
    r.files.push_back(p);
    const std::string gp = (fs::path(args.out_dir) / "gamma.svg").string();
    std::ofstream(gp) << svg_lines("gamma schedule", {{"gamma", gam}});
    r.files.push_back(gp);
  }
  if (!args.report_json.empty()) {
    // re-render box plots from the machine-readable report
    std::ifstream f(args.report_json);
    if (!f) throw std::runtime_error("plot: cannot open " + args.report_json);
    std::stringstream buf;
    buf << f.rdbuf();
    const std::string text = buf.str();
    std::map<std::string, std::vector<double>> tre_by_mode, dsc_by_mode;
    std::size_t pos = 0;
    while ((pos = text.find("{\"case\":", pos)) != std::string::npos) {
      const std::size_t end = text.find('}', pos);
      const std::string rec = text.substr(pos, end - pos);
      auto grab = [&](const std::string& key) {
        const std::size_t k = rec.find("\"" + key + "\":");
        return rec.substr(k + key.size() + 3);
      };
      std::string mode = grab("mode");
      mode = mode.substr(mode.find('"') + 1);
      mode = mode.substr(0, mode.find('"'));
      tre_by_mode[mode].push_back(std::stod(grab("tre")));
      dsc_by_mode[mode].push_back(std::stod(grab("dsc")));
      pos = end;
    }
    std::vector<std::pair<std::string, std::vector<double>>> ts(tre_by_mode.begin(),
                                                                tre_by_mode.end());
    std::vector<std::pair<std::string, std::vector<double>>> ds(dsc_by_mode.begin(),
                                                                dsc_by_mode.end());
    const std::string p1 = (fs::path(args.out_dir) / "tre_boxplot.svg").string();
    std::ofstream(p1) << svg_boxplot("case TRE (mm)", ts);
    r.files.push_back(p1);
    const std::string p2 = (fs::path(args.out_dir) / "dsc_boxplot.svg").string();
    std::ofstream(p2) << svg_boxplot("gland DSC", ds);
    r.files.push_back(p2);
  }
  r.summary = "plot: wrote " + std::to_string(r.files.size()) + " image files";
  return r;
}

}  // namespace adreg::cli
