#include "adreg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "adreg/rng.hpp"
#include "adreg/volume_ops.hpp"

namespace fs = std::filesystem;

namespace adreg {

TreResult tre(const std::vector<LabelMap>& warped_landmarks,
              const std::vector<LabelMap>& fixed_landmarks) {
  if (warped_landmarks.empty() || warped_landmarks.size() != fixed_landmarks.size())
    throw std::invalid_argument("tre: empty or mismatched landmark lists");
  TreResult r;
  double ss = 0;
  for (std::size_t i = 0; i < warped_landmarks.size(); ++i) {
    const auto cw = centroid(warped_landmarks[i]);  // throws on empty label
    const auto cf = centroid(fixed_landmarks[i]);
    const double d = std::sqrt((cw[0] - cf[0]) * (cw[0] - cf[0]) +
                               (cw[1] - cf[1]) * (cw[1] - cf[1]) +
                               (cw[2] - cf[2]) * (cw[2] - cf[2]));
    r.per_pair_mm.push_back(d);
    ss += d * d;
  }
  r.rms_mm = std::sqrt(ss / double(warped_landmarks.size()));
  return r;
}

double dsc(const LabelMap& a, const LabelMap& b) {
  if (a.grid != b.grid) throw std::invalid_argument("dsc: grid mismatch");
  std::int64_t na = 0, nb = 0, ni = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const bool ba = a.values[i] >= 0.5;
    const bool bb = b.values[i] >= 0.5;
    na += ba;
    nb += bb;
    ni += ba && bb;
  }
  if (na + nb == 0) throw std::runtime_error("dsc: both masks empty");
  return 2.0 * double(ni) / double(na + nb);
}

FoldPlan make_folds(const std::vector<std::string>& patient_ids, int k, std::uint64_t seed) {
  if (k < 1 || std::size_t(k) > patient_ids.size())
    throw std::invalid_argument("make_folds: k must be in [1, #patients]");
  std::vector<std::string> ids = patient_ids;
  Rng rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i)  // Fisher-Yates
    std::swap(ids[i - 1], ids[std::size_t(rng.next_u64() % i)]);
  FoldPlan plan;
  plan.folds.resize(std::size_t(k));
  for (std::size_t i = 0; i < ids.size(); ++i)
    plan.folds[i % std::size_t(k)].push_back(ids[i]);
  return plan;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("wilcoxon: length mismatch");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = y[i] - x[i];
    if (d != 0.0) diffs.push_back(d);
  }
  const int n = int(diffs.size());
  if (n == 0) throw std::runtime_error("wilcoxon: all differences zero");
  if (n < 5) throw std::invalid_argument("wilcoxon: need >= 5 nonzero differences");

  // average ranks of |d| with ties
  std::vector<std::size_t> order(diffs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(diffs[a]) < std::abs(diffs[b]);
  });
  std::vector<double> rank(diffs.size());
  std::vector<int> tie_sizes;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() &&
           std::abs(diffs[order[j]]) == std::abs(diffs[order[i]]))
      ++j;
    const double avg = (double(i + 1) + double(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) rank[order[t]] = avg;
    tie_sizes.push_back(int(j - i));
    i = j;
  }

  double w_plus = 0;
  for (std::size_t i = 0; i < diffs.size(); ++i)
    if (diffs[i] > 0) w_plus += rank[i];

  WilcoxonResult res;
  res.statistic = w_plus;
  res.n_effective = n;

  if (n <= 25) {
    // exact null distribution by dynamic programming over doubled ranks
    // (average ranks are half-integers; doubling makes them lattice points)
    std::vector<std::int64_t> r2(diffs.size());
    std::int64_t total2 = 0;
    for (std::size_t i = 0; i < diffs.size(); ++i) {
      r2[i] = std::int64_t(std::llround(2.0 * rank[i]));
      total2 += r2[i];
    }
    std::vector<double> dp(std::size_t(total2 + 1), 0.0);
    dp[0] = 1.0;
    for (std::size_t i = 0; i < r2.size(); ++i)
      for (std::int64_t s = total2; s >= r2[i]; --s)
        dp[std::size_t(s)] += dp[std::size_t(s - r2[i])];
    const double denom = std::pow(2.0, double(n));
    const std::int64_t w2 = std::int64_t(std::llround(2.0 * w_plus));
    double p_le = 0, p_ge = 0;
    for (std::int64_t s = 0; s <= total2; ++s) {
      if (s <= w2) p_le += dp[std::size_t(s)];
      if (s >= w2) p_ge += dp[std::size_t(s)];
    }
    res.p_value = std::min(1.0, 2.0 * std::min(p_le, p_ge) / denom);
    res.exact = true;
  } else {
    const double mean = double(n) * double(n + 1) / 4.0;
    double var = double(n) * double(n + 1) * double(2 * n + 1) / 24.0;
    for (int t : tie_sizes) var -= (double(t) * t * t - t) / 48.0;
    const double diff = w_plus - mean;
    const double cc = diff > 0 ? -0.5 : (diff < 0 ? 0.5 : 0.0);  // continuity
    const double z = (diff + cc) / std::sqrt(var);
    res.p_value = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
    res.exact = false;
  }
  return res;
}

Quartiles quartiles(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("quartiles: empty sample");
  std::sort(values.begin(), values.end());
  auto interp = [&](double p) {
    const double pos = p * double(values.size() - 1);
    const std::size_t lo = std::size_t(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - double(lo);
    return (1.0 - frac) * values[lo] + frac * values[hi];
  };
  return {interp(0.25), interp(0.5), interp(0.75)};
}

std::string format_median_iqr(const Quartiles& q, int decimals) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.*f [%.*f, %.*f]", decimals, q.median, decimals, q.q1,
                decimals, q.q3);
  return buf;
}

Report report(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw std::invalid_argument("report: no records");
  std::vector<std::string> modes;
  for (const auto& r : records)
    if (std::find(modes.begin(), modes.end(), r.mode) == modes.end()) modes.push_back(r.mode);

  auto collect = [&](const std::string& mode) {
    std::vector<double> tre_case, tre_pairs, dscs;
    for (const auto& r : records)
      if (r.mode == mode) {
        tre_case.push_back(r.case_tre_mm);
        dscs.push_back(r.gland_dsc);
        for (double d : r.landmark_tre_mm) tre_pairs.push_back(d);
      }
    return std::make_tuple(tre_case, tre_pairs, dscs);
  };

  const bool have_adv = std::find(modes.begin(), modes.end(), "adversarial") != modes.end();
  std::vector<double> adv_tre, adv_dsc;
  if (have_adv) {
    auto [tc, tp, dd] = collect("adversarial");
    adv_tre = tc;
    adv_dsc = dd;
  }

  Report rep;
  rep.records = records;
  for (const auto& mode : modes) {
    auto [tre_case, tre_pairs, dscs] = collect(mode);
    ModeSummary s;
    s.mode = mode;
    s.cases = int(tre_case.size());
    s.tre_case = quartiles(tre_case);
    s.tre_pairs = quartiles(tre_pairs);
    s.dsc_q = quartiles(dscs);
    if (have_adv && mode != "adversarial" && tre_case.size() == adv_tre.size() &&
        tre_case.size() >= 5) {
      try {
        s.p_tre_vs_adversarial = wilcoxon_signed_rank(adv_tre, tre_case).p_value;
        s.p_dsc_vs_adversarial = wilcoxon_signed_rank(adv_dsc, dscs).p_value;
      } catch (const std::exception&) {
        // all-zero differences or too few pairs: leave as n/a
      }
    }
    rep.summaries.push_back(std::move(s));
  }
  return rep;
}

std::string Report::render_table() const {
  std::ostringstream out;
  out << "mode          cases  TRE median [Q1, Q3] (mm)   DSC median [Q1, Q3]     p(TRE) vs adv\n";
  for (const auto& s : summaries) {
    char buf[256];
    std::string ptre = s.p_tre_vs_adversarial < 0 ? "-" : [&] {
      char b[32];
      std::snprintf(b, sizeof b, "%.4g", s.p_tre_vs_adversarial);
      return std::string(b);
    }();
    std::snprintf(buf, sizeof buf, "%-13s %5d  %-26s %-23s %s\n", s.mode.c_str(), s.cases,
                  format_median_iqr(s.tre_case, 1).c_str(),
                  format_median_iqr(s.dsc_q, 2).c_str(), ptre.c_str());
    out << buf;
  }
  return out.str();
}

std::string Report::to_json() const {
  std::ostringstream out;
  char buf[512];
  out << "{\n  \"summaries\": [\n";
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    const auto& s = summaries[i];
    std::snprintf(buf, sizeof buf,
                  "    {\"mode\": \"%s\", \"cases\": %d, "
                  "\"tre_case\": {\"median\": %.10g, \"q1\": %.10g, \"q3\": %.10g}, "
                  "\"tre_pairs\": {\"median\": %.10g, \"q1\": %.10g, \"q3\": %.10g}, "
                  "\"dsc\": {\"median\": %.10g, \"q1\": %.10g, \"q3\": %.10g}, "
                  "\"p_tre_vs_adversarial\": %.10g, \"p_dsc_vs_adversarial\": %.10g}%s\n",
                  s.mode.c_str(), s.cases, s.tre_case.median, s.tre_case.q1, s.tre_case.q3,
                  s.tre_pairs.median, s.tre_pairs.q1, s.tre_pairs.q3, s.dsc_q.median, s.dsc_q.q1,
                  s.dsc_q.q3, s.p_tre_vs_adversarial, s.p_dsc_vs_adversarial,
                  i + 1 < summaries.size() ? "," : "");
    out << buf;
  }
  out << "  ],\n  \"records\": [\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    std::ostringstream lm;
    for (std::size_t j = 0; j < r.landmark_tre_mm.size(); ++j) {
      if (j) lm << ", ";
      std::snprintf(buf, sizeof buf, "%.10g", r.landmark_tre_mm[j]);
      lm << buf;
    }
    std::snprintf(buf, sizeof buf,
                  "    {\"case\": \"%s\", \"mode\": \"%s\", \"tre\": %.10g, \"dsc\": %.10g, "
                  "\"landmark_tre\": [%s]}%s\n",
                  r.case_id.c_str(), r.mode.c_str(), r.case_tre_mm, r.gland_dsc, lm.str().c_str(),
                  i + 1 < records.size() ? "," : "");
    out << buf;
  }
  out << "  ]\n}\n";
  return out.str();
}

std::string svg_boxplot(const std::string& title,
                        const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  if (series.empty()) throw std::invalid_argument("svg_boxplot: no data");
  const int w = 160 * int(series.size()) + 80;
  const int h = 360;
  double lo = 1e300, hi = -1e300;
  for (const auto& [name, vals] : series)
    for (double v : vals) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi <= lo) hi = lo + 1;
  const double pad = 0.08 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto ypix = [&](double v) { return 36.0 + (h - 96.0) * (hi - v) / (hi - lo); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"12\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title
      << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& [name, raw] = series[i];
    if (raw.empty()) continue;
    std::vector<double> vals = raw;
    std::sort(vals.begin(), vals.end());
    const Quartiles q = quartiles(vals);
    const double cx = 80.0 + 160.0 * double(i);
    const double bw = 50.0;
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n"
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n"
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"#9ecae1\" "
                  "stroke=\"black\"/>\n"
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\" "
                  "stroke-width=\"2\"/>\n",
                  cx, ypix(vals.front()), cx, ypix(q.q1),             // lower whisker
                  cx, ypix(q.q3), cx, ypix(vals.back()),              // upper whisker
                  cx - bw / 2, ypix(q.q3), bw, ypix(q.q1) - ypix(q.q3),  // IQR box
                  cx - bw / 2, ypix(q.median), cx + bw / 2, ypix(q.median));
    svg << buf;
    svg << "<text x=\"" << cx << "\" y=\"" << h - 24
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << name
        << "</text>\n";
  }
  char axis[256];
  std::snprintf(axis, sizeof axis,
                "<text x=\"12\" y=\"%d\" font-family=\"sans-serif\" font-size=\"11\">%.3g</text>\n"
                "<text x=\"12\" y=\"40\" font-family=\"sans-serif\" font-size=\"11\">%.3g</text>\n",
                h - 60, lo + pad, hi - pad);
  svg << axis << "</svg>\n";
  return svg.str();
}

std::vector<std::string> Report::write(const std::string& dir) const {
  fs::create_directories(dir);
  std::vector<std::string> written;

  const std::string jpath = (fs::path(dir) / "report.json").string();
  std::ofstream(jpath) << to_json();
  written.push_back(jpath);

  const std::string tpath = (fs::path(dir) / "report.txt").string();
  std::ofstream(tpath) << render_table();
  written.push_back(tpath);

  std::vector<std::pair<std::string, std::vector<double>>> tre_series, dsc_series;
  for (const auto& s : summaries) {
    std::vector<double> tv, dv;
    for (const auto& r : records)
      if (r.mode == s.mode) {
        tv.push_back(r.case_tre_mm);
        dv.push_back(r.gland_dsc);
      }
    tre_series.emplace_back(s.mode, std::move(tv));
    dsc_series.emplace_back(s.mode, std::move(dv));
  }
  const std::string bpath = (fs::path(dir) / "tre_boxplot.svg").string();
  std::ofstream(bpath) << svg_boxplot("case TRE (mm)", tre_series);
  written.push_back(bpath);
  const std::string dpath = (fs::path(dir) / "dsc_boxplot.svg").string();
  std::ofstream(dpath) << svg_boxplot("gland DSC", dsc_series);
  written.push_back(dpath);
  return written;
}

}  // namespace adreg
