#include "pathseek/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace pathseek {

using nlohmann::json;

namespace {

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

bool same(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same(a[i], b[i])) return false;
  return true;
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double get_num(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

json nums(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

std::vector<double> get_nums(const json& j) {
  std::vector<double> v;
  for (const auto& x : j) v.push_back(get_num(x));
  return v;
}

const char* kPalette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb"};

std::string color(std::size_t i) { return kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))]; }

std::string svg_open(int w, int h) {
  return fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
      w, h);
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle", int size = 12) {
  std::string esc;
  for (char c : s) {
    if (c == '<') esc += "&lt;";
    else if (c == '>') esc += "&gt;";
    else if (c == '&') esc += "&amp;";
    else esc += c;
  }
  return fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-family=\"sans-serif\" font-size=\"{}\" text-anchor=\"{}\">{}</text>\n",
                     x, y, size, anchor, esc);
}

// Plot frame with [0, 1] y axis and integer x ticks 1..n.
struct Frame {
  double left = 60, top = 30, width = 520, height = 280;
  int n = 1;
  double x(double t) const { return left + (n <= 1 ? 0.5 * width : (t - 1) / (n - 1) * width); }
  double y(double v) const { return top + (1.0 - v) * height; }

  std::string axes(const std::string& title, const std::string& xlabel) const {
    std::string s;
    s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", left, top,
                     width, height);
    for (double v : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#dddddd\"/>\n", left, y(v),
                       left + width, y(v));
      s += text(left - 6, y(v) + 4, fmt::format("{:.2f}", v), "end", 10);
    }
    const int step = std::max(1, n / 10);
    for (int t = 1; t <= n; t += step) s += text(x(t), top + height + 14, std::to_string(t), "middle", 10);
    s += text(left + width / 2, 18, title, "middle", 14);
    s += text(left + width / 2, top + height + 32, xlabel, "middle", 12);
    return s;
  }
};

std::string polyline(const Frame& f, const std::vector<double>& v, const std::string& stroke, double width = 1.5,
                     const char* dash = nullptr) {
  std::string pts;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (std::isfinite(v[i])) pts += fmt::format("{:.1f},{:.1f} ", f.x(static_cast<double>(i + 1)), f.y(v[i]));
  return fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\"{}/>\n", pts, stroke, width,
                     dash ? fmt::format(" stroke-dasharray=\"{}\"", dash) : std::string());
}

}  // namespace

bool BenchReport::operator==(const BenchReport& o) const {
  if (methods.size() != o.methods.size() || sweep.size() != o.sweep.size() || histograms.size() != o.histograms.size() ||
      confidence_curves.size() != o.confidence_curves.size() || notes != o.notes)
    return false;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const auto &a = methods[i], &b = o.methods[i];
    if (a.method != b.method || !same(a.auc, b.auc) || !same(a.mean_patches, b.mean_patches) ||
        !same(a.mean_time, b.mean_time) || !same(a.mean_ticks, b.mean_ticks))
      return false;
  }
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    const auto &a = sweep[i], &b = o.sweep[i];
    if (a.top_k != b.top_k || !same(a.delta, b.delta) || !same(a.auc, b.auc) || !same(a.mean_patches, b.mean_patches) ||
        !same(a.mean_time, b.mean_time) || !same(a.mean_ticks, b.mean_ticks) ||
        !same(a.pruning_recall, b.pruning_recall) || !same(a.stop_fractions, b.stop_fractions))
      return false;
  }
  for (std::size_t i = 0; i < histograms.size(); ++i)
    if (!same(histograms[i].delta, o.histograms[i].delta) || histograms[i].counts != o.histograms[i].counts) return false;
  for (std::size_t i = 0; i < confidence_curves.size(); ++i)
    if (!same(confidence_curves[i], o.confidence_curves[i])) return false;
  return true;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string csv_number(double v) { return std::isfinite(v) ? fmt::format("{:.10g}", v) : std::string(); }

json to_json(const BenchReport& r) {
  json j;
  j["methods"] = json::array();
  for (const auto& m : r.methods)
    j["methods"].push_back({{"method", m.method},
                            {"auc", num(m.auc)},
                            {"mean_patches", num(m.mean_patches)},
                            {"mean_time", num(m.mean_time)},
                            {"mean_ticks", num(m.mean_ticks)}});
  j["sweep"] = json::array();
  for (const auto& s : r.sweep)
    j["sweep"].push_back({{"top_k", s.top_k},
                          {"delta", num(s.delta)},
                          {"auc", num(s.auc)},
                          {"mean_patches", num(s.mean_patches)},
                          {"mean_time", num(s.mean_time)},
                          {"mean_ticks", num(s.mean_ticks)},
                          {"pruning_recall", num(s.pruning_recall)},
                          {"stop_fractions", nums(s.stop_fractions)}});
  j["histograms"] = json::array();
  for (const auto& h : r.histograms) j["histograms"].push_back({{"delta", num(h.delta)}, {"counts", h.counts}});
  j["confidence_curves"] = json::array();
  for (const auto& c : r.confidence_curves) j["confidence_curves"].push_back(nums(c));
  j["notes"] = r.notes;
  return j;
}

BenchReport bench_report_from_json(const json& j) {
  BenchReport r;
  for (const auto& m : j.at("methods"))
    r.methods.push_back({m.at("method").get<std::string>(), get_num(m.at("auc")), get_num(m.at("mean_patches")),
                         get_num(m.at("mean_time")), get_num(m.at("mean_ticks"))});
  for (const auto& s : j.at("sweep")) {
    SweepRow row;
    row.top_k = s.at("top_k").get<int>();
    row.delta = get_num(s.at("delta"));
    row.auc = get_num(s.at("auc"));
    row.mean_patches = get_num(s.at("mean_patches"));
    row.mean_time = get_num(s.at("mean_time"));
    row.mean_ticks = get_num(s.at("mean_ticks"));
    row.pruning_recall = get_num(s.at("pruning_recall"));
    row.stop_fractions = get_nums(s.at("stop_fractions"));
    r.sweep.push_back(std::move(row));
  }
  for (const auto& h : j.at("histograms")) {
    StopHistogram sh;
    sh.delta = get_num(h.at("delta"));
    sh.counts = h.at("counts").get<std::vector<std::size_t>>();
    r.histograms.push_back(std::move(sh));
  }
  for (const auto& c : j.at("confidence_curves")) r.confidence_curves.push_back(get_nums(c));
  r.notes = j.at("notes").get<std::vector<std::string>>();
  return r;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::size_t buckets = 0;
  for (const auto& r : rows) buckets = std::max(buckets, r.stop_fractions.size());
  std::ostringstream os;
  os << "top_k,delta,auc,mean_patches,mean_time,mean_ticks,pruning_recall";
  for (std::size_t b = 0; b < buckets; ++b)
    os << ',' << (b + 1 == buckets ? std::string("stop_budget_exhausted") : "stop_scale_" + std::to_string(b));
  os << "\r\n";
  for (const auto& r : rows) {
    os << r.top_k << ',' << csv_number(r.delta) << ',' << csv_number(r.auc) << ',' << csv_number(r.mean_patches) << ','
       << csv_number(r.mean_time) << ',' << csv_number(r.mean_ticks) << ',' << csv_number(r.pruning_recall);
    for (std::size_t b = 0; b < buckets; ++b)
      os << ',' << (b < r.stop_fractions.size() ? csv_number(r.stop_fractions[b]) : std::string());
    os << "\r\n";
  }
  return os.str();
}

std::string methods_csv(const std::vector<MethodSummary>& methods) {
  std::ostringstream os;
  os << "method,auc,mean_patches,mean_time,mean_ticks\r\n";
  for (const auto& m : methods)
    os << csv_field(m.method) << ',' << csv_number(m.auc) << ',' << csv_number(m.mean_patches) << ','
       << csv_number(m.mean_time) << ',' << csv_number(m.mean_ticks) << "\r\n";
  return os.str();
}

std::string histogram_csv(const std::vector<StopHistogram>& histograms) {
  std::ostringstream os;
  os << "delta,bucket,count,fraction\r\n";
  for (const auto& h : histograms) {
    const auto f = h.fractions();
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      os << csv_number(h.delta) << ','
         << (b + 1 == h.counts.size() ? std::string("budget_exhausted") : "scale_" + std::to_string(b)) << ','
         << h.counts[b] << ',' << csv_number(f[b]) << "\r\n";
  }
  return os.str();
}

std::string confidence_curves_svg(const std::vector<std::vector<double>>& curves, double delta) {
  Frame f;
  for (const auto& c : curves) f.n = std::max(f.n, static_cast<int>(c.size()));
  std::string s = svg_open(640, 360) + f.axes("Confidence per tick", "tick");
  if (delta <= 1.0)
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n",
                     f.left, f.y(delta), f.left + f.width, f.y(delta));
  for (std::size_t i = 0; i < curves.size(); ++i) s += polyline(f, curves[i], color(i));
  return s + "</svg>\n";
}

std::string sweep_heatmap_svg(const std::vector<SweepRow>& rows) {
  std::vector<int> ks;
  std::vector<double> ds;
  for (const auto& r : rows) {
    if (std::find(ks.begin(), ks.end(), r.top_k) == ks.end()) ks.push_back(r.top_k);
    if (std::find(ds.begin(), ds.end(), r.delta) == ds.end()) ds.push_back(r.delta);
  }
  std::sort(ks.begin(), ks.end());
  std::sort(ds.begin(), ds.end());
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : rows) {
    lo = std::min(lo, r.mean_patches);
    hi = std::max(hi, r.mean_patches);
  }
  const double cw = 70, ch = 36, left = 70, top = 50;
  const int w = static_cast<int>(left + cw * static_cast<double>(ds.size()) + 20);
  const int h = static_cast<int>(top + ch * static_cast<double>(ks.size()) + 50);
  std::string s = svg_open(std::max(w, 320), h);
  s += text(left + cw * static_cast<double>(ds.size()) / 2, 20, "Mean patches (cell text: AUC)", "middle", 14);
  for (std::size_t i = 0; i < ds.size(); ++i)
    s += text(left + cw * (static_cast<double>(i) + 0.5), top - 6, fmt::format("{:g}", ds[i]), "middle", 10);
  s += text(left + cw * static_cast<double>(ds.size()) / 2, static_cast<double>(h) - 12, "delta", "middle", 12);
  for (std::size_t k = 0; k < ks.size(); ++k)
    s += text(left - 8, top + ch * (static_cast<double>(k) + 0.6), "K=" + std::to_string(ks[k]), "end", 11);
  for (const auto& r : rows) {
    const auto i = static_cast<double>(std::find(ds.begin(), ds.end(), r.delta) - ds.begin());
    const auto k = static_cast<double>(std::find(ks.begin(), ks.end(), r.top_k) - ks.begin());
    const double t = hi > lo ? (r.mean_patches - lo) / (hi - lo) : 0.5;
    const int red = static_cast<int>(255 - 140 * t), green = static_cast<int>(245 - 120 * t), blue = 255;
    s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{}\" height=\"{}\" fill=\"rgb({},{},{})\" stroke=\"white\"/>\n",
                     left + cw * i, top + ch * k, cw, ch, red, green, blue);
    s += text(left + cw * (i + 0.5), top + ch * (k + 0.45), fmt::format("{:.0f}", r.mean_patches), "middle", 10);
    s += text(left + cw * (i + 0.5), top + ch * (k + 0.8),
              std::isfinite(r.auc) ? fmt::format("{:.3f}", r.auc) : std::string("n/a"), "middle", 9);
  }
  return s + "</svg>\n";
}

std::string stopping_bars_svg(const std::vector<StopHistogram>& histograms) {
  std::size_t buckets = 0;
  for (const auto& h : histograms) buckets = std::max(buckets, h.counts.size());
  const double left = 60, top = 40, height = 260, bw = 40, gap = 14;
  const int w = static_cast<int>(left + (bw + gap) * static_cast<double>(histograms.size()) + 160);
  std::string s = svg_open(std::max(w, 360), 360);
  s += text(left + 120, 22, "Stopping scale by delta", "middle", 14);
  for (std::size_t i = 0; i < histograms.size(); ++i) {
    const auto f = histograms[i].fractions();
    double acc = 0.0;
    const double x = left + (bw + gap) * static_cast<double>(i);
    for (std::size_t b = 0; b < f.size(); ++b) {
      const double y0 = top + height * (1.0 - acc - f[b]);
      s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{}\" height=\"{:.2f}\" fill=\"{}\"/>\n", x, y0, bw,
                       height * f[b], color(b));
      acc += f[b];
    }
    s += text(x + bw / 2, top + height + 14, fmt::format("{:g}", histograms[i].delta), "middle", 10);
  }
  s += text(left + (bw + gap) * static_cast<double>(histograms.size()) / 2, top + height + 32, "delta", "middle", 12);
  const double lx = left + (bw + gap) * static_cast<double>(histograms.size()) + 10;
  for (std::size_t b = 0; b < buckets; ++b) {
    const double y = top + 16.0 * static_cast<double>(b);
    s += fmt::format("<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n", lx, y, color(b));
    s += text(lx + 14, y + 9, b + 1 == buckets ? std::string("exhausted") : "scale " + std::to_string(b), "start", 10);
  }
  return s + "</svg>\n";
}

std::string trajectory_svg(const Trajectory& t, double delta) {
  Frame f;
  f.n = std::max<int>(1, static_cast<int>(t.records.size()));
  std::string s = svg_open(640, 360) + f.axes("Confidence and class probabilities", "tick");
  for (std::size_t i = 1; i < t.records.size(); ++i)
    if (t.records[i].scale != t.records[i - 1].scale) {
      const double x = 0.5 * (f.x(static_cast<double>(i)) + f.x(static_cast<double>(i + 1)));
      s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#888888\"/>\n", x, f.top, x,
                       f.top + f.height);
      s += text(x + 4, f.top + 12, "scale " + std::to_string(t.records[i].scale), "start", 10);
    }
  if (delta <= 1.0)
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n",
                     f.left, f.y(delta), f.left + f.width, f.y(delta));
  const std::size_t classes = t.records.empty() ? 0 : t.records.front().probs.size();
  for (std::size_t k = 0; k < classes; ++k) {
    std::vector<double> p;
    for (const auto& r : t.records) p.push_back(r.probs[k]);
    s += polyline(f, p, color(k + 1), 1.2, "3 2");
  }
  std::vector<double> c;
  for (const auto& r : t.records) c.push_back(r.confidence);
  s += polyline(f, c, color(0), 2.0);
  return s + "</svg>\n";
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<std::filesystem::path> emit_report(const BenchReport& report, const std::filesystem::path& dir, double delta) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto put = [&](const char* name, const std::string& content) {
    write_text(dir / name, content);
    written.push_back(dir / name);
  };
  put("methods.csv", methods_csv(report.methods));
  put("sweep.csv", sweep_csv(report.sweep));
  put("histogram.csv", histogram_csv(report.histograms));
  put("summary.json", to_json(report).dump(2) + "\n");
  put("confidence_curves.svg", confidence_curves_svg(report.confidence_curves, delta));
  put("sweep_heatmap.svg", sweep_heatmap_svg(report.sweep));
  put("stopping_scales.svg", stopping_bars_svg(report.histograms));
  return written;
}

}  // namespace pathseek
