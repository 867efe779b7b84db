#include "gipo_cli/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "gipo/diagnostics.hpp"
#include "gipo/surrogate.hpp"

namespace gipo::cli {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') {
      out += "&amp;";
    } else if (c == '<') {
      out += "&lt;";
    } else if (c == '>') {
      out += "&gt;";
    } else {
      out += c;
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

const char* series_color(std::size_t i) { return kPalette[i % std::size(kPalette)]; }

const char* method_color(const std::string& method) {
  if (method == "gipo") return kPalette[0];
  if (method == "ppo_clip") return kPalette[1];
  if (method == "sapo") return kPalette[2];
  if (method == "noclip") return kPalette[7];
  return kPalette[3];
}

// Element sink; everything is appended in call order, so output is a pure
// function of the draw calls.
class Canvas {
 public:
  Canvas(double width, double height) : width_(width), height_(height) {}

  void line(double x1, double y1, double x2, double y2, const char* color, double w,
            bool dashed = false) {
    body_ << "<line x1=\"" << fmt(x1) << "\" y1=\"" << fmt(y1) << "\" x2=\"" << fmt(x2)
          << "\" y2=\"" << fmt(y2) << "\" stroke=\"" << color << "\" stroke-width=\"" << fmt(w)
          << "\"" << (dashed ? " stroke-dasharray=\"5 4\"" : "") << "/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const char* color, double w,
                bool dashed = false) {
    if (pts.size() < 2) return;
    body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << fmt(w)
          << "\"" << (dashed ? " stroke-dasharray=\"5 4\"" : "") << " points=\"";
    for (const auto& [x, y] : pts) body_ << fmt(x) << "," << fmt(y) << " ";
    body_ << "\"/>\n";
  }

  void circle(double cx, double cy, double r, const char* color) {
    body_ << "<circle cx=\"" << fmt(cx) << "\" cy=\"" << fmt(cy) << "\" r=\"" << fmt(r)
          << "\" fill=\"" << color << "\"/>\n";
  }

  void rect(double x, double y, double w, double h, const char* fill,
            const char* stroke = "none") {
    body_ << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(w)
          << "\" height=\"" << fmt(h) << "\" fill=\"" << fill << "\" stroke=\"" << stroke
          << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, double size = 11,
            const char* anchor = "start", const char* color = "#333", int rotate = 0) {
    body_ << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" font-size=\"" << fmt(size)
          << "\" font-family=\"Helvetica,Arial,sans-serif\" text-anchor=\"" << anchor
          << "\" fill=\"" << color << "\"";
    if (rotate != 0) {
      body_ << " transform=\"rotate(" << rotate << " " << fmt(x) << " " << fmt(y) << ")\"";
    }
    body_ << ">" << escape(s) << "</text>\n";
  }

  void begin_clip(int id, double x, double y, double w, double h) {
    body_ << "<clipPath id=\"clip" << id << "\"><rect x=\"" << fmt(x) << "\" y=\"" << fmt(y)
          << "\" width=\"" << fmt(w) << "\" height=\"" << fmt(h) << "\"/></clipPath>\n"
          << "<g clip-path=\"url(#clip" << id << ")\">\n";
  }

  void end_clip() { body_ << "</g>\n"; }

  std::string finish() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width_) << "\" height=\""
        << fmt(height_) << "\" viewBox=\"0 0 " << fmt(width_) << " " << fmt(height_) << "\">\n"
        << "<rect width=\"" << fmt(width_) << "\" height=\"" << fmt(height_)
        << "\" fill=\"#ffffff\"/>\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

 private:
  double width_, height_;
  std::ostringstream body_;
};

// One panel: the pixel rectangle of the plot area plus the data ranges, which
// are stored in log10 units when the axis is logarithmic.
struct Frame {
  double px = 0, py = 0, pw = 0, ph = 0;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool logx = false, logy = false;

  double fx(double x) const {
    const double v = logx ? std::log10(x) : x;
    return px + (v - x0) / (x1 - x0) * pw;
  }
  double fy(double y) const {
    const double v = logy ? std::log10(y) : y;
    return py + ph - (v - y0) / (y1 - y0) * ph;
  }
};

std::pair<double, double> padded_range(std::vector<double> vals) {
  vals.erase(std::remove_if(vals.begin(), vals.end(),
                            [](double v) { return !std::isfinite(v); }),
             vals.end());
  if (vals.empty()) throw std::runtime_error("plot: no finite data values");
  auto [lo_it, hi_it] = std::minmax_element(vals.begin(), vals.end());
  double lo = *lo_it, hi = *hi_it;
  if (lo == hi) {
    const double pad = std::max(1.0, std::abs(lo)) * 0.1;
    return {lo - pad, hi + pad};
  }
  const double pad = (hi - lo) * 0.06;
  return {lo - pad, hi + pad};
}

std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = 10.0 * mag;
  for (double m : {1.0, 2.0, 5.0}) {
    if (raw <= m * mag * (1.0 + 1e-12)) {
      step = m * mag;
      break;
    }
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step - 1e-9) * step; t <= hi + 1e-9 * step; t += step) {
    out.push_back(t == 0.0 ? 0.0 : t);  // normalize -0
  }
  return out;
}

void draw_frame(Canvas& cv, const Frame& f, const std::string& title, const std::string& xlabel,
                const std::string& ylabel) {
  // tick positions in axis units (log10 units on log axes)
  const auto ticks_for = [](double lo, double hi, bool log_axis) {
    if (!log_axis) return nice_ticks(lo, hi);
    std::vector<double> decades;
    for (double k = std::ceil(lo - 1e-9); k <= std::floor(hi + 1e-9); k += 1.0) {
      decades.push_back(k);
    }
    return decades.size() >= 2 ? decades : nice_ticks(lo, hi);
  };

  for (double t : ticks_for(f.x0, f.x1, f.logx)) {
    const double x = f.px + (t - f.x0) / (f.x1 - f.x0) * f.pw;
    cv.line(x, f.py, x, f.py + f.ph, "#eeeeee", 1);
    cv.line(x, f.py + f.ph, x, f.py + f.ph + 4, "#666666", 1);
    cv.text(x, f.py + f.ph + 16, fmt(f.logx ? std::pow(10.0, t) : t), 10, "middle", "#444444");
  }
  for (double t : ticks_for(f.y0, f.y1, f.logy)) {
    const double y = f.py + f.ph - (t - f.y0) / (f.y1 - f.y0) * f.ph;
    cv.line(f.px, y, f.px + f.pw, y, "#eeeeee", 1);
    cv.line(f.px - 4, y, f.px, y, "#666666", 1);
    cv.text(f.px - 6, y + 3.5, fmt(f.logy ? std::pow(10.0, t) : t), 10, "end", "#444444");
  }
  cv.rect(f.px, f.py, f.pw, f.ph, "none", "#888888");
  if (!title.empty()) cv.text(f.px + f.pw / 2, f.py - 8, title, 12, "middle", "#222222");
  if (!xlabel.empty()) cv.text(f.px + f.pw / 2, f.py + f.ph + 32, xlabel, 11, "middle");
  if (!ylabel.empty()) cv.text(f.px - 40, f.py + f.ph / 2, ylabel, 11, "middle", "#333", -90);
}

void draw_legend(Canvas& cv, const Frame& f, const std::vector<std::pair<std::string, const char*>>& entries) {
  double y = f.py + 12;
  for (const auto& [label, color] : entries) {
    const double x = f.px + f.pw - 110;
    cv.line(x, y - 3, x + 16, y - 3, color, 2.5);
    cv.text(x + 20, y, label, 10, "start", "#333333");
    y += 14;
  }
}

// panel layout: every panel block carries its own margins
constexpr double kPanelW = 260, kPanelH = 300;
constexpr double kMarginL = 58, kMarginR = 16, kMarginT = 34, kMarginB = 50;

Frame panel(int index) {
  Frame f;
  f.px = kMarginL + index * (kPanelW + kMarginL + kMarginR);
  f.py = kMarginT;
  f.pw = kPanelW;
  f.ph = kPanelH;
  return f;
}

double canvas_width(int panels) { return panels * (kPanelW + kMarginL + kMarginR); }
double canvas_height() { return kPanelH + kMarginT + kMarginB; }

// ---------------------------------------------------------------------------
// CSV readers

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream is(line);
  while (std::getline(is, tok, ',')) out.push_back(tok);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double num_field(const std::string& tok, const char* what, int line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(std::string(what) + ": line " + std::to_string(line_no) +
                             ": bad number '" + tok + "'");
  }
}

std::vector<MetricRow> load_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("plot: cannot open '" + path.string() + "'");
  try {
    return read_metrics_csv(in);
  } catch (const std::exception& e) {
    throw std::runtime_error("'" + path.string() + "': " + e.what());
  }
}

std::string metrics_label(const std::vector<MetricRow>& rows,
                          const std::filesystem::path& path) {
  if (rows.empty()) return path.stem().string();
  if (rows.front().method == "gipo") {
    return "gipo s=" + fmt(rows.front().sigma);
  }
  return rows.front().method;
}

}  // namespace

std::vector<BiasVarRow> read_biasvar_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "case,method,param,bias,variance,on_frontier") {
    throw std::runtime_error("biasvar csv: missing or unexpected header");
  }
  std::vector<BiasVarRow> rows;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 6) {
      throw std::runtime_error("biasvar csv: line " + std::to_string(line_no) + ": expected 6 fields, got " +
                               std::to_string(f.size()));
    }
    if (f[0].size() != 1) {
      throw std::runtime_error("biasvar csv: line " + std::to_string(line_no) + ": bad case id '" + f[0] + "'");
    }
    BiasVarRow row;
    row.case_id = f[0][0];
    row.point.method = f[1];
    row.point.param = num_field(f[2], "biasvar csv", line_no);
    row.point.bias = num_field(f[3], "biasvar csv", line_no);
    row.point.variance = num_field(f[4], "biasvar csv", line_no);
    if (f[5] != "0" && f[5] != "1") {
      throw std::runtime_error("biasvar csv: line " + std::to_string(line_no) + ": bad frontier flag '" + f[5] +
                               "'");
    }
    row.point.on_frontier = f[5] == "1";
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SweepRow> read_sweep_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "sigma,regime,d95,ess_old_norm,avg_return") {
    throw std::runtime_error("sweep csv: missing or unexpected header");
  }
  std::vector<SweepRow> rows;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 5) {
      throw std::runtime_error("sweep csv: line " + std::to_string(line_no) + ": expected 5 fields, got " +
                               std::to_string(f.size()));
    }
    SweepRow row;
    row.sigma = num_field(f[0], "sweep csv", line_no);
    row.regime = f[1];
    row.d95 = num_field(f[2], "sweep csv", line_no);
    row.ess_old_norm = num_field(f[3], "sweep csv", line_no);
    row.avg_return = num_field(f[4], "sweep csv", line_no);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "sigma,regime,d95,ess_old_norm,avg_return\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%s,%.17g,%.17g,%.17g\n", r.sigma, r.regime.c_str(),
                  r.d95, r.ess_old_norm, r.avg_return);
    os << buf;
  }
}

namespace {

// ---------------------------------------------------------------------------
// renderers

std::string render_weight_curves(const PlotSpec& spec) {
  if (!(spec.sigma > 0.0)) throw std::runtime_error("plot: sigma must be positive");
  if (!(spec.epsilon > 0.0 && spec.epsilon < 1.0)) {
    throw std::runtime_error("plot: epsilon must lie in (0,1)");
  }
  Canvas cv(canvas_width(2), canvas_height());
  const double cap = std::exp(spec.sigma * spec.sigma / 2.0);
  const double ymax = std::max({cap, 1.0 + spec.epsilon, 3.0}) * 1.12;

  struct Series {
    std::string label;
    const char* color;
    std::function<double(double)> m;
  };
  const std::vector<Series> series = {
      {"plain ratio", method_color("noclip"), [](double rho) { return rho; }},
      {"hard clip (A>0)", method_color("ppo_clip"),
       [&](double rho) { return ppo_effective_multiplier(rho, +1, spec.epsilon); }},
      {"soft clip (A>0)", method_color("sapo"),
       [](double rho) { return sapo_multiplier(rho, +1, 2.0, 1.0); }},
      {"damped ratio", method_color("gipo"),
       [&](double rho) { return gipo_multiplier(rho, spec.sigma); }},
  };

  for (int p = 0; p < 2; ++p) {
    Frame f = panel(p);
    f.logx = p == 1;
    f.x0 = p == 0 ? 0.0 : -2.0;
    f.x1 = p == 0 ? 3.0 : 2.0;
    f.y0 = 0.0;
    f.y1 = ymax;
    draw_frame(cv, f, p == 0 ? "multiplier vs ratio" : "multiplier vs ratio, log axis",
               p == 0 ? "ratio" : "ratio (log scale)", "effective multiplier");
    cv.begin_clip(p, f.px, f.py, f.pw, f.ph);
    for (std::size_t s = 0; s < series.size(); ++s) {
      std::vector<std::pair<double, double>> pts;
      const int samples = 512;
      double prev = std::nan("");
      for (int i = 0; i <= samples; ++i) {
        const double rho = p == 0 ? 0.005 + (3.0 - 0.005) * i / samples
                                  : std::pow(10.0, -2.0 + 4.0 * i / samples);
        const double m = series[s].m(rho);
        // split the polyline where the hard clip jumps to zero
        if (!pts.empty() && ((prev == 0.0) != (m == 0.0))) {
          cv.polyline(pts, series[s].color, 2);
          pts.clear();
        }
        pts.emplace_back(f.fx(rho), f.fy(m));
        prev = m;
      }
      cv.polyline(pts, series[s].color, 2);
    }
    cv.end_clip();
    if (p == 0) {
      std::vector<std::pair<std::string, const char*>> entries;
      for (const auto& s : series) entries.emplace_back(s.label, s.color);
      draw_legend(cv, f, entries);
    }
  }
  return cv.finish();
}

std::string render_biasvar(const PlotSpec& spec) {
  std::vector<BiasVarRow> rows;
  for (const auto& path : spec.inputs) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("plot: cannot open '" + path.string() + "'");
    try {
      auto part = read_biasvar_csv(in);
      rows.insert(rows.end(), part.begin(), part.end());
    } catch (const std::exception& e) {
      throw std::runtime_error("'" + path.string() + "': " + e.what());
    }
  }
  if (rows.empty()) throw std::runtime_error("plot: no bias-variance rows");

  std::map<char, std::vector<BiasVarPoint>> by_case;
  for (const auto& r : rows) by_case[r.case_id].push_back(r.point);

  Canvas cv(canvas_width(static_cast<int>(by_case.size())), canvas_height());
  int index = 0;
  for (const auto& [case_id, pts] : by_case) {
    std::vector<double> xs, ys;
    for (const auto& p : pts) {
      xs.push_back(p.bias);
      ys.push_back(p.variance);
    }
    Frame f = panel(index);
    std::tie(f.x0, f.x1) = padded_range(xs);
    std::tie(f.y0, f.y1) = padded_range(ys);
    draw_frame(cv, f, std::string("case ") + case_id, "bias", "variance");

    // damping sweep traced in sigma order
    std::vector<const BiasVarPoint*> gipo;
    for (const auto& p : pts) {
      if (p.method == "gipo") gipo.push_back(&p);
    }
    std::sort(gipo.begin(), gipo.end(),
              [](const auto* a, const auto* b) { return a->param < b->param; });
    std::vector<std::pair<double, double>> trace;
    for (const auto* p : gipo) trace.emplace_back(f.fx(p->bias), f.fy(p->variance));
    cv.polyline(trace, method_color("gipo"), 1.2);

    // dashed frontier through the non-dominated points
    std::vector<const BiasVarPoint*> frontier;
    for (const auto& p : pts) {
      if (p.on_frontier) frontier.push_back(&p);
    }
    std::sort(frontier.begin(), frontier.end(),
              [](const auto* a, const auto* b) { return a->bias < b->bias; });
    std::vector<std::pair<double, double>> fpts;
    for (const auto* p : frontier) fpts.emplace_back(f.fx(p->bias), f.fy(p->variance));
    cv.polyline(fpts, "#333333", 1.2, true);

    for (const auto& p : pts) {
      cv.circle(f.fx(p.bias), f.fy(p.variance), p.method == "gipo" ? 2.6 : 4.0,
                method_color(p.method));
    }
    if (index == 0) {
      std::vector<std::pair<std::string, const char*>> entries;
      for (const char* m : {"gipo", "ppo_clip", "sapo", "noclip"}) {
        if (std::any_of(pts.begin(), pts.end(),
                        [&](const auto& p) { return p.method == m; })) {
          entries.emplace_back(m, method_color(m));
        }
      }
      entries.emplace_back("frontier", "#333333");
      draw_legend(cv, f, entries);
    }
    ++index;
  }
  return cv.finish();
}

std::string render_learning_curves(const PlotSpec& spec) {
  struct Curve {
    std::string label;
    std::vector<std::pair<double, double>> pts;  // env_steps, avg_return
  };
  std::vector<Curve> curves;
  std::vector<double> xs, ys;
  for (const auto& path : spec.inputs) {
    const auto rows = load_metrics(path);
    Curve c;
    c.label = metrics_label(rows, path);
    for (const auto& r : rows) {
      if (!std::isfinite(r.avg_return)) continue;
      c.pts.emplace_back(static_cast<double>(r.env_steps), r.avg_return);
      xs.push_back(static_cast<double>(r.env_steps));
      ys.push_back(r.avg_return);
    }
    if (!c.pts.empty()) curves.push_back(std::move(c));
  }
  if (curves.empty()) throw std::runtime_error("plot: no finite return samples");

  Canvas cv(canvas_width(1), canvas_height());
  Frame f = panel(0);
  std::tie(f.x0, f.x1) = padded_range(xs);
  std::tie(f.y0, f.y1) = padded_range(ys);
  draw_frame(cv, f, "learning curves", "env steps", "average return");
  std::vector<std::pair<std::string, const char*>> entries;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    std::vector<std::pair<double, double>> px;
    for (const auto& [x, y] : curves[i].pts) px.emplace_back(f.fx(x), f.fy(y));
    cv.polyline(px, series_color(i), 1.8);
    entries.emplace_back(curves[i].label, series_color(i));
  }
  draw_legend(cv, f, entries);
  return cv.finish();
}

std::string render_utilization_bars(const PlotSpec& spec) {
  struct Run {
    std::string label;
    double stat[4] = {0, 0, 0, 0};  // near-zero, dead, suppressed, old share
  };
  std::vector<Run> runs;
  for (const auto& path : spec.inputs) {
    const auto rows = load_metrics(path);
    if (rows.empty()) throw std::runtime_error("plot: '" + path.string() + "' has no rows");
    Run run;
    run.label = metrics_label(rows, path);
    const std::size_t cut = rows.size() - rows.size() / 5;
    std::size_t n = 0;
    for (std::size_t i = cut; i < rows.size(); ++i, ++n) {
      run.stat[0] += rows[i].near_zero_frac;
      run.stat[1] += rows[i].dead_frac;
      run.stat[2] += rows[i].suppressed_frac;
      run.stat[3] += rows[i].share_old;
    }
    for (double& s : run.stat) s /= static_cast<double>(n);
    runs.push_back(std::move(run));
  }
  if (runs.empty()) throw std::runtime_error("plot: no inputs");

  double ymax = 0.0;
  for (const auto& r : runs) ymax = std::max({ymax, r.stat[0], r.stat[1], r.stat[2], r.stat[3]});

  Canvas cv(canvas_width(1), canvas_height());
  Frame f = panel(0);
  f.x0 = -0.5;
  f.x1 = 3.5;
  f.y0 = 0.0;
  f.y1 = std::max(ymax, 0.05) * 1.15;
  // y ticks and frame only; the x axis holds category labels
  for (double t : nice_ticks(f.y0, f.y1)) {
    const double y = f.fy(t);
    cv.line(f.px, y, f.px + f.pw, y, "#eeeeee", 1);
    cv.line(f.px - 4, y, f.px, y, "#666666", 1);
    cv.text(f.px - 6, y + 3.5, fmt(t), 10, "end", "#444444");
  }
  cv.rect(f.px, f.py, f.pw, f.ph, "none", "#888888");
  cv.text(f.px + f.pw / 2, f.py - 8, "final-window utilization", 12, "middle", "#222222");
  cv.text(f.px - 40, f.py + f.ph / 2, "fraction", 11, "middle", "#333", -90);
  const char* cats[4] = {"near-zero", "dead", "suppressed", "old share"};
  for (int c = 0; c < 4; ++c) {
    cv.text(f.fx(c), f.py + f.ph + 16, cats[c], 10, "middle", "#444444");
  }

  const double group_width = 0.72;
  const double bar_w = group_width / static_cast<double>(runs.size());
  std::vector<std::pair<std::string, const char*>> entries;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (int c = 0; c < 4; ++c) {
      const double x0 = c - group_width / 2 + r * bar_w;
      const double px = f.fx(x0);
      const double pw = f.fx(x0 + bar_w * 0.9) - px;
      const double py = f.fy(runs[r].stat[c]);
      cv.rect(px, py, pw, f.fy(0.0) - py, series_color(r));
    }
    entries.emplace_back(runs[r].label, series_color(r));
  }
  draw_legend(cv, f, entries);
  return cv.finish();
}

std::string render_scatter(const PlotSpec& spec, bool lag_tail) {
  struct Cloud {
    std::string label;
    std::vector<std::pair<double, double>> pts;
  };
  std::vector<Cloud> clouds;
  std::vector<double> xs, ys;
  for (const auto& path : spec.inputs) {
    const auto rows = load_metrics(path);
    Cloud c;
    c.label = metrics_label(rows, path);
    for (const auto& r : rows) {
      const double x = lag_tail ? r.old_gap_p95 : r.kl_to_behavior;
      const double y = lag_tail ? r.d95 : r.ess_old_norm;
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      c.pts.emplace_back(x, y);
      xs.push_back(x);
      ys.push_back(y);
    }
    if (!c.pts.empty()) clouds.push_back(std::move(c));
  }
  if (clouds.empty()) throw std::runtime_error("plot: no finite samples");

  Canvas cv(canvas_width(1), canvas_height());
  Frame f = panel(0);
  std::tie(f.x0, f.x1) = padded_range(xs);
  std::tie(f.y0, f.y1) = padded_range(ys);
  draw_frame(cv, f, lag_tail ? "version lag vs ratio tails" : "behavior KL vs old-sample ESS",
             lag_tail ? "old-sample version gap p95" : "KL to behavior",
             lag_tail ? "|log ratio| p95" : "normalized old ESS");
  std::vector<std::pair<std::string, const char*>> entries;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    for (const auto& [x, y] : clouds[i].pts) cv.circle(f.fx(x), f.fy(y), 2.2, series_color(i));
    entries.emplace_back(clouds[i].label, series_color(i));
  }

  if (lag_tail && xs.size() >= 2) {
    // least-squares trend over the pooled points
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sx += xs[i];
      sy += ys[i];
      sxx += xs[i] * xs[i];
      sxy += xs[i] * ys[i];
    }
    const double denom = n * sxx - sx * sx;
    if (denom > 0.0) {
      const double slope = (n * sxy - sx * sy) / denom;
      const double intercept = (sy - slope * sx) / n;
      double ss_res = 0, ss_tot = 0;
      const double mean_y = sy / n;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        const double fit = intercept + slope * xs[i];
        ss_res += (ys[i] - fit) * (ys[i] - fit);
        ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
      }
      cv.begin_clip(0, f.px, f.py, f.pw, f.ph);
      cv.polyline({{f.fx(f.x0), f.fy(intercept + slope * f.x0)},
                   {f.fx(f.x1), f.fy(intercept + slope * f.x1)}},
                  "#333333", 1.4, true);
      cv.end_clip();
      if (ss_tot > 0.0) {
        cv.text(f.px + 8, f.py + 16, "trend R^2 = " + fmt(1.0 - ss_res / ss_tot), 11, "start",
                "#333333");
      }
    }
  }
  draw_legend(cv, f, entries);
  return cv.finish();
}

std::string render_sigma_sensitivity(const PlotSpec& spec) {
  std::vector<SweepRow> rows;
  for (const auto& path : spec.inputs) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("plot: cannot open '" + path.string() + "'");
    try {
      auto part = read_sweep_csv(in);
      rows.insert(rows.end(), part.begin(), part.end());
    } catch (const std::exception& e) {
      throw std::runtime_error("'" + path.string() + "': " + e.what());
    }
  }
  if (rows.empty()) throw std::runtime_error("plot: no sweep rows");

  std::map<std::string, std::vector<const SweepRow*>> by_regime;
  for (const auto& r : rows) by_regime[r.regime].push_back(&r);
  for (auto& [_, rs] : by_regime) {
    std::sort(rs.begin(), rs.end(), [](const auto* a, const auto* b) { return a->sigma < b->sigma; });
  }

  const char* titles[3] = {"ratio tail p95", "normalized old ESS", "average return"};
  const auto field = [](const SweepRow& r, int which) {
    return which == 0 ? r.d95 : which == 1 ? r.ess_old_norm : r.avg_return;
  };

  Canvas cv(canvas_width(3), canvas_height());
  for (int which = 0; which < 3; ++which) {
    std::vector<double> xs, ys;
    for (const auto& r : rows) {
      xs.push_back(std::log10(r.sigma));
      if (std::isfinite(field(r, which))) ys.push_back(field(r, which));
    }
    Frame f = panel(which);
    f.logx = true;
    std::tie(f.x0, f.x1) = padded_range(xs);
    std::tie(f.y0, f.y1) = padded_range(ys);
    draw_frame(cv, f, titles[which], "sigma (log scale)", "");
    std::size_t color = 0;
    std::vector<std::pair<std::string, const char*>> entries;
    for (const auto& [regime, rs] : by_regime) {
      std::vector<std::pair<double, double>> pts;
      for (const auto* r : rs) {
        if (!std::isfinite(field(*r, which))) continue;
        pts.emplace_back(f.fx(r->sigma), f.fy(field(*r, which)));
        cv.circle(f.fx(r->sigma), f.fy(field(*r, which)), 2.6, series_color(color));
      }
      cv.polyline(pts, series_color(color), 1.8);
      entries.emplace_back(regime, series_color(color));
      ++color;
    }
    if (which == 0) draw_legend(cv, f, entries);
  }
  return cv.finish();
}

}  // namespace

PlotKind parse_plot_kind(const std::string& name) {
  if (name == "weight_curves") return PlotKind::kWeightCurves;
  if (name == "biasvar_pareto") return PlotKind::kBiasvarPareto;
  if (name == "learning_curves") return PlotKind::kLearningCurves;
  if (name == "utilization_bars") return PlotKind::kUtilizationBars;
  if (name == "kl_ess_scatter") return PlotKind::kKlEssScatter;
  if (name == "lag_tail_scatter") return PlotKind::kLagTailScatter;
  if (name == "sigma_sensitivity") return PlotKind::kSigmaSensitivity;
  throw std::runtime_error("unknown plot kind '" + name + "'");
}

const char* plot_kind_name(PlotKind kind) {
  switch (kind) {
    case PlotKind::kWeightCurves: return "weight_curves";
    case PlotKind::kBiasvarPareto: return "biasvar_pareto";
    case PlotKind::kLearningCurves: return "learning_curves";
    case PlotKind::kUtilizationBars: return "utilization_bars";
    case PlotKind::kKlEssScatter: return "kl_ess_scatter";
    case PlotKind::kLagTailScatter: return "lag_tail_scatter";
    case PlotKind::kSigmaSensitivity: return "sigma_sensitivity";
  }
  return "?";
}

std::string render_plot_string(const PlotSpec& spec) {
  const bool needs_inputs = spec.kind != PlotKind::kWeightCurves;
  if (needs_inputs && spec.inputs.empty()) {
    throw std::runtime_error("plot: kind needs at least one input CSV");
  }
  switch (spec.kind) {
    case PlotKind::kWeightCurves: return render_weight_curves(spec);
    case PlotKind::kBiasvarPareto: return render_biasvar(spec);
    case PlotKind::kLearningCurves: return render_learning_curves(spec);
    case PlotKind::kUtilizationBars: return render_utilization_bars(spec);
    case PlotKind::kKlEssScatter: return render_scatter(spec, false);
    case PlotKind::kLagTailScatter: return render_scatter(spec, true);
    case PlotKind::kSigmaSensitivity: return render_sigma_sensitivity(spec);
  }
  throw std::runtime_error("plot: unhandled kind");
}

void render_plot(const PlotSpec& spec) {
  const std::string svg = render_plot_string(spec);
  if (spec.output.has_parent_path()) {
    std::filesystem::create_directories(spec.output.parent_path());
  }
  std::ofstream out(spec.output, std::ios::binary);
  if (!out) throw std::runtime_error("plot: cannot write '" + spec.output.string() + "'");
  out << svg;
}

}  // namespace gipo::cli
