#include "semimoe/report.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "semimoe/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace semimoe {

TrainConfig apply_ablation(TrainConfig cfg, const std::string& ablation) {
  if (ablation == "full") return cfg;
  if (ablation == "seg+sdf") {
    cfg.experts = "seg,sdf";
    return cfg;
  }
  if (ablation == "seg+bnd") {
    cfg.experts = "seg,bnd";
    return cfg;
  }
  if (ablation == "single_gate") {
    cfg.single_gate = true;
    return cfg;
  }
  if (ablation == "linear_sum") {
    cfg.linear_sum_loss = true;
    return cfg;
  }
  if (ablation == "supervised_only") {
    cfg.lambda_max = 0.0;
    return cfg;
  }
  throw std::invalid_argument("unknown ablation: " + ablation);
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

EvalReport run_matrix(const TrainConfig& base, const std::vector<std::string>& ablations,
                      const std::vector<MatrixRepeat>& repeats, const Dataset& ds,
                      const std::string& out_root, int64_t workers) {
  struct Job {
    std::string ablation;
    MatrixRepeat repeat;
  };
  std::vector<Job> jobs;
  for (const auto& a : ablations)
    for (const auto& r : repeats) jobs.push_back({a, r});
  std::vector<CellResult> results(jobs.size());

  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      CellResult& res = results[i];
      res.ablation = jobs[i].ablation;
      res.repeat = jobs[i].repeat;
      try {
        TrainConfig cfg = apply_ablation(base, jobs[i].ablation);
        cfg.seed = jobs[i].repeat.seed;
        cfg.fold = jobs[i].repeat.fold;
        cfg.validate();
        std::string out_dir;
        if (!out_root.empty()) {
          std::ostringstream os;
          os << jobs[i].ablation << "__s" << jobs[i].repeat.seed << "_f" << jobs[i].repeat.fold;
          out_dir = (fs::path(out_root) / os.str()).string();
        }
        TrainState state = init_state(cfg);
        res.summary = train(state, ds, out_dir);
        res.ok = true;
      } catch (const std::exception& e) {
        res.ok = false;
        res.error = e.what();
      }
    }
  };
  const int64_t n_workers =
      std::max<int64_t>(1, std::min<int64_t>(workers, static_cast<int64_t>(jobs.size())));
  std::vector<std::thread> pool;
  for (int64_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  EvalReport report;
  report.base_digest = config_digest(base);
  for (const auto& a : ablations) {
    AblationRow row;
    row.ablation = a;
    std::vector<double> best_d, best_j, final_d;
    for (size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].ablation != a) continue;
      row.cells.push_back(results[i]);
      if (!results[i].ok) continue;
      ++row.n_ok;
      best_d.push_back(results[i].summary.best_dice);
      best_j.push_back(results[i].summary.best_jaccard);
      final_d.push_back(results[i].summary.final_dice);
    }
    row.mean_best_dice = mean_of(best_d);
    row.std_best_dice = std_of(best_d);
    row.mean_best_jaccard = mean_of(best_j);
    row.std_best_jaccard = std_of(best_j);
    row.mean_final_dice = mean_of(final_d);
    row.std_final_dice = std_of(final_d);
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string format_report_text(const EvalReport& report) {
  std::ostringstream os;
  os << "ablation          n  DSC best (%)        JC best (%)         DSC final (%)\n";
  os << "----------------- -- ------------------- ------------------- -------------------\n";
  char buf[256];
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof buf, "%-17s %2lld %7.2f +- %-7.4f  %7.2f +- %-7.4f  %7.2f +- %-7.4f\n",
                  row.ablation.c_str(), static_cast<long long>(row.n_ok),
                  100.0 * row.mean_best_dice, 100.0 * row.std_best_dice,
                  100.0 * row.mean_best_jaccard, 100.0 * row.std_best_jaccard,
                  100.0 * row.mean_final_dice, 100.0 * row.std_final_dice);
    os << buf;
    for (const auto& cell : row.cells)
      if (!cell.ok)
        os << "  ! cell seed=" << cell.repeat.seed << " fold=" << cell.repeat.fold
           << " failed: " << cell.error << "\n";
  }
  return os.str();
}

void write_report(const EvalReport& report, const std::string& dir) {
  fs::create_directories(dir);
  {
    std::ofstream f(fs::path(dir) / "report.txt");
    f << format_report_text(report);
  }
  json j;
  j["base_digest"] = report.base_digest;
  j["std_convention"] = "population";
  j["rows"] = json::array();
  for (const auto& row : report.rows) {
    json r;
    r["ablation"] = row.ablation;
    r["n_ok"] = row.n_ok;
    r["mean_best_dice"] = row.mean_best_dice;
    r["std_best_dice"] = row.std_best_dice;
    r["mean_best_jaccard"] = row.mean_best_jaccard;
    r["std_best_jaccard"] = row.std_best_jaccard;
    r["mean_final_dice"] = row.mean_final_dice;
    r["std_final_dice"] = row.std_final_dice;
    r["cells"] = json::array();
    for (const auto& cell : row.cells) {
      json c;
      c["seed"] = cell.repeat.seed;
      c["fold"] = cell.repeat.fold;
      c["ok"] = cell.ok;
      if (cell.ok) {
        c["best_dice"] = cell.summary.best_dice;
        c["best_jaccard"] = cell.summary.best_jaccard;
        c["best_epoch"] = cell.summary.best_epoch;
        c["final_dice"] = cell.summary.final_dice;
        c["final_jaccard"] = cell.summary.final_jaccard;
      } else {
        c["error"] = cell.error;
      }
      r["cells"].push_back(c);
    }
    j["rows"].push_back(r);
  }
  std::ofstream f(fs::path(dir) / "report.json");
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Chart rendering: a small raster canvas with a 3x5 pixel font, enough
// for axis extents and legends.

namespace {

struct Raster {
  int64_t H, W;
  Tensor img;  // 3×H×W
  Raster(int64_t h, int64_t w) : H(h), W(w), img({3, h, w}) { img.fill(1.0); }

  void set(int64_t y, int64_t x, double r, double g, double b) {
    if (y < 0 || y >= H || x < 0 || x >= W) return;
    img.at3(0, y, x) = r;
    img.at3(1, y, x) = g;
    img.at3(2, y, x) = b;
  }

  void line(double x0, double y0, double x1, double y1, double r, double g, double b) {
    const double dx = x1 - x0, dy = y1 - y0;
    const int64_t steps = std::max<int64_t>(1, static_cast<int64_t>(
                                                   std::ceil(std::max(std::fabs(dx), std::fabs(dy)))));
    for (int64_t i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(steps);
      set(static_cast<int64_t>(std::lround(y0 + t * dy)),
          static_cast<int64_t>(std::lround(x0 + t * dx)), r, g, b);
    }
  }

  // 3x5 glyphs, row-major from the top; bit 14 is row 0 col 0.
  static uint16_t glyph(char c) {
    auto g = [](const char* rows) {
      uint16_t v = 0;
      for (int i = 0; i < 15; ++i) v = static_cast<uint16_t>((v << 1) | (rows[i] == '1'));
      return v;
    };
    switch (std::toupper(static_cast<unsigned char>(c))) {
      case '0': return g("111101101101111");
      case '1': return g("010110010010111");
      case '2': return g("111001111100111");
      case '3': return g("111001111001111");
      case '4': return g("101101111001001");
      case '5': return g("111100111001111");
      case '6': return g("111100111101111");
      case '7': return g("111001001010010");
      case '8': return g("111101111101111");
      case '9': return g("111101111001111");
      case 'A': return g("010101111101101");
      case 'B': return g("110101110101110");
      case 'C': return g("011100100100011");
      case 'D': return g("110101101101110");
      case 'E': return g("111100110100111");
      case 'F': return g("111100110100100");
      case 'G': return g("011100101101011");
      case 'H': return g("101101111101101");
      case 'I': return g("111010010010111");
      case 'J': return g("001001001101010");
      case 'K': return g("101110100110101");
      case 'L': return g("100100100100111");
      case 'M': return g("101111111101101");
      case 'N': return g("110101101101101");
      case 'O': return g("010101101101010");
      case 'P': return g("110101110100100");
      case 'Q': return g("010101101011001");
      case 'R': return g("110101110110101");
      case 'S': return g("011100010001110");
      case 'T': return g("111010010010010");
      case 'U': return g("101101101101111");
      case 'V': return g("101101101101010");
      case 'W': return g("101101111111101");
      case 'X': return g("101101010101101");
      case 'Y': return g("101101010010010");
      case 'Z': return g("111001010100111");
      case '.': return g("000000000000010");
      case '-': return g("000000111000000");
      case ':': return g("000010000010000");
      case '_': return g("000000000000111");
      case '+': return g("000010111010000");
      case '/': return g("001001010100100");
      default: return 0;
    }
  }

  void text(int64_t y, int64_t x, const std::string& s, double r, double g, double b) {
    for (char c : s) {
      const uint16_t bits = glyph(c);
      for (int row = 0; row < 5; ++row)
        for (int col = 0; col < 3; ++col)
          if (bits & (1 << (14 - (row * 3 + col)))) set(y + row, x + col, r, g, b);
      x += 4;
    }
  }
};

struct Series {
  std::string label;
  std::vector<double> ys;
  double rgb[3];
};

std::string fmt_tick(double v) {
  char buf[32];
  if (std::fabs(v) >= 100.0 || v == std::floor(v))
    std::snprintf(buf, sizeof buf, "%.0f", v);
  else if (std::fabs(v) >= 1.0)
    std::snprintf(buf, sizeof buf, "%.2f", v);
  else
    std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

void render_chart(const std::string& path, const std::string& title,
                  const std::vector<Series>& series) {
  const int64_t H = 240, W = 400;
  const int64_t left = 40, right = 12, top = 18, bottom = 22;
  Raster canvas(H, W);

  double lo = 1e300, hi = -1e300;
  size_t max_n = 0;
  for (const auto& s : series) {
    for (double v : s.ys) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    max_n = std::max(max_n, s.ys.size());
  }
  if (max_n == 0 || lo > hi) return;
  if (hi == lo) {
    hi += 1.0;
    lo -= 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  // Frame and title.
  canvas.line(left, top, left, H - bottom, 0, 0, 0);
  canvas.line(left, H - bottom, W - right, H - bottom, 0, 0, 0);
  canvas.text(4, left, title, 0, 0, 0);
  canvas.text(top - 6, 2, fmt_tick(hi), 0.3, 0.3, 0.3);
  canvas.text(H - bottom - 2, 2, fmt_tick(lo), 0.3, 0.3, 0.3);
  canvas.text(H - bottom + 6, W - right - 30, fmt_tick(static_cast<double>(max_n - 1)), 0.3, 0.3,
              0.3);
  canvas.text(H - bottom + 6, left, "0", 0.3, 0.3, 0.3);

  const double plot_w = static_cast<double>(W - left - right - 1);
  const double plot_h = static_cast<double>(H - top - bottom - 1);
  auto px = [&](size_t i, size_t n) {
    return left + 1 + (n <= 1 ? 0.0 : plot_w * static_cast<double>(i) / static_cast<double>(n - 1));
  };
  auto py = [&](double v) { return top + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  int64_t legend_x = left + 6;
  for (const auto& s : series) {
    for (size_t i = 0; i + 1 < s.ys.size(); ++i) {
      if (!std::isfinite(s.ys[i]) || !std::isfinite(s.ys[i + 1])) continue;
      canvas.line(px(i, s.ys.size()), py(s.ys[i]), px(i + 1, s.ys.size()), py(s.ys[i + 1]),
                  s.rgb[0], s.rgb[1], s.rgb[2]);
    }
    for (int64_t dy = 0; dy < 4; ++dy)
      for (int64_t dx = 0; dx < 4; ++dx)
        canvas.set(10 + dy, legend_x + dx, s.rgb[0], s.rgb[1], s.rgb[2]);
    canvas.text(10, legend_x + 6, s.label, 0, 0, 0);
    legend_x += 6 + 4 * static_cast<int64_t>(s.label.size()) + 10;
  }
  write_rgb_png(path, canvas.img);
}

constexpr double kPalette[6][3] = {{0.85, 0.2, 0.2}, {0.2, 0.45, 0.85}, {0.2, 0.65, 0.3},
                                   {0.85, 0.55, 0.1}, {0.55, 0.25, 0.7}, {0.3, 0.3, 0.3}};

}  // namespace

void render_run_plots(const std::string& run_dir, const std::string& out_dir) {
  std::ifstream f(fs::path(run_dir) / "metrics.jsonl");
  if (!f) throw std::runtime_error("no metrics.jsonl in " + run_dir);
  fs::create_directories(out_dir);

  std::vector<json> iters, evals;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    (j.at("type") == "iter" ? iters : evals).push_back(std::move(j));
  }

  auto collect = [](const std::vector<json>& rows, auto getter) {
    std::vector<double> ys;
    ys.reserve(rows.size());
    for (const auto& r : rows) ys.push_back(getter(r));
    return ys;
  };

  if (!iters.empty()) {
    std::vector<Series> loss_series;
    const char* names[] = {"seg", "sdf", "bnd"};
    int color = 0;
    for (const char* n : names) {
      if (!iters.front().contains("sup") || !iters.front()["sup"].contains(n)) continue;
      Series s;
      s.label = std::string("sup ") + n;
      std::copy_n(kPalette[color % 6], 3, s.rgb);
      ++color;
      s.ys = collect(iters, [&](const json& r) { return r["sup"][n].get<double>(); });
      loss_series.push_back(std::move(s));
    }
    for (const char* n : names) {
      if (iters.back().contains("unsup") && iters.back()["unsup"].contains(n)) {
        Series s;
        s.label = std::string("unsup ") + n;
        std::copy_n(kPalette[color % 6], 3, s.rgb);
        ++color;
        s.ys = collect(iters, [&](const json& r) {
          return r.contains("unsup") && r["unsup"].contains(n) ? r["unsup"][n].get<double>()
                                                               : std::nan("");
        });
        loss_series.push_back(std::move(s));
      }
    }
    render_chart((fs::path(out_dir) / "loss_curves.png").string(), "task losses per iter",
                 loss_series);

    std::vector<Series> sigma_series;
    color = 0;
    for (const char* n : names) {
      if (!iters.front().contains("sigma") || !iters.front()["sigma"].contains(n)) continue;
      Series s;
      s.label = std::string("sigma ") + n;
      std::copy_n(kPalette[color % 6], 3, s.rgb);
      ++color;
      s.ys = collect(iters, [&](const json& r) { return r["sigma"][n].get<double>(); });
      sigma_series.push_back(std::move(s));
    }
    if (!sigma_series.empty())
      render_chart((fs::path(out_dir) / "sigma_trajectories.png").string(), "sigma per iter",
                   sigma_series);

    if (iters.front().contains("gate_w") && iters.front()["gate_w"].contains("seg")) {
      std::vector<Series> gate_series;
      const size_t m = iters.front()["gate_w"]["seg"].size();
      for (size_t e = 0; e < m; ++e) {
        Series s;
        s.label = "expert " + std::to_string(e);
        std::copy_n(kPalette[e % 6], 3, s.rgb);
        s.ys = collect(iters,
                       [&](const json& r) { return r["gate_w"]["seg"][e].get<double>(); });
        gate_series.push_back(std::move(s));
      }
      render_chart((fs::path(out_dir) / "gate_weights_seg.png").string(),
                   "seg gate weights per iter", gate_series);
    }

    Series lam;
    lam.label = "lambda";
    std::copy_n(kPalette[3], 3, lam.rgb);
    lam.ys = collect(iters, [](const json& r) { return r["lambda"].get<double>(); });
    render_chart((fs::path(out_dir) / "lambda_schedule.png").string(), "lambda per iter", {lam});
  }

  if (!evals.empty()) {
    Series d, dg;
    d.label = "dice expert";
    std::copy_n(kPalette[0], 3, d.rgb);
    d.ys = collect(evals, [](const json& r) { return r["dice"].get<double>(); });
    dg.label = "dice gate";
    std::copy_n(kPalette[1], 3, dg.rgb);
    dg.ys = collect(evals, [](const json& r) { return r["dice_gate"].get<double>(); });
    render_chart((fs::path(out_dir) / "test_dice.png").string(), "test dice per eval", {d, dg});
  }
}

}  // namespace semimoe
