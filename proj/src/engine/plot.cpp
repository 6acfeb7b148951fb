#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "nlohmann/json.hpp"
#include "stretchlab/engine/engine.hpp"
#include "stretchlab/metrics.hpp"

namespace stretchlab::engine {

namespace {

struct MetricRow {
  std::string variant, horizon_name, region;
  int horizon = 0;
  double iou = 0, vpq = 0, ged = 0;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

std::vector<MetricRow> read_rows(const std::string& path, bool ged_file) {
  std::ifstream f(path);
  if (!f) throw ConfigError("plot: cannot open report " + path);
  std::vector<MetricRow> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    auto fields = split_csv(line);
    if (fields.size() < 5) continue;
    MetricRow r;
    r.variant = fields[1];
    r.horizon_name = fields[2];
    r.horizon = metrics::horizon_of(fields[2]);
    r.region = fields[3];
    if (ged_file) {
      r.ged = std::stod(fields[4]);
    } else {
      r.iou = std::stod(fields[4]);
      r.vpq = std::stod(fields[5]);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

const char* kColors[] = {"#1f6fb2", "#c44e52", "#2d8653", "#8172b2"};

struct Series {
  std::string variant, region;
  std::map<int, std::pair<double, int>> by_horizon;  // horizon -> (sum, count)
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// Shared frame for the line panels.
void line_panel(std::string& svg, const std::vector<Series>& series,
                const std::string& title, int train_horizon,
                const std::vector<std::string>& variants) {
  const double w = 640, h = 440, ml = 60, mr = 20, mt = 40, mb = 50;
  double px = w - ml - mr, py = h - mt - mb;
  int max_h = 4;
  for (const auto& s : series)
    for (const auto& [hz, _] : s.by_horizon) max_h = std::max(max_h, hz);

  auto x_of = [&](double hz) { return ml + px * (hz - 1) / (max_h - 1 + 1e-9); };
  auto y_of = [&](double v) { return mt + py * (1.0 - v); };

  svg += "<svg xmlns='http://www.w3.org/2000/svg' width='" + fmt(w) + "' height='" +
         fmt(h) + "'>\n";
  svg += "<rect width='100%' height='100%' fill='white'/>\n";
  svg += "<text x='" + fmt(w / 2) + "' y='24' text-anchor='middle' font-size='16'>" +
         title + "</text>\n";
  svg += "<line x1='" + fmt(ml) + "' y1='" + fmt(mt) + "' x2='" + fmt(ml) +
         "' y2='" + fmt(mt + py) + "' stroke='black'/>\n";
  svg += "<line x1='" + fmt(ml) + "' y1='" + fmt(mt + py) + "' x2='" + fmt(ml + px) +
         "' y2='" + fmt(mt + py) + "' stroke='black'/>\n";
  for (int tick = 0; tick <= 5; ++tick) {
    double v = tick / 5.0;
    svg += "<text x='" + fmt(ml - 8) + "' y='" + fmt(y_of(v) + 4) +
           "' text-anchor='end' font-size='11'>" + fmt(v) + "</text>\n";
  }

  // training horizon marker
  svg += "<line x1='" + fmt(x_of(train_horizon)) + "' y1='" + fmt(mt) + "' x2='" +
         fmt(x_of(train_horizon)) + "' y2='" + fmt(mt + py) +
         "' stroke='gray' stroke-dasharray='3,3'/>\n";

  for (const Series& s : series) {
    size_t vi = std::find(variants.begin(), variants.end(), s.variant) -
                variants.begin();
    const char* color = kColors[vi % 4];
    std::string dash = s.region == "near" ? " stroke-dasharray='6,4'" : "";
    std::string points;
    for (const auto& [hz, sc] : s.by_horizon) {
      double v = sc.first / sc.second;
      points += fmt(x_of(hz)) + "," + fmt(y_of(v)) + " ";
      svg += "<text x='" + fmt(x_of(hz)) + "' y='" + fmt(mt + py + 16) +
             "' text-anchor='middle' font-size='11'>" + std::to_string(hz) +
             "</text>\n";
    }
    svg += "<polyline fill='none' stroke='" + std::string(color) + "'" + dash +
           " stroke-width='2' points='" + points + "'/>\n";
  }

  double ly = mt + 10;
  for (size_t vi = 0; vi < variants.size(); ++vi) {
    svg += "<text x='" + fmt(ml + 10) + "' y='" + fmt(ly) +
           "' font-size='11' fill='" + kColors[vi % 4] + "'>" + variants[vi] +
           " (near dashed, far solid)</text>\n";
    ly += 14;
  }
  svg += "<text x='" + fmt(w / 2) + "' y='" + fmt(h - 12) +
         "' text-anchor='middle' font-size='12'>future steps</text>\n";
  svg += "</svg>\n";
}

void write_file(const std::string& path, const std::string& text) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot write " + path);
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

}  // namespace

void plot_reports(const std::string& metrics_csv, const std::string& out_dir) {
  std::vector<MetricRow> rows = read_rows(metrics_csv, false);
  if (rows.empty()) throw ConfigError("plot: empty report " + metrics_csv);

  std::string dir = std::filesystem::path(metrics_csv).parent_path().string();
  if (dir.empty()) dir = ".";
  std::vector<MetricRow> ged_rows;
  std::string ged_path = dir + "/report_ged.csv";
  if (std::filesystem::exists(ged_path)) ged_rows = read_rows(ged_path, true);

  int train_horizon = 4;
  std::string summary_path = dir + "/report_summary.json";
  if (std::filesystem::exists(summary_path)) {
    std::ifstream f(summary_path);
    try {
      nlohmann::json j = nlohmann::json::parse(f);
      train_horizon = j.value("training_horizon", 4);
    } catch (const nlohmann::json::exception&) {
    }
  }

  std::vector<std::string> variants;
  for (const MetricRow& r : rows)
    if (std::find(variants.begin(), variants.end(), r.variant) == variants.end())
      variants.push_back(r.variant);
  std::sort(variants.begin(), variants.end());

  auto build_series = [&](auto metric_of, const std::vector<MetricRow>& src) {
    std::map<std::pair<std::string, std::string>, Series> grouped;
    for (const MetricRow& r : src) {
      Series& s = grouped[{r.variant, r.region}];
      s.variant = r.variant;
      s.region = r.region;
      auto& slot = s.by_horizon[r.horizon];
      slot.first += metric_of(r);
      slot.second += 1;
    }
    std::vector<Series> out;
    for (auto& [_, s] : grouped) out.push_back(std::move(s));
    return out;
  };

  std::filesystem::create_directories(out_dir);
  std::string svg;
  line_panel(svg, build_series([](const MetricRow& r) { return r.iou; }, rows),
             "IoU over temporal horizon", train_horizon, variants);
  write_file(out_dir + "/plot_iou.svg", svg);

  svg.clear();
  line_panel(svg, build_series([](const MetricRow& r) { return r.vpq; }, rows),
             "VPQ over temporal horizon", train_horizon, variants);
  write_file(out_dir + "/plot_vpq.svg", svg);

  if (!ged_rows.empty()) {
    // Bar chart: mean GED per (variant, horizon, region), sorted.
    std::map<std::tuple<std::string, int, std::string>, std::pair<double, int>> bars;
    for (const MetricRow& r : ged_rows) {
      auto& slot = bars[{r.variant, r.horizon, r.region}];
      slot.first += r.ged;
      slot.second += 1;
    }
    double maxv = 1e-9;
    for (const auto& [_, sc] : bars) maxv = std::max(maxv, sc.first / sc.second);
    const double w = 640, h = 440, ml = 60, mt = 40, mb = 90;
    double px = w - ml - 20, py = h - mt - mb;
    double bw = px / bars.size();
    svg = "<svg xmlns='http://www.w3.org/2000/svg' width='" + fmt(w) +
          "' height='" + fmt(h) + "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    svg += "<text x='" + fmt(w / 2) +
           "' y='24' text-anchor='middle' font-size='16'>Generalized energy "
           "distance (x100)</text>\n";
    int bi = 0;
    for (const auto& [key, sc] : bars) {
      double v = sc.first / sc.second;
      double bh = py * v / maxv;
      size_t vi = std::find(variants.begin(), variants.end(), std::get<0>(key)) -
                  variants.begin();
      svg += "<rect x='" + fmt(ml + bi * bw + 2) + "' y='" + fmt(mt + py - bh) +
             "' width='" + fmt(bw - 4) + "' height='" + fmt(bh) + "' fill='" +
             kColors[vi % 4] + "'/>\n";
      svg += "<text x='" + fmt(ml + bi * bw + bw / 2) + "' y='" + fmt(mt + py + 12) +
             "' text-anchor='middle' font-size='9' transform='rotate(45 " +
             fmt(ml + bi * bw + bw / 2) + " " + fmt(mt + py + 12) + ")'>" +
             std::get<0>(key) + " h" + std::to_string(std::get<1>(key)) + " " +
             std::get<2>(key) + "</text>\n";
      svg += "<text x='" + fmt(ml + bi * bw + bw / 2) + "' y='" +
             fmt(mt + py - bh - 4) + "' text-anchor='middle' font-size='9'>" +
             fmt(v) + "</text>\n";
      ++bi;
    }
    svg += "</svg>\n";
    write_file(out_dir + "/plot_ged.svg", svg);
  }
}

}  // namespace stretchlab::engine
