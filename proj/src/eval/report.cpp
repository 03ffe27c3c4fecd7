#include "adyolo/eval/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

namespace adyolo::eval {

namespace fs = std::filesystem;
using nlohmann::json;

json report_to_json(const EvalReport& r) {
  json classes = json::array();
  for (const ClassReport& c : r.classes) {
    json curve = json::array();
    for (const PrPoint& p : c.curve) curve.push_back({p.score, p.recall, p.precision});
    classes.push_back({{"name", c.name},
                       {"ap", c.ap},
                       {"no_truths", c.no_truths},
                       {"truths", c.num_truths},
                       {"detections", c.num_detections},
                       {"recall", c.recall},
                       {"pr", curve}});
  }
  return {{"model", r.cell.model},
          {"scenes", r.cell.scenes},
          {"patches", r.cell.patches},
          {"thresholds",
           {{"iou", r.thresholds.iou},
            {"score", r.thresholds.score},
            {"nms", r.thresholds.nms},
            {"recall_score", r.thresholds.recall_score}}},
          {"fingerprint", r.fingerprint},
          {"map", r.map},
          {"classes", classes}};
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  r.cell = {j.at("model").get<std::string>(), j.at("scenes").get<std::string>(), j.at("patches").get<std::string>()};
  const json& t = j.at("thresholds");
  r.thresholds = {t.at("iou").get<Real>(), t.at("score").get<Real>(), t.at("nms").get<Real>(),
                  t.at("recall_score").get<Real>()};
  r.fingerprint = j.at("fingerprint").get<std::string>();
  r.map = j.at("map").get<Real>();
  for (const json& c : j.at("classes")) {
    ClassReport cr;
    cr.name = c.at("name").get<std::string>();
    cr.ap = c.at("ap").get<Real>();
    cr.no_truths = c.at("no_truths").get<bool>();
    cr.num_truths = c.at("truths").get<int>();
    cr.num_detections = c.at("detections").get<int>();
    cr.recall = c.at("recall").get<Real>();
    for (const json& p : c.at("pr")) cr.curve.push_back({p.at(0).get<Real>(), p.at(1).get<Real>(), p.at(2).get<Real>()});
    r.classes.push_back(std::move(cr));
  }
  return r;
}

void write_reports(const std::string& path, std::span<const EvalReport> reports) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write reports " + path);
  for (const EvalReport& r : reports) out << report_to_json(r).dump() << '\n';
}

std::vector<EvalReport> read_reports(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open reports " + path);
  std::vector<EvalReport> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(report_from_json(json::parse(line)));
  return out;
}

namespace {

std::string pct(Real v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%6.2f", 100 * v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) { return s.size() >= width ? s : s + std::string(width - s.size(), ' '); }

}  // namespace

std::string render_tables(std::span<const EvalReport> reports) {
  std::vector<std::string> classes;
  for (const EvalReport& r : reports)
    for (const ClassReport& c : r.classes)
      if (std::find(classes.begin(), classes.end(), c.name) == classes.end()) classes.push_back(c.name);

  std::string out = "Average precision (%) per cell\n\n";
  std::string header = pad("model", 10) + pad("scenes", 12) + pad("patches", 12);
  for (const std::string& c : classes) header += pad(c, 9);
  header += "mAP";
  out += header + "\n" + std::string(header.size(), '-') + "\n";
  for (const EvalReport& r : reports) {
    std::string row = pad(r.cell.model, 10) + pad(r.cell.scenes, 12) + pad(r.cell.patches, 12);
    for (const std::string& c : classes) {
      const ClassReport* cr = r.find(c);
      row += pad(cr ? pct(cr->ap) : "     -", 9);
    }
    out += row + pct(r.map) + "\n";
  }

  std::vector<std::string> models, columns;
  std::map<std::pair<std::string, std::string>, Real> person;
  for (const EvalReport& r : reports) {
    const ClassReport* cr = r.find("person");
    if (!cr) continue;
    const std::string col = r.cell.scenes + "-" + r.cell.patches;
    if (std::find(models.begin(), models.end(), r.cell.model) == models.end()) models.push_back(r.cell.model);
    if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
    person[{r.cell.model, col}] = cr->ap;
  }
  out += "\nPerson AP (%)\n\n";
  std::size_t width = 10;
  for (const std::string& c : columns) width = std::max(width, c.size() + 2);
  header = pad("model", 10);
  for (const std::string& c : columns) header += pad(c, width);
  out += header + "\n" + std::string(header.size(), '-') + "\n";
  for (const std::string& m : models) {
    std::string row = pad(m, 10);
    for (const std::string& c : columns) {
      const auto it = person.find({m, c});
      row += pad(it == person.end() ? "     -" : pct(it->second), width);
    }
    out += row + "\n";
  }
  return out;
}

std::vector<std::string> write_pr_points(const std::string& dir, std::span<const EvalReport> reports) {
  fs::create_directories(dir);
  std::vector<std::string> paths;
  for (const EvalReport& r : reports) {
    const std::string path = (fs::path(dir) / (r.cell.model + "_" + r.cell.scenes + "_" + r.cell.patches + ".csv")).string();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "class,score,recall,precision\n";
    char buf[128];
    for (const ClassReport& c : r.classes)
      for (const PrPoint& p : c.curve) {
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g\n", p.score, p.recall, p.precision);
        out << c.name << buf;
      }
    paths.push_back(path);
  }
  return paths;
}

}  // namespace adyolo::eval
