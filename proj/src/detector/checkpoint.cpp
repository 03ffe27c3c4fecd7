#include "adyolo/detector/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "adyolo/numcore/serialize.hpp"

namespace adyolo::detector {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'A', 'D', 'C', 'K'};

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw std::invalid_argument("unknown key " + where + "." + it.key());
}

}  // namespace

json config_to_json(const DetectorConfig& c) {
  json anchors = json::array();
  for (const AnchorPrior& a : c.anchors) anchors.push_back({a.w, a.h});
  json blocks = json::array();
  for (const ConvBlock& b : c.blocks) blocks.push_back({{"channels", b.channels}, {"stride", b.stride}});
  return json{{"input_side", c.input_side},
              {"grid", c.grid},
              {"anchors", anchors},
              {"class_names", c.class_names},
              {"blocks", blocks},
              {"leaky_slope", c.leaky_slope},
              {"loss",
               {{"coord", c.loss.coord}, {"noobj", c.loss.noobj}, {"obj", c.loss.obj}, {"cls", c.loss.cls}}},
              {"noobj_iou", c.noobj_iou}};
}

DetectorConfig config_from_json(const json& j) {
  reject_unknown(j, {"input_side", "grid", "anchors", "class_names", "blocks", "leaky_slope", "loss", "noobj_iou"},
                 "detector");
  DetectorConfig c;
  if (j.contains("input_side")) c.input_side = j.at("input_side").get<int>();
  if (j.contains("grid")) c.grid = j.at("grid").get<int>();
  if (j.contains("anchors")) {
    c.anchors.clear();
    for (const json& a : j.at("anchors")) c.anchors.push_back({a.at(0).get<Real>(), a.at(1).get<Real>()});
  }
  if (j.contains("class_names")) c.class_names = j.at("class_names").get<std::vector<std::string>>();
  if (j.contains("blocks")) {
    c.blocks.clear();
    for (const json& b : j.at("blocks")) {
      reject_unknown(b, {"channels", "stride"}, "detector.blocks[]");
      c.blocks.push_back({b.at("channels").get<int>(), b.at("stride").get<int>()});
    }
  }
  if (j.contains("leaky_slope")) c.leaky_slope = j.at("leaky_slope").get<Real>();
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown(l, {"coord", "noobj", "obj", "cls"}, "detector.loss");
    if (l.contains("coord")) c.loss.coord = l.at("coord").get<Real>();
    if (l.contains("noobj")) c.loss.noobj = l.at("noobj").get<Real>();
    if (l.contains("obj")) c.loss.obj = l.at("obj").get<Real>();
    if (l.contains("cls")) c.loss.cls = l.at("cls").get<Real>();
  }
  if (j.contains("noobj_iou")) c.noobj_iou = j.at("noobj_iou").get<Real>();
  c.validate();
  return c;
}

void save_checkpoint(const std::string& path, const DetectorModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const std::string header = json{{"id", model.id}, {"config", config_to_json(model.config)}}.dump();
  out.write(kMagic, 4);
  write_u32(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_u32(out, static_cast<std::uint32_t>(model.params.size()));
  for (const NamedTensor& p : model.params) {
    write_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_tensor(out, p.value);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

DetectorModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a checkpoint: " + path);
  std::string header(read_u32(in), '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header.size()))) throw FormatError("truncated header");
  const json h = json::parse(header);
  DetectorModel expected = zero_model(config_from_json(h.at("config")));
  expected.id = h.at("id").get<std::string>();
  const std::uint32_t count = read_u32(in);
  if (count != expected.params.size()) throw FormatError("checkpoint tensor count does not match its config");
  for (NamedTensor& p : expected.params) {
    std::string name(read_u32(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw FormatError("truncated tensor name");
    if (name != p.name) throw FormatError("checkpoint tensor " + name + " where " + p.name + " expected");
    Tensor t = read_tensor(in);
    if (t.shape() != p.value.shape()) throw FormatError("checkpoint tensor " + name + " has wrong shape");
    p.value = std::move(t);
  }
  return expected;
}

}  // namespace adyolo::detector
