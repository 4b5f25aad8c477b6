#include "cgseg/experiment.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "cgseg/error.hpp"
#include "cgseg/io_util.hpp"

namespace cgseg {

namespace fs = std::filesystem;

namespace {

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": cannot parse '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  const std::string s = to_lower(v);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<int> parse_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::string format_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

template <typename T>
Field num(std::string key, T RunConfig::*outer) {
  return {key, [key, outer](RunConfig& c, const std::string& v) { c.*outer = parse_number<T>(key, v); },
          [outer](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*outer);
            else return std::to_string(c.*outer);
          }};
}

template <typename Sub, typename T>
Field num(std::string key, Sub RunConfig::*sub, T Sub::*member) {
  return {key, [key, sub, member](RunConfig& c, const std::string& v) { c.*sub.*member = parse_number<T>(key, v); },
          [sub, member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*sub.*member);
            else return std::to_string(c.*sub.*member);
          }};
}

template <typename Sub>
Field list(std::string key, Sub RunConfig::*sub, std::vector<int> Sub::*member) {
  return {key, [key, sub, member](RunConfig& c, const std::string& v) { c.*sub.*member = parse_list(key, v); },
          [sub, member](const RunConfig& c) { return format_list(c.*sub.*member); }};
}

const std::vector<Field>& fields() {
  using R = RunConfig;
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back(num("seed", &R::seed));
    v.push_back(num("threads", &R::threads));
    v.push_back(num("scene.extent_x", &R::scene, &SceneSpec::extent_x));
    v.push_back(num("scene.extent_y", &R::scene, &SceneSpec::extent_y));
    v.push_back(num("scene.n_buildings", &R::scene, &SceneSpec::n_buildings));
    v.push_back(num("scene.rect_fraction", &R::scene, &SceneSpec::rect_fraction));
    v.push_back(num("scene.l_fraction", &R::scene, &SceneSpec::l_fraction));
    v.push_back(num("scene.height_min", &R::scene, &SceneSpec::height_min));
    v.push_back(num("scene.height_max", &R::scene, &SceneSpec::height_max));
    v.push_back(num("scene.touch_fraction", &R::scene, &SceneSpec::touch_fraction));
    v.push_back(num("scene.dem_cellsize", &R::scene, &SceneSpec::dem_cellsize));
    v.push_back(num("scene.side_min", &R::scene, &SceneSpec::side_min));
    v.push_back(num("scene.side_max", &R::scene, &SceneSpec::side_max));
    v.push_back(num("scene.gap", &R::scene, &SceneSpec::gap));
    v.push_back(num("scene.border", &R::scene, &SceneSpec::border));
    v.push_back({"scene.axis_aligned",
                 [](R& c, const std::string& s) { c.scene.axis_aligned = parse_bool("scene.axis_aligned", s); },
                 [](const R& c) { return std::string(c.scene.axis_aligned ? "true" : "false"); }});
    v.push_back({"view.incidence",
                 [](R& c, const std::string& s) { c.data.view.incidence_deg = parse_number<double>("view.incidence", s); },
                 [](const R& c) { return format_double(c.data.view.incidence_deg); }});
    v.push_back({"view.heading",
                 [](R& c, const std::string& s) { c.data.view.heading_deg = parse_number<double>("view.heading", s); },
                 [](const R& c) { return format_double(c.data.view.heading_deg); }});
    v.push_back({"view.look",
                 [](R& c, const std::string& s) {
                   const std::string l = to_lower(s);
                   if (l != "right" && l != "left") throw ConfigError("view.look: expected right or left");
                   c.data.view.look = l == "right" ? LookSide::kRight : LookSide::kLeft;
                 },
                 [](const R& c) { return std::string(c.data.view.look == LookSide::kRight ? "right" : "left"); }});
    v.push_back(num("frame.spacing_az", &R::data, &DatasetParams::spacing_az));
    v.push_back(num("frame.spacing_rg", &R::data, &DatasetParams::spacing_rg));
    v.push_back(num("frame.margin", &R::data, &DatasetParams::margin));
    v.push_back({"fill.h_step", [](R& c, const std::string& s) { c.data.fill.h_step = parse_number<double>("fill.h_step", s); },
                 [](const R& c) { return format_double(c.data.fill.h_step); }});
    v.push_back({"fill.jump_threshold",
                 [](R& c, const std::string& s) { c.data.fill.jump_threshold = parse_number<double>("fill.jump_threshold", s); },
                 [](const R& c) { return format_double(c.data.fill.jump_threshold); }});
    v.push_back({"hpr.far_multiple",
                 [](R& c, const std::string& s) { c.data.hpr.far_multiple = parse_number<double>("hpr.far_multiple", s); },
                 [](const R& c) { return format_double(c.data.hpr.far_multiple); }});
    v.push_back({"hpr.radius_exponent",
                 [](R& c, const std::string& s) { c.data.hpr.radius_exponent = parse_number<double>("hpr.radius_exponent", s); },
                 [](const R& c) { return format_double(c.data.hpr.radius_exponent); }});
    v.push_back({"intensity.floor",
                 [](R& c, const std::string& s) { c.data.intensity.floor = parse_number<double>("intensity.floor", s); },
                 [](const R& c) { return format_double(c.data.intensity.floor); }});
    v.push_back({"intensity.percentile",
                 [](R& c, const std::string& s) { c.data.intensity.percentile = parse_number<double>("intensity.percentile", s); },
                 [](const R& c) { return format_double(c.data.intensity.percentile); }});
    v.push_back(list("net.block_channels", &R::net, &NetConfig::block_channels));
    v.push_back(list("net.convs_per_block", &R::net, &NetConfig::convs_per_block));
    v.push_back(list("net.taps", &R::net, &NetConfig::taps));
    v.push_back(num("net.reduced_channels", &R::net, &NetConfig::reduced_channels));
    v.push_back(num("net.latent_channels", &R::net, &NetConfig::latent_channels));
    v.push_back(num("train.lr0", &R::train, &TrainConfig::lr0));
    v.push_back(num("train.lr_factor", &R::train, &TrainConfig::lr_factor));
    v.push_back(num("train.plateau_epochs", &R::train, &TrainConfig::plateau_epochs));
    v.push_back(num("train.batch", &R::train, &TrainConfig::batch));
    v.push_back(num("train.max_epochs", &R::train, &TrainConfig::max_epochs));
    v.push_back(num("train.patch", &R::train, &TrainConfig::patch));
    v.push_back(num("train.stride", &R::train, &TrainConfig::stride));
    v.push_back(num("train.train_fraction", &R::train, &TrainConfig::train_fraction));
    v.push_back(num("train.train_seed", &R::train_seed));
    v.push_back(num("offset.mu", &R::offsets, &OffsetModel::mu));
    v.push_back(num("offset.sigma", &R::offsets, &OffsetModel::sigma));
    return v;
  }();
  return f;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

// ---- Config -----------------------------------------------------------------

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads must be at least 1");
  scene.validate();
  data.view.validate();
  data.fill.validate();
  if (!(data.spacing_az > 0) || !(data.spacing_rg > 0)) throw ConfigError("pixel spacings must be positive");
  net.validate();
  train.validate();
  offsets.validate();
}

SceneSpec RunConfig::scene_spec() const {
  SceneSpec s = scene;
  s.seed = derive_seed(seed, SeedStream::kScene);
  return s;
}

DatasetParams RunConfig::dataset_params() const {
  DatasetParams p = data;
  p.seed = derive_seed(seed, SeedStream::kSpeckle);
  return p;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = derive_seed(train_seed ? train_seed : seed, SeedStream::kShuffle);
  return t;
}

OffsetModel RunConfig::offset_model() const {
  OffsetModel m = offsets;
  m.seed = derive_seed(seed, SeedStream::kOffsets);
  return m;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, trim(value));
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) { return field(key).get(cfg); }

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", n);
    try {
      set_config_value(cfg, trim(body.substr(0, eq)), body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), n);
    }
  }
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream)));
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "cgnet") return ModelKind::kCgNet;
  if (s == "baseline") return ModelKind::kBaseline;
  throw ConfigError("unknown model '" + s + "' (expected cgnet or baseline)");
}

GisKind parse_gis_kind(const std::string& s) {
  if (s == "cbf") return GisKind::kCbf;
  if (s == "svs") return GisKind::kSvs;
  if (s == "cbfe") return GisKind::kCbfe;
  throw ConfigError("unknown GIS representation '" + s + "' (expected cbf, svs or cbfe)");
}

std::string to_string(ModelKind k) { return k == ModelKind::kCgNet ? "cgnet" : "baseline"; }

std::string to_string(GisKind k) {
  switch (k) {
    case GisKind::kCbf: return "cbf";
    case GisKind::kSvs: return "svs";
    case GisKind::kCbfe: return "cbfe";
  }
  return {};
}

// ---- Experiments ------------------------------------------------------------

Experiment prepare_experiment(Dataset ds, MaskStack cbfe, const TrainConfig& cfg) {
  Experiment exp;
  exp.ds = std::move(ds);
  exp.cbfe = std::move(cbfe);
  exp.patches = extract_patches(exp.ds.intensity, exp.ds.gt, exp.ds.cbf, cfg);
  exp.split = split_regions(exp.patches.samples, exp.ds.frame, cfg.train_fraction, cfg.stride);
  return exp;
}

std::vector<Sample> samples_with(const Experiment& exp, const std::vector<Sample>& samples, GisKind gis) {
  switch (gis) {
    case GisKind::kCbf: return samples;
    case GisKind::kSvs: return with_gis(samples, exp.ds.svs);
    case GisKind::kCbfe:
      if (exp.cbfe.masks.empty()) throw ConfigError("no CBF-E masks; run inject-error first");
      return with_gis(samples, exp.cbfe);
  }
  return samples;
}

PixelBox window_of(const Sample& s) { return {s.col0, s.row0, s.col0 + s.size - 1, s.row0 + s.size - 1}; }

std::map<std::string, PixelBox> windows_of(const std::vector<Sample>& samples) {
  std::map<std::string, PixelBox> out;
  for (const auto& s : samples) out[s.id] = window_of(s);
  return out;
}

Trained train_model(const Experiment& exp, ModelKind kind, GisKind gis, const RunConfig& cfg) {
  const std::uint64_t init = derive_seed(cfg.train_seed ? cfg.train_seed : cfg.seed, SeedStream::kInit);
  Trained t{kind == ModelKind::kCgNet ? build_cgnet<float>(cfg.net, init) : build_baseline<float>(cfg.net, init), {}};
  t.result = train(t.model, samples_with(exp, exp.split.train, gis), cfg.train_config());
  return t;
}

TestRun test_model(Model<float>& model, const Experiment& exp, GisKind gis) {
  const auto samples = samples_with(exp, exp.split.test, gis);
  TestRun r;
  r.pred = predict_all(model, samples, exp.ds.frame);
  r.report = evaluate(r.pred, exp.ds.gt, windows_of(samples));
  return r;
}

void save_predictions(const MaskStack& pred, const std::vector<Sample>& samples, const fs::path& dir) {
  fs::remove_all(dir);
  save_mask_dir(pred, dir);
  std::string csv = "id,row0,col0,size\n";
  for (const auto& s : samples) {
    csv += s.id + "," + std::to_string(s.row0) + "," + std::to_string(s.col0) + "," + std::to_string(s.size) + "\n";
  }
  write_text(dir / "windows.csv", csv);
}

LoadedPredictions load_predictions(const fs::path& dir, const SarFrame& frame) {
  LoadedPredictions out;
  out.pred = load_mask_dir(dir, frame);
  std::istringstream in(read_text(dir / "windows.csv"));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (++n == 1 || line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 4) throw ParseError("windows.csv: expected 4 fields", n);
    try {
      const int r = std::stoi(f[1]), c = std::stoi(f[2]), s = std::stoi(f[3]);
      out.windows[f[0]] = {c, r, c + s - 1, r + s - 1};
    } catch (const std::exception&) {
      throw ParseError("windows.csv: bad number", n);
    }
  }
  return out;
}

}  // namespace cgseg
