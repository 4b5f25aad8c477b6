#include "cgseg/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "cgseg/error.hpp"
#include "cgseg/io_util.hpp"

namespace cgseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json provenance_json(const DatasetParams& p) {
  return {{"incidence_deg", p.view.incidence_deg},
          {"heading_deg", p.view.heading_deg},
          {"look", p.view.look == LookSide::kRight ? "right" : "left"},
          {"spacing_az", p.spacing_az},
          {"spacing_rg", p.spacing_rg},
          {"h_step", p.fill.h_step},
          {"jump_threshold", p.fill.jump_threshold},
          {"hpr_far_multiple", p.hpr.far_multiple},
          {"hpr_radius_exponent", p.hpr.radius_exponent},
          {"intensity_floor", p.intensity.floor},
          {"intensity_percentile", p.intensity.percentile},
          {"intensity_normalize", p.intensity.normalize},
          {"speckle_seed", p.seed},
          {"margin", p.margin}};
}

void keep_only(MaskStack& stack, const std::set<std::string>& ids) {
  for (auto it = stack.masks.begin(); it != stack.masks.end();) {
    it = ids.count(it->first) ? std::next(it) : stack.masks.erase(it);
  }
  for (auto it = stack.flagged.begin(); it != stack.flagged.end();) {
    it = ids.count(*it) ? std::next(it) : stack.flagged.erase(it);
  }
}

PixelBox merge(const PixelBox& a, const PixelBox& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  return {std::min(a.col0, b.col0), std::min(a.row0, b.row0), std::max(a.col1, b.col1), std::max(a.row1, b.row1)};
}

std::vector<int> grid_origins(int dim, int patch, int stride) {
  std::vector<int> out;
  if (dim <= patch) return {0};
  for (int o = 0; o + patch <= dim; o += stride) out.push_back(o);
  return out;
}

PatchImage cut_image(const Image& img, int row0, int col0, int size) {
  PatchImage out = PatchImage::Zero(size, size);
  const int r1 = std::min<int>(static_cast<int>(img.rows()), row0 + size);
  const int c1 = std::min<int>(static_cast<int>(img.cols()), col0 + size);
  for (int r = row0; r < r1; ++r)
    for (int c = col0; c < c1; ++c) out(r - row0, c - col0) = static_cast<float>(img(r, c));
  return out;
}

void check_finite(const std::vector<Param<float>*>& params) {
  for (const auto* p : params)
    if (!p->value.allFinite()) throw Error("parameter " + p->name + " is not finite");
}

}  // namespace

// ---- Dataset --------------------------------------------------------------

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, m] : gt.masks) out.push_back(id);
  return out;
}

Dataset build_dataset(const Scene& scene, const DatasetParams& params) {
  params.view.validate();
  params.fill.validate();
  const PointCloud p_dem = dem_to_cloud(scene.dem, scene.footprints);
  const PointCloud p_fill = fill_vertical(p_dem, scene.dem, params.fill);
  const PointCloud p_svs = hpr_visible(p_fill, params.view, params.hpr);

  Dataset ds;
  ds.footprints = scene.footprints;
  ds.frame = make_frame(p_fill, params.view, params.spacing_az, params.spacing_rg, params.margin);

  std::vector<BuildingSelection> selections;
  for (std::size_t i = 0; i < scene.footprints.size(); ++i) {
    const auto& fp = scene.footprints[i];
    auto pts = select_building_points(p_svs, static_cast<int>(i), fp, params.fill.jump_threshold);
    if (!pts) {
      ds.excluded.push_back(fp.id);
      continue;
    }
    selections.push_back({fp.id, std::move(*pts)});
  }
  const MaskStack gt_all = make_gt_masks(selections, ds.frame);
  ds.intensity = simulate_intensity(p_svs, ds.frame, params.seed, params.intensity);
  FilterResult filt = postprocess_filter(gt_all, ds.intensity);
  ds.gt = std::move(filt.kept);
  ds.filtered = std::move(filt.dropped);

  std::set<std::string> kept;
  for (const auto& [id, m] : ds.gt.masks) kept.insert(id);
  // Visibility of shared walls needs every footprint, so project all of them.
  ds.cbf = make_footprint_masks(scene.footprints, ds.frame, FootprintRepr::kCbf);
  ds.svs = make_footprint_masks(scene.footprints, ds.frame, FootprintRepr::kSvs);
  keep_only(ds.cbf, kept);
  keep_only(ds.svs, kept);

  ds.provenance = provenance_json(params);
  ds.provenance["scene_points"] = p_fill.size();
  ds.provenance["visible_points"] = p_svs.size();
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  const auto flagged = [](const MaskStack& s) { return std::vector<std::string>(s.flagged.begin(), s.flagged.end()); };
  const json manifest = {{"frame", ds.frame},
                         {"ids", ds.ids()},
                         {"excluded", ds.excluded},
                         {"filtered", ds.filtered},
                         {"flagged", {{"gt", flagged(ds.gt)}, {"cbf", flagged(ds.cbf)}, {"svs", flagged(ds.svs)}}},
                         {"provenance", ds.provenance}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  save_intensity(ds.intensity, dir / "intensity.pgm");
  save_footprints(ds.footprints, dir / "footprints.json");
  for (const char* sub : {"gt", "cbf", "svs"}) fs::remove_all(dir / sub);
  save_mask_dir(ds.gt, dir / "gt");
  save_mask_dir(ds.cbf, dir / "cbf");
  save_mask_dir(ds.svs, dir / "svs");
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("dataset directory not found: " + dir.string());
  json manifest;
  try {
    manifest = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest.json: ") + e.what());
  }
  Dataset ds;
  try {
    ds.frame = manifest.at("frame").get<SarFrame>();
    ds.excluded = manifest.at("excluded").get<std::vector<std::string>>();
    ds.filtered = manifest.at("filtered").get<std::vector<std::string>>();
    ds.provenance = manifest.value("provenance", json::object());
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest.json: ") + e.what());
  }
  ds.intensity = load_intensity(dir / "intensity.pgm");
  if (!(ds.intensity.frame == ds.frame)) throw ShapeError("intensity frame does not match the manifest");
  ds.footprints = load_footprints(dir / "footprints.json");
  ds.gt = load_mask_dir(dir / "gt", ds.frame);
  ds.cbf = load_mask_dir(dir / "cbf", ds.frame);
  ds.svs = load_mask_dir(dir / "svs", ds.frame);
  const json& fl = manifest.at("flagged");
  for (auto [stack, key] : {std::pair{&ds.gt, "gt"}, {&ds.cbf, "cbf"}, {&ds.svs, "svs"}}) {
    for (const auto& id : fl.at(key)) stack->flagged.insert(id.get<std::string>());
  }
  return ds;
}

// ---- Patches and splits -----------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr0 > 0) || !(lr_factor > 1)) throw ConfigError("lr0 must be positive and lr_factor above 1");
  if (plateau_epochs < 1 || batch < 1 || max_epochs < 1) {
    throw ConfigError("plateau_epochs, batch and max_epochs must be at least 1");
  }
  if (patch < 1 || stride < 1 || stride > patch) throw ConfigError("need 0 < stride <= patch");
  if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("train_fraction must lie in (0, 1)");
}

Mask cut_patch(const Mask& m, int row0, int col0, int size) {
  Mask out = Mask::Zero(size, size);
  const int r1 = std::min<int>(static_cast<int>(m.rows()), row0 + size);
  const int c1 = std::min<int>(static_cast<int>(m.cols()), col0 + size);
  if (r1 > row0 && c1 > col0) {
    out.block(0, 0, r1 - row0, c1 - col0) = m.block(row0, col0, r1 - row0, c1 - col0);
  }
  return out;
}

PatchResult extract_patches(const IntensityImage& intensity, const MaskStack& gt, const MaskStack& gis,
                            const TrainConfig& cfg) {
  cfg.validate();
  const int H = intensity.frame.height, W = intensity.frame.width;
  if (intensity.values.rows() != H || intensity.values.cols() != W || !(gt.frame == intensity.frame) ||
      !(gis.frame == intensity.frame)) {
    throw ShapeError("extract_patches: rasters do not share one frame");
  }
  const auto rows = grid_origins(H, cfg.patch, cfg.stride);
  const auto cols = grid_origins(W, cfg.patch, cfg.stride);

  PatchResult out;
  for (const auto& [id, gt_mask] : gt.masks) {
    const auto it = gis.masks.find(id);
    const PixelBox box = merge(bbox(gt_mask), it == gis.masks.end() ? PixelBox{} : bbox(it->second));
    if (it == gis.masks.end() || box.empty()) {
      out.dropped.push_back(id);
      continue;
    }
    int best_margin = -1, best_r = 0, best_c = 0;
    for (int r : rows) {
      for (int c : cols) {
        const int margin = std::min({box.row0 - r, box.col0 - c, r + cfg.patch - 1 - box.row1,
                                     c + cfg.patch - 1 - box.col1});
        if (margin > best_margin) {
          best_margin = margin;
          best_r = r;
          best_c = c;
        }
      }
    }
    if (best_margin < 0) {
      out.dropped.push_back(id);
      continue;
    }
    Sample s;
    s.id = id;
    s.row0 = best_r;
    s.col0 = best_c;
    s.size = cfg.patch;
    s.sar = cut_image(intensity.values, best_r, best_c, cfg.patch);
    s.gt = cut_patch(gt_mask, best_r, best_c, cfg.patch);
    s.gis = cut_patch(it->second, best_r, best_c, cfg.patch);
    out.samples.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> with_gis(std::vector<Sample> samples, const MaskStack& gis) {
  for (auto& s : samples) {
    const auto it = gis.masks.find(s.id);
    if (it == gis.masks.end()) throw Error("no GIS mask for building " + s.id);
    s.gis = cut_patch(it->second, s.row0, s.col0, s.size);
  }
  return samples;
}

Split split_regions(const std::vector<Sample>& samples, const SarFrame& frame, double train_fraction,
                    int band_rows) {
  if (!(train_fraction > 0 && train_fraction < 1)) throw ConfigError("train_fraction must lie in (0, 1)");
  if (band_rows < 1) throw ConfigError("band height must be positive");
  const int bands = (frame.height + band_rows - 1) / band_rows;
  const int k = static_cast<int>(std::lround(train_fraction * bands));
  Split out;
  out.border_row = k * band_rows;
  for (const auto& s : samples) {
    if (s.row0 + s.size <= out.border_row) {
      out.train.push_back(s);
    } else if (s.row0 >= out.border_row) {
      out.test.push_back(s);
    } else {
      ++out.dropped;
    }
  }
  if (out.train.empty() || out.test.empty()) {
    std::ostringstream msg;
    msg << "split at row " << out.border_row << " leaves " << out.train.size() << " training and "
        << out.test.size() << " test samples; try a different train fraction";
    throw ConfigError(msg.str());
  }
  return out;
}

// ---- Training ---------------------------------------------------------------

double PlateauSchedule::update(double loss) {
  if (!have_best_ || loss < best_) {
    best_ = loss;
    have_best_ = true;
    stall_ = 0;
    return lr_;
  }
  if (++stall_ >= patience_) {
    ++drops_;
    stall_ = 0;
    lr_ = lr0_ / std::pow(factor_, drops_);
  }
  return lr_;
}

Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& order, std::size_t first,
                 std::size_t count) {
  const int size = samples.at(order.at(first)).size;
  const int n = static_cast<int>(count);
  Batch b{Tensor<float>(n, 1, size, size), Tensor<float>(n, 1, size, size), Tensor<float>(n, 1, size, size)};
  const Eigen::Index plane = static_cast<Eigen::Index>(size) * size;
  for (int i = 0; i < n; ++i) {
    const Sample& s = samples.at(order.at(first + static_cast<std::size_t>(i)));
    if (s.size != size) throw ShapeError("samples in one batch differ in size");
    b.sar.v.segment(i * plane, plane) = Eigen::Map<const ArrayX<float>>(s.sar.data(), plane);
    b.gis.v.segment(i * plane, plane) = Eigen::Map<const Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>>(
                                            s.gis.data(), plane).cast<float>();
    b.gt.v.segment(i * plane, plane) = Eigen::Map<const Eigen::Array<std::uint8_t, Eigen::Dynamic, 1>>(
                                           s.gt.data(), plane).cast<float>();
  }
  return b;
}

TrainResult train(Model<float>& model, const std::vector<Sample>& samples, const TrainConfig& cfg,
                  const LossHook& hook) {
  cfg.validate();
  if (samples.empty()) throw ConfigError("no training samples");
  if (static_cast<std::size_t>(cfg.batch) > samples.size()) {
    throw ConfigError("batch size " + std::to_string(cfg.batch) + " exceeds the " + std::to_string(samples.size()) +
                      " training samples");
  }
  TrainResult result;
  Nadam<float> opt;
  PlateauSchedule sched(cfg.lr0, cfg.lr_factor, cfg.plateau_epochs);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());

  const auto snapshot = [&] {
    std::vector<ArrayX<float>> v;
    for (const auto* p : model.params()) v.push_back(p->value);
    return v;
  };
  auto last_good = snapshot();

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = sched.lr();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    try {
      for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(cfg.batch)) {
        const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), order.size() - first);
        const Batch b = make_batch(samples, order, first, count);
        model.zero_grad();
        const Tensor<float> p = model.forward(b.sar, b.gis);
        double loss = bce_loss(p, b.gt);
        if (hook) loss = hook(epoch, loss);
        if (!std::isfinite(loss)) throw Error("non-finite loss in epoch " + std::to_string(epoch));
        Tensor<float> dlogit = p;
        dlogit.v = (p.v - b.gt.v) / static_cast<float>(p.size());
        model.backward(dlogit);
        opt.step(model.params(), lr);
        check_finite(model.params());
        sum += loss * static_cast<double>(count);
        ++result.steps;
      }
    } catch (const Error& e) {
      auto params = model.params();
      for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = last_good[k];
      result.aborted = true;
      result.abort_reason = e.what();
      return result;
    }
    const double mean = sum / static_cast<double>(samples.size());
    result.log.push_back({epoch, mean, lr});
    last_good = snapshot();
    sched.update(mean);
  }
  return result;
}

std::string format_train_log(const TrainResult& r) {
  std::string out = "epoch,loss,lr\n";
  for (const auto& e : r.log) out += std::to_string(e.epoch) + "," + format_double(e.loss) + "," + format_double(e.lr) + "\n";
  return out;
}

// ---- Prediction -------------------------------------------------------------

MaskStack predict_all(Model<float>& model, const std::vector<Sample>& samples, const SarFrame& frame,
                      double threshold) {
  MaskStack out;
  out.frame = frame;
  for (const auto& s : samples) {
    const std::vector<std::size_t> one{0};
    const Batch b = make_batch({s}, one, 0, 1);
    const Tensor<float> p = model.forward(b.sar, b.gis);
    Mask m = out.blank();
    const int r1 = std::min(frame.height, s.row0 + s.size), c1 = std::min(frame.width, s.col0 + s.size);
    for (int r = s.row0; r < r1; ++r)
      for (int c = s.col0; c < c1; ++c) m(r, c) = p.at(0, 0, r - s.row0, c - s.col0) > threshold ? 1 : 0;
    if (area(m) == 0) out.flagged.insert(s.id);
    out.masks[s.id] = std::move(m);
  }
  return out;
}

CountRaster overlay_masks(const MaskStack& stack) {
  CountRaster out = CountRaster::Zero(stack.frame.height, stack.frame.width);
  for (const auto& [id, m] : stack.masks) {
    if (m.rows() != out.rows() || m.cols() != out.cols()) throw ShapeError("mask " + id + " does not match the frame");
    out += m.cast<std::int32_t>();
  }
  return out;
}

}  // namespace cgseg
