#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cgseg/cgnet.hpp"
#include "cgseg/datapipe.hpp"
#include "cgseg/giserr.hpp"
#include "cgseg/metrics.hpp"
#include "cgseg/scene.hpp"

namespace cgseg {

/// Every tunable of the pipeline in one place. The text form is one
/// `key = value` per line; keys are listed by config_keys().
struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  SceneSpec scene;
  DatasetParams data;
  NetConfig net;
  TrainConfig train;
  std::uint64_t train_seed = 0;  // 0: derived from `seed`
  OffsetModel offsets;

  void validate() const;
  /// Copies with module seeds derived from `seed`.
  SceneSpec scene_spec() const;
  DatasetParams dataset_params() const;
  TrainConfig train_config() const;
  OffsetModel offset_model() const;
};

std::vector<std::string> config_keys();
/// Throws ConfigError for unknown keys or unparsable values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);
/// `#` starts a comment; blank lines are ignored. Errors carry line numbers.
void apply_config_text(RunConfig& cfg, const std::string& text);
std::string format_config(const RunConfig& cfg);

enum class SeedStream : std::uint64_t { kScene = 1, kSpeckle, kInit, kShuffle, kOffsets };
std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream);

enum class ModelKind { kCgNet, kBaseline };
enum class GisKind { kCbf, kSvs, kCbfe };
ModelKind parse_model_kind(const std::string& s);
GisKind parse_gis_kind(const std::string& s);
std::string to_string(ModelKind k);
std::string to_string(GisKind k);

/// A dataset with its sample windows and region split. Windows are chosen
/// with the GT and CBF masks and shared by every GIS representation.
struct Experiment {
  Dataset ds;
  MaskStack cbfe;  // empty unless errors were injected
  PatchResult patches;
  Split split;
};

Experiment prepare_experiment(Dataset ds, MaskStack cbfe, const TrainConfig& cfg);
/// `samples` with their GIS patches taken from the requested representation.
std::vector<Sample> samples_with(const Experiment& exp, const std::vector<Sample>& samples, GisKind gis);

PixelBox window_of(const Sample& s);
std::map<std::string, PixelBox> windows_of(const std::vector<Sample>& samples);

struct Trained {
  Model<float> model;
  TrainResult result;
};

Trained train_model(const Experiment& exp, ModelKind kind, GisKind gis, const RunConfig& cfg);

/// Predicts the test region with `gis` as input and scores it against GT.
struct TestRun {
  MaskStack pred;
  EvalReport report;
};
TestRun test_model(Model<float>& model, const Experiment& exp, GisKind gis);

/// Prediction directory: one PGM per building plus windows.csv
/// (id,row0,col0,size).
void save_predictions(const MaskStack& pred, const std::vector<Sample>& samples, const std::filesystem::path& dir);
struct LoadedPredictions {
  MaskStack pred;
  std::map<std::string, PixelBox> windows;
};
LoadedPredictions load_predictions(const std::filesystem::path& dir, const SarFrame& frame);

}  // namespace cgseg
