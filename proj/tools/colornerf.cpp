// SPDX-License-Identifier: Apache-2.0
// Copyright Contributors to the colornerf Project.

// colornerf command-line driver: synthesize a dataset, run both training stages,
// render and evaluate.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "colornerf/image_io.hpp"
#include "colornerf/metrics.hpp"
#include "colornerf/parallel.hpp"
#include "colornerf/training.hpp"

namespace fs = std::filesystem;
using namespace colornerf;
using json = nlohmann::json;

namespace {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kMissingCheckpoint = 3,
  kStageOrder = 4,
  kData = 5,
  kColorizer = 6,
};

struct CliError : std::runtime_error {
  CliError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

[[noreturn]] void fail(int code, const std::string& what) { throw CliError(code, what); }

struct RunConfig {
  train::TrainConfig train;
  std::string dataset;
  std::string checkpoint;
  std::string out = ".";
  std::string scene;  // empty: built-in three-blob scene
  int n_views = 30;
  int width = 64;
  int height = 64;
  int synth_samples = 256;
  scene::OrbitConfig orbit;
  std::string colorizer = "oracle";
  std::string external_cmd;
  int external_timeout_ms = 30000;
  double oracle_noise = 8.0;
  std::optional<std::uint64_t> oracle_seed;
};

template <typename T>
T take(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    fail(kUsage, "config key '" + key + "' has the wrong type");
  }
}

std::array<double, 2> take_range(const json& j, const std::string& key) {
  const auto v = take<std::vector<double>>(j, key);
  if (v.size() != 2) fail(kUsage, "config key '" + key + "' needs [min, max]");
  return {v[0], v[1]};
}

void apply_json(RunConfig& rc, const json& j) {
  if (!j.is_object()) fail(kUsage, "config must be a JSON object");
  auto& t = rc.train;
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") t.epochs = take<int>(v, key);
    else if (key == "patches_per_epoch") t.patches_per_epoch = take<int>(v, key);
    else if (key == "K") t.K = take<int>(v, key);
    else if (key == "lum_s_range") t.lum_s_range = take_range(v, key);
    else if (key == "color_s_range") t.color_s_range = take_range(v, key);
    else if (key == "lr_lum") t.lr_lum = take<double>(v, key);
    else if (key == "lr_color") t.lr_color = take<double>(v, key);
    else if (key == "adam_beta1") t.adam.beta1 = take<double>(v, key);
    else if (key == "adam_beta2") t.adam.beta2 = take<double>(v, key);
    else if (key == "adam_eps") t.adam.eps = take<double>(v, key);
    else if (key == "seed") t.seed = take<std::uint64_t>(v, key);
    else if (key == "resolution") {
      const auto r = take<std::vector<int>>(v, key);
      if (r.size() != 3) fail(kUsage, "config key 'resolution' needs [nx, ny, nz]");
      t.resolution = {r[0], r[1], r[2]};
    } else if (key == "init_sigma") t.init.sigma = take<double>(v, key);
    else if (key == "init_lum") t.init.lum = take<double>(v, key);
    else if (key == "coarse_samples") t.render.coarse = take<int>(v, key);
    else if (key == "fine_samples") t.render.fine = take<int>(v, key);
    else if (key == "color_mode") {
      const auto m = take<std::string>(v, key);
      if (m == "render_then_normalize") t.render.color_mode = render::ColorMode::render_then_normalize;
      else if (m == "normalize_then_render") t.render.color_mode = render::ColorMode::normalize_then_render;
      else fail(kUsage, "config key 'color_mode' must be render_then_normalize or normalize_then_render");
    } else if (key == "color_weight_cutoff") t.render.color_weight_cutoff = take<double>(v, key);
    else if (key == "base_count") t.base_count = take<int>(v, key);
    else if (key == "base_scale") t.base_scale = take<double>(v, key);
    else if (key == "threshold") t.threshold = take<double>(v, key);
    else if (key == "hist_bins") t.hist_bins = take<int>(v, key);
    else if (key == "soft_k") t.soft_k = take<int>(v, key);
    else if (key == "soft_sigma") t.soft_sigma = take<double>(v, key);
    else if (key == "max_consecutive_failures") t.max_consecutive_failures = take<int>(v, key);
    else if (key == "workers") t.workers = take<int>(v, key);
    else if (key == "checkpoint_every") t.checkpoint_every = take<int>(v, key);
    else if (key == "dataset") rc.dataset = take<std::string>(v, key);
    else if (key == "checkpoint") rc.checkpoint = take<std::string>(v, key);
    else if (key == "out") rc.out = take<std::string>(v, key);
    else if (key == "scene") rc.scene = take<std::string>(v, key);
    else if (key == "n_views") rc.n_views = take<int>(v, key);
    else if (key == "width") rc.width = take<int>(v, key);
    else if (key == "height") rc.height = take<int>(v, key);
    else if (key == "synth_samples") rc.synth_samples = take<int>(v, key);
    else if (key == "orbit_radius") rc.orbit.radius = take<double>(v, key);
    else if (key == "orbit_elevation_deg") rc.orbit.elevation_deg = take<double>(v, key);
    else if (key == "orbit_fov_deg") rc.orbit.fov_deg = take<double>(v, key);
    else if (key == "orbit_azimuth_offset_deg") rc.orbit.azimuth_offset_deg = take<double>(v, key);
    else if (key == "colorizer") rc.colorizer = take<std::string>(v, key);
    else if (key == "external_cmd") rc.external_cmd = take<std::string>(v, key);
    else if (key == "external_timeout_ms") rc.external_timeout_ms = take<int>(v, key);
    else if (key == "oracle_noise") rc.oracle_noise = take<double>(v, key);
    else if (key == "oracle_seed") rc.oracle_seed = take<std::uint64_t>(v, key);
    else fail(kUsage, "unknown config key '" + key + "'");
  }
}

RunConfig load_config(const std::string& path) {
  RunConfig rc;
  rc.train.workers = default_workers();
  if (path.empty()) return rc;
  std::ifstream in(path);
  if (!in) fail(kUsage, "cannot read config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(kUsage, "config " + path + ": " + e.what());
  }
  apply_json(rc, j);
  return rc;
}

// Checkpoint metadata lives in a JSON sidecar next to the binary field.
std::string meta_path(const std::string& checkpoint) { return checkpoint + ".json"; }

void write_checkpoint(const field::FieldParams& p, const std::string& path, int stage, const RunConfig& rc) {
  field::save_field(p, path);
  json meta{{"stage", stage}, {"seed", rc.train.seed}, {"Q", p.Q}, {"table", "table.txt"}};
  std::ofstream out(meta_path(path));
  out << meta.dump(2) << '\n';
  if (!out) fail(kData, "cannot write " + meta_path(path));
}

struct Checkpoint {
  field::FieldParams params;
  color::AbBinTable table;
  int stage = 0;
};

Checkpoint read_checkpoint(const std::string& path) {
  if (path.empty() || !fs::exists(path)) fail(kMissingCheckpoint, "checkpoint not found: " + path);
  Checkpoint c{field::load_field(path), color::build_ab_bin_table(), 0};
  std::ifstream in(meta_path(path));
  if (!in) fail(kMissingCheckpoint, "checkpoint metadata not found: " + meta_path(path));
  try {
    const auto meta = json::parse(in);
    c.stage = meta.at("stage").get<int>();
    const auto table = fs::path(path).parent_path() / meta.at("table").get<std::string>();
    c.table = color::load_ab_table(table.string());
  } catch (const json::exception& e) {
    fail(kData, "malformed checkpoint metadata " + meta_path(path) + ": " + e.what());
  }
  if (c.table.size() != c.params.Q) fail(kData, "checkpoint and bin table disagree on Q");
  return c;
}

scene::MultiViewDataset read_dataset(const RunConfig& rc) {
  if (rc.dataset.empty()) fail(kUsage, "no dataset given (--data)");
  return scene::load_dataset(rc.dataset);
}

fs::path prepare_out(const RunConfig& rc) {
  const fs::path out(rc.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) fail(kData, "cannot create output directory " + rc.out + ": " + ec.message());
  return out;
}

std::string view_name(std::size_t i, const char* suffix) {
  std::ostringstream s;
  s << "view_" << std::setw(3) << std::setfill('0') << i << suffix;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void cmd_make_synthetic(RunConfig rc) {
  scene::SyntheticScene s = scene::three_blob_scene();
  if (!rc.scene.empty()) {
    std::ifstream in(rc.scene);
    if (!in) fail(kData, "cannot read scene " + rc.scene);
    try {
      s = scene::scene_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
      fail(kData, "scene " + rc.scene + ": " + e.what());
    }
  }
  if (rc.n_views < 2) fail(kUsage, "need at least 2 views");
  const auto ds = scene::generate_views(s, rc.n_views, rc.orbit, rc.width, rc.height, rc.synth_samples,
                                        rc.train.workers);
  scene::save_dataset(ds, prepare_out(rc).string());
  std::cout << "wrote " << ds.views.size() << " views to " << rc.out << '\n';
}

void cmd_train_lum(RunConfig rc) {
  const auto ds = read_dataset(rc);
  const auto out = prepare_out(rc);
  const auto table = color::build_ab_bin_table();
  color::save_ab_table(table, (out / "table.txt").string());
  if (rc.train.checkpoint_every > 0) rc.train.checkpoint_path = (out / "lum.partial.cnrf").string();
  std::ofstream log(out / "train_lum.csv");
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = train::train_luminance(ds, table.size(), rc.train, &log);
  write_checkpoint(r.params, (out / "lum.cnrf").string(), 1, rc);
  std::cerr << "stage 1 finished in " << seconds_since(t0) << " s\n";
}

std::unique_ptr<colorize::Colorizer> make_colorizer(const RunConfig& rc,
                                                    std::shared_ptr<const scene::MultiViewDataset> ds) {
  if (rc.colorizer == "oracle")
    return std::make_unique<colorize::OracleColorizer>(ds, rc.oracle_noise, rc.oracle_seed.value_or(rc.train.seed));
  if (rc.colorizer == "palette") return std::make_unique<colorize::PaletteColorizer>();
  if (rc.colorizer == "external") {
    if (rc.external_cmd.empty()) fail(kUsage, "--colorizer external needs --external-cmd");
    return std::make_unique<colorize::ExternalColorizer>(rc.external_cmd,
                                                         std::chrono::milliseconds(rc.external_timeout_ms));
  }
  fail(kUsage, "unknown colorizer '" + rc.colorizer + "'");
}

void cmd_train_color(RunConfig rc) {
  if (rc.checkpoint.empty() || !fs::exists(rc.checkpoint))
    fail(kStageOrder, "train-color needs a stage-1 checkpoint (run train-lum first)");
  const auto ckpt = read_checkpoint(rc.checkpoint);
  if (ckpt.stage != 1)
    fail(kStageOrder, "train-color needs a stage-1 checkpoint, got stage " + std::to_string(ckpt.stage));
  const auto ds = std::make_shared<const scene::MultiViewDataset>(read_dataset(rc));
  auto colorizer = make_colorizer(rc, ds);
  const auto out = prepare_out(rc);
  color::save_ab_table(ckpt.table, (out / "table.txt").string());
  if (rc.train.checkpoint_every > 0) rc.train.checkpoint_path = (out / "color.partial.cnrf").string();
  std::ofstream log(out / "train_color.csv");
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = train::train_color(ckpt.params, ckpt.table, *ds, *colorizer, rc.train, &log);
  write_checkpoint(r.params, (out / "color.cnrf").string(), 2, rc);
  std::cerr << "stage 2 finished in " << seconds_since(t0) << " s with colorizer " << colorizer->name() << '\n';
}

std::vector<render::RenderedImage> render_dataset_views(const Checkpoint& ckpt, const scene::MultiViewDataset& ds,
                                                        const RunConfig& rc) {
  std::vector<render::RenderedImage> images;
  for (std::size_t i = 0; i < ds.views.size(); ++i)
    images.push_back(render::render_image(ckpt.params, ckpt.table, ds.views[i].camera, rc.train.render,
                                          rc.train.seed + i, rc.train.workers));
  return images;
}

void cmd_render(RunConfig rc) {
  const auto ckpt = read_checkpoint(rc.checkpoint);
  const auto ds = read_dataset(rc);
  const auto out = prepare_out(rc);
  const auto images = render_dataset_views(ckpt, ds, rc);
  for (std::size_t i = 0; i < images.size(); ++i) {
    io::write_png((out / view_name(i, ".png")).string(), images[i].rgb);
    io::write_png((out / view_name(i, ".L.png")).string(), images[i].L);
  }
  std::cout << "rendered " << images.size() << " views to " << rc.out << '\n';
}

void cmd_eval(RunConfig rc) {
  const auto ckpt = read_checkpoint(rc.checkpoint);
  const auto ds = read_dataset(rc);
  const auto out = prepare_out(rc);
  const auto images = render_dataset_views(ckpt, ds, rc);
  std::vector<ImageF> pred, gt;
  for (std::size_t i = 0; i < images.size(); ++i) {
    pred.push_back(images[i].rgb);
    gt.push_back(ds.views[i].rgb);
  }
  const auto ev = metrics::evaluate(pred, gt);
  std::ofstream tsv(out / "metrics.tsv");
  metrics::write_tsv(tsv, ev);
  std::ofstream(out / "metrics.json") << metrics::to_json(ev).dump(2) << '\n';
  std::cout << "mean psnr " << metrics::format_number(ev.mean.psnr) << " ssim "
            << metrics::format_number(ev.mean.ssim) << '\n';
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"colornerf: colorize a monochromatic radiance field"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out, data, checkpoint;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--workers", workers, "worker threads (default: available parallelism)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "output directory");
  };

  auto* synth = app.add_subcommand("make-synthetic", "render a synthetic multi-view dataset");
  common(synth);
  std::optional<std::string> scene_path;
  std::optional<int> n_views, width, height;
  synth->add_option("--scene", scene_path, "scene JSON (default: built-in three-blob scene)");
  synth->add_option("--views", n_views, "number of views");
  synth->add_option("--width", width, "image width");
  synth->add_option("--height", height, "image height");

  auto* lum = app.add_subcommand("train-lum", "stage 1: fit density and luminance");
  common(lum);
  lum->add_option("--data", data, "dataset directory");

  auto* col = app.add_subcommand("train-color", "stage 2: distill colorizer output into the color logits");
  common(col);
  std::optional<std::string> colorizer, external_cmd;
  col->add_option("--data", data, "dataset directory");
  col->add_option("--checkpoint", checkpoint, "stage-1 checkpoint");
  col->add_option("--colorizer", colorizer, "colorizer backend")
      ->check(CLI::IsMember({"oracle", "palette", "external"}));
  col->add_option("--external-cmd", external_cmd, "shell command of an external colorizer");

  auto* ren = app.add_subcommand("render", "render the dataset cameras from a checkpoint");
  common(ren);
  ren->add_option("--data", data, "dataset directory supplying cameras");
  ren->add_option("--checkpoint", checkpoint, "checkpoint to render");

  auto* ev = app.add_subcommand("eval", "render and score a checkpoint against dataset views");
  common(ev);
  ev->add_option("--data", data, "dataset directory");
  ev->add_option("--checkpoint", checkpoint, "checkpoint to evaluate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    RunConfig rc = load_config(config_path);
    if (seed) rc.train.seed = *seed;
    if (workers) rc.train.workers = *workers;
    if (out) rc.out = *out;
    if (data) rc.dataset = *data;
    if (checkpoint) rc.checkpoint = *checkpoint;
    if (scene_path) rc.scene = *scene_path;
    if (n_views) rc.n_views = *n_views;
    if (width) rc.width = *width;
    if (height) rc.height = *height;
    if (colorizer) rc.colorizer = *colorizer;
    if (external_cmd) rc.external_cmd = *external_cmd;
    try {
      rc.train.validate();
    } catch (const std::invalid_argument& e) {
      fail(kUsage, e.what());
    }

    if (*synth) cmd_make_synthetic(rc);
    else if (*lum) cmd_train_lum(rc);
    else if (*col) cmd_train_color(rc);
    else if (*ren) cmd_render(rc);
    else cmd_eval(rc);
    return kOk;
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ColorizerUnavailable& e) {
    std::cerr << "colorizer error: " << e.what() << '\n';
    return kColorizer;
  } catch (const ColorizerError& e) {
    std::cerr << "colorizer error: " << e.what() << '\n';
    return kColorizer;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}
