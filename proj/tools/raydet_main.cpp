#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "raydet/errors.hpp"
#include "raydet/mapio.hpp"
#include "raydet/scenes.hpp"
#include "raydet/trainer.hpp"

namespace fs = std::filesystem;
using namespace raydet;

namespace {

std::string default_out() {
  const char* env = std::getenv("RAYDET_OUT");
  return env ? std::string(env) : std::string("out");
}

std::vector<Scene> load_scene_dir(const std::string& dir) {
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) throw io_error("not a scene directory: " + dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    if (name.rfind("scene_", 0) == 0 && name.size() > 4 &&
        name.substr(name.size() - 4) == ".txt")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw io_error("no scene_*.txt files in " + dir);
  std::vector<Scene> scenes;
  for (const std::string& f : files) scenes.push_back(load_scene(f));
  return scenes;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw io_error("cannot create directory: " + dir);
}

int cmd_gen(const std::string& out_dir, const std::string& spec_path,
            std::uint64_t seed, int n_scenes, int boxes, int classes, int views,
            int width, int height) {
  ensure_dir(out_dir);
  SceneSpec spec;
  if (!spec_path.empty()) {
    KeyValueConfig kv = KeyValueConfig::parse_file(spec_path);
    spec.room_half_x = kv.get_double("room_half_x", spec.room_half_x);
    spec.room_half_y = kv.get_double("room_half_y", spec.room_half_y);
    spec.room_height = kv.get_double("room_height", spec.room_height);
    spec.box_count = kv.get_int("boxes", spec.box_count);
    spec.class_count = kv.get_int("classes", spec.class_count);
    spec.view_count = kv.get_int("views", spec.view_count);
    spec.image_width = kv.get_int("width", spec.image_width);
    spec.image_height = kv.get_int("height", spec.image_height);
    seed = kv.get_u64("seed", seed);
    n_scenes = kv.get_int("scenes", n_scenes);
  }
  if (boxes > 0) spec.box_count = boxes;
  if (classes > 0) spec.class_count = classes;
  if (views > 0) spec.view_count = views;
  if (width > 0) spec.image_width = width;
  if (height > 0) spec.image_height = height;

  for (int s = 0; s < n_scenes; ++s) {
    spec.seed = seed + std::uint64_t(s);
    Scene scene = generate_scene(spec);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "/scene_%03d.txt", s);
    save_scene(scene, out_dir + buf);
    double z_max = scene.room.diagonal();
    for (int v = 0; v < int(scene.views.size()); ++v) {
      const CameraIntrinsics& cam = scene.views[v].cam;
      Image color = gt_color_map(scene, v);
      std::vector<double> depth = gt_depth_map(scene, v, z_max);
      std::vector<int> sem = gt_semantic_map(scene, v);
      std::vector<double> semd(sem.begin(), sem.end());
      std::snprintf(buf, sizeof(buf), "/s%03d_v%03d_color.map", s, v);
      MapFile::wrap(cam.height, cam.width, 3, color.data).save(out_dir + buf);
      std::snprintf(buf, sizeof(buf), "/s%03d_v%03d_depth.map", s, v);
      MapFile::wrap(cam.height, cam.width, 1, depth).save(out_dir + buf);
      std::snprintf(buf, sizeof(buf), "/s%03d_v%03d_sem.map", s, v);
      MapFile::wrap(cam.height, cam.width, 1, std::move(semd)).save(out_dir + buf);
    }
    std::cout << "scene " << s << ": " << scene.boxes.size() << " boxes, "
              << scene.views.size() << " views\n";
  }
  return 0;
}

int cmd_train(const std::string& scenes_dir, const std::string& config_path,
              const std::string& out_dir, int iters_override, long long seed_override,
              int threads_override) {
  ensure_dir(out_dir);
  KeyValueConfig kv =
      config_path.empty() ? KeyValueConfig() : KeyValueConfig::parse_file(config_path);
  TrainConfig cfg = TrainConfig::from_config(kv);
  if (iters_override >= 0) cfg.iterations = iters_override;
  if (seed_override >= 0) cfg.seed = std::uint64_t(seed_override);
  if (threads_override > 0) cfg.threads = threads_override;

  Trainer trainer(load_scene_dir(scenes_dir), cfg);
  std::ofstream log(out_dir + "/train_log.txt");
  std::ofstream timing(out_dir + "/timing.txt");
  if (!log || !timing) throw io_error("cannot write logs in " + out_dir);
  trainer.train([&](const std::string& line) { log << line << "\n"; },
                [&](double us) { timing << us << "\n"; });
  trainer.save_checkpoint(out_dir + "/checkpoint.bin");
  std::cout << "trained " << trainer.iteration() << " iterations\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& scenes_dir,
             const std::string& config_path, const std::string& out_dir, bool dump,
             bool oracle, int threads_override) {
  ensure_dir(out_dir);
  KeyValueConfig kv =
      config_path.empty() ? KeyValueConfig() : KeyValueConfig::parse_file(config_path);
  TrainConfig cfg = TrainConfig::from_config(kv);
  if (threads_override > 0) cfg.threads = threads_override;
  Trainer trainer(load_scene_dir(scenes_dir), cfg);
  if (!ckpt.empty()) trainer.load_checkpoint(ckpt);
  Metrics m = trainer.evaluate(dump ? out_dir : "", oracle);
  std::ofstream os(out_dir + "/metrics.txt");
  if (!os) throw io_error("cannot write metrics in " + out_dir);
  os << m.to_text();
  std::cout << m.to_text();
  return 0;
}

int cmd_ablate(const std::string& axis, const std::string& scenes_dir,
               const std::string& config_path, const std::string& out_dir,
               int iters_override) {
  ensure_dir(out_dir);
  KeyValueConfig kv =
      config_path.empty() ? KeyValueConfig() : KeyValueConfig::parse_file(config_path);

  struct Variant {
    std::string name;
    std::string key, value;
  };
  std::vector<Variant> variants;
  if (axis == "sampling") {
    for (const char* s : {"us", "uis", "lgis", "lnis"})
      variants.push_back({s, "strategy", s});
  } else if (axis == "depthloss") {
    for (const char* s : {"l1", "huber", "ordinal"})
      variants.push_back({s, "depth_loss", s});
  } else if (axis == "fine") {
    variants.push_back({"fine_off", "fine", "off"});
    variants.push_back({"fine_on", "fine", "on"});
  } else if (axis == "norm") {
    variants.push_back({"norm_off", "depth_normalize", "off"});
    variants.push_back({"norm_on", "depth_normalize", "on"});
  } else {
    throw std::invalid_argument("unknown ablation axis: " + axis);
  }

  std::vector<Scene> scenes = load_scene_dir(scenes_dir);
  std::ofstream os(out_dir + "/ablate_" + axis + ".txt");
  if (!os) throw io_error("cannot write ablation table in " + out_dir);
  os << "variant psnr depth_rmse_near depth_rmse_far sem_acc map25 map50 "
        "final_total\n";
  for (const Variant& var : variants) {
    KeyValueConfig kvv = kv;
    kvv.set(var.key, var.value);
    TrainConfig cfg = TrainConfig::from_config(kvv);
    if (iters_override >= 0) cfg.iterations = iters_override;
    Trainer trainer(scenes, cfg);
    double last_total = 0.0;
    trainer.train([&](const std::string& line) {
      std::size_t pos = line.rfind("total ");
      if (pos != std::string::npos) last_total = std::stod(line.substr(pos + 6));
    });
    Metrics m = trainer.evaluate();
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%s %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  var.name.c_str(), m.psnr, m.depth_rmse_near, m.depth_rmse_far,
                  m.sem_acc, m.map25, m.map50, last_total);
    os << buf;
    std::cout << buf;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic multi-view 3D detection testbed with neural-rendering "
               "supervision"};
  app.require_subcommand(1);

  std::string out_dir = default_out();
  std::string spec_path, config_path, scenes_dir, ckpt, axis;
  std::uint64_t seed = 0;
  int n_scenes = 3, boxes = 0, classes = 0, views = 0, width = 0, height = 0;
  int iters = -1, threads = 0;
  long long seed_override = -1;
  bool dump = false, oracle = false;

  CLI::App* gen = app.add_subcommand("gen", "generate synthetic scenes + GT maps");
  gen->add_option("--out", out_dir, "output directory");
  gen->add_option("--spec", spec_path, "scene spec config file");
  gen->add_option("--seed", seed, "base seed");
  gen->add_option("--scenes", n_scenes, "number of scenes");
  gen->add_option("--boxes", boxes, "boxes per scene");
  gen->add_option("--classes", classes, "object classes");
  gen->add_option("--views", views, "views per scene");
  gen->add_option("--width", width, "image width");
  gen->add_option("--height", height, "image height");

  CLI::App* train = app.add_subcommand("train", "train on a scene directory");
  train->add_option("--scenes", scenes_dir, "scene directory")->required();
  train->add_option("--config", config_path, "training config file");
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--iters", iters, "override iteration count");
  train->add_option("--seed", seed_override, "override seed");
  train->add_option("--threads", threads, "worker threads (1 = canonical)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "checkpoint file");
  eval->add_option("--scenes", scenes_dir, "scene directory")->required();
  eval->add_option("--config", config_path, "training config file");
  eval->add_option("--out", out_dir, "output directory");
  eval->add_flag("--dump", dump, "dump per-view rendered maps");
  eval->add_flag("--oracle", oracle, "evaluate the ground-truth bypass");
  eval->add_option("--threads", threads, "worker threads");

  CLI::App* ablate = app.add_subcommand("ablate", "run one ablation axis");
  ablate->add_option("--axis", axis, "sampling | depthloss | fine | norm")->required();
  ablate->add_option("--scenes", scenes_dir, "scene directory")->required();
  ablate->add_option("--config", config_path, "training config file");
  ablate->add_option("--out", out_dir, "output directory");
  ablate->add_option("--iters", iters, "override iteration count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return cmd_gen(out_dir, spec_path, seed, n_scenes, boxes, classes, views, width,
                     height);
    if (train->parsed())
      return cmd_train(scenes_dir, config_path, out_dir, iters, seed_override, threads);
    if (eval->parsed())
      return cmd_eval(ckpt, scenes_dir, config_path, out_dir, dump, oracle, threads);
    if (ablate->parsed())
      return cmd_ablate(axis, scenes_dir, config_path, out_dir, iters);
  } catch (const divergence_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
