#include "raydet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include "raydet/errors.hpp"
#include "raydet/mapio.hpp"

namespace raydet {

DepthLossMode depth_mode_from_name(const std::string& name) {
  if (name == "none") return DepthLossMode::None;
  if (name == "l1") return DepthLossMode::L1;
  if (name == "huber") return DepthLossMode::Huber;
  if (name == "ordinal") return DepthLossMode::Ordinal;
  throw std::invalid_argument("unknown depth loss mode: " + name);
}

const char* depth_mode_name(DepthLossMode mode) {
  switch (mode) {
    case DepthLossMode::None: return "none";
    case DepthLossMode::L1: return "l1";
    case DepthLossMode::Huber: return "huber";
    case DepthLossMode::Ordinal: return "ordinal";
  }
  return "?";
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
  TrainConfig c;
  c.iterations = kv.get_int("iters", c.iterations);
  c.rays_per_batch = kv.get_int("rays_per_batch", c.rays_per_batch);
  c.learning_rate = kv.get_double("lr", c.learning_rate);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.seed = kv.get_u64("seed", c.seed);
  c.depth_bins = kv.get_int("depth_bins", c.depth_bins);
  c.strategy = strategy_from_name(kv.get_string("strategy", strategy_name(c.strategy)));
  c.coarse_samples = kv.get_int("coarse_samples", c.coarse_samples);
  c.fine_enabled = kv.get_bool("fine", c.fine_enabled);
  c.fine_samples = kv.get_int("fine_samples", c.fine_samples);
  c.depth_mode =
      depth_mode_from_name(kv.get_string("depth_loss", depth_mode_name(c.depth_mode)));
  c.huber_delta = kv.get_double("huber_delta", c.huber_delta);
  c.depth_normalize = kv.get_bool("depth_normalize", c.depth_normalize);
  c.semantic_enabled = kv.get_bool("semantic", c.semantic_enabled);
  c.weights.det = kv.get_double("w_det", c.weights.det);
  c.weights.rgb = kv.get_double("w_rgb", c.weights.rgb);
  c.weights.geo = kv.get_double("w_geo", c.weights.geo);
  c.weights.seg = kv.get_double("w_seg", c.weights.seg);
  c.weights.depth = kv.get_double("w_depth", c.weights.depth);
  c.weights.gamma = kv.get_double("gamma", c.weights.gamma);
  c.model.n_classes = kv.get_int("classes", c.model.n_classes);
  c.model.feat_channels = kv.get_int("feat_channels", c.model.feat_channels);
  c.model.pe_x = kv.get_int("pe_x", c.model.pe_x);
  c.model.pe_d = kv.get_int("pe_d", c.model.pe_d);
  c.model.hidden = kv.get_int("hidden", c.model.hidden);
  c.model.hidden_layers = kv.get_int("hidden_layers", c.model.hidden_layers);
  c.model.h_dim = kv.get_int("h_dim", c.model.h_dim);
  c.model.det_hidden = kv.get_int("det_hidden", c.model.det_hidden);
  c.model.grid_nx = kv.get_int("grid_nx", c.model.grid_nx);
  c.model.grid_ny = kv.get_int("grid_ny", c.model.grid_ny);
  c.model.grid_nz = kv.get_int("grid_nz", c.model.grid_nz);
  c.model.voxel_edge = kv.get_double("voxel_edge", c.model.voxel_edge);
  c.model.sigma_bias = kv.get_double("sigma_bias", c.model.sigma_bias);
  c.det_voxels_per_iter = kv.get_int("det_voxels", c.det_voxels_per_iter);
  c.nms_iou = kv.get_double("nms_iou", c.nms_iou);
  c.det_score_threshold = kv.get_double("score_threshold", c.det_score_threshold);
  c.heldout_every = kv.get_int("heldout_every", c.heldout_every);
  c.sem_source = kv.get_string("sem_source", c.sem_source);
  c.threads = kv.get_int("threads", c.threads);
  if (c.sem_source != "projected" && c.sem_source != "raycast")
    throw std::invalid_argument("sem_source must be projected or raycast");
  return c;
}

SceneCache::SceneCache(Scene s, const TrainConfig& cfg, const Model& model)
    : scene(std::move(s)), ds(scene.depth_space(cfg.depth_bins, cfg.strategy)) {
  grid = model.grid_for_room(scene.room);
  const int n_views = int(scene.views.size());
  for (int v = 0; v < n_views; ++v) {
    if (cfg.heldout_every > 0 && v % cfg.heldout_every == 0 && n_views > 1)
      heldout_views.push_back(v);
    else
      train_views.push_back(v);
  }
  if (train_views.empty()) train_views.push_back(0);

  LabeledPointSet points = surface_point_set(scene, 0.012);
  for (int v = 0; v < n_views; ++v) {
    color_maps.push_back(gt_color_map(scene, v));
    depth_maps.push_back(gt_depth_map(scene, v, ds.z_max()));
    sem_eval.push_back(gt_semantic_map(scene, v));
    if (cfg.sem_source == "projected")
      sem_train.push_back(project_semantics(points, scene.views[v]));
    else
      sem_train.push_back(sem_eval.back());
  }
  for (int v : train_views) {
    train_cams.push_back(scene.views[v].cam);
    train_poses.push_back(scene.views[v].pose);
    train_images.push_back(color_maps[v]);
    patch_tables.push_back(model.extractor().patches(color_maps[v]));
  }
  bp_table = make_backproject_table(train_cams, train_poses, grid,
                                    scene.views[0].cam.width / 4,
                                    scene.views[0].cam.height / 4);
  const int nv = grid.n_voxels();
  std::vector<double> centers(std::size_t(nv) * 3);
  for (int v = 0; v < nv; ++v) {
    Vec3 c = grid.center(v);
    centers[v * 3 + 0] = c.x;
    centers[v * 3 + 1] = c.y;
    centers[v * 3 + 2] = c.z;
  }
  voxel_pe = nn::positional_encode_cols(centers.data(), 3, nv, model.config().pe_x);
  std::vector<Box3D> gt;
  for (const LabeledBox& lb : scene.boxes) gt.push_back(lb.box);
  targets = assign_voxel_targets(gt, grid, model.config().n_classes);
  for (int v = 0; v < nv; ++v)
    if (bp_table.hits[v] > 0) visible_voxels.push_back(v);
  for (int v : targets.positives)
    if (bp_table.hits[v] > 0) visible_positives.push_back(v);
}

bool SceneCache::occupied(const Vec3& p) const {
  for (const LabeledBox& lb : scene.boxes)
    if (lb.box.aabb().contains(p)) return true;
  return false;
}

Trainer::Trainer(std::vector<Scene> scenes, const TrainConfig& config)
    : cfg_(config), model_(config.model), store_(config.seed),
      opt_(config.learning_rate, config.momentum),
      rng_(config.seed, streams::kTrainLoop) {
  if (scenes.empty()) throw std::invalid_argument("Trainer: needs at least one scene");
  model_.ensure_params(store_);
  for (Scene& s : scenes) {
    if (s.views.empty()) throw std::invalid_argument("Trainer: scene without views");
    caches_.emplace_back(std::move(s), cfg_, model_);
  }
}

StepPlan Trainer::make_plan(Rng& rng) {
  StepPlan plan;
  plan.scene = int(rng.next_below(caches_.size()));
  const SceneCache& c = caches_[plan.scene];
  plan.view = c.train_views[rng.next_below(c.train_views.size())];
  const CameraIntrinsics& cam = c.scene.views[plan.view].cam;
  const int n_px = cam.width * cam.height;
  plan.pixels.resize(cfg_.rays_per_batch);
  for (int& p : plan.pixels) p = int(rng.next_below(std::uint64_t(n_px)));

  plan.coarse_t.reserve(std::size_t(cfg_.rays_per_batch) * cfg_.coarse_samples);
  for (int r = 0; r < cfg_.rays_per_batch; ++r) {
    std::vector<double> t = c.ds.sample_depths(cfg_.coarse_samples, &rng);
    plan.coarse_t.insert(plan.coarse_t.end(), t.begin(), t.end());
  }
  plan.fine_seed = rng.next_u64();

  // detection voxels: visible positives (capped at half the budget) plus
  // negatives sampled from the visible region
  const int nv = c.grid.n_voxels();
  if (cfg_.det_voxels_per_iter <= 0 || cfg_.det_voxels_per_iter >= nv ||
      c.visible_voxels.empty()) {
    plan.det_voxels.resize(nv);
    std::iota(plan.det_voxels.begin(), plan.det_voxels.end(), 0);
  } else {
    const int half = cfg_.det_voxels_per_iter / 2;
    std::vector<int> pos = c.visible_positives;
    if (int(pos.size()) > half) {
      for (int i = 0; i < half; ++i) {
        std::size_t j = i + rng.next_below(pos.size() - i);
        std::swap(pos[i], pos[j]);
      }
      pos.resize(half);
    }
    plan.det_voxels = pos;
    while (int(plan.det_voxels.size()) < cfg_.det_voxels_per_iter)
      plan.det_voxels.push_back(c.visible_voxels[rng.next_below(c.visible_voxels.size())]);
  }
  return plan;
}

namespace {

struct RayBatchTruth {
  std::vector<Ray> rays;
  std::vector<double> gt_depth;
  std::vector<Vec3> gt_color;
  std::vector<int> seg_label;
  std::vector<double> seg_mask;
};

RayBatchTruth gather_ray_truth(const SceneCache& c, const StepPlan& plan) {
  RayBatchTruth g;
  const View& view = c.scene.views[plan.view];
  const int W = view.cam.width;
  for (int p : plan.pixels) {
    int x = p % W, y = p / W;
    g.rays.push_back(pixel_to_ray(view.cam, view.pose, double(x), double(y)));
    g.gt_depth.push_back(c.depth_maps[plan.view][p]);
    const Image& img = c.color_maps[plan.view];
    g.gt_color.push_back({img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)});
    int lb = c.sem_train[plan.view][p];
    g.seg_label.push_back(lb == kIgnoreLabel ? 0 : lb);
    g.seg_mask.push_back(lb == kIgnoreLabel ? 0.0 : 1.0);
  }
  return g;
}

// One rendering branch over fixed per-ray depths: heads, weights and the
// mask-independent losses. The depth loss attaches later once the frozen
// mask is known.
struct BranchNodes {
  nn::NodeId sigma = -1;
  nn::NodeId w = -1;
  nn::NodeId wsum = -1;
  nn::NodeId leftover = -1;  // 1 - wsum
  nn::NodeId rgb = -1, seg = -1, geo = -1, depth = -1;
  Tensor t_row;  // [1,B] sample depths
  int samples_per_ray = 0;
};

BranchNodes build_branch(nn::Tape& tape, nn::ParamStore& store, const Model& model,
                         const SceneCache& c, const TrainConfig& cfg,
                         const RayBatchTruth& g, const std::vector<double>& depths,
                         int samples_per_ray, nn::NodeId volume, bool fine) {
  const int R = int(g.rays.size());
  const int S = samples_per_ray;
  const int B = R * S;
  const ModelConfig& mc = model.config();
  const int K = mc.sem_width();

  BranchNodes out;
  out.samples_per_ray = S;
  out.t_row = Tensor(1, B);

  std::vector<double> pts(std::size_t(B) * 3), dirs(std::size_t(B) * 3);
  Tensor delta_row(1, B);
  Tensor occupancy(1, B);
  std::vector<std::array<nn::Tape::Tap, 8>> taps(B);
  for (int r = 0; r < R; ++r) {
    const Ray& ray = g.rays[r];
    for (int i = 0; i < S; ++i) {
      int k = r * S + i;
      double t = depths[k];
      out.t_row.data[k] = t;
      double t_next = i + 1 < S ? depths[k + 1] : c.ds.z_max();
      delta_row.data[k] = std::max(t_next - t, 1e-12);
      Vec3 p = ray.at(t);
      pts[k * 3 + 0] = p.x;
      pts[k * 3 + 1] = p.y;
      pts[k * 3 + 2] = p.z;
      dirs[k * 3 + 0] = ray.direction.x;
      dirs[k * 3 + 1] = ray.direction.y;
      dirs[k * 3 + 2] = ray.direction.z;
      occupancy.data[k] = c.occupied(p) ? 1.0 : 0.0;
      taps[k] = trilinear_taps(c.grid, p);
    }
  }

  nn::NodeId pe_x = tape.input(nn::positional_encode_cols(pts.data(), 3, B, mc.pe_x));
  nn::NodeId pe_d = tape.input(nn::positional_encode_cols(dirs.data(), 3, B, mc.pe_d));
  nn::NodeId feat = tape.gather_taps(volume, std::move(taps));
  HeadNodes heads = model.build_heads(tape, store, pe_x, pe_d, feat, fine);
  out.sigma = heads.sigma;

  out.w = tape.composite_weights(heads.sigma, delta_row, S);
  nn::NodeId alpha = tape.alpha_from_sigma(heads.sigma, delta_row);
  Tensor ones(1, B);
  ones.fill(1.0);
  out.wsum = tape.weighted_reduce_const(out.w, std::move(ones), S);
  nn::NodeId leftover = tape.axpb(out.wsum, -1.0, 1.0);
  out.leftover = leftover;

  nn::NodeId color_comp = tape.weighted_reduce(out.w, heads.color, S);
  std::vector<double> bg = {c.scene.background.x, c.scene.background.y,
                            c.scene.background.z};
  nn::NodeId color_blend = tape.add_rank1(color_comp, bg, leftover);
  Tensor gt_color(3, R);
  for (int r = 0; r < R; ++r)
    for (int ch = 0; ch < 3; ++ch) gt_color.at(ch, r) = g.gt_color[r][ch];
  out.rgb = tape.mse_loss(color_blend, std::move(gt_color));

  if (cfg.semantic_enabled) {
    nn::NodeId sem_prob = tape.softmax_cols(heads.sem_logits);
    nn::NodeId sem_comp = tape.weighted_reduce(out.w, sem_prob, S);
    std::vector<double> onehot_bg(std::size_t(K), 0.0);
    onehot_bg[c.scene.background_label()] = 1.0;
    nn::NodeId sem_blend = tape.add_rank1(sem_comp, onehot_bg, leftover);
    out.seg = tape.nll_probs(sem_blend, g.seg_label, g.seg_mask);
  }

  out.geo = tape.bce_loss(alpha, std::move(occupancy));
  return out;
}

// Probability floor inside the bin-classification term.
constexpr double kOrdinalProbFloor = 1e-2;

// Training-time depth estimates assign the leftover transmittance to the
// far plane: z = sum_i w_i t_i + (1 - W) z_max, and the per-ray bin
// distribution gets the leftover in the top bin. Unlike a W-renormalized
// expectation this keeps gradients bounded for near-empty rays and shares
// its fixed point with the rendered depth.
nn::NodeId build_depth_loss(nn::Tape& tape, const SceneCache& c, const TrainConfig& cfg,
                            const RayBatchTruth& g, BranchNodes& branch,
                            const std::vector<double>& mask) {
  const int R = int(g.rays.size());
  const double scale = cfg.depth_normalize ? 1.0 / c.ds.z_max() : 1.0;
  nn::NodeId depth_sum =
      tape.weighted_reduce_const(branch.w, branch.t_row, branch.samples_per_ray);
  nn::NodeId depth_pred =
      tape.add(depth_sum, tape.axpb(branch.leftover, c.ds.z_max(), 0.0));
  if (cfg.depth_mode == DepthLossMode::Ordinal) {
    // cross-entropy between the true bin and the ray's termination mass
    // per bin, plus residual regression against the true bin's lower edge
    std::vector<double> l_of_t(branch.t_row.data.size());
    for (std::size_t k = 0; k < l_of_t.size(); ++k) {
      double t = std::min(std::max(branch.t_row.data[k], c.ds.z_min()), c.ds.z_max());
      l_of_t[k] = c.ds.bin_coordinate(t);
    }
    nn::NodeId mass = tape.soft_bin_mass(branch.w, std::move(l_of_t), c.ds.n_bins(),
                                         branch.samples_per_ray);
    std::vector<double> far_onehot(std::size_t(c.ds.n_bins()), 0.0);
    far_onehot.back() = 1.0;
    nn::NodeId probs = tape.add_rank1(mass, far_onehot, branch.leftover);
    probs = tape.axpb(probs, 1.0, kOrdinalProbFloor);  // additive smoothing
    std::vector<int> bin_labels(R, 0);
    Tensor edge_neg(1, R), resid_target(1, R);
    for (int r = 0; r < R; ++r) {
      if (mask[r] == 0.0) continue;
      OrdinalDepthCode code = c.ds.encode(g.gt_depth[r]);
      bin_labels[r] = code.l_int;
      edge_neg.data[r] = -c.ds.bin_edge_depth(double(code.l_int));
      resid_target.data[r] = code.z_res * scale;
    }
    nn::NodeId ce = tape.nll_probs(probs, bin_labels, mask);
    nn::NodeId resid_pred = tape.add(depth_pred, tape.input(std::move(edge_neg)));
    if (scale != 1.0) resid_pred = tape.axpb(resid_pred, scale, 0.0);
    nn::NodeId l1 = tape.l1_loss(resid_pred, std::move(resid_target), mask);
    return tape.weighted_sum_scalars({ce, l1}, {1.0, cfg.weights.gamma});
  }
  if (scale != 1.0) depth_pred = tape.axpb(depth_pred, scale, 0.0);
  Tensor target(1, R);
  for (int r = 0; r < R; ++r) target.data[r] = g.gt_depth[r] * scale;
  if (cfg.depth_mode == DepthLossMode::L1)
    return tape.l1_loss(depth_pred, std::move(target), mask);
  return tape.huber_loss(depth_pred, std::move(target), mask, cfg.huber_delta);
}

}  // namespace

nn::NodeId Trainer::forward_loss(nn::Tape& tape, StepPlan& plan, LossReport* report) {
  const SceneCache& c = caches_[plan.scene];
  RayBatchTruth g = gather_ray_truth(c, plan);
  const int R = int(g.rays.size());
  const int Sc = cfg_.coarse_samples;
  const int K = cfg_.model.sem_width();

  nn::NodeId volume =
      model_.build_volume(tape, store_, c.patch_tables, c.bp_table, c.grid.n_voxels());

  BranchNodes coarse = build_branch(tape, store_, model_, c, cfg_, g, plan.coarse_t, Sc,
                                    volume, false);

  // freeze the depth-loss mask on first forward: surface pixels (the z_max
  // sentinel marks free space, which the geometry loss owns) with in-range
  // ground truth and non-empty coarse weight
  if (!plan.mask_filled) {
    plan.depth_mask.assign(R, 0.0);
    plan.depth_excluded = 0;
    const Tensor& wsum = tape.value(coarse.wsum);
    for (int r = 0; r < R; ++r) {
      bool in_range = g.gt_depth[r] >= c.ds.z_min() && g.gt_depth[r] <= c.ds.z_max();
      if (!in_range) {
        ++plan.depth_excluded;
        continue;
      }
      bool hit = g.gt_depth[r] < c.ds.z_max();
      plan.depth_mask[r] = hit && wsum.data[r] > kWeightEps ? 1.0 : 0.0;
    }
    plan.mask_filled = true;
  }

  nn::NodeId depth_c = -1;
  if (cfg_.depth_mode != DepthLossMode::None)
    depth_c = build_depth_loss(tape, c, cfg_, g, coarse, plan.depth_mask);

  // fine pass over the union of coarse depths and weight-proportional
  // resamples; sample locations are frozen in the plan
  BranchNodes fine;
  nn::NodeId depth_f = -1;
  const bool use_fine = cfg_.fine_enabled && cfg_.fine_samples > 0;
  if (use_fine) {
    const int Sf = Sc + cfg_.fine_samples;
    if (!plan.fine_filled) {
      Rng fine_rng(plan.fine_seed, Rng::hash_name("fine-jitter"));
      const Tensor& sigma = tape.value(coarse.sigma);
      plan.fine_t.clear();
      plan.fine_t.reserve(std::size_t(R) * Sf);
      for (int r = 0; r < R; ++r) {
        RaySamples rs;
        rs.ray = g.rays[r];
        rs.far = c.ds.z_max();
        rs.t.assign(plan.coarse_t.begin() + std::size_t(r) * Sc,
                    plan.coarse_t.begin() + std::size_t(r + 1) * Sc);
        rs.delta.resize(Sc);
        for (int i = 0; i + 1 < Sc; ++i) rs.delta[i] = rs.t[i + 1] - rs.t[i];
        rs.delta[Sc - 1] = std::max(c.ds.z_max() - rs.t[Sc - 1], 1e-12);
        rs.outputs.resize(Sc);
        for (int i = 0; i < Sc; ++i)
          rs.outputs[i].sigma = sigma.data[std::size_t(r) * Sc + i];
        std::vector<double> extra = fine_resample(rs, cfg_.fine_samples, c.ds, &fine_rng);
        std::vector<double> merged = rs.t;
        merged.insert(merged.end(), extra.begin(), extra.end());
        std::sort(merged.begin(), merged.end());
        for (std::size_t i = 1; i < merged.size(); ++i)
          if (merged[i] <= merged[i - 1]) merged[i] = merged[i - 1] + 1e-12;
        plan.fine_t.insert(plan.fine_t.end(), merged.begin(), merged.end());
      }
      plan.fine_filled = true;
    }
    fine = build_branch(tape, store_, model_, c, cfg_, g, plan.fine_t, Sf, volume, true);
    if (cfg_.depth_mode != DepthLossMode::None)
      depth_f = build_depth_loss(tape, c, cfg_, g, fine, plan.depth_mask);
  }

  // detection branch over the sampled voxel subset
  const int M = int(plan.det_voxels.size());
  Tensor pe_sub(c.voxel_pe.rows, M);
  for (int m = 0; m < M; ++m) {
    const double* src = c.voxel_pe.col(plan.det_voxels[m]);
    double* dst = pe_sub.col(m);
    for (int r = 0; r < c.voxel_pe.rows; ++r) dst[r] = src[r];
  }
  nn::NodeId det_out =
      model_.build_det_head(tape, store_, volume, plan.det_voxels, pe_sub, c.grid.edge);
  nn::NodeId det_cls = tape.slice_rows(det_out, 0, K);
  nn::NodeId det_off = tape.slice_rows(det_out, K, 3);
  nn::NodeId det_lsz = tape.slice_rows(det_out, K + 3, 3);
  std::vector<int> cls_labels(M);
  std::vector<double> ones_mask(M, 1.0), pos_mask(M, 0.0);
  Tensor off_target(3, M), lsz_target(3, M);
  for (int m = 0; m < M; ++m) {
    int v = plan.det_voxels[m];
    cls_labels[m] = c.targets.cls[v];
    if (c.targets.cls[v] != cfg_.model.n_classes) {
      pos_mask[m] = 1.0;
      for (int i = 0; i < 3; ++i) {
        off_target.at(i, m) = c.targets.center_offset[std::size_t(v) * 3 + i];
        lsz_target.at(i, m) = c.targets.log_size[std::size_t(v) * 3 + i];
      }
    }
  }
  nn::NodeId det_ce = tape.softmax_ce(det_cls, cls_labels, ones_mask);
  nn::NodeId det_off_l = tape.huber_loss(det_off, std::move(off_target), pos_mask, 1.0);
  nn::NodeId det_lsz_l = tape.huber_loss(det_lsz, std::move(lsz_target), pos_mask, 1.0);
  nn::NodeId det =
      tape.weighted_sum_scalars({det_ce, det_off_l, det_lsz_l}, {1.0, 1.0, 1.0});

  // per-term sums over coarse + fine with equal weight
  auto pair_sum = [&](nn::NodeId a, nn::NodeId b) {
    if (b < 0) return a;
    return tape.weighted_sum_scalars({a, b}, {1.0, 1.0});
  };
  nn::NodeId zero = tape.input(Tensor::scalar(0.0));
  nn::NodeId rgb = pair_sum(coarse.rgb, use_fine ? fine.rgb : -1);
  nn::NodeId geo = pair_sum(coarse.geo, use_fine ? fine.geo : -1);
  nn::NodeId seg = cfg_.semantic_enabled
                       ? pair_sum(coarse.seg, use_fine ? fine.seg : -1)
                       : zero;
  nn::NodeId depth = cfg_.depth_mode != DepthLossMode::None
                         ? pair_sum(depth_c, use_fine ? depth_f : -1)
                         : zero;

  nn::NodeId total = tape.weighted_sum_scalars(
      {det, rgb, geo, seg, depth},
      {cfg_.weights.det, cfg_.weights.rgb, cfg_.weights.geo, cfg_.weights.seg,
       cfg_.weights.depth});

  if (report) {
    *report = total_loss(tape.value(det).data[0], tape.value(rgb).data[0],
                         tape.value(geo).data[0], tape.value(seg).data[0],
                         tape.value(depth).data[0], cfg_.weights);
    report->depth_relative = cfg_.depth_normalize;
    report->depth_excluded = plan.depth_excluded;
  }
  return total;
}

LossReport Trainer::train_step() {
  StepPlan plan = make_plan(rng_);
  nn::Tape tape;
  LossReport report;
  nn::NodeId total = forward_loss(tape, plan, &report);
  store_.zero_grads();
  tape.backward(total);
  opt_.step(store_);
  ++iteration_;
  double vals[6] = {report.det, report.rgb, report.geo,
                    report.seg, report.depth, report.total};
  for (int i = 0; i < 6; ++i) loss_sums_[i] += vals[i];
  loss_count_ += 1.0;
  return report;
}

void Trainer::train(const std::function<void(const std::string&)>& log_sink,
                    const std::function<void(double)>& wall_sink) {
  for (int i = 0; i < cfg_.iterations; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    LossReport report = train_step();
    auto t1 = std::chrono::steady_clock::now();
    if (log_sink) log_sink(log_line(iteration_, report));
    if (wall_sink)
      wall_sink(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
}

std::string Trainer::log_line(int iteration, const LossReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "iter %06d det %.17g rgb %.17g geo %.17g seg %.17g depth %.17g "
                "total %.17g dexcl %d",
                iteration, r.det, r.rgb, r.geo, r.seg, r.depth, r.total,
                r.depth_excluded);
  return std::string(buf);
}

FeatureVolume Trainer::eval_volume(const SceneCache& cache) {
  return model_.compute_volume(store_, cache.train_images, cache.train_cams,
                               cache.train_poses, cache.grid);
}

namespace {

void dump_view_maps(const std::string& dir, int scene, int view, const ViewMaps& maps,
                    const Image& gt_color, const std::vector<double>& gt_depth,
                    const std::vector<int>& gt_label) {
  auto name = [&](const char* kind) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "/s%02d_v%02d_%s.map", scene, view, kind);
    return dir + buf;
  };
  const int H = maps.height, W = maps.width;
  MapFile::wrap(H, W, 3, maps.color).save(name("pred_color"));
  MapFile::wrap(H, W, 1, maps.depth).save(name("pred_depth"));
  std::vector<double> lab(maps.label.begin(), maps.label.end());
  MapFile::wrap(H, W, 1, std::move(lab)).save(name("pred_label"));
  MapFile::wrap(H, W, 3, gt_color.data).save(name("gt_color"));
  MapFile::wrap(H, W, 1, gt_depth).save(name("gt_depth"));
  std::vector<double> glab(gt_label.begin(), gt_label.end());
  MapFile::wrap(H, W, 1, std::move(glab)).save(name("gt_label"));
}

}  // namespace

Metrics Trainer::evaluate(const std::string& dump_dir, bool oracle_bypass) {
  double color_se = 0.0, color_n = 0.0;
  double near_se = 0.0, near_n = 0.0, far_se = 0.0, far_n = 0.0;
  double sem_ok = 0.0, sem_n = 0.0;
  std::vector<DetectionSet> detections;
  std::vector<std::vector<Box3D>> ground_truth;

  for (std::size_t s = 0; s < caches_.size(); ++s) {
    SceneCache& c = caches_[s];
    const double midpoint = 0.5 * (c.ds.z_min() + c.ds.z_max());
    std::vector<ViewMaps> rendered(c.heldout_views.size());
    std::optional<FeatureVolume> volume;
    if (!oracle_bypass) volume = eval_volume(c);

    if (oracle_bypass) {
      for (std::size_t vi = 0; vi < c.heldout_views.size(); ++vi) {
        int v = c.heldout_views[vi];
        const CameraIntrinsics& cam = c.scene.views[v].cam;
        ViewMaps maps;
        maps.width = cam.width;
        maps.height = cam.height;
        maps.n_classes = cfg_.model.sem_width();
        maps.color = c.color_maps[v].data;
        maps.depth = c.depth_maps[v];
        maps.label = c.sem_eval[v];
        maps.sem_probs.assign(std::size_t(cam.width) * cam.height * maps.n_classes, 0.0);
        for (std::size_t p = 0; p < maps.label.size(); ++p)
          maps.sem_probs[p * maps.n_classes + maps.label[p]] = 1.0;
        maps.weight_sum.assign(std::size_t(cam.width) * cam.height, 1.0);
        rendered[vi] = std::move(maps);
      }
    } else {
      ModelField coarse_field(model_, store_, *volume, false);
      ModelField fine_field(model_, store_, *volume, true);
      const SampleField* fine_ptr =
          cfg_.fine_enabled && cfg_.fine_samples > 0 ? &fine_field : nullptr;
      RenderConfig rc;
      rc.coarse_samples = cfg_.coarse_samples;
      rc.fine_samples = cfg_.fine_enabled ? cfg_.fine_samples : 0;
      rc.background = c.scene.background;
      rc.background_class = c.scene.background_label();
      rc.jitter = nullptr;

      auto render_one = [&](std::size_t vi) {
        int v = c.heldout_views[vi];
        rendered[vi] = render_view(coarse_field, fine_ptr, c.scene.views[v].cam,
                                   c.scene.views[v].pose, c.ds, rc);
      };
      int n_threads = std::max(1, cfg_.threads);
      if (n_threads == 1 || rendered.size() <= 1) {
        for (std::size_t vi = 0; vi < rendered.size(); ++vi) render_one(vi);
      } else {
        std::vector<std::thread> pool;
        std::size_t chunk =
            (rendered.size() + std::size_t(n_threads) - 1) / std::size_t(n_threads);
        for (int t = 0; t < n_threads; ++t) {
          std::size_t lo = std::size_t(t) * chunk;
          std::size_t hi = std::min(rendered.size(), lo + chunk);
          if (lo >= hi) break;
          pool.emplace_back([&, lo, hi]() {
            for (std::size_t vi = lo; vi < hi; ++vi) render_one(vi);
          });
        }
        for (auto& th : pool) th.join();
      }
    }

    for (std::size_t vi = 0; vi < c.heldout_views.size(); ++vi) {
      int v = c.heldout_views[vi];
      const ViewMaps& maps = rendered[vi];
      const Image& gt_img = c.color_maps[v];
      const std::vector<double>& gt_d = c.depth_maps[v];
      const std::vector<int>& gt_l = c.sem_eval[v];
      for (std::size_t k = 0; k < maps.color.size(); ++k) {
        double e = maps.color[k] - gt_img.data[k];
        color_se += e * e;
        color_n += 1.0;
      }
      for (std::size_t p = 0; p < maps.depth.size(); ++p) {
        double e = maps.depth[p] - gt_d[p];
        if (gt_d[p] < midpoint) {
          near_se += e * e;
          near_n += 1.0;
        } else {
          far_se += e * e;
          far_n += 1.0;
        }
        sem_ok += maps.label[p] == gt_l[p] ? 1.0 : 0.0;
        sem_n += 1.0;
      }
      if (!dump_dir.empty())
        dump_view_maps(dump_dir, int(s), v, maps, gt_img, gt_d, gt_l);
    }

    std::vector<Box3D> gt;
    for (const LabeledBox& lb : c.scene.boxes) gt.push_back(lb.box);
    ground_truth.push_back(gt);

    DetectionSet dets;
    dets.scene_id = int(s);
    if (oracle_bypass) {
      dets.boxes = gt;
      for (Box3D& b : dets.boxes) b.score = 1.0;
    } else {
      Tensor head = model_.det_head_values(store_, *volume);
      dets.boxes = decode_head_output(head, c.grid, cfg_.model.n_classes,
                                      cfg_.det_score_threshold);
    }
    dets = nms(dets, cfg_.nms_iou);
    if (!dump_dir.empty()) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "/dets_s%02d.txt", int(s));
      save_detections(dets, dump_dir + buf);
      DetectionSet gt_set;
      gt_set.scene_id = int(s);
      gt_set.boxes = gt;
      std::snprintf(buf, sizeof(buf), "/gts_s%02d.txt", int(s));
      save_detections(gt_set, dump_dir + buf);
    }
    detections.push_back(std::move(dets));
  }

  Metrics m;
  double mse = color_n > 0.0 ? color_se / color_n : 0.0;
  m.psnr = mse <= 0.0 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / mse));
  m.depth_rmse_near = near_n > 0.0 ? std::sqrt(near_se / near_n) : 0.0;
  m.depth_rmse_far = far_n > 0.0 ? std::sqrt(far_se / far_n) : 0.0;
  m.sem_acc = sem_n > 0.0 ? sem_ok / sem_n : 0.0;
  ApResult r25 = evaluate_map(detections, ground_truth, 0.25);
  ApResult r50 = evaluate_map(detections, ground_truth, 0.5);
  m.map_defined = r25.defined;
  m.map25 = r25.map;
  m.map50 = r50.map;
  return m;
}

std::string Metrics::to_text() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "raydet-metrics 1\npsnr %.17g\ndepth_rmse_near %.17g\n"
                "depth_rmse_far %.17g\nsem_acc %.17g\nmap25 %.17g\nmap50 %.17g\n"
                "map_defined %d\n",
                psnr, depth_rmse_near, depth_rmse_far, sem_acc, map25, map50,
                map_defined ? 1 : 0);
  return std::string(buf);
}

void Trainer::save_checkpoint(const std::string& path) const {
  nn::Checkpoint ck;
  ck.f64 = store_.all();
  for (const auto& [name, v] : opt_.velocities()) ck.f64["opt." + name] = v;
  Tensor sums(7, 1);
  for (int i = 0; i < 6; ++i) sums.data[i] = loss_sums_[i];
  sums.data[6] = loss_count_;
  ck.f64["meta.loss_sums"] = sums;
  ck.u64["meta.iteration"] = {std::uint64_t(iteration_)};
  ck.u64["meta.rng"] = {rng_.base(), rng_.counter()};
  ck.save(path);
}

void Trainer::load_checkpoint(const std::string& path) {
  nn::Checkpoint ck = nn::Checkpoint::load(path);
  for (auto& [name, t] : ck.f64) {
    if (name.rfind("opt.", 0) == 0) {
      opt_.velocities()[name.substr(4)] = t;
    } else if (name == "meta.loss_sums") {
      for (int i = 0; i < 6; ++i) loss_sums_[i] = t.data[i];
      loss_count_ = t.data[6];
    } else {
      Tensor& dst = store_.value(name);
      if (!dst.same_shape(t))
        throw io_error("checkpoint shape mismatch for " + name);
      dst = t;
    }
  }
  auto it = ck.u64.find("meta.iteration");
  if (it != ck.u64.end()) iteration_ = int(it->second.at(0));
  it = ck.u64.find("meta.rng");
  if (it != ck.u64.end()) rng_.restore(it->second.at(0), it->second.at(1));
}

}  // namespace raydet
