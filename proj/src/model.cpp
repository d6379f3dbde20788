#include "raydet/model.hpp"

#include <cmath>
#include <numeric>

namespace raydet {

namespace {

nn::MlpConfig head_cfg(int in, int hidden, int layers, int out,
                       nn::OutputActivation act) {
  nn::MlpConfig c;
  c.input_width = in;
  c.hidden_widths.assign(std::size_t(layers), hidden);
  c.output_width = out;
  c.output = act;
  return c;
}

}  // namespace

Model::Model(const ModelConfig& cfg)
    : cfg_(cfg),
      extractor_{"ext", 3, cfg.feat_channels},
      coarse_g_("coarse.g",
                head_cfg(cfg.pe_x_width() + cfg.feat_channels, cfg.hidden,
                         cfg.hidden_layers, 1 + cfg.h_dim, nn::OutputActivation::None)),
      coarse_c_("coarse.c",
                head_cfg(cfg.h_dim + cfg.pe_d_width(), cfg.hidden, cfg.hidden_layers, 3,
                         nn::OutputActivation::Sigmoid)),
      coarse_s_("coarse.s",
                head_cfg(cfg.pe_x_width() + cfg.pe_d_width() + cfg.h_dim, cfg.hidden,
                         cfg.hidden_layers, cfg.sem_width(), nn::OutputActivation::None)),
      fine_g_("fine.g",
              head_cfg(cfg.pe_x_width() + cfg.feat_channels, cfg.hidden,
                       cfg.hidden_layers, 1 + cfg.h_dim, nn::OutputActivation::None)),
      fine_c_("fine.c",
              head_cfg(cfg.h_dim + cfg.pe_d_width(), cfg.hidden, cfg.hidden_layers, 3,
                       nn::OutputActivation::Sigmoid)),
      fine_s_("fine.s",
              head_cfg(cfg.pe_x_width() + cfg.pe_d_width() + cfg.h_dim, cfg.hidden,
                       cfg.hidden_layers, cfg.sem_width(), nn::OutputActivation::None)),
      det_head_("det",
                head_cfg(cfg.feat_channels, cfg.det_hidden, 1, cfg.sem_width() + 6,
                         nn::OutputActivation::None)) {}

void Model::ensure_params(nn::ParamStore& store) const {
  const bool fresh = !store.has("coarse.g.w0");
  extractor_.ensure_params(store);
  coarse_g_.ensure_params(store);
  coarse_c_.ensure_params(store);
  coarse_s_.ensure_params(store);
  fine_g_.ensure_params(store);
  fine_c_.ensure_params(store);
  fine_s_.ensure_params(store);
  det_head_.ensure_params(store);
  if (fresh && cfg_.sigma_bias != 0.0) {
    std::string last_bias = ".b" + std::to_string(cfg_.hidden_layers);
    store.value("coarse.g" + last_bias).data[0] = cfg_.sigma_bias;
    store.value("fine.g" + last_bias).data[0] = cfg_.sigma_bias;
  }
}

GridSpec Model::grid_for_room(const Aabb& room) const {
  GridSpec g;
  g.nx = cfg_.grid_nx;
  g.ny = cfg_.grid_ny;
  g.nz = cfg_.grid_nz;
  g.edge = cfg_.voxel_edge;
  Vec3 size{g.nx * g.edge, g.ny * g.edge, g.nz * g.edge};
  g.origin = room.center() - size * 0.5;
  return g;
}

HeadNodes Model::build_heads(nn::Tape& tape, nn::ParamStore& store, nn::NodeId pe_x,
                             nn::NodeId pe_d, nn::NodeId feat, bool fine) const {
  HeadNodes h;
  nn::NodeId g_in = tape.concat_rows({pe_x, feat});
  nn::NodeId g_out = phi_g(fine).apply(tape, store, g_in);
  h.sigma = tape.softplus(tape.slice_rows(g_out, 0, 1));
  h.hidden = tape.slice_rows(g_out, 1, cfg_.h_dim);
  h.color = phi_c(fine).apply(tape, store, tape.concat_rows({h.hidden, pe_d}));
  h.sem_logits =
      phi_s(fine).apply(tape, store, tape.concat_rows({pe_x, pe_d, h.hidden}));
  return h;
}

nn::NodeId Model::build_volume(nn::Tape& tape, nn::ParamStore& store,
                               const std::vector<Tensor>& patch_tables,
                               const BackprojectTable& table, int n_voxels) const {
  const std::string& p = extractor_.prefix;
  nn::NodeId w0 = tape.param(store.value(p + ".conv0"), &store.grad(p + ".conv0"));
  nn::NodeId b0 = tape.param(store.value(p + ".bias0"), &store.grad(p + ".bias0"));
  nn::NodeId w1 = tape.param(store.value(p + ".conv1"), &store.grad(p + ".conv1"));
  nn::NodeId b1 = tape.param(store.value(p + ".bias1"), &store.grad(p + ".bias1"));
  std::vector<nn::NodeId> maps;
  for (const Tensor& patches : patch_tables) {
    nn::NodeId x = tape.input(patches);
    nn::NodeId h = tape.relu(tape.add_bias(tape.linear(w0, x), b0));
    maps.push_back(tape.add_bias(tape.linear(w1, h), b1));
  }
  return tape.backproject_taps(maps, table.taps, n_voxels);
}

nn::NodeId Model::build_det_head(nn::Tape& tape, nn::ParamStore& store,
                                 nn::NodeId volume, const std::vector<int>& voxels,
                                 const Tensor& voxel_pe, double voxel_edge) const {
  nn::NodeId feat = tape.gather_cols(volume, voxels);
  nn::NodeId pe = tape.input(voxel_pe);
  nn::NodeId g_out = phi_g(false).apply(tape, store, tape.concat_rows({pe, feat}));
  nn::NodeId sigma = tape.softplus(tape.slice_rows(g_out, 0, 1));
  Tensor edge(1, int(voxels.size()));
  edge.fill(voxel_edge);
  nn::NodeId alpha = tape.alpha_from_sigma(sigma, std::move(edge));
  nn::NodeId gated = tape.mul_cols(feat, alpha);
  return det_head_.apply(tape, store, gated);
}

FeatureVolume Model::compute_volume(nn::ParamStore& store,
                                    const std::vector<Image>& images,
                                    const std::vector<CameraIntrinsics>& cams,
                                    const std::vector<Pose>& poses,
                                    const GridSpec& grid) const {
  std::vector<FeatureMap> maps;
  for (const Image& img : images) maps.push_back(extract_features(img, extractor_, store));
  return backproject(maps, cams, poses, grid);
}

double Model::opacity_at(nn::ParamStore& store, const FeatureVolume& volume,
                         const Vec3& point) const {
  nn::Tape tape;
  double p[3] = {point.x, point.y, point.z};
  double d[3] = {0, 0, 1};
  Tensor pe_x = nn::positional_encode_cols(p, 3, 1, cfg_.pe_x);
  Tensor pe_d = nn::positional_encode_cols(d, 3, 1, cfg_.pe_d);
  Tensor feat(cfg_.feat_channels, 1);
  std::vector<double> f = trilinear_sample(volume, point);
  for (int c = 0; c < cfg_.feat_channels; ++c) feat.at(c, 0) = f[c];
  nn::NodeId g_in = tape.concat_rows({tape.input(pe_x), tape.input(feat)});
  (void)pe_d;
  nn::NodeId g_out = phi_g(false).apply(tape, store, g_in);
  double sigma_raw = tape.value(g_out).at(0, 0);
  double sigma = sigma_raw > 30.0 ? sigma_raw : std::log1p(std::exp(sigma_raw));
  return opacity_from_sigma(sigma, volume.grid.edge);
}

FeatureVolume Model::gate_volume(nn::ParamStore& store,
                                 const FeatureVolume& volume) const {
  const int nv = volume.grid.n_voxels();
  nn::Tape tape;
  std::vector<double> centers(std::size_t(nv) * 3);
  for (int v = 0; v < nv; ++v) {
    Vec3 c = volume.grid.center(v);
    centers[v * 3 + 0] = c.x;
    centers[v * 3 + 1] = c.y;
    centers[v * 3 + 2] = c.z;
  }
  Tensor pe = nn::positional_encode_cols(centers.data(), 3, nv, cfg_.pe_x);
  nn::NodeId feat = tape.input(volume.features);
  nn::NodeId g_out =
      phi_g(false).apply(tape, store, tape.concat_rows({tape.input(pe), feat}));
  nn::NodeId sigma = tape.softplus(tape.slice_rows(g_out, 0, 1));
  Tensor edge(1, nv);
  edge.fill(volume.grid.edge);
  nn::NodeId alpha = tape.alpha_from_sigma(sigma, std::move(edge));
  nn::NodeId gated = tape.mul_cols(feat, alpha);
  FeatureVolume out = volume;
  out.features = tape.value(gated);
  return out;
}

Tensor Model::det_head_values(nn::ParamStore& store, const FeatureVolume& volume) const {
  const int nv = volume.grid.n_voxels();
  std::vector<int> all(nv);
  std::iota(all.begin(), all.end(), 0);
  std::vector<double> centers(std::size_t(nv) * 3);
  for (int v = 0; v < nv; ++v) {
    Vec3 c = volume.grid.center(v);
    centers[v * 3 + 0] = c.x;
    centers[v * 3 + 1] = c.y;
    centers[v * 3 + 2] = c.z;
  }
  Tensor pe = nn::positional_encode_cols(centers.data(), 3, nv, cfg_.pe_x);
  nn::Tape tape;
  nn::NodeId vol = tape.input(volume.features);
  nn::NodeId out = build_det_head(tape, store, vol, all, pe, volume.grid.edge);
  return tape.value(out);
}

void ModelField::evaluate(const double* points, const double* dirs, int count,
                          SampleOutput* out) const {
  if (count == 0) return;
  const ModelConfig& cfg = model_.config();
  nn::Tape tape;
  Tensor pe_x = nn::positional_encode_cols(points, 3, count, cfg.pe_x);
  Tensor pe_d = nn::positional_encode_cols(dirs, 3, count, cfg.pe_d);
  std::vector<std::array<nn::Tape::Tap, 8>> taps(count);
  for (int i = 0; i < count; ++i)
    taps[i] = trilinear_taps(volume_.grid,
                             Vec3{points[i * 3], points[i * 3 + 1], points[i * 3 + 2]});
  nn::NodeId vol = tape.input(volume_.features);
  nn::NodeId feat = tape.gather_taps(vol, std::move(taps));
  HeadNodes heads = model_.build_heads(tape, store_, tape.input(std::move(pe_x)),
                                       tape.input(std::move(pe_d)), feat, fine_);
  const Tensor& sigma = tape.value(heads.sigma);
  const Tensor& hidden = tape.value(heads.hidden);
  const Tensor& color = tape.value(heads.color);
  const Tensor& logits = tape.value(heads.sem_logits);
  for (int i = 0; i < count; ++i) {
    out[i].sigma = sigma.at(0, i);
    out[i].color = {color.at(0, i), color.at(1, i), color.at(2, i)};
    out[i].semantic_logits.assign(logits.col(i), logits.col(i) + logits.rows);
    out[i].hidden.assign(hidden.col(i), hidden.col(i) + hidden.rows);
  }
}

void AnalyticBoxField::evaluate(const double* points, const double* dirs, int count,
                                SampleOutput* out) const {
  (void)dirs;
  const int k = scene_.n_classes + 1;
  for (int i = 0; i < count; ++i) {
    Vec3 p{points[i * 3], points[i * 3 + 1], points[i * 3 + 2]};
    out[i].sigma = 0.0;
    out[i].color = scene_.background;
    out[i].semantic_logits.assign(std::size_t(k), 0.0);
    out[i].semantic_logits[scene_.n_classes] = 20.0;  // background
    for (const LabeledBox& lb : scene_.boxes) {
      if (!lb.box.aabb().contains(p)) continue;
      out[i].sigma = sigma_;
      out[i].color = lb.color;
      out[i].semantic_logits.assign(std::size_t(k), 0.0);
      out[i].semantic_logits[lb.box.cls] = 20.0;
      break;
    }
  }
}

}  // namespace raydet
