#include "raydet/detect.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "raydet/errors.hpp"

namespace raydet {

double iou_aabb(const Box3D& a, const Box3D& b) {
  Aabb A = a.aabb(), B = b.aabb();
  double inter = 1.0;
  for (int i = 0; i < 3; ++i) {
    double lo = std::max(A.lo[i], B.lo[i]);
    double hi = std::min(A.hi[i], B.hi[i]);
    if (hi <= lo) return 0.0;
    inter *= hi - lo;
  }
  double va = a.size.x * a.size.y * a.size.z;
  double vb = b.size.x * b.size.y * b.size.z;
  return inter / (va + vb - inter);
}

DetectionSet nms(const DetectionSet& dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    throw std::invalid_argument("nms: threshold must be in (0,1)");
  std::vector<int> order(dets.boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets.boxes[a].score > dets.boxes[b].score;
  });
  DetectionSet out;
  out.scene_id = dets.scene_id;
  for (int i : order) {
    const Box3D& cand = dets.boxes[i];
    bool keep = true;
    for (const Box3D& kept : out.boxes) {
      if (kept.cls != cand.cls) continue;
      if (iou_aabb(kept, cand) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) out.boxes.push_back(cand);
  }
  return out;
}

VoxelTargets assign_voxel_targets(const std::vector<Box3D>& gt, const GridSpec& grid,
                                  int n_classes) {
  const int nv = grid.n_voxels();
  VoxelTargets t;
  t.cls.assign(nv, n_classes);  // background
  t.center_offset.assign(std::size_t(nv) * 3, 0.0);
  t.log_size.assign(std::size_t(nv) * 3, 0.0);
  for (int v = 0; v < nv; ++v) {
    Vec3 c = grid.center(v);
    int best = -1;
    double best_vol = 0.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (!gt[g].aabb().contains(c)) continue;
      double vol = gt[g].size.x * gt[g].size.y * gt[g].size.z;
      if (best < 0 || vol < best_vol ||
          (vol == best_vol && gt[g].cls < gt[best].cls)) {
        best = int(g);
        best_vol = vol;
      }
    }
    if (best < 0) continue;
    t.cls[v] = gt[best].cls;
    t.positives.push_back(v);
    for (int i = 0; i < 3; ++i) {
      t.center_offset[std::size_t(v) * 3 + i] = (gt[best].center[i] - c[i]) / grid.edge;
      t.log_size[std::size_t(v) * 3 + i] = std::log(gt[best].size[i]);
    }
  }
  return t;
}

std::vector<Box3D> decode_head_output(const Tensor& head_out, const GridSpec& grid,
                                      int n_classes, double score_threshold) {
  const int rows = n_classes + 1 + 6;
  if (head_out.rows != rows || head_out.cols != grid.n_voxels())
    throw std::invalid_argument("decode_head_output: shape mismatch");
  std::vector<Box3D> out;
  for (int v = 0; v < head_out.cols; ++v) {
    const double* col = head_out.col(v);
    double mx = col[0];
    for (int j = 1; j <= n_classes; ++j) mx = std::max(mx, col[j]);
    double denom = 0.0;
    for (int j = 0; j <= n_classes; ++j) denom += std::exp(col[j] - mx);
    int best = 0;
    double best_p = -1.0;
    for (int j = 0; j < n_classes; ++j) {  // background (index K) never decodes
      double p = std::exp(col[j] - mx) / denom;
      if (p > best_p) {
        best_p = p;
        best = j;
      }
    }
    if (best_p < score_threshold) continue;
    Vec3 c = grid.center(v);
    Box3D box;
    box.cls = best;
    box.score = best_p;
    for (int i = 0; i < 3; ++i) {
      box.center[i] = c[i] + col[n_classes + 1 + i] * grid.edge;
      box.size[i] = std::exp(col[n_classes + 4 + i]);
    }
    out.push_back(box);
  }
  return out;
}

ApResult evaluate_map(const std::vector<DetectionSet>& detections,
                      const std::vector<std::vector<Box3D>>& ground_truth,
                      double iou_threshold) {
  ApResult res;
  // classes present in GT and their counts
  std::map<int, int> gt_count;
  for (const auto& scene : ground_truth)
    for (const Box3D& b : scene) gt_count[b.cls]++;
  if (gt_count.empty()) return res;  // undefined, reported as such
  res.defined = true;

  struct Det {
    int scene;
    int index;
    double score;
    Box3D box;
  };
  for (const auto& [cls, n_gt] : gt_count) {
    std::vector<Det> dets;
    for (const auto& dset : detections) {
      if (dset.scene_id < 0 || dset.scene_id >= int(ground_truth.size()))
        throw std::invalid_argument("evaluate_map: scene id outside ground truth");
      for (std::size_t i = 0; i < dset.boxes.size(); ++i)
        if (dset.boxes[i].cls == cls)
          dets.push_back({dset.scene_id, int(i), dset.boxes[i].score, dset.boxes[i]});
    }
    std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.scene != b.scene) return a.scene < b.scene;
      return a.index < b.index;
    });

    // greedy matching in score order, best-IoU unmatched GT above threshold
    std::vector<std::vector<bool>> taken(ground_truth.size());
    for (std::size_t s = 0; s < ground_truth.size(); ++s)
      taken[s] = std::vector<bool>(ground_truth[s].size(), false);

    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (const Det& d : dets) {
      const auto& scene_gt = ground_truth[d.scene];
      int best_g = -1;
      double best_iou = iou_threshold;
      for (std::size_t g = 0; g < scene_gt.size(); ++g) {
        if (scene_gt[g].cls != cls || taken[d.scene][g]) continue;
        double iou = iou_aabb(d.box, scene_gt[g]);
        if (iou >= best_iou) {
          best_iou = iou;
          best_g = int(g);
        }
      }
      if (best_g >= 0) {
        taken[d.scene][best_g] = true;
        ++tp;
      } else {
        ++fp;
      }
      precision.push_back(double(tp) / double(tp + fp));
      recall.push_back(double(tp) / double(n_gt));
    }

    // all-point interpolation: area under the precision envelope
    std::vector<double> envelope(precision.size());
    double run = 0.0;
    for (std::size_t i = precision.size(); i-- > 0;) {
      run = std::max(run, precision[i]);
      envelope[i] = run;
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i) {
      ap += (recall[i] - prev_recall) * envelope[i];
      prev_recall = recall[i];
    }
    res.ap_per_class[cls] = ap;
  }
  double sum = 0.0;
  for (const auto& [cls, ap] : res.ap_per_class) sum += ap;
  res.map = sum / double(res.ap_per_class.size());
  return res;
}

void save_detections(const DetectionSet& dets, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw io_error("cannot write detections: " + path);
  os << "raydet-detections 1\n";
  os << "scene " << dets.scene_id << "\n";
  os << "count " << dets.boxes.size() << "\n";
  os.precision(17);
  for (const Box3D& b : dets.boxes) {
    os << "det " << b.center.x << " " << b.center.y << " " << b.center.z << " "
       << b.size.x << " " << b.size.y << " " << b.size.z << " " << b.cls << " "
       << b.score << "\n";
  }
  if (!os) throw io_error("detections write failed: " + path);
}

DetectionSet load_detections(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot read detections: " + path);
  std::string tag;
  int version = 0;
  is >> tag >> version;
  if (tag != "raydet-detections" || version != 1)
    throw io_error("bad detections header: " + path);
  DetectionSet out;
  std::size_t count = 0;
  is >> tag >> out.scene_id >> tag >> count;
  for (std::size_t i = 0; i < count; ++i) {
    Box3D b;
    is >> tag >> b.center.x >> b.center.y >> b.center.z >> b.size.x >> b.size.y >>
        b.size.z >> b.cls >> b.score;
    out.boxes.push_back(b);
  }
  if (!is) throw io_error("truncated detections: " + path);
  return out;
}

}  // namespace raydet
