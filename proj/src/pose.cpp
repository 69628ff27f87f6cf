#include "tryon/pose.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "tryon/io.hpp"
#include "tryon/ops.hpp"

namespace tryon {

const std::array<const char*, PoseSequence::kNumKeypoints>& PoseSequence::keypoint_names() {
  static const std::array<const char*, kNumKeypoints> names = {
      "head",    "neck",   "l_shoulder", "r_shoulder", "l_elbow",  "r_elbow", "l_wrist",
      "r_wrist", "hip_center", "l_knee", "r_knee",     "l_ankle",  "r_ankle"};
  return names;
}

void PoseSequence::validate() const {
  if (frames < 1) throw ConfigError("pose: frames must be >= 1");
  const size_t expect = static_cast<size_t>(frames) * kNumKeypoints;
  if (coords.size() != expect || visible.size() != expect)
    throw ConfigError("pose: coords/visible size mismatch");
  for (int fr = 0; fr < frames; ++fr)
    for (int k = 0; k < kNumKeypoints; ++k) {
      if (!is_visible(fr, k)) continue;
      const auto c = at(fr, k);
      if (c[0] < 0.0 || c[0] > 1.0 || c[1] < 0.0 || c[1] > 1.0)
        throw ConfigError("pose: visible keypoint outside [0,1]");
    }
}

const std::vector<std::vector<int>>& limb_chains() {
  static const std::vector<std::vector<int>> chains = {
      {2, 4, 6},   // left arm
      {3, 5, 7},   // right arm
      {8, 9, 11},  // left leg
      {8, 10, 12}, // right leg
  };
  return chains;
}

const std::vector<std::pair<int, int>>& skeleton_edges() {
  static const std::vector<std::pair<int, int>> edges = {
      {0, 1}, {1, 2}, {1, 3}, {2, 4}, {4, 6}, {3, 5},
      {5, 7}, {1, 8}, {8, 9}, {9, 11}, {8, 10}, {10, 12}};
  return edges;
}

namespace {

// Marks every cell of a (gh x gw) grid whose closed unit square the segment
// touches: column slabs first, then the row interval of the clipped segment
// per slab, with integer boundaries owned by both neighbors.
template <class MarkFn>
void supercover_segment(double ax, double ay, double bx, double by, int gh, int gw, MarkFn mark) {
  if (ax > bx) {
    std::swap(ax, bx);
    std::swap(ay, by);
  }
  auto lo_cell = [](double v) {
    const double fl = std::floor(v);
    return fl == v ? static_cast<int64_t>(fl) - 1 : static_cast<int64_t>(fl);
  };
  const int64_t c0 = std::max<int64_t>(0, lo_cell(ax));
  const int64_t c1 = std::min<int64_t>(gw - 1, static_cast<int64_t>(std::floor(bx)));
  const double dx = bx - ax;
  for (int64_t c = c0; c <= c1; ++c) {
    const double xl = std::max(ax, static_cast<double>(c));
    const double xr = std::min(bx, static_cast<double>(c + 1));
    if (xl > xr) continue;
    double y0 = ay, y1 = by;
    if (dx > 0.0) {
      y0 = ay + (by - ay) * ((xl - ax) / dx);
      y1 = ay + (by - ay) * ((xr - ax) / dx);
    }
    const double ylo = std::min(y0, y1);
    const double yhi = std::max(y0, y1);
    const int64_t r0 = std::max<int64_t>(0, lo_cell(ylo));
    const int64_t r1 = std::min<int64_t>(gh - 1, static_cast<int64_t>(std::floor(yhi)));
    for (int64_t r = r0; r <= r1; ++r) mark(static_cast<int>(r), static_cast<int>(c));
  }
}

}  // namespace

std::vector<uint8_t> rasterize_limb_masks(const PoseSequence& pose, int gh, int gw, int radius,
                                          int L) {
  pose.validate();
  if (radius < 0) throw ConfigError("rasterize_limb_masks: radius must be >= 0");
  const auto& chains = limb_chains();
  if (L < 1 || L > static_cast<int>(chains.size()))
    throw ConfigError("rasterize_limb_masks: L out of range");
  const int f = pose.frames;
  const int64_t s = static_cast<int64_t>(gh) * gw;
  std::vector<uint8_t> out(static_cast<size_t>(L) * f * s, 0);

  for (int l = 0; l < L; ++l) {
    const auto& chain = chains[static_cast<size_t>(l)];
    for (int kp : chain)
      if (kp < 0 || kp >= PoseSequence::kNumKeypoints)
        throw ConfigError("rasterize_limb_masks: keypoint index out of range");
    for (int fr = 0; fr < f; ++fr) {
      std::vector<uint8_t> base(static_cast<size_t>(s), 0);
      auto mark = [&](int r, int c) { base[static_cast<size_t>(r) * gw + c] = 1; };
      for (size_t e = 0; e + 1 < chain.size(); ++e) {
        const int ka = chain[e], kb = chain[e + 1];
        if (!pose.is_visible(fr, ka) || !pose.is_visible(fr, kb)) continue;
        const auto a = pose.at(fr, ka);
        const auto b = pose.at(fr, kb);
        supercover_segment(a[0] * gw, a[1] * gh, b[0] * gw, b[1] * gh, gh, gw, mark);
      }
      uint8_t* dst = out.data() + (static_cast<size_t>(l) * f + fr) * s;
      if (radius == 0) {
        std::copy(base.begin(), base.end(), dst);
      } else {
        for (int r = 0; r < gh; ++r)
          for (int c = 0; c < gw; ++c) {
            if (!base[static_cast<size_t>(r) * gw + c]) continue;
            for (int rr = std::max(0, r - radius); rr <= std::min(gh - 1, r + radius); ++rr)
              for (int cc = std::max(0, c - radius); cc <= std::min(gw - 1, c + radius); ++cc)
                dst[static_cast<size_t>(rr) * gw + cc] = 1;
          }
      }
    }
  }
  return out;
}

LimbGather build_limb_gather(const std::vector<uint8_t>& S, int L, int f, int s, int n_cap) {
  if (n_cap < 1) throw ConfigError("build_limb_gather: n_cap must be >= 1");
  if (S.size() != static_cast<size_t>(L) * f * s)
    throw ConfigError("build_limb_gather: mask size mismatch");
  LimbGather g;
  g.L = L;
  g.f = f;
  g.s = s;
  g.mask = S;
  g.indices.resize(static_cast<size_t>(L));
  g.counts.resize(static_cast<size_t>(L));
  g.raw_counts.resize(static_cast<size_t>(L));

  std::vector<std::vector<int64_t>> full(static_cast<size_t>(L));
  int max_count = 0;
  for (int l = 0; l < L; ++l) {
    auto& list = full[static_cast<size_t>(l)];
    for (int64_t fr = 0; fr < f; ++fr)
      for (int64_t t = 0; t < s; ++t)
        if (S[(static_cast<size_t>(l) * f + fr) * s + t]) list.push_back(fr * s + t);
    g.raw_counts[static_cast<size_t>(l)] = static_cast<int>(list.size());
    max_count = std::max(max_count, static_cast<int>(list.size()));
  }
  g.n = std::max(1, std::min(max_count, n_cap));
  for (int l = 0; l < L; ++l) {
    auto& list = full[static_cast<size_t>(l)];
    auto& kept = g.indices[static_cast<size_t>(l)];
    const int64_t count = static_cast<int64_t>(list.size());
    if (count <= g.n) {
      kept = std::move(list);
    } else {
      // uniform temporal stride keeping exactly n entries
      kept.reserve(static_cast<size_t>(g.n));
      for (int64_t j = 0; j < g.n; ++j)
        kept.push_back(list[static_cast<size_t>(j * count / g.n)]);
    }
    g.counts[static_cast<size_t>(l)] = static_cast<int>(kept.size());
  }
  return g;
}

Tensor LimbGather::attention_mask(DType dt) const {
  Tensor m = Tensor::zeros({L, n, n}, dt);
  auto& im = m.impl();
  for (int l = 0; l < L; ++l) {
    const int c = counts[static_cast<size_t>(l)];
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j)
        if (i >= c || j >= c)
          im.set((static_cast<int64_t>(l) * n + i) * n + j, kMaskBlocked);
  }
  return m;
}

std::vector<int64_t> LimbGather::flat_index_table() const {
  std::vector<int64_t> table(static_cast<size_t>(L) * n, -1);
  for (int l = 0; l < L; ++l)
    for (size_t j = 0; j < indices[static_cast<size_t>(l)].size(); ++j)
      table[static_cast<size_t>(l) * n + j] = indices[static_cast<size_t>(l)][j];
  return table;
}

Tensor render_pose_map(const PoseSequence& pose, int h, int w, DType dt) {
  pose.validate();
  Tensor out = Tensor::zeros({pose.frames, h, w, 1}, dt);
  auto& im = out.impl();
  for (int fr = 0; fr < pose.frames; ++fr) {
    auto mark = [&](int r, int c) {
      im.set((static_cast<int64_t>(fr) * h + r) * w + c, 1.0);
    };
    for (const auto& [ka, kb] : skeleton_edges()) {
      if (!pose.is_visible(fr, ka) || !pose.is_visible(fr, kb)) continue;
      const auto a = pose.at(fr, ka);
      const auto b = pose.at(fr, kb);
      supercover_segment(a[0] * w, a[1] * h, b[0] * w, b[1] * h, h, w, mark);
    }
  }
  return out;
}

void save_pose_json(const std::filesystem::path& path, const PoseSequence& pose) {
  nlohmann::json j;
  j["frames"] = pose.frames;
  j["keypoint_order"] = nlohmann::json::array();
  for (const char* n : PoseSequence::keypoint_names()) j["keypoint_order"].push_back(n);
  auto coords = nlohmann::json::array();
  auto vis = nlohmann::json::array();
  for (int fr = 0; fr < pose.frames; ++fr) {
    auto cf = nlohmann::json::array();
    auto vf = nlohmann::json::array();
    for (int k = 0; k < PoseSequence::kNumKeypoints; ++k) {
      const auto c = pose.at(fr, k);
      cf.push_back({c[0], c[1]});
      vf.push_back(pose.is_visible(fr, k));
    }
    coords.push_back(cf);
    vis.push_back(vf);
  }
  j["coords"] = coords;
  j["visible"] = vis;
  write_text_file(path, j.dump(2) + "\n");
}

PoseSequence load_pose_json(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("pose json parse failed: " + std::string(e.what()));
  }
  PoseSequence pose;
  pose.frames = j.at("frames").get<int>();
  const auto& coords = j.at("coords");
  const auto& vis = j.at("visible");
  for (int fr = 0; fr < pose.frames; ++fr)
    for (int k = 0; k < PoseSequence::kNumKeypoints; ++k) {
      const auto& c = coords.at(fr).at(k);
      pose.coords.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
      pose.visible.push_back(vis.at(fr).at(k).get<bool>() ? 1 : 0);
    }
  pose.validate();
  return pose;
}

}  // namespace tryon
