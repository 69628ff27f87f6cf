#pragma once

#include <array>
#include <filesystem>

#include "tryon/tensor.hpp"

namespace tryon {

// Keypoint order (13):
//   0 head, 1 neck, 2 l_shoulder, 3 r_shoulder, 4 l_elbow, 5 r_elbow,
//   6 l_wrist, 7 r_wrist, 8 hip_center, 9 l_knee, 10 r_knee,
//   11 l_ankle, 12 r_ankle
struct PoseSequence {
  static constexpr int kNumKeypoints = 13;

  int frames = 0;
  std::vector<std::array<double, 2>> coords;  // [frames*K], (x, y) in [0,1]
  std::vector<uint8_t> visible;               // [frames*K]

  static const std::array<const char*, kNumKeypoints>& keypoint_names();

  std::array<double, 2> at(int frame, int kp) const {
    return coords[static_cast<size_t>(frame) * kNumKeypoints + static_cast<size_t>(kp)];
  }
  bool is_visible(int frame, int kp) const {
    return visible[static_cast<size_t>(frame) * kNumKeypoints + static_cast<size_t>(kp)] != 0;
  }
  void validate() const;
};

// Limbs in fixed order: left arm (shoulder-elbow-wrist), right arm,
// left leg (hip-knee-ankle), right leg. A config with L < 4 takes a prefix.
const std::vector<std::vector<int>>& limb_chains();
// Full skeleton edge list used for pose map rendering.
const std::vector<std::pair<int, int>>& skeleton_edges();

// Boolean limb token mask [L, f, s] over the (gh x gw) patch grid. Each
// visible limb segment is rasterized with a supercover walk (every cell whose
// closed unit square the segment touches), then dilated by a Chebyshev
// radius. Invisible endpoints skip their segment.
std::vector<uint8_t> rasterize_limb_masks(const PoseSequence& pose, int gh, int gw, int radius,
                                          int L);

// Gathered limb token bookkeeping. indices are flat (frame * s + token) in
// (frame, token) order; slots past counts[l] are padding. The additive
// attention mask blocks any row or column that touches a padded slot.
struct LimbGather {
  int L = 0, f = 0, s = 0, n = 0;
  std::vector<uint8_t> mask;                    // S_l [L,f,s]
  std::vector<std::vector<int64_t>> indices;    // per limb, kept entries only
  std::vector<int> counts;                      // kept entries per limb
  std::vector<int> raw_counts;                  // true entries before truncation

  Tensor attention_mask(DType dt) const;        // [L,n,n] of {0, blocked}
  std::vector<int64_t> flat_index_table() const;  // [L*n], -1 on padding
};

// n = min(max count, n_cap), at least 1. Limbs over n_cap keep exactly n
// entries chosen by uniform temporal stride over their (frame, token) order.
LimbGather build_limb_gather(const std::vector<uint8_t>& S, int L, int f, int s, int n_cap);

// Skeleton drawn as value-1.0 lines on a zero background, [f,h,w,1].
Tensor render_pose_map(const PoseSequence& pose, int h, int w, DType dt);

void save_pose_json(const std::filesystem::path& path, const PoseSequence& pose);
PoseSequence load_pose_json(const std::filesystem::path& path);

}  // namespace tryon
