#pragma once

#include <cstdint>
#include <tuple>
#include <vector>

#include "furpe/geometry.hpp"
#include "furpe/rng.hpp"

namespace furpe {

// Dimension preset for the layered body model. The full skeleton is the
// body tree plus a face subtree rooted at the body's neck joint and one
// hand subtree rooted at each wrist.
struct ModelDims {
  int body_joints = 12;   // includes the global root as joint 0
  int body_shape = 4;
  int face_joints = 2;
  int expression_dims = 6;
  int hand_joints = 5;
  int hand_shape = 2;
  int body_markers = 10;
  int face_markers = 8;
  int hand_markers = 4;   // per hand

  static ModelDims toy() { return ModelDims{}; }

  static ModelDims paper() {
    ModelDims d;
    d.body_joints = 24;
    d.body_shape = 10;
    d.face_joints = 4;
    d.expression_dims = 100;
    d.hand_joints = 21;
    d.hand_shape = 10;
    d.body_markers = 25;
    d.face_markers = 70;
    d.hand_markers = 21;
    return d;
  }

  int skeleton_joints() const { return body_joints + face_joints + 2 * hand_joints; }
  int shape_total() const { return body_shape + 2 * hand_shape; }
  int marker_total() const { return body_markers + face_markers + 2 * hand_markers; }

  int face_joint_begin() const { return body_joints; }
  int lhand_joint_begin() const { return body_joints + face_joints; }
  int rhand_joint_begin() const { return body_joints + face_joints + hand_joints; }

  // Packed full-body parameter vector layout:
  // [body pose | body shape | jaw pose | other face poses | expression |
  //  lhand pose | lhand shape | rhand pose | rhand shape | translation]
  int body_pose_offset() const { return 0; }
  int body_shape_offset() const { return 3 * body_joints; }
  int jaw_pose_offset() const { return body_shape_offset() + body_shape; }
  int face_other_offset() const { return jaw_pose_offset() + 3; }
  int expression_offset() const { return face_other_offset() + 3 * (face_joints - 1); }
  int lhand_pose_offset() const { return expression_offset() + expression_dims; }
  int lhand_shape_offset() const { return lhand_pose_offset() + 3 * hand_joints; }
  int rhand_pose_offset() const { return lhand_shape_offset() + hand_shape; }
  int rhand_shape_offset() const { return rhand_pose_offset() + 3 * hand_joints; }
  int translation_offset() const { return rhand_shape_offset() + hand_shape; }
  int param_count() const { return translation_offset() + 3; }

  void validate() const {
    if (body_joints < 4) throw ConfigError("ModelDims: body_joints must be >= 4");
    if (body_shape < 1 || face_joints < 1 || expression_dims < 1 ||
        hand_joints < 1 || hand_shape < 1) {
      throw ConfigError("ModelDims: all counts must be >= 1");
    }
    if (body_markers < 1 || face_markers < 1 || hand_markers < 1) {
      throw ConfigError("ModelDims: marker counts must be >= 1");
    }
  }

  bool operator==(const ModelDims&) const = default;
};

struct BodyParams {
  std::vector<AxisAngle> pose;  // body_joints entries, joint 0 = global root
  VecX shape;                   // body_shape
};

struct FaceParams {
  AxisAngle jaw_pose = AxisAngle::Zero();
  std::vector<AxisAngle> other_poses;  // face_joints - 1 entries: neck, eyes...
  VecX expression;                     // expression_dims
};

struct HandParams {
  std::vector<AxisAngle> pose;  // hand_joints entries, joint 0 = hand root
  VecX shape;                   // hand_shape
  Side side = Side::Left;
};

// Complete pose/shape/expression state of one subject.
struct FullBodyParams {
  BodyParams body;
  FaceParams face;
  HandParams left_hand;
  HandParams right_hand;
  Vec3 root_translation = Vec3::Zero();

  static FullBodyParams zero(const ModelDims& dims) {
    FullBodyParams p;
    p.body.pose.assign(dims.body_joints, AxisAngle::Zero());
    p.body.shape = VecX::Zero(dims.body_shape);
    p.face.other_poses.assign(dims.face_joints - 1, AxisAngle::Zero());
    p.face.expression = VecX::Zero(dims.expression_dims);
    p.left_hand.pose.assign(dims.hand_joints, AxisAngle::Zero());
    p.left_hand.shape = VecX::Zero(dims.hand_shape);
    p.left_hand.side = Side::Left;
    p.right_hand.pose.assign(dims.hand_joints, AxisAngle::Zero());
    p.right_hand.shape = VecX::Zero(dims.hand_shape);
    p.right_hand.side = Side::Right;
    return p;
  }

  VecX pack(const ModelDims& dims) const {
    check_dims(dims);
    VecX v(dims.param_count());
    int k = 0;
    for (const auto& aa : body.pose) { v.segment<3>(k) = aa; k += 3; }
    v.segment(k, dims.body_shape) = body.shape; k += dims.body_shape;
    v.segment<3>(k) = face.jaw_pose; k += 3;
    for (const auto& aa : face.other_poses) { v.segment<3>(k) = aa; k += 3; }
    v.segment(k, dims.expression_dims) = face.expression; k += dims.expression_dims;
    for (const auto& aa : left_hand.pose) { v.segment<3>(k) = aa; k += 3; }
    v.segment(k, dims.hand_shape) = left_hand.shape; k += dims.hand_shape;
    for (const auto& aa : right_hand.pose) { v.segment<3>(k) = aa; k += 3; }
    v.segment(k, dims.hand_shape) = right_hand.shape; k += dims.hand_shape;
    v.segment<3>(k) = root_translation; k += 3;
    return v;
  }

  static FullBodyParams unpack(const VecX& v, const ModelDims& dims) {
    if (v.size() != dims.param_count()) {
      throw ConfigError("FullBodyParams::unpack: vector length mismatch");
    }
    FullBodyParams p = zero(dims);
    int k = 0;
    for (auto& aa : p.body.pose) { aa = v.segment<3>(k); k += 3; }
    p.body.shape = v.segment(k, dims.body_shape); k += dims.body_shape;
    p.face.jaw_pose = v.segment<3>(k); k += 3;
    for (auto& aa : p.face.other_poses) { aa = v.segment<3>(k); k += 3; }
    p.face.expression = v.segment(k, dims.expression_dims); k += dims.expression_dims;
    for (auto& aa : p.left_hand.pose) { aa = v.segment<3>(k); k += 3; }
    p.left_hand.shape = v.segment(k, dims.hand_shape); k += dims.hand_shape;
    for (auto& aa : p.right_hand.pose) { aa = v.segment<3>(k); k += 3; }
    p.right_hand.shape = v.segment(k, dims.hand_shape); k += dims.hand_shape;
    p.root_translation = v.segment<3>(k);
    return p;
  }

  void check_dims(const ModelDims& dims) const {
    if (static_cast<int>(body.pose.size()) != dims.body_joints ||
        body.shape.size() != dims.body_shape ||
        static_cast<int>(face.other_poses.size()) != dims.face_joints - 1 ||
        face.expression.size() != dims.expression_dims ||
        static_cast<int>(left_hand.pose.size()) != dims.hand_joints ||
        left_hand.shape.size() != dims.hand_shape ||
        static_cast<int>(right_hand.pose.size()) != dims.hand_joints ||
        right_hand.shape.size() != dims.hand_shape) {
      throw ConfigError("FullBodyParams: dimensions do not match ModelDims");
    }
  }
};

inline std::tuple<BodyParams, FaceParams, HandParams, HandParams> split(
    const FullBodyParams& full) {
  return {full.body, full.face, full.left_hand, full.right_hand};
}

inline FullBodyParams merge(const BodyParams& body, const FaceParams& face,
                            const HandParams& lhand, const HandParams& rhand,
                            const Vec3& root_translation) {
  if (lhand.side != Side::Left || rhand.side != Side::Right) {
    throw std::invalid_argument("merge: hand sides must be left and right");
  }
  FullBodyParams full;
  full.body = body;
  full.face = face;
  full.left_hand = lhand;
  full.right_hand = rhand;
  full.root_translation = root_translation;
  return full;
}

// A landmark skinned to at most two joints; stands in for mesh vertices.
struct Marker {
  PartClass part = PartClass::Body;
  Side side = Side::None;        // set for hand markers
  int joints[2] = {0, 0};
  double weights[2] = {1.0, 0.0};
  int attach_count = 1;
  Vec3 rest_position = Vec3::Zero();  // at zero shape/expression
};

struct SkeletonTemplate {
  ModelDims dims;
  std::vector<int> parent;                     // parent[i] < i, parent[0] = -1
  std::vector<Vec3> rest_offset;               // offset from parent, meters
  std::vector<Eigen::Matrix3Xd> shape_basis;   // per joint, 3 x shape_total
  std::vector<Marker> markers;                 // body, face, lhand, rhand order
  std::vector<Eigen::Matrix3Xd> expression_basis;  // per face marker, 3 x expr dims
  uint64_t seed = 0;

  int joint_count() const { return static_cast<int>(parent.size()); }

  void validate() const {
    dims.validate();
    if (joint_count() != dims.skeleton_joints()) {
      throw ConfigError("SkeletonTemplate: joint count mismatch");
    }
    if (parent[0] != -1) throw ConfigError("SkeletonTemplate: joint 0 must be root");
    for (int i = 1; i < joint_count(); ++i) {
      if (parent[i] < 0 || parent[i] >= i) {
        throw ConfigError("SkeletonTemplate: parent[i] must be < i");
      }
    }
    if (static_cast<int>(rest_offset.size()) != joint_count() ||
        static_cast<int>(shape_basis.size()) != joint_count()) {
      throw ConfigError("SkeletonTemplate: per-joint arrays mismatch");
    }
    for (const auto& b : shape_basis) {
      if (b.cols() != dims.shape_total()) {
        throw ConfigError("SkeletonTemplate: shape basis width mismatch");
      }
    }
    if (static_cast<int>(markers.size()) != dims.marker_total()) {
      throw ConfigError("SkeletonTemplate: marker count mismatch");
    }
    for (const auto& m : markers) {
      double wsum = 0;
      for (int k = 0; k < m.attach_count; ++k) {
        if (m.joints[k] < 0 || m.joints[k] >= joint_count()) {
          throw ConfigError("SkeletonTemplate: marker joint out of range");
        }
        if (m.weights[k] < 0 || m.weights[k] > 1) {
          throw ConfigError("SkeletonTemplate: marker weight outside [0,1]");
        }
        wsum += m.weights[k];
      }
      if (std::abs(wsum - 1.0) > 1e-9) {
        throw ConfigError("SkeletonTemplate: marker weights must sum to 1");
      }
    }
    if (static_cast<int>(expression_basis.size()) != dims.face_markers) {
      throw ConfigError("SkeletonTemplate: expression basis count mismatch");
    }
    for (const auto& b : expression_basis) {
      if (b.cols() != dims.expression_dims) {
        throw ConfigError("SkeletonTemplate: expression basis width mismatch");
      }
    }
  }

  // Body joints the face/hand subtrees hang from.
  int neck_attach() const { return neck_attach_; }
  int left_wrist_attach() const { return lwrist_attach_; }
  int right_wrist_attach() const { return rwrist_attach_; }

  int face_marker_begin() const { return dims.body_markers; }
  int lhand_marker_begin() const { return dims.body_markers + dims.face_markers; }
  int rhand_marker_begin() const { return lhand_marker_begin() + dims.hand_markers; }

  int neck_attach_ = 0, lwrist_attach_ = 0, rwrist_attach_ = 0;
};

namespace detail {

// Body tree layouts. The generated trees always provide a neck joint and
// two wrist joints to anchor the face/hand subtrees.
struct BodyLayout {
  std::vector<int> parent;
  std::vector<Vec3> offset;
  int neck, lwrist, rwrist;
};

inline BodyLayout body_layout_24() {
  // 24-joint humanoid: pelvis, hips/knees/ankles/feet, spine chain,
  // neck/head, collars/shoulders/elbows/wrists/hand stubs.
  BodyLayout l;
  l.parent = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
              9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  l.offset = {
      {0, 0, 0},            // 0 pelvis
      {0.09, -0.06, 0},     // 1 l_hip
      {-0.09, -0.06, 0},    // 2 r_hip
      {0, 0.11, 0},         // 3 spine1
      {0.02, -0.38, 0},     // 4 l_knee
      {-0.02, -0.38, 0},    // 5 r_knee
      {0, 0.13, 0},         // 6 spine2
      {0.01, -0.40, 0},     // 7 l_ankle
      {-0.01, -0.40, 0},    // 8 r_ankle
      {0, 0.06, 0},         // 9 spine3
      {0.02, -0.06, 0.12},  // 10 l_foot
      {-0.02, -0.06, 0.12}, // 11 r_foot
      {0, 0.21, 0},         // 12 neck
      {0.08, 0.12, 0},      // 13 l_collar
      {-0.08, 0.12, 0},     // 14 r_collar
      {0, 0.07, 0},         // 15 head
      {0.11, 0.02, 0},      // 16 l_shoulder
      {-0.11, 0.02, 0},     // 17 r_shoulder
      {0.26, 0, 0},         // 18 l_elbow
      {-0.26, 0, 0},        // 19 r_elbow
      {0.25, 0, 0},         // 20 l_wrist
      {-0.25, 0, 0},        // 21 r_wrist
      {0.08, 0, 0},         // 22 l_hand stub
      {-0.08, 0, 0},        // 23 r_hand stub
  };
  l.neck = 12;
  l.lwrist = 20;
  l.rwrist = 21;
  return l;
}

inline BodyLayout body_layout_12() {
  BodyLayout l;
  l.parent = {-1, 0, 1, 2, 2, 2, 4, 5, 6, 7, 0, 0};
  l.offset = {
      {0, 0, 0},          // 0 pelvis
      {0, 0.18, 0},       // 1 spine
      {0, 0.18, 0},       // 2 chest
      {0, 0.16, 0},       // 3 neck
      {0.16, 0.10, 0},    // 4 l_shoulder
      {-0.16, 0.10, 0},   // 5 r_shoulder
      {0.26, 0, 0},       // 6 l_elbow
      {-0.26, 0, 0},      // 7 r_elbow
      {0.24, 0, 0},       // 8 l_wrist
      {-0.24, 0, 0},      // 9 r_wrist
      {0.09, -0.45, 0},   // 10 l_hip+leg
      {-0.09, -0.45, 0},  // 11 r_hip+leg
  };
  l.neck = 3;
  l.lwrist = 8;
  l.rwrist = 9;
  return l;
}

// Generic layout for custom joint counts: a spine chain with two arm chains
// branching off its top. Needs at least 4 joints.
inline BodyLayout body_layout_generic(int n) {
  if (n < 4) throw ConfigError("body layout: need at least 4 body joints");
  BodyLayout l;
  int spine = std::max(1, (n - 1) / 3);
  int rest = n - 1 - spine;
  int larm = rest / 2;
  int rarm = rest - larm;
  l.parent.assign(n, -1);
  l.offset.assign(n, Vec3::Zero());
  int idx = 1;
  for (int i = 0; i < spine; ++i, ++idx) {
    l.parent[idx] = idx - 1;
    l.offset[idx] = Vec3(0, 0.15, 0);
  }
  l.neck = spine;  // top of the spine
  int prev = l.neck;
  for (int i = 0; i < larm; ++i, ++idx) {
    l.parent[idx] = prev;
    l.offset[idx] = Vec3(0.18, i == 0 ? 0.05 : 0.0, 0);
    prev = idx;
  }
  l.lwrist = larm > 0 ? idx - 1 : l.neck;
  prev = l.neck;
  for (int i = 0; i < rarm; ++i, ++idx) {
    l.parent[idx] = prev;
    l.offset[idx] = Vec3(-0.18, i == 0 ? 0.05 : 0.0, 0);
    prev = idx;
  }
  l.rwrist = rarm > 0 ? idx - 1 : l.neck;
  return l;
}

inline BodyLayout body_layout(int n) {
  if (n == 24) return body_layout_24();
  if (n == 12) return body_layout_12();
  return body_layout_generic(n);
}

}  // namespace detail

// Builds the canonical skeleton + markers for the given dimensions. Shape
// and expression bases and marker placements are seeded so templates are
// reproducible.
inline SkeletonTemplate make_template(const ModelDims& dims, uint64_t seed) {
  dims.validate();
  SkeletonTemplate tpl;
  tpl.dims = dims;
  tpl.seed = seed;

  auto body = detail::body_layout(dims.body_joints);
  tpl.parent = body.parent;
  tpl.rest_offset = body.offset;
  tpl.neck_attach_ = body.neck;
  tpl.lwrist_attach_ = body.lwrist;
  tpl.rwrist_attach_ = body.rwrist;

  const int fj = dims.face_joints;
  const int fbegin = dims.face_joint_begin();
  // Face subtree: neck (when present), then jaw, then eye joints.
  for (int i = 0; i < fj; ++i) {
    if (i == 0) {
      tpl.parent.push_back(body.neck);
      tpl.rest_offset.push_back(fj >= 2 ? Vec3(0, 0.05, 0) : Vec3(0, 0.02, 0.03));
    } else if (i == 1) {
      tpl.parent.push_back(fbegin);  // jaw under face neck
      tpl.rest_offset.push_back(Vec3(0, 0.02, 0.04));
    } else {
      tpl.parent.push_back(fbegin);  // eyes under face neck
      tpl.rest_offset.push_back(Vec3(i % 2 == 0 ? 0.03 : -0.03, 0.06, 0.05));
    }
  }

  // Hand subtrees: a root joint at the wrist, then up to five finger chains.
  auto add_hand = [&](int wrist, double sign) {
    int begin = static_cast<int>(tpl.parent.size());
    tpl.parent.push_back(wrist);
    tpl.rest_offset.push_back(Vec3(sign * 0.03, 0, 0));
    int fingers = std::min(5, dims.hand_joints - 1);
    if (fingers > 0) {
      std::vector<int> chain_tail(fingers, begin);
      std::vector<int> chain_len(fingers, 0);
      for (int i = 0; i < dims.hand_joints - 1; ++i) {
        int f = i % fingers;
        tpl.parent.push_back(chain_tail[f]);
        double spread = (f - (fingers - 1) * 0.5) * 0.012;
        tpl.rest_offset.push_back(chain_len[f] == 0 ? Vec3(sign * 0.04, 0, spread)
                                                    : Vec3(sign * 0.025, 0, 0));
        chain_tail[f] = static_cast<int>(tpl.parent.size()) - 1;
        chain_len[f] += 1;
      }
    }
  };
  add_hand(body.lwrist, 1.0);
  add_hand(body.rwrist, -1.0);

  const int joints = tpl.joint_count();
  const int stotal = dims.shape_total();

  // Shape basis: column 0 of each part block scales the part's rest offsets
  // (a body-size direction); the rest are small seeded perturbations.
  Rng rb(derive_seed(seed, 101));
  tpl.shape_basis.assign(joints, Eigen::Matrix3Xd::Zero(3, stotal));
  auto part_shape_cols = [&](int j) -> std::pair<int, int> {
    if (j >= dims.rhand_joint_begin()) return {dims.body_shape + dims.hand_shape, dims.hand_shape};
    if (j >= dims.lhand_joint_begin()) return {dims.body_shape, dims.hand_shape};
    return {0, dims.body_shape};  // body and face joints follow the body shape
  };
  for (int j = 0; j < joints; ++j) {
    auto [col0, ncols] = part_shape_cols(j);
    tpl.shape_basis[j].col(col0) = 0.1 * tpl.rest_offset[j];
    for (int c = 1; c < ncols; ++c) {
      for (int r = 0; r < 3; ++r) {
        tpl.shape_basis[j](r, col0 + c) = 0.005 * rb.normal();
      }
    }
  }
  // The root joint anchors the skeleton at the translation; its offset must
  // stay zero or global-rotation equivariance breaks.
  tpl.shape_basis[0].setZero();

  // Rest joint positions at zero shape, for marker placement.
  std::vector<Vec3> rest(joints);
  for (int j = 0; j < joints; ++j) {
    rest[j] = (tpl.parent[j] < 0 ? Vec3::Zero() : rest[tpl.parent[j]]) + tpl.rest_offset[j];
  }

  Rng rm(derive_seed(seed, 202));
  auto add_markers = [&](PartClass part, Side side, int jbegin, int jcount, int count,
                         double spread) {
    for (int i = 0; i < count; ++i) {
      Marker m;
      m.part = part;
      m.side = side;
      int a = jbegin + (i % jcount);
      int pa = tpl.parent[a];
      bool two = (pa >= jbegin) && (pa < jbegin + jcount);
      if (part == PartClass::Body) two = (pa >= 0);
      if (two) {
        double w = 0.55 + 0.35 * rm.uniform();
        m.joints[0] = a;
        m.joints[1] = pa;
        m.weights[0] = w;
        m.weights[1] = 1.0 - w;
        m.attach_count = 2;
      } else {
        m.joints[0] = a;
        m.weights[0] = 1.0;
        m.attach_count = 1;
      }
      Vec3 base = Vec3::Zero();
      for (int k = 0; k < m.attach_count; ++k) base += m.weights[k] * rest[m.joints[k]];
      m.rest_position = base + Vec3(rm.normal() * spread, rm.normal() * spread,
                                    rm.normal() * spread);
      tpl.markers.push_back(m);
    }
  };
  add_markers(PartClass::Body, Side::None, 0, dims.body_joints, dims.body_markers, 0.03);
  add_markers(PartClass::Face, Side::None, dims.face_joint_begin(), dims.face_joints,
              dims.face_markers, 0.012);
  add_markers(PartClass::Hand, Side::Left, dims.lhand_joint_begin(), dims.hand_joints,
              dims.hand_markers, 0.008);
  add_markers(PartClass::Hand, Side::Right, dims.rhand_joint_begin(), dims.hand_joints,
              dims.hand_markers, 0.008);

  Rng re(derive_seed(seed, 303));
  tpl.expression_basis.assign(dims.face_markers,
                              Eigen::Matrix3Xd::Zero(3, dims.expression_dims));
  for (auto& b : tpl.expression_basis) {
    for (int c = 0; c < b.cols(); ++c) {
      for (int r = 0; r < 3; ++r) b(r, c) = 0.004 * re.normal();
    }
  }

  tpl.validate();
  return tpl;
}

struct FkResult {
  std::vector<Vec3> joints;
  std::vector<Vec3> markers;
};

// Intermediates kept for the reverse pass.
struct FkCache {
  std::vector<AxisAngle> pose;              // per skeleton joint
  std::vector<Mat3> local_rot, global_rot;  // R_i, G_i
  std::vector<Vec3> offset, global_pos;     // o_i(beta), p_i
  std::vector<Vec3> rest_pos;               // joint rest position at this beta
  std::vector<Eigen::Matrix3Xd> cum_shape;  // sum of shape bases along the chain
  std::vector<Vec3> marker_rest;            // x_m(beta, psi)
  VecX shape;                               // combined [body | lhand | rhand]
};

namespace detail {

// Skeleton-order pose gathered from the parameter struct. Face skeleton
// order is [neck, jaw, eyes...] while the struct stores the jaw separately.
inline std::vector<AxisAngle> skeleton_pose(const FullBodyParams& p,
                                            const ModelDims& dims) {
  std::vector<AxisAngle> pose;
  pose.reserve(dims.skeleton_joints());
  for (const auto& aa : p.body.pose) pose.push_back(aa);
  for (int i = 0; i < dims.face_joints; ++i) {
    if (dims.face_joints == 1) {
      pose.push_back(p.face.jaw_pose);
    } else if (i == 0) {
      pose.push_back(p.face.other_poses[0]);
    } else if (i == 1) {
      pose.push_back(p.face.jaw_pose);
    } else {
      pose.push_back(p.face.other_poses[i - 1]);
    }
  }
  for (const auto& aa : p.left_hand.pose) pose.push_back(aa);
  for (const auto& aa : p.right_hand.pose) pose.push_back(aa);
  return pose;
}

// Packed-vector offset of skeleton joint j's pose triple.
inline int pose_packed_offset(int j, const ModelDims& dims) {
  if (j < dims.body_joints) return dims.body_pose_offset() + 3 * j;
  if (j < dims.lhand_joint_begin()) {
    int f = j - dims.face_joint_begin();
    if (dims.face_joints == 1) return dims.jaw_pose_offset();
    if (f == 0) return dims.face_other_offset();
    if (f == 1) return dims.jaw_pose_offset();
    return dims.face_other_offset() + 3 * (f - 1);
  }
  if (j < dims.rhand_joint_begin()) {
    return dims.lhand_pose_offset() + 3 * (j - dims.lhand_joint_begin());
  }
  return dims.rhand_pose_offset() + 3 * (j - dims.rhand_joint_begin());
}

}  // namespace detail

// Poses the skeleton. Joint i's position chains its ancestors' rotations
// over shape-adjusted rest offsets; markers blend their attached joints'
// rigid transforms, with face markers first displaced along the expression
// basis in rest space.
inline FkResult forward_kinematics(const FullBodyParams& params,
                                   const SkeletonTemplate& tpl,
                                   FkCache* cache = nullptr) {
  const ModelDims& dims = tpl.dims;
  params.check_dims(dims);

  const int joints = tpl.joint_count();
  VecX beta(dims.shape_total());
  beta << params.body.shape, params.left_hand.shape, params.right_hand.shape;

  std::vector<AxisAngle> pose = detail::skeleton_pose(params, dims);
  std::vector<Mat3> local(joints), global(joints);
  std::vector<Vec3> offset(joints), pos(joints), rest(joints), rest0(joints);
  std::vector<Eigen::Matrix3Xd> cum;
  if (cache) cum.assign(joints, Eigen::Matrix3Xd(3, dims.shape_total()));

  for (int i = 0; i < joints; ++i) {
    offset[i] = tpl.rest_offset[i] + tpl.shape_basis[i] * beta;
    local[i] = rodrigues(pose[i]);
    int p = tpl.parent[i];
    if (p < 0) {
      global[i] = local[i];
      pos[i] = params.root_translation + offset[i];
      rest[i] = offset[i];
      rest0[i] = tpl.rest_offset[i];
      if (cache) cum[i] = tpl.shape_basis[i];
    } else {
      global[i] = global[p] * local[i];
      pos[i] = pos[p] + global[p] * offset[i];
      rest[i] = rest[p] + offset[i];
      rest0[i] = rest0[p] + tpl.rest_offset[i];
      if (cache) cum[i] = cum[p] + tpl.shape_basis[i];
    }
  }

  FkResult out;
  out.joints = pos;
  out.markers.resize(tpl.markers.size());
  std::vector<Vec3> marker_rest(tpl.markers.size());
  for (size_t m = 0; m < tpl.markers.size(); ++m) {
    const Marker& mk = tpl.markers[m];
    // Marker rest position follows its joints' shape displacement; face
    // markers also move along the expression basis in rest space.
    Vec3 x = mk.rest_position;
    for (int k = 0; k < mk.attach_count; ++k) {
      int j = mk.joints[k];
      x += mk.weights[k] * (rest[j] - rest0[j]);
    }
    if (mk.part == PartClass::Face) {
      int fm = static_cast<int>(m) - tpl.face_marker_begin();
      x += tpl.expression_basis[fm] * params.face.expression;
    }
    marker_rest[m] = x;
    Vec3 w = Vec3::Zero();
    for (int k = 0; k < mk.attach_count; ++k) {
      int j = mk.joints[k];
      w += mk.weights[k] * (global[j] * (x - rest[j]) + pos[j]);
    }
    out.markers[m] = w;
  }

  if (cache) {
    cache->pose = std::move(pose);
    cache->local_rot = std::move(local);
    cache->global_rot = std::move(global);
    cache->offset = std::move(offset);
    cache->global_pos = pos;
    cache->rest_pos = std::move(rest);
    cache->cum_shape = std::move(cum);
    cache->marker_rest = std::move(marker_rest);
    cache->shape = beta;
  }
  return out;
}

// Reverse pass through forward_kinematics: accumulates d(loss)/d(packed
// params) from cotangents of the joint and marker positions. Either
// cotangent list may be empty.
inline VecX fk_backward(const FkCache& cache, const SkeletonTemplate& tpl,
                        const std::vector<Vec3>& joint_cotangents,
                        const std::vector<Vec3>& marker_cotangents) {
  const ModelDims& dims = tpl.dims;
  const int joints = tpl.joint_count();
  const int stotal = dims.shape_total();
  if (!joint_cotangents.empty() &&
      static_cast<int>(joint_cotangents.size()) != joints) {
    throw ConfigError("fk_backward: joint cotangent count mismatch");
  }
  if (!marker_cotangents.empty() &&
      marker_cotangents.size() != tpl.markers.size()) {
    throw ConfigError("fk_backward: marker cotangent count mismatch");
  }

  std::vector<Mat3> gbar(joints, Mat3::Zero());
  std::vector<Vec3> pbar(joints, Vec3::Zero());
  VecX beta_bar = VecX::Zero(stotal);
  VecX psi_bar = VecX::Zero(dims.expression_dims);
  Vec3 t_bar = Vec3::Zero();

  if (!joint_cotangents.empty()) {
    for (int i = 0; i < joints; ++i) pbar[i] += joint_cotangents[i];
  }

  // Marker contributions: world_m = sum_k w_k (G_k (x_m - rest_k) + p_k).
  if (!marker_cotangents.empty()) {
    for (size_t m = 0; m < tpl.markers.size(); ++m) {
      const Vec3& ybar = marker_cotangents[m];
      if (ybar.isZero()) continue;
      const Marker& mk = tpl.markers[m];
      Vec3 xbar = Vec3::Zero();  // adjoint of x_m
      for (int k = 0; k < mk.attach_count; ++k) {
        int j = mk.joints[k];
        double w = mk.weights[k];
        gbar[j] += (w * ybar) * (cache.marker_rest[m] - cache.rest_pos[j]).transpose();
        pbar[j] += w * ybar;
        Vec3 gty = cache.global_rot[j].transpose() * ybar;
        xbar += w * gty;
        // x_m - rest_j: the rest_j side pulls -C_j beta.
        beta_bar -= w * (cache.cum_shape[j].transpose() * gty);
      }
      // x_m = rest_position + sum_k w_k C_k beta (+ E_m psi for face).
      for (int k = 0; k < mk.attach_count; ++k) {
        beta_bar += mk.weights[k] * (cache.cum_shape[mk.joints[k]].transpose() * xbar);
      }
      if (mk.part == PartClass::Face) {
        int fm = static_cast<int>(m) - tpl.face_marker_begin();
        psi_bar += tpl.expression_basis[fm].transpose() * xbar;
      }
    }
  }

  // Joint sweep, children before parents: G_i = G_p R_i, p_i = p_p + G_p o_i.
  VecX theta_bar = VecX::Zero(3 * joints);
  for (int i = joints - 1; i >= 0; --i) {
    int p = tpl.parent[i];
    Mat3 gparent = p < 0 ? Mat3::Identity() : cache.global_rot[p];
    Vec3 obar = gparent.transpose() * pbar[i];
    Mat3 rbar = gparent.transpose() * gbar[i];
    if (p < 0) {
      t_bar += pbar[i];
    } else {
      pbar[p] += pbar[i];
      gbar[p] += pbar[i] * cache.offset[i].transpose();
      gbar[p] += gbar[i] * cache.local_rot[i].transpose();
    }
    auto dr = rodrigues_jacobian(cache.pose[i]);
    for (int c = 0; c < 3; ++c) {
      theta_bar[3 * i + c] = rbar.cwiseProduct(dr[c]).sum();
    }
    beta_bar += tpl.shape_basis[i].transpose() * obar;
  }

  // Scatter into the packed parameter layout.
  VecX grad = VecX::Zero(dims.param_count());
  for (int j = 0; j < joints; ++j) {
    grad.segment<3>(detail::pose_packed_offset(j, dims)) += theta_bar.segment<3>(3 * j);
  }
  grad.segment(dims.body_shape_offset(), dims.body_shape) += beta_bar.head(dims.body_shape);
  grad.segment(dims.lhand_shape_offset(), dims.hand_shape) +=
      beta_bar.segment(dims.body_shape, dims.hand_shape);
  grad.segment(dims.rhand_shape_offset(), dims.hand_shape) +=
      beta_bar.tail(dims.hand_shape);
  grad.segment(dims.expression_offset(), dims.expression_dims) += psi_bar;
  grad.segment<3>(dims.translation_offset()) += t_bar;
  return grad;
}

}  // namespace furpe
