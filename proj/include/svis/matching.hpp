#pragma once

// Ground-truth assignment and training loss. Slots are matched to ground
// truth by maximizing a joint two-frame similarity (mask Dice times summed
// class probabilities) over slot permutations; the loss then supervises
// matched slots toward their instances and unmatched slots toward the
// empty class.

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "svis/tensor.hpp"

namespace svis {

struct LossWeights {
  double lambda_inst = 0.75;
  double lambda_aux = 0.0;
  double k_mask = 1.0;
  double k_cls = 1.0;
};

// Per-frame ground truth. Class labels run 1..C; masks are pairwise
// disjoint binary images; ids are stable across the frames of one video.
struct GroundTruthFrame {
  int height = 0;
  int width = 0;
  std::vector<std::vector<uint8_t>> masks;  // K x height*width
  std::vector<int> classes;                 // K, in 1..C
  std::vector<int> ids;                     // K
  int count() const { return (int)masks.size(); }
};

// Slot-aligned network output for one frame. class_probs rows and masks
// columns (per pixel, over slots) are softmax-normalized.
struct FramePrediction {
  Tensor class_probs;  // [L, C+1], empty class in the last column
  Tensor masks;        // [L, height*width]
  int height = 0;
  int width = 0;
  int slots() const { return class_probs.dim(0); }
  int num_classes() const { return class_probs.dim(1) - 1; }
  double empty_prob(int slot) const {
    return class_probs.at2(slot, class_probs.dim(1) - 1);
  }
};

// Injective map of ground-truth instances onto slots; every unassigned
// slot is an empty-class target.
struct Assignment {
  std::vector<int> slot_for_gt;  // size K
  double total_similarity = 0.0;

  std::vector<int> unmatched_slots(int num_slots) const {
    std::vector<char> used(num_slots, 0);
    for (int s : slot_for_gt) used[s] = 1;
    std::vector<int> out;
    for (int s = 0; s < num_slots; ++s)
      if (!used[s]) out.push_back(s);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Dice
// ---------------------------------------------------------------------------

// Dice coefficient between a soft prediction and a binary target,
// 2*sum(p*g) / (sum(p^2) + sum(g^2)), smoothed by 1e-6 on both sides.
inline double dice_value(const std::vector<double>& pred,
                         const std::vector<double>& gt) {
  require(pred.size() == gt.size(), "dice: shape mismatch");
  double inter = 0, p2 = 0, g2 = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * gt[i];
    p2 += pred[i] * pred[i];
    g2 += gt[i] * gt[i];
  }
  return (2.0 * inter + 1e-6) / (p2 + g2 + 1e-6);
}

// Differentiable variant: `pred` is a rank-1 tensor, `gt` a constant mask.
inline Tensor dice(const Tensor& pred, const Tensor& gt) {
  check_same_shape(pred, gt, "dice");
  Tensor num = add_scalar(scale(sum(mul(pred, gt)), 2.0), 1e-6);
  Tensor den = add_scalar(add(sum(mul(pred, pred)), sum(mul(gt, gt))), 1e-6);
  return div(num, den);
}

// ---------------------------------------------------------------------------
// Similarity (two-frame, order-preserving)
// ---------------------------------------------------------------------------

namespace detail {
inline int find_by_id(const GroundTruthFrame& gt, int id) {
  int found = -1;
  for (int i = 0; i < gt.count(); ++i)
    if (gt.ids[i] == id) {
      require(found < 0, "ground-truth frame has duplicate instance id " +
                             std::to_string(id));
      found = i;
    }
  return found;
}
}  // namespace detail

// Entry (j, i): similarity of assigning slot j to ground-truth instance i
// of frame t. Mask similarity is the Dice over the concatenation of the
// frame-t and frame-(t-1) masks; class similarity sums the slot's
// probability of the true class at both frames. Instances absent at t-1
// contribute frame-t terms only. Pass nullptr for the previous frame to
// score frame t alone.
inline Tensor similarity_matrix(const FramePrediction& pred_t,
                                const FramePrediction* pred_prev,
                                const GroundTruthFrame& gt_t,
                                const GroundTruthFrame* gt_prev) {
  const int L = pred_t.slots();
  const int K = gt_t.count();
  require(K <= L, "more ground-truth instances than slots");
  require(gt_t.height == pred_t.height && gt_t.width == pred_t.width,
          "similarity_matrix: prediction/ground-truth resolution mismatch");
  require((pred_prev == nullptr) == (gt_prev == nullptr),
          "similarity_matrix: previous-frame prediction and ground truth "
          "must be supplied together");
  const int P = pred_t.height * pred_t.width;
  std::vector<double> sim((size_t)L * K, 0.0);
  for (int i = 0; i < K; ++i) {
    int prev_idx = -1;
    if (gt_prev) prev_idx = detail::find_by_id(*gt_prev, gt_t.ids[i]);
    // Concatenated ground-truth mask [m_t, m_{t-1}].
    std::vector<double> gt_cat(P + (prev_idx >= 0 ? P : 0));
    for (int p = 0; p < P; ++p) gt_cat[p] = gt_t.masks[i][p];
    if (prev_idx >= 0)
      for (int p = 0; p < P; ++p) gt_cat[P + p] = gt_prev->masks[prev_idx][p];
    for (int j = 0; j < L; ++j) {
      std::vector<double> pred_cat(gt_cat.size());
      for (int p = 0; p < P; ++p) pred_cat[p] = pred_t.masks.at2(j, p);
      if (prev_idx >= 0)
        for (int p = 0; p < P; ++p) pred_cat[P + p] = pred_prev->masks.at2(j, p);
      const double sim_mask = dice_value(pred_cat, gt_cat);
      double sim_cls = pred_t.class_probs.at2(j, gt_t.classes[i] - 1);
      if (prev_idx >= 0)
        sim_cls += pred_prev->class_probs.at2(j, gt_prev->classes[prev_idx] - 1);
      sim[(size_t)j * K + i] = sim_mask * sim_cls;
    }
  }
  return Tensor({L, K}, std::move(sim));
}

// ---------------------------------------------------------------------------
// Assignment solvers
// ---------------------------------------------------------------------------

namespace detail {

// Kuhn-Munkres with potentials, minimizing. cost is n x m with n <= m;
// returns the column assigned to each row and the optimal total.
inline double hungarian_min(const std::vector<double>& cost, int n, int m,
                            std::vector<int>* row_to_col = nullptr) {
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(m + 1, 0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, INF);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = INF;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[(size_t)(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0;
  if (row_to_col) row_to_col->assign(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    total += cost[(size_t)(p[j] - 1) * m + (j - 1)];
    if (row_to_col) (*row_to_col)[p[j] - 1] = j - 1;
  }
  return total;
}

// Best achievable similarity assigning gt columns [from..K) to the slots
// still marked available.
inline double best_partial(const Tensor& sim, int from,
                           const std::vector<char>& slot_used) {
  const int L = sim.dim(0), K = sim.dim(1);
  const int n = K - from;
  if (n == 0) return 0.0;
  std::vector<int> free_slots;
  for (int s = 0; s < L; ++s)
    if (!slot_used[s]) free_slots.push_back(s);
  const int m = (int)free_slots.size();
  std::vector<double> cost((size_t)n * m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      cost[(size_t)i * m + j] = -sim.at2(free_slots[j], from + i);
  return -hungarian_min(cost, n, m);
}

}  // namespace detail

// Maximum-similarity assignment of ground-truth instances to slots.
// Ties are broken deterministically: among optimal assignments, each
// ground-truth instance in index order takes the lowest usable slot.
inline Assignment hungarian_assign(const Tensor& sim) {
  require(sim.rank() == 2, "hungarian_assign: rank-2 similarity required");
  const int L = sim.dim(0), K = sim.dim(1);
  require(K <= L, "hungarian_assign: more instances than slots");
  Assignment out;
  if (K == 0) return out;
  std::vector<char> used(L, 0);
  double remaining = detail::best_partial(sim, 0, used);
  out.total_similarity = remaining;
  const double tol = 1e-12 * std::max(1.0, std::abs(remaining));
  for (int i = 0; i < K; ++i) {
    for (int s = 0; s < L; ++s) {
      if (used[s]) continue;
      used[s] = 1;
      const double rest = detail::best_partial(sim, i + 1, used);
      if (sim.at2(s, i) + rest >= remaining - tol) {
        out.slot_for_gt.push_back(s);
        remaining = rest;
        break;
      }
      used[s] = 0;
    }
  }
  require((int)out.slot_for_gt.size() == K, "hungarian_assign: internal failure");
  return out;
}

// Exhaustive-enumeration oracle, same tie-break rule. Refuses above
// L = 8 slots.
inline Assignment brute_force_assign(const Tensor& sim) {
  require(sim.rank() == 2, "brute_force_assign: rank-2 similarity required");
  const int L = sim.dim(0), K = sim.dim(1);
  require(L <= 8, "brute_force_assign: refusing L > 8 (combinatorial guard)");
  require(K <= L, "brute_force_assign: more instances than slots");
  Assignment best;
  best.total_similarity = -std::numeric_limits<double>::infinity();
  std::vector<int> current(K);
  std::vector<char> used(L, 0);
  // Lexicographic enumeration with strict improvement keeps the
  // lexicographically-smallest argmax.
  auto recurse = [&](auto&& self, int i, double acc) -> void {
    if (i == K) {
      if (acc > best.total_similarity) {
        best.total_similarity = acc;
        best.slot_for_gt = current;
      }
      return;
    }
    for (int s = 0; s < L; ++s) {
      if (used[s]) continue;
      used[s] = 1;
      current[i] = s;
      self(self, i + 1, acc + sim.at2(s, i));
      used[s] = 0;
    }
  };
  if (K == 0) {
    best.total_similarity = 0;
    return best;
  }
  recurse(recurse, 0, 0.0);
  return best;
}

// ---------------------------------------------------------------------------
// Total loss
// ---------------------------------------------------------------------------

// L = lambda_inst * L_pos + (1 - lambda_inst) * L_neg + lambda_aux * L_aux.
// L_pos = -sum over matched i of [k_mask * Dice + k_cls * log p(true class)],
// L_neg = -sum over unmatched slots of log p(empty). L_aux is a hook and
// contributes zero unless `aux` is supplied.
inline Tensor total_loss(const FramePrediction& pred_t,
                         const GroundTruthFrame& gt_t,
                         const Assignment& assignment, const LossWeights& w,
                         const Tensor* aux = nullptr) {
  const int L = pred_t.slots();
  const int K = gt_t.count();
  require((int)assignment.slot_for_gt.size() == K,
          "total_loss: assignment does not cover the ground truth");
  require(gt_t.height == pred_t.height && gt_t.width == pred_t.width,
          "total_loss: resolution mismatch");
  const int P = pred_t.height * pred_t.width;
  const int empty_col = pred_t.class_probs.dim(1) - 1;

  Tensor loss_pos = Tensor::scalar(0.0);
  for (int i = 0; i < K; ++i) {
    const int s = assignment.slot_for_gt[i];
    std::vector<double> gt_mask(gt_t.masks[i].begin(), gt_t.masks[i].end());
    Tensor gt_m({P}, std::move(gt_mask));
    Tensor pred_m = reshape(slice(pred_t.masks, 0, s, 1), {P});
    Tensor term = scale(dice(pred_m, gt_m), w.k_mask);
    Tensor logp = log_clamped(
        pick(pred_t.class_probs, (long long)s * (empty_col + 1) + gt_t.classes[i] - 1));
    term = add(term, scale(logp, w.k_cls));
    loss_pos = sub(loss_pos, term);
  }

  Tensor loss_neg = Tensor::scalar(0.0);
  for (int s : assignment.unmatched_slots(L)) {
    Tensor logp = log_clamped(
        pick(pred_t.class_probs, (long long)s * (empty_col + 1) + empty_col));
    loss_neg = sub(loss_neg, logp);
  }

  Tensor total = add(scale(loss_pos, w.lambda_inst),
                     scale(loss_neg, 1.0 - w.lambda_inst));
  if (aux && w.lambda_aux != 0.0) total = add(total, scale(*aux, w.lambda_aux));
  return total;
}

}  // namespace svis
