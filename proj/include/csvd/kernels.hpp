#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "csvd/rng.hpp"
#include "csvd/tensor.hpp"

namespace csvd {

struct TverskyParams {
  double alpha = 0.1;    ///< false-positive weight
  double beta = 0.9;     ///< false-negative weight
  double epsilon = 1e-5; ///< smoothing term
  void validate() const;
};

struct LossGrad {
  double value = 0.0;
  Tensor4D grad;  ///< d value / d p
};

/// Tversky loss with a validity mask: soft TP/FP/FN counts run over valid
/// voxels only, and the gradient is exactly zero wherever valid = 0.
LossGrad tversky_loss(const Tensor4D& p, const Tensor4D& g, const Tensor4D& valid,
                      const TverskyParams& params);

/// Iterated soft-erosion skeleton: soft-erode is a 3x3x3 min-pool,
/// soft-dilate a 3x3x3 max-pool (windows clipped at the border), and the
/// skeleton accumulates the opening residue relu(e_k - open(e_k)) of each
/// erosion level k = 0..iterations through a saturating update that keeps
/// values in [0,1].
Tensor4D soft_skeleton(const Tensor4D& p, int iterations);

/// Soft centerline-overlap loss between p and g:
/// 1 - 2*Tprec*Tsens/(Tprec+Tsens) with
/// Tprec = (sum skel(p)*g + eps)/(sum skel(p) + eps) and
/// Tsens = (sum skel(g)*p + eps)/(sum skel(g) + eps).
/// The gradient is exact reverse-mode through the pooling chain; pooling
/// ties resolve to the first window index in scan order.
LossGrad cldice_loss(const Tensor4D& p, const Tensor4D& g, int iterations,
                     double epsilon = 1e-5);

struct PairLossGrad {
  double value = 0.0;
  Tensor4D grad_a;
  Tensor4D grad_b;
};

/// Mean voxelwise product of the two probability fields; penalizes
/// simultaneous confidence in both classes.
PairLossGrad exclusion_loss(const Tensor4D& p_epvs, const Tensor4D& p_lac);

/// Learnable log-variances for the two tasks plus the exclusion weight.
struct UncertaintyState {
  double s_epvs = 0.0;
  double s_lac = 0.0;
  double lambda_excl = 1.0;
  void validate() const;
};

struct TotalLoss {
  double value = 0.0;
  double d_s_epvs = 0.0;
  double d_s_lac = 0.0;
  double d_l_epvs = 0.0;
  double d_l_lac = 0.0;
  double d_l_excl = 0.0;
};

/// Uncertainty-weighted total: sum_t (e^{-s_t} L_t + s_t) + lambda * L_excl.
TotalLoss total_loss(double l_epvs, double l_lac, double l_excl,
                     const UncertaintyState& state);

/// Weighted sum of per-scale losses normalized by the weight total.
double deep_supervision_aggregate(const std::vector<double>& scale_losses,
                                  const std::vector<double>& weights);

/// 1x1 projections for the gated cross-task attention block. Wq and Wk map
/// C -> C/r, Wv maps C -> C and starts all-zero so the block begins as an
/// identity mapping.
struct AttentionWeights {
  int channels = 0;
  int reduced = 0;
  std::vector<double> wq;  ///< reduced x channels, row-major
  std::vector<double> wk;  ///< reduced x channels, row-major
  std::vector<double> wv;  ///< channels x channels, row-major

  /// Zero Wv and uniform random Wq/Wk in [-1, 1].
  static AttentionWeights zero_value_init(int channels, int reduction, Rng& rng);
  void validate() const;
};

struct AttentionOutput {
  Tensor4D refined;  ///< f_lac + gate * (Wv f_epvs), gate broadcast over channels
  Tensor3D gate;     ///< sigmoid of the scaled Q.K channel contraction
};

/// Forward pass of the gated cross-task attention: per voxel,
/// gate = sigmoid( (1/sqrt(C_int)) * sum_c Q_c K_c ) with Q = Wq f_lac and
/// K = Wk f_epvs, and refined = f_lac + gate * (Wv f_epvs).
AttentionOutput gated_attention_forward(const Tensor4D& f_lac,
                                        const Tensor4D& f_epvs,
                                        const AttentionWeights& w);

/// A scalar map that also reports its gradient at the evaluation point.
using ScalarMap = std::function<std::pair<double, Tensor4D>(const Tensor4D&)>;

/// Central-difference verification of a reported gradient. Returns the max
/// over coordinates of |analytic - numeric| / max(1e-12, |numeric|).
double finite_difference_check(const ScalarMap& fn, const Tensor4D& point,
                               double step);

}  // namespace csvd
