#include "csvd/kernels.hpp"

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>

namespace csvd {
namespace {

void require_same_shape(const Tensor4D& a, const Tensor4D& b, const char* what) {
  if (!a.same_shape(b)) {
    std::ostringstream os;
    os << what << ": shape mismatch (" << a.shape[0] << "," << a.shape[1] << ","
       << a.shape[2] << "," << a.shape[3] << ") vs (" << b.shape[0] << ","
       << b.shape[1] << "," << b.shape[2] << "," << b.shape[3] << ")";
    throw std::invalid_argument(os.str());
  }
}

void require_unit_range(const Tensor4D& t, const char* what) {
  for (double v : t.data) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument(std::string(what) + ": values must lie in [0,1]");
    }
  }
}

void require_binary(const Tensor4D& t, const char* what) {
  for (double v : t.data) {
    if (v != 0.0 && v != 1.0) {
      throw std::invalid_argument(std::string(what) + ": values must be 0 or 1");
    }
  }
}

// 3x3x3 min- or max-pool per channel, window clipped at the border. The
// winner under ties is the first window position in (dz, dy, dx) scan
// order, recorded for the backward pass.
Tensor4D pool3(const Tensor4D& in, bool take_max, std::vector<std::int32_t>* argwin) {
  const int C = in.shape[0], D = in.shape[1], H = in.shape[2], W = in.shape[3];
  Tensor4D out(C, D, H, W);
  if (argwin != nullptr) argwin->assign(in.size(), 0);

  for (int c = 0; c < C; ++c) {
    for (int z = 0; z < D; ++z) {
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          double best = 0.0;
          std::size_t best_idx = 0;
          bool first = true;
          for (int dz = -1; dz <= 1; ++dz) {
            const int zz = z + dz;
            if (zz < 0 || zz >= D) continue;
            for (int dy = -1; dy <= 1; ++dy) {
              const int yy = y + dy;
              if (yy < 0 || yy >= H) continue;
              for (int dx = -1; dx <= 1; ++dx) {
                const int xx = x + dx;
                if (xx < 0 || xx >= W) continue;
                const std::size_t idx = in.linear(c, zz, yy, xx);
                const double v = in.data[idx];
                if (first || (take_max ? v > best : v < best)) {
                  best = v;
                  best_idx = idx;
                  first = false;
                }
              }
            }
          }
          const std::size_t o = out.linear(c, z, y, x);
          out.data[o] = best;
          if (argwin != nullptr) {
            (*argwin)[o] = static_cast<std::int32_t>(best_idx);
          }
        }
      }
    }
  }
  return out;
}

// Everything the skeleton backward pass needs: erosion levels e[0..N+1],
// openings, residues and running skeletons per level, plus the pooling
// winners.
struct SkeletonTape {
  int iterations = 0;
  std::vector<Tensor4D> e;
  std::vector<Tensor4D> open;
  std::vector<Tensor4D> delta;
  std::vector<Tensor4D> skel;
  std::vector<std::vector<std::int32_t>> erode_arg;   // e[k+1] = erode(e[k])
  std::vector<std::vector<std::int32_t>> dilate_arg;  // open[k] = dilate(e[k+1])
};

Tensor4D skeleton_forward(const Tensor4D& p, int iterations, SkeletonTape* tape) {
  const std::size_t n = p.size();

  Tensor4D e = p;
  Tensor4D skel;
  if (tape != nullptr) {
    tape->iterations = iterations;
    tape->e.push_back(e);
  }

  for (int k = 0; k <= iterations; ++k) {
    std::vector<std::int32_t> arg_er, arg_di;
    Tensor4D eroded = pool3(e, false, tape != nullptr ? &arg_er : nullptr);
    Tensor4D opened = pool3(eroded, true, tape != nullptr ? &arg_di : nullptr);

    Tensor4D delta = e;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = e.data[i] - opened.data[i];
      delta.data[i] = d > 0.0 ? d : 0.0;
    }

    if (k == 0) {
      skel = delta;
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const double u = delta.data[i] - skel.data[i] * delta.data[i];
        skel.data[i] += u > 0.0 ? u : 0.0;
      }
    }

    if (tape != nullptr) {
      tape->e.push_back(eroded);
      tape->open.push_back(std::move(opened));
      tape->delta.push_back(std::move(delta));
      tape->skel.push_back(skel);
      tape->erode_arg.push_back(std::move(arg_er));
      tape->dilate_arg.push_back(std::move(arg_di));
    }
    e = tape != nullptr ? tape->e[k + 1] : std::move(eroded);
  }
  return skel;
}

Tensor4D skeleton_backward(const SkeletonTape& tape, const Tensor4D& g_skel_out) {
  const int N = tape.iterations;
  const std::size_t n = g_skel_out.size();
  const auto& sh = g_skel_out.shape;

  std::vector<Tensor4D> g_e(N + 2);
  for (auto& t : g_e) t = Tensor4D(sh[0], sh[1], sh[2], sh[3]);

  Tensor4D g_skel = g_skel_out;
  for (int k = N; k >= 0; --k) {
    // Residue gradient at this level, unwinding the saturating update
    // skel_k = skel_{k-1} + relu(delta_k - skel_{k-1}*delta_k).
    Tensor4D g_delta(sh[0], sh[1], sh[2], sh[3]);
    if (k == 0) {
      g_delta = g_skel;
    } else {
      const Tensor4D& s_prev = tape.skel[k - 1];
      const Tensor4D& delta = tape.delta[k];
      Tensor4D g_prev(sh[0], sh[1], sh[2], sh[3]);
      for (std::size_t i = 0; i < n; ++i) {
        const double u = delta.data[i] - s_prev.data[i] * delta.data[i];
        const double m = u > 0.0 ? 1.0 : 0.0;
        g_delta.data[i] = g_skel.data[i] * m * (1.0 - s_prev.data[i]);
        g_prev.data[i] = g_skel.data[i] * (1.0 - m * delta.data[i]);
      }
      g_skel = std::move(g_prev);
    }

    // delta_k = relu(e_k - open_k); route through the relu, then scatter
    // the opening part through the dilation winners.
    const Tensor4D& e_k = tape.e[k];
    const Tensor4D& open_k = tape.open[k];
    const auto& dilate_arg = tape.dilate_arg[k];
    for (std::size_t i = 0; i < n; ++i) {
      if (e_k.data[i] - open_k.data[i] > 0.0) {
        const double gd = g_delta.data[i];
        g_e[k].data[i] += gd;
        g_e[k + 1].data[dilate_arg[i]] -= gd;
      }
    }
  }

  // Erosion chain, top level downward: e[k+1] = erode(e[k]).
  for (int k = N; k >= 0; --k) {
    const auto& erode_arg = tape.erode_arg[k];
    for (std::size_t i = 0; i < n; ++i) {
      const double gv = g_e[k + 1].data[i];
      if (gv != 0.0) g_e[k].data[erode_arg[i]] += gv;
    }
  }
  return std::move(g_e[0]);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void TverskyParams::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) {
    throw std::invalid_argument("TverskyParams: alpha and beta must be >= 0");
  }
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("TverskyParams: epsilon must be > 0");
  }
}

LossGrad tversky_loss(const Tensor4D& p, const Tensor4D& g, const Tensor4D& valid,
                      const TverskyParams& params) {
  params.validate();
  require_same_shape(p, g, "tversky_loss");
  require_same_shape(p, valid, "tversky_loss");
  require_unit_range(p, "tversky_loss: p");
  require_binary(g, "tversky_loss: g");
  require_binary(valid, "tversky_loss: valid");

  const std::size_t n = p.size();
  std::vector<double> tp_terms(n), fp_terms(n), fn_terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = valid.data[i];
    tp_terms[i] = v * p.data[i] * g.data[i];
    fp_terms[i] = v * p.data[i] * (1.0 - g.data[i]);
    fn_terms[i] = v * (1.0 - p.data[i]) * g.data[i];
  }
  const double tp = pairwise_sum(tp_terms);
  const double fp = pairwise_sum(fp_terms);
  const double fn = pairwise_sum(fn_terms);

  const double num = tp + params.epsilon;
  const double den = tp + params.alpha * fp + params.beta * fn + params.epsilon;

  LossGrad out;
  out.value = 1.0 - num / den;
  out.grad = Tensor4D(p.shape[0], p.shape[1], p.shape[2], p.shape[3]);
  const double den2 = den * den;
  for (std::size_t i = 0; i < n; ++i) {
    if (valid.data[i] == 0.0) continue;  // exactly zero gradient when masked
    const double gi = g.data[i];
    const double dnum = gi;
    const double dden = gi + params.alpha * (1.0 - gi) - params.beta * gi;
    out.grad.data[i] = -(dnum * den - num * dden) / den2;
  }
  return out;
}

Tensor4D soft_skeleton(const Tensor4D& p, int iterations) {
  if (iterations < 0) {
    throw std::invalid_argument("soft_skeleton: iterations must be >= 0");
  }
  require_unit_range(p, "soft_skeleton: p");
  return skeleton_forward(p, iterations, nullptr);
}

LossGrad cldice_loss(const Tensor4D& p, const Tensor4D& g, int iterations,
                     double epsilon) {
  require_same_shape(p, g, "cldice_loss");
  require_unit_range(p, "cldice_loss: p");
  require_unit_range(g, "cldice_loss: g");
  if (iterations < 0) {
    throw std::invalid_argument("cldice_loss: iterations must be >= 0");
  }
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("cldice_loss: epsilon must be > 0");
  }

  SkeletonTape tape;
  const Tensor4D skel_p = skeleton_forward(p, iterations, &tape);
  const Tensor4D skel_g = skeleton_forward(g, iterations, nullptr);

  const std::size_t n = p.size();
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < n; ++i) terms[i] = skel_p.data[i] * g.data[i];
  const double overlap_pg = pairwise_sum(terms);
  const double sum_skel_p = pairwise_sum(skel_p.data);
  for (std::size_t i = 0; i < n; ++i) terms[i] = skel_g.data[i] * p.data[i];
  const double overlap_gp = pairwise_sum(terms);
  const double sum_skel_g = pairwise_sum(skel_g.data);

  const double tprec = (overlap_pg + epsilon) / (sum_skel_p + epsilon);
  const double tsens = (overlap_gp + epsilon) / (sum_skel_g + epsilon);
  const double denom = tprec + tsens;

  LossGrad out;
  out.value = 1.0 - 2.0 * tprec * tsens / denom;

  const double d_tprec = -2.0 * tsens * tsens / (denom * denom);
  const double d_tsens = -2.0 * tprec * tprec / (denom * denom);

  Tensor4D g_skel_p(p.shape[0], p.shape[1], p.shape[2], p.shape[3]);
  for (std::size_t i = 0; i < n; ++i) {
    g_skel_p.data[i] = d_tprec * (g.data[i] - tprec) / (sum_skel_p + epsilon);
  }
  out.grad = skeleton_backward(tape, g_skel_p);
  for (std::size_t i = 0; i < n; ++i) {
    out.grad.data[i] += d_tsens * skel_g.data[i] / (sum_skel_g + epsilon);
  }
  return out;
}

PairLossGrad exclusion_loss(const Tensor4D& p_epvs, const Tensor4D& p_lac) {
  require_same_shape(p_epvs, p_lac, "exclusion_loss");
  require_unit_range(p_epvs, "exclusion_loss: p_epvs");
  require_unit_range(p_lac, "exclusion_loss: p_lac");

  const std::size_t n = p_epvs.size();
  const double inv_n = 1.0 / double(n);
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    terms[i] = p_epvs.data[i] * p_lac.data[i];
  }

  PairLossGrad out;
  out.value = pairwise_sum(terms) * inv_n;
  out.grad_a = Tensor4D(p_epvs.shape[0], p_epvs.shape[1], p_epvs.shape[2],
                        p_epvs.shape[3]);
  out.grad_b = out.grad_a;
  for (std::size_t i = 0; i < n; ++i) {
    out.grad_a.data[i] = p_lac.data[i] * inv_n;
    out.grad_b.data[i] = p_epvs.data[i] * inv_n;
  }
  return out;
}

void UncertaintyState::validate() const {
  if (!std::isfinite(s_epvs) || !std::isfinite(s_lac)) {
    throw std::invalid_argument("UncertaintyState: log-variances must be finite");
  }
  if (!(lambda_excl >= 0.0)) {
    throw std::invalid_argument("UncertaintyState: lambda_excl must be >= 0");
  }
}

TotalLoss total_loss(double l_epvs, double l_lac, double l_excl,
                     const UncertaintyState& state) {
  state.validate();
  if (!std::isfinite(l_epvs) || !std::isfinite(l_lac) || !std::isfinite(l_excl)) {
    throw std::invalid_argument("total_loss: losses must be finite");
  }
  const double w_epvs = std::exp(-state.s_epvs);
  const double w_lac = std::exp(-state.s_lac);

  TotalLoss out;
  out.value = w_epvs * l_epvs + state.s_epvs + w_lac * l_lac + state.s_lac +
              state.lambda_excl * l_excl;
  out.d_s_epvs = -w_epvs * l_epvs + 1.0;
  out.d_s_lac = -w_lac * l_lac + 1.0;
  out.d_l_epvs = w_epvs;
  out.d_l_lac = w_lac;
  out.d_l_excl = state.lambda_excl;
  return out;
}

double deep_supervision_aggregate(const std::vector<double>& scale_losses,
                                  const std::vector<double>& weights) {
  if (scale_losses.size() != weights.size()) {
    throw std::invalid_argument(
        "deep_supervision_aggregate: losses and weights differ in length");
  }
  if (scale_losses.empty()) {
    throw std::invalid_argument("deep_supervision_aggregate: empty input");
  }
  double wsum = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0)) {
      throw std::invalid_argument(
          "deep_supervision_aggregate: weights must be >= 0");
    }
    wsum += weights[i];
    acc += weights[i] * scale_losses[i];
  }
  if (!(wsum > 0.0)) {
    throw std::invalid_argument("deep_supervision_aggregate: weights sum to 0");
  }
  return acc / wsum;
}

AttentionWeights AttentionWeights::zero_value_init(int channels, int reduction,
                                                   Rng& rng) {
  if (channels < 1 || reduction < 1 || channels % reduction != 0) {
    throw std::invalid_argument(
        "AttentionWeights: channels must be a positive multiple of the reduction");
  }
  AttentionWeights w;
  w.channels = channels;
  w.reduced = channels / reduction;
  const std::size_t qk = std::size_t(w.reduced) * channels;
  w.wq.resize(qk);
  w.wk.resize(qk);
  w.wv.assign(std::size_t(channels) * channels, 0.0);
  auto uniform = [&rng]() {
    return 2.0 * (double(rng()) / double(Rng::max())) - 1.0;
  };
  for (auto& v : w.wq) v = uniform();
  for (auto& v : w.wk) v = uniform();
  return w;
}

void AttentionWeights::validate() const {
  if (channels < 1 || reduced < 1 || channels % reduced != 0) {
    throw std::invalid_argument(
        "AttentionWeights: channel count must be a positive multiple of the "
        "bottleneck width");
  }
  const std::size_t qk = std::size_t(reduced) * channels;
  if (wq.size() != qk || wk.size() != qk ||
      wv.size() != std::size_t(channels) * channels) {
    throw std::invalid_argument("AttentionWeights: weight sizes do not match shape");
  }
}

AttentionOutput gated_attention_forward(const Tensor4D& f_lac,
                                        const Tensor4D& f_epvs,
                                        const AttentionWeights& w) {
  require_same_shape(f_lac, f_epvs, "gated_attention_forward");
  w.validate();
  const int C = f_lac.shape[0];
  if (C != w.channels) {
    throw std::invalid_argument(
        "gated_attention_forward: tensor channels do not match the weights");
  }

  const int D = f_lac.shape[1], H = f_lac.shape[2], W = f_lac.shape[3];
  const std::size_t spatial = f_lac.voxels_per_channel();
  const double scale = 1.0 / std::sqrt(double(w.reduced));

  AttentionOutput out;
  out.refined = f_lac;
  out.gate = Tensor3D(D, H, W);

  for (std::size_t v = 0; v < spatial; ++v) {
    double dot = 0.0;
    for (int cr = 0; cr < w.reduced; ++cr) {
      double q = 0.0, k = 0.0;
      const double* wq_row = w.wq.data() + std::size_t(cr) * C;
      const double* wk_row = w.wk.data() + std::size_t(cr) * C;
      for (int c = 0; c < C; ++c) {
        const double lac = f_lac.data[std::size_t(c) * spatial + v];
        const double epvs = f_epvs.data[std::size_t(c) * spatial + v];
        q += wq_row[c] * lac;
        k += wk_row[c] * epvs;
      }
      dot += q * k;
    }
    const double gate = sigmoid(scale * dot);
    out.gate.data[v] = gate;

    for (int c = 0; c < C; ++c) {
      const double* wv_row = w.wv.data() + std::size_t(c) * C;
      double value = 0.0;
      for (int c2 = 0; c2 < C; ++c2) {
        value += wv_row[c2] * f_epvs.data[std::size_t(c2) * spatial + v];
      }
      out.refined.data[std::size_t(c) * spatial + v] += gate * value;
    }
  }
  return out;
}

double finite_difference_check(const ScalarMap& fn, const Tensor4D& point,
                               double step) {
  if (!(step > 0.0)) {
    throw std::invalid_argument("finite_difference_check: step must be > 0");
  }
  const auto [value, grad] = fn(point);
  if (!std::isfinite(value)) {
    throw std::runtime_error("finite_difference_check: non-finite evaluation");
  }
  if (!grad.same_shape(point)) {
    throw std::runtime_error(
        "finite_difference_check: gradient shape does not match the point");
  }

  Tensor4D x = point;
  double max_rel = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x.data[i];
    x.data[i] = orig + step;
    const double f_plus = fn(x).first;
    x.data[i] = orig - step;
    const double f_minus = fn(x).first;
    x.data[i] = orig;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
      throw std::runtime_error("finite_difference_check: non-finite evaluation");
    }
    const double numeric = (f_plus - f_minus) / (2.0 * step);
    const double rel = std::abs(grad.data[i] - numeric) /
                       std::max(1e-12, std::abs(numeric));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace csvd
