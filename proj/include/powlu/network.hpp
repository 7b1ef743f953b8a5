#pragma once

// Gated FFN block with reverse-mode gradients, a top-1 routed MoE layer with
// a shared expert, and a plain Adam optimizer. The activation sits between
// the two linear layers exactly as in the pair form x1 * f(x2), with
// x1 = x w_up and x2 = x w_gate + gate_bias.

#include <cstddef>
#include <random>
#include <vector>

#include "powlu/activation.hpp"
#include "powlu/matrix.hpp"

namespace powlu {

struct FfnCache {
  Matrix x;    // batch x hidden
  Matrix x1;   // batch x d_ff, up projection
  Matrix x2;   // batch x d_ff, gate pre-activation
  Matrix act;  // batch x d_ff, x1 * f(x2)
};

struct FfnGrads {
  Matrix x;
  Matrix w_gate;
  Matrix w_up;
  Matrix w_down;
  Matrix gate_bias;
  Matrix fc1_dy;  // batch x 2*d_ff, [grad_x1 | grad_x2]: the gradient
                  // arriving at the fused first linear layer
};

class GluFfnBlock {
 public:
  Matrix w_gate;     // hidden x d_ff
  Matrix w_up;       // hidden x d_ff
  Matrix w_down;     // d_ff x hidden
  Matrix gate_bias;  // 1 x d_ff, zero unless an init override sets it
  ActivationKind kind;

  /// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, draw order
  /// w_gate, w_up, w_down.
  static GluFfnBlock init(std::size_t hidden, std::size_t d_ff,
                          const ActivationKind& kind, std::mt19937_64& rng) {
    GluFfnBlock b;
    const double bound_in = 1.0 / std::sqrt(double(hidden));
    const double bound_ff = 1.0 / std::sqrt(double(d_ff));
    b.w_gate = uniform_matrix(hidden, d_ff, -bound_in, bound_in, rng);
    b.w_up = uniform_matrix(hidden, d_ff, -bound_in, bound_in, rng);
    b.w_down = uniform_matrix(d_ff, hidden, -bound_ff, bound_ff, rng);
    b.gate_bias = Matrix(1, d_ff, 0.0);
    b.kind = kind;
    return b;
  }

  std::size_t hidden() const { return w_gate.rows(); }
  std::size_t d_ff() const { return w_gate.cols(); }

  Matrix forward(const Matrix& x, FfnCache* cache = nullptr) const {
    if (x.cols() != hidden())
      throw std::invalid_argument("ffn forward: input width != hidden");
    Matrix x1 = matmul(x, w_up);
    Matrix x2 = matmul(x, w_gate);
    for (std::size_t i = 0; i < x2.rows(); ++i)
      for (std::size_t j = 0; j < x2.cols(); ++j) x2(i, j) += gate_bias(0, j);
    Matrix act(x1.rows(), x1.cols());
    for (std::size_t i = 0; i < act.size(); ++i)
      act.values()[i] = eval_pair(kind, x1.values()[i], x2.values()[i]);
    Matrix y = matmul(act, w_down);
    if (cache) *cache = FfnCache{x, std::move(x1), std::move(x2), act};
    return y;
  }

  FfnGrads backward(const FfnCache& cache, const Matrix& upstream) const {
    if (upstream.rows() != cache.x.rows() || upstream.cols() != hidden())
      throw std::invalid_argument("ffn backward: upstream shape mismatch");
    const Matrix g_act = matmul(upstream, transpose(w_down));
    Matrix gx1(g_act.rows(), g_act.cols());
    Matrix gx2(g_act.rows(), g_act.cols());
    for (std::size_t i = 0; i < g_act.size(); ++i) {
      const PairGrad pg = pair_backward(kind, cache.x1.values()[i],
                                        cache.x2.values()[i], g_act.values()[i]);
      gx1.values()[i] = pg.x1;
      gx2.values()[i] = pg.x2;
    }
    FfnGrads grads;
    grads.w_down = matmul(transpose(cache.act), upstream);
    grads.w_up = matmul(transpose(cache.x), gx1);
    grads.w_gate = matmul(transpose(cache.x), gx2);
    grads.gate_bias = Matrix(1, d_ff());
    for (std::size_t i = 0; i < gx2.rows(); ++i)
      for (std::size_t j = 0; j < gx2.cols(); ++j)
        grads.gate_bias(0, j) += gx2(i, j);
    grads.x = matmul(gx1, transpose(w_up));
    add_inplace(grads.x, matmul(gx2, transpose(w_gate)));
    grads.fc1_dy = Matrix(gx1.rows(), 2 * gx1.cols());
    for (std::size_t i = 0; i < gx1.rows(); ++i)
      for (std::size_t j = 0; j < gx1.cols(); ++j) {
        grads.fc1_dy(i, j) = gx1(i, j);
        grads.fc1_dy(i, gx1.cols() + j) = gx2(i, j);
      }
    return grads;
  }
};

struct MoeCache {
  Matrix x;
  Matrix softmax;                // batch x n_experts
  std::vector<int> chosen;       // routed expert per token
  FfnCache shared_cache;
  Matrix shared_y;
  std::vector<std::vector<std::size_t>> expert_rows;  // token ids per expert
  std::vector<FfnCache> expert_caches;                // only filled when used
  std::vector<Matrix> expert_y;                       // gathered outputs
};

struct MoeGrads {
  Matrix x;
  Matrix router;
  FfnGrads shared;
  std::vector<FfnGrads> experts;  // empty FfnGrads for unused experts
};

/// Top-1 routing: each token goes through the shared expert plus exactly one
/// routed expert, weighted by the softmax probability of the chosen logit.
/// Ties break toward the lowest expert index.
class MoeLayer {
 public:
  std::vector<GluFfnBlock> experts;
  GluFfnBlock shared_expert;
  Matrix router;  // hidden x n_experts

  static MoeLayer init(std::size_t hidden, std::size_t d_ff,
                       std::size_t n_experts, const ActivationKind& kind,
                       std::mt19937_64& rng) {
    MoeLayer layer;
    layer.shared_expert = GluFfnBlock::init(hidden, d_ff, kind, rng);
    layer.experts.reserve(n_experts);
    for (std::size_t e = 0; e < n_experts; ++e)
      layer.experts.push_back(GluFfnBlock::init(hidden, d_ff, kind, rng));
    const double bound = 1.0 / std::sqrt(double(hidden));
    layer.router = uniform_matrix(hidden, n_experts, -bound, bound, rng);
    return layer;
  }

  std::size_t hidden() const { return shared_expert.hidden(); }
  std::size_t n_experts() const { return experts.size(); }

  Matrix forward(const Matrix& x, MoeCache* cache = nullptr,
                 std::vector<int>* routing_record = nullptr) const {
    if (x.cols() != hidden())
      throw std::invalid_argument("moe forward: input width != hidden");
    const Matrix logits = matmul(x, router);
    Matrix soft(logits.rows(), logits.cols());
    std::vector<int> chosen(x.rows(), 0);
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      std::size_t arg = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j)
        if (logits(i, j) > logits(i, arg)) arg = j;  // strict: ties keep lowest
      chosen[i] = int(arg);
      const double peak = logits(i, arg);
      double denom = 0.0;
      for (std::size_t j = 0; j < logits.cols(); ++j) {
        soft(i, j) = std::exp(logits(i, j) - peak);
        denom += soft(i, j);
      }
      for (std::size_t j = 0; j < logits.cols(); ++j) soft(i, j) /= denom;
    }

    std::vector<std::vector<std::size_t>> expert_rows(n_experts());
    for (std::size_t i = 0; i < x.rows(); ++i)
      expert_rows[std::size_t(chosen[i])].push_back(i);

    FfnCache shared_cache;
    Matrix shared_y = shared_expert.forward(x, &shared_cache);
    Matrix y = shared_y;

    std::vector<FfnCache> expert_caches(n_experts());
    std::vector<Matrix> expert_y(n_experts());
    for (std::size_t e = 0; e < n_experts(); ++e) {
      const auto& rows = expert_rows[e];
      if (rows.empty()) continue;
      Matrix sub(rows.size(), hidden());
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < hidden(); ++c) sub(r, c) = x(rows[r], c);
      expert_y[e] = experts[e].forward(sub, &expert_caches[e]);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::size_t tok = rows[r];
        const double w = soft(tok, std::size_t(chosen[tok]));
        for (std::size_t c = 0; c < hidden(); ++c)
          y(tok, c) += w * expert_y[e](r, c);
      }
    }

    if (routing_record) *routing_record = chosen;
    if (cache)
      *cache = MoeCache{x,
                        std::move(soft),
                        std::move(chosen),
                        std::move(shared_cache),
                        std::move(shared_y),
                        std::move(expert_rows),
                        std::move(expert_caches),
                        std::move(expert_y)};
    return y;
  }

  MoeGrads backward(const MoeCache& cache, const Matrix& upstream) const {
    MoeGrads grads;
    grads.shared = shared_expert.backward(cache.shared_cache, upstream);
    grads.x = grads.shared.x;
    grads.experts.resize(n_experts());
    for (std::size_t e = 0; e < n_experts(); ++e) {
      // zero-shaped grads so the optimizer can treat unused experts uniformly
      grads.experts[e].w_gate = Matrix(hidden(), experts[e].d_ff());
      grads.experts[e].w_up = Matrix(hidden(), experts[e].d_ff());
      grads.experts[e].w_down = Matrix(experts[e].d_ff(), hidden());
      grads.experts[e].gate_bias = Matrix(1, experts[e].d_ff());
    }

    Matrix d_logits(cache.x.rows(), n_experts());
    for (std::size_t e = 0; e < n_experts(); ++e) {
      const auto& rows = cache.expert_rows[e];
      if (rows.empty()) continue;
      Matrix sub_up(rows.size(), hidden());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::size_t tok = rows[r];
        const double w = cache.softmax(tok, e);
        for (std::size_t c = 0; c < hidden(); ++c)
          sub_up(r, c) = w * upstream(tok, c);
      }
      grads.experts[e] = experts[e].backward(cache.expert_caches[e], sub_up);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::size_t tok = rows[r];
        // d loss / d softmax weight of the chosen expert
        double dw = 0.0;
        for (std::size_t c = 0; c < hidden(); ++c)
          dw += upstream(tok, c) * cache.expert_y[e](r, c);
        for (std::size_t j = 0; j < n_experts(); ++j) {
          const double delta = j == e ? 1.0 : 0.0;
          d_logits(tok, j) =
              dw * cache.softmax(tok, e) * (delta - cache.softmax(tok, j));
        }
        // sub_up already carried the softmax weight, so this is w * E'(x)
        for (std::size_t c = 0; c < hidden(); ++c)
          grads.x(tok, c) += grads.experts[e].x(r, c);
      }
    }
    grads.router = matmul(transpose(cache.x), d_logits);
    add_inplace(grads.x, matmul(d_logits, transpose(router)));
    return grads;
  }
};

struct AdamState {
  Matrix m;
  Matrix v;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update; step counts updates and starts at 1.
inline void adam_step(Matrix& param, const Matrix& grad, AdamState& state,
                      const AdamConfig& cfg, long step) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols())
    throw std::invalid_argument("adam_step: grad shape mismatch");
  if (state.m.size() == 0) {
    state.m = Matrix(param.rows(), param.cols());
    state.v = Matrix(param.rows(), param.cols());
  }
  if (state.m.rows() != param.rows() || state.m.cols() != param.cols())
    throw std::invalid_argument("adam_step: state shape mismatch");
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.values()[i];
    double& m = state.m.values()[i];
    double& v = state.v.values()[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    param.values()[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

}  // namespace powlu
