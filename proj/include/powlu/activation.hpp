#pragma once

// Scalar activation functions and their analytic first derivatives.
//
// Every function comes in two forms: the self-gated form used for plotting
// (eval_self, both factors fed the same input) and the pair-gated form used
// inside gated FFN layers (eval_pair / pair_backward, x1 * f(x2)).
//
// All gated kinds share one negative branch, x^2 * sigmoid(x), evaluated by
// a single helper so that results agree bitwise across kinds for x <= 0.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace powlu {

enum class Activation { PowLU, SwiGLU, SwiGLUClip, SiLU, AblA, AblB, AblC };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::PowLU: return "powlu";
    case Activation::SwiGLU: return "swiglu";
    case Activation::SwiGLUClip: return "swiglu_clip";
    case Activation::SiLU: return "silu";
    case Activation::AblA: return "abl_a";
    case Activation::AblB: return "abl_b";
    case Activation::AblC: return "abl_c";
  }
  return "?";
}

inline Activation activation_from_string(std::string_view name) {
  if (name == "powlu") return Activation::PowLU;
  if (name == "swiglu") return Activation::SwiGLU;
  if (name == "swiglu_clip") return Activation::SwiGLUClip;
  if (name == "silu") return Activation::SiLU;
  if (name == "abl_a") return Activation::AblA;
  if (name == "abl_b") return Activation::AblB;
  if (name == "abl_c") return Activation::AblC;
  throw std::invalid_argument("unknown activation: " + std::string(name));
}

/// Selects one of the seven activation formulas plus its parameters.
/// Construct through the named factories; they validate the parameter ranges
/// (0 < m < 10 for PowLU, m > 0 for the ablation kinds, clip > 0).
struct ActivationKind {
  Activation variant = Activation::SwiGLU;
  double m = 3.0;
  double clip = 7.0;

  static ActivationKind powlu(double m = 3.0) {
    if (!(m > 0.0 && m < 10.0))
      throw std::invalid_argument("powlu: m must satisfy 0 < m < 10");
    return {Activation::PowLU, m, 7.0};
  }
  static ActivationKind swiglu() { return {Activation::SwiGLU, 3.0, 7.0}; }
  static ActivationKind swiglu_clip(double clip = 7.0) {
    if (!(clip > 0.0))
      throw std::invalid_argument("swiglu_clip: clip must be positive");
    return {Activation::SwiGLUClip, 3.0, clip};
  }
  static ActivationKind silu() { return {Activation::SiLU, 3.0, 7.0}; }
  static ActivationKind abl_a(double m = 3.0) { return ablation(Activation::AblA, m); }
  static ActivationKind abl_b(double m = 3.0) { return ablation(Activation::AblB, m); }
  static ActivationKind abl_c(double m = 3.0) { return ablation(Activation::AblC, m); }

  bool uses_m() const {
    return variant == Activation::PowLU || variant == Activation::AblA ||
           variant == Activation::AblB || variant == Activation::AblC;
  }

  /// Short label for reports, e.g. "powlu(m=3)" or "swiglu".
  std::string label() const {
    std::string s{to_string(variant)};
    if (uses_m()) {
      s += "(m=";
      s += format_m();
      s += ")";
    }
    return s;
  }

  bool operator==(const ActivationKind&) const = default;

 private:
  static ActivationKind ablation(Activation v, double m) {
    if (!(m > 0.0))
      throw std::invalid_argument("ablation kind: m must be positive");
    return {v, m, 7.0};
  }
  std::string format_m() const {
    // trims "3.000000" to "3", keeps "2.5" as "2.5"
    std::string s = std::to_string(m);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }
};

inline ActivationKind make_kind(Activation variant, double m, double clip) {
  switch (variant) {
    case Activation::PowLU: return ActivationKind::powlu(m);
    case Activation::SwiGLU: return ActivationKind::swiglu();
    case Activation::SwiGLUClip: return ActivationKind::swiglu_clip(clip);
    case Activation::SiLU: return ActivationKind::silu();
    case Activation::AblA: return ActivationKind::abl_a(m);
    case Activation::AblB: return ActivationKind::abl_b(m);
    case Activation::AblC: return ActivationKind::abl_c(m);
  }
  throw std::invalid_argument("make_kind: bad variant");
}

/// Numerically stable logistic function, sign-split so that exp() never
/// overflows even for |x| up to 1e6 and beyond.
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double silu(double x) { return x * sigmoid(x); }

inline double silu_derivative(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

enum class Branch { positive, nonpositive };

/// Value and analytic first derivative at one point, tagged with the branch
/// that produced it (branch == nonpositive iff the input was <= 0).
struct ScalarEval {
  double value = 0.0;
  double derivative = 0.0;
  Branch branch = Branch::nonpositive;
};

namespace detail {

/// phi(t) = t + 1 - t ln t, the auxiliary function controlling the sign of
/// PowLU's log-derivative. Caller guarantees t > 0.
inline double phi_aux(double t) { return t + 1.0 - t * std::log(t); }

/// Logarithmic derivative of PowLU's positive branch,
///   g'(x) = ((t+1)^2 + m phi(t)) / (t^2 (t+1)^2) + 1/(1+e^x),  t = sqrt(x).
/// The last term is sigmoid(-x) so it cannot overflow. Caller guarantees x > 0.
inline double powlu_log_derivative(double x, double m) {
  const double t = std::sqrt(x);
  const double t1 = t + 1.0;
  return (t1 * t1 + m * phi_aux(t)) / (t * t * t1 * t1) + sigmoid(-x);
}

/// PowLU positive-branch value x^{1 + m/(sqrt(x)+1)} * sigmoid(x), computed
/// in log space so small bases underflow gracefully instead of losing
/// accuracy in pow(). Caller guarantees x > 0.
inline double powlu_pos_value(double x, double m) {
  return std::exp((1.0 + m / (std::sqrt(x) + 1.0)) * std::log(x)) * sigmoid(x);
}

/// Shared negative branch x^2 * sigmoid(x); also the SwiGLU self form on the
/// whole axis. All gated kinds route x <= 0 through this exact expression.
inline ScalarEval swiglu_self(double x) {
  const double s = sigmoid(x);
  const double v = x * x * s;
  const double d = 2.0 * x * s + x * x * s * (1.0 - s);
  return {v, d, x > 0.0 ? Branch::positive : Branch::nonpositive};
}

inline double clamp_sym(double x, double c) { return std::min(std::max(x, -c), c); }

}  // namespace detail

/// Gate factor f(x) of the pair form x1 * f(x2). For every kind the self form
/// satisfies eval_self(kind, x) = x * gate_value(kind, x) for x > 0 (below the
/// clip threshold for SwiGLUClip). The x <= 0 gate is SiLU for all gated
/// kinds.
inline double gate_value(const ActivationKind& k, double x) {
  switch (k.variant) {
    case Activation::PowLU:
      if (x > 0.0)
        return std::exp((k.m / (std::sqrt(x) + 1.0)) * std::log(x)) * sigmoid(x);
      return silu(x);
    case Activation::SwiGLU:
      return silu(x);
    case Activation::SwiGLUClip:
      return silu(std::min(x, k.clip));
    case Activation::SiLU:
      return sigmoid(x);
    case Activation::AblA:
      if (x > 0.0) return std::exp((k.m / x) * std::log(x));
      return silu(x);
    case Activation::AblB:
      if (x > 0.0) return std::exp((k.m / (x + 1.0)) * std::log(x));
      return silu(x);
    case Activation::AblC:
      if (x > 0.0) return std::exp((k.m / (x + 1.0)) * std::log(x)) * sigmoid(x);
      return silu(x);
  }
  throw std::invalid_argument("gate_value: bad kind");
}

/// Analytic derivative of the gate factor. At x = 0 the SiLU branch applies,
/// so f'(0) = 0.5 for every gated kind; the gate-only right limit at 0+ is 0
/// for the power-form kinds, a one-sided kink that the self-gated product
/// does not have.
inline double gate_derivative(const ActivationKind& k, double x) {
  switch (k.variant) {
    case Activation::PowLU: {
      if (x > 0.0) {
        const double f = gate_value(k, x);
        if (f == 0.0) return 0.0;  // graceful underflow region
        const double t = std::sqrt(x);
        const double t1 = t + 1.0;
        return f * (k.m * detail::phi_aux(t) / (t * t * t1 * t1) + sigmoid(-x));
      }
      return silu_derivative(x);
    }
    case Activation::SwiGLU:
      return silu_derivative(x);
    case Activation::SwiGLUClip:
      return x <= k.clip ? silu_derivative(x) : 0.0;
    case Activation::SiLU: {
      const double s = sigmoid(x);
      return s * (1.0 - s);
    }
    case Activation::AblA: {
      if (x > 0.0) {
        const double f = gate_value(k, x);
        if (f == 0.0) return 0.0;
        return f * k.m * (1.0 - std::log(x)) / (x * x);
      }
      return silu_derivative(x);
    }
    case Activation::AblB: {
      if (x > 0.0) {
        const double f = gate_value(k, x);
        if (f == 0.0) return 0.0;
        const double x1 = x + 1.0;
        return f * k.m * ((x1 / x) - std::log(x)) / (x1 * x1);
      }
      return silu_derivative(x);
    }
    case Activation::AblC: {
      if (x > 0.0) {
        const double f = gate_value(k, x);
        if (f == 0.0) return 0.0;
        const double x1 = x + 1.0;
        return f * (k.m * ((x1 / x) - std::log(x)) / (x1 * x1) + sigmoid(-x));
      }
      return silu_derivative(x);
    }
  }
  throw std::invalid_argument("gate_derivative: bad kind");
}

/// Self-gated evaluation (both projections equal), with the analytic first
/// derivative. Underflow to 0 near x -> 0+ is correct behavior, never NaN.
inline ScalarEval eval_self(const ActivationKind& k, double x) {
  switch (k.variant) {
    case Activation::PowLU: {
      if (x > 0.0) {
        const double v = detail::powlu_pos_value(x, k.m);
        const double d = v == 0.0 ? 0.0 : v * detail::powlu_log_derivative(x, k.m);
        return {v, d, Branch::positive};
      }
      return detail::swiglu_self(x);
    }
    case Activation::SwiGLU:
      return detail::swiglu_self(x);
    case Activation::SwiGLUClip: {
      if (x > k.clip) return {k.clip * silu(k.clip), 0.0, Branch::positive};
      if (x < -k.clip)
        return {-k.clip * silu(x), -k.clip * silu_derivative(x), Branch::nonpositive};
      return detail::swiglu_self(x);  // identical to SwiGLU on [-clip, clip]
    }
    case Activation::SiLU: {
      const double s = sigmoid(x);
      return {x * s, s * (1.0 + x * (1.0 - s)),
              x > 0.0 ? Branch::positive : Branch::nonpositive};
    }
    case Activation::AblA: {
      if (x > 0.0) {
        const double v = std::exp((1.0 + k.m / x) * std::log(x));
        const double d =
            v == 0.0 ? 0.0
                     : v * ((1.0 + k.m / x) / x - k.m * std::log(x) / (x * x));
        return {v, d, Branch::positive};
      }
      return detail::swiglu_self(x);
    }
    case Activation::AblB: {
      if (x > 0.0) {
        const double x1 = x + 1.0;
        const double v = std::exp((1.0 + k.m / x1) * std::log(x));
        const double d =
            v == 0.0 ? 0.0
                     : v * ((1.0 + k.m / x1) / x - k.m * std::log(x) / (x1 * x1));
        return {v, d, Branch::positive};
      }
      return detail::swiglu_self(x);
    }
    case Activation::AblC: {
      if (x > 0.0) {
        const double x1 = x + 1.0;
        const double s = sigmoid(x);
        const double v = std::exp((1.0 + k.m / x1) * std::log(x)) * s;
        const double d =
            v == 0.0
                ? 0.0
                : v * ((1.0 + k.m / x1) / x - k.m * std::log(x) / (x1 * x1) +
                       (1.0 - s));
        return {v, d, Branch::positive};
      }
      return detail::swiglu_self(x);
    }
  }
  throw std::invalid_argument("eval_self: bad kind");
}

/// Pair-gated network form x1 * f(x2). SwiGLUClip additionally clamps the
/// linear component to [-clip, clip] and caps the gate pre-activation.
inline double eval_pair(const ActivationKind& k, double x1, double x2) {
  if (k.variant == Activation::SwiGLUClip)
    return detail::clamp_sym(x1, k.clip) * gate_value(k, x2);
  return x1 * gate_value(k, x2);
}

struct PairGrad {
  double x1 = 0.0;
  double x2 = 0.0;
};

/// Chain rule through eval_pair: grad_x1 = upstream * f(x2),
/// grad_x2 = upstream * x1 * f'(x2).
inline PairGrad pair_backward(const ActivationKind& k, double x1, double x2,
                              double upstream) {
  const double f = gate_value(k, x2);
  const double fd = gate_derivative(k, x2);
  if (k.variant == Activation::SwiGLUClip) {
    const double pass = std::abs(x1) <= k.clip ? 1.0 : 0.0;
    return {upstream * f * pass, upstream * detail::clamp_sym(x1, k.clip) * fd};
  }
  return {upstream * f, upstream * x1 * fd};
}

}  // namespace powlu
