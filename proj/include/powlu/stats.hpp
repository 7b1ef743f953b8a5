#pragma once

// Training diagnostics: percentile bands of tensor value distributions,
// sorted channel L2-norm maps, and FP8 range-saturation counts, plus the
// CSV exporters for all three logs.
//
// Percentiles are exact (full sort, linear interpolation between order
// statistics at rank (p/100)*(n-1)); desk-scale tensors make streaming
// sketches unnecessary. FP8 emulation counts range exceedance only, it does
// not simulate rounding.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "powlu/matrix.hpp"

namespace powlu {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shortest decimal string that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::invalid_argument("bad number: " + std::string(s));
  return v;
}

/// Linear interpolation between order statistics at rank (p/100)*(n-1);
/// p = 0 gives the minimum, p = 100 the maximum.
inline double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  if (!(p >= 0.0 && p <= 100.0))
    throw std::invalid_argument("percentile: p out of [0, 100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = (p / 100.0) * double(sorted.size() - 1);
  const std::size_t lo = std::size_t(rank);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = rank - double(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// The six order statistics of one tensor at one training step.
struct PercentileBand {
  std::string tag;
  long step = 0;
  double min = 0.0;
  double p1 = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  double p99 = 0.0;
  double max = 0.0;
  bool operator==(const PercentileBand&) const = default;
};

inline PercentileBand record_band(std::string tag, long step, const Matrix& t) {
  if (t.empty()) throw std::invalid_argument("record_band: empty tensor");
  const std::span<const double> v = t.values();
  return {std::move(tag), step,          percentile(v, 0.0),
          percentile(v, 1.0),  percentile(v, 25.0), percentile(v, 75.0),
          percentile(v, 99.0), percentile(v, 100.0)};
}

enum class ChannelAxis { rows, cols };

/// Per-channel L2 norms sorted descending, ties broken by ascending channel
/// index.
struct ChannelNormMap {
  std::string tag;
  long step = 0;
  std::vector<std::pair<std::size_t, double>> sorted_norms;
  bool operator==(const ChannelNormMap&) const = default;
};

inline ChannelNormMap channel_norms(std::string tag, long step, const Matrix& t,
                                    ChannelAxis axis) {
  if (t.empty()) throw std::invalid_argument("channel_norms: empty tensor");
  const std::size_t n = axis == ChannelAxis::cols ? t.cols() : t.rows();
  std::vector<std::pair<std::size_t, double>> norms(n);
  for (std::size_t c = 0; c < n; ++c) {
    double acc = 0.0;
    if (axis == ChannelAxis::cols)
      for (std::size_t r = 0; r < t.rows(); ++r) acc += t(r, c) * t(r, c);
    else
      for (std::size_t j = 0; j < t.cols(); ++j) acc += t(c, j) * t(c, j);
    norms[c] = {c, std::sqrt(acc)};
  }
  std::stable_sort(norms.begin(), norms.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return {std::move(tag), step, std::move(norms)};
}

enum class Fp8Format { e4m3, e5m2 };

constexpr double fp8_max(Fp8Format f) {
  return f == Fp8Format::e4m3 ? 448.0 : 57344.0;
}

constexpr std::string_view to_string(Fp8Format f) {
  return f == Fp8Format::e4m3 ? "e4m3" : "e5m2";
}

inline Fp8Format fp8_format_from_string(std::string_view s) {
  if (s == "e4m3") return Fp8Format::e4m3;
  if (s == "e5m2") return Fp8Format::e5m2;
  throw std::invalid_argument("unknown fp8 format: " + std::string(s));
}

/// Fraction of entries whose magnitude exceeds the format's largest
/// representable value.
struct SaturationStat {
  std::string tag;
  long step = 0;
  Fp8Format format = Fp8Format::e4m3;
  double saturated_fraction = 0.0;
  double max_abs = 0.0;
  bool operator==(const SaturationStat&) const = default;
};

inline SaturationStat fp8_saturation(std::string tag, long step, const Matrix& t,
                                     Fp8Format format) {
  if (t.empty()) throw std::invalid_argument("fp8_saturation: empty tensor");
  const double limit = fp8_max(format);
  std::size_t over = 0;
  double max_abs = 0.0;
  for (double v : t.values()) {
    const double a = std::abs(v);
    if (a > limit) ++over;
    if (a > max_abs) max_abs = a;
  }
  return {std::move(tag), step, format, double(over) / double(t.size()), max_abs};
}

/// One run's accumulated diagnostics.
struct InstrumentationLog {
  std::vector<PercentileBand> bands;
  std::vector<ChannelNormMap> channels;
  std::vector<SaturationStat> saturation;

  void record(const std::string& tag, long step, const Matrix& tensor,
              ChannelAxis axis) {
    bands.push_back(record_band(tag, step, tensor));
    channels.push_back(channel_norms(tag, step, tensor, axis));
    saturation.push_back(fp8_saturation(tag, step, tensor, Fp8Format::e4m3));
    saturation.push_back(fp8_saturation(tag, step, tensor, Fp8Format::e5m2));
  }

  bool operator==(const InstrumentationLog&) const = default;
};

namespace detail {

template <typename T>
std::vector<const T*> sorted_by_tag_step(std::span<const T> items) {
  std::vector<const T*> ptrs;
  ptrs.reserve(items.size());
  for (const T& item : items) ptrs.push_back(&item);
  std::stable_sort(ptrs.begin(), ptrs.end(), [](const T* a, const T* b) {
    if (a->tag != b->tag) return a->tag < b->tag;
    return a->step < b->step;
  });
  return ptrs;
}

inline void write_file(const std::filesystem::path& path,
                       std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << content;
  if (!out.good()) throw IoError("write failed: " + path.string());
}

}  // namespace detail

inline std::string export_bands(std::span<const PercentileBand> bands) {
  std::string out = "tag,step,min,p1,p25,p75,p99,max\n";
  for (const PercentileBand* b : detail::sorted_by_tag_step(bands)) {
    out += b->tag;
    out += ',' + std::to_string(b->step);
    for (double v : {b->min, b->p1, b->p25, b->p75, b->p99, b->max})
      out += ',' + format_double(v);
    out += '\n';
  }
  return out;
}

inline std::string export_channels(std::span<const ChannelNormMap> maps) {
  std::string out = "tag,step,rank,channel_index,l2_norm\n";
  for (const ChannelNormMap* m : detail::sorted_by_tag_step(maps)) {
    for (std::size_t rank = 0; rank < m->sorted_norms.size(); ++rank) {
      out += m->tag;
      out += ',' + std::to_string(m->step);
      out += ',' + std::to_string(rank);
      out += ',' + std::to_string(m->sorted_norms[rank].first);
      out += ',' + format_double(m->sorted_norms[rank].second);
      out += '\n';
    }
  }
  return out;
}

inline std::string export_saturation(std::span<const SaturationStat> stats) {
  std::string out = "tag,step,format,saturated_fraction,max_abs\n";
  for (const SaturationStat* s : detail::sorted_by_tag_step(stats)) {
    out += s->tag;
    out += ',' + std::to_string(s->step);
    out += ',';
    out += to_string(s->format);
    out += ',' + format_double(s->saturated_fraction);
    out += ',' + format_double(s->max_abs);
    out += '\n';
  }
  return out;
}

inline void export_bands(std::span<const PercentileBand> bands,
                         const std::filesystem::path& path) {
  detail::write_file(path, export_bands(bands));
}
inline void export_channels(std::span<const ChannelNormMap> maps,
                            const std::filesystem::path& path) {
  detail::write_file(path, export_channels(maps));
}
inline void export_saturation(std::span<const SaturationStat> stats,
                              const std::filesystem::path& path) {
  detail::write_file(path, export_saturation(stats));
}

}  // namespace powlu
