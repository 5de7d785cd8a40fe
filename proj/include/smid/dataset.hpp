#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "smid/lti_sim.hpp"
#include "smid/types.hpp"

namespace smid {

/// Layout of the horizon-p regressor
///   [y(k) .. y(k-o+1) | u(k+p-1) .. u(k-o+1)]
/// whose dimension is 2o + p - 1.
struct RegressorLayout {
  int order = 1;
  int horizon = 1;

  RegressorLayout() = default;
  RegressorLayout(int o, int p) : order(o), horizon(p) {
    require(o >= 1, "model order must be >= 1");
    require(p >= 1, "horizon must be >= 1");
  }

  int dim() const { return 2 * order + horizon - 1; }
  int output_size() const { return order; }
  int input_size() const { return order + horizon - 1; }
  int input_offset() const { return order; }

  bool operator==(const RegressorLayout&) const = default;
};

enum class TargetChannel { measured, noise_free };

/// Regressor/target pairs for one horizon. Row i stacks the regressor at
/// record index source[i]; the target is the output p samples later.
struct SampleSet {
  RegressorLayout layout;
  RowMatrix rows;
  Vector targets;
  std::vector<std::size_t> source;

  int size() const { return static_cast<int>(rows.rows()); }
  int dim() const { return layout.dim(); }
};

/// Builds only at indices where every lag exists; no zero padding.
inline SampleSet build_sample_set(const IORecord& io, int o, int p,
                                  TargetChannel target = TargetChannel::measured) {
  const RegressorLayout layout(o, p);
  const auto N = static_cast<long>(io.size());
  require(io.y.size() == io.u.size() && io.z.size() == io.u.size(),
          "record channels have different lengths");
  require(N >= o + p, "record too short for the requested order and horizon");
  const long first = o - 1;
  const long last = N - p - 1;
  const long count = last - first + 1;
  SampleSet s;
  s.layout = layout;
  s.rows.resize(count, layout.dim());
  s.targets.resize(count);
  s.source.resize(static_cast<std::size_t>(count));
  const auto& out = target == TargetChannel::measured ? io.y : io.z;
  for (long i = 0; i < count; ++i) {
    const long k = first + i;
    for (int j = 0; j < o; ++j) s.rows(i, j) = io.y[static_cast<std::size_t>(k - j)];
    for (int j = 0; j < layout.input_size(); ++j) {
      s.rows(i, o + j) = io.u[static_cast<std::size_t>(k + p - 1 - j)];
    }
    s.targets(i) = out[static_cast<std::size_t>(k + p)];
    s.source[static_cast<std::size_t>(i)] = static_cast<std::size_t>(k);
  }
  return s;
}

/// Keeps the listed rows (in the given order).
inline SampleSet select_rows(const SampleSet& s, const std::vector<int>& keep) {
  SampleSet out;
  out.layout = s.layout;
  out.rows.resize(static_cast<long>(keep.size()), s.dim());
  out.targets.resize(static_cast<long>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    require(keep[i] >= 0 && keep[i] < s.size(), "row index out of range");
    out.rows.row(static_cast<long>(i)) = s.rows.row(keep[i]);
    out.targets(static_cast<long>(i)) = s.targets(keep[i]);
    out.source.push_back(s.source[static_cast<std::size_t>(keep[i])]);
  }
  return out;
}

namespace detail {

inline IORecord slice(const IORecord& io, std::size_t begin, std::size_t count) {
  IORecord r = io;
  auto cut = [&](const std::vector<double>& v) {
    return std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(begin),
                               v.begin() + static_cast<std::ptrdiff_t>(begin + count));
  };
  r.u = cut(io.u);
  r.z = cut(io.z);
  r.y = cut(io.y);
  return r;
}

}  // namespace detail

/// Contiguous identification / validation segments; each starts at k = 0.
inline std::pair<IORecord, IORecord> split(const IORecord& io, std::size_t n_id, std::size_t n_val) {
  require(n_id + n_val <= io.size(), "not enough samples for the requested split");
  return {detail::slice(io, 0, n_id), detail::slice(io, n_id, n_val)};
}

}  // namespace smid
