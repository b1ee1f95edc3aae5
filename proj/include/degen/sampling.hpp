#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "degen/errors.hpp"
#include "degen/tape.hpp"
#include "degen/vf_algebra.hpp"

namespace degen {

/// Axis-aligned box, lo/hi per axis.
struct Box {
  std::vector<double> lo, hi;
  int dim() const { return static_cast<int>(lo.size()); }

  static Box from_flat(std::span<const double> flat) {
    Box b;
    for (std::size_t i = 0; i + 1 < flat.size(); i += 2) {
      b.lo.push_back(flat[i]);
      b.hi.push_back(flat[i + 1]);
    }
    return b;
  }

  double diameter() const {
    double s = 0.0;
    for (std::size_t i = 0; i < lo.size(); ++i) s += (hi[i] - lo[i]) * (hi[i] - lo[i]);
    return std::sqrt(s);
  }

  std::vector<double> flat() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < lo.size(); ++i) {
      out.push_back(lo[i]);
      out.push_back(hi[i]);
    }
    return out;
  }
};

/// Full lattice over the box, res points per axis including endpoints,
/// row-major with the last axis fastest.
inline std::vector<std::vector<double>> lattice(const Box& box, int res) {
  if (res < 2) throw Error("lattice: resolution must be >= 2");
  const int d = box.dim();
  std::size_t total = 1;
  for (int i = 0; i < d; ++i) total *= static_cast<std::size_t>(res);
  std::vector<std::vector<double>> pts;
  pts.reserve(total);
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  std::vector<double> p(static_cast<std::size_t>(d));
  for (std::size_t count = 0; count < total; ++count) {
    for (int i = 0; i < d; ++i)
      p[static_cast<std::size_t>(i)] =
          box.lo[static_cast<std::size_t>(i)] +
          (box.hi[static_cast<std::size_t>(i)] - box.lo[static_cast<std::size_t>(i)]) *
              idx[static_cast<std::size_t>(i)] / (res - 1);
    pts.push_back(p);
    for (int i = d - 1; i >= 0; --i) {
      if (++idx[static_cast<std::size_t>(i)] < res) break;
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
  return pts;
}

inline std::vector<std::vector<double>> filter_points(std::vector<std::vector<double>> pts,
                                                      const std::function<bool(std::span<const double>)>& keep) {
  std::vector<std::vector<double>> out;
  out.reserve(pts.size());
  for (auto& p : pts)
    if (keep(p)) out.push_back(std::move(p));
  return out;
}

/// Deterministic bounding box for {phi > 0}: coarse scan of [-10,10]^d with
/// one refinement pass, padded by one coarse cell.
inline Box auto_bounding_box(const CompiledExpr& phi, int dim) {
  const double kRange = 10.0;
  const int kRes = dim <= 2 ? 201 : 61;
  Box scan;
  scan.lo.assign(static_cast<std::size_t>(dim), -kRange);
  scan.hi.assign(static_cast<std::size_t>(dim), kRange);
  std::vector<double> stack(static_cast<std::size_t>(std::max(phi.stack_need(), 1)));
  auto positive_box = [&](const Box& b, int res, Box& out) {
    bool found = false;
    out.lo.assign(static_cast<std::size_t>(dim), 0.0);
    out.hi.assign(static_cast<std::size_t>(dim), 0.0);
    for (const auto& p : lattice(b, res)) {
      if (phi.eval(p.data(), stack.data()) > 0.0) {
        if (!found) {
          out.lo.assign(p.begin(), p.end());
          out.hi.assign(p.begin(), p.end());
          found = true;
        } else {
          for (int i = 0; i < dim; ++i) {
            out.lo[static_cast<std::size_t>(i)] = std::min(out.lo[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(i)]);
            out.hi[static_cast<std::size_t>(i)] = std::max(out.hi[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(i)]);
          }
        }
      }
    }
    return found;
  };
  Box rough;
  if (!positive_box(scan, kRes, rough))
    throw GeometryError("auto_bounding_box: no point of {phi > 0} found in [-10,10]^d");
  const double cell = 2.0 * kRange / (kRes - 1);
  Box padded;
  for (int i = 0; i < dim; ++i) {
    padded.lo.push_back(rough.lo[static_cast<std::size_t>(i)] - 2.0 * cell);
    padded.hi.push_back(rough.hi[static_cast<std::size_t>(i)] + 2.0 * cell);
  }
  Box fine;
  if (!positive_box(padded, kRes, fine)) return padded;
  const int d = dim;
  Box out;
  for (int i = 0; i < d; ++i) {
    double fcell = (padded.hi[static_cast<std::size_t>(i)] - padded.lo[static_cast<std::size_t>(i)]) / (kRes - 1);
    out.lo.push_back(fine.lo[static_cast<std::size_t>(i)] - fcell);
    out.hi.push_back(fine.hi[static_cast<std::size_t>(i)] + fcell);
  }
  return out;
}

/// Points on {level = 0}: sign changes along lattice lines are bisected and
/// Newton-polished along the gradient to |level| <= tol. Deterministic order;
/// uniformly strided down to max_samples when the crossing count exceeds it.
inline std::vector<std::vector<double>> level_crossing_samples(
    const Hypersurface& surf, const Box& box, int res,
    const std::function<bool(std::span<const double>)>& keep = {}, std::size_t max_samples = 2048,
    double tol = 1e-12) {
  const int d = box.dim();
  std::vector<std::vector<double>> found;
  auto pts = lattice(box, res);
  std::vector<std::size_t> strides(static_cast<std::size_t>(d), 1);  // last axis fastest
  for (int i = d - 2; i >= 0; --i)
    strides[static_cast<std::size_t>(i)] =
        strides[static_cast<std::size_t>(i + 1)] * static_cast<std::size_t>(res);
  std::vector<double> vals(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = surf.value(pts[i]);
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (vals[i] == 0.0 && (!keep || keep(pts[i]))) found.push_back(pts[i]);
  for (int axis = 0; axis < d; ++axis) {
    std::size_t stride = strides[static_cast<std::size_t>(axis)];
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t along = (i / stride) % static_cast<std::size_t>(res);
      if (along + 1 >= static_cast<std::size_t>(res)) continue;
      std::size_t j = i + stride;
      double a = vals[i], b = vals[j];
      if (!(std::isfinite(a) && std::isfinite(b))) continue;
      if (a == 0.0 || b == 0.0) continue;  // captured by the lattice scan
      if ((a > 0.0) == (b > 0.0)) continue;
      std::vector<double> lo = pts[i], hi = pts[j];
      for (int it = 0; it < 60; ++it) {
        std::vector<double> mid(lo.size());
        for (std::size_t m = 0; m < lo.size(); ++m) mid[m] = 0.5 * (lo[m] + hi[m]);
        double v = surf.value(mid);
        if ((v > 0.0) == (a > 0.0)) lo = std::move(mid);
        else hi = std::move(mid);
      }
      try {
        auto y = surf.project(lo, 8, tol);
        if (std::fabs(surf.value(y)) <= tol && (!keep || keep(y))) found.push_back(std::move(y));
      } catch (const GeometryError&) {
        // skip stalled projections
      }
    }
  }
  if (found.size() > max_samples) {
    std::vector<std::vector<double>> thin;
    double step = static_cast<double>(found.size()) / static_cast<double>(max_samples);
    for (std::size_t k = 0; k < max_samples; ++k)
      thin.push_back(found[static_cast<std::size_t>(k * step)]);
    return thin;
  }
  return found;
}

}  // namespace degen
