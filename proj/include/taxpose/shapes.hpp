#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "taxpose/geometry.hpp"

namespace taxpose {

enum class ShapeKind { Box, OpenBox, Cylinder, NotchedBlock, URack, RingPost, CappedPeg };

std::string to_string(ShapeKind k);
ShapeKind shape_kind_from_string(const std::string& s);

/// A parametric primitive. Missing parameters take the kind's defaults (see
/// default_shape_params). Every shape rests on z = 0 in its own frame.
struct ShapeDescriptor {
  ShapeKind kind = ShapeKind::Box;
  std::map<std::string, double> params;

  double param(const std::string& name) const;
  bool operator==(const ShapeDescriptor&) const = default;
};

std::map<std::string, double> default_shape_params(ShapeKind kind);

struct Bounds {
  Vec3d lo, hi;
};

/// Axis-aligned box containing every point the descriptor can produce.
Bounds shape_bounds(const ShapeDescriptor& d);

/// Area-uniform samples from the outer surface of the shape (a union of
/// boxes, z-axis cylinders and z-axis tori). Deterministic in `seed`.
PointCloudd generate_shape(const ShapeDescriptor& d, int n_points, std::uint64_t seed);

/// Scales every length parameter by an independent factor in [1 - rel, 1 + rel].
ShapeDescriptor jitter_shape(const ShapeDescriptor& d, double rel, std::mt19937_64& rng);

}  // namespace taxpose
