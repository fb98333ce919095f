#include "taxpose/shapes.hpp"

#include <cmath>
#include <memory>

#include "taxpose/errors.hpp"

namespace taxpose {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kInsideTol = 1e-9;

struct Solid {
  virtual ~Solid() = default;
  virtual double area() const = 0;
  virtual Vec3d sample(std::mt19937_64& rng) const = 0;
  /// Strictly inside, so shared faces of touching solids survive.
  virtual bool contains(const Vec3d& p) const = 0;
  virtual Bounds bounds() const = 0;
};

double uniform(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

struct BoxSolid : Solid {
  Vec3d lo, hi;
  BoxSolid(Vec3d l, Vec3d h) : lo(std::move(l)), hi(std::move(h)) {}
  double area() const override {
    const Vec3d s = hi - lo;
    return 2.0 * (s.x() * s.y() + s.y() * s.z() + s.x() * s.z());
  }
  Vec3d sample(std::mt19937_64& rng) const override {
    const Vec3d s = hi - lo;
    const double faces[3] = {s.y() * s.z(), s.x() * s.z(), s.x() * s.y()};
    double r = uniform(rng, 0.0, faces[0] + faces[1] + faces[2]);
    int axis = 0;
    while (axis < 2 && r > faces[axis]) r -= faces[axis++];
    Vec3d p(uniform(rng, lo.x(), hi.x()), uniform(rng, lo.y(), hi.y()), uniform(rng, lo.z(), hi.z()));
    p(axis) = uniform(rng) < 0.5 ? lo(axis) : hi(axis);
    return p;
  }
  bool contains(const Vec3d& p) const override {
    return ((p - lo).array() > kInsideTol).all() && ((hi - p).array() > kInsideTol).all();
  }
  Bounds bounds() const override { return {lo, hi}; }
};

struct CylinderSolid : Solid {
  Vec3d base;  // centre of the bottom disk
  double radius, height;
  CylinderSolid(Vec3d b, double r, double h) : base(std::move(b)), radius(r), height(h) {}
  double area() const override { return 2.0 * kPi * radius * (radius + height); }
  Vec3d sample(std::mt19937_64& rng) const override {
    const double side = 2.0 * kPi * radius * height;
    const double th = uniform(rng, 0.0, 2.0 * kPi);
    if (uniform(rng, 0.0, area()) < side)
      return base + Vec3d(radius * std::cos(th), radius * std::sin(th), uniform(rng, 0.0, height));
    const double r = radius * std::sqrt(uniform(rng));
    const double z = uniform(rng) < 0.5 ? 0.0 : height;
    return base + Vec3d(r * std::cos(th), r * std::sin(th), z);
  }
  bool contains(const Vec3d& p) const override {
    const Vec3d q = p - base;
    return q.z() > kInsideTol && q.z() < height - kInsideTol && q.head<2>().norm() < radius - kInsideTol;
  }
  Bounds bounds() const override {
    return {base - Vec3d(radius, radius, 0.0), base + Vec3d(radius, radius, height)};
  }
};

struct TorusSolid : Solid {
  Vec3d center;
  double major, minor;
  TorusSolid(Vec3d c, double big, double small) : center(std::move(c)), major(big), minor(small) {}
  double area() const override { return 4.0 * kPi * kPi * major * minor; }
  Vec3d sample(std::mt19937_64& rng) const override {
    for (;;) {
      const double u = uniform(rng, 0.0, 2.0 * kPi);
      const double v = uniform(rng, 0.0, 2.0 * kPi);
      // Accept proportionally to the local area element.
      if (uniform(rng, 0.0, major + minor) > major + minor * std::cos(v)) continue;
      const double ring = major + minor * std::cos(v);
      return center + Vec3d(ring * std::cos(u), ring * std::sin(u), minor * std::sin(v));
    }
  }
  bool contains(const Vec3d& p) const override {
    const Vec3d q = p - center;
    const double radial = q.head<2>().norm() - major;
    return std::hypot(radial, q.z()) < minor - kInsideTol;
  }
  Bounds bounds() const override {
    const double r = major + minor;
    return {center - Vec3d(r, r, minor), center + Vec3d(r, r, minor)};
  }
};

using Solids = std::vector<std::unique_ptr<Solid>>;

void add_box(Solids& s, const Vec3d& lo, const Vec3d& hi) { s.push_back(std::make_unique<BoxSolid>(lo, hi)); }

Solids build(const ShapeDescriptor& d) {
  Solids s;
  auto p = [&](const char* name) { return d.param(name); };
  switch (d.kind) {
    case ShapeKind::Box: {
      const Vec3d half(p("sx") / 2, p("sy") / 2, 0.0);
      add_box(s, -half, half + Vec3d(0, 0, p("sz")));
      break;
    }
    case ShapeKind::OpenBox: {
      const double x = p("sx") / 2, y = p("sy") / 2, z = p("sz"), t = p("wall");
      add_box(s, {-x, -y, 0}, {x, y, t});
      add_box(s, {-x, -y, 0}, {-x + t, y, z});
      add_box(s, {x - t, -y, 0}, {x, y, z});
      add_box(s, {-x, -y, 0}, {x, -y + t, z});
      add_box(s, {-x, y - t, 0}, {x, y, z});
      break;
    }
    case ShapeKind::Cylinder:
      s.push_back(std::make_unique<CylinderSolid>(Vec3d::Zero(), p("radius"), p("height")));
      break;
    case ShapeKind::NotchedBlock: {
      const double x = p("sx") / 2, y = p("sy") / 2, z = p("sz"), f = p("notch");
      add_box(s, {-x, -y, 0}, {x, y, z * (1 - f)});
      add_box(s, {-x, -y, 0}, {x - 2 * x * f, y, z});
      break;
    }
    case ShapeKind::URack: {
      const double w = p("width") / 2, h = p("height"), t = p("thickness");
      add_box(s, {-w, -t / 2, 0}, {-w + t, t / 2, h});
      add_box(s, {w - t, -t / 2, 0}, {w, t / 2, h});
      add_box(s, {-w, -t / 2, 0}, {w, t / 2, t});
      break;
    }
    case ShapeKind::RingPost: {
      const double pr = p("post_radius"), ph = p("post_height");
      const double rr = p("ring_radius"), tr = p("tube_radius"), rz = p("ring_height");
      s.push_back(std::make_unique<CylinderSolid>(Vec3d::Zero(), pr, ph));
      s.push_back(std::make_unique<TorusSolid>(Vec3d(pr + rr, 0, rz), rr, tr));
      break;
    }
    case ShapeKind::CappedPeg: {
      // Shaft hangs below z = length, cap on top, tab on the cap's +x side.
      const double r = p("peg_radius"), len = p("peg_length");
      const double cr = p("cap_radius"), ct = p("cap_thickness");
      const double tl = p("tab_length"), tw = p("tab_width"), th = p("tab_height");
      s.push_back(std::make_unique<CylinderSolid>(Vec3d::Zero(), r, len));
      s.push_back(std::make_unique<CylinderSolid>(Vec3d(0, 0, len), cr, ct));
      add_box(s, {cr - tw, -tw / 2, len + ct - th}, {cr + tl, tw / 2, len + ct});
      break;
    }
  }
  return s;
}

const std::map<ShapeKind, std::string>& kind_names() {
  static const std::map<ShapeKind, std::string> names = {
      {ShapeKind::Box, "box"},
      {ShapeKind::OpenBox, "open_box"},
      {ShapeKind::Cylinder, "cylinder"},
      {ShapeKind::NotchedBlock, "notched_block"},
      {ShapeKind::URack, "u_rack"},
      {ShapeKind::RingPost, "ring_post"},
      {ShapeKind::CappedPeg, "capped_peg"},
  };
  return names;
}

}  // namespace

std::string to_string(ShapeKind k) { return kind_names().at(k); }

ShapeKind shape_kind_from_string(const std::string& s) {
  for (const auto& [k, name] : kind_names())
    if (name == s) return k;
  throw InputError("unknown shape kind '" + s + "'");
}

std::map<std::string, double> default_shape_params(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Box: return {{"sx", 2.0}, {"sy", 1.5}, {"sz", 1.0}};
    case ShapeKind::OpenBox: return {{"sx", 3.0}, {"sy", 2.4}, {"sz", 1.2}, {"wall", 0.1}};
    case ShapeKind::Cylinder: return {{"radius", 0.5}, {"height", 2.0}};
    case ShapeKind::NotchedBlock: return {{"sx", 1.0}, {"sy", 0.6}, {"sz", 0.8}, {"notch", 0.5}};
    case ShapeKind::URack: return {{"width", 2.4}, {"height", 2.0}, {"thickness", 0.3}};
    case ShapeKind::RingPost:
      return {{"post_radius", 0.2}, {"post_height", 3.0}, {"ring_radius", 0.6},
              {"tube_radius", 0.12}, {"ring_height", 2.0}};
    case ShapeKind::CappedPeg:
      return {{"peg_radius", 0.25}, {"peg_length", 2.0}, {"cap_radius", 0.8}, {"cap_thickness", 0.15},
              {"tab_length", 0.7}, {"tab_width", 0.3}, {"tab_height", 0.6}};
  }
  return {};
}

double ShapeDescriptor::param(const std::string& name) const {
  if (auto it = params.find(name); it != params.end()) return it->second;
  const auto defaults = default_shape_params(kind);
  if (auto it = defaults.find(name); it != defaults.end()) return it->second;
  throw InputError("shape " + to_string(kind) + " has no parameter '" + name + "'");
}

Bounds shape_bounds(const ShapeDescriptor& d) {
  const Solids s = build(d);
  Bounds b = s.front()->bounds();
  for (const auto& solid : s) {
    const Bounds o = solid->bounds();
    b.lo = b.lo.cwiseMin(o.lo);
    b.hi = b.hi.cwiseMax(o.hi);
  }
  return b;
}

PointCloudd generate_shape(const ShapeDescriptor& d, int n_points, std::uint64_t seed) {
  if (n_points < 8) throw InputError("shapes need at least 8 points");
  for (const auto& [name, value] : default_shape_params(d.kind))
    if (!(d.param(name) > 0.0) || !std::isfinite(d.param(name)))
      throw InputError("shape parameter '" + name + "' must be positive and finite");
  for (const auto& [name, value] : d.params)
    if (!default_shape_params(d.kind).count(name))
      throw InputError("shape " + to_string(d.kind) + " has no parameter '" + name + "'");

  const Solids solids = build(d);
  double total = 0.0;
  for (const auto& s : solids) total += s->area();
  std::mt19937_64 rng(seed);
  Points3d pts(3, n_points);
  const long max_attempts = 1000L * n_points;
  long attempts = 0;
  for (int i = 0; i < n_points;) {
    if (++attempts > max_attempts) throw InputError("shape " + to_string(d.kind) + " has no exposed surface");
    double r = uniform(rng, 0.0, total);
    std::size_t k = 0;
    while (k + 1 < solids.size() && r > solids[k]->area()) r -= solids[k++]->area();
    const Vec3d p = solids[k]->sample(rng);
    bool hidden = false;
    for (std::size_t j = 0; j < solids.size() && !hidden; ++j) hidden = j != k && solids[j]->contains(p);
    if (hidden) continue;
    pts.col(i++) = p;
  }
  return PointCloudd(std::move(pts));
}

ShapeDescriptor jitter_shape(const ShapeDescriptor& d, double rel, std::mt19937_64& rng) {
  ShapeDescriptor out{d.kind, default_shape_params(d.kind)};
  for (auto& [name, value] : out.params) {
    value = d.param(name);
    // The notch is a fraction, not a length.
    if (name != "notch") value *= uniform(rng, 1.0 - rel, 1.0 + rel);
  }
  return out;
}

}  // namespace taxpose
