#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "taxpose/errors.hpp"
#include "taxpose/geometry.hpp"

namespace taxpose {

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// m = u * diag(sigma) * v^T with sigma sorted descending.
template <typename Scalar>
struct Svd3Result {
  Mat3<Scalar> u;
  Vec3<Scalar> sigma;
  Mat3<Scalar> v;
};

/// Thin-SVD of a 3x3 matrix by one-sided (Hestenes) Jacobi: column rotations
/// applied to m diagonalize m^T m implicitly, so v holds its eigenvectors and
/// the column norms are the singular values. Each v column is sign-fixed so its
/// largest-magnitude entry is positive.
template <typename Scalar>
Svd3Result<Scalar> svd3(const Mat3<Scalar>& m) {
  using std::abs;
  using std::sqrt;
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  Mat3<Scalar> a = m;
  Mat3<Scalar> v = Mat3<Scalar>::Identity();

  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        const Scalar alpha = a.col(p).squaredNorm();
        const Scalar beta = a.col(q).squaredNorm();
        const Scalar gamma = a.col(p).dot(a.col(q));
        if (gamma == Scalar(0) || abs(gamma) <= eps * sqrt(alpha * beta)) continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = (zeta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                         (abs(zeta) + sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (int r = 0; r < 3; ++r) {
          const Scalar ap = a(r, p), aq = a(r, q);
          a(r, p) = c * ap - s * aq;
          a(r, q) = s * ap + c * aq;
          const Scalar vp = v(r, p), vq = v(r, q);
          v(r, p) = c * vp - s * vq;
          v(r, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::array<int, 3> order{0, 1, 2};
  Vec3<Scalar> norms(a.col(0).norm(), a.col(1).norm(), a.col(2).norm());
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return norms[i] > norms[j]; });

  Svd3Result<Scalar> out;
  Mat3<Scalar> cols;
  for (int k = 0; k < 3; ++k) {
    out.sigma[k] = norms[order[k]];
    out.v.col(k) = v.col(order[k]);
    cols.col(k) = a.col(order[k]);
  }
  for (int k = 0; k < 3; ++k) {
    Eigen::Index idx = 0;
    out.v.col(k).cwiseAbs().maxCoeff(&idx);
    if (out.v(idx, k) < Scalar(0)) {
      out.v.col(k) = -out.v.col(k);
      cols.col(k) = -cols.col(k);
    }
  }

  // Left vectors from the rotated columns; columns whose singular value is
  // negligible are completed to an orthonormal basis instead.
  const Scalar tiny = out.sigma[0] * Scalar(64) * eps;
  int rank = 0;
  for (int k = 0; k < 3; ++k)
    if (out.sigma[k] > tiny && out.sigma[k] > Scalar(0)) rank = k + 1;
  if (rank >= 1) out.u.col(0) = cols.col(0) / out.sigma[0];
  else out.u.col(0) = Vec3<Scalar>::UnitX();
  if (rank >= 2) {
    Vec3<Scalar> u1 = cols.col(1) / out.sigma[1];
    u1 -= out.u.col(0).dot(u1) * out.u.col(0);
    out.u.col(1) = u1.normalized();
  } else {
    Vec3<Scalar> trial = abs(out.u(0, 0)) < Scalar(0.9) ? Vec3<Scalar>::UnitX() : Vec3<Scalar>::UnitY();
    trial -= out.u.col(0).dot(trial) * out.u.col(0);
    out.u.col(1) = trial.normalized();
  }
  if (rank >= 3) {
    Vec3<Scalar> u2 = cols.col(2) / out.sigma[2];
    u2 -= out.u.col(0).dot(u2) * out.u.col(0) + out.u.col(1).dot(u2) * out.u.col(1);
    out.u.col(2) = u2.normalized();
  } else {
    Vec3<Scalar> u2 = out.u.col(0).cross(out.u.col(1));
    if (u2.dot(cols.col(2)) < Scalar(0)) u2 = -u2;
    out.u.col(2) = u2;
  }
  return out;
}

/// Correspondences for both objects: source_a -> target_a under T and
/// source_b -> target_b under T^-1, each with non-negative weights.
template <typename Scalar>
struct CorrespondenceSet {
  PointCloud<Scalar> source_a;
  PointCloud<Scalar> target_a;
  PointCloud<Scalar> source_b;
  PointCloud<Scalar> target_b;
  VecX<Scalar> weights_a;
  VecX<Scalar> weights_b;

  void validate() const {
    if (target_a.size() != source_a.size() || weights_a.size() != source_a.size())
      throw LengthMismatch("object A correspondences and weights must have equal length");
    if (target_b.size() != source_b.size() || weights_b.size() != source_b.size())
      throw LengthMismatch("object B correspondences and weights must have equal length");
    if (!weights_a.allFinite() || !weights_b.allFinite())
      throw NonFiniteValue("correspondence weights must be finite");
    if ((weights_a.array() < Scalar(0)).any() || (weights_b.array() < Scalar(0)).any())
      throw InputError("correspondence weights must be non-negative");
    if (!(weights_a.sum() > Scalar(0)) || !(weights_b.sum() > Scalar(0)))
      throw InputError("each object's weights must have a positive sum");
  }
};

template <typename Scalar>
struct ProcrustesSolution {
  RigidTransform<Scalar> transform;
  Scalar objective = Scalar(0);
  /// Cross-covariance had a (numerically) zero third singular value.
  bool rank_flag = false;
};

enum class SolveMode { Full, TranslationOnly };

/// Upstream gradient of a scalar loss w.r.t. the solved transform entries.
template <typename Scalar>
struct TransformGradient {
  Mat3<Scalar> rotation = Mat3<Scalar>::Zero();
  Vec3<Scalar> translation = Vec3<Scalar>::Zero();
};

template <typename Scalar>
struct ProcrustesGradient {
  Points3<Scalar> source_a, target_a, source_b, target_b;
  VecX<Scalar> weights_a, weights_b;
};

/// sum_i alpha_i^A |T p_i^A - v_i^A|^2 + sum_i alpha_i^B |T^-1 p_i^B - v_i^B|^2
template <typename Scalar>
Scalar correspondence_objective(const CorrespondenceSet<Scalar>& c, const RigidTransform<Scalar>& t) {
  const Points3<Scalar> ra = apply(t, c.source_a.points()) - c.target_a.points();
  const Points3<Scalar> rb = apply(invert(t), c.source_b.points()) - c.target_b.points();
  return ra.colwise().squaredNorm().dot(c.weights_a) + rb.colwise().squaredNorm().dot(c.weights_b);
}

namespace detail {

template <typename Scalar>
Vec3<Scalar> weighted_mean(const Points3<Scalar>& p, const VecX<Scalar>& w) {
  return (p * w) / w.sum();
}

template <typename Scalar>
struct ProcrustesTerms {
  Vec3<Scalar> mean_source_a, mean_target_a, mean_source_b, mean_target_b;
  Points3<Scalar> src_a, tgt_a, src_b, tgt_b;  // weighted-centred
  Mat3<Scalar> covariance;                      // sum w * target* source*^T
  Scalar mix_a, mix_b;
};

template <typename Scalar>
ProcrustesTerms<Scalar> procrustes_terms(const CorrespondenceSet<Scalar>& c) {
  ProcrustesTerms<Scalar> t;
  t.mean_source_a = weighted_mean(c.source_a.points(), c.weights_a);
  t.mean_target_a = weighted_mean(c.target_a.points(), c.weights_a);
  t.mean_source_b = weighted_mean(c.source_b.points(), c.weights_b);
  t.mean_target_b = weighted_mean(c.target_b.points(), c.weights_b);
  t.src_a = c.source_a.points().colwise() - t.mean_source_a;
  t.tgt_a = c.target_a.points().colwise() - t.mean_target_a;
  // Object B's correspondences run the other way: target_b -> source_b under T.
  t.src_b = c.target_b.points().colwise() - t.mean_target_b;
  t.tgt_b = c.source_b.points().colwise() - t.mean_source_b;
  t.covariance = t.tgt_a * c.weights_a.asDiagonal() * t.src_a.transpose() +
                 t.tgt_b * c.weights_b.asDiagonal() * t.src_b.transpose();
  const Scalar n_a = Scalar(c.source_a.size());
  const Scalar n_b = Scalar(c.source_b.size());
  t.mix_a = n_a / (n_a + n_b);
  t.mix_b = n_b / (n_a + n_b);
  return t;
}

template <typename Scalar>
Vec3<Scalar> mixed_translation(const ProcrustesTerms<Scalar>& t, const Mat3<Scalar>& r) {
  const Vec3<Scalar> t_a = t.mean_target_a - r * t.mean_source_a;
  const Vec3<Scalar> t_b = t.mean_source_b - r * t.mean_target_b;
  return t.mix_a * t_a + t.mix_b * t_b;
}

template <typename Scalar>
Scalar reflection_sign(const Svd3Result<Scalar>& svd) {
  return (svd.u.determinant() * svd.v.determinant()) < Scalar(0) ? Scalar(-1) : Scalar(1);
}

}  // namespace detail

/// Second singular value below this fraction of the first => rank < 2.
template <typename Scalar>
constexpr Scalar kRankThreshold = Scalar(1e-12);

/// Minimum allowed |sigma_i^2 - sigma_j^2| / sigma_1^2 for differentiating the rotation.
template <typename Scalar>
constexpr Scalar kSpectrumGap = Scalar(1e-8);

/// Weighted, bidirectional Procrustes. Both objects' correspondences are
/// stacked into one weighted cross-covariance; the rotation is
/// U diag(1, 1, det(U V^T)) V^T and the translation mixes the per-object
/// optima with the point-count fractions N_A / N and N_B / N.
template <typename Scalar>
ProcrustesSolution<Scalar> solve_weighted(const CorrespondenceSet<Scalar>& c) {
  c.validate();
  const auto terms = detail::procrustes_terms(c);
  const auto svd = svd3<Scalar>(terms.covariance);
  if (!(svd.sigma[0] > Scalar(0)) || svd.sigma[1] < kRankThreshold<Scalar> * svd.sigma[0])
    throw DegenerateCorrespondences("weighted cross-covariance has rank < 2; rotation is ambiguous");

  const Scalar d = detail::reflection_sign(svd);
  const Mat3<Scalar> r = svd.u * Vec3<Scalar>(Scalar(1), Scalar(1), d).asDiagonal() * svd.v.transpose();

  ProcrustesSolution<Scalar> out;
  out.transform.rotation = r;
  out.transform.translation = detail::mixed_translation(terms, r);
  out.objective = correspondence_objective(c, out.transform);
  out.rank_flag = svd.sigma[2] < kRankThreshold<Scalar> * svd.sigma[0];
  return out;
}

template <typename Scalar>
ProcrustesSolution<Scalar> solve_translation_only(const CorrespondenceSet<Scalar>& c) {
  c.validate();
  const auto terms = detail::procrustes_terms(c);
  ProcrustesSolution<Scalar> out;
  out.transform.translation = detail::mixed_translation<Scalar>(terms, Mat3<Scalar>::Identity());
  out.objective = correspondence_objective(c, out.transform);
  return out;
}

template <typename Scalar>
ProcrustesSolution<Scalar> solve(const CorrespondenceSet<Scalar>& c, SolveMode mode) {
  return mode == SolveMode::Full ? solve_weighted(c) : solve_translation_only(c);
}

/// Reverse-mode gradient of a scalar loss through the solver, given the
/// loss gradient w.r.t. the returned rotation and translation.
template <typename Scalar>
ProcrustesGradient<Scalar> procrustes_gradient(const CorrespondenceSet<Scalar>& c,
                                               const TransformGradient<Scalar>& upstream,
                                               SolveMode mode = SolveMode::Full) {
  c.validate();
  const auto terms = detail::procrustes_terms(c);
  const Eigen::Index na = c.source_a.size();
  const Eigen::Index nb = c.source_b.size();

  ProcrustesGradient<Scalar> g;
  g.source_a = Points3<Scalar>::Zero(3, na);
  g.target_a = Points3<Scalar>::Zero(3, na);
  g.source_b = Points3<Scalar>::Zero(3, nb);
  g.target_b = Points3<Scalar>::Zero(3, nb);
  g.weights_a = VecX<Scalar>::Zero(na);
  g.weights_b = VecX<Scalar>::Zero(nb);

  Mat3<Scalar> r = Mat3<Scalar>::Identity();
  Svd3Result<Scalar> svd;
  if (mode == SolveMode::Full) {
    svd = svd3<Scalar>(terms.covariance);
    if (!(svd.sigma[0] > Scalar(0)) || svd.sigma[1] < kRankThreshold<Scalar> * svd.sigma[0])
      throw DegenerateCorrespondences("weighted cross-covariance has rank < 2; rotation is ambiguous");
    const Scalar d = detail::reflection_sign(svd);
    r = svd.u * Vec3<Scalar>(Scalar(1), Scalar(1), d).asDiagonal() * svd.v.transpose();
  }

  // Translation path: t = mix_a (m_ta - R m_sa) + mix_b (m_sb - R m_tb).
  const Vec3<Scalar>& tbar = upstream.translation;
  const Vec3<Scalar> rt_tbar = r.transpose() * tbar;
  const Vec3<Scalar> bar_mean_target_a = terms.mix_a * tbar;
  const Vec3<Scalar> bar_mean_source_a = -terms.mix_a * rt_tbar;
  const Vec3<Scalar> bar_mean_source_b = terms.mix_b * tbar;
  const Vec3<Scalar> bar_mean_target_b = -terms.mix_b * rt_tbar;

  auto scatter_mean = [](const Points3<Scalar>& pts, const VecX<Scalar>& w, const Vec3<Scalar>& mean,
                         const Vec3<Scalar>& bar, Points3<Scalar>& gp, VecX<Scalar>& gw) {
    const Scalar total = w.sum();
    gp += bar * (w.transpose() / total);
    gw += ((pts.colwise() - mean).transpose() * bar) / total;
  };
  scatter_mean(c.source_a.points(), c.weights_a, terms.mean_source_a, bar_mean_source_a, g.source_a, g.weights_a);
  scatter_mean(c.target_a.points(), c.weights_a, terms.mean_target_a, bar_mean_target_a, g.target_a, g.weights_a);
  scatter_mean(c.source_b.points(), c.weights_b, terms.mean_source_b, bar_mean_source_b, g.source_b, g.weights_b);
  scatter_mean(c.target_b.points(), c.weights_b, terms.mean_target_b, bar_mean_target_b, g.target_b, g.weights_b);

  if (mode == SolveMode::TranslationOnly) return g;

  // Rotation path, including R's appearance in the translation.
  const Mat3<Scalar> rbar = upstream.rotation -
                            tbar * (terms.mix_a * terms.mean_source_a + terms.mix_b * terms.mean_target_b).transpose();
  if (rbar.isZero(Scalar(0))) return g;

  const Scalar d = detail::reflection_sign(svd);
  const Vec3<Scalar> s(Scalar(1), Scalar(1), d);
  const Vec3<Scalar>& sig = svd.sigma;
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) {
      using std::abs;
      if (abs(sig[i] * sig[i] - sig[j] * sig[j]) <= kSpectrumGap<Scalar> * sig[0] * sig[0])
        throw NearDegenerateSpectrum("singular values " + std::to_string(double(sig[i])) + " and " +
                                     std::to_string(double(sig[j])) + " are too close to differentiate");
    }
  const Mat3<Scalar> gp = svd.u.transpose() * rbar * svd.v;
  Mat3<Scalar> omega = Mat3<Scalar>::Zero();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      if (a == b) continue;
      const Scalar k_ab = Scalar(1) / (sig[b] * sig[b] - sig[a] * sig[a]);
      const Scalar k_ba = -k_ab;
      omega(a, b) = gp(a, b) * k_ab * (s[b] * sig[b] - s[a] * sig[a]) +
                    gp(b, a) * k_ba * (s[a] * sig[b] - s[b] * sig[a]);
    }
  const Mat3<Scalar> mbar = svd.u * omega * svd.v.transpose();

  // covariance = sum_A w tgt* src*^T + sum_B w tgt* src*^T; centring terms cancel.
  g.target_a += (mbar * terms.src_a) * c.weights_a.asDiagonal();
  g.source_a += (mbar.transpose() * terms.tgt_a) * c.weights_a.asDiagonal();
  g.weights_a += (terms.tgt_a.array() * (mbar * terms.src_a).array()).colwise().sum().transpose().matrix();
  g.source_b += (mbar * terms.src_b) * c.weights_b.asDiagonal();
  g.target_b += (mbar.transpose() * terms.tgt_b) * c.weights_b.asDiagonal();
  g.weights_b += (terms.tgt_b.array() * (mbar * terms.src_b).array()).colwise().sum().transpose().matrix();
  return g;
}

}  // namespace taxpose
