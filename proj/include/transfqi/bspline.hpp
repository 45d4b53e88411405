#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "transfqi/errors.hpp"

namespace transfqi {

enum class BasisMode { additive, tensor };

// Clamped uniform B-spline family on [-1,1] per state dimension. With g
// breakpoints (endpoints included) and degree q there are b = g - 1 + q
// splines per dimension.
//
// additive: phi(x) = [family(x_1), ..., family(x_d), 1], p = d*b + 1
// tensor:   phi(x) = all cross-products,               p = b^d
class BSplineBasis {
public:
    BSplineBasis(int dim, int degree, int knots_per_dim, BasisMode mode = BasisMode::additive)
        : dim_(dim), degree_(degree), knots_per_dim_(knots_per_dim), mode_(mode) {
        if (dim <= 0 || degree < 0 || knots_per_dim < 2)
            throw ValidationError("BSplineBasis: need dim>=1, degree>=0, knots_per_dim>=2");
        b_ = knots_per_dim - 1 + degree;
        // Knot vector: endpoints repeated degree+1 times around uniform breakpoints.
        knots_.reserve(b_ + degree + 1);
        for (int i = 0; i <= degree; ++i) knots_.push_back(-1.0);
        for (int i = 1; i < knots_per_dim - 1; ++i)
            knots_.push_back(-1.0 + 2.0 * i / (knots_per_dim - 1));
        for (int i = 0; i <= degree; ++i) knots_.push_back(1.0);
        if (mode_ == BasisMode::additive) {
            p_ = dim_ * b_ + 1;
        } else {
            p_ = 1;
            for (int i = 0; i < dim_; ++i) p_ *= b_;
        }
    }

    int dim() const { return dim_; }
    int degree() const { return degree_; }
    int knots_per_dim() const { return knots_per_dim_; }
    BasisMode mode() const { return mode_; }
    int per_dim_count() const { return b_; }
    int p() const { return p_; }

    // All b spline values at u in [-1,1] for one dimension. At most
    // degree+1 entries are nonzero; the family sums to 1.
    Eigen::VectorXd eval_dim(double u) const {
        if (!(u >= -1.0 && u <= 1.0))
            throw std::domain_error("BSplineBasis: coordinate outside [-1,1]");
        const int span = find_span(u);
        // Cox-de Boor triangle for the degree+1 splines active on this span.
        std::vector<double> vals(degree_ + 1, 0.0), left(degree_ + 1), right(degree_ + 1);
        vals[0] = 1.0;
        for (int j = 1; j <= degree_; ++j) {
            left[j] = u - knots_[span + 1 - j];
            right[j] = knots_[span + j] - u;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                const double denom = right[r + 1] + left[j - r];
                const double temp = denom != 0.0 ? vals[r] / denom : 0.0;
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        Eigen::VectorXd out = Eigen::VectorXd::Zero(b_);
        for (int j = 0; j <= degree_; ++j) out(span - degree_ + j) = vals[j];
        return out;
    }

private:
    // Index i with knots[i] <= u < knots[i+1], clamped so u=1 lands in the
    // last nonempty span.
    int find_span(double u) const {
        if (u >= knots_[b_]) return b_ - 1;
        int lo = degree_, hi = b_;
        while (hi - lo > 1) {
            const int mid = (lo + hi) / 2;
            if (u < knots_[mid]) hi = mid;
            else lo = mid;
        }
        return lo;
    }

    int dim_, degree_, knots_per_dim_, b_, p_;
    BasisMode mode_;
    std::vector<double> knots_;
};

inline Eigen::VectorXd eval_phi(const BSplineBasis& basis, const Eigen::VectorXd& x) {
    if (x.size() != basis.dim())
        throw ValidationError("eval_phi: state dimension mismatch");
    const int b = basis.per_dim_count();
    if (basis.mode() == BasisMode::additive) {
        Eigen::VectorXd out(basis.p());
        for (int k = 0; k < basis.dim(); ++k) out.segment(k * b, b) = basis.eval_dim(x(k));
        out(basis.p() - 1) = 1.0;
        return out;
    }
    Eigen::VectorXd out = Eigen::VectorXd::Ones(1);
    for (int k = 0; k < basis.dim(); ++k) {
        const Eigen::VectorXd fam = basis.eval_dim(x(k));
        Eigen::VectorXd next(out.size() * b);
        for (long i = 0; i < out.size(); ++i)
            next.segment(i * b, b) = out(i) * fam;
        out = std::move(next);
    }
    return out;
}

// Componentwise tanh onto (-1,1)^d.
inline Eigen::VectorXd squash_state(const Eigen::VectorXd& x_raw) {
    return x_raw.array().tanh();
}

// Block state-action features: block a holds phi(x), all other blocks zero.
struct FeatureMap {
    BSplineBasis basis;
    int n_actions;

    FeatureMap(BSplineBasis b, int m) : basis(std::move(b)), n_actions(m) {
        if (m <= 0) throw ValidationError("FeatureMap: n_actions must be positive");
    }

    int q() const { return n_actions * basis.p(); }
};

inline Eigen::VectorXd eval_xi(const FeatureMap& map, const Eigen::VectorXd& x, int a) {
    if (a < 0 || a >= map.n_actions)
        throw ValidationError("eval_xi: action index out of range");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(map.q());
    out.segment(static_cast<long>(a) * map.basis.p(), map.basis.p()) = eval_phi(map.basis, x);
    return out;
}

// Q(x,a) = xi(x,a)' beta with optional clipping at +-vmax.
struct QCoefficients {
    Eigen::VectorXd beta;
    double vmax = 0.0;
};

inline double eval_q(const FeatureMap& map, const QCoefficients& coeffs,
                     const Eigen::VectorXd& x, int a, bool clip = true) {
    if (a < 0 || a >= map.n_actions)
        throw ValidationError("eval_q: action index out of range");
    const Eigen::VectorXd phi = eval_phi(map.basis, x);
    const double v =
        phi.dot(coeffs.beta.segment(static_cast<long>(a) * map.basis.p(), map.basis.p()));
    if (clip && coeffs.vmax > 0.0) return std::clamp(v, -coeffs.vmax, coeffs.vmax);
    return v;
}

inline double max_q(const FeatureMap& map, const QCoefficients& coeffs,
                    const Eigen::VectorXd& x, bool clip = true) {
    const Eigen::VectorXd phi = eval_phi(map.basis, x);
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < map.n_actions; ++a) {
        double v =
            phi.dot(coeffs.beta.segment(static_cast<long>(a) * map.basis.p(), map.basis.p()));
        if (clip && coeffs.vmax > 0.0) v = std::clamp(v, -coeffs.vmax, coeffs.vmax);
        best = std::max(best, v);
    }
    return best;
}

inline int greedy_action(const FeatureMap& map, const QCoefficients& coeffs,
                         const Eigen::VectorXd& x, bool clip = true) {
    int best = 0;
    double best_v = eval_q(map, coeffs, x, 0, clip);
    for (int a = 1; a < map.n_actions; ++a) {
        const double v = eval_q(map, coeffs, x, a, clip);
        if (v > best_v) {
            best_v = v;
            best = a;
        }
    }
    return best;
}

} // namespace transfqi
