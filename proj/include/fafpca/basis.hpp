#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "fafpca/quadrature.hpp"

namespace fafpca {

/// Clamped B-spline basis on [0, 1] with equispaced interior knots.
///
/// Knot vector: degree+1 copies of 0, the interior knots i/(m+1), and
/// degree+1 copies of 1, giving tau_n = degree + 1 + m basis functions.
struct RawSplineBasis {
    int degree = 3;
    int interior_knot_count = 0;
    int tau_n = 0;
    std::vector<double> knots;

    /// Index of the knot span containing t (de Boor convention).
    int find_span(double t) const {
        const int d = degree;
        const int last = tau_n - 1;  // last basis index
        if (t >= knots[tau_n]) return last;
        if (t <= knots[d]) return d;
        int lo = d, hi = tau_n;
        while (hi - lo > 1) {
            const int mid = (lo + hi) / 2;
            (t < knots[mid] ? hi : lo) = mid;
        }
        return lo;
    }

    /// All tau_n basis values at t via the Cox-de Boor triangular scheme.
    /// Only degree+1 entries are nonzero.
    Eigen::VectorXd evaluate(double t) const {
        if (t < 0.0 || t > 1.0)
            throw std::invalid_argument("RawSplineBasis::evaluate: t outside [0,1]");
        return evaluate_unchecked(t);
    }

    /// Same as evaluate but without the domain check; values for t outside
    /// [0,1] are the polynomial extension of the boundary span.
    Eigen::VectorXd evaluate_unchecked(double t) const {
        const int d = degree;
        const int span = find_span(t);
        std::vector<double> vals(d + 1, 0.0), left(d + 1, 0.0), right(d + 1, 0.0);
        vals[0] = 1.0;
        for (int j = 1; j <= d; ++j) {
            left[j] = t - knots[span + 1 - j];
            right[j] = knots[span + j] - t;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                const double tmp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        Eigen::VectorXd out = Eigen::VectorXd::Zero(tau_n);
        for (int r = 0; r <= d; ++r) out[span - d + r] = vals[r];
        return out;
    }
};

inline RawSplineBasis make_raw_basis(int degree, int interior_knots) {
    if (degree < 1) throw std::invalid_argument("make_raw_basis: degree must be >= 1");
    if (interior_knots < 0) throw std::invalid_argument("make_raw_basis: interior_knots must be >= 0");
    RawSplineBasis b;
    b.degree = degree;
    b.interior_knot_count = interior_knots;
    b.tau_n = degree + 1 + interior_knots;
    b.knots.assign(static_cast<std::size_t>(b.tau_n + degree + 1), 0.0);
    for (int i = 0; i <= degree; ++i) {
        b.knots[i] = 0.0;
        b.knots[b.knots.size() - 1 - i] = 1.0;
    }
    for (int i = 0; i < interior_knots; ++i)
        b.knots[static_cast<std::size_t>(degree + 1 + i)] =
            static_cast<double>(i + 1) / (interior_knots + 1);
    return b;
}

/// Quadrature rule matched to a basis: uniform cells split at the knots with
/// degree+1 Gauss points per piece, which is exact for products of two basis
/// functions.
inline QuadratureRule basis_quadrature(const RawSplineBasis& basis, int n_quad) {
    std::vector<double> interior(basis.knots.begin() + basis.degree + 1,
                                 basis.knots.end() - basis.degree - 1);
    return QuadratureRule::composite(n_quad, basis.degree + 1, interior);
}

/// Gram matrix G_ab = integral of M_a(t) M_b(t) over [0,1].
inline Eigen::MatrixXd gram_matrix(const RawSplineBasis& basis, int n_quad) {
    if (n_quad < 64) throw std::invalid_argument("gram_matrix: n_quad must be >= 64");
    const QuadratureRule rule = basis_quadrature(basis, n_quad);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(basis.tau_n, basis.tau_n);
    for (std::size_t i = 0; i < rule.size(); ++i) {
        const Eigen::VectorXd m = basis.evaluate(rule.nodes()[i]);
        gram.selfadjointView<Eigen::Lower>().rankUpdate(m, rule.weights()[i]);
    }
    gram = Eigen::MatrixXd(gram.selfadjointView<Eigen::Lower>());
    gram = 0.5 * (gram + gram.transpose());

    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("gram_matrix: Gram matrix is not positive definite");
    return gram;
}

/// B-spline basis rescaled so that tau_n * int M(t) M(t)' dt = I.
struct OrthoSplineBasis {
    RawSplineBasis raw;
    Eigen::MatrixXd transform;  // tau_n x tau_n, symmetric
    int quadrature_points = 1024;
    double gram_condition = 1.0;

    int tau_n() const { return raw.tau_n; }
    int degree() const { return raw.degree; }

    Eigen::VectorXd evaluate(double t) const { return transform * raw.evaluate(t); }
    Eigen::VectorXd evaluate_unchecked(double t) const {
        return transform * raw.evaluate_unchecked(t);
    }
};

/// Gram matrix of the transformed basis, integral of M~(t) M~(t)' dt.
/// Equals I / tau_n up to quadrature error once orthonormalized.
inline Eigen::MatrixXd gram_matrix(const OrthoSplineBasis& basis, int n_quad) {
    const Eigen::MatrixXd raw_gram = gram_matrix(basis.raw, n_quad);
    return basis.transform * raw_gram * basis.transform.transpose();
}

/// Build the orthonormalizing transform T = tau_n^{-1/2} G^{-1/2} from the
/// symmetric inverse square root of the Gram matrix. The symmetric root makes
/// T unique, so repeated orthonormalization is the identity.
inline OrthoSplineBasis orthonormalize(const RawSplineBasis& basis, int n_quad = 1024) {
    const Eigen::MatrixXd gram = gram_matrix(basis, n_quad);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("orthonormalize: eigendecomposition of Gram matrix failed");
    const double lmax = es.eigenvalues().maxCoeff();
    const double lmin = es.eigenvalues().minCoeff();
    if (lmin <= lmax * 1e-14) {
        std::ostringstream msg;
        msg << "orthonormalize: Gram matrix numerically singular (condition number "
            << (lmin > 0 ? lmax / lmin : std::numeric_limits<double>::infinity()) << ")";
        throw std::runtime_error(msg.str());
    }
    OrthoSplineBasis ortho;
    ortho.raw = basis;
    ortho.quadrature_points = n_quad;
    ortho.gram_condition = lmax / lmin;
    const Eigen::VectorXd inv_sqrt = es.eigenvalues().cwiseSqrt().cwiseInverse();
    ortho.transform = std::pow(static_cast<double>(basis.tau_n), -0.5) *
                      (es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose());
    return ortho;
}

}  // namespace fafpca
