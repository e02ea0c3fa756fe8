#pragma once

#include <Eigen/Dense>

#include "tstok/embed_geometry.hpp"
#include "tstok/errors.hpp"

namespace tstok {

// Step sizes, margins and weights for the geometry losses. step_k is the
// step used by the training losses; k_local/k_global parametrize the
// zero-margin metrics.
struct RegularizerConfig {
    int step_k = 1;
    double margin_ord = 0.0;
    double margin_mono = 0.0;
    int k_local = 1;
    int k_global = 100;
    double lambda_ord = 0.0;
    double lambda_mono = 0.0;
    int projection_refresh_interval = 1;
};

// Fixed 3-D PCA projection of a TS block: orthonormal basis (D x 3), the
// block mean it was fitted at, the projected rows, and the singular
// values of the centered block.
struct GeometryContext {
    Eigen::MatrixXd basis;
    Eigen::VectorXd mean;
    Eigen::MatrixXd projected;
    Eigen::VectorXd singular_values;
};

struct GeometryReport {
    double r_ord_local = 0.0;
    double r_ord_global = 0.0;
    double r_mono_local = 0.0;
    double r_mono_global = 0.0;
    double l_ord = 0.0;
    double l_mono = 0.0;
};

struct LossResult {
    double value = 0.0;
    MatrixRM grad;  // N x D, w.r.t. the TS block (projection held fixed)
};

// Top-3 right singular vectors of the centered block, deterministic sign
// (largest-magnitude coordinate of each column positive). Throws
// GeometryError when the centered block is identically zero.
GeometryContext fit_projection(const MatrixRM& ts_block);

// Hinge on ||e'_i - e'_{i-k}|| - ||e'_i - e'_{i-2k}|| - margin, averaged
// over the N-2k slice terms. Exact gradient with the projection basis
// treated as constant (the mean term is propagated).
LossResult loss_ord(const MatrixRM& ts_block, const Eigen::MatrixXd& basis, int step_k,
                    double margin);

// Hinge on -cos(e'_i - e'_{i-k}, e'_{i+k} - e'_i) - margin over the same
// slice count; vector norms floored at 1e-12 inside the cosine.
LossResult loss_mono(const MatrixRM& ts_block, const Eigen::MatrixXd& basis, int step_k,
                     double margin);

// Both losses at margin 0 for k_local and k_global on a fresh projection,
// plus the losses at the configured step/margins.
GeometryReport measure(const MatrixRM& ts_block, const RegularizerConfig& cfg = {});

// lambda_ord * loss_ord + lambda_mono * loss_mono at the configured step
// and margins, sharing one projection.
LossResult total_regularizer(const MatrixRM& ts_block, const Eigen::MatrixXd& basis,
                             const RegularizerConfig& cfg);
LossResult total_regularizer(const MatrixRM& ts_block, const RegularizerConfig& cfg);

}  // namespace tstok
