#include "tstok/embed_geometry.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace tstok {

namespace {

constexpr double kSinOmegaFloor = 1e-8;

Eigen::VectorXd gaussian_vector(int dim, Rng& rng) {
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) {
        v(i) = rng.normal();
    }
    return v;
}

Eigen::VectorXd random_unit_vector(int dim, Rng& rng) {
    for (;;) {
        Eigen::VectorXd v = gaussian_vector(dim, rng);
        const double norm = v.norm();
        if (norm > 1e-12) {
            return v / norm;
        }
    }
}

// Component of a fresh Gaussian draw orthogonal to `direction` (unit).
Eigen::VectorXd tangential_noise(const Eigen::VectorXd& direction, double scale, Rng& rng) {
    Eigen::VectorXd g = gaussian_vector(static_cast<int>(direction.size()), rng) * scale;
    g -= g.dot(direction) * direction;
    return g;
}

// Gamma(shape >= 1) via Marsaglia-Tsang.
double sample_gamma(double shape, Rng& rng) {
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = 0.0;
        double v = 0.0;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) {
            return d * v;
        }
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
            return d * v;
        }
    }
}

double sample_beta_symmetric(double shape, Rng& rng) {
    const double x = sample_gamma(shape, rng);
    const double y = sample_gamma(shape, rng);
    return x / (x + y);
}

void fix_sign(Eigen::VectorXd& axis) {
    int idx = 0;
    axis.cwiseAbs().maxCoeff(&idx);
    if (axis(idx) < 0.0) {
        axis = -axis;
    }
}

}  // namespace

std::string scheme_label(const InitSpec& spec) {
    std::string label;
    switch (spec.scheme) {
        case InitScheme::Default: label = "default"; break;
        case InitScheme::Slerp: label = "slerp"; break;
        case InitScheme::PcaMain: label = "pca_main"; break;
        case InitScheme::Helix: label = "helix" + std::to_string(spec.num_turns); break;
        case InitScheme::Vmf: label = "vmf"; break;
    }
    if (spec.shuffled) {
        label += "*";
    }
    return label;
}

InitSpec parse_scheme_label(const std::string& label) {
    InitSpec spec;
    std::string base = label;
    if (!base.empty() && base.back() == '*') {
        spec.shuffled = true;
        base.pop_back();
    }
    if (base == "default") {
        spec.scheme = InitScheme::Default;
    } else if (base == "slerp") {
        spec.scheme = InitScheme::Slerp;
    } else if (base == "pca_main") {
        spec.scheme = InitScheme::PcaMain;
    } else if (base == "vmf") {
        spec.scheme = InitScheme::Vmf;
    } else if (base.rfind("helix", 0) == 0) {
        spec.scheme = InitScheme::Helix;
        const std::string turns = base.substr(5);
        spec.num_turns = turns.empty() ? 2 : std::stoi(turns);
        if (spec.num_turns < 1) {
            throw ConfigError("helix turns must be >= 1");
        }
    } else {
        throw ConfigError("unknown init scheme: " + label);
    }
    return spec;
}

RadialStats radial_stats(const MatrixRM& rows) {
    if (rows.rows() == 0) {
        throw ConfigError("radial stats need at least one row");
    }
    RadialStats stats;
    stats.mean_embed = rows.colwise().mean().transpose();
    const Eigen::VectorXd radii =
        (rows.rowwise() - stats.mean_embed.transpose()).rowwise().norm();
    stats.avg_radius = radii.mean();
    stats.radius_std = std::sqrt((radii.array() - stats.avg_radius).square().mean());
    return stats;
}

BaseStats base_stats_of_rows(const MatrixRM& base_rows) {
    if (base_rows.rows() < 4) {
        throw ConfigError("base stats need at least 4 rows");
    }
    if (base_rows.cols() < 3) {
        throw ConfigError("base stats need dim >= 3");
    }
    const RadialStats radial = radial_stats(base_rows);

    BaseStats stats;
    stats.mean_embed = radial.mean_embed;
    stats.avg_radius = radial.avg_radius;
    stats.radius_std = radial.radius_std;

    const MatrixRM centered = base_rows.rowwise() - stats.mean_embed.transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double tol = 1e-12 * std::max(1.0, sv(0));
    int nonzero = 0;
    for (int i = 0; i < sv.size(); ++i) {
        if (sv(i) > tol) {
            ++nonzero;
        }
    }
    if (nonzero < 3) {
        throw GeometryError("base embedding is rank-deficient (fewer than 3 components)");
    }

    stats.axis1 = svd.matrixV().col(0);
    stats.axis2 = svd.matrixV().col(1);
    stats.axis3 = svd.matrixV().col(2);
    // One Gram-Schmidt pass; the SVD already gives orthonormal vectors,
    // this pins the invariant at full precision.
    stats.axis2 -= stats.axis2.dot(stats.axis1) * stats.axis1;
    stats.axis2.normalize();
    stats.axis3 -= stats.axis3.dot(stats.axis1) * stats.axis1;
    stats.axis3 -= stats.axis3.dot(stats.axis2) * stats.axis2;
    stats.axis3.normalize();
    fix_sign(stats.axis1);
    fix_sign(stats.axis2);
    fix_sign(stats.axis3);

    const Eigen::VectorXd projections = centered * stats.axis1;
    stats.proj_min = projections.minCoeff();
    stats.proj_max = projections.maxCoeff();
    return stats;
}

BaseStats base_stats(const EmbeddingMatrix& emb) {
    const int n_base = emb.rows() - emb.ts_count();
    if (n_base < 4) {
        throw ConfigError("base stats need at least 4 base rows");
    }
    MatrixRM base(n_base, emb.dim());
    int row = 0;
    for (int i = 0; i < emb.rows(); ++i) {
        if (i < emb.ts_start || i >= emb.ts_end) {
            base.row(row++) = emb.data.row(i);
        }
    }
    return base_stats_of_rows(base);
}

Eigen::VectorXd slerp_point(const Eigen::VectorXd& start, const Eigen::VectorXd& end, double t) {
    const double r2 = start.norm() * end.norm();
    if (r2 <= 0.0) {
        throw GeometryError("slerp endpoints must be nonzero");
    }
    const double cos_omega = std::clamp(start.dot(end) / r2, -1.0, 1.0);
    const double omega = std::acos(cos_omega);
    const double sin_omega = std::sin(omega);
    if (sin_omega < kSinOmegaFloor) {
        throw GeometryError("slerp endpoints are collinear");
    }
    return (std::sin((1.0 - t) * omega) * start + std::sin(t * omega) * end) / sin_omega;
}

Eigen::VectorXd sample_vmf(const Eigen::VectorXd& mu, double kappa, Rng& rng) {
    if (!(kappa > 0.0)) {
        throw ConfigError("vMF concentration must be positive");
    }
    const int dim = static_cast<int>(mu.size());
    if (dim < 2) {
        throw ConfigError("vMF requires dim >= 2");
    }
    const double m = static_cast<double>(dim - 1);
    // b in its cancellation-free form.
    const double b = m / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m * m));
    const double x0 = (1.0 - b) / (1.0 + b);
    const double c = kappa * x0 + m * std::log(1.0 - x0 * x0);

    double w = 0.0;
    for (;;) {
        const double z = sample_beta_symmetric(m / 2.0, rng);
        const double u = rng.uniform();
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        if (kappa * w + m * std::log(1.0 - x0 * w) - c >= std::log(std::max(u, 1e-300))) {
            break;
        }
    }

    // Random unit direction orthogonal to mu.
    Eigen::VectorXd tangent;
    for (;;) {
        tangent = gaussian_vector(dim, rng);
        tangent -= tangent.dot(mu) * mu;
        const double norm = tangent.norm();
        if (norm > 1e-12) {
            tangent /= norm;
            break;
        }
    }
    return std::sqrt(std::max(0.0, 1.0 - w * w)) * tangent + w * mu;
}

MatrixRM init_default(int n, const BaseStats& stats, std::uint64_t seed) {
    if (n < 2) {
        throw ConfigError("TS block needs at least 2 rows");
    }
    const int dim = static_cast<int>(stats.mean_embed.size());
    const double coord_std = stats.avg_radius / std::sqrt(static_cast<double>(dim));
    Rng rng(seed);
    MatrixRM block(n, dim);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < dim; ++j) {
            block(i, j) = stats.mean_embed(j) + coord_std * rng.normal();
        }
    }
    return block;
}

MatrixRM init_slerp(int n, const BaseStats& stats, const InitSpec& spec) {
    if (n < 2) {
        throw ConfigError("TS block needs at least 2 rows");
    }
    if (!(stats.avg_radius > 0.0)) {
        throw GeometryError("slerp needs a positive base radius");
    }
    const int dim = static_cast<int>(stats.mean_embed.size());
    const double radius = stats.avg_radius;
    Rng rng(spec.seed);

    Eigen::VectorXd start;
    Eigen::VectorXd end;
    double omega = 0.0;
    double sin_omega = 0.0;
    do {
        start = random_unit_vector(dim, rng) * radius;
        end = random_unit_vector(dim, rng) * radius;
        const double cos_omega = std::clamp(start.dot(end) / (radius * radius), -1.0, 1.0);
        omega = std::acos(cos_omega);
        sin_omega = std::sin(omega);
    } while (sin_omega < kSinOmegaFloor);

    MatrixRM block(n, dim);
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n - 1);
        Eigen::VectorXd point =
            (std::sin((1.0 - t) * omega) * start + std::sin(t * omega) * end) / sin_omega;
        const Eigen::VectorXd radial_dir = point / point.norm();
        const Eigen::VectorXd tangent =
            tangential_noise(radial_dir, spec.noise_scale * radius, rng);
        const double radial_mag = rng.normal() * spec.noise_scale * radius;
        point += tangent / 10.0 + radial_mag * radial_dir;
        block.row(i) = (stats.mean_embed + point).transpose();
    }
    return block;
}

MatrixRM init_pca_main(int n, const BaseStats& stats, const InitSpec& spec) {
    if (n < 2) {
        throw ConfigError("TS block needs at least 2 rows");
    }
    const double span = stats.proj_max - stats.proj_min;
    if (!(span > 0.0)) {
        throw GeometryError("degenerate projection span along the principal axis");
    }
    const int dim = static_cast<int>(stats.mean_embed.size());
    const double margin = span * spec.margin_frac;
    const double new_min = stats.proj_min - margin;
    const double new_max = stats.proj_max + margin;
    Rng rng(spec.seed);

    MatrixRM block(n, dim);
    for (int i = 0; i < n; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(n - 1);
        const double position = new_min + frac * (new_max - new_min);
        const Eigen::VectorXd tangent =
            tangential_noise(stats.axis1, spec.noise_scale * stats.avg_radius, rng);
        block.row(i) = (stats.mean_embed + position * stats.axis1 + tangent).transpose();
    }
    return block;
}

MatrixRM init_helix(int n, const BaseStats& stats, const InitSpec& spec) {
    if (n < 2) {
        throw ConfigError("TS block needs at least 2 rows");
    }
    if (spec.num_turns < 1) {
        throw ConfigError("helix needs num_turns >= 1");
    }
    const int dim = static_cast<int>(stats.mean_embed.size());
    const double radius = stats.avg_radius;
    Rng rng(spec.seed);

    MatrixRM block(n, dim);
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n - 1);
        const double theta = (t - 0.5) * M_PI;
        const double phi = t * static_cast<double>(spec.num_turns) * 2.0 * M_PI;
        Eigen::VectorXd point = radius * (std::cos(theta) * std::cos(phi) * stats.axis1 +
                                          std::cos(theta) * std::sin(phi) * stats.axis2 +
                                          std::sin(theta) * stats.axis3);
        const Eigen::VectorXd radial_dir = point / point.norm();
        const Eigen::VectorXd tangent =
            tangential_noise(radial_dir, spec.noise_scale * radius, rng);
        const double radial_mag = rng.normal() * spec.noise_scale * radius;
        point += tangent + radial_mag * radial_dir;
        block.row(i) = (stats.mean_embed + point).transpose();
    }
    return block;
}

MatrixRM init_vmf(int n, const BaseStats& stats, const InitSpec& spec) {
    if (n < 2) {
        throw ConfigError("TS block needs at least 2 rows");
    }
    if (!(spec.concentration > 0.0)) {
        throw ConfigError("vMF concentration must be positive");
    }
    const int dim = static_cast<int>(stats.mean_embed.size());
    Rng rng(spec.seed);

    const Eigen::VectorXd start_dir = stats.axis1;
    Eigen::VectorXd end_dir = stats.axis1 + stats.axis2;
    end_dir.normalize();

    MatrixRM block(n, dim);
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n - 1);
        Eigen::VectorXd mu = slerp_point(start_dir, end_dir, t);
        mu.normalize();
        const Eigen::VectorXd direction = sample_vmf(mu, spec.concentration, rng);
        double target_radius = 0.0;
        do {
            target_radius = stats.avg_radius + rng.normal() * stats.radius_std;
        } while (target_radius <= 0.0);
        block.row(i) = (stats.mean_embed + target_radius * direction).transpose();
    }
    return block;
}

MatrixRM init_ts_block(int n, const BaseStats& stats, const InitSpec& spec) {
    switch (spec.scheme) {
        case InitScheme::Default: return init_default(n, stats, spec.seed);
        case InitScheme::Slerp: return init_slerp(n, stats, spec);
        case InitScheme::PcaMain: return init_pca_main(n, stats, spec);
        case InitScheme::Helix: return init_helix(n, stats, spec);
        case InitScheme::Vmf: return init_vmf(n, stats, spec);
    }
    throw ConfigError("unknown init scheme");
}

std::vector<int> shuffle_permutation(int n, std::uint64_t seed) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        perm[static_cast<std::size_t>(i)] = i;
    }
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(i) + 1));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    return perm;
}

EmbeddingMatrix shuffle_ts_block(const EmbeddingMatrix& emb, std::uint64_t seed) {
    EmbeddingMatrix out = emb;
    const int n = emb.ts_count();
    const std::vector<int> perm = shuffle_permutation(n, seed);
    for (int i = 0; i < n; ++i) {
        out.data.row(emb.ts_start + i) = emb.data.row(emb.ts_start + perm[static_cast<std::size_t>(i)]);
    }
    return out;
}

EmbeddingMatrix make_container(int base_rows, int dim, const TokenVocab& vocab,
                               const InitSpec& spec) {
    if (base_rows < 4) {
        throw ConfigError("container needs at least 4 base rows");
    }
    if (dim < 3) {
        throw ConfigError("container needs dim >= 3");
    }
    // Anisotropic Gaussian stand-in for a pretrained embedding table:
    // coordinate j has std 1/sqrt(1 + j), so a few directions dominate the
    // spectrum the way trained tables do.
    Rng base_rng(derive_seed(spec.seed, "base-table"));
    MatrixRM base(base_rows, dim);
    for (int i = 0; i < base_rows; ++i) {
        for (int j = 0; j < dim; ++j) {
            base(i, j) = base_rng.normal() / std::sqrt(1.0 + static_cast<double>(j));
        }
    }
    const BaseStats stats = base_stats_of_rows(base);

    InitSpec ts_spec = spec;
    ts_spec.seed = derive_seed(spec.seed, "ts-init");
    MatrixRM ts = init_ts_block(vocab.n_tokens, stats, ts_spec);

    EmbeddingMatrix emb;
    emb.data.resize(base_rows + vocab.n_tokens, dim);
    emb.data.topRows(base_rows) = base;
    emb.data.bottomRows(vocab.n_tokens) = ts;
    emb.ts_start = base_rows;
    emb.ts_end = base_rows + vocab.n_tokens;
    emb.scheme = scheme_label(spec);
    emb.seed = spec.seed;
    emb.epsilon = vocab.epsilon;
    if (spec.shuffled) {
        emb = shuffle_ts_block(emb, derive_seed(spec.seed, "shuffle"));
        emb.scheme = scheme_label(spec);
    }
    return emb;
}

void save_container(const EmbeddingMatrix& emb, const std::string& path_prefix) {
    static_assert(std::endian::native == std::endian::little,
                  "container blobs are little-endian");
    nlohmann::json header;
    header["rows"] = emb.rows();
    header["dim"] = emb.dim();
    header["ts_start"] = emb.ts_start;
    header["ts_end"] = emb.ts_end;
    header["scheme"] = emb.scheme;
    header["seed"] = emb.seed;
    header["epsilon"] = emb.epsilon;
    std::ofstream json_out(path_prefix + ".json");
    if (!json_out) {
        throw DataError("cannot write " + path_prefix + ".json");
    }
    json_out << header.dump(2) << "\n";

    std::ofstream bin_out(path_prefix + ".bin", std::ios::binary);
    if (!bin_out) {
        throw DataError("cannot write " + path_prefix + ".bin");
    }
    std::vector<float> row(static_cast<std::size_t>(emb.dim()));
    for (int i = 0; i < emb.rows(); ++i) {
        for (int j = 0; j < emb.dim(); ++j) {
            row[static_cast<std::size_t>(j)] = static_cast<float>(emb.data(i, j));
        }
        bin_out.write(reinterpret_cast<const char*>(row.data()),
                      static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
}

EmbeddingMatrix load_container(const std::string& path_prefix) {
    std::ifstream json_in(path_prefix + ".json");
    if (!json_in) {
        throw DataError("cannot open " + path_prefix + ".json");
    }
    nlohmann::json header;
    try {
        json_in >> header;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed container header: " + std::string(e.what()));
    }

    EmbeddingMatrix emb;
    const int rows = header.at("rows").get<int>();
    const int dim = header.at("dim").get<int>();
    emb.ts_start = header.at("ts_start").get<int>();
    emb.ts_end = header.at("ts_end").get<int>();
    emb.scheme = header.at("scheme").get<std::string>();
    emb.seed = header.at("seed").get<std::uint64_t>();
    emb.epsilon = header.at("epsilon").get<double>();
    if (rows <= 0 || dim <= 0 || emb.ts_start < 0 || emb.ts_end > rows ||
        emb.ts_start > emb.ts_end) {
        throw DataError("container header fields are inconsistent");
    }

    std::ifstream bin_in(path_prefix + ".bin", std::ios::binary);
    if (!bin_in) {
        throw DataError("cannot open " + path_prefix + ".bin");
    }
    bin_in.seekg(0, std::ios::end);
    const auto size = static_cast<std::uint64_t>(bin_in.tellg());
    const std::uint64_t expected =
        static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(dim) * sizeof(float);
    if (size != expected) {
        throw DataError("container blob size mismatch: expected " + std::to_string(expected) +
                        " bytes, found " + std::to_string(size));
    }
    bin_in.seekg(0, std::ios::beg);

    emb.data.resize(rows, dim);
    std::vector<float> row(static_cast<std::size_t>(dim));
    for (int i = 0; i < rows; ++i) {
        bin_in.read(reinterpret_cast<char*>(row.data()),
                    static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!bin_in) {
            throw DataError("container blob truncated");
        }
        for (int j = 0; j < dim; ++j) {
            emb.data(i, j) = static_cast<double>(row[static_cast<std::size_t>(j)]);
        }
    }
    return emb;
}

}  // namespace tstok
