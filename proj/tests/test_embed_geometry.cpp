#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "tstok/embed_geometry.hpp"
#include "tstok/specials.hpp"
#include "tstok/rng.hpp"

using namespace tstok;

namespace {

MatrixRM gaussian_rows(int n, int dim, std::uint64_t seed, double std_dev = 1.0) {
    Rng rng(seed);
    MatrixRM m(n, dim);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < dim; ++j) {
            m(i, j) = rng.normal() * std_dev;
        }
    }
    return m;
}

BaseStats test_stats(int dim = 16, std::uint64_t seed = 5, int n = 200) {
    return base_stats_of_rows(gaussian_rows(n, dim, seed));
}

}  // namespace

TEST_SUITE("embed_geometry") {

TEST_CASE("radial stats of a symmetric pair") {
    MatrixRM rows(2, 4);
    rows.row(0) << 3.0, 0.0, 0.0, 0.0;
    rows.row(1) << -3.0, 0.0, 0.0, 0.0;
    const RadialStats stats = radial_stats(rows);
    CHECK(stats.mean_embed.norm() == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(stats.avg_radius == doctest::Approx(3.0));
}

TEST_CASE("base stats: degenerate base is a geometry error") {
    MatrixRM rows(8, 4);
    for (int i = 0; i < 8; ++i) {
        rows.row(i) << 1.0, 2.0, 3.0, 4.0;
    }
    CHECK(radial_stats(rows).avg_radius == 0.0);
    CHECK_THROWS_AS(base_stats_of_rows(rows), GeometryError);
    CHECK_THROWS_AS(base_stats_of_rows(MatrixRM::Zero(2, 4)), ConfigError);  // < 4 rows
}

TEST_CASE("base stats: gaussian radius approximates sqrt(D)") {
    const MatrixRM rows = gaussian_rows(1000, 64, 99);
    const BaseStats stats = base_stats_of_rows(rows);
    CHECK(stats.avg_radius == doctest::Approx(8.0).epsilon(0.05));
    CHECK(stats.radius_std > 0.0);
    // axes pairwise orthonormal
    CHECK(std::fabs(stats.axis1.norm() - 1.0) < 1e-10);
    CHECK(std::fabs(stats.axis2.norm() - 1.0) < 1e-10);
    CHECK(std::fabs(stats.axis3.norm() - 1.0) < 1e-10);
    CHECK(std::fabs(stats.axis1.dot(stats.axis2)) < 1e-10);
    CHECK(std::fabs(stats.axis1.dot(stats.axis3)) < 1e-10);
    CHECK(std::fabs(stats.axis2.dot(stats.axis3)) < 1e-10);
    CHECK(stats.proj_max > stats.proj_min);
}

TEST_CASE("default init statistics") {
    const BaseStats stats = test_stats(64, 21, 500);
    const MatrixRM block = init_default(2001, stats, 77);
    const MatrixRM block2 = init_default(2001, stats, 77);
    CHECK(block == block2);  // determinism, bitwise

    const double coord_std = stats.avg_radius / 8.0;
    const double bound = 3.0 * coord_std / std::sqrt(2001.0);
    const Eigen::VectorXd mean = block.colwise().mean().transpose();
    for (int j = 0; j < 64; ++j) {
        CHECK(std::fabs(mean(j) - stats.mean_embed(j)) <= bound);
    }
    const double mean_radius =
        (block.rowwise() - stats.mean_embed.transpose()).rowwise().norm().mean();
    CHECK(mean_radius == doctest::Approx(stats.avg_radius).epsilon(0.10));
}

TEST_CASE("slerp_point endpoints and midpoint") {
    const int dim = 8;
    Eigen::VectorXd start = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd end = Eigen::VectorXd::Zero(dim);
    const double r = 2.5;
    start(0) = r;
    end(1) = r;
    CHECK((slerp_point(start, end, 0.0) - start).norm() < 1e-12);
    CHECK((slerp_point(start, end, 1.0) - end).norm() < 1e-12);
    const Eigen::VectorXd mid = slerp_point(start, end, 0.5);
    CHECK(mid(0) == doctest::Approx(r / std::sqrt(2.0)));
    CHECK(mid(1) == doctest::Approx(r / std::sqrt(2.0)));
    CHECK(mid.tail(dim - 2).norm() < 1e-12);
    CHECK_THROWS_AS(slerp_point(start, start, 0.5), GeometryError);
}

TEST_CASE("slerp block stays on the sphere at zero noise") {
    const BaseStats stats = test_stats();
    InitSpec spec;
    spec.scheme = InitScheme::Slerp;
    spec.seed = 4;
    spec.noise_scale = 0.0;
    const MatrixRM block = init_slerp(301, stats, spec);
    for (int i = 0; i < block.rows(); ++i) {
        const double radius = (block.row(i).transpose() - stats.mean_embed).norm();
        CHECK(std::fabs(radius - stats.avg_radius) <= 1e-9 * stats.avg_radius);
    }
    CHECK(block == init_slerp(301, stats, spec));
}

TEST_CASE("pca-main is an arithmetic progression along axis1") {
    const BaseStats stats = test_stats();
    InitSpec spec;
    spec.scheme = InitScheme::PcaMain;
    spec.seed = 9;
    spec.noise_scale = 0.0;
    spec.margin_frac = 0.0;
    const int n = 101;
    const MatrixRM block = init_pca_main(n, stats, spec);
    const double spacing = (stats.proj_max - stats.proj_min) / (n - 1);
    double prev = 0.0;
    for (int i = 0; i < n; ++i) {
        const double proj = (block.row(i).transpose() - stats.mean_embed).dot(stats.axis1);
        const double expected = stats.proj_min + i * spacing;
        CHECK(proj == doctest::Approx(expected).epsilon(1e-9));
        if (i > 0) {
            CHECK(proj - prev == doctest::Approx(spacing).epsilon(1e-9));
            CHECK(proj > prev);  // strict ordinality
        }
        prev = proj;
    }

    // with noise on, the noise is tangential to axis1
    spec.noise_scale = 0.05;
    const MatrixRM noisy = init_pca_main(n, stats, spec);
    for (int i = 0; i < n; ++i) {
        const double proj = (noisy.row(i).transpose() - stats.mean_embed).dot(stats.axis1);
        const double expected = stats.proj_min + i * spacing;
        CHECK(std::fabs(proj - expected) < 1e-10 * std::max(1.0, std::fabs(expected)));
    }
}

TEST_CASE("helix poles, equator and sphere membership") {
    const BaseStats stats = test_stats();
    InitSpec spec;
    spec.scheme = InitScheme::Helix;
    spec.seed = 30;
    spec.noise_scale = 0.0;
    spec.num_turns = 2;
    const int n = 2001;
    const MatrixRM block = init_helix(n, stats, spec);
    const double r = stats.avg_radius;

    // t=0: theta=-pi/2 pole, independent of turns
    const Eigen::VectorXd pole = block.row(0).transpose() - stats.mean_embed;
    CHECK((pole + r * stats.axis3).norm() < 1e-9 * r);
    InitSpec spec4 = spec;
    spec4.num_turns = 4;
    const MatrixRM block4 = init_helix(n, stats, spec4);
    CHECK((block4.row(0) - block.row(0)).norm() < 1e-12);

    // t=0.5 equator: phi = turns*pi
    const int mid = (n - 1) / 2;
    const double phi = 2.0 * M_PI;  // turns=2 at t=0.5
    const Eigen::VectorXd expected =
        r * (std::cos(phi) * stats.axis1 + std::sin(phi) * stats.axis2);
    CHECK((block.row(mid).transpose() - stats.mean_embed - expected).norm() < 1e-9 * r);

    for (int i = 0; i < n; i += 97) {
        const double radius = (block.row(i).transpose() - stats.mean_embed).norm();
        CHECK(std::fabs(radius - r) <= 1e-9 * r);
    }
}

TEST_CASE("vmf sampler: unit norm and concentration limits") {
    const int dim = 64;
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(dim);
    mu(3) = 1.0;
    Rng rng(17);

    int high_dot = 0;
    for (int i = 0; i < 1000; ++i) {
        const Eigen::VectorXd s = sample_vmf(mu, 1e6, rng);
        CHECK(std::fabs(s.norm() - 1.0) < 1e-9);
        high_dot += s.dot(mu) > 0.999;
    }
    CHECK(high_dot >= 990);

    double mean_dot = 0.0;
    for (int i = 0; i < 10000; ++i) {
        mean_dot += sample_vmf(mu, 50.0, rng).dot(mu);
    }
    mean_dot /= 10000.0;
    const double analytic = oracles::vmf_mean_cosine(50.0, dim);
    CHECK(mean_dot == doctest::Approx(analytic).epsilon(0.02));

    CHECK_THROWS_AS(sample_vmf(mu, 0.0, rng), ConfigError);
}

TEST_CASE("vmf block radii and determinism") {
    const BaseStats stats = test_stats();
    InitSpec spec;
    spec.scheme = InitScheme::Vmf;
    spec.seed = 8;
    spec.concentration = 50.0;
    const MatrixRM block = init_vmf(64, stats, spec);
    CHECK(block == init_vmf(64, stats, spec));
    for (int i = 0; i < block.rows(); ++i) {
        CHECK((block.row(i).transpose() - stats.mean_embed).norm() > 0.0);
    }
}

TEST_CASE("shuffle preserves the row multiset") {
    const TokenVocab vocab = build_vocab(0.01, kNumSpecials);
    InitSpec spec;
    spec.scheme = InitScheme::Slerp;
    spec.seed = 13;
    const EmbeddingMatrix emb = make_container(64, 16, vocab, spec);
    const EmbeddingMatrix shuffled = shuffle_ts_block(emb, 99);

    CHECK(shuffled.data.topRows(emb.ts_start) == emb.data.topRows(emb.ts_start));

    auto sorted_rows = [](const EmbeddingMatrix& e) {
        std::vector<std::vector<double>> rows;
        for (int i = e.ts_start; i < e.ts_end; ++i) {
            rows.emplace_back(e.data.row(i).begin(), e.data.row(i).end());
        }
        std::sort(rows.begin(), rows.end());
        return rows;
    };
    CHECK(sorted_rows(emb) == sorted_rows(shuffled));
    CHECK(shuffled.data != emb.data);  // the permutation actually moved rows

    // inverse permutation restores the block bitwise
    const std::vector<int> perm = shuffle_permutation(emb.ts_count(), 99);
    MatrixRM restored = shuffled.data;
    for (int i = 0; i < emb.ts_count(); ++i) {
        restored.row(emb.ts_start + perm[static_cast<std::size_t>(i)]) =
            shuffled.data.row(emb.ts_start + i);
    }
    CHECK(restored == emb.data);

    // a single-row block can only map to itself
    EmbeddingMatrix tiny;
    tiny.data = gaussian_rows(5, 4, 2);
    tiny.ts_start = 4;
    tiny.ts_end = 5;
    CHECK(shuffle_ts_block(tiny, 1).data == tiny.data);
}

TEST_CASE("distribution consistency of the container schemes") {
    // Mean-offset bound is scheme-dependent: arc-based schemes place the
    // block on a sphere segment around mean_embed, so their block mean
    // sits a sizable fraction of the radius away from it by construction.
    const TokenVocab vocab = build_vocab(0.01, kNumSpecials);
    const int dim = 64;
    const struct {
        InitScheme scheme;
        double offset_bound;  // fraction of avg_radius
    } cases[] = {
        {InitScheme::Default, 0.1}, {InitScheme::PcaMain, 0.5}, {InitScheme::Slerp, 1.0},
        {InitScheme::Helix, 1.0},   {InitScheme::Vmf, 1.0},
    };
    for (const auto& c : cases) {
        InitSpec spec;
        spec.scheme = c.scheme;
        spec.seed = 1234;
        const EmbeddingMatrix emb = make_container(1024, dim, vocab, spec);
        const BaseStats stats = base_stats(emb);
        const MatrixRM block = emb.ts_block();
        const Eigen::VectorXd mean = block.colwise().mean().transpose();
        CHECK((mean - stats.mean_embed).norm() <= c.offset_bound * stats.avg_radius);
        const double mean_radius =
            (block.rowwise() - stats.mean_embed.transpose()).rowwise().norm().mean();
        CHECK(mean_radius >= 0.5 * stats.avg_radius);
        CHECK(mean_radius <= 1.5 * stats.avg_radius);
    }
}

TEST_CASE("scheme labels round trip") {
    InitSpec spec;
    spec.scheme = InitScheme::Helix;
    spec.num_turns = 4;
    spec.shuffled = true;
    CHECK(scheme_label(spec) == "helix4*");
    const InitSpec parsed = parse_scheme_label("helix4*");
    CHECK(parsed.scheme == InitScheme::Helix);
    CHECK(parsed.num_turns == 4);
    CHECK(parsed.shuffled);
    CHECK(parse_scheme_label("pca_main").scheme == InitScheme::PcaMain);
    CHECK_THROWS_AS(parse_scheme_label("bogus"), ConfigError);
}

TEST_CASE("container io round trip and corruption") {
    const TokenVocab vocab = build_vocab(0.1, kNumSpecials);
    InitSpec spec;
    spec.scheme = InitScheme::Helix;
    spec.num_turns = 3;
    spec.seed = 5;
    const EmbeddingMatrix emb = make_container(32, 8, vocab, spec);
    const std::string prefix = "/tmp/tstok_test_container";
    save_container(emb, prefix);
    const EmbeddingMatrix loaded = load_container(prefix);
    CHECK(loaded.rows() == emb.rows());
    CHECK(loaded.dim() == emb.dim());
    CHECK(loaded.ts_start == emb.ts_start);
    CHECK(loaded.ts_end == emb.ts_end);
    CHECK(loaded.scheme == emb.scheme);
    CHECK(loaded.seed == emb.seed);
    CHECK(loaded.epsilon == emb.epsilon);
    for (int i = 0; i < emb.rows(); ++i) {
        for (int j = 0; j < emb.dim(); ++j) {
            CHECK(loaded.data(i, j) == static_cast<double>(static_cast<float>(emb.data(i, j))));
        }
    }

    // truncated blob -> size mismatch
    std::filesystem::resize_file(prefix + ".bin",
                                 std::filesystem::file_size(prefix + ".bin") - 4);
    CHECK_THROWS_AS(load_container(prefix), DataError);
    CHECK_THROWS_AS(load_container("/tmp/tstok_does_not_exist"), DataError);
}

}  // TEST_SUITE
